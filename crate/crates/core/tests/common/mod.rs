//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls the library code path it is used to check.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar4d::cfar::CfarConfig;
use radar4d::nn::ops::{BatchNorm, Conv2d, ConvTranspose2d, LayerNorm};
use radar4d::nn::TensorCHW;
use radar4d::{PolarGridSpec, PowerVolume3D};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn polar_grid(na: usize, nr: usize, ne: usize, nd: usize) -> PolarGridSpec {
    PolarGridSpec {
        n_azimuth: na,
        n_range: nr,
        n_elevation: ne,
        n_doppler: nd,
        ..PolarGridSpec::default()
    }
}

/// Volume of exponential clutter with a few bright cells.
pub fn random_volume(rng: &mut ChaCha8Rng, na: usize, nr: usize, ne: usize) -> PowerVolume3D {
    let g = polar_grid(na, nr, ne, 1);
    let values = (0..g.spatial_len())
        .map(|_| {
            let u: f64 = rng.random();
            let noise = -(1.0 - u).ln();
            if rng.random::<f64>() < 0.02 {
                noise + rng.random_range(5.0..50.0)
            } else {
                noise
            }
        })
        .collect();
    PowerVolume3D::new(g, values).unwrap()
}

/// Nearest-rank index for a percentile given in integer hundredths,
/// `ceil(hundredths * n / 10000) - 1`, in exact integer arithmetic.
pub fn rank_hundredths(hundredths: u64, n: usize) -> usize {
    let num = hundredths * n as u64;
    let k = num.div_ceil(10_000) as usize;
    k.saturating_sub(1).min(n - 1)
}

/// Full-sort percentile selection oracle over `values`, skipping entries
/// where `valid` is false.
pub fn sort_select(values: &[f64], valid: Option<&[bool]>, hundredths: u64) -> Vec<usize> {
    let ok = |i: usize| valid.map_or(true, |v| v[i]);
    let mut sorted: Vec<f64> = (0..values.len()).filter(|&i| ok(i)).map(|i| values[i]).collect();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[rank_hundredths(hundredths, sorted.len())];
    (0..values.len())
        .filter(|&i| ok(i) && values[i] >= threshold)
        .collect()
}

/// Per-cell CA-CFAR loop oracle.
pub fn naive_cfar(volume: &PowerVolume3D, cfg: &CfarConfig) -> Vec<usize> {
    let g = volume.grid();
    let dims = [g.n_azimuth, g.n_range, g.n_elevation];
    let half: Vec<(isize, isize)> = (0..3)
        .map(|ax| {
            if cfg.axes[ax] {
                (
                    (cfg.training_cells[ax] + cfg.guard_cells[ax]) as isize,
                    cfg.guard_cells[ax] as isize,
                )
            } else {
                (0, 0)
            }
        })
        .collect();
    let mut hits = Vec::new();
    for a in 0..dims[0] as isize {
        for r in 0..dims[1] as isize {
            for e in 0..dims[2] as isize {
                let c = [a, r, e];
                let fits = (0..3)
                    .all(|ax| c[ax] - half[ax].0 >= 0 && c[ax] + half[ax].0 < dims[ax] as isize);
                if !fits {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0usize;
                for da in -half[0].0..=half[0].0 {
                    for dr in -half[1].0..=half[1].0 {
                        for de in -half[2].0..=half[2].0 {
                            let d = [da, dr, de];
                            if (0..3).all(|ax| d[ax].abs() <= half[ax].1) {
                                continue;
                            }
                            sum += volume.get(
                                (a + da) as usize,
                                (r + dr) as usize,
                                (e + de) as usize,
                            );
                            n += 1;
                        }
                    }
                }
                let v = volume.get(a as usize, r as usize, e as usize);
                if v > cfg.scale_alpha * (sum / n as f64) {
                    hits.push(g.spatial_index(a as usize, r as usize, e as usize));
                }
            }
        }
    }
    hits
}

/// Two-stage oracle: loop CFAR, then per range ring full-sort percentile.
pub fn naive_tlp(volume: &PowerVolume3D, coarse: &CfarConfig, hundredths: u64) -> Vec<usize> {
    let g = volume.grid();
    let stage1 = naive_cfar(volume, coarse);
    let mut keep = Vec::new();
    for ring in 0..g.n_range {
        let members: Vec<usize> = stage1
            .iter()
            .copied()
            .filter(|&i| (i / g.n_elevation) % g.n_range == ring)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut vals: Vec<f64> = members.iter().map(|&i| volume.values()[i]).collect();
        vals.sort_by(f64::total_cmp);
        let t = vals[rank_hundredths(hundredths, vals.len())];
        keep.extend(members.into_iter().filter(|&i| volume.values()[i] >= t));
    }
    keep.sort_unstable();
    keep
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> TensorCHW {
    TensorCHW::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Direct definition of cross-correlation, accumulated in f64.
pub fn naive_conv2d(x: &TensorCHW, conv: &Conv2d) -> Vec<f64> {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let (k, s, p) = (conv.kernel as isize, conv.stride as isize, conv.padding as isize);
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = Vec::new();
    for o in 0..conv.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = conv.bias[o] as f64;
                for i in 0..conv.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = oy * s + ky - p;
                            let ix = ox * s + kx - p;
                            if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                let wi = ((o * conv.in_channels + i) * conv.kernel
                                    + ky as usize)
                                    * conv.kernel
                                    + kx as usize;
                                acc += conv.weight[wi] as f64
                                    * x.get(i, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Transposed convolution via its gather form: output (y, x) collects
/// input (iy, ix) whenever `iy * s + ky - p == y`.
pub fn naive_conv_transpose2d(x: &TensorCHW, d: &ConvTranspose2d) -> (usize, usize, Vec<f64>) {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let (k, s, p) = (d.kernel as isize, d.stride as isize, d.padding as isize);
    let oh = (h - 1) * s - 2 * p + k;
    let ow = (w - 1) * s - 2 * p + k;
    let mut out = Vec::new();
    for o in 0..d.out_channels {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = d.bias[o] as f64;
                for i in 0..d.in_channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let ny = y + p - ky;
                            let nx = xx + p - kx;
                            if ny % s != 0 || nx % s != 0 || ny < 0 || nx < 0 {
                                continue;
                            }
                            let (iy, ix) = (ny / s, nx / s);
                            if iy < h && ix < w {
                                let wi = ((i * d.out_channels + o) * d.kernel + ky as usize)
                                    * d.kernel
                                    + kx as usize;
                                acc += d.weight[wi] as f64
                                    * x.get(i, iy as usize, ix as usize) as f64;
                            }
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    (oh as usize, ow as usize, out)
}

pub fn naive_batch_norm(x: &TensorCHW, bn: &BatchNorm) -> Vec<f64> {
    let mut out = Vec::new();
    for c in 0..x.channels() {
        for y in 0..x.height() {
            for xx in 0..x.width() {
                let v = x.get(c, y, xx) as f64;
                out.push(
                    (v - bn.running_mean[c] as f64) / (bn.running_var[c] as f64 + 1e-5).sqrt()
                        * bn.gamma[c] as f64
                        + bn.beta[c] as f64,
                );
            }
        }
    }
    out
}

pub fn naive_layer_norm(x: &TensorCHW, ln: &LayerNorm) -> Vec<f64> {
    let (c, h, w) = (x.channels(), x.height(), x.width());
    let mut out = vec![0.0; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            let col: Vec<f64> = (0..c).map(|ch| x.get(ch, y, xx) as f64).collect();
            let mean = col.iter().sum::<f64>() / c as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            for ch in 0..c {
                out[(ch * h + y) * w + xx] = (col[ch] - mean) / (var + 1e-5).sqrt()
                    * ln.gamma[ch] as f64
                    + ln.beta[ch] as f64;
            }
        }
    }
    out
}

/// `|a - b| <= tol * max(|b|, 1)` elementwise.
pub fn assert_close(actual: &[f32], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length");
    for (i, (&a, &b)) in actual.iter().zip(expected).enumerate() {
        assert!(
            (a as f64 - b).abs() <= tol * b.abs().max(1.0),
            "{what}[{i}]: {a} vs {b}"
        );
    }
}
