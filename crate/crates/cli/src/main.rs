mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use rayon::prelude::*;
use serde::de::DeserializeOwned;

use args::*;
use radar4d::bev::LabelFile;
use radar4d::cfar::alpha_for_pfa;
use radar4d::cloud_io::{cloud_to_bytes, write_csv_to};
use radar4d::nn::demo::{bev_grid_with_shape, FusionDemo};
use radar4d::{
    ca_cfar, filter_cartesian_percentile, filter_polar_percentile, generate_4drt, masked_mse,
    power_map, read_cloud, resample_to_cartesian, size_stats, splat_gaussian_heatmap,
    total_loss, two_level_preproc, voxelize_bev, write_atomic, write_cloud, BevGrid, BoxLabel,
    CartesianGridSpec, CartesianVoxelVolume, CfarConfig, LossWeights, Percentile, PointCloud,
    PolarGridSpec, RadarTensor4D, SceneConfig, SceneFile, Scatterer, TlpConfig,
};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads: must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("--threads")?;
    }
    match cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::Preproc(a) => preproc(a),
        Command::Stats(a) => stats(a),
        Command::Compare(a) => compare(a),
        Command::Heatmap(a) => heatmap(a),
        Command::DistillDemo(a) => distill_demo(a),
        Command::FusionDemo(a) => fusion_demo(a),
        Command::Bench(a) => bench(a),
    }
}

fn percentile(r: f64) -> Result<Percentile> {
    Percentile::new(r).with_context(|| format!("--r {r}"))
}

fn load_tensor(path: &Path) -> Result<RadarTensor4D> {
    RadarTensor4D::load(path).with_context(|| format!("--input {}", path.display()))
}

fn load_cloud(flag: &str, path: &Path) -> Result<PointCloud> {
    read_cloud(path).with_context(|| format!("{flag} {}", path.display()))
}

fn load_labels(path: &Path) -> Result<Vec<BoxLabel>> {
    let text = fs::read_to_string(path).with_context(|| format!("--labels {}", path.display()))?;
    Ok(LabelFile::parse(&text)
        .with_context(|| format!("--labels {}", path.display()))?
        .labels)
}

fn roi(voxel: f64) -> Result<CartesianGridSpec> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        bail!("--voxel: must be finite and > 0, got {voxel}");
    }
    Ok(CartesianGridSpec::with_voxel(voxel))
}

fn bev_grid(cell: f64) -> Result<BevGrid> {
    if !(cell > 0.0 && cell.is_finite()) {
        bail!("--cell: must be finite and > 0, got {cell}");
    }
    let r = CartesianGridSpec::default();
    Ok(BevGrid {
        x_bounds: r.x_bounds,
        y_bounds: r.y_bounds,
        cell_size: [cell, cell],
    })
}

fn demo_scene() -> SceneFile {
    let target = |range: f64, azimuth: f64, elevation: f64, amplitude: f64| Scatterer {
        range,
        azimuth,
        elevation,
        doppler: 0.0,
        amplitude,
        spread: [1.0, 1.5, 0.7, 0.6],
    };
    SceneFile {
        grid: PolarGridSpec::default(),
        scene: SceneConfig {
            scatterers: vec![
                target(12.0, -0.35, 0.02, 900.0),
                target(21.5, 0.10, 0.0, 600.0),
                target(33.0, 0.42, 0.05, 300.0),
                target(44.0, -0.15, -0.03, 150.0),
            ],
            noise_mean: 1.0,
            seed: 0,
        },
    }
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let mut file = match &a.scene {
        Some(p) => SceneFile::load(p).with_context(|| format!("--scene {}", p.display()))?,
        None => demo_scene(),
    };
    if let Some(seed) = a.seed {
        file.scene.seed = seed;
    }
    let tensor = generate_4drt(&file.scene, &file.grid).context("--scene")?;
    tensor
        .save(&a.out)
        .with_context(|| format!("--out {}", a.out.display()))?;
    let g = tensor.grid();
    println!(
        "wrote {} ({}x{}x{}x{}, seed {})",
        a.out.display(),
        g.n_azimuth,
        g.n_range,
        g.n_elevation,
        g.n_doppler,
        file.scene.seed
    );
    Ok(())
}

fn axis_triple(flag: &str, v: &[usize]) -> Result<[usize; 3]> {
    Ok(match *v {
        [n] => [n, n, n],
        [a, r] => [a, r, 0],
        [a, r, e] => [a, r, e],
        _ => bail!("{flag}: expected 1 to 3 comma-separated counts, got {}", v.len()),
    })
}

/// Applies window flags on top of `base`. The multiplier comes from
/// `--alpha`, else `--pfa`, else the file, else `default_pfa`.
fn apply_cfar_flags(
    a: &CfarArgs,
    mut cfg: CfarConfig,
    from_file: bool,
    default_pfa: f64,
) -> Result<CfarConfig> {
    if let Some(t) = &a.training {
        cfg.training_cells = axis_triple("--training", t)?;
    }
    if let Some(g) = &a.guard {
        cfg.guard_cells = axis_triple("--guard", g)?;
    }
    if let Some(axes) = &a.axes {
        cfg.axes = [
            axes.contains(&Axis::Azimuth),
            axes.contains(&Axis::Range),
            axes.contains(&Axis::Elevation),
        ];
    }
    if let Some(alpha) = a.alpha {
        if !(alpha > 0.0 && alpha.is_finite()) {
            bail!("--alpha: must be finite and > 0, got {alpha}");
        }
        cfg.scale_alpha = alpha;
    } else if a.pfa.is_some() || !from_file {
        let pfa = a.pfa.unwrap_or(default_pfa);
        if !(pfa > 0.0 && pfa < 1.0) {
            bail!("--pfa: must be in (0, 1), got {pfa}");
        }
        cfg.scale_alpha = alpha_for_pfa(pfa, cfg.num_training());
    }
    cfg.validate().context("CFAR window")?;
    Ok(cfg)
}

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("--config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("--config {}", path.display()))
}

fn cfar_config(a: &CfarArgs) -> Result<CfarConfig> {
    match &a.config {
        Some(p) => apply_cfar_flags(a, read_toml(p)?, true, 1e-3),
        None => apply_cfar_flags(a, CfarConfig::default(), false, 1e-3),
    }
}

fn tlp_config(a: &CfarArgs, r: Option<f64>) -> Result<TlpConfig> {
    let (base, from_file) = match &a.config {
        Some(p) => (read_toml::<TlpConfig>(p)?, true),
        None => (TlpConfig::default(), false),
    };
    let coarse = apply_cfar_flags(a, base.coarse, from_file, 1e-1)?;
    let second_stage_r = r.unwrap_or(base.second_stage_r);
    percentile(second_stage_r)?;
    Ok(TlpConfig {
        coarse,
        second_stage_r,
    })
}

/// Fully resolved extraction settings for one mode.
#[derive(Clone, Copy)]
enum Extractor {
    Polar(Percentile),
    Cartesian(Percentile, CartesianGridSpec),
    Cfar(CfarConfig),
    Tlp(TlpConfig),
}

impl Extractor {
    fn new(mode: Mode, r: Option<f64>, voxel: f64, cfar: &CfarArgs) -> Result<Self> {
        Ok(match mode {
            Mode::PolarPercentile => Extractor::Polar(percentile(r.unwrap_or(99.9))?),
            Mode::Cartesian => Extractor::Cartesian(percentile(r.unwrap_or(90.0))?, roi(voxel)?),
            Mode::Cfar => Extractor::Cfar(cfar_config(cfar)?),
            Mode::Tlp => Extractor::Tlp(tlp_config(cfar, r)?),
        })
    }

    fn run(&self, t: &RadarTensor4D) -> Result<(PointCloud, Option<CartesianVoxelVolume>)> {
        Ok(match self {
            Extractor::Polar(r) => (filter_polar_percentile(t, *r)?, None),
            Extractor::Cartesian(r, grid) => {
                let vox = resample_to_cartesian(&power_map(t), grid)?;
                (filter_cartesian_percentile(&vox, *r)?, Some(vox))
            }
            Extractor::Cfar(cfg) => (ca_cfar(&power_map(t), cfg)?, None),
            Extractor::Tlp(cfg) => (two_level_preproc(t, cfg)?, None),
        })
    }
}

fn write_bytes(flag: &str, path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).with_context(|| format!("{flag} {}", path.display()))
}

fn preproc(a: PreprocArgs) -> Result<()> {
    if a.mode == Mode::Cfar && a.r.is_some() {
        bail!("--r: not used by --mode cfar");
    }
    if a.inputs.len() > 1 && (a.csv.is_some() || a.voxels_out.is_some()) {
        bail!("--csv/--voxels-out: only valid with a single --input");
    }
    if a.voxels_out.is_some() && a.mode != Mode::Cartesian {
        bail!("--voxels-out: only valid with --mode cartesian");
    }
    let ex = Extractor::new(a.mode, a.r, a.voxel, &a.cfar)?;

    let targets: Vec<PathBuf> = if a.inputs.len() == 1 {
        vec![a.out.clone()]
    } else {
        fs::create_dir_all(&a.out).with_context(|| format!("--out {}", a.out.display()))?;
        a.inputs
            .iter()
            .map(|p| {
                let stem = p.file_stem().unwrap_or_default();
                a.out.join(stem).with_extension("rpc")
            })
            .collect()
    };

    let results = a
        .inputs
        .par_iter()
        .zip(&targets)
        .map(|(input, out)| -> Result<_> {
            let tensor = load_tensor(input)?;
            let (cloud, vox) = ex.run(&tensor).with_context(|| format!("{}", input.display()))?;
            write_cloud(out, &cloud).with_context(|| format!("--out {}", out.display()))?;
            Ok((input, out, cloud, vox))
        })
        .collect::<Result<Vec<_>>>()?;

    for (input, out, cloud, vox) in results {
        if let Some(path) = &a.csv {
            let mut buf = Vec::new();
            write_csv_to(&cloud, &mut buf)?;
            write_bytes("--csv", path, &buf)?;
        }
        if let (Some(path), Some(vox)) = (&a.voxels_out, vox) {
            vox.save(path)
                .with_context(|| format!("--voxels-out {}", path.display()))?;
        }
        let s = size_stats(&cloud, &CartesianGridSpec::default());
        println!(
            "{} -> {} [{}]: {} points, {} bytes",
            input.display(),
            out.display(),
            a.mode.name(),
            s.num_points,
            s.bytes_on_disk
        );
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let roi = CartesianGridSpec::default();
    println!(
        "{:<32} {:>10} {:>12} {:>10} {:>14}",
        "file", "points", "bytes", "MB", "points/m^3"
    );
    for path in &a.inputs {
        let s = size_stats(&load_cloud("input", path)?, &roi);
        println!(
            "{:<32} {:>10} {:>12} {:>10.4} {:>14.6}",
            path.display(),
            s.num_points,
            s.bytes_on_disk,
            s.megabytes(),
            s.density
        );
    }
    Ok(())
}

fn ratio(a: u64, b: u64) -> String {
    if b == 0 {
        "n/a".into()
    } else {
        format!("{:.2}", a as f64 / b as f64)
    }
}

fn compare(a: CompareArgs) -> Result<()> {
    let tensor = load_tensor(&a.input)?;
    let rs = if a.rs.is_empty() { vec![99.9, 90.0] } else { a.rs.clone() };
    let modes = if a.modes.is_empty() { vec![Mode::PolarPercentile] } else { a.modes.clone() };

    let mut rows = Vec::new();
    for &mode in &modes {
        let per_r: Vec<Option<f64>> = match mode {
            Mode::PolarPercentile | Mode::Cartesian => rs.iter().copied().map(Some).collect(),
            Mode::Cfar | Mode::Tlp => vec![None],
        };
        for r in per_r {
            let ex = Extractor::new(mode, r, a.voxel, &a.cfar)?;
            let (cloud, _) = ex.run(&tensor)?;
            let bytes = cloud_to_bytes(&cloud).len() as u64;
            let label = r.map_or("-".to_string(), |r| r.to_string());
            rows.push((mode, label, cloud.len() as u64, bytes));
        }
    }

    println!(
        "{:<18} {:>7} {:>10} {:>12} {:>10} {:>9} {:>9}",
        "mode", "r", "points", "bytes", "MB", "count_x", "bytes_x"
    );
    let (c0, b0) = (rows[0].2, rows[0].3);
    for (mode, r, count, bytes) in &rows {
        println!(
            "{:<18} {:>7} {:>10} {:>12} {:>10.4} {:>9} {:>9}",
            mode.name(),
            r,
            count,
            bytes,
            *bytes as f64 / 1e6,
            ratio(*count, c0),
            ratio(*bytes, b0)
        );
    }
    Ok(())
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let grid = bev_grid(a.cell)?;
    let labels = load_labels(&a.labels)?;
    let hm = splat_gaussian_heatmap(&labels, &grid).context("--labels")?;
    let mut pgm = Vec::new();
    hm.write_pgm(&mut pgm)?;
    write_bytes("--out", &a.out, &pgm)?;
    if let Some(path) = &a.csv {
        let mut csv = Vec::new();
        hm.write_csv(&mut csv)?;
        write_bytes("--csv", path, &csv)?;
    }
    println!(
        "wrote {} ({}x{} cells, {} labels)",
        a.out.display(),
        hm.height,
        hm.width,
        labels.len()
    );
    Ok(())
}

fn distill_demo(a: DistillArgs) -> Result<()> {
    let grid = bev_grid(a.cell)?;
    for (flag, v) in [("--alpha", a.alpha), ("--beta", a.beta)] {
        if !(v >= 0.0 && v.is_finite()) {
            bail!("{flag}: must be finite and >= 0, got {v}");
        }
    }
    if !a.l_detect.is_finite() {
        bail!("--l-detect: must be finite");
    }
    let teacher = voxelize_bev(&load_cloud("--teacher", &a.teacher)?, &grid);
    let student = voxelize_bev(&load_cloud("--student", &a.student)?, &grid);
    let mask = splat_gaussian_heatmap(&load_labels(&a.labels)?, &grid).context("--labels")?;
    let l = masked_mse(&teacher, &student, &mask)?;
    let w = LossWeights {
        alpha: a.alpha,
        beta: a.beta,
    };
    println!("distill_loss {l:?}");
    println!("total_loss {:?}", total_loss(a.l_detect, l, w));
    Ok(())
}

fn fusion_demo(a: FusionArgs) -> Result<()> {
    if a.size == 0 {
        bail!("--size: must be >= 1");
    }
    let (teachers, student) = match &a.input {
        Some(path) => {
            let t = load_tensor(path)?;
            let vol = power_map(&t);
            let vox = resample_to_cartesian(&vol, &CartesianGridSpec::default())?;
            (
                vec![
                    filter_polar_percentile(&t, percentile(90.0)?)?,
                    filter_cartesian_percentile(&vox, percentile(90.0)?)?,
                    ca_cfar(&vol, &CfarConfig::default())?,
                ],
                filter_polar_percentile(&t, percentile(99.9)?)?,
            )
        }
        None => {
            if a.teachers.len() != 3 {
                bail!("--teacher: expected exactly 3, got {}", a.teachers.len());
            }
            let student = a.student.as_ref().context("--student: required with --teacher")?;
            (
                a.teachers
                    .iter()
                    .map(|p| load_cloud("--teacher", p))
                    .collect::<Result<_>>()?,
                load_cloud("--student", student)?,
            )
        }
    };
    let labels = match &a.labels {
        Some(p) => load_labels(p)?,
        None => Vec::new(),
    };
    let roi = CartesianGridSpec::default();
    let grid = bev_grid_with_shape(roi.x_bounds, roi.y_bounds, a.size, a.size);
    let demo = FusionDemo::seeded(a.fused_width, a.seed).context("--fused-width")?;
    let report = demo
        .run(&teachers, &student, &labels, &grid)
        .with_context(|| format!("--size {}", a.size))?;
    println!("teacher feature   {:?}", report.teacher_shape);
    println!("student feature   {:?}", report.student_shape);
    println!("aggregate         {:.3} s", report.aggregate_time.as_secs_f64());
    println!("densify           {:.3} s", report.densify_time.as_secs_f64());
    println!("masked_mse        {:?}", report.loss);
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    if a.frames == 0 {
        bail!("--frames: must be >= 1");
    }
    let r = percentile(a.r)?;
    let grid = roi(a.voxel)?;
    let tensor = load_tensor(&a.input)?;

    let mut rows: Vec<(&str, f64, usize)> = Vec::new();
    let mut time = |name, f: &mut dyn FnMut() -> Result<usize>| -> Result<()> {
        let t0 = Instant::now();
        let n = f()?;
        rows.push((name, t0.elapsed().as_secs_f64() * 1e3, n));
        Ok(())
    };
    let vol = power_map(&tensor);
    time("power_map", &mut || Ok(power_map(&tensor).len()))?;
    time("polar percentile", &mut || Ok(filter_polar_percentile(&tensor, r)?.len()))?;
    let mut vox = None;
    time("cartesian resample", &mut || {
        let v = resample_to_cartesian(&vol, &grid)?;
        let n = v.num_valid();
        vox = Some(v);
        Ok(n)
    })?;
    let vox = vox.expect("resample stage ran");
    time("cartesian percentile", &mut || Ok(filter_cartesian_percentile(&vox, r)?.len()))?;
    time("ca-cfar", &mut || Ok(ca_cfar(&vol, &CfarConfig::default())?.len()))?;
    time("tlp", &mut || Ok(two_level_preproc(&tensor, &TlpConfig::default())?.len()))?;
    let cloud = filter_polar_percentile(&tensor, r)?;
    time("serialize rpc1", &mut || Ok(cloud_to_bytes(&cloud).len()))?;
    let frames = a.frames;
    time("batch polar percentile", &mut || {
        let total: usize = (0..frames)
            .into_par_iter()
            .map(|_| filter_polar_percentile(&tensor, r).map(|c| c.len()))
            .collect::<radar4d::Result<Vec<_>>>()?
            .into_iter()
            .sum();
        Ok(total)
    })?;

    println!("threads {}", rayon::current_num_threads());
    println!("{:<24} {:>12} {:>12}", "stage", "ms", "output");
    for (name, ms, n) in rows {
        println!("{name:<24} {ms:>12.3} {n:>12}");
    }
    Ok(())
}
