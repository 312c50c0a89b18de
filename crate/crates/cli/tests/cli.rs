use std::path::Path;
use std::process::{Command, Output};

use radar4d::{read_cloud, PolarGridSpec, RadarTensor4D};

fn radar4d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radar4d"))
        .args(args)
        .env_remove("RADAR4D_THREADS")
        .output()
        .expect("spawn radar4d")
}

fn ok(args: &[&str]) -> String {
    let out = radar4d(args);
    assert!(
        out.status.success(),
        "radar4d {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_scene_is_bit_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.4drt");
    let b = dir.path().join("b.4drt");
    let c = dir.path().join("c.4drt");
    ok(&["gen-scene", "--seed", "7", "--out", s(&a)]);
    ok(&["gen-scene", "--seed", "7", "--out", s(&b)]);
    ok(&["gen-scene", "--seed", "8", "--out", s(&c)]);
    let (a, b, c) = (
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        std::fs::read(c).unwrap(),
    );
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn compare_percentile_count_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.4drt");
    ok(&["gen-scene", "--out", s(&t)]);
    let table = ok(&["compare", "--input", s(&t), "--r", "99.9", "--r", "90"]);
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows.len(), 2, "{table}");
    assert_eq!(rows[0][1], "99.9");
    assert_eq!(rows[1][1], "90");
    let ratio: f64 = rows[1][5].parse().unwrap();
    assert!((80.0..=110.0).contains(&ratio), "count ratio {ratio}\n{table}");
}

#[test]
fn cfar_on_uniform_tensor_writes_empty_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("flat.4drt");
    let grid = PolarGridSpec {
        n_azimuth: 32,
        n_range: 64,
        n_elevation: 4,
        n_doppler: 2,
        ..PolarGridSpec::default()
    };
    let n = grid.n_azimuth * grid.n_range * grid.n_elevation * grid.n_doppler;
    RadarTensor4D::new(grid, vec![3.0; n]).unwrap().save(&t).unwrap();
    let out = dir.path().join("flat.rpc");
    ok(&["preproc", "--input", s(&t), "--out", s(&out), "--mode", "cfar", "--alpha", "2"]);
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 8);
    assert!(read_cloud(&out).unwrap().is_empty());
}

#[test]
fn preproc_batch_writes_one_cloud_per_input() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.4drt");
    let b = dir.path().join("b.4drt");
    ok(&["gen-scene", "--seed", "1", "--out", s(&a)]);
    ok(&["gen-scene", "--seed", "2", "--out", s(&b)]);
    let out = dir.path().join("clouds");
    ok(&[
        "--threads", "2", "preproc", "--input", s(&a), "--input", s(&b), "--out", s(&out),
        "--mode", "tlp",
    ]);
    for stem in ["a", "b"] {
        let cloud = read_cloud(out.join(format!("{stem}.rpc"))).unwrap();
        assert!(!cloud.is_empty());
    }
    let stats = ok(&["stats", s(&out.join("a.rpc")), s(&out.join("b.rpc"))]);
    assert_eq!(stats.lines().count(), 3, "{stats}");
}

#[test]
fn invalid_parameters_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.4drt");
    ok(&["gen-scene", "--out", s(&t)]);
    let rpc = dir.path().join("x.rpc");

    let out = radar4d(&["preproc", "--input", s(&t), "--out", s(&rpc), "--r", "120"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--r"));
    assert!(!rpc.exists());

    let out = radar4d(&["preproc", "--input", s(&dir.path().join("missing.4drt")), "--out", s(&rpc)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--input"));

    let out = radar4d(&["--threads", "0", "stats", s(&rpc)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--threads"));
}

#[test]
fn heatmap_and_distill_demo() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.toml");
    std::fs::write(
        &labels,
        "[[labels]]\ncenter_x = 11.3\ncenter_y = -4.1\nlength = 4.2\nwidth = 1.8\nyaw = 0.3\n",
    )
    .unwrap();
    let pgm = dir.path().join("h.pgm");
    ok(&["heatmap", "--labels", s(&labels), "--out", s(&pgm)]);
    let bytes = std::fs::read(&pgm).unwrap();
    assert!(bytes.starts_with(b"P5\n180 80\n255\n"));
    assert_eq!(bytes.len(), "P5\n180 80\n255\n".len() + 180 * 80);

    let t = dir.path().join("t.4drt");
    ok(&["gen-scene", "--out", s(&t)]);
    let teacher = dir.path().join("teacher.rpc");
    let student = dir.path().join("student.rpc");
    ok(&["preproc", "--input", s(&t), "--out", s(&teacher), "--mode", "cfar"]);
    ok(&["preproc", "--input", s(&t), "--out", s(&student)]);
    let text = ok(&[
        "distill-demo", "--teacher", s(&teacher), "--student", s(&student), "--labels",
        s(&labels),
    ]);
    let loss: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("distill_loss "))
        .expect("distill_loss line")
        .parse()
        .unwrap();
    assert!(loss.is_finite() && loss >= 0.0);
}
