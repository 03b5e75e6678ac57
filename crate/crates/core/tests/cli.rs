use std::path::Path;
use std::process::{Command, Output};

use geoharm::checkpoint::Checkpoint;
use geoharm::cli::read_csv;
use geoharm::data::{GridField, Task};
use serde_json::Value;

const TINY_BOARD: &str = "checkerboard:centers=20,classes=4,train=300,val=100,test=200";

fn geoharm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoharm"))
        .args(args)
        .env("GEOHARM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = geoharm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn fit_tiny(out: &Path, repeats: &str, seed: &str) {
    ok(&[
        "fit",
        "--dataset",
        TINY_BOARD,
        "--pe",
        "sh:L=4",
        "--nn",
        "siren:H=8,N=1",
        "--max-epochs",
        "3",
        "--repeats",
        repeats,
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ]);
}

#[test]
fn fit_writes_metrics_history_checkpoint_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fit_tiny(dir.path(), "2", "5");
    let metrics = json(&dir.path().join("metrics.json"));
    assert!(metrics["test_accuracy"].is_f64());
    assert!(metrics["mean"].is_f64());
    assert!(metrics["std"].is_f64());
    assert_eq!(metrics["runs"].as_array().unwrap().len(), 2);

    let manifest = json(&dir.path().join("manifest.json"));
    let artifacts: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a.as_str().unwrap())
        .collect();
    for name in [
        "history_run0.csv",
        "history_run1.csv",
        "model_run0.geoh",
        "metrics.json",
    ] {
        assert!(
            artifacts.contains(&name),
            "{name} missing from {artifacts:?}"
        );
        assert!(dir.path().join(name).exists());
    }
    let hash = manifest["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));

    let (header, rows) =
        read_csv(&std::fs::read_to_string(dir.path().join("history_run0.csv")).unwrap()).unwrap();
    assert_eq!(header, ["epoch", "train_loss", "val_loss"]);
    assert_eq!(rows.len(), 3);
    for row in rows {
        for field in row {
            field.parse::<f64>().unwrap();
        }
    }
    let ck = Checkpoint::load(&dir.path().join("model_run0.geoh")).unwrap();
    assert_eq!(ck.task, Task::MultiClass(4));
}

#[test]
fn fit_is_deterministic_given_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    fit_tiny(a.path(), "1", "9");
    fit_tiny(b.path(), "1", "9");
    for file in ["history.csv", "model.geoh", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
    let (ma, mb) = (
        json(&a.path().join("metrics.json")),
        json(&b.path().join("metrics.json")),
    );
    assert_eq!(ma["test_accuracy"], mb["test_accuracy"]);
    assert_eq!(ma["runs"][0]["best_epoch"], mb["runs"][0]["best_epoch"]);
}

#[test]
fn predict_grid_and_latitudinal_reports() {
    let dir = tempfile::tempdir().unwrap();
    fit_tiny(dir.path(), "1", "1");
    let ckpt = dir.path().join("model.geoh");
    let grid_dir = dir.path().join("grid");
    ok(&[
        "predict-grid",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--resolution",
        "10",
        "--out",
        grid_dir.to_str().unwrap(),
    ]);
    let field = GridField::load(&grid_dir.join("grid.grdf")).unwrap();
    assert_eq!((field.cols, field.rows), (36, 18));
    assert_eq!(field.channel_names, ["class"]);
    assert!(field
        .values
        .iter()
        .all(|&v| v.fract() == 0.0 && (0.0..4.0).contains(&v)));
    let pgm = std::fs::read(grid_dir.join("preview.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n36 18\n255\n"));
    assert_eq!(pgm.len(), b"P5\n36 18\n255\n".len() + 36 * 18);
    let ppm = std::fs::read(grid_dir.join("classes.ppm")).unwrap();
    assert_eq!(ppm.len(), b"P6\n36 18\n255\n".len() + 3 * 36 * 18);

    let lat_dir = dir.path().join("lat");
    ok(&[
        "latitudinal",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset",
        TINY_BOARD,
        "--seed",
        "1",
        "--out",
        lat_dir.to_str().unwrap(),
    ]);
    let (header, rows) =
        read_csv(&std::fs::read_to_string(lat_dir.join("latitudinal.csv")).unwrap()).unwrap();
    assert_eq!(
        header,
        ["band_south_deg", "band_north_deg", "accuracy", "n_points"]
    );
    assert_eq!(rows.len(), 9);
    let total: usize = rows.iter().map(|r| r[3].parse::<usize>().unwrap()).sum();
    assert_eq!(total, 200);
}

#[test]
fn binary_preview_maps_probability_linearly() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "fit",
        "--dataset",
        "landocean:train=200,val=100,test=100",
        "--pe",
        "sh:L=3",
        "--nn",
        "linear",
        "--max-epochs",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let grid_dir = dir.path().join("grid");
    ok(&[
        "predict-grid",
        "--checkpoint",
        dir.path().join("model.geoh").to_str().unwrap(),
        "--resolution",
        "20",
        "--out",
        grid_dir.to_str().unwrap(),
    ]);
    let field = GridField::load(&grid_dir.join("grid.grdf")).unwrap();
    assert_eq!(field.channel_names, ["probability"]);
    let pgm = std::fs::read(grid_dir.join("preview.pgm")).unwrap();
    let pixels = &pgm[b"P5\n18 9\n255\n".len()..];
    for img_row in 0..9 {
        for col in 0..18 {
            let p = field.value(0, 8 - img_row, col);
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(pixels[img_row * 18 + col], (255.0 * p).round() as u8);
        }
    }
    assert!(!grid_dir.join("classes.ppm").exists());
}

#[test]
fn errors_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = geoharm(&[
        "predict-grid",
        "--checkpoint",
        "/nonexistent/model.geoh",
        "--out",
        out,
    ]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let typo = geoharm(&[
        "fit",
        "--dataset",
        TINY_BOARD,
        "--pe",
        "sh:L=4,degree=3",
        "--nn",
        "linear",
        "--out",
        out,
    ]);
    assert!(!typo.status.success());
    assert!(!dir.path().join("metrics.json").exists());

    let no_pe = geoharm(&[
        "fit",
        "--dataset",
        TINY_BOARD,
        "--nn",
        "linear",
        "--out",
        out,
    ]);
    assert!(!no_pe.status.success());
    assert!(String::from_utf8_lossy(&no_pe.stderr).contains("pe"));

    let unknown = geoharm(&["frobnicate"]);
    assert!(!unknown.status.success());
}

#[test]
fn latitudinal_rejects_regression_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ds = "synth:C=2,L=2,train=200,val=50,test=50";
    ok(&[
        "fit",
        "--dataset",
        ds,
        "--pe",
        "sh:L=3",
        "--nn",
        "linear",
        "--max-epochs",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let metrics = json(&dir.path().join("metrics.json"));
    assert!(metrics["test_mse"].is_f64());
    let res = geoharm(&[
        "latitudinal",
        "--checkpoint",
        dir.path().join("model.geoh").to_str().unwrap(),
        "--dataset",
        ds,
        "--out",
        dir.path().join("lat").to_str().unwrap(),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("classification"));
}

#[test]
fn dataset_sweep_and_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let ds_dir = dir.path().join("ds");
    ok(&[
        "dataset",
        "--dataset",
        TINY_BOARD,
        "--seed",
        "2",
        "--out",
        ds_dir.to_str().unwrap(),
    ]);
    for (name, n) in [("train.csv", 300), ("val.csv", 100), ("test.csv", 200)] {
        let (header, rows) =
            read_csv(&std::fs::read_to_string(ds_dir.join(name)).unwrap()).unwrap();
        assert_eq!(header[..2], ["lon_deg", "lat_deg"]);
        assert_eq!(rows.len(), n);
    }

    let sweep_dir = dir.path().join("sweep");
    ok(&[
        "sweep-resolution",
        "--pe",
        "sh:L=3;direct",
        "--nn",
        "linear",
        "--centers",
        "20,40",
        "--n-train",
        "200",
        "--max-epochs",
        "2",
        "--out",
        sweep_dir.to_str().unwrap(),
    ]);
    let (header, rows) =
        read_csv(&std::fs::read_to_string(sweep_dir.join("sweep.csv")).unwrap()).unwrap();
    assert!(header.contains(&"mean_dist_deg".to_string()));
    assert_eq!(rows.len(), 4);

    let bench_dir = dir.path().join("bench");
    ok(&[
        "bench-pe",
        "--params",
        "2,4",
        "--n-points",
        "100",
        "--repeats",
        "1",
        "--out",
        bench_dir.to_str().unwrap(),
    ]);
    let (header, rows) =
        read_csv(&std::fs::read_to_string(bench_dir.join("bench.csv")).unwrap()).unwrap();
    assert_eq!(header, ["kind", "param", "median_seconds"]);
    assert_eq!(rows.len(), 6);
    let kinds: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    for k in ["sh", "sh-closed", "spherec+"] {
        assert!(kinds.contains(&k));
    }
}
