use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn ssae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssae"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ssae(args);
    assert!(
        out.status.success(),
        "ssae {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn digest(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

fn shape(path: &Path) -> (usize, usize) {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    let cols = rows[0].split(',').count();
    assert!(
        rows.iter().all(|r| r.split(',').count() == cols),
        "ragged {}",
        path.display()
    );
    (rows.len(), cols)
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn small_dataset(dir: &TempDir) -> String {
    let data = p(dir, "data.csv");
    ok(&[
        "datagen",
        "--sensors",
        "8",
        "--samples",
        "160",
        "--corr-len",
        "3",
        "--noise-var",
        "0.1",
        "--seed",
        "4",
        "--out",
        &data,
    ]);
    data
}

#[test]
fn datagen_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    let args = [
        "datagen",
        "--sensors",
        "23",
        "--samples",
        "2000",
        "--noise-var",
        "0",
        "--seed",
        "1",
        "--out",
    ];
    ok(&[&args[..], &[a.as_str()]].concat());
    ok(&[&args[..], &[b.as_str()]].concat());
    assert_eq!(shape(Path::new(&a)), (2000, 23));
    assert_eq!(digest(Path::new(&a)), digest(Path::new(&b)));
}

#[test]
fn datagen_without_output_is_a_usage_error() {
    let out = ssae(&["datagen", "--sensors", "4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
}

#[test]
fn train_rejects_k_above_code_length() {
    let dir = TempDir::new().unwrap();
    let model = p(&dir, "model.txt");
    let out = ssae(&[
        "train",
        "--data",
        "missing.csv",
        "--hidden",
        "4",
        "--k",
        "5",
        "--out",
        &model,
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
    assert!(!Path::new(&model).exists());
}

#[test]
fn train_encode_decode_round_trip() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let model = p(&dir, "model.txt");
    let report = ok(&[
        "train",
        "--data",
        &data,
        "--hidden",
        "10",
        "--k",
        "3",
        "--gamma",
        "auto",
        "--folds",
        "3",
        "--seed",
        "2",
        "--max-iterations",
        "40",
        "--out",
        &model,
    ]);
    assert!(report.contains("gamma = 0.182"), "{report}");
    assert_eq!(report.lines().filter(|l| l.starts_with("fold")).count(), 3);
    assert!(report.contains("mean rmse"));

    let meas = p(&dir, "meas.csv");
    ok(&[
        "encode",
        "--model",
        &model,
        "--data",
        &data,
        "--m",
        "7",
        "--sensing-seed",
        "5",
        "--out",
        &meas,
    ]);
    assert_eq!(shape(Path::new(&meas)), (160, 8));

    let recon = p(&dir, "recon.csv");
    ok(&[
        "decode",
        "--model",
        &model,
        "--measurements",
        &meas,
        "--m",
        "7",
        "--sensing-seed",
        "5",
        "--out",
        &recon,
    ]);
    assert_eq!(shape(Path::new(&recon)), (160, 8));

    // decoding with the model's own M (a different sensing matrix) must fail loudly
    let out = ssae(&[
        "decode",
        "--model",
        &model,
        "--measurements",
        &meas,
        "--m",
        "4",
        "--out",
        &recon,
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("8 columns") && err.contains("M + 1 = 5"),
        "{err}"
    );
}

#[test]
fn encode_rejects_data_of_the_wrong_width() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let model = p(&dir, "model.txt");
    ok(&[
        "train",
        "--data",
        &data,
        "--k",
        "2",
        "--folds",
        "2",
        "--max-iterations",
        "10",
        "--out",
        &model,
    ]);
    let other = p(&dir, "other.csv");
    ok(&[
        "datagen",
        "--sensors",
        "5",
        "--samples",
        "10",
        "--out",
        &other,
    ]);
    let out = ssae(&[
        "encode",
        "--model",
        &model,
        "--data",
        &other,
        "--out",
        &p(&dir, "m.csv"),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("5 columns") && err.contains("N = 8"), "{err}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let config = p(&dir, "train.conf");
    fs::write(
        &config,
        "# defaults\nhidden = 8\nk = 2\nfolds = 2\ngamma = 0.5\nmax_iterations = 10\n",
    )
    .unwrap();
    let report = ok(&[
        "train",
        "--data",
        &data,
        "--config",
        &config,
        "--gamma",
        "0.1",
        "--out",
        &p(&dir, "m.txt"),
    ]);
    assert!(report.contains("gamma = 0.1"), "{report}");
    assert_eq!(report.lines().filter(|l| l.starts_with("fold")).count(), 2);
}

#[test]
fn bench_lists_valid_methods_on_a_typo() {
    let out = ssae(&[
        "bench",
        "--data",
        "x.csv",
        "--methods",
        "ssae,wavelet",
        "--out",
        "r.csv",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("ssae, dct, dft, pca"), "{err}");
}

#[test]
fn bench_reports_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let (a, b) = (p(&dir, "a.csv"), p(&dir, "b.csv"));
    let args = [
        "bench",
        "--data",
        &data,
        "--etas",
        "0.25,1",
        "--cs",
        "both",
        "--seeds",
        "0,1",
        "--noise-var",
        "0.2",
        "--max-iterations",
        "30",
        "--out",
    ];
    ok(&[&args[..], &[a.as_str()]].concat());
    ok(&[&args[..], &[b.as_str()]].concat());
    assert_eq!(digest(Path::new(&a)), digest(Path::new(&b)));

    let text = fs::read_to_string(&a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,eta,L,K,M,noise_variance,cs_enabled,rmse,seed"
    );
    // 4 methods x 2 etas x 2 cs settings x 2 seeds
    assert_eq!(lines.count(), 32);
}

#[test]
fn sweep_sorts_by_error_and_flags_the_best() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(&dir);
    let csv = p(&dir, "sweep.csv");
    let stdout = ok(&[
        "sweep-gamma",
        "--data",
        &data,
        "--eta",
        "0.25",
        "--grid",
        "0.5,0.05,0",
        "--runs",
        "2",
        "--folds",
        "2",
        "--max-iterations",
        "15",
        "--out",
        &csv,
    ]);
    assert_eq!(stdout.matches("best").count(), 1, "{stdout}");
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let means: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(rows[0][4], "true");
    assert!(rows.iter().all(|r| r[3] == "2"));
}
