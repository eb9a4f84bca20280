//! End-to-end checks of the `deepris` binary: exit codes, output formats,
//! and byte-level reproducibility of the generate/train/eval pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn deepris(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepris"))
        .args(args)
        .env_remove("DEEPRIS_SEED")
        .output()
        .expect("binary runs")
}

/// Overrides shrinking every stage to sub-second scale.
const TINY: &[&str] = &[
    "--ris_elements",
    "1",
    "--tx_antennas",
    "1",
    "--frame_len",
    "2",
    "--hidden_dims",
    "8",
    "--batch_size",
    "16",
    "--max_epochs",
    "2",
    "--patience",
    "2",
    "--unit_channels",
    "true",
    "--min_bits",
    "2000",
    "--min_errors",
    "1",
    "--max_bits",
    "4000",
    "--seed",
    "42",
];

fn tiny_args<'a>(command: &[&'a str]) -> Vec<&'a str> {
    let mut v = command.to_vec();
    v.extend_from_slice(TINY);
    v
}

#[test]
fn complexity_prints_the_reference_count() {
    let out = deepris(&["complexity", "--dims", "500,250,100,2", "--k", "1", "--t", "1"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("inference_multiplies=150200"), "{stdout}");
    assert!(stdout.contains("training_multiplies=150200"), "{stdout}");
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_csv = dir.path().join("r.csv");
    let out = deepris(&[
        "eval",
        "--checkpoint",
        "/definitely/not/here.ckpt",
        "--out",
        out_csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_code_two() {
    let out = deepris(&["generate", "--out", "/tmp/x.bin", "--lambda", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("lambda"), "{stderr}");

    let out = deepris(&["generate", "--out", "/tmp/x.bin", "--no_such_key", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let out = deepris(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resolved_config_is_echoed_with_a_digest() {
    let out = deepris(&["complexity", "--seed", "123"]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("# seed=123"), "{stderr}");
    assert!(stderr.contains("# config_digest="), "{stderr}");
    assert!(stderr.contains("# batch_size=64"), "{stderr}");
}

#[test]
fn seed_env_var_is_a_default_and_flags_win() {
    let out = Command::new(env!("CARGO_BIN_EXE_deepris"))
        .args(["complexity"])
        .env("DEEPRIS_SEED", "777")
        .output()
        .unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("# seed=777"), "{stderr}");

    let out = Command::new(env!("CARGO_BIN_EXE_deepris"))
        .args(["complexity", "--seed", "5"])
        .env("DEEPRIS_SEED", "777")
        .output()
        .unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("# seed=5"), "{stderr}");
}

fn run_pipeline(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let data = dir.join(format!("{tag}.data"));
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let csv = dir.join(format!("{tag}.csv"));
    let scenarios = dir.join(format!("{tag}.scenarios"));
    std::fs::write(
        &scenarios,
        "label=tiny csi=perfect fading=rayleigh n=1 m=1 frame_len=2 snr_db=0,5 detectors=ml,deepris unit_channels=true\n",
    )
    .unwrap();

    let out = deepris(&tiny_args(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--size",
        "300",
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = deepris(&tiny_args(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        ckpt.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = deepris(&tiny_args(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--scenarios",
        scenarios.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    (std::fs::read(&ckpt).unwrap(), std::fs::read(&csv).unwrap())
}

#[test]
fn pipeline_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt_a, csv_a) = run_pipeline(dir.path(), "a");
    let (ckpt_b, csv_b) = run_pipeline(dir.path(), "b");
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between identical runs");
    assert_eq!(csv_a, csv_b, "CSVs differ between identical runs");

    let text = String::from_utf8(csv_a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with('#'));
    assert!(lines[1].starts_with("# config_digest="));
    assert!(lines[2].starts_with("# seed="));
    assert_eq!(lines[3], "scenario,detector,snr_db,bits,errors,ber,ci95,seed");
    // 1 scenario x 2 detectors x 2 SNR points
    assert_eq!(lines.len(), 4 + 4);
    for row in &lines[4..] {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 8);
        let bits: f64 = cols[3].parse().unwrap();
        let errors: f64 = cols[4].parse().unwrap();
        let ber: f64 = cols[5].parse().unwrap();
        assert!((ber - errors / bits).abs() < 1e-15);
    }
}

#[test]
fn sweep_writes_one_history_per_learning_rate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("sweep.data");
    let csv = dir.path().join("sweep.csv");
    let out = deepris(&tiny_args(&[
        "generate",
        "--out",
        data.to_str().unwrap(),
        "--size",
        "200",
    ]));
    assert!(out.status.success());
    let out = deepris(&tiny_args(&[
        "sweep",
        "--data",
        data.to_str().unwrap(),
        "--etas",
        "0.01,0.1",
        "--out",
        csv.to_str().unwrap(),
    ]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "eta,epoch,train_loss,val_loss,stop_reason,best_epoch");
    let etas: std::collections::BTreeSet<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(etas.len(), 2);
}

#[test]
fn train_rejects_a_corrupted_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.data");
    std::fs::write(&data, b"DEEPRISDnot really").unwrap();
    let out = deepris(&tiny_args(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path().join("x.ckpt").to_str().unwrap(),
    ]));
    assert_eq!(out.status.code(), Some(4));
}
