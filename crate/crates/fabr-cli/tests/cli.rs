//! End-to-end tests of the `fabr` binary: file formats, exit codes,
//! reproducibility, and parity between the CLI's persisted-model path and
//! the in-process solvers.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fabr_core::data_io::{load_matrix, synth_classification};
use fabr_core::feature_gen::{Activation, FeaturePlan};
use fabr_core::full_solver::{fit, predict, FitOptions, PredictMode};
use fabr_core::ridge_spectral::RidgeGrid;

fn fabr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fabr"))
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = fabr().args(args).current_dir(dir).output().expect("spawn fabr");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn synth_writes_fabm_pair_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "120", "--d", "7", "--seed", "5", "--out", "a"], dir.path());
    run_ok(&["synth", "--n", "120", "--d", "7", "--seed", "5", "--out", "b"], dir.path());
    let fa = std::fs::read(dir.path().join("a/features.fabm")).unwrap();
    let fb = std::fs::read(dir.path().join("b/features.fabm")).unwrap();
    assert_eq!(fa, fb);
    let la = std::fs::read(dir.path().join("a/labels.fabm")).unwrap();
    let lb = std::fs::read(dir.path().join("b/labels.fabm")).unwrap();
    assert_eq!(la, lb);

    let features = load_matrix(dir.path().join("a/features.fabm")).unwrap();
    assert_eq!(features.data.dim(), (120, 7));
    let labels = load_matrix(dir.path().join("a/labels.fabm")).unwrap();
    assert_eq!(labels.data.dim(), (120, 1));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fabr()
        .args(["synth", "--n", "10", "--d", "2"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_block_width_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fabr()
        .args(["train", "--features", "f", "--labels", "l", "--p", "4", "--p1", "0", "--z", "1", "--out", "m"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fabr()
        .args(["predict", "--model", "nope", "--test", "nope", "--out", "o"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn overflowing_features_are_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("x.csv"), "1e200,1e200\n1e200,-1e200\n-1e200,1e200\n1e200,1e200\n").unwrap();
    std::fs::write(dir.path().join("y.csv"), "0\n1\n0\n1\n").unwrap();
    let out = fabr()
        .args(["train", "--features", "x.csv", "--labels", "y.csv", "--p", "4", "--p1", "2", "--z", "1", "--out", "m"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

fn parse_prediction_scores(csv: &str, num_z: usize, rows: usize, k: usize) -> Vec<Vec<Vec<f64>>> {
    let mut scores = vec![vec![vec![0.0; k]; rows]; num_z];
    for (i, line) in csv.lines().skip(1).enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        let zi = i / rows;
        let row: usize = fields[0].parse().unwrap();
        for j in 0..k {
            scores[zi][row][j] = fields[3 + j].parse().unwrap();
        }
    }
    scores
}

#[test]
fn cli_predictions_match_in_process_solver() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "80", "--d", "6", "--seed", "2", "--out", "ds"], dir.path());
    run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "24", "--p1", "8", "--z", "0.5,5", "--seed", "9", "--out", "model.fabr",
        ],
        dir.path(),
    );
    run_ok(
        &[
            "predict", "--model", "model.fabr", "--test", "ds/features.fabm",
            "--train", "ds/features.fabm", "--out", "preds.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("preds.csv")).unwrap();
    let got = parse_prediction_scores(&csv, 2, 80, 2);

    // in-process reference with the same recipe, at the CLI's thread count
    fabr_core::linalg::set_blas_threads(1);
    let ds = synth_classification(80, 6, 2).unwrap();
    let plan = FeaturePlan {
        master_seed: 9,
        total_features: 24,
        block_width: 8,
        activation: Activation::Relu,
        weight_scale: 1.0,
        input_dim: 6,
    };
    let grid = RidgeGrid::new(vec![0.5, 5.0]).unwrap();
    let state = fit(&ds, &plan, &grid, &FitOptions::default()).unwrap();
    let preds = predict(&state, ds.features.view(), &plan, PredictMode::Final).unwrap();
    for zi in 0..2 {
        for row in 0..80 {
            for j in 0..2 {
                let want = preds.final_entry().scores[zi][[row, j]];
                assert_eq!(got[zi][row][j].to_bits(), want.to_bits(), "z {zi} row {row} class {j}");
            }
        }
    }
}

#[test]
fn stored_beta_predictions_match_dual_route() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "60", "--d", "5", "--seed", "4", "--out", "ds"], dir.path());
    let train_args = [
        "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
        "--p", "12", "--p1", "4", "--z", "1,10", "--seed", "6",
    ];
    run_ok(&[&train_args[..], &["--out", "dual.fabr"]].concat(), dir.path());
    run_ok(&[&train_args[..], &["--store-beta", "--out", "beta.fabr"]].concat(), dir.path());

    run_ok(
        &["predict", "--model", "dual.fabr", "--test", "ds/features.fabm", "--train", "ds/features.fabm", "--out", "dual.csv"],
        dir.path(),
    );
    // the beta route needs no training features
    run_ok(
        &["predict", "--model", "beta.fabr", "--test", "ds/features.fabm", "--out", "beta.csv"],
        dir.path(),
    );
    let a = std::fs::read_to_string(dir.path().join("dual.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("beta.csv")).unwrap();
    let sa = parse_prediction_scores(&a, 2, 60, 2);
    let sb = parse_prediction_scores(&b, 2, 60, 2);
    for zi in 0..2 {
        for row in 0..60 {
            for j in 0..2 {
                assert!((sa[zi][row][j] - sb[zi][row][j]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dual_model_without_train_features_is_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "40", "--d", "4", "--seed", "8", "--out", "ds"], dir.path());
    run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "8", "--p1", "4", "--z", "1", "--out", "m.fabr",
        ],
        dir.path(),
    );
    let out = fabr()
        .args(["predict", "--model", "m.fabr", "--test", "ds/features.fabm", "--out", "p.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--train"));
}

#[test]
fn lowrank_and_ensemble_models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "64", "--d", "5", "--seed", "3", "--out", "ds"], dir.path());
    for extra in [&["--nu", "16"][..], &["--batch-size", "32"][..], &["--nu", "8", "--batch-size", "32"][..]] {
        let model_name = format!("m{}.fabr", extra.len());
        run_ok(
            &[
                &[
                    "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
                    "--p", "16", "--p1", "4", "--z", "0.5,2", "--seed", "1",
                ][..],
                extra,
                &["--out", &model_name][..],
            ]
            .concat(),
            dir.path(),
        );
        run_ok(
            &[
                "predict", "--model", &model_name, "--test", "ds/features.fabm",
                "--train", "ds/features.fabm", "--out", "p.csv",
            ],
            dir.path(),
        );
        let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 2 * 64);
    }
}

#[test]
fn empty_test_file_yields_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "30", "--d", "3", "--seed", "7", "--out", "ds"], dir.path());
    run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "6", "--p1", "3", "--z", "1", "--out", "m.fabr",
        ],
        dir.path(),
    );
    // hand-built FABM with 0 rows and 3 cols
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"FABM");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&[2, 0, 0, 0]);
    bytes.extend_from_slice(&0u64.to_le_bytes());
    bytes.extend_from_slice(&3u64.to_le_bytes());
    std::fs::write(dir.path().join("empty.fabm"), bytes).unwrap();
    run_ok(
        &["predict", "--model", "m.fabr", "--test", "empty.fabm", "--train", "ds/features.fabm", "--out", "p.csv"],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(csv, "row,z,class,score_0,score_1\n");
}

#[test]
fn voc_row_count_is_checkpoints_times_grid() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "48", "--d", "4", "--seed", "11", "--out", "tr"], dir.path());
    run_ok(&["synth", "--n", "24", "--d", "4", "--seed", "12", "--out", "te"], dir.path());
    run_ok(
        &[
            "voc", "--train-features", "tr/features.fabm", "--train-labels", "tr/labels.fabm",
            "--test-features", "te/features.fabm", "--test-labels", "te/labels.fabm",
            "--p", "16", "--p1", "2", "--z", "0.5,5,50", "--checkpoints", "1,2,4,8",
            "--seed", "2", "--out", "voc.csv",
        ],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("voc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 3);
}

#[test]
fn voc_requires_final_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "20", "--d", "3", "--seed", "13", "--out", "tr"], dir.path());
    let out = fabr()
        .args([
            "voc", "--train-features", "tr/features.fabm", "--train-labels", "tr/labels.fabm",
            "--test-features", "tr/features.fabm", "--test-labels", "tr/labels.fabm",
            "--p", "8", "--p1", "2", "--z", "1", "--checkpoints", "1,2", "--out", "voc.csv",
        ])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bench_emits_cartesian_records() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        &["bench", "--d", "3,5,8", "--num-z", "2,4", "--n", "32", "--reps", "1", "--no-timings", "--out", "bench.csv"],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    // 3 dims x 2 grid sizes x 2 methods
    assert_eq!(csv.lines().count(), 1 + 12);
    let engines = csv.lines().filter(|l| l.starts_with("engine,")).count();
    assert_eq!(engines, 6);
}

#[test]
fn commands_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for round in ["r1", "r2"] {
        run_ok(&["synth", "--n", "50", "--d", "4", "--seed", "21", "--out", round], dir.path());
        run_ok(
            &[
                "train", "--features", &format!("{round}/features.fabm"),
                "--labels", &format!("{round}/labels.fabm"),
                "--p", "8", "--p1", "4", "--z", "1,10", "--seed", "3",
                "--out", &format!("{round}/m.fabr"),
            ],
            dir.path(),
        );
        run_ok(
            &[
                "predict", "--model", &format!("{round}/m.fabr"),
                "--test", &format!("{round}/features.fabm"),
                "--train", &format!("{round}/features.fabm"),
                "--out", &format!("{round}/p.csv"),
            ],
            dir.path(),
        );
    }
    for file in ["features.fabm", "labels.fabm", "m.fabr", "p.csv"] {
        let a = std::fs::read(dir.path().join("r1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("r2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between runs");
    }
}

#[test]
fn inspect_prints_header_fields() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "30", "--d", "3", "--seed", "17", "--out", "ds"], dir.path());
    run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "6", "--p1", "2", "--z", "1,100", "--nu", "5", "--out", "m.fabr",
        ],
        dir.path(),
    );
    let out = run_ok(&["inspect", "--model", "m.fabr"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("lowrank (nu=5)"), "{text}");
    assert!(text.contains("z grid: 1,100"), "{text}");
    assert!(text.contains("n_train: 30"), "{text}");
}

#[test]
fn predict_on_training_data_reproduces_train_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "70", "--d", "5", "--seed", "19", "--out", "ds"], dir.path());
    let train_out = run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "12", "--p1", "6", "--z", "2", "--seed", "4", "--out", "m.fabr",
        ],
        dir.path(),
    );
    let predict_out = run_ok(
        &[
            "predict", "--model", "m.fabr", "--test", "ds/features.fabm",
            "--train", "ds/features.fabm", "--labels", "ds/labels.fabm", "--out", "p.csv",
        ],
        dir.path(),
    );
    let train_text = String::from_utf8_lossy(&train_out.stdout).to_string();
    let predict_text = String::from_utf8_lossy(&predict_out.stdout).to_string();
    let grab = |text: &str| -> String {
        text.lines()
            .find(|l| l.trim_start().starts_with("z=2"))
            .map(|l| l.trim().to_string())
            .unwrap_or_default()
    };
    assert_eq!(grab(&train_text), grab(&predict_text));
    assert!(!grab(&train_text).is_empty());
}

#[test]
fn csv_features_work_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut x = String::new();
    let mut y = String::new();
    for i in 0..24 {
        x.push_str(&format!("{},{}\n", i as f64 * 0.1, (23 - i) as f64 * 0.05));
        y.push_str(&format!("{}\n", i % 2));
    }
    std::fs::write(dir.path().join("x.csv"), x).unwrap();
    std::fs::write(dir.path().join("y.csv"), y).unwrap();
    run_ok(
        &[
            "train", "--features", "x.csv", "--labels", "y.csv",
            "--p", "6", "--p1", "3", "--z", "1", "--out", "m.fabr",
        ],
        dir.path(),
    );
    run_ok(
        &["predict", "--model", "m.fabr", "--test", "x.csv", "--train", "x.csv", "--out", "p.csv"],
        dir.path(),
    );
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 24);
}

#[test]
fn model_files_live_where_requested() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["synth", "--n", "20", "--d", "2", "--seed", "23", "--out", "ds"], dir.path());
    let nested: PathBuf = dir.path().join("deep/out.fabr");
    std::fs::create_dir_all(nested.parent().unwrap()).unwrap();
    run_ok(
        &[
            "train", "--features", "ds/features.fabm", "--labels", "ds/labels.fabm",
            "--p", "4", "--p1", "2", "--z", "1", "--out", nested.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(nested.exists());
}
