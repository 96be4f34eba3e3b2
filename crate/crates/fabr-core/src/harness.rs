//! Experiment drivers: expanding-complexity curves and the
//! multi-shrinkage timing benchmark against a per-shrinkage baseline.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};

use crate::data_io::{one_hot_encode, EncodedLabels, LabeledDataset};
use crate::error::{Error, Result};
use crate::feature_gen::{generate_block, FeaturePlan};
use crate::full_solver::{self, FitOptions, PredictMode};
use crate::linalg;
use crate::lowrank_solver;
use crate::ridge_spectral::{classify, multi_z_apply, sym_eig, ResolventMode, RidgeGrid, EIG_CLIP_REL};

/// Fraction of exact class matches.
pub fn accuracy(predictions: &[u32], truth: &[u32]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::Data(format!(
            "prediction count ({}) and truth count ({}) disagree",
            predictions.len(),
            truth.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions.iter().zip(truth.iter()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Which solver path drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverChoice {
    Full,
    Lowrank { nu: usize },
}

/// One row of an expanding-complexity curve.
#[derive(Debug, Clone, PartialEq)]
pub struct VocRow {
    pub checkpoint: usize,
    pub complexity: f64,
    pub z: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Cumulative fit-side wall time when this checkpoint's solution was
    /// stored; zero unless timing was requested, so default output is
    /// byte-reproducible.
    pub ms: u64,
}

#[derive(Debug, Clone)]
pub struct VocCurve {
    pub rows: Vec<VocRow>,
}

impl VocCurve {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "checkpoint,complexity,z,train_acc,test_acc,ms")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.checkpoint, r.complexity, r.z, r.train_acc, r.test_acc, r.ms
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Checkpoint whose complexity is closest to the interpolation threshold
    /// `c = 1`.
    pub fn threshold_checkpoint(&self) -> Option<usize> {
        self.rows
            .iter()
            .min_by(|a, b| {
                (a.complexity - 1.0)
                    .abs()
                    .partial_cmp(&(b.complexity - 1.0).abs())
                    .expect("finite complexities")
            })
            .map(|r| r.checkpoint)
    }

    /// Test accuracy at (checkpoint, z), if present.
    pub fn test_acc_at(&self, checkpoint: usize, z: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.checkpoint == checkpoint && r.z == z)
            .map(|r| r.test_acc)
    }
}

/// Mean eigenvalue of `Psi_K / N` (equals `trace / N^2`), computed with one
/// streaming pass over the blocks. Useful for placing shrinkage grids on the
/// data's own scale.
pub fn mean_gram_eigenvalue(x: ArrayView2<f64>, plan: &FeaturePlan) -> Result<f64> {
    plan.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Data("empty sample".into()));
    }
    let mut trace = 0.0;
    for k in 0..plan.block_count() {
        let block = generate_block(x, plan, k)?;
        trace += block.values.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(trace / (n as f64 * n as f64))
}

/// One fitting pass with checkpoint solutions, one prediction pass per
/// evaluation set, then accuracy per (checkpoint, z). The checkpoint list
/// must include the final block count.
pub fn run_voc(
    train: &LabeledDataset,
    test: &LabeledDataset,
    plan: &FeaturePlan,
    grid: &RidgeGrid,
    checkpoints: &[usize],
    solver: SolverChoice,
    opts: &FitOptions,
    record_timings: bool,
) -> Result<VocCurve> {
    let num_blocks = plan.block_count();
    if !checkpoints.contains(&num_blocks) {
        return Err(Error::Data(format!(
            "checkpoints must include the final block count {num_blocks}"
        )));
    }
    let fit_opts = FitOptions { voc_checkpoints: checkpoints.to_vec(), ..opts.clone() };
    let (train_preds, test_preds, elapsed) = match solver {
        SolverChoice::Full => {
            let state = full_solver::fit(train, plan, grid, &fit_opts)?;
            let train_preds =
                full_solver::predict(&state, train.features.view(), plan, PredictMode::AllCheckpoints)?;
            let test_preds =
                full_solver::predict(&state, test.features.view(), plan, PredictMode::AllCheckpoints)?;
            (train_preds, test_preds, state.checkpoint_elapsed_ms.clone())
        }
        SolverChoice::Lowrank { nu } => {
            let model = lowrank_solver::fit_lowrank(train, plan, grid, nu, &fit_opts)?;
            let train_preds = lowrank_solver::predict_lowrank(
                &model,
                train.features.view(),
                plan,
                PredictMode::AllCheckpoints,
            )?;
            let test_preds = lowrank_solver::predict_lowrank(
                &model,
                test.features.view(),
                plan,
                PredictMode::AllCheckpoints,
            )?;
            (train_preds, test_preds, model.checkpoint_elapsed_ms.clone())
        }
    };

    let mut rows = Vec::new();
    for (train_entry, test_entry) in train_preds.entries.iter().zip(test_preds.entries.iter()) {
        debug_assert_eq!(train_entry.checkpoint, test_entry.checkpoint);
        let ms = if record_timings {
            elapsed
                .iter()
                .find(|(k, _)| *k == train_entry.checkpoint)
                .map(|(_, ms)| *ms)
                .unwrap_or(0)
        } else {
            0
        };
        for (zi, &z) in grid.values().iter().enumerate() {
            rows.push(VocRow {
                checkpoint: train_entry.checkpoint,
                complexity: train_entry.complexity,
                z,
                train_acc: accuracy(&train_entry.classes[zi], &train.labels)?,
                test_acc: accuracy(&test_entry.classes[zi], &test.labels)?,
                ms,
            });
        }
    }
    Ok(VocCurve { rows })
}

/// One timing record of the benchmark.
#[derive(Debug, Clone)]
pub struct BenchRecord {
    /// "engine" (multi-shrinkage dual path) or "baseline" (independent
    /// per-shrinkage refits).
    pub method: String,
    pub d: usize,
    pub num_z: usize,
    pub mean_s: f64,
    pub std_s: f64,
    pub reps: usize,
    pub threads: usize,
}

pub fn write_bench_csv(records: &[BenchRecord], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "method,d,num_z,mean_s,std_s,reps,threads")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.method, r.d, r.num_z, r.mean_s, r.std_s, r.reps, r.threads
        )?;
    }
    Ok(())
}

pub fn bench_csv_string(records: &[BenchRecord]) -> String {
    let mut buf = Vec::new();
    write_bench_csv(records, &mut buf).expect("write to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Log-spaced shrinkage grid with `count` points spanning `[1e-3, 1e3]`.
pub(crate) fn bench_grid(count: usize) -> Result<RidgeGrid> {
    if count == 0 {
        return Err(Error::Data("need at least one shrinkage".into()));
    }
    if count == 1 {
        return RidgeGrid::new(vec![1.0]);
    }
    let values: Vec<f64> = (0..count)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (count - 1) as f64))
        .collect();
    RidgeGrid::new(values)
}

/// The engine's path on raw inputs (the data matrix is the single feature
/// block): one Gram, one eigendecomposition, the whole grid from it, then
/// the dual second pass. Returns elapsed seconds.
fn time_engine(
    x_train: ArrayView2<f64>,
    labels: &EncodedLabels,
    x_test: ArrayView2<f64>,
    grid: &RidgeGrid,
) -> Result<f64> {
    let n = x_train.nrows();
    let start = Instant::now();
    let mut psi = Array2::<f64>::zeros((n, n));
    linalg::syrk_acc(&mut psi, x_train);
    psi.mapv_inplace(|v| v / n as f64);
    let eig = sym_eig(psi.view())?.truncate_null(EIG_CLIP_REL);
    let q = multi_z_apply(&eig, labels.matrix.view(), grid, n, ResolventMode::Exact)?;
    let k = labels.column_means.len();
    let mut qstack = Array2::<f64>::zeros((n, k * q.len()));
    for (zi, qz) in q.iter().enumerate() {
        qstack.slice_mut(ndarray::s![.., zi * k..(zi + 1) * k]).assign(qz);
    }
    let beta = linalg::matmul(x_train, true, qstack.view(), false);
    let yhat = linalg::matmul(x_test, false, beta.view(), false);
    std::hint::black_box(&yhat);
    Ok(start.elapsed().as_secs_f64())
}

/// The naive baseline: an independent ridge fit per shrinkage, sharing
/// nothing across the grid. Each fit forms its Gram on the cheaper side
/// (primal `d x d` when `d <= n`, dual `n x n` otherwise) and factorizes it
/// fresh. Returns elapsed seconds.
fn time_baseline(
    x_train: ArrayView2<f64>,
    labels: &EncodedLabels,
    x_test: ArrayView2<f64>,
    grid: &RidgeGrid,
) -> Result<f64> {
    let n = x_train.nrows();
    let d = x_train.ncols();
    let inv_n = 1.0 / n as f64;
    let start = Instant::now();
    for &z in grid.values() {
        let beta = if d <= n {
            let mut gram = Array2::<f64>::zeros((d, d));
            linalg::syrk_acc(&mut gram, x_train.t());
            gram.mapv_inplace(|v| v * inv_n);
            for i in 0..d {
                gram[[i, i]] += z;
            }
            let mut rhs = linalg::matmul(x_train, true, labels.matrix.view(), false);
            rhs.mapv_inplace(|v| v * inv_n);
            linalg::solve_spd(gram.view(), rhs.view())?
        } else {
            let mut gram = Array2::<f64>::zeros((n, n));
            linalg::syrk_acc(&mut gram, x_train);
            gram.mapv_inplace(|v| v * inv_n);
            for i in 0..n {
                gram[[i, i]] += z;
            }
            let mut rhs = labels.matrix.clone();
            rhs.mapv_inplace(|v| v * inv_n);
            let alpha = linalg::solve_spd(gram.view(), rhs.view())?;
            linalg::matmul(x_train, true, alpha.view(), false)
        };
        let yhat = linalg::matmul(x_test, false, beta.view(), false);
        std::hint::black_box(&yhat);
    }
    Ok(start.elapsed().as_secs_f64())
}

fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Times the engine and the per-shrinkage baseline over a grid of input
/// dimensions and grid sizes. Data: `n_train + ceil(n_train/4)` synthetic
/// rows per `d`, the first `n_train` for fitting. With `reps > 1` a warm-up
/// run is discarded first. `record_timings = false` zeroes the measured
/// columns so output bytes are reproducible.
#[allow(clippy::too_many_arguments)]
pub fn run_bench(
    dgrid: &[usize],
    zgrid_sizes: &[usize],
    n_train: usize,
    reps: usize,
    seed: u64,
    threads: usize,
    record_timings: bool,
) -> Result<Vec<BenchRecord>> {
    if reps == 0 {
        return Err(Error::Data("need at least one repetition".into()));
    }
    if n_train < 2 {
        return Err(Error::Data("need at least 2 training rows".into()));
    }
    let mut records = Vec::new();
    for &d in dgrid {
        let total = n_train + n_train.div_ceil(4).max(1);
        let ds = crate::data_io::synth_classification(total, d, seed)?;
        let x_train = ds.features.slice_axis(Axis(0), (0..n_train).into());
        let x_test = ds.features.slice_axis(Axis(0), (n_train..total).into());
        let labels = one_hot_encode(&ds.labels[..n_train], 2, true)?;
        let truth_test = &ds.labels[n_train..];
        std::hint::black_box(truth_test);

        for &num_z in zgrid_sizes {
            let grid = bench_grid(num_z)?;
            for method in ["engine", "baseline"] {
                let time_once = |()| -> Result<f64> {
                    match method {
                        "engine" => time_engine(x_train, &labels, x_test, &grid),
                        _ => time_baseline(x_train, &labels, x_test, &grid),
                    }
                };
                if reps > 1 {
                    time_once(())?;
                }
                let mut samples = Vec::with_capacity(reps);
                for _ in 0..reps {
                    samples.push(time_once(())?);
                }
                let (mean_s, std_s) = mean_std(&samples);
                records.push(BenchRecord {
                    method: method.to_string(),
                    d,
                    num_z,
                    mean_s: if record_timings { mean_s } else { 0.0 },
                    std_s: if record_timings { std_s } else { 0.0 },
                    reps,
                    threads,
                });
            }
        }
    }
    Ok(records)
}

/// Classify raw-feature test rows with the engine path (used by the CLI's
/// benchmark sanity output and by tests).
pub fn raw_engine_classify(
    x_train: ArrayView2<f64>,
    labels_train: &[u32],
    num_classes: usize,
    x_test: ArrayView2<f64>,
    grid: &RidgeGrid,
) -> Result<Vec<Vec<u32>>> {
    let n = x_train.nrows();
    let encoded = one_hot_encode(labels_train, num_classes, true)?;
    let mut psi = Array2::<f64>::zeros((n, n));
    linalg::syrk_acc(&mut psi, x_train);
    psi.mapv_inplace(|v| v / n as f64);
    let eig = sym_eig(psi.view())?.truncate_null(EIG_CLIP_REL);
    let q = multi_z_apply(&eig, encoded.matrix.view(), grid, n, ResolventMode::Exact)?;
    let mut out = Vec::with_capacity(q.len());
    for qz in &q {
        let beta = linalg::matmul(x_train, true, qz.view(), false);
        let scores = linalg::matmul(x_test, false, beta.view(), false);
        out.push(classify(scores.view(), &encoded.column_means));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::synth_classification;
    use crate::feature_gen::Activation;

    fn plan(p: usize, p1: usize, d: usize, seed: u64) -> FeaturePlan {
        FeaturePlan {
            master_seed: seed,
            total_features: p,
            block_width: p1,
            activation: Activation::Relu,
            weight_scale: 1.0,
            input_dim: d,
        }
    }

    #[test]
    fn accuracy_basics() {
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!((accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn degenerate_curve_matches_plain_fit() {
        let train = synth_classification(24, 4, 1).unwrap();
        let test = synth_classification(12, 4, 2).unwrap();
        let p = plan(8, 4, 4, 9);
        let grid = RidgeGrid::new(vec![0.5, 5.0]).unwrap();
        let curve = run_voc(
            &train,
            &test,
            &p,
            &grid,
            &[2],
            SolverChoice::Full,
            &FitOptions::default(),
            false,
        )
        .unwrap();
        assert_eq!(curve.rows.len(), 2);

        let state = full_solver::fit(&train, &p, &grid, &FitOptions::default()).unwrap();
        let test_preds =
            full_solver::predict(&state, test.features.view(), &p, PredictMode::Final).unwrap();
        for (zi, row) in curve.rows.iter().enumerate() {
            let want = accuracy(&test_preds.final_entry().classes[zi], &test.labels).unwrap();
            assert_eq!(row.test_acc, want);
        }
    }

    #[test]
    fn prefix_rows_match_fresh_runs() {
        let train = synth_classification(32, 3, 3).unwrap();
        let test = synth_classification(16, 3, 4).unwrap();
        let grid = RidgeGrid::new(vec![1.0]).unwrap();
        let p = plan(8, 2, 3, 11);
        let curve = run_voc(
            &train,
            &test,
            &p,
            &grid,
            &[1, 2, 3, 4],
            SolverChoice::Full,
            &FitOptions::default(),
            false,
        )
        .unwrap();
        for row in &curve.rows {
            let p_small = plan(2 * row.checkpoint, 2, 3, 11);
            let fresh = run_voc(
                &train,
                &test,
                &p_small,
                &grid,
                &[row.checkpoint],
                SolverChoice::Full,
                &FitOptions::default(),
                false,
            )
            .unwrap();
            assert_eq!(fresh.rows.len(), 1);
            assert_eq!(fresh.rows[0].train_acc, row.train_acc, "checkpoint {}", row.checkpoint);
            assert_eq!(fresh.rows[0].test_acc, row.test_acc, "checkpoint {}", row.checkpoint);
        }
    }

    #[test]
    fn complexity_reaches_paper_scale() {
        // N = 50000, P = 750000 puts the final checkpoint at c = 15
        let p = plan(750_000, 50_000, 8, 0);
        let k = p.block_count();
        let c = p.features_through(k - 1) as f64 / 50_000.0;
        assert_eq!(c, 15.0);
    }

    #[test]
    fn voc_csv_is_deterministic() {
        let train = synth_classification(20, 3, 5).unwrap();
        let test = synth_classification(10, 3, 6).unwrap();
        let p = plan(6, 3, 3, 13);
        let grid = RidgeGrid::new(vec![0.1, 10.0]).unwrap();
        let run = || {
            run_voc(
                &train,
                &test,
                &p,
                &grid,
                &[1, 2],
                SolverChoice::Lowrank { nu: 8 },
                &FitOptions::default(),
                false,
            )
            .unwrap()
            .to_csv_string()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.starts_with("checkpoint,complexity,z,train_acc,test_acc,ms\n"));
        assert_eq!(a.lines().count(), 1 + 4);
    }

    #[test]
    fn threshold_checkpoint_picks_nearest_unity() {
        let rows = [0.5, 0.9, 1.3, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| VocRow {
                checkpoint: i + 1,
                complexity: c,
                z: 1.0,
                train_acc: 0.0,
                test_acc: 0.0,
                ms: 0,
            })
            .collect();
        let curve = VocCurve { rows };
        assert_eq!(curve.threshold_checkpoint(), Some(2));
    }

    #[test]
    fn bench_grid_shapes() {
        assert_eq!(bench_grid(1).unwrap().values(), &[1.0]);
        let g = bench_grid(5).unwrap();
        assert_eq!(g.len(), 5);
        assert!((g.values()[0] - 1e-3).abs() < 1e-12);
        assert!((g.values()[4] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn bench_produces_records_for_each_cell() {
        let records = run_bench(&[3, 6], &[1, 2], 16, 1, 7, 1, true).unwrap();
        assert_eq!(records.len(), 8);
        assert!(records.iter().all(|r| r.mean_s >= 0.0 && r.std_s == 0.0 && r.reps == 1));
        let engines = records.iter().filter(|r| r.method == "engine").count();
        assert_eq!(engines, 4);
    }

    #[test]
    fn baseline_wins_at_small_dimension() {
        // with d = 10 the per-shrinkage baseline solves tiny systems while
        // the engine still decomposes the full n x n Gram
        let records = run_bench(&[10], &[5], 1024, 1, 3, 1, true).unwrap();
        let engine = records.iter().find(|r| r.method == "engine").unwrap();
        let baseline = records.iter().find(|r| r.method == "baseline").unwrap();
        assert!(
            baseline.mean_s < engine.mean_s,
            "baseline {:.4}s vs engine {:.4}s",
            baseline.mean_s,
            engine.mean_s
        );
    }

    #[test]
    fn bench_csv_is_deterministic_without_timings() {
        let a = bench_csv_string(&run_bench(&[3], &[2], 12, 1, 7, 1, false).unwrap());
        let b = bench_csv_string(&run_bench(&[3], &[2], 12, 1, 7, 1, false).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("method,d,num_z,mean_s,std_s,reps,threads\n"));
    }

    #[test]
    fn engine_and_baseline_agree_on_predictions() {
        // same classes out of both timing paths, so the benchmark compares
        // equivalent work
        let ds = synth_classification(30, 5, 8).unwrap();
        let x_train = ds.features.slice_axis(Axis(0), (0..24).into());
        let x_test = ds.features.slice_axis(Axis(0), (24..30).into());
        let labels = one_hot_encode(&ds.labels[..24], 2, true).unwrap();
        let grid = RidgeGrid::new(vec![0.5, 2.0]).unwrap();

        let classes = raw_engine_classify(x_train, &ds.labels[..24], 2, x_test, &grid).unwrap();
        for (zi, &z) in grid.values().iter().enumerate() {
            let mut gram = linalg::matmul(x_train, true, x_train, false);
            gram.mapv_inplace(|v| v / 24.0);
            for i in 0..5 {
                gram[[i, i]] += z;
            }
            let mut rhs = linalg::matmul(x_train, true, labels.matrix.view(), false);
            rhs.mapv_inplace(|v| v / 24.0);
            let beta = linalg::solve_spd(gram.view(), rhs.view()).unwrap();
            let scores = linalg::matmul(x_test, false, beta.view(), false);
            let baseline_classes = classify(scores.view(), &labels.column_means);
            assert_eq!(classes[zi], baseline_classes, "z={z}");
        }
    }

    #[test]
    fn mean_gram_eigenvalue_matches_dense_trace() {
        let ds = synth_classification(10, 3, 12).unwrap();
        let p = plan(7, 3, 3, 21);
        let lam = mean_gram_eigenvalue(ds.features.view(), &p).unwrap();
        let s = crate::feature_gen::generate_full(ds.features.view(), &p).unwrap();
        let gram = linalg::matmul(s.view(), false, s.view(), true);
        let trace: f64 = (0..10).map(|i| gram[[i, i]]).sum();
        assert!((lam - trace / 100.0).abs() < 1e-12);
    }
}
