//! Exact blocked solver: accumulate the `N x N` Gram matrix one feature
//! block at a time, eigendecompose it once, and solve the whole shrinkage
//! grid from that single decomposition. A second pass over regenerated
//! blocks recovers predictions without ever storing the feature matrix.

use ndarray::{Array2, ArrayView2};

use crate::data_io::{one_hot_encode, LabeledDataset};
use crate::error::{Error, Result};
use crate::feature_gen::{generate_block, FeaturePlan};
use crate::linalg;
use crate::ridge_spectral::{
    classify, multi_z_apply, sym_eig, EigPairs, ResolventMode, RidgeGrid, RidgeSolution,
    EIG_CLIP_REL,
};

/// Optional fitting knobs shared by both solver paths.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Block counts (1-based) at which to store intermediate solutions for
    /// expanding-complexity evaluation.
    pub voc_checkpoints: Vec<usize>,
    /// Regress demeaned one-hot targets and re-add the means at prediction.
    pub demean: bool,
    /// Treatment of the spectrum outside the retained span.
    pub mode: ResolventMode,
    /// Ceiling on the `N x N` Gram allocation (bytes).
    pub mem_budget: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            voc_checkpoints: Vec::new(),
            demean: true,
            mode: ResolventMode::Exact,
            mem_budget: crate::DEFAULT_MEM_BUDGET_BYTES,
        }
    }
}

/// Which predictions to produce from a fitted state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Only the final (all blocks folded) solution.
    Final,
    /// Every stored checkpoint plus the final solution, from one pass.
    AllCheckpoints,
}

/// Scores and classes per stored checkpoint and grid point.
#[derive(Debug, Clone)]
pub struct CheckpointPrediction {
    /// Blocks folded when the underlying solution was taken.
    pub checkpoint: usize,
    /// Complexity `c = (features folded) / N`.
    pub complexity: f64,
    /// Per grid point: `M x K` scores with label means already re-added.
    pub scores: Vec<Array2<f64>>,
    /// Per grid point: argmax classes.
    pub classes: Vec<Vec<u32>>,
}

#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub entries: Vec<CheckpointPrediction>,
    pub grid: RidgeGrid,
}

impl PredictionSet {
    /// The entry for the fully folded model.
    pub fn final_entry(&self) -> &CheckpointPrediction {
        self.entries.last().expect("prediction set is never empty")
    }
}

/// Fitted state of the exact path: the accumulated Gram matrix, its
/// decomposition, and the multi-shrinkage solutions.
#[derive(Debug, Clone)]
pub struct GramState {
    /// Running `sum_k S_k S_k^T`, kept fully symmetric.
    pub psi: Array2<f64>,
    pub blocks_folded: usize,
    /// Decomposition of `psi / N`, truncated to the numerically nonzero
    /// spectrum.
    pub eig: EigPairs,
    /// Stored intermediate solutions, ascending in block count.
    pub checkpoints: Vec<(usize, RidgeSolution)>,
    /// Solution with all blocks folded.
    pub solution: RidgeSolution,
    /// Wall-clock milliseconds from the start of the fit to the moment each
    /// solved checkpoint (including the final one) was stored.
    pub checkpoint_elapsed_ms: Vec<(usize, u64)>,
    pub plan: FeaturePlan,
    pub mode: ResolventMode,
    pub n_train: usize,
    x_train: Array2<f64>,
}

fn solve_from_psi(
    psi: &Array2<f64>,
    n: usize,
    y: ArrayView2<f64>,
    grid: &RidgeGrid,
    mode: ResolventMode,
    label_means: &[f64],
    checkpoint: Option<usize>,
) -> Result<(EigPairs, RidgeSolution)> {
    let mut scaled = psi.clone();
    scaled.mapv_inplace(|v| v / n as f64);
    let eig = sym_eig(scaled.view())?.truncate_null(EIG_CLIP_REL);
    let q = multi_z_apply(&eig, y, grid, n, mode)?;
    let sol = RidgeSolution {
        q,
        grid: grid.clone(),
        label_means: label_means.to_vec(),
        n_train: n,
        checkpoint,
    };
    Ok((eig, sol))
}

pub(crate) fn validate_checkpoints(checkpoints: &[usize], num_blocks: usize) -> Result<Vec<usize>> {
    let mut sorted = checkpoints.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&c| c == 0 || c > num_blocks) {
        return Err(Error::Data(format!(
            "checkpoint {bad} out of range: block counts go from 1 to {num_blocks}"
        )));
    }
    Ok(sorted)
}

/// First pass: fold every feature block into the Gram matrix, solving the
/// grid at each requested checkpoint and once more at the end.
pub fn fit(
    train: &LabeledDataset,
    plan: &FeaturePlan,
    grid: &RidgeGrid,
    opts: &FitOptions,
) -> Result<GramState> {
    plan.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty sample".into()));
    }
    let required = (n as u64) * (n as u64) * 8;
    if required > opts.mem_budget {
        return Err(Error::Memory { n, required, budget: opts.mem_budget });
    }
    let num_blocks = plan.block_count();
    let checkpoints = validate_checkpoints(&opts.voc_checkpoints, num_blocks)?;
    let encoded = one_hot_encode(&train.labels, train.num_classes, opts.demean)?;

    let started = std::time::Instant::now();
    let mut psi = Array2::<f64>::zeros((n, n));
    let mut stored = Vec::new();
    let mut elapsed = Vec::new();
    let mut final_parts: Option<(EigPairs, RidgeSolution)> = None;
    for k in 0..num_blocks {
        let block = generate_block(train.features.view(), plan, k)?;
        linalg::syrk_acc(&mut psi, block.values.view());
        let folded = k + 1;
        let is_final = folded == num_blocks;
        if checkpoints.contains(&folded) || is_final {
            let (eig, sol) = solve_from_psi(
                &psi,
                n,
                encoded.matrix.view(),
                grid,
                opts.mode,
                &encoded.column_means,
                Some(folded),
            )?;
            elapsed.push((folded, started.elapsed().as_millis() as u64));
            if checkpoints.contains(&folded) {
                stored.push((folded, sol.clone()));
            }
            if is_final {
                let mut final_sol = sol;
                final_sol.checkpoint = None;
                final_parts = Some((eig, final_sol));
            }
        }
    }
    let (eig, solution) = final_parts.expect("at least one block");
    Ok(GramState {
        psi,
        blocks_folded: num_blocks,
        eig,
        checkpoints: stored,
        solution,
        checkpoint_elapsed_ms: elapsed,
        plan: plan.clone(),
        mode: opts.mode,
        n_train: n,
        x_train: train.features.clone(),
    })
}

/// Largest eigenvalue of `psi / N`; the natural scale for shrinkage grids.
impl GramState {
    pub fn lambda_max(&self) -> f64 {
        self.eig.values.first().copied().unwrap_or(0.0)
    }
}

fn unstack_entry(
    checkpoint: usize,
    plan: &FeaturePlan,
    n_train: usize,
    stacked: &Array2<f64>,
    grid: &RidgeGrid,
    label_means: &[f64],
) -> CheckpointPrediction {
    let k = label_means.len();
    let m = stacked.nrows();
    let mut scores = Vec::with_capacity(grid.len());
    let mut classes = Vec::with_capacity(grid.len());
    for zi in 0..grid.len() {
        let mut s = stacked.slice(ndarray::s![.., zi * k..(zi + 1) * k]).to_owned();
        for mut row in s.rows_mut() {
            for (j, mean) in label_means.iter().enumerate() {
                row[j] += mean;
            }
        }
        let cls = classify(s.view(), &vec![0.0; k]);
        debug_assert_eq!(cls.len(), m);
        scores.push(s);
        classes.push(cls);
    }
    CheckpointPrediction {
        checkpoint,
        complexity: plan.features_through(checkpoint - 1) as f64 / n_train as f64,
        scores,
        classes,
    }
}

/// Second pass shared by both solvers: regenerate blocks and accumulate
/// predictions.
///
/// `Final` accumulates `yhat += S_k_test (S_k^T Q)` per block and never forms
/// a test-by-train matrix. `AllCheckpoints` additionally maintains the
/// running cross-Gram `T_k = sum_{j<=k} S_j_test S_j^T`, so every stored
/// checkpoint costs one `M x N x K|z|` product instead of regenerating its
/// prefix of blocks.
pub fn predict_from_parts(
    x_train: ArrayView2<f64>,
    x_test: ArrayView2<f64>,
    plan: &FeaturePlan,
    checkpoints: &[(usize, RidgeSolution)],
    final_sol: &RidgeSolution,
    mode: PredictMode,
) -> Result<PredictionSet> {
    if x_test.ncols() != plan.input_dim {
        return Err(Error::Data(format!(
            "test input has {} columns but the plan expects {}",
            x_test.ncols(),
            plan.input_dim
        )));
    }
    let grid = &final_sol.grid;
    let means = &final_sol.label_means;
    let m = x_test.nrows();
    let n = final_sol.n_train;
    let num_blocks = plan.block_count();

    match mode {
        PredictMode::Final => {
            let qstack = final_sol.stacked_q();
            let mut yhat = Array2::<f64>::zeros((m, qstack.ncols()));
            for k in 0..num_blocks {
                let s_train = generate_block(x_train, plan, k)?;
                let s_test = generate_block(x_test, plan, k)?;
                let beta = linalg::matmul(s_train.values.view(), true, qstack.view(), false);
                linalg::gemm_acc(&mut yhat, 1.0, s_test.values.view(), false, beta.view(), false, 1.0);
            }
            let entry = unstack_entry(num_blocks, plan, n, &yhat, grid, means);
            Ok(PredictionSet { entries: vec![entry], grid: grid.clone() })
        }
        PredictMode::AllCheckpoints => {
            let mut cross = Array2::<f64>::zeros((m, n));
            let mut entries = Vec::new();
            for k in 0..num_blocks {
                let s_train = generate_block(x_train, plan, k)?;
                let s_test = generate_block(x_test, plan, k)?;
                linalg::gemm_acc(
                    &mut cross,
                    1.0,
                    s_test.values.view(),
                    false,
                    s_train.values.view(),
                    true,
                    1.0,
                );
                let folded = k + 1;
                let sol = if folded == num_blocks {
                    Some(final_sol)
                } else {
                    checkpoints.iter().find(|(c, _)| *c == folded).map(|(_, sol)| sol)
                };
                if let Some(sol) = sol {
                    let qstack = sol.stacked_q();
                    let yhat = linalg::matmul(cross.view(), false, qstack.view(), false);
                    entries.push(unstack_entry(folded, plan, n, &yhat, grid, means));
                    debug_assert_eq!(sol.label_means, *means);
                }
            }
            debug_assert!(entries.windows(2).all(|w| w[0].complexity < w[1].complexity));
            Ok(PredictionSet { entries, grid: grid.clone() })
        }
    }
}

/// Predictions from a fitted exact state; the plan must match the one used
/// to fit (seed equality enforced).
pub fn predict(
    state: &GramState,
    x_test: ArrayView2<f64>,
    plan: &FeaturePlan,
    mode: PredictMode,
) -> Result<PredictionSet> {
    if plan != &state.plan {
        return Err(Error::Data(
            "prediction plan differs from the fitting plan (seed, widths, activation and scale must match)".into(),
        ));
    }
    predict_from_parts(
        state.x_train.view(),
        x_test,
        plan,
        &state.checkpoints,
        &state.solution,
        mode,
    )
}

/// Convenience composition of [`fit`] and [`predict`].
pub fn fit_predict_scores(
    train: &LabeledDataset,
    x_test: ArrayView2<f64>,
    plan: &FeaturePlan,
    grid: &RidgeGrid,
    opts: &FitOptions,
    mode: PredictMode,
) -> Result<(GramState, PredictionSet)> {
    let state = fit(train, plan, grid, opts)?;
    let predictions = predict(&state, x_test, plan, mode)?;
    Ok((state, predictions))
}
