//! Rank-capped recursive spectral sketch of the Gram matrix.
//!
//! Instead of the `N x N` matrix `Psi_k = sum_j S_j S_j^T`, this path keeps
//! only an orthonormal pair `(V_k, d_k)` of rank at most `nu`, updated one
//! block at a time:
//!
//! 1. orthogonalize the incoming block against `V` (applied twice),
//! 2. thin-orthonormalize the remainder by eigendecomposing the small
//!    `P1 x P1` matrix `S~^T S~` and lifting its eigenvectors,
//! 3. eigendecompose the projected `(r + r') x (r + r')` matrix
//!    `Vhat^T (V diag(d) V^T + S S^T) Vhat`,
//! 4. keep the top `min(nu, r + r')` pairs and lift them back by `Vhat`.
//!
//! The largest eigenvalue discarded at each fold accumulates into a running
//! bound: the sketch error satisfies `||Psi_k - Psihat_k|| <= bound` and the
//! resolvent error is at most `bound / z^2`, both in the unnormalized Gram
//! scale. Eigenvalues are divided by `n` only when solving.
//!
//! No step allocates an `N x N` buffer; the working set is `O(N (nu + P1))`.

use ndarray::{Array2, ArrayView2};

use crate::data_io::{one_hot_encode, EncodedLabels, LabeledDataset};
use crate::error::{Error, Result};
use crate::feature_gen::{generate_block, FeatureBlock, FeaturePlan};
use crate::full_solver::{predict_from_parts, validate_checkpoints, FitOptions, PredictMode, PredictionSet};
use crate::linalg;
use crate::ridge_spectral::{multi_z_apply, sym_eig, EigPairs, ResolventMode, RidgeGrid, RidgeSolution};

/// Directions with `delta <= EPS_RANK * delta_max` are dropped before the
/// `delta^{-1/2}` rescale in the thin orthonormalization.
pub const EPS_RANK: f64 = 1e-10;

/// Rank-capped approximation `Psihat = V diag(d) V^T` of the running Gram,
/// plus the telescoped bound on what the cap has discarded.
#[derive(Debug, Clone)]
pub struct SketchState {
    /// `N x r`, orthonormal columns, `r <= nu`.
    pub v: Array2<f64>,
    /// Length `r`, nonincreasing, unnormalized Gram scale, `>= 0`.
    pub d: Vec<f64>,
    pub blocks_folded: usize,
    /// Sum over folds of the largest discarded eigenvalue, i.e. of
    /// `lambda_{nu+1}(Psi~_i)`.
    pub bound_accumulator: f64,
    /// Stored intermediate solutions, ascending in block count.
    pub checkpoints: Vec<(usize, RidgeSolution)>,
}

/// Tracked error-bound bookkeeping exported for reporting.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub blocks_folded: usize,
    /// Upper bound on `||Psi_k - Psihat_k||_2` (unnormalized scale).
    pub discarded_sum: f64,
    /// Per grid point `(z, discarded_sum / z^2)`: the bound on the resolvent
    /// difference `||(Psi + zI)^{-1} - (Psihat + zI)^{-1}||_2` at that `z`,
    /// again in the unnormalized scale.
    pub resolvent_bounds: Vec<(f64, f64)>,
}

struct Lift {
    /// Orthonormal columns spanning the input's column space.
    w: Array2<f64>,
    /// Eigenvalues of `s^T s` kept by the rank cut, matching `w`'s columns.
    delta: Vec<f64>,
    /// All clipped eigenvalues of `s^T s`, nonincreasing.
    all_values: Vec<f64>,
}

/// Thin orthonormalization: eigendecompose the small `w x w` matrix
/// `s^T s = W delta W^T` and lift, `W~ = s W delta^{-1/2}`, dropping
/// near-null directions instead of dividing by their vanishing scale.
///
/// `floor_scale` anchors the rank cut: directions with
/// `delta <= EPS_RANK * max(delta_max, floor_scale)` are dropped. Folding
/// passes the pre-projection block energy here, so a block that lies in the
/// existing span leaves no residual directions at all (its residual is pure
/// roundoff, large only relative to itself).
fn thin_lift(s: ArrayView2<f64>, floor_scale: f64) -> Result<Lift> {
    let gamma = linalg::matmul(s, true, s, false);
    let eig = sym_eig(gamma.view())?;
    let all_values = eig.values.clone();
    let reference = eig.values.first().copied().unwrap_or(0.0).max(floor_scale);
    let keep = eig
        .values
        .iter()
        .take_while(|&&v| v > EPS_RANK * reference)
        .count();
    let delta = eig.values[..keep].to_vec();
    let mut scaled = eig.vectors.slice(ndarray::s![.., ..keep]).to_owned();
    for (j, &dj) in delta.iter().enumerate() {
        let inv_sqrt = 1.0 / dj.sqrt();
        scaled.column_mut(j).mapv_inplace(|v| v * inv_sqrt);
    }
    let w = linalg::matmul(s, false, scaled.view(), false);
    Ok(Lift { w, delta, all_values })
}

/// Exposes the thin orthonormalization for property checks: returns the orthonormal
/// basis of the input's column space and the eigenvalues of `s^T s`.
pub fn thin_orthonormalize(s: ArrayView2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let lift = thin_lift(s, 0.0)?;
    Ok((lift.w, lift.delta))
}

/// Builds the sketch from the first block by eigendecomposing the
/// `P1 x P1` matrix `S_0^T S_0`, never the `N x N` Gram.
pub fn init_state(s0: &FeatureBlock, nu: usize) -> Result<SketchState> {
    if nu == 0 {
        return Err(Error::Data("rank cap nu must be at least 1".into()));
    }
    let n = s0.values.nrows();
    let lift = thin_lift(s0.values.view(), 0.0)?;
    let keep = lift.delta.len().min(nu);
    let v = lift.w.slice(ndarray::s![.., ..keep]).to_owned();
    let d = lift.delta[..keep].to_vec();
    let discarded = lift.all_values.get(keep).copied().unwrap_or(0.0).max(0.0);
    debug_assert_eq!(v.nrows(), n);
    Ok(SketchState {
        v,
        d,
        blocks_folded: 1,
        bound_accumulator: discarded,
        checkpoints: Vec::new(),
    })
}

/// Folds one more block into the sketch.
pub fn fold_block(state: &mut SketchState, block: &FeatureBlock, nu: usize) -> Result<()> {
    if nu == 0 {
        return Err(Error::Data("rank cap nu must be at least 1".into()));
    }
    let n = state.v.nrows();
    if block.values.nrows() != n {
        return Err(Error::Data(format!(
            "block has {} rows but the sketch was built on {n}",
            block.values.nrows()
        )));
    }
    let r = state.d.len();
    let s = &block.values;

    // Orthogonalize against V, twice.
    let mut s_perp = s.clone();
    for _ in 0..2 {
        let coeff = linalg::matmul(state.v.view(), true, s_perp.view(), false);
        let proj = linalg::matmul(state.v.view(), false, coeff.view(), false);
        s_perp -= &proj;
    }

    let block_energy = s.iter().map(|v| v * v).sum::<f64>();
    let lift = thin_lift(s_perp.view(), block_energy)?;
    let w_new = lift.w;
    let r_new = w_new.ncols();

    // Vhat = [V, W~]
    let mut vhat = Array2::<f64>::zeros((n, r + r_new));
    vhat.slice_mut(ndarray::s![.., ..r]).assign(&state.v);
    vhat.slice_mut(ndarray::s![.., r..]).assign(&w_new);

    // Projected update: Psi_* = Vhat^T (V diag(d) V^T + S S^T) Vhat.
    // The first term is diag(d) padded with zeros because Vhat extends V.
    let s_proj = linalg::matmul(vhat.view(), true, s.view(), false);
    let mut psi_star = Array2::<f64>::zeros((r + r_new, r + r_new));
    for (i, &di) in state.d.iter().enumerate() {
        psi_star[[i, i]] = di;
    }
    linalg::syrk_acc(&mut psi_star, s_proj.view());

    let eig = sym_eig(psi_star.view())?;
    let keep = eig.rank().min(nu);
    let discarded = eig.values.get(keep).copied().unwrap_or(0.0).max(0.0);
    let u = eig.vectors.slice(ndarray::s![.., ..keep]);
    state.v = linalg::matmul(vhat.view(), false, u, false);
    state.d = eig.values[..keep].to_vec();
    state.blocks_folded += 1;
    state.bound_accumulator += discarded;
    Ok(())
}

/// Solves the grid from the sketch: annihilation-mode resolvent on
/// `(V, d / n)`. Everything below the rank cap simply does not contribute.
pub fn solve_checkpoint(
    state: &SketchState,
    labels: &EncodedLabels,
    grid: &RidgeGrid,
    n: usize,
) -> Result<RidgeSolution> {
    let eig = EigPairs {
        vectors: state.v.clone(),
        values: state.d.iter().map(|&d| d / n as f64).collect(),
    };
    let q = multi_z_apply(&eig, labels.matrix.view(), grid, n, ResolventMode::Annihilate)?;
    Ok(RidgeSolution {
        q,
        grid: grid.clone(),
        label_means: labels.column_means.clone(),
        n_train: n,
        checkpoint: Some(state.blocks_folded),
    })
}

/// The tracked error bounds for the current sketch.
pub fn bound_report(state: &SketchState, grid: &RidgeGrid) -> BoundReport {
    let sum = state.bound_accumulator;
    BoundReport {
        blocks_folded: state.blocks_folded,
        discarded_sum: sum,
        resolvent_bounds: grid.values().iter().map(|&z| (z, sum / (z * z))).collect(),
    }
}

impl SketchState {
    /// `V diag(d) V^T`, the sketch's dense reconstruction (testing and
    /// diagnostics; allocates `N x N`).
    pub fn reconstruct_gram(&self) -> Array2<f64> {
        let mut scaled = self.v.clone();
        for (j, &dj) in self.d.iter().enumerate() {
            scaled.column_mut(j).mapv_inplace(|v| v * dj);
        }
        linalg::matmul(scaled.view(), false, self.v.view(), true)
    }

    pub fn rank(&self) -> usize {
        self.d.len()
    }
}

/// Fitted rank-capped model: sketch, final solution, and the plan needed to
/// regenerate blocks at prediction time.
#[derive(Debug, Clone)]
pub struct LowrankModel {
    pub state: SketchState,
    pub solution: RidgeSolution,
    /// Wall-clock milliseconds from the start of the fit to the moment each
    /// solved checkpoint (including the final one) was stored.
    pub checkpoint_elapsed_ms: Vec<(usize, u64)>,
    pub plan: FeaturePlan,
    pub nu: usize,
    pub n_train: usize,
    x_train: Array2<f64>,
}

impl LowrankModel {
    pub fn lambda_max(&self) -> f64 {
        self.state.d.first().copied().unwrap_or(0.0) / self.n_train as f64
    }
}

/// First pass of the sketch path: fold every block, solving the grid at each
/// requested checkpoint and at the end.
pub fn fit_lowrank(
    train: &LabeledDataset,
    plan: &FeaturePlan,
    grid: &RidgeGrid,
    nu: usize,
    opts: &FitOptions,
) -> Result<LowrankModel> {
    plan.validate()?;
    let n = train.len();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty sample".into()));
    }
    let num_blocks = plan.block_count();
    let checkpoints = validate_checkpoints(&opts.voc_checkpoints, num_blocks)?;
    let encoded = one_hot_encode(&train.labels, train.num_classes, opts.demean)?;

    let started = std::time::Instant::now();
    let mut state: Option<SketchState> = None;
    let mut elapsed = Vec::new();
    for k in 0..num_blocks {
        let block = generate_block(train.features.view(), plan, k)?;
        match state.as_mut() {
            None => state = Some(init_state(&block, nu)?),
            Some(s) => fold_block(s, &block, nu)?,
        }
        let folded = k + 1;
        if checkpoints.contains(&folded) && folded < num_blocks {
            let s = state.as_mut().unwrap();
            let sol = solve_checkpoint(s, &encoded, grid, n)?;
            elapsed.push((folded, started.elapsed().as_millis() as u64));
            s.checkpoints.push((folded, sol));
        }
    }
    let mut state = state.expect("at least one block");
    let mut solution = solve_checkpoint(&state, &encoded, grid, n)?;
    elapsed.push((num_blocks, started.elapsed().as_millis() as u64));
    if checkpoints.contains(&num_blocks) {
        state.checkpoints.push((num_blocks, solution.clone()));
    }
    solution.checkpoint = None;
    Ok(LowrankModel {
        state,
        solution,
        checkpoint_elapsed_ms: elapsed,
        plan: plan.clone(),
        nu,
        n_train: n,
        x_train: train.features.clone(),
    })
}

/// Predictions from the sketched solutions; same second-pass structure as
/// the exact solver, including the cross-Gram checkpoint scheme.
pub fn predict_lowrank(
    model: &LowrankModel,
    x_test: ArrayView2<f64>,
    plan: &FeaturePlan,
    mode: PredictMode,
) -> Result<PredictionSet> {
    if plan != &model.plan {
        return Err(Error::Data(
            "prediction plan differs from the fitting plan (seed, widths, activation and scale must match)".into(),
        ));
    }
    predict_from_parts(
        model.x_train.view(),
        x_test,
        plan,
        &model.state.checkpoints,
        &model.solution,
        mode,
    )
}
