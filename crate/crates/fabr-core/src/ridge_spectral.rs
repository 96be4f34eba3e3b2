//! Shared spectral machinery for the ridge solvers.
//!
//! One symmetric eigendecomposition of the (scaled) Gram matrix serves an
//! entire grid of shrinkages: `Q(z) = V (D + zI)^{-1} V^T Y / n` costs
//! `O(N r K)` per additional `z`, with no further factorizations.
//!
//! Rank-deficient spectra support two modes. `Exact` keeps the implicit
//! zero-eigenvalue complement, contributing `(Y - V V^T Y) / (z n)`, which
//! reproduces the direct primal solution. `Annihilate` drops the complement
//! entirely, which is the semantics of the rank-capped sketch solver.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::feature_gen::FeatureBlock;
use crate::linalg;

/// Eigenvalues below `EIG_CLIP_REL * lambda_max` in magnitude are treated as
/// zero; anything more negative is a numeric failure.
pub const EIG_CLIP_REL: f64 = 1e-10;

/// Orthonormal eigenpairs, eigenvalues nonincreasing and clipped at zero.
#[derive(Debug, Clone)]
pub struct EigPairs {
    /// `N x r`, orthonormal columns.
    pub vectors: Array2<f64>,
    /// Length `r`, sorted nonincreasing, all `>= 0`.
    pub values: Vec<f64>,
}

impl EigPairs {
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn rank(&self) -> usize {
        self.values.len()
    }

    /// Drops eigenpairs with values `<= rel_tol * lambda_max`, leaving only
    /// the numerically nonzero spectrum.
    pub fn truncate_null(&self, rel_tol: f64) -> EigPairs {
        let lambda_max = self.values.first().copied().unwrap_or(0.0);
        let keep = self.values.iter().take_while(|&&v| v > rel_tol * lambda_max).count();
        EigPairs {
            vectors: self.vectors.slice(ndarray::s![.., ..keep]).to_owned(),
            values: self.values[..keep].to_vec(),
        }
    }
}

/// Full eigendecomposition of a symmetric matrix.
///
/// The input is symmetrized as `(A + A^T) / 2` first. Roundoff-negative
/// eigenvalues inside `EIG_CLIP_REL * lambda_max` are clipped to zero; more
/// negative values abort with a numeric error.
pub fn sym_eig(a: ArrayView2<f64>) -> Result<EigPairs> {
    if a.nrows() != a.ncols() {
        return Err(Error::Data(format!("matrix is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    let sym = 0.5 * (&a + &a.t());
    let (mut values, vectors) = linalg::sym_eig_desc(sym.view())?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "eigendecomposition produced non-finite eigenvalues (n={})",
            a.nrows()
        )));
    }
    let lambda_max = values.first().copied().unwrap_or(0.0).max(0.0);
    let floor = -EIG_CLIP_REL * lambda_max;
    for v in values.iter_mut() {
        if *v < floor {
            return Err(Error::Numeric(format!(
                "eigenvalue {v:.6e} below the clipping floor {floor:.6e} (matrix not PSD)"
            )));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(EigPairs { vectors, values })
}

/// Strictly positive, strictly increasing shrinkage grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeGrid {
    values: Vec<f64>,
}

impl RidgeGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("shrinkage grid is empty".into()));
        }
        if values.iter().any(|&z| !(z > 0.0) || !z.is_finite()) {
            return Err(Error::Data("shrinkage values must be positive and finite".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("shrinkage grid must be strictly increasing with no duplicates".into()));
        }
        Ok(RidgeGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How a rank-deficient spectrum treats its orthogonal complement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolventMode {
    /// Keep the implicit zero eigenvalues: their resolvent weight is `1/z`.
    Exact,
    /// Drop everything outside the retained span.
    Annihilate,
}

/// Dual ridge weights for every grid point, plus the label-demeaning record.
#[derive(Debug, Clone)]
pub struct RidgeSolution {
    /// `q[i]` is the `N x K` dual weight matrix for `grid.values()[i]`.
    pub q: Vec<Array2<f64>>,
    pub grid: RidgeGrid,
    pub label_means: Vec<f64>,
    pub n_train: usize,
    /// Number of blocks folded when this solution was taken; `None` for the
    /// final state.
    pub checkpoint: Option<usize>,
}

impl RidgeSolution {
    /// All dual weights side by side: `N x (K * |grid|)`, grid-major.
    pub fn stacked_q(&self) -> Array2<f64> {
        let n = self.q.first().map_or(0, |q| q.nrows());
        let k = self.q.first().map_or(0, |q| q.ncols());
        let mut out = Array2::<f64>::zeros((n, k * self.q.len()));
        for (zi, q) in self.q.iter().enumerate() {
            out.slice_mut(ndarray::s![.., zi * k..(zi + 1) * k]).assign(q);
        }
        out
    }
}

/// The annihilation-mode resolvent applied to already-projected labels
/// `vty = V^T Y`: per grid point, `V (D + zI)^{-1} vty / n`.
///
/// This is the reconstruction path for persisted rank-capped models, and the
/// in-memory solve goes through the same arithmetic.
pub fn multi_z_from_projection(
    eig: &EigPairs,
    vty: ArrayView2<f64>,
    grid: &RidgeGrid,
    n: usize,
) -> Result<Vec<Array2<f64>>> {
    if vty.nrows() != eig.rank() {
        return Err(Error::Data(format!(
            "projected labels have {} rows but the decomposition has rank {}",
            vty.nrows(),
            eig.rank()
        )));
    }
    if n == 0 {
        return Err(Error::Data("n must be positive".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut out = Vec::with_capacity(grid.len());
    for &z in grid.values() {
        let mut scaled = vty.to_owned();
        for (i, mut row) in scaled.rows_mut().into_iter().enumerate() {
            let w = 1.0 / (eig.values[i] + z);
            row.mapv_inplace(|v| v * w);
        }
        let mut q = linalg::matmul(eig.vectors.view(), false, scaled.view(), false);
        q.mapv_inplace(|v| v * inv_n);
        out.push(q);
    }
    Ok(out)
}

/// Applies `(D + zI)^{-1}` across the whole grid using one decomposition.
///
/// `eig` must decompose the Gram matrix already divided by `n`; the result is
/// further divided by `n`, giving `Q(z) = V (D + zI)^{-1} V^T Y / n` plus, in
/// `Exact` mode, the complement term `(Y - V V^T Y) / (z n)`.
pub fn multi_z_apply(
    eig: &EigPairs,
    y: ArrayView2<f64>,
    grid: &RidgeGrid,
    n: usize,
    mode: ResolventMode,
) -> Result<Vec<Array2<f64>>> {
    if y.nrows() != eig.dim() {
        return Err(Error::Data(format!(
            "labels have {} rows but the decomposition is {}-dimensional",
            y.nrows(),
            eig.dim()
        )));
    }
    if n == 0 {
        return Err(Error::Data("n must be positive".into()));
    }
    let inv_n = 1.0 / n as f64;
    let vty = linalg::matmul(eig.vectors.view(), true, y, false);
    let mut out = multi_z_from_projection(eig, vty.view(), grid, n)?;
    if mode == ResolventMode::Exact {
        let in_span = linalg::matmul(eig.vectors.view(), false, vty.view(), false);
        let resid = &y - &in_span;
        for (q, &z) in out.iter_mut().zip(grid.values()) {
            let w = inv_n / z;
            q.zip_mut_with(&resid, |qv, rv| *qv += rv * w);
        }
    }
    Ok(out)
}

/// Direct primal ridge coefficients `(S^T S / n + zI)^{-1} S^T Y / n` per
/// grid point. Forms the `P x P` Gram, so only suitable when `P` is small;
/// this is the independent oracle route for the dual solvers.
pub fn primal_direct_beta(
    s: ArrayView2<f64>,
    y: ArrayView2<f64>,
    grid: &RidgeGrid,
) -> Result<Vec<Array2<f64>>> {
    let n = s.nrows();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty sample".into()));
    }
    if y.nrows() != n {
        return Err(Error::Data(format!("feature rows ({n}) and label rows ({}) disagree", y.nrows())));
    }
    let p = s.ncols();
    let inv_n = 1.0 / n as f64;
    let mut gram = linalg::matmul(s, true, s, false);
    gram.mapv_inplace(|v| v * inv_n);
    let mut rhs = linalg::matmul(s, true, y, false);
    rhs.mapv_inplace(|v| v * inv_n);
    let mut out = Vec::with_capacity(grid.len());
    for &z in grid.values() {
        let mut a = gram.clone();
        for i in 0..p {
            a[[i, i]] += z;
        }
        out.push(linalg::solve_spd(a.view(), rhs.view())?);
    }
    Ok(out)
}

/// Per-block primal coefficients `beta_k(z) = S_k^T Q(z)` recovered from the
/// dual weights. Stacking over all blocks reproduces the primal solution.
pub fn dual_to_beta(block: &FeatureBlock, sol: &RidgeSolution) -> Result<Vec<Array2<f64>>> {
    if block.values.nrows() != sol.n_train {
        return Err(Error::Data(format!(
            "block has {} rows but the solution was fit on {}",
            block.values.nrows(),
            sol.n_train
        )));
    }
    Ok(sol
        .q
        .iter()
        .map(|q| linalg::matmul(block.values.view(), true, q.view(), false))
        .collect())
}

/// Argmax classifier over `scores[m, k] + label_means[k]`; ties break toward
/// the smallest class index.
pub fn classify(scores: ArrayView2<f64>, label_means: &[f64]) -> Vec<u32> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_score = f64::NEG_INFINITY;
            for (k, &s) in row.iter().enumerate() {
                let adjusted = s + label_means.get(k).copied().unwrap_or(0.0);
                if adjusted > best_score {
                    best_score = adjusted;
                    best = k;
                }
            }
            best as u32
        })
        .collect()
}
