//! Deterministic random-feature blocks.
//!
//! A block is `S_k = sigma(X W_k^T)` with `W_k` drawn i.i.d. Gaussian from
//! the stream `(master_seed, TAG_FEATURE_WEIGHTS ^ k)`. Blocks are pure
//! functions of `(plan, k, X)`, so both solver passes regenerate them
//! bitwise-identically instead of keeping `S` in memory.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seeding::{self, TAG_FEATURE_WEIGHTS};

/// Elementwise activation applied to the random projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sign,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
            Activation::Sign => "sign",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            "sign" => Ok(Activation::Sign),
            other => Err(Error::Data(format!("unknown activation '{other}'"))),
        }
    }
}

/// Recipe for generating all feature blocks of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePlan {
    pub master_seed: u64,
    /// Total feature count P.
    pub total_features: usize,
    /// Width P1 of every block except a possibly ragged last one.
    pub block_width: usize,
    pub activation: Activation,
    /// Standard deviation of the Gaussian weight entries.
    pub weight_scale: f64,
    pub input_dim: usize,
}

impl FeaturePlan {
    pub fn validate(&self) -> Result<()> {
        if self.block_width == 0 {
            return Err(Error::Data("block width must be at least 1".into()));
        }
        if self.total_features < self.block_width {
            return Err(Error::Data(format!(
                "total features ({}) must be >= block width ({})",
                self.total_features, self.block_width
            )));
        }
        if !(self.weight_scale > 0.0) {
            return Err(Error::Data(format!("weight scale must be positive, got {}", self.weight_scale)));
        }
        if self.input_dim == 0 {
            return Err(Error::Data("input dimension must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of blocks, `ceil(P / P1)`; the last block may be narrower.
    pub fn block_count(&self) -> usize {
        self.total_features.div_ceil(self.block_width)
    }

    /// Width of block `k`.
    pub fn block_width_of(&self, k: usize) -> usize {
        let full = self.block_count() - 1;
        if k < full {
            self.block_width
        } else {
            self.total_features - full * self.block_width
        }
    }

    /// Features covered by blocks `0..=k`.
    pub fn features_through(&self, k: usize) -> usize {
        ((k + 1) * self.block_width).min(self.total_features)
    }
}

/// One generated block of feature realizations.
#[derive(Debug, Clone)]
pub struct FeatureBlock {
    pub index: usize,
    pub values: Array2<f64>,
}

/// Number of blocks under the plan.
pub fn block_count(plan: &FeaturePlan) -> usize {
    plan.block_count()
}

/// Generates block `k` of features for the rows of `x`.
pub fn generate_block(x: ArrayView2<f64>, plan: &FeaturePlan, k: usize) -> Result<FeatureBlock> {
    plan.validate()?;
    if k >= plan.block_count() {
        return Err(Error::Data(format!(
            "block index {k} out of range: plan has {} blocks",
            plan.block_count()
        )));
    }
    if x.ncols() != plan.input_dim {
        return Err(Error::Data(format!(
            "input has {} columns but the plan expects {}",
            x.ncols(),
            plan.input_dim
        )));
    }
    let width = plan.block_width_of(k);
    // W_k is drawn row-major: all input weights of one feature, then the next.
    let mut w = vec![0.0f64; width * plan.input_dim];
    let mut rng = seeding::stream_rng(plan.master_seed, TAG_FEATURE_WEIGHTS, k as u64);
    seeding::fill_gaussian(&mut rng, plan.weight_scale, &mut w);
    let weights = Array2::from_shape_vec((width, plan.input_dim), w).expect("shape");
    let mut values = linalg::matmul(x, false, weights.view(), true);
    values.mapv_inplace(|v| plan.activation.apply(v));
    Ok(FeatureBlock { index: k, values })
}

/// Generates all blocks and concatenates them column-wise into `N x P`.
pub fn generate_full(x: ArrayView2<f64>, plan: &FeaturePlan) -> Result<Array2<f64>> {
    plan.validate()?;
    let n = x.nrows();
    let mut out = Array2::<f64>::zeros((n, plan.total_features));
    let mut offset = 0;
    for k in 0..plan.block_count() {
        let block = generate_block(x, plan, k)?;
        let width = block.values.ncols();
        out.slice_mut(ndarray::s![.., offset..offset + width])
            .assign(&block.values);
        offset += width;
    }
    Ok(out)
}

/// `S_k S_k^T`, the block's contribution to the Gram matrix.
pub fn block_gram(block: &FeatureBlock) -> Array2<f64> {
    let n = block.values.nrows();
    let mut gram = Array2::<f64>::zeros((n, n));
    linalg::syrk_acc(&mut gram, block.values.view());
    gram
}
