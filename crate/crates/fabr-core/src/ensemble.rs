//! Mini-batch ensemble: partition the training rows into disjoint batches
//! after one seeded shuffle, fit an independent solver per batch with the
//! same feature plan, and average the members' prediction scores (means
//! re-added) before taking the argmax.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;

use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::feature_gen::FeaturePlan;
use crate::full_solver::{self, FitOptions, GramState, PredictMode, PredictionSet};
use crate::lowrank_solver::{self, LowrankModel};
use crate::ridge_spectral::{classify, RidgeGrid, RidgeSolution};
use crate::seeding::{self, TAG_ENSEMBLE_SHUFFLE};

/// Which solver fits each batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberSolver {
    Full,
    Lowrank { nu: usize },
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    /// Rows per batch; the last batch may be smaller.
    pub batch_size: usize,
    pub solver: MemberSolver,
    pub plan: FeaturePlan,
    pub grid: RidgeGrid,
    pub shuffle_seed: u64,
    pub fit: FitOptions,
}

#[derive(Debug, Clone)]
pub enum MemberState {
    Full(GramState),
    Lowrank(LowrankModel),
}

impl MemberState {
    fn solution(&self) -> &RidgeSolution {
        match self {
            MemberState::Full(s) => &s.solution,
            MemberState::Lowrank(m) => &m.solution,
        }
    }

    fn predict_final(&self, x_test: ArrayView2<f64>, plan: &FeaturePlan) -> Result<PredictionSet> {
        match self {
            MemberState::Full(s) => full_solver::predict(s, x_test, plan, PredictMode::Final),
            MemberState::Lowrank(m) => {
                lowrank_solver::predict_lowrank(m, x_test, plan, PredictMode::Final)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    pub members: Vec<MemberState>,
    pub config: EnsembleConfig,
    /// Row indices of each batch, ascending within a batch.
    pub batches: Vec<Vec<usize>>,
}

/// The batch partition: one seeded shuffle of `[0, n)`, contiguous chunks of
/// `batch_size`, then each chunk sorted so member rows keep the original
/// dataset order. A batch covering all rows is exactly the identity.
pub fn batch_partition(n: usize, batch_size: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::Data(format!(
            "batch size must be in [1, {n}], got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeding::stream_rng(shuffle_seed, TAG_ENSEMBLE_SHUFFLE, 0);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order
        .chunks(batch_size)
        .map(|chunk| chunk.to_vec())
        .collect();
    for batch in &mut batches {
        batch.sort_unstable();
    }
    Ok(batches)
}

/// Fits one independent solver per batch. All members share the feature
/// plan (same feature space, different data rows); label means are computed
/// per batch.
pub fn fit_ensemble(train: &LabeledDataset, config: &EnsembleConfig) -> Result<EnsembleModel> {
    let batches = batch_partition(train.len(), config.batch_size, config.shuffle_seed)?;
    let mut members = Vec::with_capacity(batches.len());
    for batch in &batches {
        let subset = train.select(batch);
        let member = match config.solver {
            MemberSolver::Full => MemberState::Full(full_solver::fit(
                &subset,
                &config.plan,
                &config.grid,
                &config.fit,
            )?),
            MemberSolver::Lowrank { nu } => MemberState::Lowrank(lowrank_solver::fit_lowrank(
                &subset,
                &config.plan,
                &config.grid,
                nu,
                &config.fit,
            )?),
        };
        members.push(member);
    }
    Ok(EnsembleModel { members, config: config.clone(), batches })
}

/// Averages member score matrices per grid point (each member's label means
/// already re-added), then classifies the averaged scores.
pub fn predict_ensemble(model: &EnsembleModel, x_test: ArrayView2<f64>) -> Result<PredictionSet> {
    if model.members.is_empty() {
        return Err(Error::Data("ensemble has no members".into()));
    }
    let grid = &model.config.grid;
    for member in &model.members {
        if member.solution().grid != *grid {
            return Err(Error::Data(
                "ensemble members disagree on the shrinkage grid".into(),
            ));
        }
    }
    let plan = &model.config.plan;
    let m = x_test.nrows();
    let num_classes = model.members[0].solution().label_means.len();
    let mut sums: Vec<Array2<f64>> = vec![Array2::zeros((m, num_classes)); grid.len()];
    for member in &model.members {
        let preds = member.predict_final(x_test, plan)?;
        for (zi, scores) in preds.final_entry().scores.iter().enumerate() {
            sums[zi] += scores;
        }
    }
    let weight = 1.0 / model.members.len() as f64;
    let zeros = vec![0.0; num_classes];
    let mut scores = Vec::with_capacity(grid.len());
    let mut classes = Vec::with_capacity(grid.len());
    for mut sum in sums {
        sum.mapv_inplace(|v| v * weight);
        classes.push(classify(sum.view(), &zeros));
        scores.push(sum);
    }
    let num_blocks = plan.block_count();
    let entry = full_solver::CheckpointPrediction {
        checkpoint: num_blocks,
        complexity: plan.total_features as f64 / model.config.batch_size as f64,
        scores,
        classes,
    };
    Ok(PredictionSet { entries: vec![entry], grid: grid.clone() })
}
