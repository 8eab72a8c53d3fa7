//! Central finite-difference check of the full training gradient.

use crate::autodiff::Mode;
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::model::{BlockId, Gradients, ModelParams};
use crate::objective::{loss_and_gradients, LossWeights};
use crate::rng::{Purpose, Rng};

/// |a − f| / max(|a|, |f|, 1e-8).
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub block: BlockId,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub worst_block: BlockId,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Train-mode analytic gradient of the full objective. Dropout masks are
/// drawn from `mask_seed`, so repeated calls see identical masks.
pub fn analytic_gradients(params: &ModelParams, batch: &SampleBatch, mask_seed: u64) -> Result<Gradients> {
    let mut rng = Rng::stream(mask_seed, Purpose::Dropout, 0);
    Ok(loss_and_gradients(params, batch, LossWeights::FULL, Mode::Train, &mut rng)?.1)
}

fn loss_at(params: &ModelParams, batch: &SampleBatch, mask_seed: u64) -> Result<f64> {
    let mut rng = Rng::stream(mask_seed, Purpose::Dropout, 0);
    Ok(loss_and_gradients(params, batch, LossWeights::FULL, Mode::Train, &mut rng)?
        .0
        .total)
}

/// Compare `analytic` with central differences of the loss at `params`.
pub fn compare_with_finite_differences(
    params: &ModelParams,
    batch: &SampleBatch,
    analytic: &Gradients,
    mask_seed: u64,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let grad_blocks = analytic.blocks();
    let ids: Vec<(BlockId, usize)> = params
        .trainable_blocks()
        .iter()
        .map(|(id, b)| (*id, b.len()))
        .collect();
    if ids.len() != grad_blocks.len() {
        return Err(Error::contract("gradient blocks do not match parameters"));
    }
    let mut blocks = Vec::with_capacity(ids.len());
    for (bi, (id, len)) in ids.into_iter().enumerate() {
        let (gid, g) = grad_blocks[bi];
        if gid != id || g.len() != len {
            return Err(Error::contract(format!("gradient block {gid} does not match {id}")));
        }
        let mut worst: f64 = 0.0;
        for k in 0..len {
            let mut probe = params.clone();
            let eval = |probe: &mut ModelParams, delta: f64| -> Result<f64> {
                probe.trainable_blocks_mut()[bi].1[k] = params.trainable_blocks()[bi].1[k] + delta;
                loss_at(probe, batch, mask_seed)
            };
            let plus = eval(&mut probe, step)?;
            let minus = eval(&mut probe, -step)?;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(g[k], numeric));
        }
        blocks.push(BlockError {
            block: id,
            max_relative_error: worst,
        });
    }
    let worst = blocks
        .iter()
        .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
        .ok_or_else(|| Error::contract("no trainable parameters"))?;
    let (worst_block, max_relative_error) = (worst.block, worst.max_relative_error);
    Ok(GradCheckReport {
        blocks,
        worst_block,
        max_relative_error,
        tolerance: tol,
        passed: max_relative_error <= tol,
    })
}

/// Check the analytic gradient of the full objective, including every physics
/// coefficient and ρ, against central differences with dropout masks frozen.
pub fn check_gradients(params: &ModelParams, batch: &SampleBatch, step: f64, tol: f64) -> Result<GradCheckReport> {
    if batch.len() < 2 {
        return Err(Error::contract("gradient check needs a batch of at least 2 samples"));
    }
    let mask_seed = params.config.seed;
    let analytic = analytic_gradients(params, batch, mask_seed)?;
    compare_with_finite_differences(params, batch, &analytic, mask_seed, step, tol)
}
