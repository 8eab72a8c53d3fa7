use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BlockId, Gradients, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for every trainable block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    ids: Vec<Option<BlockId>>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like the model's trainable blocks.
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let blocks = params.trainable_blocks();
        Self {
            config,
            step: 0,
            ids: blocks.iter().map(|(id, _)| Some(*id)).collect(),
            first: blocks.iter().map(|(_, b)| vec![0.0; b.len()]).collect(),
            second: blocks.iter().map(|(_, b)| vec![0.0; b.len()]).collect(),
        }
    }

    /// Zeroed moments for anonymous blocks of the given lengths.
    pub fn with_shapes(lengths: &[usize], config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            ids: vec![None; lengths.len()],
            first: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second: lengths.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn block_lengths(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::contract(format!(
                "adam: {} parameter blocks and {} gradient blocks for {} moment blocks",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.len() != self.first[i].len() {
                return Err(Error::contract(format!("adam: block {i} has mismatched length")));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Adam step over every trainable block of the model, physics coefficients included.
pub fn adam_step(state: &mut AdamState, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
    let grad_blocks = grads.blocks();
    let mut param_blocks = params.trainable_blocks_mut();
    if grad_blocks.len() != param_blocks.len() {
        return Err(Error::contract("adam: gradient and parameter block counts differ"));
    }
    for (i, ((pid, _), (gid, _))) in param_blocks.iter().zip(&grad_blocks).enumerate() {
        if pid != gid || state.ids.get(i).copied().flatten() != Some(*pid) {
            return Err(Error::contract(format!("adam: block {i} is {pid}, gradient is {gid}")));
        }
    }
    let mut ps: Vec<&mut [f64]> = param_blocks.iter_mut().map(|(_, b)| &mut **b).collect();
    let gs: Vec<&[f64]> = grad_blocks.iter().map(|(_, b)| *b).collect();
    state.update(&mut ps, &gs)
}
