use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    /// Learning-rate factor for the pooler and projection heads.
    pub head_lr_multiplier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 2e-4,
            head_lr_multiplier: 10.0,
            epochs: 10,
            batch_size: 16,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.base_lr >= 0.0
            && self.head_lr_multiplier > 0.0
            && self.epochs > 0
            && self.batch_size >= 2
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

pub fn is_head_param(name: &str) -> bool {
    name.starts_with("pooler.") || name.starts_with("proj_")
}

/// AdamW with decoupled weight decay and a cosine schedule.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimConfig,
    total_steps: usize,
    step: usize,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: OptimConfig, total_steps: usize) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            total_steps: total_steps.max(1),
            step: 0,
            moments: HashMap::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Base learning rate for the next update.
    pub fn current_lr(&self) -> f64 {
        let progress = (self.step as f64 / self.total_steps as f64).min(1.0);
        self.cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
    }

    pub fn apply<P: ParamSet + ?Sized>(&mut self, params: &mut P, grads: &Gradients) {
        let lr = self.current_lr();
        let t = (self.step + 1) as i32;
        let cfg = &self.cfg;
        let (bc1, bc2) = (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t));
        let moments = &mut self.moments;
        params.for_each_param_mut(&mut |name, tensor| {
            let Some(g) = grads.param(name) else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            let group_lr = if is_head_param(name) { lr * cfg.head_lr_multiplier } else { lr };
            let decay = if name == "log_tau" { 0.0 } else { cfg.weight_decay };
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
                let delta = group_lr * (update + decay * *p);
                // skipping exact zeros keeps signed zeros intact
                if delta != 0.0 {
                    *p -= delta;
                }
            }
        });
        self.step += 1;
    }
}
