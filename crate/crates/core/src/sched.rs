//! Flat-cosine learning rate, EMA and weight-decay parameter groups.

use serde::{Deserialize, Serialize};

use crate::archspec::{LayerNode, ModelSpec};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_EMA_DECAY: f64 = 0.9998;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.05;
pub const DEFAULT_WARMUP_STEPS: u64 = 1000;
/// Default floor as a fraction of the base rate.
pub const MIN_LR_RATIO: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrConfig {
    pub base_lr: f64,
    pub min_lr: f64,
    pub total_steps: u64,
    pub warmup_steps: u64,
}

impl LrConfig {
    pub fn new(base_lr: f64, total_steps: u64, warmup_steps: u64) -> Self {
        Self {
            base_lr,
            min_lr: base_lr * MIN_LR_RATIO,
            total_steps,
            warmup_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_lr >= 0.0 && self.min_lr <= self.base_lr && self.base_lr.is_finite()) {
            return Err(Error::InvalidInput("need 0 <= min_lr <= base_lr".into()));
        }
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return Err(Error::InvalidInput("need 0 < warmup_steps <= total_steps".into()));
        }
        Ok(())
    }
}

/// Flat at `base_lr` until `T/2`, cosine down to `min_lr` at `T`, times a
/// linear warmup factor `min(1, step / warmup_steps)`. Steps past `T` are
/// clamped to `T`.
pub fn flat_cosine_lr(step: u64, cfg: &LrConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let t = step.min(cfg.total_steps) as f64;
    let half = total / 2.0;
    let lr = if t <= half {
        cfg.base_lr
    } else {
        let phase = std::f64::consts::PI * (t - half) / half;
        cfg.min_lr + (cfg.base_lr - cfg.min_lr) * 0.5 * (1.0 + phase.cos())
    };
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        lr * step as f64 / cfg.warmup_steps as f64
    } else {
        lr
    }
}

pub fn ema_step(ema: f64, model: f64, decay: f64) -> f64 {
    decay * ema + (1.0 - decay) * model
}

pub fn ema_update(ema: &[f64], model: &[f64], decay: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidInput(format!("EMA decay {decay} outside [0, 1)")));
    }
    check_len("EMA model values", ema.len(), model.len())?;
    Ok(ema.iter().zip(model).map(|(&e, &m)| ema_step(e, m, decay)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub count: u64,
}

/// Partition of the trainable parameters by weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroups {
    pub weight_decay: f64,
    /// Conv and attention weights.
    pub decay: Vec<ParamTensor>,
    /// Biases and BN affine parameters.
    pub no_decay: Vec<ParamTensor>,
}

impl ParamGroups {
    pub fn decay_count(&self) -> u64 {
        self.decay.iter().map(|t| t.count).sum()
    }

    pub fn no_decay_count(&self) -> u64 {
        self.no_decay.iter().map(|t| t.count).sum()
    }
}

pub fn param_groups(spec: &ModelSpec) -> ParamGroups {
    param_groups_of(&spec.nodes)
}

/// Shared nodes are skipped so every parameter is counted once.
pub fn param_groups_of(nodes: &[LayerNode]) -> ParamGroups {
    let mut g = ParamGroups {
        weight_decay: DEFAULT_WEIGHT_DECAY,
        decay: Vec::new(),
        no_decay: Vec::new(),
    };
    for n in nodes.iter().filter(|n| !n.shared) {
        let (w, b) = n.param_split();
        if w > 0 {
            g.decay.push(ParamTensor {
                name: format!("{}.weight", n.name),
                count: w,
            });
        }
        if b > 0 {
            g.no_decay.push(ParamTensor {
                name: format!("{}.bias", n.name),
                count: b,
            });
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::{build_model_spec, count_params, HeadMode, Preset, Task};

    #[test]
    fn lr_examples() {
        let cfg = LrConfig {
            base_lr: 0.004,
            min_lr: 0.0,
            total_steps: 1000,
            warmup_steps: 100,
        };
        assert_eq!(flat_cosine_lr(100, &cfg), 0.004);
        assert_eq!(flat_cosine_lr(250, &cfg), 0.004);
        assert_eq!(flat_cosine_lr(500, &cfg), 0.004);
        assert!((flat_cosine_lr(750, &cfg) - 0.002).abs() < 1e-12);
        assert_eq!(flat_cosine_lr(1000, &cfg), 0.0);
        assert_eq!(flat_cosine_lr(0, &cfg), 0.0);
        assert!((flat_cosine_lr(50, &cfg) - 0.002).abs() < 1e-15);
    }

    #[test]
    fn lr_default_floor() {
        let cfg = LrConfig::new(0.004, 300, 10);
        assert!(cfg.validate().is_ok());
        assert_eq!(flat_cosine_lr(300, &cfg), cfg.min_lr);
        assert!((cfg.min_lr - 0.0002).abs() < 1e-18);
        let bad = LrConfig { min_lr: 1.0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema_update(&[0.5], &[0.5], 0.9998).unwrap(), vec![0.5]);
        let v = ema_update(&[0.0], &[1.0], 0.9998).unwrap()[0];
        assert!((v - 0.0002).abs() < 1e-15);
        assert!(ema_update(&[0.0], &[1.0], 1.0).is_err());
        assert!(ema_update(&[0.0], &[], 0.5).is_err());
        // (1 - e_n) = decay^n toward a constant target
        let mut e = 0.0;
        for _ in 0..50 {
            e = ema_step(e, 1.0, 0.9);
        }
        assert!(((1.0 - e) - 0.9f64.powi(50)).abs() < 1e-12);
    }

    #[test]
    fn groups_partition_params() {
        for mode in [HeadMode::Shared, HeadMode::Separate, HeadMode::SharedSepBn] {
            let spec = build_model_spec(Task::Ins, Preset::Tiny, mode);
            let g = param_groups(&spec);
            assert_eq!(g.decay_count() + g.no_decay_count(), count_params(&spec));
            assert!(g.no_decay.iter().all(|t| t.name.ends_with(".bias")));
        }
    }

    #[test]
    fn conv_bn_block_split() {
        let spec = build_model_spec(Task::Det, Preset::Tiny, HeadMode::SharedSepBn);
        let stem: Vec<_> = spec.nodes.iter().take(3).cloned().collect();
        let g = param_groups_of(&stem);
        assert_eq!(g.decay.len(), 1);
        assert_eq!(g.decay[0].count, 27 * 12);
        assert_eq!(g.no_decay_count(), 24);
        let bn_only: Vec<_> = stem.into_iter().filter(|n| n.name.ends_with(".bn")).collect();
        assert!(param_groups_of(&bn_only).decay.is_empty());
    }
}
