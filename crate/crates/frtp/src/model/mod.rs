//! The convolution → max-pool(R) → LSTM → linear head forecaster.
//!
//! Each feature group runs through its own feature-axis convolution (one
//! output channel) and a max-pool with that group's pooling ratio, so every
//! group lands on the output granularity with a common length. The pooled
//! channels are concatenated per time step and fed to a shared LSTM; a linear
//! head maps the final hidden state to per-segment speeds in normalized
//! [0, 1] space.

pub mod layers;
mod train;

pub use train::{
    backward_step, batch_loss, evaluate_mae, forward, grad_batch, mae, train, AdamState,
    Prediction, TrainResult,
};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::FrtpError;
use crate::features::{GroupName, Sample};
use crate::rng::SplitMix64;
use layers::{LstmParams, GATES};

pub const DEFAULT_SEED: u64 = 1100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupShape {
    pub name: GroupName,
    pub n_features: usize,
    /// Input window length in the group's own buckets.
    pub t_len: usize,
    /// Pooling ratio reconciling this group onto the output granularity.
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// K, the number of road segments.
    pub n_segments: usize,
    pub groups: Vec<GroupShape>,
    pub conv_kernel_time: usize,
    pub lstm_hidden: usize,
    pub output_size: usize,
}

impl ModelConfig {
    /// Shared post-pooling sequence length; all groups must agree on it.
    pub fn pooled_len(&self) -> Result<usize, FrtpError> {
        let mut len: Option<usize> = None;
        for g in &self.groups {
            if g.r == 0 || g.r > g.t_len {
                return Err(FrtpError::RTooLarge { r: g.r, len: g.t_len });
            }
            let pooled = g.t_len / g.r;
            match len {
                None => len = Some(pooled),
                Some(l) if l != pooled => {
                    return Err(FrtpError::ShapeMismatch(format!(
                        "group {} pools to {pooled} steps, others to {l}",
                        g.name.as_str()
                    )))
                }
                _ => {}
            }
        }
        len.ok_or_else(|| FrtpError::BadConfig("model has no feature groups".into()))
    }

    pub fn validate(&self) -> Result<(), FrtpError> {
        if self.conv_kernel_time == 0 || self.conv_kernel_time % 2 == 0 {
            return Err(FrtpError::BadConfig("conv_kernel_time must be a positive odd integer".into()));
        }
        if self.lstm_hidden == 0 || self.output_size == 0 || self.n_segments == 0 {
            return Err(FrtpError::BadConfig("model dimensions must be positive".into()));
        }
        self.pooled_len()?;
        Ok(())
    }

    /// Derives the config from one sample, taking each group's pooling ratio
    /// from its granularity versus the output granularity.
    pub fn from_sample(
        sample: &Sample,
        output_step_minutes: u32,
        conv_kernel_time: usize,
        lstm_hidden: usize,
        output_size: usize,
    ) -> Result<Self, FrtpError> {
        let groups = sample
            .inputs
            .iter()
            .map(|inp| {
                let r = crate::features::pooling_ratio(inp.step_minutes, output_step_minutes)?;
                Ok(GroupShape { name: inp.name, n_features: inp.n_features, t_len: inp.t_len, r })
            })
            .collect::<Result<Vec<_>, FrtpError>>()?;
        let cfg = ModelConfig {
            n_segments: sample.target.len(),
            groups,
            conv_kernel_time,
            lstm_hidden,
            output_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// LSTM input dimension: one pooled channel per group.
    pub fn lstm_input_dim(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    /// [kernel_time][n_features] row-major.
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// [output_size][hidden] row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub conv: Vec<ConvParams>,
    pub lstm: LstmParams,
    pub head: HeadParams,
}

impl ModelState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let conv = cfg
            .groups
            .iter()
            .map(|g| ConvParams { weights: vec![0.0; cfg.conv_kernel_time * g.n_features], bias: 0.0 })
            .collect();
        ModelState {
            conv,
            lstm: LstmParams::zeros(cfg.lstm_input_dim(), cfg.lstm_hidden),
            head: HeadParams {
                weights: vec![0.0; cfg.output_size * cfg.lstm_hidden],
                bias: vec![0.0; cfg.output_size],
            },
        }
    }

    /// Uniform init in +-1/sqrt(fan_in), drawn from the seeded generator in a
    /// fixed order (conv groups, LSTM gates, head).
    pub fn init(cfg: &ModelConfig, rng: &mut SplitMix64) -> Self {
        let mut state = Self::zeros(cfg);
        for (cp, g) in state.conv.iter_mut().zip(&cfg.groups) {
            let bound = 1.0 / ((cfg.conv_kernel_time * g.n_features) as f64).sqrt();
            for w in cp.weights.iter_mut() {
                *w = rng.uniform(-bound, bound);
            }
            cp.bias = rng.uniform(-bound, bound);
        }
        let d = cfg.lstm_input_dim();
        let bound = 1.0 / ((d + cfg.lstm_hidden) as f64).sqrt();
        for g in 0..GATES {
            for w in state.lstm.w[g]
                .iter_mut()
                .chain(state.lstm.u[g].iter_mut())
                .chain(state.lstm.b[g].iter_mut())
            {
                *w = rng.uniform(-bound, bound);
            }
        }
        let bound = 1.0 / (cfg.lstm_hidden as f64).sqrt();
        for w in state.head.weights.iter_mut().chain(state.head.bias.iter_mut()) {
            *w = rng.uniform(-bound, bound);
        }
        state
    }

    /// Flattens all parameters in the fixed order used everywhere (gradient
    /// checks, the optimizer, and checkpoints).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for c in &self.conv {
            out.extend_from_slice(&c.weights);
            out.push(c.bias);
        }
        for g in 0..GATES {
            out.extend_from_slice(&self.lstm.w[g]);
            out.extend_from_slice(&self.lstm.u[g]);
            out.extend_from_slice(&self.lstm.b[g]);
        }
        out.extend_from_slice(&self.head.weights);
        out.extend_from_slice(&self.head.bias);
        out
    }

    pub fn from_vec(cfg: &ModelConfig, v: &[f64]) -> Result<Self, FrtpError> {
        let mut state = Self::zeros(cfg);
        let mut k = 0usize;
        let mut take = |n: usize| -> Result<std::ops::Range<usize>, FrtpError> {
            if k + n > v.len() {
                return Err(FrtpError::ShapeMismatch("parameter vector too short".into()));
            }
            let r = k..k + n;
            k += n;
            Ok(r)
        };
        for c in state.conv.iter_mut() {
            let r = take(c.weights.len())?;
            c.weights.copy_from_slice(&v[r]);
            c.bias = v[take(1)?.start];
        }
        for g in 0..GATES {
            for slot in [&mut state.lstm.w[g], &mut state.lstm.u[g], &mut state.lstm.b[g]] {
                let r = take(slot.len())?;
                slot.copy_from_slice(&v[r]);
            }
        }
        let r = take(state.head.weights.len())?;
        state.head.weights.copy_from_slice(&v[r]);
        let r = take(state.head.bias.len())?;
        state.head.bias.copy_from_slice(&v[r]);
        if k != v.len() {
            return Err(FrtpError::ShapeMismatch(format!(
                "parameter vector has {} values, model expects {k}",
                v.len()
            )));
        }
        Ok(state)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: DEFAULT_SEED,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Versioned JSON checkpoint; loading reproduces forward outputs bit-exactly
/// (serde_json round-trips f64 exactly).
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub output_step_minutes: u32,
    pub params: Vec<f64>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(
    path: &Path,
    cfg: &ModelConfig,
    state: &ModelState,
    seed: u64,
    output_step_minutes: u32,
) -> Result<(), FrtpError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        seed,
        output_step_minutes,
        params: state.to_vec(),
    };
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelState, Checkpoint), FrtpError> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(FrtpError::BadConfig(format!("unsupported checkpoint version {}", ckpt.version)));
    }
    let state = ModelState::from_vec(&ckpt.config, &ckpt.params)?;
    let cfg = ckpt.config.clone();
    Ok((cfg, state, ckpt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            n_segments: 2,
            groups: vec![
                GroupShape { name: GroupName::Traffic, n_features: 3, t_len: 12, r: 3 },
                GroupShape { name: GroupName::Calendar, n_features: 2, t_len: 4, r: 1 },
            ],
            conv_kernel_time: 3,
            lstm_hidden: 4,
            output_size: 4,
        }
    }

    #[test]
    fn pooled_len_agreement() {
        let cfg = tiny_cfg();
        assert_eq!(cfg.pooled_len().unwrap(), 4);
        let mut bad = cfg;
        bad.groups[1].t_len = 6;
        assert!(bad.pooled_len().is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        let mut cfg = tiny_cfg();
        cfg.conv_kernel_time = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let cfg = tiny_cfg();
        let state = ModelState::init(&cfg, &mut SplitMix64::new(1100));
        let v = state.to_vec();
        let back = ModelState::from_vec(&cfg, &v).unwrap();
        assert_eq!(state, back);
        assert!(ModelState::from_vec(&cfg, &v[..v.len() - 1]).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let cfg = tiny_cfg();
        let a = ModelState::init(&cfg, &mut SplitMix64::new(1100));
        let b = ModelState::init(&cfg, &mut SplitMix64::new(1100));
        assert_eq!(a, b);
        let c = ModelState::init(&cfg, &mut SplitMix64::new(1101));
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let cfg = tiny_cfg();
        let state = ModelState::init(&cfg, &mut SplitMix64::new(1100));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &cfg, &state, 1100, 60).unwrap();
        let (cfg2, state2, _) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(state.to_vec(), state2.to_vec());
    }
}
