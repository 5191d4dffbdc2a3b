use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hier::{DimSplit, PositionStrategy, WindowConfig};
use crate::rope::DEFAULT_BASE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub vocab: usize,
    pub ff_dim: usize,
    pub rope_base: f64,
    pub strategy: PositionStrategy,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [self.layers, self.heads, self.head_dim, self.vocab, self.ff_dim];
        if sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!("model sizes must be >= 1: {self:?}")));
        }
        if self.head_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "head_dim must be even, got {}",
                self.head_dim
            )));
        }
        Ok(())
    }
}

impl Default for ModelConfig {
    /// Two layers, four heads of width 16, a 512-token vocabulary and the
    /// unmodified rotary encoding.
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            head_dim: 16,
            vocab: 512,
            ff_dim: 256,
            rope_base: DEFAULT_BASE,
            strategy: PositionStrategy::Origin,
            seed: 0,
        }
    }
}

/// Window of the desk-scale hierarchical runs, well inside the training length.
pub const DESK_WINDOW: u64 = 16;

/// Hierarchical strategy used by the desk-scale extrapolation runs: half of
/// the pairs on the token level and a window well inside the training length.
pub fn desk_hirope(head_dim: usize, window: u64) -> Result<PositionStrategy> {
    Ok(PositionStrategy::HiRope {
        split: DimSplit::two_level(0.5, head_dim / 2)?,
        window: WindowConfig::new(window)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub train_len: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Linear warm-up length in steps.
    pub warmup: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub grad_clip: f64,
    /// Seed for batch sampling.
    pub data_seed: u64,
    /// Every position index is multiplied by this factor before encoding.
    pub position_scale: u64,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_len < 2 {
            return Err(Error::InvalidConfig("train_len must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.position_scale == 0 {
            return Err(Error::InvalidConfig("position_scale must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            train_len: 128,
            steps: 1000,
            batch_size: 16,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::RmsProp,
            warmup: 50,
            grad_clip: 1.0,
            data_seed: 0,
            position_scale: 1,
            log_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub segment_len_min: usize,
    pub segment_len_max: usize,
    pub segments_per_sequence: usize,
    /// Distinct binding keys.
    pub key_vocab: usize,
    /// Distinct identifiers a key can be bound to.
    pub ident_vocab: usize,
    /// Distinct filler tokens in segment bodies.
    pub body_vocab: usize,
    /// Probability that a body slot opens a recall query.
    pub recall_rate: f64,
    pub sequences: usize,
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len_min < 2 || self.segment_len_max < self.segment_len_min {
            return Err(Error::InvalidConfig(format!(
                "segment length range {}..={} is invalid (minimum 2)",
                self.segment_len_min, self.segment_len_max
            )));
        }
        if self.key_vocab == 0 || self.ident_vocab == 0 || self.body_vocab == 0 {
            return Err(Error::InvalidConfig("token vocabularies must be non-empty".into()));
        }
        if self.segments_per_sequence == 0 {
            return Err(Error::InvalidConfig("segments_per_sequence must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.recall_rate) {
            return Err(Error::InvalidConfig("recall_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        super::corpus::SPECIAL_TOKENS + self.key_vocab + self.ident_vocab + self.body_vocab
    }
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            segment_len_min: 16,
            segment_len_max: 16,
            segments_per_sequence: 12,
            key_vocab: 4,
            ident_vocab: 8,
            body_vocab: 498,
            recall_rate: 0.05,
            sequences: 4096,
        }
    }
}
