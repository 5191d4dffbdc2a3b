use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, OptimizerKind, TrainConfig};
use super::corpus::Sequence;
use super::model::{loss_and_grads, Example, Model};
use crate::error::{Error, Result};

/// Fixed optimizer hyperparameters, echoed into the run manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate at the last step relative to the peak (cosine decay).
    pub final_lr_fraction: f64,
}

pub const OPTIMIZER_PARAMS: OptimizerParams = OptimizerParams {
    beta1: 0.9,
    beta2: 0.99,
    eps: 1e-8,
    final_lr_fraction: 0.1,
};

enum OptimizerState {
    Sgd,
    RmsProp { sq: Vec<f64>, t: i32 },
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::RmsProp => Self::RmsProp { sq: vec![0.0; n], t: 0 },
            OptimizerKind::Adam => Self::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let OptimizerParams { beta1, beta2, eps, .. } = OPTIMIZER_PARAMS;
        match self {
            Self::Sgd => params.iter_mut().zip(grads).for_each(|(p, g)| *p -= lr * g),
            // Bias-corrected, so the first steps are not inflated by a cold average.
            Self::RmsProp { sq, t } => {
                *t += 1;
                let c2 = 1.0 - beta2.powi(*t);
                for ((p, g), s) in params.iter_mut().zip(grads).zip(sq.iter_mut()) {
                    *s = beta2 * *s + (1.0 - beta2) * g * g;
                    *p -= lr * g / ((*s / c2).sqrt() + eps);
                }
            }
            Self::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (((p, g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = beta1 * *mi + (1.0 - beta1) * g;
                    *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                    *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Linear warm-up, then cosine decay to `final_lr_fraction` of the peak.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let peak = cfg.learning_rate;
    if step < cfg.warmup {
        return peak * (step + 1) as f64 / cfg.warmup as f64;
    }
    let span = cfg.steps.saturating_sub(cfg.warmup).max(1) as f64;
    let progress = ((step - cfg.warmup) as f64 / span).min(1.0);
    let floor = OPTIMIZER_PARAMS.final_lr_fraction;
    peak * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossCurve(pub Vec<LossPoint>);

impl LossCurve {
    pub fn points(&self) -> &[LossPoint] {
        &self.0
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,loss,grad_norm,lr")?;
        for p in &self.0 {
            writeln!(out, "{},{:?},{:?},{:?}", p.step, p.loss, p.grad_norm, p.lr)?;
        }
        Ok(())
    }
}

/// Sequences truncated to `train_len`, with their positions.
pub fn training_examples(corpus: &[Sequence], train_len: usize) -> Result<Vec<Example>> {
    let examples: Vec<Example> = corpus
        .iter()
        .map(|s| s.truncated(train_len))
        .filter(|s| s.len() >= 2)
        .map(|s| Example {
            positions: s.positions(),
            tokens: s.tokens,
        })
        .collect();
    if examples.is_empty() {
        return Err(Error::InvalidConfig(
            "corpus has no sequence with at least 2 tokens".into(),
        ));
    }
    Ok(examples)
}

/// Trains in place. Batches are drawn uniformly with replacement from
/// `data_seed`; the loss of each batch is recorded before its update.
pub fn train(model: &mut Model, cfg: &TrainConfig, corpus: &[Sequence]) -> Result<LossCurve> {
    cfg.validate()?;
    model.set_position_scale(cfg.position_scale)?;
    let examples = training_examples(corpus, cfg.train_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut opt = OptimizerState::new(cfg.optimizer, model.num_params());
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for step in 0..cfg.steps {
        batch.clear();
        for _ in 0..cfg.batch_size {
            batch.push(examples[rng.random_range(0..examples.len())].clone());
        }
        let (loss, mut grads) = loss_and_grads(&batch, model)?;
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            let s = cfg.grad_clip / norm;
            grads.iter_mut().for_each(|g| *g *= s);
        }
        let lr = learning_rate(cfg, step);
        opt.step(model.params_mut(), &grads, lr);
        let point = LossPoint {
            step,
            loss,
            grad_norm: norm,
            lr,
        };
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log_point(&point);
        }
        curve.push(point);
    }
    Ok(LossCurve(curve))
}

fn log_point(p: &LossPoint) {
    if std::env::var_os("HIROPE_QUIET").is_none() {
        eprintln!(
            "step {:>5}  loss {:.4}  |g| {:.3}  lr {:.2e}",
            p.step, p.loss, p.grad_norm, p.lr
        );
    }
}

pub const CHECKPOINT_FORMAT: &str = "hirope-tinylm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    /// `[rows, cols]`, row-major.
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON checkpoint: model settings plus every tensor in layout order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub position_scale: u64,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let p = model.params();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.config().clone(),
            position_scale: model.position_scale(),
            tensors: model
                .tensors()
                .iter()
                .map(|(name, slot)| TensorRecord {
                    name: name.clone(),
                    shape: [slot.rows, slot.cols],
                    data: p[slot.offset..slot.offset + slot.len()].to_vec(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let template = Model::new(self.model.clone())?;
        if template.tensors().len() != self.tensors.len() {
            return Err(Error::Parse("checkpoint tensor count does not match the model".into()));
        }
        let mut params = Vec::with_capacity(template.num_params());
        for ((name, slot), t) in template.tensors().iter().zip(self.tensors) {
            if *name != t.name || [slot.rows, slot.cols] != t.shape || t.data.len() != slot.len() {
                return Err(Error::Parse(format!(
                    "checkpoint tensor {} does not match {name}",
                    t.name
                )));
            }
            params.extend(t.data);
        }
        Model::from_parts(self.model, params, self.position_scale)
    }
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub optimizer: OptimizerParams,
    pub corpus_seed: Option<u64>,
    pub corpus_sequences: usize,
    pub num_params: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

impl RunManifest {
    pub fn new(
        model: &Model,
        train: &TrainConfig,
        corpus_seed: Option<u64>,
        corpus_sequences: usize,
        curve: &LossCurve,
    ) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            model: model.config().clone(),
            train: train.clone(),
            optimizer: OPTIMIZER_PARAMS,
            corpus_seed,
            corpus_sequences,
            num_params: model.num_params(),
            initial_loss: curve.0.first().map(|p| p.loss),
            final_loss: curve.0.last().map(|p| p.loss),
        }
    }
}
