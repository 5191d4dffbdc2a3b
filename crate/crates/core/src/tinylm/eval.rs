use serde::{Deserialize, Serialize};

use super::config::SyntheticTaskConfig;
use super::corpus::generate_fixed_length;
use super::model::Model;
use crate::error::{Error, Result};

/// Metrics at one evaluation length. `acc` is greedy top-1 next-token
/// accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthEval {
    pub length: usize,
    pub sequences: usize,
    pub loss: f64,
    pub ppl: f64,
    pub acc: f64,
}

/// Per-token scores of `count` fresh sequences of exactly `length` tokens.
pub fn score_length(
    model: &Model,
    task: &SyntheticTaskConfig,
    seed: u64,
    count: usize,
    length: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut nll = Vec::new();
    let mut correct = Vec::new();
    for seq in generate_fixed_length(task, seed, count, length)? {
        let s = model.score_tokens(&seq.tokens, &seq.positions())?;
        nll.extend(s.nll);
        correct.extend(s.correct);
    }
    Ok((nll, correct))
}

/// Evaluates on held-out sequences generated from `seed` at every length.
pub fn evaluate_lengths(
    model: &Model,
    lengths: &[usize],
    task: &SyntheticTaskConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<LengthEval>> {
    if count == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one sequence".into()));
    }
    lengths
        .iter()
        .map(|&length| {
            if length < 2 {
                return Err(Error::InvalidConfig(format!("evaluation length {length} < 2")));
            }
            let (nll, correct) = score_length(model, task, seed, count, length)?;
            let loss = nll.iter().sum::<f64>() / nll.len() as f64;
            let acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
            Ok(LengthEval {
                length,
                sequences: count,
                loss,
                ppl: loss.exp(),
                acc,
            })
        })
        .collect()
}
