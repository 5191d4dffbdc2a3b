//! Which rotary dimensions complete a full period inside the pretraining
//! window, and therefore extrapolate reliably.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hier::DimSplit;
use crate::rope::RotaryConfig;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitReport {
    pub pretrain_len: u64,
    pub head_dim: usize,
    pub base: f64,
    /// `log_base(L / 2π)`, clamped to `(0, 1]`.
    pub fraction: f64,
    /// `fraction * d`, in real components.
    pub split_dim: f64,
    /// Pairs whose period is shorter than the pretraining length.
    pub reliable_pairs: usize,
    pub periods: Vec<f64>,
}

/// Period of pair `k` in tokens: `2π / θ_k`.
pub fn period(k: usize, cfg: &RotaryConfig) -> Result<f64> {
    if k >= cfg.pairs() {
        return Err(Error::InvalidConfig(format!(
            "pair index {k} out of range for {} pairs",
            cfg.pairs()
        )));
    }
    Ok(TAU / cfg.thetas()[k])
}

pub fn periods(cfg: &RotaryConfig) -> Vec<f64> {
    cfg.thetas().iter().map(|t| TAU / t).collect()
}

fn check_len(pretrain_len: u64) -> Result<()> {
    if pretrain_len as f64 <= TAU {
        return Err(Error::InvalidConfig(format!(
            "pretraining length {pretrain_len} is not longer than 2π; no dimension is reliable"
        )));
    }
    Ok(())
}

pub fn reliable_split(pretrain_len: u64, cfg: &RotaryConfig) -> Result<SplitReport> {
    check_len(pretrain_len)?;
    let fraction = ((pretrain_len as f64 / TAU).ln() / cfg.base().ln()).clamp(f64::MIN_POSITIVE, 1.0);
    let periods = periods(cfg);
    let reliable_pairs = periods.iter().filter(|&&t| t < pretrain_len as f64).count();
    Ok(SplitReport {
        pretrain_len,
        head_dim: cfg.head_dim(),
        base: cfg.base(),
        fraction,
        split_dim: fraction * cfg.head_dim() as f64,
        reliable_pairs,
        periods,
    })
}

/// Two-level split that keeps the reliable pairs on the token level and
/// hands the out-of-distribution ones to the segment level.
pub fn suggest_split(pretrain_len: u64, cfg: &RotaryConfig) -> Result<DimSplit> {
    let report = reliable_split(pretrain_len, cfg)?;
    let pairs = cfg.pairs();
    if pairs < 2 {
        return Err(Error::InvalidConfig(
            "a two-level split needs at least two pairs".into(),
        ));
    }
    let token = ((report.fraction * pairs as f64).round() as usize).clamp(1, pairs - 1);
    DimSplit::new(vec![pairs - token, token])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_period_is_tau() {
        let cfg = RotaryConfig::with_default_base(128).unwrap();
        assert_eq!(period(0, &cfg).unwrap(), TAU);
        assert!(period(64, &cfg).is_err());
        assert!(periods(&cfg).windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn last_period_recomputed() {
        let cfg = RotaryConfig::with_default_base(128).unwrap();
        let expected = TAU * 10_000f64.powf(126.0 / 128.0);
        assert!((period(63, &cfg).unwrap() - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn short_pretraining_rejected() {
        let cfg = RotaryConfig::with_default_base(64).unwrap();
        assert!(reliable_split(6, &cfg).is_err());
        assert!(suggest_split(6, &cfg).is_err());
        assert!(reliable_split(7, &cfg).is_ok());
    }

    #[test]
    fn fraction_saturates() {
        let cfg = RotaryConfig::with_default_base(8).unwrap();
        let r = reliable_split(10_000_000, &cfg).unwrap();
        assert_eq!(r.fraction, 1.0);
        assert_eq!(r.split_dim, 8.0);
    }
}
