//! Rotary position embedding over interleaved coordinate pairs.
//!
//! A vector of `d` reals is read as `d/2` complex numbers
//! `(x[2k] + i x[2k+1])`. Position `m` multiplies pair `k` by `e^{i m θ_k}`
//! with `θ_k = base^(-2k/d)`. All math is done in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BASE: f64 = 10_000.0;

/// Largest position for which `m as f64` is exact.
pub const MAX_POSITION: u64 = 1 << 53;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotaryConfig {
    head_dim: usize,
    base: f64,
    thetas: Vec<f64>,
}

impl RotaryConfig {
    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        if head_dim < 2 || head_dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "head_dim must be even and >= 2, got {head_dim}"
            )));
        }
        if !(base.is_finite() && base > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "base must be a positive finite number, got {base}"
            )));
        }
        let d = head_dim as f64;
        let thetas = (0..head_dim / 2).map(|k| base.powf(-2.0 * k as f64 / d)).collect();
        Ok(Self { head_dim, base, thetas })
    }

    pub fn with_default_base(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_BASE)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Number of rotated pairs, `d/2`.
    pub fn pairs(&self) -> usize {
        self.head_dim / 2
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Per-pair angular frequencies `θ_k`, highest frequency first.
    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub(crate) fn check_vector(&self, x: &[f64], what: &'static str) -> Result<()> {
        if x.len() != self.head_dim {
            return Err(Error::DimensionMismatch {
                expected: self.head_dim,
                actual: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }
}

/// Multiplies complex pair `k` of `x` by `e^{i angles[k]}`.
pub fn rotate_pairs(x: &[f64], angles: &[f64]) -> Result<Vec<f64>> {
    if x.len() % 2 != 0 || x.len() / 2 != angles.len() {
        return Err(Error::DimensionMismatch {
            expected: 2 * angles.len(),
            actual: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rotated vector"));
    }
    let mut out = vec![0.0; x.len()];
    rotate_into(x, angles, &mut out);
    Ok(out)
}

/// Unchecked kernel shared by every encoding; `out` must have `x.len()` slots.
#[inline]
pub(crate) fn rotate_into(x: &[f64], angles: &[f64], out: &mut [f64]) {
    for (k, &a) in angles.iter().enumerate() {
        let (s, c) = a.sin_cos();
        let (re, im) = (x[2 * k], x[2 * k + 1]);
        out[2 * k] = re * c - im * s;
        out[2 * k + 1] = re * s + im * c;
    }
}

pub(crate) fn check_position(m: u64) -> Result<()> {
    if m > MAX_POSITION {
        return Err(Error::InvalidConfig(format!("position {m} exceeds 2^53")));
    }
    Ok(())
}

pub fn apply_rope(x: &[f64], m: u64, cfg: &RotaryConfig) -> Result<Vec<f64>> {
    cfg.check_vector(x, "embedding")?;
    check_position(m)?;
    let angles: Vec<f64> = cfg.thetas.iter().map(|t| m as f64 * t).collect();
    rotate_pairs(x, &angles)
}

/// Score of a pair whose per-pair relative distances are `delta(k)`.
///
/// `Re<f(q, m), f(k, n)>` expands per pair into
/// `(q0 k0 + q1 k1) cos(Δθ) + (q0 k1 - q1 k0) sin(Δθ)`, so only the signed
/// distance per pair is needed.
pub(crate) fn relative_score(q: &[f64], k: &[f64], thetas: &[f64], delta: impl Fn(usize) -> i64) -> f64 {
    let mut acc = 0.0;
    for (j, &theta) in thetas.iter().enumerate() {
        let (q0, q1) = (q[2 * j], q[2 * j + 1]);
        let (k0, k1) = (k[2 * j], k[2 * j + 1]);
        let (s, c) = (delta(j) as f64 * theta).sin_cos();
        acc += (q0 * k0 + q1 * k1) * c + (q0 * k1 - q1 * k0) * s;
    }
    acc
}

/// `Re<f(q, m), f(k, n)>`; depends on `m - n` only.
pub fn rope_score(q: &[f64], k: &[f64], m: u64, n: u64, cfg: &RotaryConfig) -> Result<f64> {
    cfg.check_vector(q, "query")?;
    cfg.check_vector(k, "key")?;
    check_position(m)?;
    check_position(n)?;
    let delta = m as i64 - n as i64;
    Ok(relative_score(q, k, &cfg.thetas, |_| delta))
}

/// `rope_score` at a signed relative distance; the baselines clip or remap
/// distances before scoring.
pub(crate) fn rope_score_at(q: &[f64], k: &[f64], delta: i64, cfg: &RotaryConfig) -> f64 {
    relative_score(q, k, &cfg.thetas, |_| delta)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn config_rejects_odd_and_tiny_dims() {
        assert!(RotaryConfig::new(0, 10_000.0).is_err());
        assert!(RotaryConfig::new(3, 10_000.0).is_err());
        assert!(RotaryConfig::new(4, 0.0).is_err());
        assert!(RotaryConfig::new(4, f64::NAN).is_err());
    }

    #[test]
    fn thetas_start_at_one_and_decrease() {
        let cfg = RotaryConfig::with_default_base(64).unwrap();
        assert_eq!(cfg.thetas()[0], 1.0);
        assert!(cfg.thetas().windows(2).all(|w| w[1] < w[0]));
        assert!(cfg.thetas().iter().all(|&t| t > 0.0));
        let cfg4 = RotaryConfig::with_default_base(4).unwrap();
        assert!((cfg4.thetas()[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn zero_angles_are_identity() {
        let x = [0.3, -1.2, 4.0, 0.5];
        assert_eq!(rotate_pairs(&x, &[0.0, 0.0]).unwrap(), x.to_vec());
    }

    #[test]
    fn quarter_turn() {
        let y = rotate_pairs(&[1.0, 0.0], &[FRAC_PI_2]).unwrap();
        assert!(y[0].abs() < 1e-12);
        assert!((y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotate_rejects_wrong_angle_count() {
        assert!(matches!(
            rotate_pairs(&[1.0, 0.0, 1.0, 0.0], &[0.1]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(rotate_pairs(&[1.0, 0.0, 1.0], &[0.1]).is_err());
    }

    #[test]
    fn non_finite_input_rejected() {
        let cfg = RotaryConfig::with_default_base(2).unwrap();
        assert!(matches!(
            apply_rope(&[f64::INFINITY, 0.0], 1, &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn apply_rope_single_pair() {
        let cfg = RotaryConfig::with_default_base(2).unwrap();
        assert_eq!(apply_rope(&[1.0, 0.0], 0, &cfg).unwrap(), vec![1.0, 0.0]);
        let y = apply_rope(&[1.0, 0.0], 1, &cfg).unwrap();
        assert!((y[0] - 1f64.cos()).abs() < 1e-15);
        assert!((y[1] - 1f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn score_single_pair_is_cosine_of_distance() {
        let cfg = RotaryConfig::with_default_base(2).unwrap();
        let u = [1.0, 0.0];
        assert_eq!(rope_score(&u, &u, 9, 9, &cfg).unwrap(), 1.0);
        for delta in 0..20u64 {
            let s = rope_score(&u, &u, 30 + delta, 30, &cfg).unwrap();
            assert!((s - (delta as f64).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn score_equals_dot_of_rotated_vectors() {
        let cfg = RotaryConfig::with_default_base(8).unwrap();
        let q = [0.1, 0.7, -0.3, 1.1, 0.9, -0.4, 0.2, 0.05];
        let k = [-0.6, 0.2, 0.8, 0.3, -0.1, 0.5, 0.7, -0.9];
        let direct = dot(&apply_rope(&q, 41, &cfg).unwrap(), &apply_rope(&k, 17, &cfg).unwrap());
        let s = rope_score(&q, &k, 41, 17, &cfg).unwrap();
        assert!((s - direct).abs() < 1e-12);
    }

    #[test]
    fn score_rejects_position_beyond_exact_range() {
        let cfg = RotaryConfig::with_default_base(2).unwrap();
        assert!(rope_score(&[1.0, 0.0], &[1.0, 0.0], MAX_POSITION + 1, 0, &cfg).is_err());
    }
}
