//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

pub mod gradcheck;

use num_complex::Complex64;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn theta(k: usize, d: usize, base: f64) -> f64 {
    base.powf(-2.0 * k as f64 / d as f64)
}

fn as_complex(x: &[f64]) -> Vec<Complex64> {
    x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// `Re Σ_k (q_k e^{i a_k}) conj(k_k e^{i b_k})` with per-pair angles.
fn complex_score(q: &[f64], k: &[f64], qa: impl Fn(usize) -> f64, ka: impl Fn(usize) -> f64) -> f64 {
    as_complex(q)
        .iter()
        .zip(as_complex(k))
        .enumerate()
        .map(|(j, (qc, kc))| {
            (qc * Complex64::from_polar(1.0, qa(j)) * (kc * Complex64::from_polar(1.0, ka(j))).conj()).re
        })
        .sum()
}

/// Rotary score via complex multiplication of absolutely rotated vectors.
pub fn rope_score_oracle(q: &[f64], k: &[f64], m: u64, n: u64, base: f64) -> f64 {
    let d = q.len();
    complex_score(q, k, |j| m as f64 * theta(j, d, base), |j| n as f64 * theta(j, d, base))
}

/// Level owning pair `j` when `counts` run coarse to fine and the finest
/// level takes the lowest pairs.
pub fn owner(counts: &[usize], j: usize) -> usize {
    let mut edge = 0;
    for lvl in (0..counts.len()).rev() {
        edge += counts[lvl];
        if j < edge {
            return lvl;
        }
    }
    panic!("pair {j} beyond split");
}

pub fn hirope_score_oracle(q: &[f64], k: &[f64], lq: &[u64], lk: &[u64], counts: &[usize], base: f64) -> f64 {
    let d = q.len();
    complex_score(
        q,
        k,
        |j| lq[owner(counts, j)] as f64 * theta(j, d, base),
        |j| lk[owner(counts, j)] as f64 * theta(j, d, base),
    )
}

/// Window rule written out directly: near pairs use the plain rotary score
/// on global positions; far pairs rotate each coarse level by its position
/// shifted so that its distance grows by `window - 1`.
#[allow(clippy::too_many_arguments)]
pub fn windowed_score_oracle(
    q: &[f64],
    k: &[f64],
    (lq, gq): (&[u64], u64),
    (lk, gk): (&[u64], u64),
    counts: &[usize],
    window: u64,
    base: f64,
) -> f64 {
    if gq - gk < window {
        return rope_score_oracle(q, k, gq, gk, base);
    }
    let d = q.len();
    let token = counts.len() - 1;
    let shift = |lvl: usize| if lvl == token { 0.0 } else { (window - 1) as f64 };
    complex_score(
        q,
        k,
        |j| {
            let lvl = owner(counts, j);
            (lq[lvl] as f64 + shift(lvl)) * theta(j, d, base)
        },
        |j| lk[owner(counts, j)] as f64 * theta(j, d, base),
    )
}

/// Exhaustive edit-distance dynamic programme over characters.
pub fn levenshtein_oracle(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

pub fn fixtures() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
