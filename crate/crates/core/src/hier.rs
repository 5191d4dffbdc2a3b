//! Hierarchical rotary encodings and the competing extrapolation strategies.
//!
//! Dimension pairs are partitioned across hierarchy levels. The token level
//! owns the lowest (highest-frequency) pairs; coarser levels own successively
//! higher pairs. A pair's rotation angle is the owning level's index times
//! `θ_k`, so a query/key score depends only on the per-level differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope::{self, check_position, rotate_into, RotaryConfig};

/// Default window used by the hierarchical strategy.
pub const DEFAULT_WINDOW: u64 = 512;
/// Default share of pairs given to the token level.
pub const DEFAULT_SPLIT_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HierPos {
    levels: Vec<u64>,
    global: u64,
}

impl HierPos {
    /// `levels` run coarse to fine; the last entry is the token ordinal
    /// within its innermost segment.
    pub fn new(levels: Vec<u64>, global: u64) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidConfig("a position needs at least one level".into()));
        }
        if levels.len() == 1 && levels[0] != global {
            return Err(Error::InvalidConfig(format!(
                "single-level position must equal its global index ({} != {global})",
                levels[0]
            )));
        }
        for &v in levels.iter().chain(std::iter::once(&global)) {
            check_position(v)?;
        }
        Ok(Self { levels, global })
    }

    /// A flat position: one level equal to the global index.
    pub fn flat(global: u64) -> Self {
        Self {
            levels: vec![global],
            global,
        }
    }

    /// Two-level (segment, token) position.
    pub fn segmented(segment: u64, token: u64, global: u64) -> Self {
        Self {
            levels: vec![segment, token],
            global,
        }
    }

    pub fn levels(&self) -> &[u64] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn global(&self) -> u64 {
        self.global
    }

    pub fn token(&self) -> u64 {
        *self.levels.last().expect("non-empty levels")
    }

    /// Multiplies every level and the global index by `factor`.
    pub fn scaled(&self, factor: u64) -> Result<Self> {
        let mul = |v: u64| {
            v.checked_mul(factor)
                .filter(|&s| s <= rope::MAX_POSITION)
                .ok_or_else(|| Error::InvalidConfig(format!("position {v} x {factor} overflows")))
        };
        Ok(Self {
            levels: self.levels.iter().map(|&v| mul(v)).collect::<Result<_>>()?,
            global: mul(self.global)?,
        })
    }
}

/// Allocation of rotary pairs to hierarchy levels, coarse to fine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimSplit {
    pair_counts: Vec<usize>,
}

impl DimSplit {
    pub fn new(pair_counts: Vec<usize>) -> Result<Self> {
        if pair_counts.is_empty() || pair_counts.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!(
                "every level needs at least one pair: {pair_counts:?}"
            )));
        }
        Ok(Self { pair_counts })
    }

    /// Single-level split: everything on the token level.
    pub fn flat(pairs: usize) -> Self {
        Self {
            pair_counts: vec![pairs],
        }
    }

    /// Two-level split giving `round(ratio * pairs)` pairs to the token level.
    pub fn two_level(ratio: f64, pairs: usize) -> Result<Self> {
        let token = token_pairs_for_ratio(ratio, pairs)?;
        if token >= pairs {
            return Err(Error::InvalidConfig(format!(
                "ratio {ratio} leaves no pairs for the segment level"
            )));
        }
        Self::new(vec![pairs - token, token])
    }

    pub fn pair_counts(&self) -> &[usize] {
        &self.pair_counts
    }

    pub fn depth(&self) -> usize {
        self.pair_counts.len()
    }

    pub fn total_pairs(&self) -> usize {
        self.pair_counts.iter().sum()
    }

    pub fn token_pairs(&self) -> usize {
        *self.pair_counts.last().expect("non-empty split")
    }

    /// Token-level width in real components (`d_s` when two levels are used).
    pub fn token_dims(&self) -> usize {
        2 * self.token_pairs()
    }

    pub fn check(&self, cfg: &RotaryConfig) -> Result<()> {
        if self.total_pairs() != cfg.pairs() {
            return Err(Error::InvalidConfig(format!(
                "split covers {} pairs but the head has {}",
                self.total_pairs(),
                cfg.pairs()
            )));
        }
        Ok(())
    }

    /// Level index owning each pair, pair 0 first.
    pub fn owners(&self) -> Vec<usize> {
        let mut owners = Vec::with_capacity(self.total_pairs());
        for (level, &count) in self.pair_counts.iter().enumerate().rev() {
            owners.extend(std::iter::repeat_n(level, count));
        }
        owners
    }
}

fn token_pairs_for_ratio(ratio: f64, pairs: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must be in (0, 1], got {ratio}"
        )));
    }
    let token = (ratio * pairs as f64).round() as usize;
    if token == 0 {
        return Err(Error::InvalidConfig(format!(
            "ratio {ratio} leaves no pairs for the token level"
        )));
    }
    Ok(token.min(pairs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    length: u64,
}

impl WindowConfig {
    pub fn new(length: u64) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidConfig("window length must be >= 1".into()));
        }
        Ok(Self { length })
    }

    pub fn length(&self) -> u64 {
        self.length
    }
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { length: DEFAULT_WINDOW }
    }
}

/// How query/key positions turn into a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionStrategy {
    Origin,
    #[serde(rename = "hirope")]
    HiRope {
        split: DimSplit,
        window: WindowConfig,
    },
    #[serde(rename = "rerope")]
    ReRope {
        window: u64,
    },
    SelfExtend {
        group: u64,
        neighbor: u64,
    },
    Ntk {
        scale: f64,
    },
}

impl PositionStrategy {
    /// Two-level hierarchical strategy from a token-level ratio. A ratio that
    /// hands every pair to the token level is the unmodified encoding.
    pub fn hirope_with_ratio(ratio: f64, window: u64, cfg: &RotaryConfig) -> Result<Self> {
        let token = token_pairs_for_ratio(ratio, cfg.pairs())?;
        if token == cfg.pairs() {
            return Ok(Self::Origin);
        }
        Ok(Self::HiRope {
            split: DimSplit::new(vec![cfg.pairs() - token, token])?,
            window: WindowConfig::new(window)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Origin => "origin",
            Self::HiRope { .. } => "hirope",
            Self::ReRope { .. } => "rerope",
            Self::SelfExtend { .. } => "self_extend",
            Self::Ntk { .. } => "ntk",
        }
    }

    pub fn validate(&self, cfg: &RotaryConfig) -> Result<()> {
        match self {
            Self::Origin => Ok(()),
            Self::HiRope { split, window } => {
                split.check(cfg)?;
                WindowConfig::new(window.length).map(|_| ())
            }
            Self::ReRope { window } if *window == 0 => Err(Error::InvalidConfig("rerope window must be >= 1".into())),
            Self::SelfExtend { group, .. } if *group == 0 => {
                Err(Error::InvalidConfig("self-extend group size must be >= 1".into()))
            }
            Self::Ntk { scale } => ntk_config(cfg, *scale).map(|_| ()),
            _ => Ok(()),
        }
    }
}

fn check_split(p: &HierPos, split: &DimSplit, cfg: &RotaryConfig) -> Result<()> {
    split.check(cfg)?;
    if p.depth() != split.depth() {
        return Err(Error::ArityMismatch {
            positions: p.depth(),
            split: split.depth(),
        });
    }
    Ok(())
}

fn check_causal(m: u64, n: u64) -> Result<()> {
    if m < n {
        return Err(Error::NonCausal { query: m, key: n });
    }
    Ok(())
}

/// Rotates pair `k` by `levels[owner(k)] * θ_k`.
pub fn apply_hirope(x: &[f64], p: &HierPos, split: &DimSplit, cfg: &RotaryConfig) -> Result<Vec<f64>> {
    cfg.check_vector(x, "embedding")?;
    check_split(p, split, cfg)?;
    let angles: Vec<f64> = split
        .owners()
        .iter()
        .zip(cfg.thetas())
        .map(|(&lvl, &theta)| p.levels()[lvl] as f64 * theta)
        .collect();
    let mut out = vec![0.0; x.len()];
    rotate_into(x, &angles, &mut out);
    Ok(out)
}

/// Per-level signed differences `p_q - p_k`.
fn level_deltas(p_q: &HierPos, p_k: &HierPos) -> Vec<i64> {
    p_q.levels()
        .iter()
        .zip(p_k.levels())
        .map(|(&a, &b)| a as i64 - b as i64)
        .collect()
}

fn score_with_level_deltas(q: &[f64], k: &[f64], deltas: &[i64], split: &DimSplit, cfg: &RotaryConfig) -> f64 {
    let owners = split.owners();
    rope::relative_score(q, k, cfg.thetas(), |j| deltas[owners[j]])
}

pub fn hirope_score(
    q: &[f64],
    k: &[f64],
    p_q: &HierPos,
    p_k: &HierPos,
    split: &DimSplit,
    cfg: &RotaryConfig,
) -> Result<f64> {
    cfg.check_vector(q, "query")?;
    cfg.check_vector(k, "key")?;
    check_split(p_q, split, cfg)?;
    check_split(p_k, split, cfg)?;
    let deltas = level_deltas(p_q, p_k);
    Ok(score_with_level_deltas(q, k, &deltas, split, cfg))
}

/// Signed relative distance seen by each rotary pair under the window rule.
///
/// Inside the window every pair sees the global distance. Outside it, every
/// level above the token level sees its own distance plus `window - 1`, and
/// the token level sees the (possibly negative) token-ordinal difference.
pub fn windowed_pair_distances(
    p_q: &HierPos,
    p_k: &HierPos,
    split: &DimSplit,
    window: WindowConfig,
) -> Result<Vec<i64>> {
    check_causal(p_q.global(), p_k.global())?;
    if p_q.depth() != split.depth() || p_k.depth() != split.depth() {
        return Err(Error::ArityMismatch {
            positions: p_q.depth().max(p_k.depth()),
            split: split.depth(),
        });
    }
    let dist = p_q.global() - p_k.global();
    if dist < window.length() {
        return Ok(vec![dist as i64; split.total_pairs()]);
    }
    let deltas = out_window_level_deltas(p_q, p_k, window);
    Ok(split.owners().iter().map(|&lvl| deltas[lvl]).collect())
}

fn out_window_level_deltas(p_q: &HierPos, p_k: &HierPos, window: WindowConfig) -> Vec<i64> {
    let offset = window.length() as i64 - 1;
    let token_level = p_q.depth() - 1;
    let mut deltas = level_deltas(p_q, p_k);
    for d in deltas.iter_mut().take(token_level) {
        *d += offset;
    }
    deltas
}

pub fn windowed_score(
    q: &[f64],
    k: &[f64],
    p_q: &HierPos,
    p_k: &HierPos,
    split: &DimSplit,
    window: WindowConfig,
    cfg: &RotaryConfig,
) -> Result<f64> {
    cfg.check_vector(q, "query")?;
    cfg.check_vector(k, "key")?;
    check_split(p_q, split, cfg)?;
    check_split(p_k, split, cfg)?;
    let distances = windowed_pair_distances(p_q, p_k, split, window)?;
    Ok(rope::relative_score(q, k, cfg.thetas(), |j| distances[j]))
}

pub fn rerope_score(q: &[f64], k: &[f64], m: u64, n: u64, window: u64, cfg: &RotaryConfig) -> Result<f64> {
    cfg.check_vector(q, "query")?;
    cfg.check_vector(k, "key")?;
    check_causal(m, n)?;
    if window == 0 {
        return Err(Error::InvalidConfig("rerope window must be >= 1".into()));
    }
    Ok(rope::rope_score_at(q, k, (m - n).min(window) as i64, cfg))
}

/// Relative distance used by grouped (floor) attention beyond the
/// neighbour window.
fn self_extend_distance(m: u64, n: u64, group: u64, neighbor: u64) -> i64 {
    if m - n < neighbor {
        (m - n) as i64
    } else {
        (m / group) as i64 - (n / group) as i64 + neighbor as i64 - (neighbor / group) as i64
    }
}

pub fn selfextend_score(
    q: &[f64],
    k: &[f64],
    m: u64,
    n: u64,
    group: u64,
    neighbor: u64,
    cfg: &RotaryConfig,
) -> Result<f64> {
    cfg.check_vector(q, "query")?;
    cfg.check_vector(k, "key")?;
    check_causal(m, n)?;
    if group == 0 {
        return Err(Error::InvalidConfig("self-extend group size must be >= 1".into()));
    }
    Ok(rope::rope_score_at(
        q,
        k,
        self_extend_distance(m, n, group, neighbor),
        cfg,
    ))
}

/// NTK-aware base rescaling: `base' = base * s^(d / (d - 2))`.
pub fn ntk_config(cfg: &RotaryConfig, scale: f64) -> Result<RotaryConfig> {
    if !(scale.is_finite() && scale >= 1.0) {
        return Err(Error::InvalidConfig(format!("NTK scale must be >= 1, got {scale}")));
    }
    if scale == 1.0 || cfg.head_dim() == 2 {
        // With d = 2 the only pair has θ_0 = 1 whatever the base.
        return Ok(cfg.clone());
    }
    let d = cfg.head_dim() as f64;
    RotaryConfig::new(cfg.head_dim(), cfg.base() * scale.powf(d / (d - 2.0)))
}

/// Score of one causal pair under any strategy.
pub fn pair_score(
    strategy: &PositionStrategy,
    q: &[f64],
    k: &[f64],
    p_q: &HierPos,
    p_k: &HierPos,
    cfg: &RotaryConfig,
) -> Result<f64> {
    let (m, n) = (p_q.global(), p_k.global());
    match strategy {
        PositionStrategy::Origin => {
            check_causal(m, n)?;
            rope::rope_score(q, k, m, n, cfg)
        }
        PositionStrategy::HiRope { split, window } => windowed_score(q, k, p_q, p_k, split, *window, cfg),
        PositionStrategy::ReRope { window } => rerope_score(q, k, m, n, *window, cfg),
        PositionStrategy::SelfExtend { group, neighbor } => selfextend_score(q, k, m, n, *group, *neighbor, cfg),
        PositionStrategy::Ntk { scale } => {
            check_causal(m, n)?;
            rope::rope_score(q, k, m, n, &ntk_config(cfg, *scale)?)
        }
    }
}

/// Per-token rotation angles for queries and keys under one encoding.
#[derive(Debug, Clone)]
pub struct RotaryPass {
    pairs: usize,
    query_angles: Vec<f64>,
    key_angles: Vec<f64>,
}

impl RotaryPass {
    fn from_positions(
        thetas: &[f64],
        query_pos: impl Fn(usize, usize) -> u64,
        key_pos: impl Fn(usize, usize) -> u64,
        n: usize,
    ) -> Self {
        let pairs = thetas.len();
        let mut query_angles = Vec::with_capacity(n * pairs);
        let mut key_angles = Vec::with_capacity(n * pairs);
        for i in 0..n {
            for (k, &theta) in thetas.iter().enumerate() {
                query_angles.push(query_pos(i, k) as f64 * theta);
                key_angles.push(key_pos(i, k) as f64 * theta);
            }
        }
        Self {
            pairs,
            query_angles,
            key_angles,
        }
    }

    pub fn query_angles(&self, token: usize) -> &[f64] {
        &self.query_angles[token * self.pairs..(token + 1) * self.pairs]
    }

    pub fn key_angles(&self, token: usize) -> &[f64] {
        &self.key_angles[token * self.pairs..(token + 1) * self.pairs]
    }
}

/// A strategy lowered onto a concrete sequence: one or more rotate-once
/// passes plus, for every causal pair, which pass scores it.
///
/// Pair-dependent rules (window, clipping, grouping) cannot be written as a
/// single rotation per token, so each regime gets its own pass and the
/// selector merges them.
#[derive(Debug, Clone)]
pub struct EncodingPlan {
    len: usize,
    passes: Vec<RotaryPass>,
    selector: Vec<u8>,
}

impl EncodingPlan {
    pub fn build(strategy: &PositionStrategy, positions: &[HierPos], cfg: &RotaryConfig) -> Result<Self> {
        strategy.validate(cfg)?;
        let n = positions.len();
        for w in positions.windows(2) {
            if w[1].global() <= w[0].global() {
                return Err(Error::InvalidConfig(
                    "global positions must be strictly increasing".into(),
                ));
            }
        }
        let global = |i: usize, _k: usize| positions[i].global();
        let origin = RotaryPass::from_positions(cfg.thetas(), global, global, n);
        let plan = match strategy {
            PositionStrategy::Origin => Self::single(n, origin),
            PositionStrategy::Ntk { scale } => {
                let scaled = ntk_config(cfg, *scale)?;
                Self::single(n, RotaryPass::from_positions(scaled.thetas(), global, global, n))
            }
            PositionStrategy::HiRope { split, window } => {
                for p in positions {
                    check_split(p, split, cfg)?;
                }
                let owners = split.owners();
                let token_level = split.depth() - 1;
                let offset = window.length() - 1;
                let shifted = |i: usize, k: usize| {
                    let lvl = owners[k];
                    let v = positions[i].levels()[lvl];
                    if lvl < token_level {
                        v + offset
                    } else {
                        v
                    }
                };
                let plain = |i: usize, k: usize| positions[i].levels()[owners[k]];
                let hier = RotaryPass::from_positions(cfg.thetas(), shifted, plain, n);
                let w = window.length();
                Self::two_pass(n, origin, hier, |i, j| {
                    positions[i].global() - positions[j].global() >= w
                })
            }
            PositionStrategy::ReRope { window } => {
                let w = *window;
                let clipped = RotaryPass::from_positions(cfg.thetas(), |_, _| w, |_, _| 0, n);
                Self::two_pass(n, origin, clipped, |i, j| {
                    positions[i].global() - positions[j].global() >= w
                })
            }
            PositionStrategy::SelfExtend { group, neighbor } => {
                let (g, wn) = (*group, *neighbor);
                let grouped = RotaryPass::from_positions(
                    cfg.thetas(),
                    |i, _| positions[i].global() / g + wn - wn / g,
                    |i, _| positions[i].global() / g,
                    n,
                );
                Self::two_pass(n, origin, grouped, |i, j| {
                    positions[i].global() - positions[j].global() >= wn
                })
            }
        };
        Ok(plan)
    }

    fn single(n: usize, pass: RotaryPass) -> Self {
        Self {
            len: n,
            passes: vec![pass],
            selector: vec![0; n * n],
        }
    }

    fn two_pass(n: usize, near: RotaryPass, far: RotaryPass, is_far: impl Fn(usize, usize) -> bool) -> Self {
        let mut selector = vec![0u8; n * n];
        for i in 0..n {
            for j in 0..=i {
                selector[i * n + j] = u8::from(is_far(i, j));
            }
        }
        Self {
            len: n,
            passes: vec![near, far],
            selector,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn passes(&self) -> &[RotaryPass] {
        &self.passes
    }

    /// Pass index used for causal pair `(i, j)`, `j <= i`.
    pub fn pass_for(&self, i: usize, j: usize) -> usize {
        self.selector[i * self.len + j] as usize
    }

    pub(crate) fn selector_row(&self, i: usize) -> &[u8] {
        &self.selector[i * self.len..(i + 1) * self.len]
    }
}

/// Causal (lower-triangular) score matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Entry `(i, j)` for `j <= i`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(j <= i && i < self.n, "({i}, {j}) is not a causal entry");
        self.data[i * (i + 1) / 2 + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.data[start..start + i + 1]
    }
}

/// Scores every causal pair of a sequence by rotating each token once per
/// pass and merging passes with the plan's selector.
pub fn attention_scores(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    positions: &[HierPos],
    strategy: &PositionStrategy,
    cfg: &RotaryConfig,
) -> Result<ScoreMatrix> {
    let n = positions.len();
    if queries.len() != n || keys.len() != n {
        return Err(Error::LengthMismatch(format!(
            "{} queries, {} keys, {} positions",
            queries.len(),
            keys.len(),
            n
        )));
    }
    for (q, k) in queries.iter().zip(keys) {
        cfg.check_vector(q, "query")?;
        cfg.check_vector(k, "key")?;
    }
    let plan = EncodingPlan::build(strategy, positions, cfg)?;
    let d = cfg.head_dim();
    let rotated: Vec<(Vec<f64>, Vec<f64>)> = plan
        .passes()
        .iter()
        .map(|pass| {
            let mut rq = vec![0.0; n * d];
            let mut rk = vec![0.0; n * d];
            for i in 0..n {
                rotate_into(&queries[i], pass.query_angles(i), &mut rq[i * d..(i + 1) * d]);
                rotate_into(&keys[i], pass.key_angles(i), &mut rk[i * d..(i + 1) * d]);
            }
            (rq, rk)
        })
        .collect();
    let mut data = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        let sel = plan.selector_row(i);
        for j in 0..=i {
            let (rq, rk) = &rotated[sel[j] as usize];
            data.push(rope::dot(&rq[i * d..(i + 1) * d], &rk[j * d..(j + 1) * d]));
        }
    }
    Ok(ScoreMatrix { n, data })
}

/// Multiplies every position index by `alpha` (reverse position
/// interpolation: the model sees a context `alpha` times shorter).
pub fn scale_positions(positions: &[HierPos], alpha: u64) -> Result<Vec<HierPos>> {
    if alpha == 0 {
        return Err(Error::InvalidConfig("position scale must be >= 1".into()));
    }
    positions.iter().map(|p| p.scaled(alpha)).collect()
}
