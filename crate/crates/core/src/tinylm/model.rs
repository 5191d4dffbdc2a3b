//! Pre-norm decoder-only transformer with hand-derived gradients.
//!
//! Layout per layer: RMSNorm -> multi-head causal attention -> residual,
//! RMSNorm -> GELU MLP -> residual. Attention scores come from the
//! configured position strategy lowered onto an [`EncodingPlan`]; each
//! pass rotates queries and keys once and the plan's selector picks the
//! pass per causal pair.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hier::{scale_positions, EncodingPlan, HierPos, RotaryPass};
use crate::rope::RotaryConfig;

const NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

/// Location of one parameter tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn mat<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.rows, self.cols), &p[self.range()]).expect("slot fits")
    }

    fn mat_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
        ArrayViewMut2::from_shape((self.rows, self.cols), &mut p[self.range()]).expect("slot fits")
    }

    fn vec<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.range()])
    }

    fn vec_mut<'a>(&self, p: &'a mut [f64]) -> ArrayViewMut1<'a, f64> {
        ArrayViewMut1::from(&mut p[self.range()])
    }
}

#[derive(Debug, Clone)]
struct LayerSlots {
    ln1: Slot,
    wq: Slot,
    wk: Slot,
    wv: Slot,
    wo: Slot,
    ln2: Slot,
    w1: Slot,
    b1: Slot,
    w2: Slot,
    b2: Slot,
}

#[derive(Debug, Clone)]
struct Slots {
    embed: Slot,
    layers: Vec<LayerSlots>,
    ln_f: Slot,
    unembed: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct LayoutBuilder {
    next: usize,
    named: Vec<(String, Slot, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> Slot {
        let slot = Slot {
            offset: self.next,
            rows,
            cols,
        };
        self.next += slot.len();
        self.named.push((name, slot, init));
        slot
    }
}

fn build_layout(cfg: &ModelConfig) -> (Slots, Vec<(String, Slot, Init)>, usize) {
    let d = cfg.d_model();
    let residual_std = INIT_STD / (2.0 * cfg.layers as f64).sqrt();
    let mut b = LayoutBuilder {
        next: 0,
        named: Vec::new(),
    };
    let embed = b.add("embed".into(), cfg.vocab, d, Init::Normal(INIT_STD));
    let layers = (0..cfg.layers)
        .map(|l| LayerSlots {
            ln1: b.add(format!("layers.{l}.ln1"), 1, d, Init::Ones),
            wq: b.add(format!("layers.{l}.wq"), d, d, Init::Normal(INIT_STD)),
            wk: b.add(format!("layers.{l}.wk"), d, d, Init::Normal(INIT_STD)),
            wv: b.add(format!("layers.{l}.wv"), d, d, Init::Normal(INIT_STD)),
            wo: b.add(format!("layers.{l}.wo"), d, d, Init::Normal(residual_std)),
            ln2: b.add(format!("layers.{l}.ln2"), 1, d, Init::Ones),
            w1: b.add(format!("layers.{l}.w1"), d, cfg.ff_dim, Init::Normal(INIT_STD)),
            b1: b.add(format!("layers.{l}.b1"), 1, cfg.ff_dim, Init::Zeros),
            w2: b.add(format!("layers.{l}.w2"), cfg.ff_dim, d, Init::Normal(residual_std)),
            b2: b.add(format!("layers.{l}.b2"), 1, d, Init::Zeros),
        })
        .collect();
    let ln_f = b.add("ln_f".into(), 1, d, Init::Ones);
    let unembed = b.add("unembed".into(), d, cfg.vocab, Init::Normal(INIT_STD));
    (
        Slots {
            embed,
            layers,
            ln_f,
            unembed,
        },
        b.named,
        b.next,
    )
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    rotary: RotaryConfig,
    slots: Slots,
    names: Vec<(String, Slot)>,
    params: Vec<f64>,
    position_scale: u64,
}

/// Per-sequence losses and greedy-decoding outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenScores {
    /// Negative log-likelihood of token `i + 1` given the prefix up to `i`.
    pub nll: Vec<f64>,
    /// Whether the arg-max prediction at `i` equals token `i + 1`.
    pub correct: Vec<bool>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let rotary = RotaryConfig::new(config.head_dim, config.rope_base)?;
        config.strategy.validate(&rotary)?;
        let (slots, named, total) = build_layout(&config);
        let mut params = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (_, slot, init) in &named {
            let dst = &mut params[slot.range()];
            match *init {
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    dst.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                }
                Init::Ones => dst.fill(1.0),
                Init::Zeros => dst.fill(0.0),
            }
        }
        Ok(Self {
            config,
            rotary,
            slots,
            names: named.into_iter().map(|(n, s, _)| (n, s)).collect(),
            params,
            position_scale: 1,
        })
    }

    /// Rebuilds a model around previously trained parameters.
    pub fn from_parts(config: ModelConfig, params: Vec<f64>, position_scale: u64) -> Result<Self> {
        let mut model = Self::new(config)?;
        if params.len() != model.params.len() {
            return Err(Error::DimensionMismatch {
                expected: model.params.len(),
                actual: params.len(),
            });
        }
        model.params = params;
        model.set_position_scale(position_scale)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn rotary(&self) -> &RotaryConfig {
        &self.rotary
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Named parameter tensors in layout order.
    pub fn tensors(&self) -> &[(String, Slot)] {
        &self.names
    }

    pub fn position_scale(&self) -> u64 {
        self.position_scale
    }

    pub fn set_position_scale(&mut self, alpha: u64) -> Result<()> {
        if alpha == 0 {
            return Err(Error::InvalidConfig("position scale must be >= 1".into()));
        }
        self.position_scale = alpha;
        Ok(())
    }

    fn check_input(&self, tokens: &[u32], positions: &[HierPos]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::LengthMismatch("empty sequence".into()));
        }
        if tokens.len() != positions.len() {
            return Err(Error::LengthMismatch(format!(
                "{} tokens but {} positions",
                tokens.len(),
                positions.len()
            )));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab) {
            return Err(Error::InvalidConfig(format!(
                "token {t} outside vocabulary {}",
                self.config.vocab
            )));
        }
        Ok(())
    }

    fn plan(&self, positions: &[HierPos]) -> Result<RotaryTables> {
        let scaled;
        let positions = if self.position_scale == 1 {
            positions
        } else {
            scaled = scale_positions(positions, self.position_scale)?;
            &scaled
        };
        let plan = EncodingPlan::build(&self.config.strategy, positions, &self.rotary)?;
        Ok(RotaryTables::new(&plan))
    }

    /// Next-token logits, one row per input token.
    pub fn forward(&self, tokens: &[u32], positions: &[HierPos]) -> Result<Array2<f64>> {
        self.check_input(tokens, positions)?;
        let tables = self.plan(positions)?;
        Ok(self.run(tokens, &tables, false).logits)
    }

    /// Attention weights of every layer and head (row-normalised, causal).
    pub fn attention_weights(&self, tokens: &[u32], positions: &[HierPos]) -> Result<Vec<Vec<Array2<f64>>>> {
        self.check_input(tokens, positions)?;
        let tables = self.plan(positions)?;
        let cache = self.run(tokens, &tables, true);
        Ok(cache
            .layers
            .into_iter()
            .map(|l| l.heads.into_iter().map(|h| h.probs).collect())
            .collect())
    }

    pub fn score_tokens(&self, tokens: &[u32], positions: &[HierPos]) -> Result<TokenScores> {
        let logits = self.forward(tokens, positions)?;
        let n = tokens.len();
        let mut nll = Vec::with_capacity(n.saturating_sub(1));
        let mut correct = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n.saturating_sub(1) {
            let row = logits.row(i);
            let target = tokens[i + 1] as usize;
            nll.push(log_sum_exp(row) - row[target]);
            let argmax = row
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (j, &v)| if v > best.1 { (j, v) } else { best },
                )
                .0;
            correct.push(argmax == target);
        }
        Ok(TokenScores { nll, correct })
    }

    /// Summed next-token NLL of one sequence, accumulating
    /// `weight * d(sum NLL)/d(params)` into `grads`.
    pub(crate) fn accumulate_grads(
        &self,
        tokens: &[u32],
        positions: &[HierPos],
        weight: f64,
        grads: &mut [f64],
    ) -> Result<f64> {
        self.check_input(tokens, positions)?;
        let tables = self.plan(positions)?;
        let cache = self.run(tokens, &tables, true);
        let n = tokens.len();
        let mut dlogits = Array2::zeros(cache.logits.raw_dim());
        let mut total = 0.0;
        for i in 0..n - 1 {
            let row = cache.logits.row(i);
            let lse = log_sum_exp(row);
            let target = tokens[i + 1] as usize;
            total += lse - row[target];
            let mut drow = dlogits.row_mut(i);
            for (d, &v) in drow.iter_mut().zip(row.iter()) {
                *d = weight * (v - lse).exp();
            }
            drow[target] -= weight;
        }
        self.backward(tokens, &tables, &cache, dlogits, grads);
        Ok(total)
    }

    fn run(&self, tokens: &[u32], tables: &RotaryTables, keep: bool) -> Cache {
        let p = &self.params;
        let cfg = &self.config;
        let d = cfg.d_model();
        let n = tokens.len();
        let embed = self.slots.embed.mat(p);
        let mut x = Array2::zeros((n, d));
        for (i, &t) in tokens.iter().enumerate() {
            x.row_mut(i).assign(&embed.row(t as usize));
        }
        let mut layers = Vec::with_capacity(cfg.layers);
        for ls in &self.slots.layers {
            let (h1, inv_r1) = rms_norm(&x, ls.ln1.vec(p));
            let q = h1.dot(&ls.wq.mat(p));
            let k = h1.dot(&ls.wk.mat(p));
            let v = h1.dot(&ls.wv.mat(p));
            let mut o = Array2::zeros((n, d));
            let mut heads = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let cols = s![.., h * cfg.head_dim..(h + 1) * cfg.head_dim];
                let head = attend(q.slice(cols), k.slice(cols), v.slice(cols), tables, cfg.head_dim);
                o.slice_mut(cols).assign(&head.out);
                heads.push(head);
            }
            let x_mid = &x + &o.dot(&ls.wo.mat(p));
            let (h2, inv_r2) = rms_norm(&x_mid, ls.ln2.vec(p));
            let mut u = h2.dot(&ls.w1.mat(p));
            u += &ls.b1.vec(p);
            let z = u.mapv(gelu);
            let mut x_out = &x_mid + &z.dot(&ls.w2.mat(p));
            x_out += &ls.b2.vec(p);
            let x_in = std::mem::replace(&mut x, x_out);
            if keep {
                layers.push(LayerCache {
                    x_in,
                    inv_r1,
                    h1,
                    q,
                    k,
                    v,
                    heads,
                    o,
                    x_mid,
                    inv_r2,
                    h2,
                    u,
                    z,
                });
            }
        }
        let (hf, inv_rf) = rms_norm(&x, self.slots.ln_f.vec(p));
        let logits = hf.dot(&self.slots.unembed.mat(p));
        Cache {
            layers,
            x_final: x,
            inv_rf,
            hf,
            logits,
        }
    }

    fn backward(&self, tokens: &[u32], tables: &RotaryTables, cache: &Cache, dlogits: Array2<f64>, grads: &mut [f64]) {
        let p = &self.params;
        let cfg = &self.config;
        let hd = cfg.head_dim;

        general_mat_mul(
            1.0,
            &cache.hf.t(),
            &dlogits,
            1.0,
            &mut self.slots.unembed.mat_mut(grads),
        );
        let dhf = dlogits.dot(&self.slots.unembed.mat(p).t());
        let mut dx = rms_norm_backward(
            &cache.x_final,
            &cache.inv_rf,
            self.slots.ln_f.vec(p),
            &dhf,
            &mut self.slots.ln_f.vec_mut(grads),
        );

        for (ls, lc) in self.slots.layers.iter().zip(&cache.layers).rev() {
            // MLP residual branch
            general_mat_mul(1.0, &lc.z.t(), &dx, 1.0, &mut ls.w2.mat_mut(grads));
            ls.b2.vec_mut(grads).scaled_add(1.0, &dx.sum_axis(Axis(0)));
            let dz = dx.dot(&ls.w2.mat(p).t());
            let du = &dz * &lc.u.mapv(gelu_grad);
            general_mat_mul(1.0, &lc.h2.t(), &du, 1.0, &mut ls.w1.mat_mut(grads));
            ls.b1.vec_mut(grads).scaled_add(1.0, &du.sum_axis(Axis(0)));
            let dh2 = du.dot(&ls.w1.mat(p).t());
            let mut dx_mid = dx;
            dx_mid += &rms_norm_backward(&lc.x_mid, &lc.inv_r2, ls.ln2.vec(p), &dh2, &mut ls.ln2.vec_mut(grads));

            // attention residual branch
            general_mat_mul(1.0, &lc.o.t(), &dx_mid, 1.0, &mut ls.wo.mat_mut(grads));
            let d_o = dx_mid.dot(&ls.wo.mat(p).t());
            let mut dq = Array2::zeros(lc.q.raw_dim());
            let mut dk = Array2::zeros(lc.k.raw_dim());
            let mut dv = Array2::zeros(lc.v.raw_dim());
            for (h, head) in lc.heads.iter().enumerate() {
                let cols = s![.., h * hd..(h + 1) * hd];
                attend_backward(
                    head,
                    lc.v.slice(cols),
                    d_o.slice(cols),
                    tables,
                    hd,
                    dq.slice_mut(cols),
                    dk.slice_mut(cols),
                    dv.slice_mut(cols),
                );
            }
            general_mat_mul(1.0, &lc.h1.t(), &dq, 1.0, &mut ls.wq.mat_mut(grads));
            general_mat_mul(1.0, &lc.h1.t(), &dk, 1.0, &mut ls.wk.mat_mut(grads));
            general_mat_mul(1.0, &lc.h1.t(), &dv, 1.0, &mut ls.wv.mat_mut(grads));
            let mut dh1 = dq.dot(&ls.wq.mat(p).t());
            general_mat_mul(1.0, &dk, &ls.wk.mat(p).t(), 1.0, &mut dh1);
            general_mat_mul(1.0, &dv, &ls.wv.mat(p).t(), 1.0, &mut dh1);
            let mut dx_in = dx_mid;
            dx_in += &rms_norm_backward(&lc.x_in, &lc.inv_r1, ls.ln1.vec(p), &dh1, &mut ls.ln1.vec_mut(grads));
            dx = dx_in;
        }

        let mut g_embed = self.slots.embed.mat_mut(grads);
        for (i, &t) in tokens.iter().enumerate() {
            g_embed.row_mut(t as usize).scaled_add(1.0, &dx.row(i));
        }
    }
}

struct LayerCache {
    x_in: Array2<f64>,
    inv_r1: Array1<f64>,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    heads: Vec<HeadCache>,
    o: Array2<f64>,
    x_mid: Array2<f64>,
    inv_r2: Array1<f64>,
    h2: Array2<f64>,
    u: Array2<f64>,
    z: Array2<f64>,
}

struct Cache {
    layers: Vec<LayerCache>,
    x_final: Array2<f64>,
    inv_rf: Array1<f64>,
    hf: Array2<f64>,
    logits: Array2<f64>,
}

struct HeadCache {
    /// Rotated queries and keys, one per pass.
    rq: Vec<Array2<f64>>,
    rk: Vec<Array2<f64>>,
    probs: Array2<f64>,
    out: Array2<f64>,
}

/// Cosine/sine tables for each pass of an encoding plan.
struct RotaryTables {
    n: usize,
    passes: Vec<[(Array2<f64>, Array2<f64>); 2]>,
    /// `n x n` pass index per causal pair.
    selector: Array2<u8>,
}

impl RotaryTables {
    fn new(plan: &EncodingPlan) -> Self {
        let n = plan.len();
        let table = |pass: &RotaryPass, query: bool| {
            let angles = |i| {
                if query {
                    pass.query_angles(i)
                } else {
                    pass.key_angles(i)
                }
            };
            let pairs = if n == 0 { 0 } else { angles(0).len() };
            let mut c = Array2::zeros((n, pairs));
            let mut s = Array2::zeros((n, pairs));
            for i in 0..n {
                for (k, a) in angles(i).iter().enumerate() {
                    let (sin, cos) = a.sin_cos();
                    c[[i, k]] = cos;
                    s[[i, k]] = sin;
                }
            }
            (c, s)
        };
        let passes = plan
            .passes()
            .iter()
            .map(|p| [table(p, true), table(p, false)])
            .collect();
        let mut selector = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                selector[[i, j]] = plan.pass_for(i, j) as u8;
            }
        }
        Self { n, passes, selector }
    }
}

/// Rotates each row's pairs by the table angles; `inverse` applies the
/// transpose rotation.
fn rotate_rows(x: ArrayView2<f64>, (cos, sin): &(Array2<f64>, Array2<f64>), inverse: bool) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    let sign = if inverse { -1.0 } else { 1.0 };
    for ((xr, mut or), (cr, sr)) in x
        .rows()
        .into_iter()
        .zip(out.rows_mut())
        .zip(cos.rows().into_iter().zip(sin.rows()))
    {
        for k in 0..cr.len() {
            let (c, s) = (cr[k], sign * sr[k]);
            let (re, im) = (xr[2 * k], xr[2 * k + 1]);
            or[2 * k] = re * c - im * s;
            or[2 * k + 1] = re * s + im * c;
        }
    }
    out
}

fn attend(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    tables: &RotaryTables,
    head_dim: usize,
) -> HeadCache {
    let n = tables.n;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let rq: Vec<_> = tables.passes.iter().map(|t| rotate_rows(q, &t[0], false)).collect();
    let rk: Vec<_> = tables.passes.iter().map(|t| rotate_rows(k, &t[1], false)).collect();
    let raw: Vec<Array2<f64>> = rq.iter().zip(&rk).map(|(a, b)| a.dot(&b.t())).collect();
    let mut probs = Array2::zeros((n, n));
    for i in 0..n {
        let mut row = probs.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..=i {
            let sc = raw[tables.selector[[i, j]] as usize][[i, j]] * scale;
            row[j] = sc;
            max = max.max(sc);
        }
        let mut sum = 0.0;
        for j in 0..=i {
            row[j] = (row[j] - max).exp();
            sum += row[j];
        }
        for j in 0..=i {
            row[j] /= sum;
        }
    }
    let out = probs.dot(&v);
    HeadCache { rq, rk, probs, out }
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    head: &HeadCache,
    v: ArrayView2<f64>,
    d_out: ArrayView2<f64>,
    tables: &RotaryTables,
    head_dim: usize,
    mut dq: ArrayViewMut2<f64>,
    mut dk: ArrayViewMut2<f64>,
    mut dv: ArrayViewMut2<f64>,
) {
    let n = tables.n;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let p = &head.probs;
    general_mat_mul(1.0, &p.t(), &d_out, 1.0, &mut dv);
    let dp = d_out.dot(&v.t());
    let passes = tables.passes.len();
    let mut ds: Vec<Array2<f64>> = vec![Array2::zeros((n, n)); passes];
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..=i {
            dot += dp[[i, j]] * p[[i, j]];
        }
        for j in 0..=i {
            let g = p[[i, j]] * (dp[[i, j]] - dot) * scale;
            ds[tables.selector[[i, j]] as usize][[i, j]] = g;
        }
    }
    for (pass, ((dsp, rq), rk)) in ds.iter().zip(&head.rq).zip(&head.rk).enumerate() {
        let drq = dsp.dot(rk);
        let drk = dsp.t().dot(rq);
        dq += &rotate_rows(drq.view(), &tables.passes[pass][0], true);
        dk += &rotate_rows(drk.view(), &tables.passes[pass][1], true);
    }
}

fn rms_norm(x: &Array2<f64>, gain: ArrayView1<f64>) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols() as f64;
    let inv: Array1<f64> = x
        .rows()
        .into_iter()
        .map(|r| 1.0 / (r.dot(&r) / d + NORM_EPS).sqrt())
        .collect();
    let mut y = x.clone();
    for (mut row, &ir) in y.rows_mut().into_iter().zip(&inv) {
        row *= ir;
        row *= &gain;
    }
    (y, inv)
}

fn rms_norm_backward(
    x: &Array2<f64>,
    inv: &Array1<f64>,
    gain: ArrayView1<f64>,
    dy: &Array2<f64>,
    dgain: &mut ArrayViewMut1<f64>,
) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut dx = Array2::zeros(x.raw_dim());
    for i in 0..x.nrows() {
        let (xr, dyr, ir) = (x.row(i), dy.row(i), inv[i]);
        let g_dy = &dyr * &gain;
        dgain.scaled_add(ir, &(&dyr * &xr));
        let proj = g_dy.dot(&xr);
        let mut row = dx.row_mut(i);
        row.assign(&g_dy);
        row *= ir;
        row.scaled_add(-ir * ir * ir * proj / d, &xr);
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// One training example: tokens with their hierarchical positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub positions: Vec<HierPos>,
}

/// Mean next-token NLL over every predicted token of the batch and its
/// gradient with respect to all parameters.
pub fn loss_and_grads(batch: &[Example], model: &Model) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let targets: usize = batch.iter().map(|e| e.tokens.len().saturating_sub(1)).sum();
    if targets == 0 {
        return Err(Error::InvalidConfig("batch has no next-token targets".into()));
    }
    let weight = 1.0 / targets as f64;
    let mut grads = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for ex in batch {
        total += model.accumulate_grads(&ex.tokens, &ex.positions, weight, &mut grads)?;
    }
    Ok((total * weight, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hier::{DimSplit, PositionStrategy, WindowConfig};

    fn tiny(strategy: PositionStrategy) -> Model {
        Model::new(ModelConfig {
            layers: 2,
            heads: 2,
            head_dim: 4,
            vocab: 11,
            ff_dim: 8,
            rope_base: 10_000.0,
            strategy,
            seed: 7,
        })
        .unwrap()
    }

    fn example(n: usize) -> Example {
        Example {
            tokens: (0..n as u32).map(|i| (i * 7 + 3) % 11).collect(),
            positions: (0..n as u64).map(|i| HierPos::segmented(i / 3, i % 3, i)).collect(),
        }
    }

    #[test]
    fn single_token_logits_shape() {
        let m = tiny(PositionStrategy::Origin);
        let logits = m.forward(&[3], &[HierPos::segmented(0, 0, 0)]).unwrap();
        assert_eq!(logits.dim(), (1, 11));
    }

    #[test]
    fn input_validation() {
        let m = tiny(PositionStrategy::Origin);
        assert!(m.forward(&[], &[]).is_err());
        assert!(m.forward(&[1, 2], &[HierPos::flat(0)]).is_err());
        assert!(m.forward(&[11], &[HierPos::flat(0)]).is_err());
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let hi = PositionStrategy::HiRope {
            split: DimSplit::new(vec![1, 1]).unwrap(),
            window: WindowConfig::new(2).unwrap(),
        };
        let m = tiny(hi);
        let ex = example(9);
        for layer in m.attention_weights(&ex.tokens, &ex.positions).unwrap() {
            for head in layer {
                for (i, row) in head.rows().into_iter().enumerate() {
                    assert!((row.sum() - 1.0).abs() < 1e-9);
                    assert!(row.iter().skip(i + 1).all(|&w| w == 0.0));
                }
            }
        }
    }

    #[test]
    fn uniform_logits_give_log_vocab() {
        let mut m = tiny(PositionStrategy::Origin);
        let slot = m.slots.unembed;
        m.params_mut()[slot.range()].fill(0.0);
        let (loss, _) = loss_and_grads(&[example(6)], &m).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_matches_layout() {
        let m = tiny(PositionStrategy::Origin);
        let d = 4 * 2;
        let per_layer = 2 * d + 4 * d * d + d * 8 + 8 + 8 * d + d;
        assert_eq!(m.num_params(), 11 * d + 2 * per_layer + d + d * 11);
        assert_eq!(m.tensors().first().unwrap().0, "embed");
    }
}
