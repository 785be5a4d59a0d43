//! Pairwise contrastive training of the self-fusion block.
//!
//! Gradients are derived by hand (reverse mode through layer norm,
//! multi-head attention, the GELU MLP, mean pooling and the output
//! normalization) and checked against central differences.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    check_heads, gelu, gelu_grad, softmax_rows, AttentionParams, ConcatScorerParams, FusionError, FusionWeights,
    LayerNormParams, MlpParams, SelfFusionParams,
};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("loss diverged at step {0}")]
    Diverged(usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training pairs")]
    NoPairs,
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    Euclidean,
    CosineDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub distance: Distance,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Trainable width.
    pub d: usize,
    /// MLP hidden width; 0 means `4 * d`.
    pub hidden: usize,
    pub heads: usize,
    /// L2-normalize fused outputs before measuring distance.
    pub normalize_outputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 0.5,
            distance: Distance::Euclidean,
            learning_rate: 0.05,
            steps: 500,
            batch_size: 32,
            seed: 0,
            d: 16,
            hidden: 0,
            heads: 1,
            normalize_outputs: true,
        }
    }
}

impl TrainConfig {
    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            4 * self.d
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(TrainError::InvalidConfig("margin must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        check_heads(self.d, self.heads)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub clip_a: Array2<f64>,
    pub clip_b: Array2<f64>,
    /// 1 when both clips show the same class.
    pub y: u8,
}

fn distance(fa: &[f64], fb: &[f64], kind: Distance) -> Result<f64, TrainError> {
    if fa.len() != fb.len() {
        return Err(TrainError::LengthMismatch(fa.len(), fb.len()));
    }
    Ok(match kind {
        Distance::Euclidean => fa
            .iter()
            .zip(fb)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Distance::CosineDistance => {
            let na = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = fb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return Err(TrainError::ZeroNorm);
            }
            1.0 - fa.iter().zip(fb).map(|(a, b)| a * b).sum::<f64>() / (na * nb)
        }
    })
}

/// `½(y·D² + (1−y)·max(0, m − D)²)`.
pub fn contrastive_loss(fa: &[f64], fb: &[f64], y: u8, margin: f64, kind: Distance) -> Result<f64, TrainError> {
    let dist = distance(fa, fb, kind)?;
    Ok(if y == 1 {
        0.5 * dist * dist
    } else {
        0.5 * (margin - dist).max(0.0).powi(2)
    })
}

/// Loss together with its gradients with respect to `fa` and `fb`.
pub fn contrastive_loss_grad(
    fa: &[f64],
    fb: &[f64],
    y: u8,
    margin: f64,
    kind: Distance,
) -> Result<(f64, Vec<f64>, Vec<f64>), TrainError> {
    let loss = contrastive_loss(fa, fb, y, margin, kind)?;
    let dist = distance(fa, fb, kind)?;
    let dl_dd = if y == 1 {
        dist
    } else if dist < margin {
        -(margin - dist)
    } else {
        0.0
    };
    let n = fa.len();
    let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
    if dl_dd == 0.0 {
        return Ok((loss, ga, gb));
    }
    match kind {
        Distance::Euclidean => {
            if y == 1 {
                // d(½D²)/dfa = fa − fb, well defined at D = 0
                for i in 0..n {
                    ga[i] = fa[i] - fb[i];
                    gb[i] = -ga[i];
                }
            } else if dist > 0.0 {
                for i in 0..n {
                    ga[i] = dl_dd * (fa[i] - fb[i]) / dist;
                    gb[i] = -ga[i];
                }
            }
        }
        Distance::CosineDistance => {
            let na = fa.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = fb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c = 1.0 - dist;
            // D = 1 − cos, so dD/dfa = −dcos/dfa
            for i in 0..n {
                let dcos_a = fb[i] / (na * nb) - c * fa[i] / (na * na);
                let dcos_b = fa[i] / (na * nb) - c * fb[i] / (nb * nb);
                ga[i] = -dl_dd * dcos_a;
                gb[i] = -dl_dd * dcos_b;
            }
        }
    }
    Ok((loss, ga, gb))
}

/// Central differences in f64.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, theta: &[f64], eps: f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            work[i] = theta[i] + eps;
            let hi = f(&work);
            work[i] = theta[i] - eps;
            let lo = f(&work);
            work[i] = theta[i];
            (hi - lo) / (2.0 * eps)
        })
        .collect()
}

/// Gradients share the parameter layout.
pub type Gradients = SelfFusionParams;

impl SelfFusionParams {
    pub fn zeros_like(&self) -> Self {
        let d = self.dim();
        Self {
            ln1: LayerNormParams {
                gamma: Array1::zeros(d),
                beta: Array1::zeros(d),
                eps: self.ln1.eps,
            },
            attn: AttentionParams::zeros(d),
            ln2: LayerNormParams {
                gamma: Array1::zeros(d),
                beta: Array1::zeros(d),
                eps: self.ln2.eps,
            },
            mlp: MlpParams::zeros(d, self.hidden()),
        }
    }

    fn tensors(&self) -> [ArrayView1<'_, f64>; 16] {
        fn flat(m: &Array2<f64>) -> ArrayView1<'_, f64> {
            m.as_slice().map(ArrayView1::from).expect("standard layout")
        }
        [
            self.ln1.gamma.view(),
            self.ln1.beta.view(),
            flat(&self.attn.wq),
            flat(&self.attn.wk),
            flat(&self.attn.wv),
            flat(&self.attn.wo),
            self.attn.bq.view(),
            self.attn.bk.view(),
            self.attn.bv.view(),
            self.attn.bo.view(),
            self.ln2.gamma.view(),
            self.ln2.beta.view(),
            flat(&self.mlp.w1),
            self.mlp.b1.view(),
            flat(&self.mlp.w2),
            self.mlp.b2.view(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        let a = &mut self.attn;
        let m = &mut self.mlp;
        [
            self.ln1.gamma.as_slice_mut().unwrap(),
            self.ln1.beta.as_slice_mut().unwrap(),
            a.wq.as_slice_mut().unwrap(),
            a.wk.as_slice_mut().unwrap(),
            a.wv.as_slice_mut().unwrap(),
            a.wo.as_slice_mut().unwrap(),
            a.bq.as_slice_mut().unwrap(),
            a.bk.as_slice_mut().unwrap(),
            a.bv.as_slice_mut().unwrap(),
            a.bo.as_slice_mut().unwrap(),
            self.ln2.gamma.as_slice_mut().unwrap(),
            self.ln2.beta.as_slice_mut().unwrap(),
            m.w1.as_slice_mut().unwrap(),
            m.b1.as_slice_mut().unwrap(),
            m.w2.as_slice_mut().unwrap(),
            m.b2.as_slice_mut().unwrap(),
        ]
    }

    /// Tensor names in [`Self::to_flat`] order.
    pub const TENSOR_NAMES: [&'static str; 16] = [
        "ln1.gamma", "ln1.beta", "attn.wq", "attn.wk", "attn.wv", "attn.wo", "attn.bq", "attn.bk",
        "attn.bv", "attn.bo", "ln2.gamma", "ln2.beta", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
    ];

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    /// Overwrites every parameter from a flat vector in [`Self::to_flat`] order.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length");
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src.iter()).for_each(|(a, b)| *a += scale * b);
        }
    }
}

/// Uniform `±1/sqrt(fan_in)` for attention and MLP matrices, zero output
/// projections, zero biases and identity layer norms: the untrained block
/// is exactly average fusion.
pub fn init_self_fusion(d: usize, hidden: usize, seed: u64) -> SelfFusionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
    };
    let wq = uniform(d, d);
    let wk = uniform(d, d);
    let wv = uniform(d, d);
    let w1 = uniform(d, hidden);
    SelfFusionParams {
        ln1: LayerNormParams::identity(d),
        attn: AttentionParams {
            wq,
            wk,
            wv,
            wo: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            bk: Array1::zeros(d),
            bv: Array1::zeros(d),
            bo: Array1::zeros(d),
        },
        ln2: LayerNormParams::identity(d),
        mlp: MlpParams {
            w1,
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, d)),
            b2: Array1::zeros(d),
        },
    }
}

/// Every fusion group with all matrices drawn uniform `±1/sqrt(fan_in)`
/// and zero biases, for comparing mechanisms without a trained bundle.
pub fn init_fusion_weights(d: usize, hidden: usize, seed: u64) -> FusionWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| {
        let bound = 1.0 / (rows as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
    };
    let mut attention = || AttentionParams {
        wq: uniform(d, d),
        wk: uniform(d, d),
        wv: uniform(d, d),
        wo: uniform(d, d),
        bq: Array1::zeros(d),
        bk: Array1::zeros(d),
        bv: Array1::zeros(d),
        bo: Array1::zeros(d),
    };
    let attn = attention();
    let cross = attention();
    let mlp = MlpParams {
        w1: uniform(d, hidden),
        b1: Array1::zeros(hidden),
        w2: uniform(hidden, d),
        b2: Array1::zeros(d),
    };
    let concat = ConcatScorerParams {
        pool_w: uniform(d, d),
        pool_b: Array1::zeros(d),
        fc_w: uniform(d, 1).column(0).to_owned(),
        fc_b: 0.0,
    };
    FusionWeights {
        ln1: Some(LayerNormParams::identity(d)),
        ln2: Some(LayerNormParams::identity(d)),
        attn: Some(attn),
        mlp: Some(mlp),
        cross: Some(cross),
        concat: Some(concat),
        lang_proj: None,
    }
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn ln_forward(x: ArrayView2<f64>, p: &LayerNormParams) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (r, mut row) in xhat.rows_mut().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        rstd[r] = 1.0 / (var + p.eps).sqrt();
        row.mapv_inplace(|v| (v - mean) * rstd[r]);
    }
    let out = &xhat * &p.gamma + &p.beta;
    (out, LnCache { xhat, rstd })
}

/// Returns dx and accumulates into the gamma/beta gradients.
fn ln_backward(dy: &Array2<f64>, cache: &LnCache, p: &LayerNormParams, grad: &mut LayerNormParams) -> Array2<f64> {
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.beta += &dy.sum_axis(Axis(0));
    let dxhat = dy * &p.gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for r in 0..dy.nrows() {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        for c in 0..dy.ncols() {
            dx[[r, c]] = cache.rstd[r] * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

struct AttnCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn attn_forward(x: ArrayView2<f64>, w: &AttentionParams, heads: usize) -> Result<(Array2<f64>, AttnCache), FusionError> {
    let d = w.dim();
    let dh = check_heads(d, heads)?;
    let q = x.dot(&w.wq) + &w.bq;
    let k = x.dot(&w.wk) + &w.bk;
    let v = x.dot(&w.wv) + &w.bv;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::zeros((x.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        concat.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    let out = concat.dot(&w.wo) + &w.bo;
    Ok((
        out,
        AttnCache {
            input: x.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
        },
    ))
}

fn attn_backward(dy: &Array2<f64>, c: &AttnCache, w: &AttentionParams, grad: &mut AttentionParams) -> Array2<f64> {
    let heads = c.probs.len();
    let d = w.dim();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    grad.wo += &c.concat.t().dot(dy);
    grad.bo += &dy.sum_axis(Axis(0));
    let dconcat = dy.dot(&w.wo.t());
    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (h, p) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dout = dconcat.slice(cols);
        let dp = dout.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout));
        // softmax backward per row
        let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = p * &(&dp - &row_dot) * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    grad.wq += &c.input.t().dot(&dq);
    grad.wk += &c.input.t().dot(&dk);
    grad.wv += &c.input.t().dot(&dv);
    grad.bq += &dq.sum_axis(Axis(0));
    grad.bk += &dk.sum_axis(Axis(0));
    grad.bv += &dv.sum_axis(Axis(0));
    dq.dot(&w.wq.t()) + dk.dot(&w.wk.t()) + dv.dot(&w.wv.t())
}

struct SelfCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ln2_out: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    rows: usize,
}

fn self_forward(x: ArrayView2<f64>, p: &SelfFusionParams, heads: usize) -> Result<(Array1<f64>, SelfCache), FusionError> {
    if x.nrows() == 0 {
        return Err(FusionError::EmptyClip);
    }
    let (a, ln1) = ln_forward(x, &p.ln1);
    let (y, attn) = attn_forward(a.view(), &p.attn, heads)?;
    let enhanced = &x + &y;
    let (b, ln2) = ln_forward(enhanced.view(), &p.ln2);
    let pre_act = b.dot(&p.mlp.w1) + &p.mlp.b1;
    let act = pre_act.mapv(gelu);
    let refined = &enhanced + &(act.dot(&p.mlp.w2) + &p.mlp.b2);
    let pooled = refined.mean_axis(Axis(0)).expect("non-empty");
    Ok((
        pooled,
        SelfCache {
            ln1,
            attn,
            ln2,
            ln2_out: b,
            pre_act,
            act,
            rows: x.nrows(),
        },
    ))
}

fn self_backward(dpooled: ArrayView1<f64>, c: &SelfCache, p: &SelfFusionParams, grad: &mut Gradients) {
    let n = c.rows;
    let drefined = Array2::from_shape_fn((n, dpooled.len()), |(_, j)| dpooled[j] / n as f64);
    grad.mlp.w2 += &c.act.t().dot(&drefined);
    grad.mlp.b2 += &drefined.sum_axis(Axis(0));
    let dact = drefined.dot(&p.mlp.w2.t());
    let dpre = &dact * &c.pre_act.mapv(gelu_grad);
    grad.mlp.w1 += &c.ln2_out.t().dot(&dpre);
    grad.mlp.b1 += &dpre.sum_axis(Axis(0));
    let db = dpre.dot(&p.mlp.w1.t());
    let denhanced = &drefined + &ln_backward(&db, &c.ln2, &p.ln2, &mut grad.ln2);
    let da = attn_backward(&denhanced, &c.attn, &p.attn, &mut grad.attn);
    ln_backward(&da, &c.ln1, &p.ln1, &mut grad.ln1);
}

fn normalize_with_grad(f: &Array1<f64>) -> Result<(Array1<f64>, f64), TrainError> {
    let norm = f.dot(f).sqrt();
    if norm == 0.0 {
        return Err(TrainError::ZeroNorm);
    }
    Ok((f / norm, norm))
}

/// Backprop through `u = f / |f|`.
fn normalize_backward(du: &Array1<f64>, u: &Array1<f64>, norm: f64) -> Array1<f64> {
    (du - &(u * du.dot(u))) / norm
}

/// Loss of one pair through the self-fusion block.
pub fn pair_loss(pair: &TrainPair, params: &SelfFusionParams, cfg: &TrainConfig) -> Result<f64, TrainError> {
    let mut fa = params.fuse(pair.clip_a.view(), cfg.heads)?;
    let mut fb = params.fuse(pair.clip_b.view(), cfg.heads)?;
    if cfg.normalize_outputs {
        fa = normalize_with_grad(&fa)?.0;
        fb = normalize_with_grad(&fb)?.0;
    }
    contrastive_loss(fa.as_slice().unwrap(), fb.as_slice().unwrap(), pair.y, cfg.margin, cfg.distance)
}

/// Loss and exact gradients for one pair, accumulated into `grad`.
fn accumulate_pair(
    pair: &TrainPair,
    params: &SelfFusionParams,
    cfg: &TrainConfig,
    grad: &mut Gradients,
    scale: f64,
) -> Result<f64, TrainError> {
    let (fa, ca) = self_forward(pair.clip_a.view(), params, cfg.heads)?;
    let (fb, cb) = self_forward(pair.clip_b.view(), params, cfg.heads)?;
    let (ua, na) = if cfg.normalize_outputs { normalize_with_grad(&fa)? } else { (fa.clone(), 1.0) };
    let (ub, nb) = if cfg.normalize_outputs { normalize_with_grad(&fb)? } else { (fb.clone(), 1.0) };
    let (loss, ga, gb) = contrastive_loss_grad(
        ua.as_slice().unwrap(),
        ub.as_slice().unwrap(),
        pair.y,
        cfg.margin,
        cfg.distance,
    )?;
    let mut ga = Array1::from(ga) * scale;
    let mut gb = Array1::from(gb) * scale;
    if cfg.normalize_outputs {
        ga = normalize_backward(&ga, &ua, na);
        gb = normalize_backward(&gb, &ub, nb);
    }
    self_backward(ga.view(), &ca, params, grad);
    self_backward(gb.view(), &cb, params, grad);
    Ok(loss)
}

/// Reverse-mode gradients of the pair loss with respect to every
/// self-fusion tensor.
pub fn analytic_gradients(pair: &TrainPair, params: &SelfFusionParams, cfg: &TrainConfig) -> Result<(f64, Gradients), TrainError> {
    let mut grad = params.zeros_like();
    let loss = accumulate_pair(pair, params, cfg, &mut grad, 1.0)?;
    Ok((loss, grad))
}

pub fn mean_loss(pairs: &[TrainPair], params: &SelfFusionParams, cfg: &TrainConfig) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let mut total = 0.0;
    for p in pairs {
        total += pair_loss(p, params, cfg)?;
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SelfFusionParams,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

/// Plain mini-batch gradient descent. Batches are drawn from a seeded
/// shuffle, reshuffled every epoch.
pub fn train_fusion(pairs: &[TrainPair], init: SelfFusionParams, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut params = init;
    let mut losses = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 {
        return Ok(TrainOutcome { params, losses });
    }
    if pairs.is_empty() {
        return Err(TrainError::NoPairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(pairs.len());
    for step in 0..cfg.steps {
        let mut grad = params.zeros_like();
        let mut total = 0.0;
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let pair = &pairs[order[cursor]];
            cursor += 1;
            total += accumulate_pair(pair, &params, cfg, &mut grad, 1.0 / batch as f64)?;
        }
        let loss = total / batch as f64;
        if !loss.is_finite() {
            return Err(TrainError::Diverged(step));
        }
        losses.push(loss);
        params.add_scaled(&grad, -cfg.learning_rate);
    }
    if params.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Diverged(cfg.steps));
    }
    Ok(TrainOutcome { params, losses })
}
