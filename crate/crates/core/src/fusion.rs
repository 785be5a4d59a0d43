//! Trajectory feature fusion: layer norm, multi-head self-attention, MLP and
//! the five ways of collapsing an `n × d` clip of embeddings into one vector
//! (or, for concatenation fusion, directly into a category score).
//!
//! All weight matrices are stored `(in, out)` and applied to row vectors as
//! `x · W + b`.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Tensor, WeightBundle};

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("width {d} is not divisible by {heads} heads")]
    HeadsMismatch { d: usize, heads: usize },
    #[error("missing weights: {0}")]
    MissingWeights(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty clip")]
    EmptyClip,
    #[error("{0} is not a vector fusion")]
    NotVectorFusion(&'static str),
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
            eps: LN_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
}

impl AttentionParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            bk: Array1::zeros(d),
            bv: Array1::zeros(d),
            bo: Array1::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// `d × h`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h × d`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((d, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, d)),
            b2: Array1::zeros(d),
        }
    }
}

/// Pool projection (`d × d`) followed by a scalar head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcatScorerParams {
    pub pool_w: Array2<f64>,
    pub pool_b: Array1<f64>,
    pub fc_w: Array1<f64>,
    pub fc_b: f64,
}

/// Parameters of the trainable pre-LN attention + MLP block.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfFusionParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub mlp: MlpParams,
}

impl SelfFusionParams {
    pub fn dim(&self) -> usize {
        self.attn.dim()
    }

    pub fn hidden(&self) -> usize {
        self.mlp.w1.ncols()
    }

    pub fn fuse(&self, x: ArrayView2<f64>, heads: usize) -> Result<Array1<f64>, FusionError> {
        fuse_self(x, &self.ln1, &self.attn, &self.ln2, &self.mlp, heads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Average,
    Attention,
    #[serde(rename = "self")]
    SelfFusion,
    SelfNoresidual,
    Cross,
    Concat,
}

impl FusionKind {
    pub const ALL: [FusionKind; 6] = [
        FusionKind::Average,
        FusionKind::Attention,
        FusionKind::SelfFusion,
        FusionKind::SelfNoresidual,
        FusionKind::Cross,
        FusionKind::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Average => "average",
            FusionKind::Attention => "attention",
            FusionKind::SelfFusion => "self",
            FusionKind::SelfNoresidual => "self_noresidual",
            FusionKind::Cross => "cross",
            FusionKind::Concat => "concat",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown fusion mechanism {s:?}"))
    }
}

/// Every learnable tensor, each group optional so a bundle can carry only
/// what one mechanism needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FusionWeights {
    pub ln1: Option<LayerNormParams>,
    pub ln2: Option<LayerNormParams>,
    pub attn: Option<AttentionParams>,
    pub mlp: Option<MlpParams>,
    pub cross: Option<AttentionParams>,
    pub concat: Option<ConcatScorerParams>,
    /// `d_text × d`
    pub lang_proj: Option<Array2<f64>>,
}

fn vec1(t: &Tensor) -> Array1<f64> {
    t.data.iter().map(|&v| v as f64).collect()
}

fn mat2(t: &Tensor) -> Array2<f64> {
    Array2::from_shape_vec(
        (t.shape[0], t.shape[1]),
        t.data.iter().map(|&v| v as f64).collect(),
    )
    .expect("bundle shapes validated on load")
}

fn tensor1(a: &Array1<f64>) -> Tensor {
    Tensor::new(vec![a.len()], a.iter().map(|&v| v as f32).collect())
}

fn tensor2(a: &Array2<f64>) -> Tensor {
    Tensor::new(
        vec![a.nrows(), a.ncols()],
        a.iter().map(|&v| v as f32).collect(),
    )
}

impl FusionWeights {
    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self, FusionError> {
        let get = |name: &str| bundle.get(name);
        let group = |prefix: &str, leaves: &[&str]| -> Result<bool, FusionError> {
            let present = leaves
                .iter()
                .filter(|l| get(&format!("{prefix}.{l}")).is_some())
                .count();
            match present {
                0 => Ok(false),
                n if n == leaves.len() => Ok(true),
                _ => Err(FusionError::Shape(format!(
                    "tensor group {prefix} is incomplete"
                ))),
            }
        };
        let ln = |p: &str| -> Result<Option<LayerNormParams>, FusionError> {
            Ok(group(p, &["gamma", "beta"])?.then(|| LayerNormParams {
                gamma: vec1(get(&format!("{p}.gamma")).unwrap()),
                beta: vec1(get(&format!("{p}.beta")).unwrap()),
                eps: LN_EPS,
            }))
        };
        let attn = |p: &str| -> Result<Option<AttentionParams>, FusionError> {
            let leaves = ["wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo"];
            Ok(group(p, &leaves)?.then(|| {
                let m = |l: &str| mat2(get(&format!("{p}.{l}")).unwrap());
                let v = |l: &str| vec1(get(&format!("{p}.{l}")).unwrap());
                AttentionParams {
                    wq: m("wq"),
                    wk: m("wk"),
                    wv: m("wv"),
                    wo: m("wo"),
                    bq: v("bq"),
                    bk: v("bk"),
                    bv: v("bv"),
                    bo: v("bo"),
                }
            }))
        };
        let mlp = group("mlp", &["w1", "b1", "w2", "b2"])?.then(|| MlpParams {
            w1: mat2(get("mlp.w1").unwrap()),
            b1: vec1(get("mlp.b1").unwrap()),
            w2: mat2(get("mlp.w2").unwrap()),
            b2: vec1(get("mlp.b2").unwrap()),
        });
        let concat = group("concat", &["pool_w", "pool_b", "fc_w", "fc_b"])?.then(|| {
            ConcatScorerParams {
                pool_w: mat2(get("concat.pool_w").unwrap()),
                pool_b: vec1(get("concat.pool_b").unwrap()),
                fc_w: vec1(get("concat.fc_w").unwrap()),
                fc_b: get("concat.fc_b").unwrap().data[0] as f64,
            }
        });
        Ok(Self {
            ln1: ln("ln1")?,
            ln2: ln("ln2")?,
            attn: attn("attn")?,
            mlp,
            cross: attn("cross")?,
            concat,
            lang_proj: get("lang_proj.w").map(mat2),
        })
    }

    pub fn to_bundle(&self) -> Result<WeightBundle, crate::ingest::IngestError> {
        let mut t = BTreeMap::new();
        for (p, ln) in [("ln1", &self.ln1), ("ln2", &self.ln2)] {
            if let Some(ln) = ln {
                t.insert(format!("{p}.gamma"), tensor1(&ln.gamma));
                t.insert(format!("{p}.beta"), tensor1(&ln.beta));
            }
        }
        for (p, a) in [("attn", &self.attn), ("cross", &self.cross)] {
            if let Some(a) = a {
                for (l, m) in [("wq", &a.wq), ("wk", &a.wk), ("wv", &a.wv), ("wo", &a.wo)] {
                    t.insert(format!("{p}.{l}"), tensor2(m));
                }
                for (l, v) in [("bq", &a.bq), ("bk", &a.bk), ("bv", &a.bv), ("bo", &a.bo)] {
                    t.insert(format!("{p}.{l}"), tensor1(v));
                }
            }
        }
        if let Some(m) = &self.mlp {
            t.insert("mlp.w1".into(), tensor2(&m.w1));
            t.insert("mlp.b1".into(), tensor1(&m.b1));
            t.insert("mlp.w2".into(), tensor2(&m.w2));
            t.insert("mlp.b2".into(), tensor1(&m.b2));
        }
        if let Some(c) = &self.concat {
            t.insert("concat.pool_w".into(), tensor2(&c.pool_w));
            t.insert("concat.pool_b".into(), tensor1(&c.pool_b));
            t.insert("concat.fc_w".into(), tensor1(&c.fc_w));
            t.insert("concat.fc_b".into(), Tensor::new(vec![1], vec![c.fc_b as f32]));
        }
        if let Some(p) = &self.lang_proj {
            t.insert("lang_proj.w".into(), tensor2(p));
        }
        WeightBundle::new(t)
    }

    pub fn with_self_fusion(mut self, p: SelfFusionParams) -> Self {
        self.ln1 = Some(p.ln1);
        self.attn = Some(p.attn);
        self.ln2 = Some(p.ln2);
        self.mlp = Some(p.mlp);
        self
    }

    /// Clone of the self-fusion parameters, for training.
    pub fn self_fusion(&self) -> Result<SelfFusionParams, FusionError> {
        Ok(SelfFusionParams {
            ln1: self.ln1.clone().ok_or(FusionError::MissingWeights("ln1"))?,
            attn: self.attn.clone().ok_or(FusionError::MissingWeights("attn"))?,
            ln2: self.ln2.clone().ok_or(FusionError::MissingWeights("ln2"))?,
            mlp: self.mlp.clone().ok_or(FusionError::MissingWeights("mlp"))?,
        })
    }

    fn need<'a, T>(v: &'a Option<T>, name: &'static str) -> Result<&'a T, FusionError> {
        v.as_ref().ok_or(FusionError::MissingWeights(name))
    }

    /// Fails with `MissingWeights` unless every group `kind` uses is present.
    pub fn check(&self, kind: FusionKind) -> Result<(), FusionError> {
        match kind {
            FusionKind::Average => {}
            FusionKind::Attention => {
                Self::need(&self.attn, "attn")?;
            }
            FusionKind::SelfFusion | FusionKind::SelfNoresidual => {
                Self::need(&self.ln1, "ln1")?;
                Self::need(&self.attn, "attn")?;
                Self::need(&self.ln2, "ln2")?;
                Self::need(&self.mlp, "mlp")?;
            }
            FusionKind::Cross => {
                Self::need(&self.cross, "cross")?;
            }
            FusionKind::Concat => {
                Self::need(&self.attn, "attn")?;
                Self::need(&self.concat, "concat")?;
            }
        }
        Ok(())
    }

    /// Collapses a clip into one trajectory embedding.
    pub fn fuse(&self, kind: FusionKind, x: ArrayView2<f64>, heads: usize) -> Result<Array1<f64>, FusionError> {
        match kind {
            FusionKind::Average => fuse_average(x),
            FusionKind::Attention => fuse_attention(x, Self::need(&self.attn, "attn")?, heads),
            FusionKind::SelfFusion => fuse_self(
                x,
                Self::need(&self.ln1, "ln1")?,
                Self::need(&self.attn, "attn")?,
                Self::need(&self.ln2, "ln2")?,
                Self::need(&self.mlp, "mlp")?,
                heads,
            ),
            FusionKind::SelfNoresidual => fuse_self_noresidual(
                x,
                Self::need(&self.attn, "attn")?,
                Self::need(&self.mlp, "mlp")?,
                heads,
            ),
            FusionKind::Cross => fuse_cross(x, Self::need(&self.cross, "cross")?, heads),
            FusionKind::Concat => Err(FusionError::NotVectorFusion("concat")),
        }
    }

    /// [`fuse`](Self::fuse) over many clips at once. Each clip is fused
    /// independently; the linear layers run over the stacked rows.
    pub fn fuse_many(&self, kind: FusionKind, clips: &[ArrayView2<f64>], heads: usize) -> Result<Vec<Array1<f64>>, FusionError> {
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        if kind == FusionKind::Average {
            return clips.iter().map(|c| fuse_average(*c)).collect();
        }
        let (x, lens) = stack_clips(clips)?;
        let x = x.view();
        match kind {
            FusionKind::Average => unreachable!(),
            FusionKind::Attention => {
                let attn = Self::need(&self.attn, "attn")?;
                Ok(block_means(attention_blocks(x, x, &lens, &lens, attn, heads)?.view(), &lens))
            }
            FusionKind::SelfFusion => {
                let attn = Self::need(&self.attn, "attn")?;
                let normed = layer_norm(x, Self::need(&self.ln1, "ln1")?);
                let enhanced = &x + &attention_blocks(normed.view(), normed.view(), &lens, &lens, attn, heads)?;
                let normed = layer_norm(enhanced.view(), Self::need(&self.ln2, "ln2")?);
                let refined = &enhanced + &mlp_block(normed.view(), Self::need(&self.mlp, "mlp")?)?;
                Ok(block_means(refined.view(), &lens))
            }
            FusionKind::SelfNoresidual => {
                let attended = attention_blocks(x, x, &lens, &lens, Self::need(&self.attn, "attn")?, heads)?;
                Ok(block_means(mlp_block(attended.view(), Self::need(&self.mlp, "mlp")?)?.view(), &lens))
            }
            FusionKind::Cross => {
                let w = Self::need(&self.cross, "cross")?;
                let mut fused = Array2::zeros((clips.len(), x.ncols()));
                for (i, c) in clips.iter().enumerate() {
                    fused.row_mut(i).assign(&c.row(0));
                }
                let longest = lens.iter().copied().max().unwrap_or(0);
                for step in 1..longest {
                    let active: Vec<usize> = (0..clips.len()).filter(|&i| lens[i] > step).collect();
                    let q = fused.select(Axis(0), &active);
                    let kv = Array2::from_shape_fn((active.len(), x.ncols()), |(r, c)| clips[active[r]][[step, c]]);
                    let ones = vec![1; active.len()];
                    let out = attention_blocks(q.view(), kv.view(), &ones, &ones, w, heads)?;
                    for (r, &i) in active.iter().enumerate() {
                        fused.row_mut(i).assign(&out.row(r));
                    }
                }
                Ok(fused.rows().into_iter().map(|r| r.to_owned()).collect())
            }
            FusionKind::Concat => Err(FusionError::NotVectorFusion("concat")),
        }
    }

    /// Concatenation scores for every clip against every row of `langs`;
    /// entry `[i][k]` scores clip `i` with language row `k`.
    pub fn concat_scores_many(&self, clips: &[ArrayView2<f64>], langs: ArrayView2<f64>, heads: usize) -> Result<Vec<Vec<f64>>, FusionError> {
        let attn = Self::need(&self.attn, "attn")?;
        let w = Self::need(&self.concat, "concat")?;
        if clips.is_empty() || langs.nrows() == 0 {
            return Ok(vec![Vec::new(); clips.len()]);
        }
        let (_, lens) = stack_clips(clips)?;
        if langs.ncols() != clips[0].ncols() {
            return Err(FusionError::Shape(format!(
                "language feature width {} vs clip width {}",
                langs.ncols(),
                clips[0].ncols()
            )));
        }
        let mut parts = Vec::with_capacity(clips.len() * langs.nrows() * 2);
        let mut block_lens = Vec::with_capacity(clips.len() * langs.nrows());
        for (c, n) in clips.iter().zip(&lens) {
            for k in 0..langs.nrows() {
                parts.push(*c);
                parts.push(langs.slice(s![k..k + 1, ..]));
                block_lens.push(n + 1);
            }
        }
        let stacked = ndarray::concatenate(Axis(0), &parts).expect("widths checked");
        let attended = attention_blocks(stacked.view(), stacked.view(), &block_lens, &block_lens, attn, heads)?;
        let pooled = block_means(attended.view(), &block_lens);
        let pooled = ndarray::stack(Axis(0), &pooled.iter().map(|p| p.view()).collect::<Vec<_>>()).expect("equal widths");
        let scores = (pooled.dot(&w.pool_w) + &w.pool_b).dot(&w.fc_w) + w.fc_b;
        Ok(scores
            .as_slice()
            .expect("fresh array")
            .chunks(langs.nrows())
            .map(<[f64]>::to_vec)
            .collect())
    }

    pub fn concat_score(&self, x: ArrayView2<f64>, lang: ArrayView1<f64>, heads: usize) -> Result<f64, FusionError> {
        concat_score(
            x,
            lang,
            Self::need(&self.attn, "attn")?,
            Self::need(&self.concat, "concat")?,
            heads,
        )
    }
}

/// Per-row `(x - mean) / sqrt(var + eps) * gamma + beta`, variance over `d`.
pub fn layer_norm(x: ArrayView2<f64>, p: &LayerNormParams) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let rstd = 1.0 / (var + p.eps).sqrt();
        row.iter_mut()
            .zip(p.gamma.iter().zip(&p.beta))
            .for_each(|(v, (g, b))| *v = (*v - mean) * rstd * g + b);
    }
    out
}

pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub(crate) fn check_heads(d: usize, heads: usize) -> Result<usize, FusionError> {
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(FusionError::HeadsMismatch { d, heads });
    }
    Ok(d / heads)
}

/// Scaled dot-product attention with queries from `q_in` and keys/values
/// from `kv_in`, heads concatenated and projected by `wo`.
pub fn attention(
    q_in: ArrayView2<f64>,
    kv_in: ArrayView2<f64>,
    w: &AttentionParams,
    heads: usize,
) -> Result<Array2<f64>, FusionError> {
    attention_blocks(q_in, kv_in, &[q_in.nrows()], &[kv_in.nrows()], w, heads)
}

/// Attention over consecutive row blocks: query block `b` (of `q_lens[b]`
/// rows) attends only to key/value block `b` (of `kv_lens[b]` rows). The
/// projections run once over all rows, so the weights are read once per
/// call however many blocks there are.
pub fn attention_blocks(
    q_in: ArrayView2<f64>,
    kv_in: ArrayView2<f64>,
    q_lens: &[usize],
    kv_lens: &[usize],
    w: &AttentionParams,
    heads: usize,
) -> Result<Array2<f64>, FusionError> {
    let d = w.dim();
    if q_in.ncols() != d || kv_in.ncols() != d {
        return Err(FusionError::Shape(format!(
            "attention input width {} / {} vs weights {d}",
            q_in.ncols(),
            kv_in.ncols()
        )));
    }
    if q_lens.len() != kv_lens.len()
        || q_lens.iter().sum::<usize>() != q_in.nrows()
        || kv_lens.iter().sum::<usize>() != kv_in.nrows()
    {
        return Err(FusionError::Shape("attention blocks do not tile the inputs".into()));
    }
    let dh = check_heads(d, heads)?;
    let q = q_in.dot(&w.wq) + &w.bq;
    let k = kv_in.dot(&w.wk) + &w.bk;
    let v = kv_in.dot(&w.wv) + &w.bv;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::zeros((q_in.nrows(), d));
    let (mut qo, mut ko) = (0, 0);
    for (&nq, &nk) in q_lens.iter().zip(kv_lens) {
        if nq > 0 && nk == 0 {
            return Err(FusionError::EmptyClip);
        }
        for h in 0..heads {
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let mut scores = q.slice(s![qo..qo + nq, c0..c1]).dot(&k.slice(s![ko..ko + nk, c0..c1]).t()) * scale;
            softmax_rows(&mut scores);
            concat
                .slice_mut(s![qo..qo + nq, c0..c1])
                .assign(&scores.dot(&v.slice(s![ko..ko + nk, c0..c1])));
        }
        qo += nq;
        ko += nk;
    }
    Ok(concat.dot(&w.wo) + &w.bo)
}

fn block_means(x: ArrayView2<f64>, lens: &[usize]) -> Vec<Array1<f64>> {
    let mut out = Vec::with_capacity(lens.len());
    let mut o = 0;
    for &n in lens {
        out.push(x.slice(s![o..o + n, ..]).mean_axis(Axis(0)).expect("blocks are non-empty"));
        o += n;
    }
    out
}

fn stack_clips(clips: &[ArrayView2<f64>]) -> Result<(Array2<f64>, Vec<usize>), FusionError> {
    let d = clips.first().map_or(0, |c| c.ncols());
    for c in clips {
        nonempty(*c)?;
        if c.ncols() != d {
            return Err(FusionError::Shape(format!("clip width {} vs {d}", c.ncols())));
        }
    }
    let stacked = ndarray::concatenate(Axis(0), clips).expect("widths checked");
    Ok((stacked, clips.iter().map(|c| c.nrows()).collect()))
}

pub fn self_attention(x: ArrayView2<f64>, w: &AttentionParams, heads: usize) -> Result<Array2<f64>, FusionError> {
    attention(x, x, w, heads)
}

/// Gaussian error linear unit, exact erf form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn mlp_block(x: ArrayView2<f64>, w: &MlpParams) -> Result<Array2<f64>, FusionError> {
    if x.ncols() != w.w1.nrows() || w.w1.ncols() != w.w2.nrows() {
        return Err(FusionError::Shape(format!(
            "mlp input width {} vs w1 {:?}, w2 {:?}",
            x.ncols(),
            w.w1.dim(),
            w.w2.dim()
        )));
    }
    let hidden = (x.dot(&w.w1) + &w.b1).mapv(gelu);
    Ok(hidden.dot(&w.w2) + &w.b2)
}

fn nonempty(x: ArrayView2<f64>) -> Result<(), FusionError> {
    if x.nrows() == 0 {
        Err(FusionError::EmptyClip)
    } else {
        Ok(())
    }
}

pub fn fuse_average(x: ArrayView2<f64>) -> Result<Array1<f64>, FusionError> {
    nonempty(x)?;
    Ok(x.mean_axis(Axis(0)).expect("non-empty"))
}

/// `Avg(SA(X))`
pub fn fuse_attention(x: ArrayView2<f64>, w: &AttentionParams, heads: usize) -> Result<Array1<f64>, FusionError> {
    nonempty(x)?;
    fuse_average(self_attention(x, w, heads)?.view())
}

/// Pre-LN residual block: `X + SA(LN(X))`, then `+ MLP(LN(.))`, then a
/// row mean.
pub fn fuse_self(
    x: ArrayView2<f64>,
    ln1: &LayerNormParams,
    attn: &AttentionParams,
    ln2: &LayerNormParams,
    mlp: &MlpParams,
    heads: usize,
) -> Result<Array1<f64>, FusionError> {
    nonempty(x)?;
    let enhanced = &x + &self_attention(layer_norm(x, ln1).view(), attn, heads)?;
    let refined = &enhanced + &mlp_block(layer_norm(enhanced.view(), ln2).view(), mlp)?;
    fuse_average(refined.view())
}

/// `Avg(MLP(SA(X)))` without residuals or layer norm.
pub fn fuse_self_noresidual(
    x: ArrayView2<f64>,
    attn: &AttentionParams,
    mlp: &MlpParams,
    heads: usize,
) -> Result<Array1<f64>, FusionError> {
    nonempty(x)?;
    let attended = self_attention(x, attn, heads)?;
    fuse_average(mlp_block(attended.view(), mlp)?.view())
}

/// Sequential cross-attention: the running fused vector queries the next
/// element. The first row passes through unchanged.
pub fn fuse_cross(x: ArrayView2<f64>, w: &AttentionParams, heads: usize) -> Result<Array1<f64>, FusionError> {
    nonempty(x)?;
    let mut fused = x.row(0).to_owned();
    for i in 1..x.nrows() {
        let q = fused.view().insert_axis(Axis(0));
        let kv = x.slice(s![i..i + 1, ..]);
        fused = attention(q, kv, w, heads)?.row(0).to_owned();
    }
    Ok(fused)
}

/// `FC(Pool(SA(Concat(X, lang))))` where Pool is a row mean followed by a
/// `d × d` projection.
pub fn concat_score(
    x: ArrayView2<f64>,
    lang: ArrayView1<f64>,
    attn: &AttentionParams,
    w: &ConcatScorerParams,
    heads: usize,
) -> Result<f64, FusionError> {
    nonempty(x)?;
    if lang.len() != x.ncols() {
        return Err(FusionError::Shape(format!(
            "language feature width {} vs clip width {}",
            lang.len(),
            x.ncols()
        )));
    }
    let stacked = ndarray::concatenate(Axis(0), &[x, lang.insert_axis(Axis(0))])
        .expect("widths checked");
    let pooled = fuse_average(self_attention(stacked.view(), attn, heads)?.view())?;
    let projected = pooled.dot(&w.pool_w) + &w.pool_b;
    Ok(projected.dot(&w.fc_w) + w.fc_b)
}
