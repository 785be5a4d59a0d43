//! Brute-force reference implementations written with plain loops over
//! `Vec<Vec<f64>>`, independent of the library's ndarray code paths.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajkit::fusion::{AttentionParams, ConcatScorerParams, LayerNormParams, MlpParams};
use trajkit::ingest::{BBox, GroundTruthTrack};

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn vec1(a: &Array1<f64>) -> Vec<f64> {
    a.to_vec()
}

/// Max-norm relative error `‖a − b‖∞ / max(‖b‖∞, 1e-300)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-300);
    num / den
}

pub fn rel_err_mat(a: &Mat, b: &Mat) -> f64 {
    let fa: Vec<f64> = a.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.iter().flatten().copied().collect();
    rel_err(&fa, &fb)
}

// ---- random instances ----

pub fn rand_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-scale..scale))
}

pub fn rand_vec(r: &mut ChaCha8Rng, n: usize, scale: f64) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| r.random_range(-scale..scale))
}

pub fn rand_ln(r: &mut ChaCha8Rng, d: usize) -> LayerNormParams {
    LayerNormParams {
        gamma: Array1::from_shape_fn(d, |_| r.random_range(0.5..1.5)),
        beta: rand_vec(r, d, 0.3),
        eps: 1e-5,
    }
}

pub fn rand_attn(r: &mut ChaCha8Rng, d: usize) -> AttentionParams {
    let s = 1.0 / (d as f64).sqrt();
    AttentionParams {
        wq: rand_mat(r, d, d, s),
        wk: rand_mat(r, d, d, s),
        wv: rand_mat(r, d, d, s),
        wo: rand_mat(r, d, d, s),
        bq: rand_vec(r, d, 0.1),
        bk: rand_vec(r, d, 0.1),
        bv: rand_vec(r, d, 0.1),
        bo: rand_vec(r, d, 0.1),
    }
}

pub fn rand_mlp(r: &mut ChaCha8Rng, d: usize, h: usize) -> MlpParams {
    MlpParams {
        w1: rand_mat(r, d, h, 1.0 / (d as f64).sqrt()),
        b1: rand_vec(r, h, 0.1),
        w2: rand_mat(r, h, d, 1.0 / (h as f64).sqrt()),
        b2: rand_vec(r, d, 0.1),
    }
}

pub fn rand_concat(r: &mut ChaCha8Rng, d: usize) -> ConcatScorerParams {
    let s = 1.0 / (d as f64).sqrt();
    ConcatScorerParams {
        pool_w: rand_mat(r, d, d, s),
        pool_b: rand_vec(r, d, 0.1),
        fc_w: rand_vec(r, d, s),
        fc_b: r.random_range(-0.1..0.1),
    }
}

/// Divisors of `d` usable as head counts.
pub fn rand_heads(r: &mut ChaCha8Rng, d: usize) -> usize {
    let divisors: Vec<usize> = (1..=d).filter(|h| d.is_multiple_of(*h) && *h <= 4).collect();
    divisors[r.random_range(0..divisors.len())]
}

// ---- arithmetic oracles ----

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn add_bias(a: &Mat, b: &[f64]) -> Mat {
    a.iter().map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect()).collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn mean_rows(a: &Mat) -> Vec<f64> {
    let n = a.len() as f64;
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

pub fn update_memory(mem: &[f32], det: &[f32], alpha: f64) -> Vec<f64> {
    mem.iter()
        .zip(det)
        .map(|(m, d)| alpha * *d as f64 + (1.0 - alpha) * *m as f64)
        .collect()
}

pub fn contrastive_loss(fa: &[f64], fb: &[f64], y: u8, margin: f64) -> f64 {
    let d = fa.iter().zip(fb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if y == 1 {
        0.5 * d * d
    } else {
        let h = if margin > d { margin - d } else { 0.0 };
        0.5 * h * h
    }
}

pub fn layer_norm(x: &Mat, p: &LayerNormParams) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / (var + p.eps).sqrt() * p.gamma[j] + p.beta[j])
                .collect()
        })
        .collect()
}

pub fn attention(q_in: &Mat, kv_in: &Mat, w: &AttentionParams, heads: usize) -> Mat {
    let d = w.wq.nrows();
    let dh = d / heads;
    let q = add_bias(&matmul(q_in, &mat(&w.wq)), w.bq.as_slice().unwrap());
    let k = add_bias(&matmul(kv_in, &mat(&w.wk)), w.bk.as_slice().unwrap());
    let v = add_bias(&matmul(kv_in, &mat(&w.wv)), w.bv.as_slice().unwrap());
    let mut concat = vec![vec![0.0; d]; q_in.len()];
    for h in 0..heads {
        let lo = h * dh;
        for i in 0..q_in.len() {
            let logits: Vec<f64> = (0..kv_in.len())
                .map(|j| (lo..lo + dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
            let z: f64 = exps.iter().sum();
            for c in lo..lo + dh {
                concat[i][c] = (0..kv_in.len()).map(|j| exps[j] / z * v[j][c]).sum();
            }
        }
    }
    add_bias(&matmul(&concat, &mat(&w.wo)), w.bo.as_slice().unwrap())
}

/// `erf` by composite Simpson integration of `2/√π·exp(−t²)`.
pub fn erf(x: f64) -> f64 {
    let n = 2000;
    let h = x / n as f64;
    let f = |t: f64| (-t * t).exp();
    let mut s = f(0.0) + f(x);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / 2f64.sqrt()))
}

pub fn mlp(x: &Mat, w: &MlpParams) -> Mat {
    let h = add_bias(&matmul(x, &mat(&w.w1)), w.b1.as_slice().unwrap());
    let h: Mat = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    add_bias(&matmul(&h, &mat(&w.w2)), w.b2.as_slice().unwrap())
}

pub fn fuse_average(x: &Mat) -> Vec<f64> {
    mean_rows(x)
}

pub fn fuse_attention(x: &Mat, w: &AttentionParams, heads: usize) -> Vec<f64> {
    mean_rows(&attention(x, x, w, heads))
}

pub fn fuse_self(
    x: &Mat,
    ln1: &LayerNormParams,
    attn: &AttentionParams,
    ln2: &LayerNormParams,
    m: &MlpParams,
    heads: usize,
) -> Vec<f64> {
    let a = layer_norm(x, ln1);
    let enhanced = add(x, &attention(&a, &a, attn, heads));
    let refined = add(&enhanced, &mlp(&layer_norm(&enhanced, ln2), m));
    mean_rows(&refined)
}

pub fn fuse_self_noresidual(x: &Mat, attn: &AttentionParams, m: &MlpParams, heads: usize) -> Vec<f64> {
    mean_rows(&mlp(&attention(x, x, attn, heads), m))
}

pub fn fuse_cross(x: &Mat, w: &AttentionParams, heads: usize) -> Vec<f64> {
    let mut fused = x[0].clone();
    for row in &x[1..] {
        fused = attention(&vec![fused], &vec![row.clone()], w, heads).remove(0);
    }
    fused
}

pub fn concat_score(x: &Mat, lang: &[f64], attn: &AttentionParams, c: &ConcatScorerParams, heads: usize) -> f64 {
    let mut stacked = x.clone();
    stacked.push(lang.to_vec());
    let pooled = mean_rows(&attention(&stacked, &stacked, attn, heads));
    let projected = add_bias(&matmul(&vec![pooled], &mat(&c.pool_w)), c.pool_b.as_slice().unwrap());
    projected[0].iter().zip(c.fc_w.iter()).map(|(a, b)| a * b).sum::<f64>() + c.fc_b
}

// ---- evaluator oracle ----

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let x1 = a[0].max(b[0]);
    let y1 = a[1].max(b[1]);
    let x2 = (a[0] + a[2]).min(b[0] + b[2]);
    let y2 = (a[1] + a[3]).min(b[1] + b[3]);
    let inter = (x2 - x1).max(0.0) * (y2 - y1).max(0.0);
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Every partial one-to-one matching over valid pairs, keeping the one with
/// the largest total IoU.
pub fn best_matching(ious: &[Vec<f64>], thr: f64) -> Vec<(usize, usize)> {
    fn rec(
        i: usize,
        ious: &[Vec<f64>],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        cur_sum: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if i == ious.len() {
            if cur_sum > best.0 {
                *best = (cur_sum, cur.clone());
            }
            return;
        }
        rec(i + 1, ious, thr, used, cur, cur_sum, best);
        for g in 0..used.len() {
            if !used[g] && ious[i][g] >= thr {
                used[g] = true;
                cur.push((i, g));
                rec(i + 1, ious, thr, used, cur, cur_sum + ious[i][g], best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let n_g = ious.first().map_or(0, |r| r.len());
    let mut best = (-1.0, Vec::new());
    rec(0, ious, thr, &mut vec![false; n_g], &mut Vec::new(), 0.0, &mut best);
    best.1
}

pub struct OraclePred {
    pub label: u32,
    pub boxes: BTreeMap<u64, BBox>,
}

/// `(LocA, AssA, ClsA)` computed from scratch.
pub fn evaluate(preds: &[OraclePred], gts: &[GroundTruthTrack], thr: f64) -> (f64, f64, f64) {
    let mut frames: Vec<u64> = preds
        .iter()
        .flat_map(|p| p.boxes.keys().copied())
        .chain(gts.iter().flat_map(|g| g.boxes.keys().copied()))
        .collect();
    frames.sort_unstable();
    frames.dedup();
    let mut matches: Vec<(usize, usize)> = Vec::new();
    let (mut fp, mut fn_) = (0usize, 0usize);
    for f in frames {
        let pi: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].boxes.contains_key(&f)).collect();
        let gi: Vec<usize> = (0..gts.len()).filter(|&i| gts[i].boxes.contains_key(&f)).collect();
        let ious: Vec<Vec<f64>> = pi
            .iter()
            .map(|&p| gi.iter().map(|&g| iou(&preds[p].boxes[&f], &gts[g].boxes[&f])).collect())
            .collect();
        let m = best_matching(&ious, thr);
        fp += pi.len() - m.len();
        fn_ += gi.len() - m.len();
        matches.extend(m.iter().map(|&(p, g)| (pi[p], gi[g])));
    }
    let tp = matches.len();
    let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
    for m in &matches {
        *counts.entry(*m).or_default() += 1;
    }
    let mut ass = 0.0;
    let mut cls = 0;
    for &(p, g) in &matches {
        let tpa = counts[&(p, g)] as f64;
        let fna = gts[g].boxes.len() as f64 - tpa;
        let fpa = preds[p].boxes.len() as f64 - tpa;
        ass += tpa / (tpa + fna + fpa);
        if preds[p].label == gts[g].category_id {
            cls += 1;
        }
    }
    let tp_f = tp as f64;
    let loc = if tp + fp + fn_ > 0 { 100.0 * tp_f / (tp + fp + fn_) as f64 } else { 0.0 };
    let ass = if tp > 0 { 100.0 * ass / tp_f } else { 0.0 };
    let cls = if tp > 0 { 100.0 * cls as f64 / tp_f } else { 0.0 };
    (loc, ass, cls)
}

/// Small random scene: up to four objects per frame with jittered copies
/// of ground truth, swaps and spurious boxes.
pub fn micro_scene(seed: u64) -> (Vec<OraclePred>, Vec<GroundTruthTrack>) {
    let mut r = rng(seed);
    let n_gt = r.random_range(1..=4usize);
    let n_frames = r.random_range(3..=6u64);
    let mut gts = Vec::new();
    for g in 0..n_gt {
        let mut boxes = BTreeMap::new();
        let (x, y) = (r.random_range(0.0..60.0), r.random_range(0.0..60.0));
        for f in 0..n_frames {
            if r.random::<f64>() < 0.85 {
                boxes.insert(f, [x + f as f64 * r.random_range(0.0..3.0), y, r.random_range(18.0..25.0), 20.0]);
            }
        }
        if boxes.is_empty() {
            boxes.insert(0, [x, y, 20.0, 20.0]);
        }
        gts.push(GroundTruthTrack {
            track_id: g as u64 + 1,
            category_id: r.random_range(1..=3),
            boxes,
        });
    }
    let n_pred = r.random_range(1..=4usize);
    let mut preds: Vec<OraclePred> = (0..n_pred)
        .map(|_| OraclePred {
            label: r.random_range(1..=3),
            boxes: BTreeMap::new(),
        })
        .collect();
    for f in 0..n_frames {
        for g in &gts {
            if let Some(b) = g.boxes.get(&f) {
                let p = r.random_range(0..n_pred);
                if !preds[p].boxes.contains_key(&f) && r.random::<f64>() < 0.9 {
                    let j = |r: &mut ChaCha8Rng| r.random_range(-4.0..4.0);
                    preds[p].boxes.insert(f, [b[0] + j(&mut r), b[1] + j(&mut r), b[2], b[3]]);
                }
            }
        }
        for p in preds.iter_mut() {
            if !p.boxes.contains_key(&f) && r.random::<f64>() < 0.15 {
                p.boxes.insert(f, [r.random_range(0.0..80.0), r.random_range(0.0..80.0), 20.0, 20.0]);
            }
        }
    }
    preds.retain(|p| !p.boxes.is_empty());
    (preds, gts)
}
