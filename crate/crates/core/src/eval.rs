//! TETA-style tracking evaluation split into localization, association and
//! classification accuracy, reported overall and per base/novel split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::{BBox, GroundTruthTrack, Split, TrackRecord};

/// Intersection over union of two `(x, y, w, h)` boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a[2] * a[3] + b[2] * b[3] - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Minimum-cost assignment on a rectangular cost matrix (rows ≤ cols after
/// an internal transpose). Returns, for each row, its assigned column.
///
/// Shortest augmenting path formulation with row/column potentials,
/// O(n²·m).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let col_to_row = hungarian(&t);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // 1-based arrays; index 0 is a virtual column.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// Maximum-total-IoU one-to-one matching restricted to pairs at or above
/// the threshold. Returns `(pred_index, gt_index)` pairs sorted by pred.
pub fn frame_matching(preds: &[BBox], gts: &[BBox], iou_threshold: f64) -> Vec<(usize, usize)> {
    if preds.is_empty() || gts.is_empty() {
        return Vec::new();
    }
    let ious: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| iou(p, g)).collect()).collect();
    // Sub-threshold pairs cost the same as leaving both unmatched.
    let cost: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|&v| if v >= iou_threshold { -v } else { 0.0 }).collect())
        .collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(p, g)| g.filter(|&g| ious[p][g] >= iou_threshold).map(|g| (p, g)))
        .collect()
}

/// A predicted trajectory reduced to what the evaluator needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredTrack {
    pub track_id: u64,
    pub label: Option<u32>,
    pub boxes: BTreeMap<u64, BBox>,
}

impl PredTrack {
    /// Uses the trajectory-level label when present, otherwise the last
    /// retained per-frame category.
    pub fn from_record(r: &TrackRecord) -> Self {
        let label = r
            .label
            .map(|l| l.label)
            .or_else(|| r.observations.iter().max_by_key(|o| o.frame).map(|o| o.category));
        Self {
            track_id: r.track_id,
            label,
            boxes: r.observations.iter().map(|o| (o.frame, o.bbox)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    #[serde(skip)]
    pub splits: BTreeMap<u32, Split>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            splits: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub loc_a: f64,
    pub ass_a: f64,
    pub cls_a: f64,
    pub teta: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Scores,
    pub base: Scores,
    pub novel: Scores,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
            "split", "TETA", "LocA", "AssA", "ClsA", "TP", "FP", "FN"
        )?;
        for (name, s) in [("overall", &self.overall), ("base", &self.base), ("novel", &self.novel)] {
            writeln!(
                f,
                "{:<8} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
                name, s.teta, s.loc_a, s.ass_a, s.cls_a, s.tp, s.fp, s.fn_
            )?;
        }
        Ok(())
    }
}

/// One matched (pred, gt) pair in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameMatch {
    pub frame: u64,
    pub pred: usize,
    pub gt: usize,
}

/// Per-frame optimal matches plus unmatched counts, indexed into the
/// input slices.
#[derive(Debug, Clone, Default)]
pub struct MatchSet {
    pub matches: Vec<FrameMatch>,
    /// Unmatched prediction boxes, by pred index.
    pub unmatched_preds: Vec<usize>,
    /// Unmatched ground-truth boxes, by gt index.
    pub unmatched_gts: Vec<usize>,
}

pub fn match_sequence(preds: &[PredTrack], gts: &[GroundTruthTrack], iou_threshold: f64) -> MatchSet {
    let mut frames: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in preds.iter().enumerate() {
        for &f in p.boxes.keys() {
            frames.entry(f).or_default().0.push(i);
        }
    }
    for (i, g) in gts.iter().enumerate() {
        for &f in g.boxes.keys() {
            frames.entry(f).or_default().1.push(i);
        }
    }
    let mut out = MatchSet::default();
    for (frame, (pi, gi)) in frames {
        let pb: Vec<BBox> = pi.iter().map(|&i| preds[i].boxes[&frame]).collect();
        let gb: Vec<BBox> = gi.iter().map(|&i| gts[i].boxes[&frame]).collect();
        let pairs = frame_matching(&pb, &gb, iou_threshold);
        let mut p_used = vec![false; pi.len()];
        let mut g_used = vec![false; gi.len()];
        for (p, g) in pairs {
            p_used[p] = true;
            g_used[g] = true;
            out.matches.push(FrameMatch {
                frame,
                pred: pi[p],
                gt: gi[g],
            });
        }
        out.unmatched_preds.extend(pi.iter().zip(&p_used).filter(|(_, u)| !**u).map(|(i, _)| *i));
        out.unmatched_gts.extend(gi.iter().zip(&g_used).filter(|(_, u)| !**u).map(|(i, _)| *i));
    }
    out
}

fn pct(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        100.0 * num / den
    } else {
        0.0
    }
}

/// Scores from a precomputed matching. `keep_gt` and `keep_pred` select
/// the ground truth and unmatched predictions belonging to a split.
pub fn score_matches(
    preds: &[PredTrack],
    gts: &[GroundTruthTrack],
    m: &MatchSet,
    keep_gt: impl Fn(&GroundTruthTrack) -> bool,
    keep_pred: impl Fn(&PredTrack) -> bool,
) -> Scores {
    let mut pair_tpa: HashMap<(usize, usize), usize> = HashMap::new();
    for fm in &m.matches {
        *pair_tpa.entry((fm.pred, fm.gt)).or_default() += 1;
    }
    let tps: Vec<&FrameMatch> = m.matches.iter().filter(|fm| keep_gt(&gts[fm.gt])).collect();
    let tp = tps.len();
    let fn_ = m.unmatched_gts.iter().filter(|&&g| keep_gt(&gts[g])).count();
    let fp = m.unmatched_preds.iter().filter(|&&p| keep_pred(&preds[p])).count();

    let mut ass_sum = 0.0;
    let mut correct = 0usize;
    for fm in &tps {
        let tpa = pair_tpa[&(fm.pred, fm.gt)];
        let fna = gts[fm.gt].boxes.len() - tpa;
        let fpa = preds[fm.pred].boxes.len() - tpa;
        ass_sum += tpa as f64 / (tpa + fna + fpa) as f64;
        if preds[fm.pred].label == Some(gts[fm.gt].category_id) {
            correct += 1;
        }
    }
    let loc_a = pct(tp as f64, (tp + fp + fn_) as f64);
    let ass_a = pct(ass_sum, tp as f64);
    let cls_a = pct(correct as f64, tp as f64);
    Scores {
        loc_a,
        ass_a,
        cls_a,
        teta: (loc_a + ass_a + cls_a) / 3.0,
        tp,
        fp,
        fn_,
    }
}

/// Evaluates predicted tracks against ground truth. Split scores keep the
/// ground truth of that split, its matches, and unmatched predictions whose
/// label falls in the split.
pub fn evaluate(preds: &[PredTrack], gts: &[GroundTruthTrack], cfg: &EvalConfig) -> EvalReport {
    let m = match_sequence(preds, gts, cfg.iou_threshold);
    let split_of = |c: Option<u32>| c.and_then(|c| cfg.splits.get(&c).copied());
    let for_split = |s: Split| {
        score_matches(
            preds,
            gts,
            &m,
            |g| split_of(Some(g.category_id)) == Some(s),
            |p| split_of(p.label) == Some(s),
        )
    };
    EvalReport {
        overall: score_matches(preds, gts, &m, |_| true, |_| true),
        base: for_split(Split::Base),
        novel: for_split(Split::Novel),
    }
}

/// Fraction (in percent) of matched detections whose per-frame category is
/// correct. `frame_label` maps (pred track index, frame) to a label.
pub fn per_frame_accuracy(
    preds: &[PredTrack],
    gts: &[GroundTruthTrack],
    iou_threshold: f64,
    frame_label: impl Fn(usize, u64) -> Option<u32>,
) -> f64 {
    let m = match_sequence(preds, gts, iou_threshold);
    let correct = m
        .matches
        .iter()
        .filter(|fm| frame_label(fm.pred, fm.frame) == Some(gts[fm.gt].category_id))
        .count();
    pct(correct as f64, m.matches.len() as f64)
}
