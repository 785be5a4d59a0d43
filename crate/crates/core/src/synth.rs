//! Seeded synthetic scenes with known ground truth: identities drawn around
//! category prototypes, linear box motion with reflection, occlusion
//! windows, misses, label flips and false positives.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::iou;
use crate::ingest::{
    canonical_cmp, write_detections, write_groundtruth, write_vocabulary, BBox, DetectionRecord, FrameMap,
    GroundTruthTrack, IngestError, Split, Vocabulary, VocabularyEntry,
};
use crate::train::TrainPair;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Identity `identity` is invisible on frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occlusion {
    pub identity: u64,
    pub start: u64,
    pub end: u64,
}

/// Confidences are `lo + (hi − lo)·Beta(a, b)` with a range per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceModel {
    pub beta_a: f64,
    pub beta_b: f64,
    pub correct: (f64, f64),
    pub flipped: (f64, f64),
    pub false_positive: (f64, f64),
    /// Floor applied to correct, noiseless detections.
    pub noiseless_floor: f64,
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        Self {
            beta_a: 2.0,
            beta_b: 2.0,
            correct: (0.5, 1.0),
            flipped: (0.3, 0.8),
            false_positive: (0.05, 0.5),
            noiseless_floor: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_identities: usize,
    pub n_frames: u64,
    pub n_categories: usize,
    /// Number of categories in the novel split (the last ones by id).
    pub n_novel: usize,
    pub embed_dim: usize,
    /// Per-coordinate standard deviation of observation noise.
    pub noise_sigma: f64,
    /// Spread of identity prototypes around their category prototype,
    /// as a norm ratio: cosine to the category is about `1/sqrt(1+s²)`.
    pub identity_spread: f64,
    /// Spread of attribute embeddings around the category prototype.
    pub attr_spread: f64,
    pub occlusions: Vec<Occlusion>,
    pub miss_rate: f64,
    /// Mean number of false positives per frame.
    pub fp_rate: f64,
    pub label_flip_prob: f64,
    pub confidence: ConfidenceModel,
    pub scene_size: (f64, f64),
    pub box_size: (f64, f64),
    pub max_speed: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            n_frames: 100,
            n_categories: 8,
            n_novel: 4,
            embed_dim: 64,
            noise_sigma: 0.0,
            identity_spread: 1.0,
            attr_spread: 0.3,
            occlusions: Vec::new(),
            miss_rate: 0.0,
            fp_rate: 0.0,
            label_flip_prob: 0.0,
            confidence: ConfidenceModel::default(),
            scene_size: (1280.0, 720.0),
            box_size: (40.0, 120.0),
            max_speed: 8.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n_categories == 0 || self.embed_dim == 0 {
            return bad("n_categories and embed_dim must be positive");
        }
        if self.n_novel > self.n_categories {
            return bad("n_novel exceeds n_categories");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        if !(self.identity_spread >= 0.0 && self.attr_spread >= 0.0) {
            return bad("spreads must be non-negative");
        }
        if !(0.0..1.0).contains(&self.miss_rate) || !(0.0..1.0).contains(&self.label_flip_prob) {
            return bad("miss_rate and label_flip_prob must lie in [0, 1)");
        }
        if !(self.fp_rate >= 0.0 && self.fp_rate.is_finite()) {
            return bad("fp_rate must be non-negative");
        }
        let c = &self.confidence;
        if !(c.beta_a > 0.0 && c.beta_b > 0.0) {
            return bad("beta parameters must be positive");
        }
        for (lo, hi) in [c.correct, c.flipped, c.false_positive] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad("confidence ranges must satisfy 0 <= lo <= hi <= 1");
            }
        }
        let (w, h) = self.scene_size;
        let (bmin, bmax) = self.box_size;
        if !(bmin > 0.0 && bmin <= bmax && bmax < w.min(h)) {
            return bad("box sizes must be positive and fit the scene");
        }
        if self.n_categories < 2 && self.label_flip_prob > 0.0 {
            return bad("label flips need at least two categories");
        }
        for o in &self.occlusions {
            if o.identity == 0 || o.identity > self.n_identities as u64 || o.start > o.end {
                return bad("occlusion refers to an unknown identity or an empty range");
            }
        }
        Ok(())
    }
}

/// A generated scene. Identities are numbered from 1 and categories from 1.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub gt_tracks: Vec<GroundTruthTrack>,
    pub detections: FrameMap,
    /// Source identity of each detection, aligned with `detections`;
    /// `None` marks a false positive.
    pub det_identity: BTreeMap<u64, Vec<Option<u64>>>,
    pub prototypes: BTreeMap<u64, Vec<f32>>,
    pub category_prototypes: BTreeMap<u32, Vec<f32>>,
    pub identity_category: BTreeMap<u64, u32>,
    pub vocabulary: Vocabulary,
}

impl SynthScene {
    /// Observation embeddings of one identity in frame order.
    pub fn identity_embeddings(&self, identity: u64) -> Vec<(u64, &[f32])> {
        let mut out = Vec::new();
        for (frame, ids) in &self.det_identity {
            for (i, id) in ids.iter().enumerate() {
                if *id == Some(identity) {
                    out.push((*frame, self.detections[frame][i].embedding.as_slice()));
                }
            }
        }
        out
    }

    /// Writes `detections.jsonl`, `groundtruth.jsonl` and `vocabulary.json`.
    pub fn write(&self, dir: impl AsRef<Path>, sidecar: bool) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_detections(&self.detections, dir.join("detections.jsonl"), sidecar)?;
        write_groundtruth(&self.gt_tracks, dir.join("groundtruth.jsonl"))?;
        write_vocabulary(&self.vocabulary, dir.join("vocabulary.json"))?;
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

/// A uniformly distributed point on the unit sphere.
pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, d);
        if g.iter().any(|&x| x != 0.0) {
            return normalized(&g);
        }
    }
}

/// `normalize(center + spread·g/√d)`.
fn perturbed(rng: &mut ChaCha8Rng, center: &[f64], spread: f64) -> Vec<f64> {
    let scale = spread / (center.len() as f64).sqrt();
    let g = gaussian(rng, center.len());
    normalized(&center.iter().zip(&g).map(|(c, n)| c + scale * n).collect::<Vec<_>>())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn sample_conf(rng: &mut ChaCha8Rng, beta: &Beta<f64>, range: (f64, f64)) -> f64 {
    range.0 + (range.1 - range.0) * beta.sample(rng)
}

/// Independent random stream for one purpose.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_PROTOTYPES: u64 = 1;
const STREAM_MOTION: u64 = 2;
const STREAM_OBSERVATIONS: u64 = 3;
const STREAM_FALSE_POSITIVES: u64 = 4;

struct Mover {
    pos: [f64; 2],
    vel: [f64; 2],
    size: [f64; 2],
}

impl Mover {
    fn bbox(&self) -> BBox {
        [self.pos[0], self.pos[1], self.size[0], self.size[1]]
    }

    fn advance(&mut self, bounds: (f64, f64)) {
        let limits = [bounds.0 - self.size[0], bounds.1 - self.size[1]];
        for ((pos, vel), limit) in self.pos.iter_mut().zip(&mut self.vel).zip(limits) {
            let mut p = *pos + *vel;
            if p < 0.0 {
                p = -p;
                *vel = -*vel;
            } else if p > limit {
                p = 2.0 * limit - p;
                *vel = -*vel;
            }
            *pos = p.clamp(0.0, limit);
        }
    }
}

pub fn gen_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let beta = Beta::new(cfg.confidence.beta_a, cfg.confidence.beta_b)
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let mut proto_rng = stream(cfg.seed, STREAM_PROTOTYPES);
    let cat_protos: Vec<Vec<f64>> = (0..cfg.n_categories).map(|_| random_unit(&mut proto_rng, d)).collect();
    let mut entries = Vec::with_capacity(cfg.n_categories);
    let mut category_prototypes = BTreeMap::new();
    for (k, proto) in cat_protos.iter().enumerate() {
        let id = k as u32 + 1;
        let attr = perturbed(&mut proto_rng, proto, cfg.attr_spread);
        let split = if k >= cfg.n_categories - cfg.n_novel { Split::Novel } else { Split::Base };
        entries.push(VocabularyEntry {
            category_id: id,
            name: format!("category_{id}"),
            split,
            description: format!("synthetic object class number {id}"),
            cate_embedding: to_f32(proto),
            attr_embedding: to_f32(&attr),
        });
        category_prototypes.insert(id, to_f32(proto));
    }
    let vocabulary = Vocabulary::new(d, entries)?;

    let mut identity_category = BTreeMap::new();
    let mut protos64 = BTreeMap::new();
    let mut prototypes = BTreeMap::new();
    for i in 1..=cfg.n_identities as u64 {
        let cat = proto_rng.random_range(0..cfg.n_categories);
        let proto = perturbed(&mut proto_rng, &cat_protos[cat], cfg.identity_spread);
        identity_category.insert(i, cat as u32 + 1);
        prototypes.insert(i, to_f32(&proto));
        protos64.insert(i, proto);
    }

    let mut motion_rng = stream(cfg.seed, STREAM_MOTION);
    let (sw, sh) = cfg.scene_size;
    let mut movers: Vec<Mover> = (0..cfg.n_identities)
        .map(|_| {
            let size = [
                motion_rng.random_range(cfg.box_size.0..=cfg.box_size.1),
                motion_rng.random_range(cfg.box_size.0..=cfg.box_size.1),
            ];
            let pos = [
                motion_rng.random_range(0.0..=sw - size[0]),
                motion_rng.random_range(0.0..=sh - size[1]),
            ];
            let vel = [
                motion_rng.random_range(-cfg.max_speed..=cfg.max_speed),
                motion_rng.random_range(-cfg.max_speed..=cfg.max_speed),
            ];
            Mover { pos, vel, size }
        })
        .collect();

    let occluded = |id: u64, frame: u64| {
        cfg.occlusions
            .iter()
            .any(|o| o.identity == id && (o.start..o.end).contains(&frame))
    };

    let mut obs_rng = stream(cfg.seed, STREAM_OBSERVATIONS);
    let mut fp_rng = stream(cfg.seed, STREAM_FALSE_POSITIVES);
    let poisson = if cfg.fp_rate > 0.0 {
        Some(Poisson::new(cfg.fp_rate).map_err(|e| SynthError::InvalidConfig(e.to_string()))?)
    } else {
        None
    };
    let mut gt_boxes: Vec<BTreeMap<u64, BBox>> = vec![BTreeMap::new(); cfg.n_identities];
    let mut detections = FrameMap::new();
    let mut det_identity = BTreeMap::new();

    for frame in 0..cfg.n_frames {
        let mut frame_dets: Vec<(DetectionRecord, Option<u64>)> = Vec::new();
        let mut visible_boxes = Vec::new();
        for (idx, mover) in movers.iter_mut().enumerate() {
            if frame > 0 {
                mover.advance(cfg.scene_size);
            }
            let id = idx as u64 + 1;
            // Every draw happens regardless of outcome so that toggling one
            // corruption leaves the others unchanged.
            let noise = gaussian(&mut obs_rng, d);
            let missed = obs_rng.random::<f64>() < cfg.miss_rate;
            let flipped = obs_rng.random::<f64>() < cfg.label_flip_prob;
            let other = obs_rng.random_range(0..cfg.n_categories.max(2) - 1) as u32;
            let u = beta.sample(&mut obs_rng);
            if occluded(id, frame) {
                continue;
            }
            let bbox = mover.bbox();
            gt_boxes[idx].insert(frame, bbox);
            visible_boxes.push(bbox);
            if missed {
                continue;
            }
            let true_cat = identity_category[&id];
            let category_id = if flipped {
                // uniform over the other categories
                let o = other + 1;
                if o >= true_cat {
                    o + 1
                } else {
                    o
                }
            } else {
                true_cat
            };
            let cm = &cfg.confidence;
            let range = if flipped { cm.flipped } else { cm.correct };
            let mut confidence = range.0 + (range.1 - range.0) * u;
            if cfg.noise_sigma == 0.0 && !flipped {
                confidence = cm.noiseless_floor.max(confidence);
            }
            let embedding = if cfg.noise_sigma == 0.0 {
                prototypes[&id].clone()
            } else {
                let p = &protos64[&id];
                to_f32(&normalized(
                    &p.iter().zip(&noise).map(|(a, n)| a + cfg.noise_sigma * n).collect::<Vec<_>>(),
                ))
            };
            frame_dets.push((
                DetectionRecord {
                    frame,
                    bbox,
                    confidence,
                    category_id,
                    category_score: confidence,
                    embedding,
                },
                Some(id),
            ));
        }
        if let Some(poisson) = &poisson {
            let n_fp = poisson.sample(&mut fp_rng) as usize;
            for _ in 0..n_fp {
                let bbox = low_overlap_box(&mut fp_rng, cfg, &visible_boxes);
                let embedding = to_f32(&random_unit(&mut fp_rng, d));
                let category_id = fp_rng.random_range(0..cfg.n_categories) as u32 + 1;
                let confidence = sample_conf(&mut fp_rng, &beta, cfg.confidence.false_positive);
                frame_dets.push((
                    DetectionRecord {
                        frame,
                        bbox,
                        confidence,
                        category_id,
                        category_score: confidence,
                        embedding,
                    },
                    None,
                ));
            }
        }
        if frame_dets.is_empty() {
            continue;
        }
        frame_dets.sort_by(|a, b| canonical_cmp(&a.0, &b.0));
        det_identity.insert(frame, frame_dets.iter().map(|(_, id)| *id).collect());
        detections.insert(frame, frame_dets.into_iter().map(|(r, _)| r).collect());
    }

    let gt_tracks = gt_boxes
        .into_iter()
        .enumerate()
        .filter(|(_, boxes)| !boxes.is_empty())
        .map(|(idx, boxes)| GroundTruthTrack {
            track_id: idx as u64 + 1,
            category_id: identity_category[&(idx as u64 + 1)],
            boxes,
        })
        .collect();

    Ok(SynthScene {
        config: cfg.clone(),
        gt_tracks,
        detections,
        det_identity,
        prototypes,
        category_prototypes,
        identity_category,
        vocabulary,
    })
}

/// A box whose IoU with every visible box stays below 0.1, or the best of
/// 32 attempts.
fn low_overlap_box(rng: &mut ChaCha8Rng, cfg: &SynthConfig, visible: &[BBox]) -> BBox {
    let (sw, sh) = cfg.scene_size;
    let mut best = ([0.0; 4], f64::INFINITY);
    for _ in 0..32 {
        let w = rng.random_range(cfg.box_size.0..=cfg.box_size.1);
        let h = rng.random_range(cfg.box_size.0..=cfg.box_size.1);
        let b = [rng.random_range(0.0..=sw - w), rng.random_range(0.0..=sh - h), w, h];
        let worst = visible.iter().map(|v| iou(&b, v)).fold(0.0, f64::max);
        if worst < best.1 {
            best = (b, worst);
        }
        if worst < 0.1 {
            break;
        }
    }
    best.0
}

/// One occlusion window per identity with a length drawn from `gap` and a
/// start that leaves the identity visible before and after.
pub fn random_occlusions(n_identities: usize, n_frames: u64, gap: (u64, u64), seed: u64) -> Vec<Occlusion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n_identities as u64)
        .filter_map(|identity| {
            let len = rng.random_range(gap.0..=gap.1);
            if n_frames < len + 2 {
                return None;
            }
            let start = rng.random_range(1..=n_frames - len - 1);
            Some(Occlusion {
                identity,
                start,
                end: start + len,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Augmentations {
    /// Apply one random orthogonal transform to both clips of a pair.
    pub rotation: bool,
    /// Fraction of coordinates zeroed per clip.
    pub erase_fraction: f64,
    /// Per-coordinate factors drawn from this range, rows renormalized.
    /// `None` disables scaling.
    pub scale_range: Option<(f64, f64)>,
}

impl Default for Augmentations {
    fn default() -> Self {
        Self {
            rotation: false,
            erase_fraction: 0.0,
            scale_range: None,
        }
    }
}

/// Haar-distributed orthogonal matrix: Gram-Schmidt on a Gaussian matrix
/// (equivalently QR with a positive diagonal in R).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Array2<f64> {
    let mut q = Array2::<f64>::zeros((d, d));
    let mut i = 0;
    while i < d {
        let mut v = ndarray::Array1::from(gaussian(rng, d));
        for j in 0..i {
            let qj = q.row(j).to_owned();
            let proj = v.dot(&qj);
            v.scaled_add(-proj, &qj);
        }
        let n = v.dot(&v).sqrt();
        if n < 1e-8 {
            continue;
        }
        q.row_mut(i).assign(&(v / n));
        i += 1;
    }
    q
}

/// Zeroes `round(fraction·d)` randomly chosen coordinates of every row.
pub fn erase(clip: &mut Array2<f64>, fraction: f64, rng: &mut ChaCha8Rng) {
    let d = clip.ncols();
    let k = ((fraction * d as f64).round() as usize).min(d);
    if k == 0 {
        return;
    }
    let mut cols: Vec<usize> = (0..d).collect();
    cols.shuffle(rng);
    for &c in &cols[..k] {
        clip.column_mut(c).fill(0.0);
    }
}

/// Multiplies each coordinate by a factor from `range` and renormalizes
/// every row.
pub fn scale(clip: &mut Array2<f64>, range: (f64, f64), rng: &mut ChaCha8Rng) {
    let factors: Vec<f64> = (0..clip.ncols()).map(|_| rng.random_range(range.0..=range.1)).collect();
    for mut row in clip.rows_mut() {
        row.iter_mut().zip(&factors).for_each(|(v, f)| *v *= f);
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row.mapv_inplace(|v| v / n);
        }
    }
}

fn random_clip(rng: &mut ChaCha8Rng, emb: &[(u64, &[f32])], n_clip: usize) -> Array2<f64> {
    let len = n_clip.min(emb.len());
    let start = rng.random_range(0..=emb.len() - len);
    let rows = &emb[start..start + len];
    Array2::from_shape_fn((len, rows[0].1.len()), |(r, c)| rows[r].1[c] as f64)
}

/// Alternating positive and negative pairs of clips of `n_clip`
/// consecutive observations. Positives pair two trajectories of one
/// category (the same trajectory twice when the category has only one),
/// negatives pair trajectories of different categories.
pub fn make_train_pairs(
    scene: &SynthScene,
    n_clip: usize,
    n_pairs: usize,
    aug: &Augmentations,
    seed: u64,
) -> Result<Vec<TrainPair>, SynthError> {
    if n_clip == 0 {
        return Err(SynthError::InvalidConfig("n_clip must be positive".into()));
    }
    // category -> identities -> (frame, embedding) observations
    type Observed<'a> = Vec<(u64, &'a [f32])>;
    let mut by_cat: BTreeMap<u32, Vec<Observed>> = BTreeMap::new();
    for &id in scene.prototypes.keys() {
        let emb = scene.identity_embeddings(id);
        if !emb.is_empty() {
            by_cat.entry(scene.identity_category[&id]).or_default().push(emb);
        }
    }
    if by_cat.len() < 2 {
        return Err(SynthError::InvalidConfig("need trajectories from at least two categories".into()));
    }
    let cats: Vec<u32> = by_cat.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let y = u8::from(i % 2 == 0);
        let ca = *cats.choose(&mut rng).expect("non-empty");
        let cb = if y == 1 {
            ca
        } else {
            let mut c = *cats.choose(&mut rng).expect("non-empty");
            while c == ca {
                c = *cats.choose(&mut rng).expect("non-empty");
            }
            c
        };
        let ta = by_cat[&ca].choose(&mut rng).expect("non-empty");
        let tb = by_cat[&cb].choose(&mut rng).expect("non-empty");
        let mut clip_a = random_clip(&mut rng, ta, n_clip);
        let mut clip_b = random_clip(&mut rng, tb, n_clip);
        if aug.rotation {
            let q = random_orthogonal(&mut rng, clip_a.ncols());
            clip_a = clip_a.dot(&q);
            clip_b = clip_b.dot(&q);
        }
        for clip in [&mut clip_a, &mut clip_b] {
            erase(clip, aug.erase_fraction, &mut rng);
            if let Some(range) = aug.scale_range {
                scale(clip, range, &mut rng);
            }
        }
        pairs.push(TrainPair { clip_a, clip_b, y });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos32(a: &[f32], b: &[f32]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
        let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn noiseless_embeddings_equal_prototypes() {
        let cfg = SynthConfig {
            n_identities: 5,
            n_frames: 10,
            ..Default::default()
        };
        let s = gen_scene(&cfg).unwrap();
        for (frame, ids) in &s.det_identity {
            for (i, id) in ids.iter().enumerate() {
                let det = &s.detections[frame][i];
                let id = id.unwrap();
                assert_eq!(det.embedding, s.prototypes[&id]);
                assert_eq!(det.category_id, s.identity_category[&id]);
                assert!(det.confidence >= 0.9);
            }
        }
        assert_eq!(s.gt_tracks.len(), 5);
    }

    #[test]
    fn occlusion_gap_is_exact() {
        let cfg = SynthConfig {
            n_identities: 3,
            n_frames: 30,
            occlusions: vec![Occlusion {
                identity: 2,
                start: 10,
                end: 17,
            }],
            ..Default::default()
        };
        let s = gen_scene(&cfg).unwrap();
        let frames: Vec<u64> = s.identity_embeddings(2).iter().map(|(f, _)| *f).collect();
        let gaps: Vec<u64> = frames.windows(2).map(|w| w[1] - w[0] - 1).filter(|&g| g > 0).collect();
        assert_eq!(gaps, vec![7]);
        assert_eq!(frames.len(), 23);
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig {
            noise_sigma: 0.1,
            fp_rate: 1.0,
            label_flip_prob: 0.2,
            miss_rate: 0.1,
            ..Default::default()
        };
        let a = gen_scene(&cfg).unwrap();
        let b = gen_scene(&cfg).unwrap();
        assert_eq!(a.detections, b.detections);
        assert_eq!(a.gt_tracks, b.gt_tracks);
        assert_eq!(a.det_identity, b.det_identity);
    }

    #[test]
    fn fidelity_decreases_with_sigma() {
        let mut means = Vec::new();
        for sigma in [0.0, 0.1, 0.3] {
            let cfg = SynthConfig {
                n_identities: 10,
                n_frames: 100,
                noise_sigma: sigma,
                embed_dim: 32,
                ..Default::default()
            };
            let s = gen_scene(&cfg).unwrap();
            let mut total = 0.0;
            let mut n = 0;
            for id in 1..=10 {
                for (_, e) in s.identity_embeddings(id) {
                    total += cos32(e, &s.prototypes[&id]);
                    n += 1;
                }
            }
            assert_eq!(n, 1000);
            means.push(total / n as f64);
        }
        assert!(means[0] > means[1] && means[1] > means[2], "{means:?}");
    }

    #[test]
    fn false_positive_embeddings_are_uncorrelated() {
        let cfg = SynthConfig {
            n_identities: 4,
            n_frames: 400,
            embed_dim: 32,
            fp_rate: 3.0,
            ..Default::default()
        };
        let s = gen_scene(&cfg).unwrap();
        let mut sums = vec![0.0; 4];
        let mut n = 0;
        'outer: for (frame, ids) in &s.det_identity {
            for (i, id) in ids.iter().enumerate() {
                if id.is_none() {
                    for (k, p) in s.prototypes.values().enumerate() {
                        sums[k] += cos32(&s.detections[frame][i].embedding, p);
                    }
                    n += 1;
                    if n == 1000 {
                        break 'outer;
                    }
                }
            }
        }
        assert_eq!(n, 1000);
        for s in sums {
            assert!((s / 1000.0).abs() < 0.1);
        }
    }

    #[test]
    fn augmentations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clip = Array2::from_shape_fn((3, 6), |(r, c)| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let mut same = clip.clone();
        erase(&mut same, 0.0, &mut rng);
        assert_eq!(same, clip);

        let q = random_orthogonal(&mut rng, 6);
        let eye = q.dot(&q.t());
        for ((i, j), v) in eye.indexed_iter() {
            assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
        }
        let rotated = clip.dot(&q);
        let gram = |m: &Array2<f64>| m.dot(&m.t());
        let (g0, g1) = (gram(&clip), gram(&rotated));
        for (a, b) in g0.iter().zip(g1.iter()) {
            assert!((a - b).abs() < 1e-9);
        }

        let mut erased = clip.clone();
        erase(&mut erased, 0.5, &mut rng);
        let zero_cols = (0..6).filter(|&c| erased.column(c).iter().all(|&v| v == 0.0)).count();
        assert!(zero_cols >= 3);
    }

    #[test]
    fn pair_balance_and_shape() {
        let cfg = SynthConfig {
            n_identities: 6,
            n_categories: 2,
            n_novel: 0,
            n_frames: 20,
            embed_dim: 8,
            ..Default::default()
        };
        let s = gen_scene(&cfg).unwrap();
        let pairs = make_train_pairs(&s, 5, 10, &Augmentations::default(), 1).unwrap();
        assert_eq!(pairs.len(), 10);
        assert_eq!(pairs.iter().filter(|p| p.y == 1).count(), 5);
        for p in &pairs {
            assert_eq!(p.clip_a.dim(), (5, 8));
        }
    }
}
