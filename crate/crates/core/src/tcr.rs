//! Class-agnostic, appearance-only association with trajectory consistency
//! reinforcement.
//!
//! Every live track keeps an exponential-moving-average memory embedding, a
//! FIFO bank of its last matched embeddings and a FIFO bank of retained
//! category predictions. Detections are scored against the memory and the
//! bank, matched greedily in confidence order, and each match retains a
//! category through a confidence-gated majority vote.

use std::collections::{HashMap, VecDeque};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BBox, DetectionRecord, FrameMap, ObservationRecord, TrackRecord};

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("embedding length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("majority vote over an empty list")]
    EmptyVote,
    #[error("frame {frame} is not after previously processed frame {last}")]
    NonMonotonicFrame { frame: u64, last: u64 },
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error("track {track_id}: observation at frame {frame} references missing detection {det_idx}")]
    MissingDetection {
        track_id: u64,
        frame: u64,
        det_idx: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    CosineOnly,
    CosinePlusBisoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Weight of the new detection in the memory update.
    pub alpha_mem: f64,
    /// Weight of the memory term against the bank term in the score.
    pub alpha_sim: f64,
    pub tau_match: f64,
    pub tau_new: f64,
    pub tau_high: f64,
    pub tau_low: f64,
    pub n_bank: usize,
    pub n_cat_bank: usize,
    pub max_age: u64,
    pub sim_mode: SimMode,
    pub softmax_temperature: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            alpha_mem: 0.25,
            alpha_sim: 0.25,
            tau_match: 0.4,
            tau_new: 0.3,
            tau_high: 0.3,
            tau_low: 0.1,
            n_bank: 15,
            n_cat_bank: 5,
            max_age: 30,
            sim_mode: SimMode::CosinePlusBisoftmax,
            softmax_temperature: 1.0,
        }
    }
}

impl TrackerConfig {
    /// Thresholds for detectors whose confidences were divided by ten.
    pub fn regionclip() -> Self {
        Self {
            tau_high: 0.01,
            tau_low: 0.005,
            tau_new: 0.01,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |m: &str| Err(TrackError::InvalidConfig(m.to_string()));
        let taus = [self.tau_match, self.tau_new, self.tau_high, self.tau_low];
        if taus.iter().any(|t| !t.is_finite()) {
            return bad("thresholds must be finite");
        }
        if self.tau_low > self.tau_high {
            return bad("tau_low must not exceed tau_high");
        }
        if !(0.0..=1.0).contains(&self.alpha_mem) || !(0.0..=1.0).contains(&self.alpha_sim) {
            return bad("alpha_mem and alpha_sim must lie in [0, 1]");
        }
        if self.n_bank == 0 || self.n_cat_bank == 0 || self.max_age == 0 {
            return bad("n_bank, n_cat_bank and max_age must be positive");
        }
        if !(self.softmax_temperature.is_finite() && self.softmax_temperature > 0.0) {
            return bad("softmax_temperature must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Active,
    Lost,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: u64,
    pub bbox: BBox,
    pub confidence: f64,
    /// Index of the detection within its frame.
    pub det_index: usize,
    /// Raw detector category for this frame.
    pub category_id: u32,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetainedPrediction {
    pub frame: u64,
    pub category_id: u32,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub memory: Vec<f32>,
    pub feature_bank: VecDeque<Vec<f32>>,
    pub category_bank: VecDeque<u32>,
    pub retained_preds: Vec<RetainedPrediction>,
    pub observations: Vec<Observation>,
    pub last_matched_frame: u64,
}

impl Track {
    fn born(id: u64, det_index: usize, det: &DetectionRecord, cfg: &TrackerConfig) -> Self {
        let mut t = Track {
            id,
            state: TrackState::Active,
            memory: det.embedding.clone(),
            feature_bank: VecDeque::from([det.embedding.clone()]),
            category_bank: VecDeque::new(),
            retained_preds: Vec::new(),
            observations: Vec::new(),
            last_matched_frame: det.frame,
        };
        retain_category(&mut t, det, cfg);
        t.observe(det_index, det);
        t
    }

    fn observe(&mut self, det_index: usize, det: &DetectionRecord) {
        self.observations.push(Observation {
            frame: det.frame,
            bbox: det.bbox,
            confidence: det.confidence,
            det_index,
            category_id: det.category_id,
            embedding: det.embedding.clone(),
        });
    }

    pub fn to_record(&self) -> TrackRecord {
        TrackRecord {
            track_id: self.id,
            label: None,
            observations: self
                .observations
                .iter()
                .zip(&self.retained_preds)
                .map(|(o, r)| ObservationRecord {
                    frame: o.frame,
                    det_idx: o.det_index,
                    bbox: o.bbox,
                    confidence: o.confidence,
                    det_category: o.category_id,
                    category: r.category_id,
                })
                .collect(),
        }
    }

    /// Rebuilds a finalized track from its output record, pulling embeddings
    /// back from the detection stream it was produced from.
    pub fn from_record(record: &TrackRecord, dets: &FrameMap) -> Result<Self, TrackError> {
        let mut observations = Vec::with_capacity(record.observations.len());
        let mut retained_preds = Vec::with_capacity(record.observations.len());
        for o in &record.observations {
            let det = dets
                .get(&o.frame)
                .and_then(|v| v.get(o.det_idx))
                .ok_or(TrackError::MissingDetection {
                    track_id: record.track_id,
                    frame: o.frame,
                    det_idx: o.det_idx,
                })?;
            observations.push(Observation {
                frame: o.frame,
                bbox: o.bbox,
                confidence: o.confidence,
                det_index: o.det_idx,
                category_id: o.det_category,
                embedding: det.embedding.clone(),
            });
            retained_preds.push(RetainedPrediction {
                frame: o.frame,
                category_id: o.category,
                confidence: o.confidence,
            });
        }
        let last = observations.last();
        Ok(Track {
            id: record.track_id,
            state: TrackState::Dead,
            memory: last.map(|o| o.embedding.clone()).unwrap_or_default(),
            feature_bank: VecDeque::new(),
            category_bank: VecDeque::new(),
            last_matched_frame: last.map_or(0, |o| o.frame),
            retained_preds,
            observations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EventKind {
    Matched {
        track_id: u64,
        det_idx: usize,
        score: f64,
    },
    Born {
        track_id: u64,
        det_idx: usize,
    },
    Discarded {
        det_idx: usize,
    },
    Died {
        track_id: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationEvent {
    pub frame: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// EMA memory update: `alpha * det + (1 - alpha) * memory`.
pub fn update_memory(memory: &[f32], det_emb: &[f32], alpha_mem: f64) -> Result<Vec<f32>, TrackError> {
    if memory.len() != det_emb.len() {
        return Err(TrackError::LengthMismatch(memory.len(), det_emb.len()));
    }
    Ok(memory
        .iter()
        .zip(det_emb)
        .map(|(&m, &x)| (alpha_mem * x as f64 + (1.0 - alpha_mem) * m as f64) as f32)
        .collect())
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64, TrackError> {
    if a.len() != b.len() {
        return Err(TrackError::LengthMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(TrackError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

fn normalized(v: &[f32]) -> Result<Vec<f64>, TrackError> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(TrackError::ZeroNorm);
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Average of a row-wise and a column-wise softmax of `logits / temperature`.
pub fn bisoftmax(logits: &Array2<f64>, temperature: f64) -> Array2<f64> {
    let scaled = logits.mapv(|v| v / temperature);
    let (rows, cols) = scaled.dim();
    let mut out = Array2::zeros((rows, cols));
    for (r, row) in scaled.rows().into_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for c in 0..cols {
            out[[r, c]] = 0.5 * (row[c] - max).exp() / sum;
        }
    }
    for (c, col) in scaled.columns().into_iter().enumerate() {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = col.iter().map(|&v| (v - max).exp()).sum();
        for r in 0..rows {
            out[[r, c]] += 0.5 * (col[r] - max).exp() / sum;
        }
    }
    out
}

/// Track × detection similarity combining memory and feature-bank cosines.
///
/// The bank term is the mean cosine over the entries actually present, which
/// equals the dot product of the normalized detection with the mean of the
/// normalized bank entries.
pub fn score_matrix(
    tracks: &[&Track],
    dets: &[DetectionRecord],
    cfg: &TrackerConfig,
) -> Result<Array2<f64>, TrackError> {
    let det_units = dets
        .iter()
        .map(|d| normalized(&d.embedding))
        .collect::<Result<Vec<_>, _>>()?;
    let mut raw = Array2::zeros((tracks.len(), dets.len()));
    for (t, track) in tracks.iter().enumerate() {
        let mem = normalized(&track.memory)?;
        let mut bank_mean = vec![0.0f64; mem.len()];
        for entry in &track.feature_bank {
            let unit = normalized(entry)?;
            if unit.len() != bank_mean.len() {
                return Err(TrackError::LengthMismatch(unit.len(), bank_mean.len()));
            }
            for (acc, v) in bank_mean.iter_mut().zip(unit) {
                *acc += v;
            }
        }
        let n = track.feature_bank.len().max(1) as f64;
        bank_mean.iter_mut().for_each(|v| *v /= n);
        for (d, unit) in det_units.iter().enumerate() {
            if unit.len() != mem.len() {
                return Err(TrackError::LengthMismatch(unit.len(), mem.len()));
            }
            let c_mem = dot(unit, &mem);
            let c_bank = dot(unit, &bank_mean);
            raw[[t, d]] = cfg.alpha_sim * c_mem + (1.0 - cfg.alpha_sim) * c_bank;
        }
    }
    Ok(match cfg.sim_mode {
        SimMode::CosineOnly => raw,
        SimMode::CosinePlusBisoftmax => {
            if raw.is_empty() {
                raw
            } else {
                let soft = bisoftmax(&raw, cfg.softmax_temperature);
                (raw + soft) * 0.5
            }
        }
    })
}

/// Greedy per-detection matching in descending confidence order.
///
/// Born tracks receive ids `next_id, next_id + 1, ...` in processing order.
pub fn associate_frame(
    tracks: &[&Track],
    dets: &[DetectionRecord],
    scores: &Array2<f64>,
    frame: u64,
    cfg: &TrackerConfig,
    next_id: u64,
) -> Vec<AssociationEvent> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut taken = vec![false; tracks.len()];
    let mut next_id = next_id;
    let mut events = Vec::with_capacity(dets.len());
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (t, track) in tracks.iter().enumerate() {
            if taken[t] || track.state == TrackState::Dead {
                continue;
            }
            let s = scores[[t, d]];
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((t, s));
            }
        }
        let kind = match best {
            Some((t, score)) if score >= cfg.tau_match => {
                taken[t] = true;
                EventKind::Matched {
                    track_id: tracks[t].id,
                    det_idx: d,
                    score,
                }
            }
            _ if dets[d].confidence >= cfg.tau_new => {
                next_id += 1;
                EventKind::Born {
                    track_id: next_id - 1,
                    det_idx: d,
                }
            }
            _ => EventKind::Discarded { det_idx: d },
        };
        events.push(AssociationEvent { frame, kind });
    }
    events
}

/// Most frequent id and its share of the list. Ties go to the id that occurs
/// latest in the list.
pub fn majority_vote(items: &[u32]) -> Result<(u32, f64), TrackError> {
    if items.is_empty() {
        return Err(TrackError::EmptyVote);
    }
    let mut stats: HashMap<u32, (usize, usize)> = HashMap::new();
    for (pos, &id) in items.iter().enumerate() {
        let e = stats.entry(id).or_insert((0, pos));
        e.0 += 1;
        e.1 = pos;
    }
    let (id, (count, _)) = stats
        .into_iter()
        .max_by_key(|&(_, (count, last))| (count, last))
        .expect("non-empty");
    Ok((id, count as f64 / items.len() as f64))
}

/// Applies the confidence-gated category rule for a detection matched to
/// `track`, records the retained category and returns it.
pub fn retain_category(track: &mut Track, det: &DetectionRecord, cfg: &TrackerConfig) -> u32 {
    let p = det.confidence;
    let c = det.category_id;
    let retained = if p >= cfg.tau_high {
        c
    } else if p >= cfg.tau_low {
        let mut pool: Vec<u32> = track.category_bank.iter().copied().collect();
        pool.push(c);
        majority_vote(&pool).expect("pool holds c").0
    } else {
        let pool: Vec<u32> = track.category_bank.iter().copied().collect();
        majority_vote(&pool).map_or(c, |(v, _)| v)
    };
    track.category_bank.push_back(retained);
    while track.category_bank.len() > cfg.n_cat_bank {
        track.category_bank.pop_front();
    }
    track.retained_preds.push(RetainedPrediction {
        frame: det.frame,
        category_id: retained,
        confidence: p,
    });
    retained
}

/// Per-sequence association state.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }

    pub fn step(&mut self, frame: u64, dets: &[DetectionRecord]) -> Result<Vec<AssociationEvent>, TrackError> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(TrackError::NonMonotonicFrame { frame, last });
            }
        }
        self.last_frame = Some(frame);
        let cfg = &self.cfg;
        let mut events = Vec::new();

        for t in self.tracks.iter_mut() {
            if t.state != TrackState::Dead && frame - t.last_matched_frame > cfg.max_age {
                t.state = TrackState::Dead;
                events.push(AssociationEvent {
                    frame,
                    kind: EventKind::Died { track_id: t.id },
                });
            }
        }

        let live: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].state != TrackState::Dead)
            .collect();
        let decisions = {
            let refs: Vec<&Track> = live.iter().map(|&i| &self.tracks[i]).collect();
            let scores = score_matrix(&refs, dets, cfg)?;
            associate_frame(&refs, dets, &scores, frame, cfg, self.next_id)
        };

        let slot_of: HashMap<u64, usize> = live.iter().map(|&i| (self.tracks[i].id, i)).collect();
        let mut matched = vec![false; self.tracks.len()];
        for ev in &decisions {
            match ev.kind {
                EventKind::Matched { track_id, det_idx, .. } => {
                    let i = slot_of[&track_id];
                    matched[i] = true;
                    let det = &dets[det_idx];
                    let t = &mut self.tracks[i];
                    t.memory = update_memory(&t.memory, &det.embedding, cfg.alpha_mem)?;
                    t.feature_bank.push_back(det.embedding.clone());
                    while t.feature_bank.len() > cfg.n_bank {
                        t.feature_bank.pop_front();
                    }
                    retain_category(t, det, cfg);
                    t.observe(det_idx, det);
                    t.state = TrackState::Active;
                    t.last_matched_frame = frame;
                }
                EventKind::Born { track_id, det_idx } => {
                    self.next_id = self.next_id.max(track_id + 1);
                    self.tracks.push(Track::born(track_id, det_idx, &dets[det_idx], cfg));
                    matched.push(true);
                }
                EventKind::Discarded { .. } | EventKind::Died { .. } => {}
            }
        }
        for &i in &live {
            if !matched[i] {
                self.tracks[i].state = TrackState::Lost;
            }
        }
        events.extend(decisions);
        Ok(events)
    }
}

/// Runs association over a whole sequence and returns every track ever born.
pub fn run_sequence(dets_by_frame: &FrameMap, cfg: &TrackerConfig) -> Result<Vec<Track>, TrackError> {
    run_sequence_with_events(dets_by_frame, cfg).map(|(tracks, _)| tracks)
}

pub fn run_sequence_with_events(
    dets_by_frame: &FrameMap,
    cfg: &TrackerConfig,
) -> Result<(Vec<Track>, Vec<AssociationEvent>), TrackError> {
    let mut tracker = Tracker::new(cfg.clone())?;
    let mut events = Vec::new();
    for (&frame, dets) in dets_by_frame {
        events.extend(tracker.step(frame, dets)?);
    }
    Ok((tracker.into_tracks(), events))
}
