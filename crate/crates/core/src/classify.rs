//! Trajectory-level classification: confidence-based clip sampling, visual
//! fusion, matching against plain and attribute-enriched category text
//! features, and selection among the name match, the attribute match and
//! the vote over retained per-frame predictions.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{FusionError, FusionKind, FusionWeights};
use crate::ingest::{LabelRecord, LabelSource, ScoredLabel, TripletScores, Vocabulary};
use crate::tcr::{majority_vote, Track, TrackError};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("track has no observations")]
    EmptyTrack,
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("zero-norm vector in affinity")]
    ZeroNorm,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Track(#[from] TrackError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub fusion: FusionKind,
    pub n_clip: usize,
    pub heads: usize,
    /// Map cosines to `(1 + cos) / 2` before comparing with the vote share.
    pub calibrate_scores: bool,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            fusion: FusionKind::SelfFusion,
            n_clip: 5,
            heads: 1,
            calibrate_scores: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    /// One embedding per row, chronological.
    pub rows: Array2<f64>,
    pub source_frames: Vec<u64>,
}

/// Picks at most `n_clip` observations by confidence (ties to the earlier
/// frame) and returns them in chronological order. Short tracks are kept
/// whole.
pub fn sample_clip(track: &Track, n_clip: usize) -> Result<ClipSample, ClassifyError> {
    let obs = &track.observations;
    if obs.is_empty() {
        return Err(ClassifyError::EmptyTrack);
    }
    let mut chosen: Vec<usize> = (0..obs.len()).collect();
    if obs.len() > n_clip {
        chosen.sort_by(|&a, &b| {
            obs[b]
                .confidence
                .total_cmp(&obs[a].confidence)
                .then(obs[a].frame.cmp(&obs[b].frame))
        });
        chosen.truncate(n_clip);
        chosen.sort_by_key(|&i| obs[i].frame);
    }
    let d = obs[0].embedding.len();
    let mut rows = Array2::zeros((chosen.len(), d));
    for (r, &i) in chosen.iter().enumerate() {
        if obs[i].embedding.len() != d {
            return Err(ClassifyError::DimMismatch(format!(
                "observation embedding length {} vs {d}",
                obs[i].embedding.len()
            )));
        }
        for (c, &v) in obs[i].embedding.iter().enumerate() {
            rows[[r, c]] = v as f64;
        }
    }
    Ok(ClipSample {
        rows,
        source_frames: chosen.iter().map(|&i| obs[i].frame).collect(),
    })
}

/// Category text features projected into the visual width.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageFeatures {
    pub ids: Vec<u32>,
    pub cate: Array2<f64>,
    pub attr: Array2<f64>,
}

/// Applies the language projection (`d_text × d`) to both embedding sets.
/// Without a projection the text features are used as they are.
pub fn project_language(vocab: &Vocabulary, lang_proj: Option<&Array2<f64>>) -> Result<LanguageFeatures, ClassifyError> {
    let dt = vocab.dim_text();
    let stack = |pick: fn(&crate::ingest::VocabularyEntry) -> &Vec<f32>| {
        let mut m = Array2::zeros((vocab.len(), dt));
        for (r, e) in vocab.entries().iter().enumerate() {
            for (c, &v) in pick(e).iter().enumerate() {
                m[[r, c]] = v as f64;
            }
        }
        m
    };
    let cate = stack(|e| &e.cate_embedding);
    let attr = stack(|e| &e.attr_embedding);
    let (cate, attr) = match lang_proj {
        None => (cate, attr),
        Some(p) => {
            if p.nrows() != dt {
                return Err(ClassifyError::DimMismatch(format!(
                    "language projection has {} rows, vocabulary width is {dt}",
                    p.nrows()
                )));
            }
            (cate.dot(p), attr.dot(p))
        }
    };
    Ok(LanguageFeatures {
        ids: vocab.entries().iter().map(|e| e.category_id).collect(),
        cate,
        attr,
    })
}

fn cos(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64, ClassifyError> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ClassifyError::ZeroNorm);
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine between the trajectory feature and every row of `features`.
pub fn affinity(f_traj: ArrayView1<f64>, features: ArrayView2<f64>) -> Result<Vec<f64>, ClassifyError> {
    if f_traj.len() != features.ncols() {
        return Err(ClassifyError::DimMismatch(format!(
            "trajectory feature width {} vs language width {}",
            f_traj.len(),
            features.ncols()
        )));
    }
    features.rows().into_iter().map(|row| cos(f_traj, row)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryClassification {
    pub cate: ScoredLabel,
    pub attr: ScoredLabel,
    pub det: ScoredLabel,
    pub label: u32,
    pub source: LabelSource,
}

impl TrajectoryClassification {
    pub fn final_score(&self) -> f64 {
        match self.source {
            LabelSource::Cate => self.cate.score,
            LabelSource::Attr => self.attr.score,
            LabelSource::Det => self.det.score,
        }
    }

    pub fn to_record(&self) -> LabelRecord {
        LabelRecord {
            label: self.label,
            source: self.source,
            scores: TripletScores {
                cate: self.cate,
                attr: self.attr,
                det: self.det,
            },
        }
    }
}

fn argmax(ids: &[u32], scores: &[f64]) -> ScoredLabel {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    ScoredLabel {
        label: ids[best],
        score: scores[best],
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Classifies finalized tracks against a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct Classifier {
    lang: LanguageFeatures,
    weights: FusionWeights,
    cfg: ClassifyConfig,
}

impl Classifier {
    pub fn new(vocab: &Vocabulary, weights: Option<&FusionWeights>, cfg: ClassifyConfig) -> Result<Self, ClassifyError> {
        if vocab.is_empty() {
            return Err(ClassifyError::EmptyVocabulary);
        }
        Self::with_weights(vocab, weights.cloned().unwrap_or_default(), cfg)
    }

    /// Like [`new`](Self::new) but takes ownership of the weights.
    pub fn with_weights(vocab: &Vocabulary, weights: FusionWeights, cfg: ClassifyConfig) -> Result<Self, ClassifyError> {
        if vocab.is_empty() {
            return Err(ClassifyError::EmptyVocabulary);
        }
        weights.check(cfg.fusion)?;
        let lang = project_language(vocab, weights.lang_proj.as_ref())?;
        Ok(Self { lang, weights, cfg })
    }

    pub fn language(&self) -> &LanguageFeatures {
        &self.lang
    }

    pub fn config(&self) -> &ClassifyConfig {
        &self.cfg
    }

    /// Trajectory feature for the vector fusions.
    pub fn trajectory_feature(&self, track: &Track) -> Result<Array1<f64>, ClassifyError> {
        let clip = sample_clip(track, self.cfg.n_clip)?;
        Ok(self.weights.fuse(self.cfg.fusion, clip.rows.view(), self.cfg.heads)?)
    }

    pub fn classify(&self, track: &Track) -> Result<TrajectoryClassification, ClassifyError> {
        Ok(self.classify_many(std::slice::from_ref(track))?.remove(0))
    }

    /// Classifies a batch of tracks. Fusion runs over all clips together so
    /// the weights are traversed once per batch instead of once per track.
    pub fn classify_many(&self, tracks: &[Track]) -> Result<Vec<TrajectoryClassification>, ClassifyError> {
        let clips = tracks
            .iter()
            .map(|t| sample_clip(t, self.cfg.n_clip))
            .collect::<Result<Vec<_>, _>>()?;
        let views: Vec<_> = clips.iter().map(|c| c.rows.view()).collect();
        let (cate_scores, attr_scores) = if self.cfg.fusion == FusionKind::Concat {
            let squash = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                m.into_iter().map(|row| row.into_iter().map(logistic).collect()).collect()
            };
            (
                squash(self.weights.concat_scores_many(&views, self.lang.cate.view(), self.cfg.heads)?),
                squash(self.weights.concat_scores_many(&views, self.lang.attr.view(), self.cfg.heads)?),
            )
        } else {
            let feats = self.weights.fuse_many(self.cfg.fusion, &views, self.cfg.heads)?;
            let mut cate = Vec::with_capacity(feats.len());
            let mut attr = Vec::with_capacity(feats.len());
            for f in &feats {
                let mut c = affinity(f.view(), self.lang.cate.view())?;
                let mut a = affinity(f.view(), self.lang.attr.view())?;
                if self.cfg.calibrate_scores {
                    for v in c.iter_mut().chain(a.iter_mut()) {
                        *v = (1.0 + *v) / 2.0;
                    }
                }
                cate.push(c);
                attr.push(a);
            }
            (cate, attr)
        };
        tracks
            .iter()
            .zip(cate_scores.iter().zip(&attr_scores))
            .map(|(t, (c, a))| self.decide(t, c, a))
            .collect()
    }

    fn decide(&self, track: &Track, cate_scores: &[f64], attr_scores: &[f64]) -> Result<TrajectoryClassification, ClassifyError> {
        let ids = &self.lang.ids;
        let cate = argmax(ids, cate_scores);
        let attr = argmax(ids, attr_scores);

        let retained: Vec<u32> = track.retained_preds.iter().map(|r| r.category_id).collect();
        let (label, share) = majority_vote(&retained)?;
        let det = ScoredLabel { label, score: share };

        // ties resolve det, then cate, then attr
        let mut pick = (det, LabelSource::Det);
        for cand in [(cate, LabelSource::Cate), (attr, LabelSource::Attr)] {
            if cand.0.score > pick.0.score {
                pick = cand;
            }
        }
        Ok(TrajectoryClassification {
            cate,
            attr,
            det,
            label: pick.0.label,
            source: pick.1,
        })
    }
}

/// One-shot convenience over [`Classifier`].
pub fn classify_trajectory(
    track: &Track,
    vocab: &Vocabulary,
    weights: Option<&FusionWeights>,
    cfg: &ClassifyConfig,
) -> Result<TrajectoryClassification, ClassifyError> {
    Classifier::new(vocab, weights, cfg.clone())?.classify(track)
}

/// Text fed offline to the language encoder for the attribute-enriched
/// embedding.
pub fn build_attribute_text(name: &str, description: &str) -> String {
    format!("{name}: {description}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Split, VocabularyEntry};
    use crate::tcr::{Observation, RetainedPrediction, TrackState};
    use ndarray::array;
    use std::collections::VecDeque;

    fn track(confs: &[f64], embs: &[Vec<f32>], cats: &[u32]) -> Track {
        Track {
            id: 1,
            state: TrackState::Dead,
            memory: embs[0].clone(),
            feature_bank: VecDeque::new(),
            category_bank: VecDeque::new(),
            retained_preds: cats
                .iter()
                .enumerate()
                .map(|(i, &c)| RetainedPrediction {
                    frame: i as u64,
                    category_id: c,
                    confidence: confs[i],
                })
                .collect(),
            observations: confs
                .iter()
                .enumerate()
                .map(|(i, &c)| Observation {
                    frame: i as u64,
                    bbox: [0.0, 0.0, 1.0, 1.0],
                    confidence: c,
                    det_index: 0,
                    category_id: cats[i],
                    embedding: embs[i].clone(),
                })
                .collect(),
            last_matched_frame: confs.len() as u64 - 1,
        }
    }

    fn vocab(rows: &[(u32, Vec<f32>, Vec<f32>)]) -> Vocabulary {
        let dt = rows[0].1.len();
        Vocabulary::new(
            dt,
            rows.iter()
                .map(|(id, c, a)| VocabularyEntry {
                    category_id: *id,
                    name: format!("c{id}"),
                    split: Split::Base,
                    description: String::new(),
                    cate_embedding: c.clone(),
                    attr_embedding: a.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn short_track_is_not_sampled() {
        let embs: Vec<Vec<f32>> = (0..3).map(|i| vec![i as f32, 1.0]).collect();
        let t = track(&[0.2, 0.9, 0.5], &embs, &[0, 0, 0]);
        let clip = sample_clip(&t, 5).unwrap();
        assert_eq!(clip.source_frames, vec![0, 1, 2]);
        assert_eq!(clip.rows.row(2).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn top_confidence_in_time_order() {
        let confs = [0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.6, 0.05, 0.95, 0.4];
        let embs: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32]).collect();
        let t = track(&confs, &embs, &[0; 10]);
        // hand sort: 0.95@8, 0.9@1, 0.8@3, 0.7@5, 0.6@6
        assert_eq!(sample_clip(&t, 5).unwrap().source_frames, vec![1, 3, 5, 6, 8]);

        let t = track(&[0.5; 10], &embs, &[0; 10]);
        assert_eq!(sample_clip(&t, 5).unwrap().source_frames, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn projection_cases() {
        let v = vocab(&[(0, vec![1.0, 2.0], vec![3.0, 4.0])]);
        let id = project_language(&v, Some(&Array2::eye(2))).unwrap();
        assert_eq!(id.cate, array![[1.0, 2.0]]);
        assert_eq!(id.attr, array![[3.0, 4.0]]);
        let zero = project_language(&v, Some(&Array2::zeros((2, 2)))).unwrap();
        assert!(zero.cate.iter().all(|&x| x == 0.0));
        assert_eq!(
            affinity(array![1.0, 0.0].view(), zero.cate.view()),
            Err(ClassifyError::ZeroNorm)
        );
        let hand = project_language(&v, Some(&array![[1.0, -1.0], [0.5, 2.0]])).unwrap();
        assert_eq!(hand.cate, array![[2.0, 3.0]]);
        assert_eq!(hand.attr, array![[5.0, 5.0]]);
        assert!(project_language(&v, Some(&Array2::eye(3))).is_err());
    }

    #[test]
    fn affinity_cases() {
        let f = array![1.0, 0.0, 0.0];
        let m = array![[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 0.0]];
        let z = affinity(f.view(), m.view()).unwrap();
        assert_eq!(z[0], 1.0);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn unanimous_vote_wins() {
        let embs = vec![vec![1.0, 0.2], vec![0.9, 0.3]];
        let t = track(&[0.9, 0.8], &embs, &[1, 1]);
        let v = vocab(&[(0, vec![1.0, 0.0], vec![1.0, 0.1]), (1, vec![0.0, 1.0], vec![0.1, 1.0])]);
        let cfg = ClassifyConfig {
            fusion: FusionKind::Average,
            ..Default::default()
        };
        let out = classify_trajectory(&t, &v, None, &cfg).unwrap();
        assert_eq!(out.source, LabelSource::Det);
        assert_eq!(out.label, 1);
        assert_eq!(out.det.score, 1.0);
        assert_eq!(out.final_score(), out.cate.score.max(out.attr.score).max(out.det.score));
    }

    #[test]
    fn single_category_vocabulary() {
        let embs = vec![vec![0.0, 1.0]];
        let t = track(&[0.9], &embs, &[3]);
        let v = vocab(&[(3, vec![1.0, 0.0], vec![-1.0, 0.5])]);
        let cfg = ClassifyConfig {
            fusion: FusionKind::Average,
            calibrate_scores: true,
            ..Default::default()
        };
        let out = classify_trajectory(&t, &v, None, &cfg).unwrap();
        assert_eq!((out.cate.label, out.attr.label, out.label), (3, 3, 3));
    }

    #[test]
    fn missing_weights_for_self() {
        let v = vocab(&[(0, vec![1.0], vec![1.0])]);
        let err = Classifier::new(&v, None, ClassifyConfig::default()).unwrap_err();
        assert_eq!(err, ClassifyError::Fusion(FusionError::MissingWeights("ln1")));
    }

    #[test]
    fn attribute_text() {
        assert_eq!(
            build_attribute_text("zucchini", "long, green vegetable, often used in cooking."),
            "zucchini: long, green vegetable, often used in cooking."
        );
        assert_eq!(build_attribute_text("name", ""), "name: ");
        assert!(build_attribute_text("duck", "medium-sized bird with a round body").starts_with("duck: medium"));
    }
}
