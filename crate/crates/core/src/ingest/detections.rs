use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sidecar::{read_sidecar, sidecar_path, EmbeddingSidecar};
use super::vocab::Vocabulary;
use super::{io_err, IngestError, Result};

/// Axis-aligned box as `(x, y, w, h)` in pixels.
pub type BBox = [f64; 4];

/// Detections grouped by frame, frames ascending.
pub type FrameMap = BTreeMap<u64, Vec<DetectionRecord>>;

/// One detector output: box, confidence, per-frame category prediction and
/// appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame: u64,
    pub bbox: BBox,
    /// Scaled and clamped to `[0, 1]`.
    pub confidence: f64,
    pub category_id: u32,
    pub category_score: f64,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionLine {
    frame: u64,
    bbox: [f64; 4],
    conf: f64,
    cat: u32,
    cat_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    emb_ref: Option<u64>,
}

pub(crate) fn validate_bbox(bbox: &BBox) -> std::result::Result<(), String> {
    if bbox.iter().any(|v| !v.is_finite()) {
        return Err(format!("bbox {bbox:?} is not finite"));
    }
    if bbox[2] <= 0.0 || bbox[3] <= 0.0 {
        return Err(format!("bbox {bbox:?} must have positive width and height"));
    }
    Ok(())
}

/// Total order used to make the per-frame detection list independent of the
/// order lines appear in the file.
pub fn canonical_cmp(a: &DetectionRecord, b: &DetectionRecord) -> Ordering {
    let floats = |r: &DetectionRecord| {
        [
            r.bbox[0],
            r.bbox[1],
            r.bbox[2],
            r.bbox[3],
            r.confidence,
            r.category_score,
        ]
    };
    floats(a)
        .iter()
        .zip(floats(b).iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.category_id.cmp(&b.category_id))
        .then_with(|| {
            a.embedding
                .iter()
                .zip(&b.embedding)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.embedding.len().cmp(&b.embedding.len()))
}

/// Loads a detection stream, class-agnostic (any category id accepted).
///
/// Each raw confidence is multiplied by `score_scale` and clamped to `[0, 1]`.
pub fn load_detections(path: impl AsRef<Path>, score_scale: f64) -> Result<FrameMap> {
    load(path.as_ref(), score_scale, None)
}

/// Same as [`load_detections`] but rejects category ids absent from `vocab`.
pub fn load_detections_with_vocab(
    path: impl AsRef<Path>,
    score_scale: f64,
    vocab: &Vocabulary,
) -> Result<FrameMap> {
    load(path.as_ref(), score_scale, Some(vocab))
}

fn load(path: &Path, score_scale: f64, vocab: Option<&Vocabulary>) -> Result<FrameMap> {
    if !(score_scale.is_finite() && score_scale > 0.0) {
        return Err(IngestError::Invalid(format!(
            "score scale must be positive, got {score_scale}"
        )));
    }
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut sidecar: Option<EmbeddingSidecar> = None;
    let mut dim: Option<usize> = None;
    let mut frames = FrameMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| IngestError::Malformed {
            line: line_no,
            message,
        };
        let raw: DetectionLine =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        validate_bbox(&raw.bbox).map_err(malformed)?;
        if !raw.conf.is_finite() || raw.conf < 0.0 {
            return Err(malformed(format!("confidence {} is invalid", raw.conf)));
        }
        if !(0.0..=1.0).contains(&raw.cat_score) {
            return Err(malformed(format!(
                "category score {} outside [0, 1]",
                raw.cat_score
            )));
        }
        if let Some(vocab) = vocab {
            if !vocab.contains(raw.cat) {
                return Err(IngestError::UnknownCategory {
                    line: line_no,
                    id: raw.cat,
                });
            }
        }
        let embedding = match (raw.emb, raw.emb_ref) {
            (Some(emb), None) => emb,
            (None, Some(r)) => {
                if sidecar.is_none() {
                    sidecar = Some(read_sidecar(sidecar_path(path))?);
                }
                let side = sidecar.as_ref().expect("sidecar loaded above");
                side.row(r as usize)
                    .ok_or_else(|| {
                        malformed(format!(
                            "emb_ref {r} out of range (sidecar has {} rows)",
                            side.count()
                        ))
                    })?
                    .to_vec()
            }
            (Some(_), Some(_)) => {
                return Err(malformed("both emb and emb_ref given".into()));
            }
            (None, None) => return Err(malformed("missing emb or emb_ref".into())),
        };
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(malformed("embedding contains a non-finite value".into()));
        }
        match dim {
            None => dim = Some(embedding.len()),
            Some(d) if d != embedding.len() => {
                return Err(IngestError::EmbeddingLength {
                    line: line_no,
                    expected: d,
                    found: embedding.len(),
                })
            }
            Some(_) => {}
        }
        let record = DetectionRecord {
            frame: raw.frame,
            bbox: raw.bbox,
            confidence: (raw.conf * score_scale).clamp(0.0, 1.0),
            category_id: raw.cat,
            category_score: raw.cat_score,
            embedding,
        };
        frames.entry(record.frame).or_default().push(record);
    }
    for dets in frames.values_mut() {
        dets.sort_by(canonical_cmp);
    }
    Ok(frames)
}

/// Writes detections as JSON lines. With `sidecar = true`, embeddings go to
/// the `.embin` file next to `path` and lines carry `emb_ref` instead.
pub fn write_detections(frames: &FrameMap, path: impl AsRef<Path>, sidecar: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut rows: Vec<f32> = Vec::new();
    let mut count = 0u64;
    let mut dim = None;
    for det in frames.values().flatten() {
        let line = if sidecar {
            dim.get_or_insert(det.embedding.len());
            rows.extend_from_slice(&det.embedding);
            count += 1;
            DetectionLine {
                frame: det.frame,
                bbox: det.bbox,
                conf: det.confidence,
                cat: det.category_id,
                cat_score: det.category_score,
                emb: None,
                emb_ref: Some(count - 1),
            }
        } else {
            DetectionLine {
                frame: det.frame,
                bbox: det.bbox,
                conf: det.confidence,
                cat: det.category_id,
                cat_score: det.category_score,
                emb: Some(det.embedding.clone()),
                emb_ref: None,
            }
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    if sidecar {
        let side = EmbeddingSidecar::new(dim.unwrap_or(0), rows)?;
        super::write_sidecar(&side, sidecar_path(path))?;
    }
    Ok(())
}
