//! Track output: one JSON line per (track, frame) observation, ordered by
//! track id then frame. Classification fields repeat on every line of a
//! classified track.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detections::BBox;
use super::{io_err, IngestError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Cate,
    Attr,
    Det,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::Cate => "cate",
            LabelSource::Attr => "attr",
            LabelSource::Det => "det",
        }
    }
}

/// A candidate label and its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub label: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletScores {
    pub cate: ScoredLabel,
    pub attr: ScoredLabel,
    pub det: ScoredLabel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelRecord {
    pub label: u32,
    pub source: LabelSource,
    pub scores: TripletScores,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRecord {
    pub frame: u64,
    /// Index into the frame's detection list in canonical order.
    pub det_idx: usize,
    pub bbox: BBox,
    pub confidence: f64,
    /// Raw per-frame detector category.
    pub det_category: u32,
    /// Category retained by the category-consistency rule.
    pub category: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: u64,
    pub label: Option<LabelRecord>,
    pub observations: Vec<ObservationRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackLine {
    track_id: u64,
    frame: u64,
    det_idx: usize,
    bbox: [f64; 4],
    conf: f64,
    det_cat: u32,
    cat: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_source: Option<LabelSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<TripletScores>,
}

pub fn write_tracks(tracks: &[TrackRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut sorted: Vec<&TrackRecord> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.track_id);
    for t in sorted {
        let mut obs: Vec<&ObservationRecord> = t.observations.iter().collect();
        obs.sort_by_key(|o| o.frame);
        for o in obs {
            let line = TrackLine {
                track_id: t.track_id,
                frame: o.frame,
                det_idx: o.det_idx,
                bbox: o.bbox,
                conf: o.confidence,
                det_cat: o.det_category,
                cat: o.category,
                label: t.label.map(|l| l.label),
                label_source: t.label.map(|l| l.source),
                scores: t.label.map(|l| l.scores),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

pub fn read_tracks(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut tracks: BTreeMap<u64, TrackRecord> = BTreeMap::new();
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
        let raw: TrackLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let label = match (raw.label, raw.label_source, raw.scores) {
            (Some(label), Some(source), Some(scores)) => Some(LabelRecord {
                label,
                source,
                scores,
            }),
            (None, None, None) => None,
            _ => return Err(malformed("incomplete classification fields".into())),
        };
        let track = tracks.entry(raw.track_id).or_insert_with(|| TrackRecord {
            track_id: raw.track_id,
            label,
            observations: Vec::new(),
        });
        if track.label != label {
            return Err(malformed(format!(
                "track {} has inconsistent labels",
                raw.track_id
            )));
        }
        if track.observations.last().is_some_and(|o| o.frame >= raw.frame) {
            return Err(malformed(format!(
                "track {} frames not strictly increasing",
                raw.track_id
            )));
        }
        track.observations.push(ObservationRecord {
            frame: raw.frame,
            det_idx: raw.det_idx,
            bbox: raw.bbox,
            confidence: raw.conf,
            det_category: raw.det_cat,
            category: raw.cat,
        });
    }
    Ok(tracks.into_values().collect())
}
