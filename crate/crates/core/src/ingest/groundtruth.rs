use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detections::{validate_bbox, BBox};
use super::{io_err, IngestError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub track_id: u64,
    pub category_id: u32,
    /// Frames where the object is annotated.
    pub boxes: BTreeMap<u64, BBox>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GtLine {
    track_id: u64,
    cat: u32,
    frame: u64,
    bbox: [f64; 4],
}

/// Reads ground truth JSON lines into tracks sorted by id.
pub fn load_groundtruth(path: impl AsRef<Path>) -> Result<Vec<GroundTruthTrack>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut tracks: BTreeMap<u64, GroundTruthTrack> = BTreeMap::new();
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
        let raw: GtLine = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        validate_bbox(&raw.bbox).map_err(malformed)?;
        let track = tracks
            .entry(raw.track_id)
            .or_insert_with(|| GroundTruthTrack {
                track_id: raw.track_id,
                category_id: raw.cat,
                boxes: BTreeMap::new(),
            });
        if track.category_id != raw.cat {
            return Err(malformed(format!(
                "track {} changes category from {} to {}",
                raw.track_id, track.category_id, raw.cat
            )));
        }
        if track.boxes.insert(raw.frame, raw.bbox).is_some() {
            return Err(malformed(format!(
                "track {} has two boxes in frame {}",
                raw.track_id, raw.frame
            )));
        }
    }
    Ok(tracks.into_values().collect())
}

pub fn write_groundtruth(tracks: &[GroundTruthTrack], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let mut sorted: Vec<&GroundTruthTrack> = tracks.iter().collect();
    sorted.sort_by_key(|t| t.track_id);
    for t in sorted {
        for (&frame, &bbox) in &t.boxes {
            let line = GtLine {
                track_id: t.track_id,
                cat: t.category_id,
                frame,
                bbox,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}
