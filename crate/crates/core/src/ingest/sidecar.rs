//! `.embin` embedding sidecar: `"TRJK"`, u16 version, u32 dim, u64 count,
//! then `count * dim` little-endian f32 values, row-major.

use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, IngestError, Result};

const MAGIC: [u8; 4] = *b"TRJK";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSidecar {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingSidecar {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 && !data.is_empty() || dim != 0 && !data.len().is_multiple_of(dim) {
            return Err(IngestError::Invalid(format!(
                "sidecar payload of {} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        (i < self.count()).then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }
}

/// `detections.jsonl` → `detections.embin`.
pub fn sidecar_path(detections: &Path) -> PathBuf {
    detections.with_extension("embin")
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<EmbeddingSidecar> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::Truncated);
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(IngestError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(IngestError::VersionMismatch {
            found: version,
            supported: VERSION,
        });
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
    let n = dim.checked_mul(count).ok_or(IngestError::Truncated)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < n * 4 {
        return Err(IngestError::Truncated);
    }
    let data: Vec<f32> = payload[..n * 4]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingSidecar::new(dim, data)
}

pub fn write_sidecar(side: &EmbeddingSidecar, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(HEADER_LEN + side.data.len() * 4);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(side.dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(side.count() as u64).to_le_bytes());
    for v in &side.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(io_err(path))
}
