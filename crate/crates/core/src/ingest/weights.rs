//! `.twb` weight bundles.
//!
//! Layout: `"TRJW"`, u16 version, then records until end of file. Each record
//! is a u16 name length, the UTF-8 name, a u8 rank, `rank` u32 dims and the
//! f32 payload, all little-endian.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{io_err, IngestError, Result};

const MAGIC: [u8; 4] = *b"TRJW";
pub const WEIGHTS_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size");
        Self { shape, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub version: u16,
    /// Visual embedding width shared by every tensor.
    pub d: usize,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Dim {
    D,
    Hidden,
    Text,
    One,
}

fn expected_shape(name: &str) -> Option<&'static [Dim]> {
    use Dim::*;
    let (group, leaf) = name.split_once('.')?;
    Some(match (group, leaf) {
        ("ln1" | "ln2", "gamma" | "beta") => &[D],
        ("attn" | "cross", "wq" | "wk" | "wv" | "wo") => &[D, D],
        ("attn" | "cross", "bq" | "bk" | "bv" | "bo") => &[D],
        ("mlp", "w1") => &[D, Hidden],
        ("mlp", "b1") => &[Hidden],
        ("mlp", "w2") => &[Hidden, D],
        ("mlp", "b2") => &[D],
        ("concat", "pool_w") => &[D, D],
        ("concat", "pool_b" | "fc_w") => &[D],
        ("concat", "fc_b") => &[One],
        ("lang_proj", "w") => &[Text, D],
        _ => return None,
    })
}

impl WeightBundle {
    /// Checks names, shapes and finiteness, and derives `d`.
    pub fn new(tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut bound: HashMap<Dim, usize> = HashMap::new();
        bound.insert(Dim::One, 1);
        for (name, t) in &tensors {
            let shape = expected_shape(name).ok_or_else(|| IngestError::Shape {
                name: name.clone(),
                message: "unknown tensor name".into(),
            })?;
            if t.shape.len() != shape.len() {
                return Err(IngestError::Shape {
                    name: name.clone(),
                    message: format!("rank {} expected {}", t.shape.len(), shape.len()),
                });
            }
            for (axis, (&sym, &n)) in shape.iter().zip(&t.shape).enumerate() {
                let want = *bound.entry(sym).or_insert(n);
                if want != n || n == 0 {
                    return Err(IngestError::Shape {
                        name: name.clone(),
                        message: format!("axis {axis} has size {n}, expected {want}"),
                    });
                }
            }
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(IngestError::Shape {
                    name: name.clone(),
                    message: "payload size does not match shape".into(),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(IngestError::NonFinite(name.clone()));
            }
        }
        let d = *bound.get(&Dim::D).ok_or_else(|| IngestError::Shape {
            name: "<bundle>".into(),
            message: "no tensor determines the embedding width".into(),
        })?;
        Ok(Self {
            version: WEIGHTS_VERSION,
            d,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(IngestError::Truncated)?;
        if end > self.buf.len() {
            return Err(IngestError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<WeightBundle> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(IngestError::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = cur.u16()?;
    if version != WEIGHTS_VERSION {
        return Err(IngestError::VersionMismatch {
            found: version,
            supported: WEIGHTS_VERSION,
        });
    }
    let mut tensors = BTreeMap::new();
    while !cur.done() {
        let len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|e| IngestError::Invalid(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or(IngestError::Truncated)?;
        let payload = cur.take(count.checked_mul(4).ok_or(IngestError::Truncated)?)?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(IngestError::Shape {
                name,
                message: "tensor appears twice".into(),
            });
        }
    }
    WeightBundle::new(tensors)
}

pub fn write_weights(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&bundle.version.to_le_bytes());
    for (name, t) in &bundle.tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &n in &t.shape {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}
