use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, IngestError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Base,
    Novel,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Base => "base",
            Split::Novel => "novel",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyEntry {
    pub category_id: u32,
    pub name: String,
    pub split: Split,
    /// Attribute sentence; may be empty.
    pub description: String,
    /// Text embedding of the plain category name.
    pub cate_embedding: Vec<f32>,
    /// Text embedding of the attribute-enriched name.
    pub attr_embedding: Vec<f32>,
}

/// Validated category list with O(1) id lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    dim_text: usize,
    entries: Vec<VocabularyEntry>,
    index: HashMap<u32, usize>,
}

impl Vocabulary {
    pub fn new(dim_text: usize, entries: Vec<VocabularyEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.category_id, i).is_some() {
                return Err(IngestError::DuplicateCategory(e.category_id));
            }
            for (field, emb) in [
                ("cate_emb", &e.cate_embedding),
                ("attr_emb", &e.attr_embedding),
            ] {
                if emb.len() != dim_text {
                    return Err(IngestError::DimMismatch {
                        id: e.category_id,
                        field,
                        expected: dim_text,
                        found: emb.len(),
                    });
                }
                if emb.iter().any(|v| !v.is_finite()) {
                    return Err(IngestError::Invalid(format!(
                        "category {}: {field} contains a non-finite value",
                        e.category_id
                    )));
                }
            }
        }
        Ok(Self {
            dim_text,
            entries,
            index,
        })
    }

    pub fn dim_text(&self) -> usize {
        self.dim_text
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&VocabularyEntry> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn splits(&self) -> BTreeMap<u32, Split> {
        self.entries
            .iter()
            .map(|e| (e.category_id, e.split))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    dim_text: u32,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    id: u32,
    name: String,
    split: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    cate_emb: Option<Vec<f32>>,
    #[serde(default)]
    attr_emb: Option<Vec<f32>>,
}

pub fn load_vocabulary(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: VocabFile = serde_json::from_str(&text)?;
    let mut entries = Vec::with_capacity(file.entries.len());
    for e in file.entries {
        let split = match e.split.as_str() {
            "base" => Split::Base,
            "novel" => Split::Novel,
            _ => {
                return Err(IngestError::InvalidSplit {
                    id: e.id,
                    value: e.split,
                })
            }
        };
        let cate_embedding = e.cate_emb.ok_or(IngestError::MissingEmbedding {
            id: e.id,
            field: "cate_emb",
        })?;
        let attr_embedding = e.attr_emb.ok_or(IngestError::MissingEmbedding {
            id: e.id,
            field: "attr_emb",
        })?;
        entries.push(VocabularyEntry {
            category_id: e.id,
            name: e.name,
            split,
            description: e.description,
            cate_embedding,
            attr_embedding,
        });
    }
    Vocabulary::new(file.dim_text as usize, entries)
}

pub fn write_vocabulary(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = VocabFile {
        dim_text: vocab.dim_text as u32,
        entries: vocab
            .entries
            .iter()
            .map(|e| EntryFile {
                id: e.category_id,
                name: e.name.clone(),
                split: e.split.as_str().to_string(),
                description: e.description.clone(),
                cate_emb: Some(e.cate_embedding.clone()),
                attr_emb: Some(e.attr_embedding.clone()),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&file)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
