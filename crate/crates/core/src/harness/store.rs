//! Where layer stacks come from: an on-disk EMB1 store with a JSON index,
//! or an in-memory map.
//!
//! The index lives at `<root>/index.json`:
//!
//! ```json
//! {"entries": [{"extractor_id": "spectral", "clip_id": "clip_0000",
//!               "file": "spectral/clip_0000.emb1", "layers": 1, "frames": 98, "channels": 32}]}
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emb1::{load_embedding, read_header, write_embedding};
use crate::error::{Error, Result};
use crate::fusion::LayerStack;

pub const INDEX_FILE: &str = "index.json";

/// Anything that can hand out the layer stack of `(extractor, clip)`.
pub trait StackSource: Sync {
    fn contains(&self, extractor_id: &str, clip_id: &str) -> bool;
    fn stack(&self, extractor_id: &str, clip_id: &str) -> Result<LayerStack>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub extractor_id: String,
    pub clip_id: String,
    /// Relative to the store root.
    pub file: PathBuf,
    pub layers: u32,
    pub frames: u32,
    pub channels: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct IndexFile {
    entries: Vec<IndexEntry>,
}

/// On-disk collection of EMB1 files.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    root: PathBuf,
    index: BTreeMap<(String, String), IndexEntry>,
}

impl EmbeddingStore {
    /// Reads `<root>/index.json`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: IndexFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut index = BTreeMap::new();
        for entry in file.entries {
            let key = (entry.extractor_id.clone(), entry.clip_id.clone());
            if index.insert(key, entry).is_some() {
                return Err(Error::Config(format!(
                    "{}: duplicate index entry",
                    path.display()
                )));
            }
        }
        Ok(Self { root, index })
    }

    /// Empty store rooted at `root`; the directory is created.
    pub fn create(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            index: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> impl Iterator<Item = &IndexEntry> {
        self.index.values()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Writes `<root>/<extractor>/<clip>.emb1` and records it.
    pub fn insert(&mut self, extractor_id: &str, clip_id: &str, stack: &LayerStack) -> Result<()> {
        let rel = PathBuf::from(extractor_id).join(format!("{clip_id}.emb1"));
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_embedding(stack, &path)?;
        self.index.insert(
            (extractor_id.to_string(), clip_id.to_string()),
            IndexEntry {
                extractor_id: extractor_id.to_string(),
                clip_id: clip_id.to_string(),
                file: rel,
                layers: stack.layer_count() as u32,
                frames: stack.frames() as u32,
                channels: stack.channels() as u32,
            },
        );
        Ok(())
    }

    /// Writes the index, sorted by `(extractor, clip)`.
    pub fn save_index(&self) -> Result<()> {
        let file = IndexFile {
            entries: self.index.values().cloned().collect(),
        };
        let path = self.root.join(INDEX_FILE);
        let text = serde_json::to_string_pretty(&file).expect("index serialises");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    fn check_entry(&self, entry: &IndexEntry, dims: (u32, u32, u32), path: &Path) -> Result<()> {
        let indexed = (entry.layers, entry.frames, entry.channels);
        if dims != indexed {
            return Err(Error::Shape(format!(
                "{}: file holds L,T,C = {dims:?}, index says {indexed:?}",
                path.display()
            )));
        }
        Ok(())
    }

    /// Checks every indexed file exists, parses its header and matches the index.
    pub fn verify(&self) -> Result<()> {
        for entry in self.index.values() {
            let path = self.root.join(&entry.file);
            let h = read_header(&path)?;
            self.check_entry(entry, (h.layers, h.frames, h.channels), &path)?;
            let expected = h.file_len();
            let actual = std::fs::metadata(&path)
                .map_err(|e| Error::io(&path, e))?
                .len();
            if expected != actual {
                return Err(Error::Corruption {
                    path,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

impl StackSource for EmbeddingStore {
    fn contains(&self, extractor_id: &str, clip_id: &str) -> bool {
        self.index
            .contains_key(&(extractor_id.to_string(), clip_id.to_string()))
    }

    fn stack(&self, extractor_id: &str, clip_id: &str) -> Result<LayerStack> {
        let entry = self
            .index
            .get(&(extractor_id.to_string(), clip_id.to_string()))
            .ok_or_else(|| Error::Lookup(format!("no embedding for {extractor_id}/{clip_id}")))?;
        let path = self.root.join(&entry.file);
        let stack = load_embedding(&path)?;
        self.check_entry(
            entry,
            (
                stack.layer_count() as u32,
                stack.frames() as u32,
                stack.channels() as u32,
            ),
            &path,
        )?;
        Ok(stack)
    }
}

/// Stacks held in memory, keyed by `(extractor, clip)`.
#[derive(Debug, Clone, Default)]
pub struct MemoryStore {
    stacks: BTreeMap<(String, String), LayerStack>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        extractor_id: impl Into<String>,
        clip_id: impl Into<String>,
        stack: LayerStack,
    ) {
        self.stacks
            .insert((extractor_id.into(), clip_id.into()), stack);
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }
}

impl StackSource for MemoryStore {
    fn contains(&self, extractor_id: &str, clip_id: &str) -> bool {
        self.stacks
            .contains_key(&(extractor_id.to_string(), clip_id.to_string()))
    }

    fn stack(&self, extractor_id: &str, clip_id: &str) -> Result<LayerStack> {
        self.stacks
            .get(&(extractor_id.to_string(), clip_id.to_string()))
            .cloned()
            .ok_or_else(|| Error::Lookup(format!("no embedding for {extractor_id}/{clip_id}")))
    }
}
