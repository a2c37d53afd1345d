//! EGTB embedding tables and the hashing fallback embedder.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"EGTB" | u32 version = 1 | u32 dim | u64 count
//! count × ( u32 key_len | key bytes (UTF-8) | dim × f32 )
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::IngestError;

pub const EGTB_MAGIC: &[u8; 4] = b"EGTB";
pub const EGTB_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: IndexMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Adds an entry, rejecting duplicates, wrong lengths and non-finite values.
    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<(), IngestError> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(IngestError::Embedding(format!(
                "vector for {key:?} has length {} but table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::Embedding(format!(
                "vector for {key:?} has non-finite entries"
            )));
        }
        if self.entries.contains_key(&key) {
            return Err(IngestError::Embedding(format!("duplicate key {key:?}")));
        }
        self.entries.insert(key, vector);
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.entries.len() * (8 + 4 * self.dim));
        out.extend_from_slice(EGTB_MAGIC);
        out.extend_from_slice(&EGTB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, vec) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != EGTB_MAGIC {
            return Err(IngestError::Embedding("bad magic, expected EGTB".into()));
        }
        let version = r.u32()?;
        if version != EGTB_VERSION {
            return Err(IngestError::Embedding(format!("unsupported EGTB version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(IngestError::Embedding("dim must be positive".into()));
        }
        let count = r.u64()?;
        let mut table = EmbeddingTable::new(dim);
        for _ in 0..count {
            let key_len = r.u32()? as usize;
            let key = std::str::from_utf8(r.take(key_len)?)
                .map_err(|_| IngestError::Embedding("key is not valid UTF-8".into()))?
                .to_string();
            let raw = r.take(dim * 4)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            table.insert(key, vector)?;
        }
        if r.pos != bytes.len() {
            return Err(IngestError::Embedding(format!(
                "{} trailing bytes after {count} entries",
                bytes.len() - r.pos
            )));
        }
        Ok(table)
    }

    /// Writes through a temporary file and renames it into place.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IngestError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(IngestError::Truncated {
                offset: self.pos,
                wanted: n,
            }),
        }
    }

    fn u32(&mut self) -> Result<u32, IngestError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, IngestError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn load_embedding_table(path: &Path) -> Result<EmbeddingTable, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes)
}

/// Dimensions the hashing embedder supports.
pub const FALLBACK_DIMS: [usize; 2] = [384, 768];

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic text embedding from signed character-trigram hashing.
///
/// The text is lowercased, every window of three characters is hashed with
/// FNV-1a into one of `dim` buckets (sign from the top hash bit), and the
/// count vector is L2-normalized. Non-empty texts shorter than three
/// characters hash as a single gram. A vector that ends up all-zero (empty
/// text, or cancelling counts) becomes the basis vector e₀.
pub fn fallback_embed(text: &str, dim: usize) -> Result<Vec<f32>, IngestError> {
    if !FALLBACK_DIMS.contains(&dim) {
        return Err(IngestError::Embedding(format!(
            "fallback embedder supports dims 384 and 768, got {dim}"
        )));
    }
    let chars: Vec<char> = text.to_lowercase().chars().collect();
    let mut counts = vec![0f64; dim];
    let mut add = |gram: &[char]| {
        let s: String = gram.iter().collect();
        let h = fnv1a(s.as_bytes());
        let bucket = (h % dim as u64) as usize;
        counts[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
    };
    if chars.len() >= 3 {
        chars.windows(3).for_each(&mut add);
    } else if !chars.is_empty() {
        add(&chars);
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut out = vec![0f32; dim];
    if norm == 0.0 {
        out[0] = 1.0;
    } else {
        for (o, c) in out.iter_mut().zip(&counts) {
            *o = (c / norm) as f32;
        }
    }
    Ok(out)
}
