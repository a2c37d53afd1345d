//! Checkpoints: a JSON manifest next to a binary blob of named tensors.
//!
//! Blob records, repeated: u32 name length, UTF-8 name, u32 rank, rank × u32
//! dims, then the f32 values. All integers and floats are little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Classifier, ModelConfig, ModelError};
use crate::autodiff::Tensor;
use crate::ingest::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "ctxgraph-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub parameter_count: usize,
    pub seed: u64,
    pub epoch: usize,
    pub blob: String,
    pub tensors: Vec<String>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn encode(model: &Classifier<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    for (spec, t) in model.layout.specs.iter().zip(&model.params) {
        out.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| ModelError::Checkpoint(format!("blob truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, ModelError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let len = cur.u32()?;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()?;
        let dims = (0..rank).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => return Err(ModelError::Checkpoint(format!("{name}: unsupported rank {rank}"))),
        };
        let data = cur
            .take(rows * cols * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)?));
    }
    Ok(out)
}

/// Writes `<path>` (manifest) and `<path>` with a `.bin` extension (blob).
pub fn save_checkpoint(model: &Classifier<f32>, seed: u64, epoch: usize, path: &Path) -> Result<(), ModelError> {
    let blob = blob_path(path);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        config: model.config.clone(),
        parameter_count: model.parameter_count(),
        seed,
        epoch,
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        tensors: model.names().map(str::to_string).collect(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    }
    write_atomic(&blob, &encode(model)).map_err(|e| ModelError::io(&blob, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(|e| ModelError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Classifier<f32>, CheckpointManifest), ModelError> {
    let text = fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != 1 {
        return Err(ModelError::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| ModelError::io(&blob, e))?;
    let named = decode(&bytes)?;
    let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    if names != manifest.tensors.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(ModelError::Checkpoint("blob tensors differ from manifest".into()));
    }
    let model = Classifier::from_parts(manifest.config.clone(), named.into_iter().map(|(_, t)| t).collect())?;
    if model.names().ne(manifest.tensors.iter().map(String::as_str)) {
        return Err(ModelError::Checkpoint(
            "tensor names do not match the configured layout".into(),
        ));
    }
    Ok((model, manifest))
}
