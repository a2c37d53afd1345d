//! Readers for annotated documents, dataset manifests and embedding tables.

mod conllu;
mod embedding;
mod manifest;
mod tsv;

use std::path::{Path, PathBuf};

pub use conllu::{parse_conllu, to_conllu, BioPosition, EntitySpan, NerTag, ParsedDocument, Sentence, Token};
pub(crate) use embedding::write_atomic;
pub use embedding::{fallback_embed, load_embedding_table, EmbeddingTable, EGTB_MAGIC, EGTB_VERSION, FALLBACK_DIMS};
pub use manifest::{load_manifest, parse_manifest, DatasetManifest, ManifestRecord};
pub use tsv::{parse_key_tsv, to_key_tsv};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding table: {0}")]
    Embedding(String),
    #[error("embedding table truncated at byte {offset} (wanted {wanted} more bytes)")]
    Truncated { offset: usize, wanted: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing files: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingFiles(Vec<PathBuf>),
}

impl IngestError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Reads and parses one CoNLL-U file. Documents without a `newdoc id`
/// comment take the file stem as their id.
pub fn load_document(path: &Path) -> Result<ParsedDocument, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let mut doc = parse_conllu(&text).map_err(|e| match e {
        IngestError::Parse { line, message } => IngestError::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })?;
    if doc.doc_id.is_empty() {
        doc.doc_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(doc)
}
