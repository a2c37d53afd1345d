//! JSON Lines dataset manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub claim_doc: String,
    /// Evidence documents in their retrieval order; each was matched to the
    /// claim image upstream.
    pub evidence_docs: Vec<String>,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory relative document references resolve against.
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn resolve(&self, reference: &str) -> PathBuf {
        let p = Path::new(reference);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Every referenced path that does not exist, in manifest order.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        let mut missing = Vec::new();
        for rec in &self.records {
            for r in std::iter::once(&rec.claim_doc).chain(&rec.evidence_docs) {
                let p = self.resolve(r);
                if !p.is_file() && !missing.contains(&p) {
                    missing.push(p);
                }
            }
        }
        missing
    }
}

/// Parses manifest text without touching the filesystem.
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<DatasetManifest, IngestError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| IngestError::parse(i + 1, format!("manifest record: {e}")))?;
        if rec.label > 1 {
            return Err(IngestError::parse(
                i + 1,
                format!("label must be 0 or 1, got {}", rec.label),
            ));
        }
        if records.iter().any(|r: &ManifestRecord| r.id == rec.id) {
            return Err(IngestError::parse(i + 1, format!("duplicate id {:?}", rec.id)));
        }
        records.push(rec);
    }
    Ok(DatasetManifest {
        base_dir: base_dir.to_path_buf(),
        records,
    })
}

/// Loads a manifest and checks that every referenced document exists.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let manifest = parse_manifest(&text, base)?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        return Err(IngestError::MissingFiles(missing));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let text = r#"{"id":"s1","claim_doc":"c.conllu","evidence_docs":["e1.conllu","e2.conllu"],"label":1,"image_key":"img1"}
{"id":"s2","claim_doc":"c2.conllu","evidence_docs":[],"label":0}
"#;
        let m = parse_manifest(text, Path::new("/data")).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].image_key.as_deref(), Some("img1"));
        assert_eq!(m.records[1].image_key, None);
        assert_eq!(m.resolve("c.conllu"), PathBuf::from("/data/c.conllu"));
    }

    #[test]
    fn rejects_non_binary_label() {
        let text = r#"{"id":"s1","claim_doc":"c","evidence_docs":[],"label":2}"#;
        assert!(parse_manifest(text, Path::new(".")).is_err());
    }

    #[test]
    fn lists_every_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.conllu"), "").unwrap();
        let text = r#"{"id":"s1","claim_doc":"c.conllu","evidence_docs":["a.conllu","b.conllu"],"label":1}"#;
        let path = dir.path().join("m.jsonl");
        fs::write(&path, text).unwrap();
        match load_manifest(&path) {
            Err(IngestError::MissingFiles(files)) => assert_eq!(files.len(), 2),
            other => panic!("expected missing files, got {other:?}"),
        }
    }
}
