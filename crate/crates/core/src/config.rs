//! Run configuration: one flat JSON object holding the training fields and
//! the artifact paths. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::pipeline::PipelineError;
use crate::ranking::DEFAULT_TOP_K;
use crate::train::TrainConfig;

const PATH_KEYS: [&str; 3] = ["label_table", "image_table", "text_table"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Label embeddings keyed by node label; hashed fallback when absent.
    pub label_table: Option<PathBuf>,
    /// Image embeddings keyed by image key, for ranking.
    pub image_table: Option<PathBuf>,
    /// Evidence document embeddings keyed by document reference, for ranking.
    pub text_table: Option<PathBuf>,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            label_table: None,
            image_table: None,
            text_table: None,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let bad = |m: String| PipelineError::Config(m);
        let mut map: Map<String, Value> = match serde_json::from_str(text) {
            Ok(Value::Object(m)) => m,
            Ok(_) => return Err(bad("config must be a single JSON object".into())),
            Err(e) => return Err(bad(format!("config is not valid JSON: {e}"))),
        };
        let mut cfg = RunConfig::default();
        let mut paths = [None, None, None];
        for (slot, key) in paths.iter_mut().zip(PATH_KEYS) {
            match map.remove(key) {
                None | Some(Value::Null) => {}
                Some(Value::String(s)) => *slot = Some(PathBuf::from(s)),
                Some(other) => return Err(bad(format!("`{key}` must be a path string, got {other}"))),
            }
        }
        [cfg.label_table, cfg.image_table, cfg.text_table] = paths;
        if let Some(v) = map.remove("top_k") {
            cfg.top_k = v
                .as_u64()
                .filter(|&k| k > 0)
                .ok_or_else(|| bad(format!("`top_k` must be a positive integer, got {v}")))?
                as usize;
        }
        cfg.train = serde_json::from_value(Value::Object(map)).map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The resolved configuration as one flat JSON object.
    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.train).expect("config serializes") {
            Value::Object(m) => m,
            _ => unreachable!("TrainConfig serializes to an object"),
        };
        let paths = [&self.label_table, &self.image_table, &self.text_table];
        for (key, p) in PATH_KEYS.iter().zip(paths) {
            map.insert(
                key.to_string(),
                p.as_ref()
                    .map_or(Value::Null, |p| Value::String(p.display().to_string())),
            );
        }
        map.insert("top_k".into(), Value::from(self.top_k));
        serde_json::to_string(&map).expect("config serializes")
    }

    /// Checks field values and that every configured path exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.train.validate()?;
        let paths = [&self.label_table, &self.image_table, &self.text_table];
        for (key, p) in PATH_KEYS.iter().zip(paths) {
            if let Some(p) = p.as_ref().filter(|p| !p.is_file()) {
                return Err(PipelineError::Config(format!("`{key}` {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_object_round_trips() {
        let cfg = RunConfig::from_json(r#"{"epochs": 3, "conv": "gat", "top_k": 5, "label_table": "t.egtb"}"#).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.top_k, 5);
        assert_eq!(cfg.label_table.as_deref(), Some(Path::new("t.egtb")));
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::from_json(r#"{"epoch": 3}"#).unwrap_err();
        assert!(matches!(e, PipelineError::Config(m) if m.contains("epoch")));
        assert!(RunConfig::from_json("[1]").is_err());
        assert!(RunConfig::from_json(r#"{"top_k": 0}"#).is_err());
    }

    #[test]
    fn missing_path_fails_validation() {
        let cfg = RunConfig {
            text_table: Some("/nonexistent/x.egtb".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
    }
}
