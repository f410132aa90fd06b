//! File plumbing shared by the stages. Every written artifact gets a
//! `<name>.meta.json` sidecar; timestamps live only there.

use std::path::{Path, PathBuf};

use labelfree::fingerprint;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::StageError;

pub struct Writer<'a> {
    pub stage: &'static str,
    pub config_fingerprint: &'a str,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    stage: &'a str,
    config_fingerprint: &'a str,
    artifact_fingerprint: String,
    created_at: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

impl Writer<'_> {
    pub fn text(&self, path: &Path, contents: &str) -> Result<(), StageError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, contents)
            .map_err(|e| StageError::Other(format!("{}: {e}", path.display())))?;
        self.write_sidecar(path, contents.as_bytes())?;
        log::info!("wrote {}", path.display());
        Ok(())
    }

    /// Sidecar for a file some other component already wrote.
    pub fn sidecar(&self, path: &Path) -> Result<(), StageError> {
        let bytes = std::fs::read(path)?;
        self.write_sidecar(path, &bytes)
    }

    fn write_sidecar(&self, path: &Path, contents: &[u8]) -> Result<(), StageError> {
        let meta = Sidecar {
            stage: self.stage,
            config_fingerprint: self.config_fingerprint,
            artifact_fingerprint: fingerprint::of_bytes(contents),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut meta_text = serde_json::to_string_pretty(&meta).expect("sidecar serializes");
        meta_text.push('\n');
        std::fs::write(sidecar_path(path), meta_text)?;
        Ok(())
    }

    pub fn jsonl<T: Serialize>(&self, path: &Path, items: &[T]) -> Result<(), StageError> {
        let mut out = String::new();
        for item in items {
            out.push_str(&serde_json::to_string(item).map_err(|e| StageError::Other(e.to_string()))?);
            out.push('\n');
        }
        self.text(path, &out)
    }

    /// Pretty JSON object with `config_fingerprint` added at the top level.
    pub fn json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StageError> {
        let mut v = serde_json::to_value(value).map_err(|e| StageError::Other(e.to_string()))?;
        if let Some(map) = v.as_object_mut() {
            map.insert("config_fingerprint".into(), self.config_fingerprint.into());
        }
        let mut text = serde_json::to_string_pretty(&v).expect("value serializes");
        text.push('\n');
        self.text(path, &text)
    }
}

pub fn require(path: &Path, what: &'static str) -> Result<(), StageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageError::StageInputMissing {
            what,
            path: path.to_path_buf(),
        })
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<T>, StageError> {
    require(path, what)?;
    labelfree::jsonl::read(path).map_err(|e| StageError::ingest(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T, StageError> {
    require(path, what)?;
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| StageError::ingest(path, e))
}
