//! Output helpers: deterministic JSON/CSV writers and the run manifest.
//!
//! A run with the same config and seed must produce byte-identical files,
//! so nothing here records timestamps, hostnames, or absolute paths. The
//! manifest lists every artifact with the hash of the resolved config that
//! produced it, so downstream tooling can detect mixed-provenance output
//! directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// FNV-1a over the canonical TOML serialization of the config. Stable
/// across platforms and runs, unlike `DefaultHasher`.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let text = toml::to_string(cfg).map_err(|e| Error::Config(format!("{e}")))?;
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    Ok(format!("{h:016x}"))
}

/// Serialize a report as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Input(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Write a CSV table. Floats are formatted with `{:.17e}` so round trips
/// are lossless and the byte stream is deterministic.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Input(format!(
                "csv row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        let mut first = true;
        for v in row {
            if !first {
                text.push(',');
            }
            first = false;
            let _ = write!(text, "{v:.17e}");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    config_hash: String,
}

/// Accumulates the artifacts of one run and writes `manifest.json` last.
pub struct Manifest {
    out_dir: PathBuf,
    hash: String,
    entries: Vec<ManifestEntry>,
    config_text: Option<String>,
}

impl Manifest {
    pub fn new(out_dir: &Path, config_hash: String) -> Result<Self> {
        fs::create_dir_all(out_dir)?;
        Ok(Manifest {
            out_dir: out_dir.to_path_buf(),
            hash: config_hash,
            entries: Vec::new(),
            config_text: None,
        })
    }

    /// Echo the fully resolved config (defaults materialized) into the
    /// manifest document.
    pub fn set_config_text(&mut self, text: String) {
        self.config_text = Some(text);
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn record(&mut self, name: &str) {
        self.entries.push(ManifestEntry {
            file: name.to_string(),
            config_hash: self.hash.clone(),
        });
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        write_json(&self.out_dir.join(name), value)?;
        self.record(name);
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        write_csv(&self.out_dir.join(name), header, rows)?;
        self.record(name);
        Ok(())
    }

    /// Write the manifest itself. Entries are sorted by file name so the
    /// result is independent of production order (and so of --workers).
    pub fn finish(mut self) -> Result<()> {
        self.entries.sort_by(|a, b| a.file.cmp(&b.file));
        #[derive(Serialize)]
        struct ManifestDoc<'a> {
            config_hash: &'a str,
            resolved_config: Option<&'a str>,
            files: &'a [ManifestEntry],
        }
        write_json(
            &self.out_dir.join("manifest.json"),
            &ManifestDoc {
                config_hash: &self.hash,
                resolved_config: self.config_text.as_deref(),
                files: &self.entries,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = crate::config::RunConfig::default();
        let h1 = config_hash(&cfg).unwrap();
        let h2 = config_hash(&cfg).unwrap();
        assert_eq!(h1, h2);
        let mut cfg2 = cfg.clone();
        cfg2.seed += 1;
        assert_ne!(h1, config_hash(&cfg2).unwrap());
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let dir = std::env::temp_dir().join("magspec_io_test_ragged");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let err = write_csv(&path, &["a", "b"], &[vec![1.0]]);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn manifest_lists_files_sorted() {
        let dir = std::env::temp_dir().join("magspec_io_test_manifest");
        let _ = std::fs::remove_dir_all(&dir);
        let mut m = Manifest::new(&dir, "deadbeef".into()).unwrap();
        m.csv("zz.csv", &["x"], &[vec![1.0]]).unwrap();
        m.json("aa.json", &serde_json::json!({"k": 1})).unwrap();
        m.finish().unwrap();
        let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let files: Vec<&str> = doc["files"]
            .as_array()
            .unwrap()
            .iter()
            .map(|e| e["file"].as_str().unwrap())
            .collect();
        assert_eq!(files, vec!["aa.json", "zz.csv"]);
        assert!(!text.contains("time"));
        let _ = std::fs::remove_dir_all(&dir);
    }
}
