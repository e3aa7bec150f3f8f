//! Run manifest: a key-value text file holding the config digest, every
//! resolved parameter, per-cell status flags, and the wall clock. The wall
//! clock and creation time live here and only here, so result CSVs stay
//! byte-identical across reruns.

use std::path::Path;

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

pub struct Manifest {
    lines: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let mut lines = vec![
            ("manifest_version".to_string(), "1".to_string()),
            ("crate_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("config_digest".to_string(), cfg.digest()),
        ];
        for (k, v) in cfg.canonical_entries() {
            lines.push((format!("config.{k}"), v));
        }
        Self { lines }
    }

    pub fn note(&mut self, key: &str, value: String) {
        self.lines.push((key.to_string(), value));
    }

    pub fn set_wall_clock(&mut self, secs: f64) {
        self.note("wall_clock_secs", format!("{secs:.3}"));
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs().to_string())
            .unwrap_or_else(|_| "0".to_string());
        self.note("created_unix", now);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.lines {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
    }
}
