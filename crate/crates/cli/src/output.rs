//! CSV files and the run manifest.
//!
//! CSV bodies depend only on the configuration and seed; timings and the
//! start time go to `manifest.json` alone.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Shortest round-trip scientific notation, so output is byte-stable.
pub fn num(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub harness_version: String,
    pub seed: u64,
    pub threads: usize,
    pub started_unix: u64,
    pub timings: Vec<Timing>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// An output directory collecting files and stage timings for the manifest.
#[derive(Debug)]
pub struct Output {
    pub dir: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<Timing>,
    stage: Option<(String, Instant)>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Output> {
        std::fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), files: vec![], timings: vec![], stage: None })
    }

    /// Starts timing a stage, closing the previous one.
    pub fn stage(&mut self, name: &str) {
        self.finish_stage();
        log::info!("{name}");
        self.stage = Some((name.to_string(), Instant::now()));
    }

    fn finish_stage(&mut self) {
        if let Some((stage, t0)) = self.stage.take() {
            self.timings.push(Timing { stage, seconds: t0.elapsed().as_secs_f64() });
        }
    }

    /// Writes a CSV with a header row and `\n` line endings.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::HarnessError::Io(e.to_string()))?;
        let path = self.dir.join(name);
        std::fs::write(&path, &bytes)?;
        self.files.push(FileEntry { path: name.to_string(), rows: rows.len(), sha256: sha256_hex(&bytes) });
        Ok(path)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write_manifest(mut self, command: &str, config_text: &str, seed: u64) -> Result<Manifest> {
        self.finish_stage();
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let m = Manifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads: rayon::current_num_threads(),
            started_unix,
            timings: self.timings,
            files: self.files,
        };
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_unix_line_endings_and_hashes_the_body() {
        let dir = std::env::temp_dir().join(format!("lpx-output-{}", std::process::id()));
        let mut out = Output::create(&dir).unwrap();
        out.write_csv("a.csv", &["x", "y"], &[vec![num(0.5), num(1e-20)]]).unwrap();
        let body = std::fs::read(dir.join("a.csv")).unwrap();
        assert_eq!(body, b"x,y\n5e-1,1e-20\n");
        assert_eq!(out.files()[0].sha256, sha256_hex(&body));
        let m = out.write_manifest("test", "seed = 1", 1).unwrap();
        assert_eq!(m.files.len(), 1);
        assert!(dir.join("manifest.json").exists());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
