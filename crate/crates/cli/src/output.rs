//! Output directory bookkeeping: files, hashes and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config_sha256: String,
    pub outputs: Vec<OutputEntry>,
    pub workers: usize,
    pub wall_time_seconds: f64,
    pub verdict: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Formats a float with 17 significant digits, the CSV convention.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct OutputDir {
    dir: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), String> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        self.entries.push(OutputEntry {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), String> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| format!("{name}: {e}"))?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Opens a streaming CSV file; call [`OutputDir::finish_csv`] when done.
    pub fn csv(&self, name: &str) -> Result<csv::Writer<BufWriter<File>>, String> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        Ok(csv::Writer::from_writer(BufWriter::new(file)))
    }

    pub fn finish_csv(&mut self, name: &str, mut writer: csv::Writer<BufWriter<File>>) -> Result<(), String> {
        writer.flush().map_err(|e| format!("{name}: {e}"))?;
        drop(writer);
        let path = self.path(name);
        let mut file = File::open(&path).map_err(|e| format!("{name}: {e}"))?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let k = file.read(&mut buf).map_err(|e| format!("{name}: {e}"))?;
            if k == 0 {
                break;
            }
            hasher.update(&buf[..k]);
            bytes += k as u64;
        }
        self.entries.push(OutputEntry {
            name: name.to_string(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    pub fn write_manifest(&self, manifest: &Manifest) -> Result<(), String> {
        let path = self.path(MANIFEST);
        let mut text = serde_json::to_string_pretty(manifest).map_err(|e| e.to_string())?;
        text.push('\n');
        let mut f = File::create(&path).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        f.write_all(text.as_bytes()).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
