use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{data, io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the manifest's directory when possible.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    #[serde(default)]
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub timings: Vec<Timing>,
    #[serde(default)]
    pub summary: serde_json::Map<String, serde_json::Value>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn display_path(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().into_owned()
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            config_hash: config.digest(),
            parameters: serde_json::Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.parameters.insert(key.to_string(), value.into());
    }

    pub fn summarize(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    pub fn add_input(&mut self, path: &Path, base: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.inputs.push(FileRecord {
            path: display_path(path, base),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path, base: &Path) -> Result<()> {
        let (sha256, bytes) = sha256_file(path)?;
        self.outputs.push(FileRecord {
            path: display_path(path, base),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Checks that every recorded output exists with the recorded digest.
    pub fn verify(&self, base: &Path) -> Result<()> {
        for rec in &self.outputs {
            let path = resolve(base, &rec.path);
            if !path.exists() {
                return data(format!("manifest output {} is missing", path.display()));
            }
            let (sha, _) = sha256_file(&path)?;
            if sha != rec.sha256 {
                return data(format!("digest mismatch for {}", path.display()));
            }
        }
        Ok(())
    }

    pub fn output_digests(&self) -> Vec<(String, String)> {
        self.outputs.iter().map(|r| (r.path.clone(), r.sha256.clone())).collect()
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Wall-clock stage timer.
#[derive(Debug)]
pub struct StageClock {
    last: Instant,
    pub stages: Vec<Timing>,
}

impl Default for StageClock {
    fn default() -> Self {
        Self {
            last: Instant::now(),
            stages: Vec::new(),
        }
    }
}

impl StageClock {
    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push(Timing {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.bin");
        std::fs::write(&f, b"abc").unwrap();
        let mut m = RunManifest::new("test", &RunConfig::default());
        m.add_output(&f, dir.path()).unwrap();
        assert_eq!(m.outputs[0].path, "a.bin");
        assert_eq!(
            m.outputs[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        m.verify(dir.path()).unwrap();

        let mpath = dir.path().join("manifest.json");
        m.write(&mpath).unwrap();
        assert_eq!(RunManifest::read(&mpath).unwrap(), m);

        std::fs::write(&f, b"abd").unwrap();
        assert!(m.verify(dir.path()).is_err());
        std::fs::remove_file(&f).unwrap();
        assert!(m.verify(dir.path()).unwrap_err().to_string().contains("missing"));
    }
}
