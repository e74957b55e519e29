use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

/// Provenance record written next to every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
}

pub fn sha256_file(path: &Path) -> std::io::Result<InputDigest> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Collects manifest fields over the life of one command.
pub struct ManifestBuilder {
    subcommand: String,
    argv: Vec<String>,
    threads: usize,
    started: Instant,
    started_unix: u64,
    inputs: Vec<InputDigest>,
    config: serde_json::Value,
    seed: Option<u64>,
}

impl ManifestBuilder {
    pub fn start(subcommand: &str, argv: &[String], threads: usize) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            argv: argv.to_vec(),
            threads,
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let d = sha256_file(path).map_err(|e| crate::error::CliError::from(e).context(path.display()))?;
        self.inputs.push(d);
        Ok(())
    }

    pub fn config(&mut self, config: serde_json::Value, seed: Option<u64>) {
        self.config = config;
        self.seed = seed;
    }

    pub fn finish(self, outputs: Vec<PathBuf>) -> RunManifest {
        RunManifest {
            command: self.argv,
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            seed: self.seed,
            threads: self.threads,
            inputs: self.inputs,
            outputs,
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        }
    }
}

impl RunManifest {
    /// Writes `manifest.json` into `dir`.
    pub fn write_in_dir(&self, dir: &Path) -> CliResult<PathBuf> {
        self.write_to(&dir.join(MANIFEST_FILE))
    }

    /// Writes `<artifact>.manifest.json` next to a file artifact.
    pub fn write_beside(&self, artifact: &Path) -> CliResult<PathBuf> {
        self.write_to(&beside(artifact))
    }

    fn write_to(&self, path: &Path) -> CliResult<PathBuf> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| crate::error::CliError::from(e).context(path.display()))?;
        Ok(path.to_path_buf())
    }
}

pub fn beside(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(MANIFEST_FILE);
    artifact.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        let d = sha256_file(&p).unwrap();
        assert_eq!(d.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(d.bytes, 3);
    }

    #[test]
    fn manifest_path_sits_next_to_artifact() {
        assert_eq!(beside(Path::new("out/model.ckpt")), Path::new("out/model.ckpt.manifest.json"));
    }
}
