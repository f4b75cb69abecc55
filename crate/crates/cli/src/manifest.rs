//! Run manifests: what a command read, wrote, and how long each phase took.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{CliResult, Failure};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Relative to the manifest's directory when the file lives below it.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub args: serde_json::Value,
    pub config_hash: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub phases: Vec<Phase>,
}

pub fn sha256_file(path: &Path) -> CliResult<(String, u64)> {
    let bytes = std::fs::read(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

/// Where the manifest of a command writing to `out` goes: inside `out` when
/// it is a directory, next to it otherwise.
pub fn manifest_path(out: &Path, out_is_dir: bool) -> PathBuf {
    if out_is_dir {
        out.join("manifest.json")
    } else {
        out.with_extension("manifest.json")
    }
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    base: PathBuf,
    clock: Instant,
}

impl ManifestBuilder {
    /// `location` is the final manifest path; file paths are recorded
    /// relative to its directory.
    pub fn new(command: &str, args: serde_json::Value, seeds: Vec<u64>, location: &Path) -> Self {
        let base = location.parent().map(Path::to_path_buf).unwrap_or_default();
        // where results go does not change what they are
        let mut keyed = args.clone();
        if let Some(o) = keyed.as_object_mut() {
            o.remove("out");
        }
        Self {
            manifest: RunManifest {
                run_id: String::new(),
                command: command.to_string(),
                config_hash: ctxflow::metrics::config_hash(&keyed),
                args,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seeds,
                inputs: Vec::new(),
                outputs: Vec::new(),
                phases: Vec::new(),
            },
            base,
            clock: Instant::now(),
        }
    }

    fn record(&self, path: &Path) -> CliResult<FileRecord> {
        let (sha256, bytes) = sha256_file(path)?;
        let rel = path.strip_prefix(&self.base).unwrap_or(path);
        Ok(FileRecord { path: rel.to_string_lossy().into_owned(), sha256, bytes })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let r = self.record(path)?;
        self.manifest.inputs.push(r);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        let r = self.record(path)?;
        self.manifest.outputs.push(r);
        Ok(())
    }

    /// Close the current phase (timed from the previous one).
    pub fn phase(&mut self, name: &str) {
        let wall_ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.manifest.phases.push(Phase { name: name.to_string(), wall_ms });
        self.clock = Instant::now();
    }

    /// Fix the run id (a hash of command, configuration and input contents)
    /// and write the manifest to `location`.
    pub fn finish(mut self, location: &Path) -> CliResult<RunManifest> {
        let m = &mut self.manifest;
        let key = serde_json::json!({
            "command": m.command,
            "config": m.config_hash,
            "inputs": m.inputs.iter().map(|f| &f.sha256).collect::<Vec<_>>(),
        });
        m.run_id = ctxflow::metrics::config_hash(&key);
        std::fs::write(location, serde_json::to_string_pretty(m)?)?;
        Ok(self.manifest)
    }
}

impl RunManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read manifest {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Re-hash every listed file; `dir` is the manifest's directory.
    pub fn verify(&self, dir: &Path) -> CliResult<()> {
        let mut bad = Vec::new();
        for f in self.inputs.iter().chain(&self.outputs) {
            let p = Path::new(&f.path);
            let p = if p.is_absolute() { p.to_path_buf() } else { dir.join(p) };
            match sha256_file(&p) {
                Ok((h, _)) if h == f.sha256 => {}
                Ok(_) => bad.push(format!("{} changed", f.path)),
                Err(_) => bad.push(format!("{} missing", f.path)),
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Failure::config(format!("manifest check failed: {}", bad.join(", "))))
        }
    }

    pub fn output(&self, name: &str) -> Option<&FileRecord> {
        self.outputs.iter().find(|f| f.path == name)
    }
}
