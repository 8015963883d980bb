//! Output-directory discipline: one lock per output root, stages written
//! to a staging directory and swapped in only after they succeed, and a
//! manifest listing configuration, seeds, input and artifact hashes and
//! timings.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".urbcause.lock";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub stage: String,
    pub config_hash: String,
    pub config: Value,
    /// Configuration keys that were absent and took their default value.
    pub defaults_applied: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file the stage wrote, relative to the stage directory.
    pub artifacts: BTreeMap<String, String>,
    pub timings_ms: BTreeMap<String, u64>,
}

/// Exclusive claim on an output root, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(root: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(root).map_err(|e| Failure::other(root.display(), e))?;
        let path = root.join(LOCK_FILE);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                Failure::Other(format!(
                    "{} is locked by another run ({e}); remove {} if no run is active",
                    root.display(),
                    path.display()
                ))
            })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(Self { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Configuration shared by every stage manifest of one invocation.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub config: Value,
    pub config_hash: String,
    pub defaults_applied: Vec<String>,
}

impl RunInfo {
    pub fn new(config: Value, defaults_applied: Vec<String>) -> Self {
        let text = serde_json::to_string(&config).expect("config serializes");
        Self {
            config_hash: sha256_hex(text.as_bytes()),
            config,
            defaults_applied,
        }
    }
}

/// One stage in progress. Dropping it without [`Stage::commit`] discards the
/// staging directory and leaves any earlier output of the stage in place.
pub struct Stage {
    root: PathBuf,
    name: String,
    staging: PathBuf,
    inputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
    committed: bool,
}

impl Stage {
    pub fn begin(root: &Path, name: &str) -> Result<Self, Failure> {
        let staging = root.join(format!(".{name}.partial"));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Failure::other(staging.display(), e))?;
        }
        fs::create_dir_all(&staging).map_err(|e| Failure::other(staging.display(), e))?;
        Ok(Self {
            root: root.to_path_buf(),
            name: name.to_string(),
            staging,
            inputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started: Instant::now(),
            committed: false,
        })
    }

    /// Reads and hashes an input file.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::data(path.display(), e))?;
        let key = match path.strip_prefix(&self.root) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => path.display().to_string(),
        };
        self.inputs.insert(key, sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String, Failure> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| Failure::data(path.display(), e))
    }

    /// Reads an artifact of an earlier stage in the same output root.
    pub fn read_artifact(&mut self, stage: &str, file: &str) -> Result<Vec<u8>, Failure> {
        let path = self.root.join(stage).join(file);
        if !path.is_file() {
            return Err(Failure::Data(format!(
                "{} is missing; run the `{stage}` stage first",
                path.display()
            )));
        }
        self.read(&path)
    }

    pub fn read_artifact_string(&mut self, stage: &str, file: &str) -> Result<String, Failure> {
        let bytes = self.read_artifact(stage, file)?;
        String::from_utf8(bytes).map_err(|e| Failure::data(file, e))
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Path of an artifact inside the staging directory; parents are created.
    pub fn artifact_path(&self, rel: &str) -> Result<PathBuf, Failure> {
        let p = self.staging.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Failure::other(parent.display(), e))?;
        }
        Ok(p)
    }

    pub fn create(&self, rel: &str) -> Result<fs::File, Failure> {
        let p = self.artifact_path(rel)?;
        fs::File::create(&p).map_err(|e| Failure::other(p.display(), e))
    }

    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<(), Failure> {
        let p = self.artifact_path(rel)?;
        fs::write(&p, bytes).map_err(|e| Failure::other(p.display(), e))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::other(rel, e))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes the manifest and moves the stage into place.
    pub fn commit(mut self, run: &RunInfo) -> Result<Manifest, Failure> {
        let mut artifacts = BTreeMap::new();
        hash_tree(&self.staging, &self.staging, &mut artifacts)?;
        let manifest = Manifest {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            stage: self.name.clone(),
            config_hash: run.config_hash.clone(),
            config: run.config.clone(),
            defaults_applied: run.defaults_applied.clone(),
            seeds: std::mem::take(&mut self.seeds),
            inputs: std::mem::take(&mut self.inputs),
            artifacts,
            timings_ms: BTreeMap::from([(
                self.name.clone(),
                self.started.elapsed().as_millis() as u64,
            )]),
        };
        self.write_json(MANIFEST_FILE, &manifest)?;
        let dest = self.root.join(&self.name);
        let old = self.root.join(format!(".{}.old", self.name));
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Failure::other(old.display(), e))?;
        }
        if dest.exists() {
            fs::rename(&dest, &old).map_err(|e| Failure::other(dest.display(), e))?;
        }
        fs::rename(&self.staging, &dest).map_err(|e| Failure::other(dest.display(), e))?;
        self.committed = true;
        if old.exists() {
            fs::remove_dir_all(&old).map_err(|e| Failure::other(old.display(), e))?;
        }
        Ok(manifest)
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

fn hash_tree(base: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<(), Failure> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::other(dir.display(), e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::other(dir.display(), e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            hash_tree(base, &p, out)?;
        } else {
            let bytes = fs::read(&p).map_err(|e| Failure::other(p.display(), e))?;
            let rel = p.strip_prefix(base).expect("inside base");
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(key, sha256_hex(&bytes));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run() -> RunInfo {
        RunInfo::new(serde_json::json!({"seed": 1}), vec![])
    }

    #[test]
    fn commit_replaces_previous_output() {
        let dir = tempfile::tempdir().unwrap();
        let s = Stage::begin(dir.path(), "x").unwrap();
        s.write("a.txt", b"one").unwrap();
        s.commit(&run()).unwrap();
        let s = Stage::begin(dir.path(), "x").unwrap();
        s.write("b.txt", b"two").unwrap();
        let m = s.commit(&run()).unwrap();
        assert!(!dir.path().join("x/a.txt").exists());
        assert_eq!(fs::read(dir.path().join("x/b.txt")).unwrap(), b"two");
        assert_eq!(m.artifacts.keys().collect::<Vec<_>>(), vec!["b.txt"]);
    }

    #[test]
    fn failed_stage_keeps_prior_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = Stage::begin(dir.path(), "x").unwrap();
        s.write("a.txt", b"one").unwrap();
        s.commit(&run()).unwrap();
        let before = fs::read(dir.path().join("x").join(MANIFEST_FILE)).unwrap();
        {
            let s = Stage::begin(dir.path(), "x").unwrap();
            s.write("a.txt", b"partial").unwrap();
        }
        assert_eq!(
            fs::read(dir.path().join("x").join(MANIFEST_FILE)).unwrap(),
            before
        );
        assert_eq!(fs::read(dir.path().join("x/a.txt")).unwrap(), b"one");
        assert!(!dir.path().join(".x.partial").exists());
    }

    #[test]
    fn second_lock_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn config_hash_is_content_hash() {
        let a = RunInfo::new(serde_json::json!({"seed": 1}), vec![]);
        let b = RunInfo::new(serde_json::json!({"seed": 2}), vec![]);
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
