//! Resolved paths, the workspace lock and small artifact helpers.

use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use proed_core::io::{read_digest_line, write_atomic};
use serde::Serialize;

use crate::config::{PipelineConfig, DEFAULT_CONFIG_FILE};

pub const LOCK_FILE: &str = ".proed.lock";

/// Config plus the directory its relative paths are resolved against.
pub struct Workspace {
    pub root: PathBuf,
    pub config: PipelineConfig,
    pub digest: String,
}

impl Workspace {
    /// Loads `config_path` when it exists; a missing default config file
    /// means built-in defaults rooted at the current directory.
    pub fn load(config_path: &Path) -> Result<(PathBuf, PipelineConfig)> {
        let root = match config_path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if !config_path.exists() {
            if config_path == Path::new(DEFAULT_CONFIG_FILE) {
                log::info!("no {DEFAULT_CONFIG_FILE} found; using built-in defaults");
                return Ok((root, PipelineConfig::default()));
            }
            bail!("config file {} does not exist", config_path.display());
        }
        Ok((root, PipelineConfig::load(config_path)?))
    }

    pub fn new(root: PathBuf, config: PipelineConfig) -> Self {
        let digest = config.digest();
        Self { root, config, digest }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn store_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.store)
    }

    pub fn work(&self, name: &str) -> PathBuf {
        self.resolve(&self.config.paths.work).join(name)
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.runs)
    }

    pub fn run_dir(&self, name: &str) -> PathBuf {
        self.runs_dir().join(name)
    }

    pub fn weights_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.weights)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.reports)
    }

    /// Path relative to the workspace root, for recording inside artifacts.
    pub fn relative(&self, p: &Path) -> String {
        let rel = p.strip_prefix(&self.root).unwrap_or(p);
        rel.to_string_lossy().replace('\\', "/")
    }

    pub fn lock(&self) -> Result<WorkspaceLock> {
        WorkspaceLock::acquire(&self.root.join(LOCK_FILE))
    }

    /// Writes `text` unless the file already holds exactly these bytes.
    pub fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        if fs::read(path).is_ok_and(|old| old == text.as_bytes()) {
            return Ok(());
        }
        write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    /// Pretty JSON with a `config_digest` field in front of `value`'s fields.
    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        let obj = v.as_object_mut().context("artifact must serialize to an object")?;
        let mut out = serde_json::Map::new();
        out.insert("config_digest".into(), self.digest.clone().into());
        for (k, val) in std::mem::take(obj) {
            out.insert(k, val);
        }
        let text = serde_json::to_string_pretty(&serde_json::Value::Object(out))? + "\n";
        self.write_text(path, &text)
    }

    /// Writes the resolved config next to the work artifacts, keyed by digest.
    pub fn record_config(&self) -> Result<()> {
        let path = self.resolve(&self.config.paths.work).join("configs").join(format!("{}.toml", self.digest));
        self.write_text(&path, &self.config.to_toml())
    }
}

/// Reads an upstream artifact, naming the subcommand that produces it when
/// it is missing.
pub fn read_upstream(path: &Path, producer: &str) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == ErrorKind::NotFound => {
            bail!("missing {}; run `proed {producer}` first", path.display())
        }
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

/// Digest recorded in a text artifact (first line) or a JSON artifact.
pub fn artifact_digest(text: &str) -> Option<String> {
    if let Some(d) = read_digest_line(text) {
        return Some(d.to_string());
    }
    let v: serde_json::Value = serde_json::from_str(text).ok()?;
    v.get("config_digest")?.as_str().map(str::to_string)
}

/// Logs a warning when an input was produced under a different config.
pub fn note_digest(path: &Path, text: &str, expected: &str) {
    match artifact_digest(text) {
        Some(d) if d == expected => {}
        Some(d) => log::warn!("{} was produced under config {}; current config is {}", path.display(), short(&d), short(expected)),
        None => log::warn!("{} carries no config digest", path.display()),
    }
}

pub fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

/// Exclusive marker file; removed on drop.
pub struct WorkspaceLock {
    path: PathBuf,
}

impl WorkspaceLock {
    pub fn acquire(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).ok();
        }
        match OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path: path.to_path_buf() })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(path).unwrap_or_default();
                bail!(
                    "workspace is locked by another proed process (pid {}); remove {} if that process is gone",
                    holder.trim(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lock_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(LOCK_FILE);
        let first = WorkspaceLock::acquire(&p).unwrap();
        let err = WorkspaceLock::acquire(&p).err().unwrap().to_string();
        assert!(err.contains("locked"), "{err}");
        drop(first);
        assert!(!p.exists());
        WorkspaceLock::acquire(&p).unwrap();
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let e = read_upstream(&dir.path().join("nope.tsv"), "dedup").unwrap_err().to_string();
        assert!(e.contains("proed dedup"), "{e}");
    }

    #[test]
    fn digests_from_text_and_json() {
        assert_eq!(artifact_digest("# config_digest=abc\nx\n").as_deref(), Some("abc"));
        assert_eq!(artifact_digest("{\"config_digest\":\"def\",\"n\":1}").as_deref(), Some("def"));
        assert_eq!(artifact_digest("epoch\n"), None);
    }
}
