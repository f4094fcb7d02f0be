//! Small file helpers shared by the pipeline stages.
//!
//! Every artifact is written through [`write_atomic`]: bytes go to a temporary
//! file in the destination directory and are renamed into place, so a reader
//! never observes a partially written file under its final name.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Writes `bytes` to `path` via a temp file + rename in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Prefix used for provenance comment lines in line-oriented artifacts.
pub const DIGEST_PREFIX: &str = "# config_digest=";

/// Formats the provenance comment line (with trailing LF).
pub fn digest_line(digest: &str) -> String {
    format!("{DIGEST_PREFIX}{digest}\n")
}

/// Returns the config digest recorded in the first line of `text`, if any.
pub fn read_digest_line(text: &str) -> Option<&str> {
    text.lines()
        .next()
        .and_then(|l| l.strip_prefix(DIGEST_PREFIX))
        .map(str::trim)
}

/// Iterates the non-comment, non-blank lines of a line-oriented artifact.
pub fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
}
