//! Small filesystem and hashing helpers.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).at(path)?;
    Ok(sha256_hex(&bytes))
}

/// Writes via a temporary sibling, fsyncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp).at(&tmp)?;
        f.write_all(bytes).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    std::fs::rename(&tmp, path).at(path)
}

/// Appends one line and fsyncs before returning.
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .at(path)?;
    f.write_all(line.as_bytes()).at(path)?;
    f.write_all(b"\n").at(path)?;
    f.sync_data().at(path)
}

/// Seed for a named sub-stream of `base`.
pub fn derive_seed(base: u64, stream: &str, index: u64) -> u64 {
    let digest = Sha256::digest(format!("{base}:{stream}:{index}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Filesystem-safe stem for a sample id. Ids made only of
/// `[A-Za-z0-9._-]` map to themselves; anything else is escaped and
/// suffixed with a short hash so distinct ids never collide.
pub fn file_stem(id: &str) -> String {
    let safe = |c: char| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-');
    if !id.is_empty() && id.chars().all(safe) && !id.starts_with('.') {
        return id.to_string();
    }
    let cleaned: String = id.chars().map(|c| if safe(c) { c } else { '_' }).collect();
    format!("{}~{}", cleaned.trim_start_matches('.'), &sha256_hex(id.as_bytes())[..10])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_stable_and_distinct() {
        assert_eq!(file_stem("slice_001.a"), "slice_001.a");
        let a = file_stem("p1/s1");
        let b = file_stem("p1_s1");
        assert_ne!(a, b);
        assert!(!a.contains('/'));
        assert_eq!(a, file_stem("p1/s1"));
        assert!(!file_stem("..").starts_with('.'));
    }

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
    }

    #[test]
    fn atomic_write_and_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let log = dir.path().join("log");
        append_line(&log, "a").unwrap();
        append_line(&log, "b").unwrap();
        assert_eq!(std::fs::read_to_string(&log).unwrap(), "a\nb\n");
    }
}
