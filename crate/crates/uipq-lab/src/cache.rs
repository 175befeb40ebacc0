//! On-disk cache of count tables, keyed by size, under $UIPQ_LAB_CACHE.
//! Files carry a format version and a SHA-256 of their payload; anything
//! that fails either check is rebuilt.

use std::path::{Path, PathBuf};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use uipq_core::CountTable;

pub const CACHE_ENV: &str = "UIPQ_LAB_CACHE";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Payload {
    n_max: usize,
    l_max: usize,
    /// (n, l, decimal value) for the stored entries
    entries: Vec<(usize, usize, String)>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    sha256: String,
    payload: Payload,
}

fn digest(p: &Payload) -> String {
    let bytes = serde_json::to_vec(p).expect("payload serializes");
    hex::encode(Sha256::digest(bytes))
}

pub fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn file_for(dir: &Path, n_max: usize, l_max: usize) -> PathBuf {
    dir.join(format!("counts-v{VERSION}-n{n_max}-l{l_max}.json"))
}

fn load(path: &Path, n_max: usize, l_max: usize) -> Option<CountTable> {
    let text = std::fs::read_to_string(path).ok()?;
    let file: CacheFile = serde_json::from_str(&text).ok()?;
    if file.version != VERSION || file.sha256 != digest(&file.payload) {
        return None;
    }
    let p = file.payload;
    if p.n_max != n_max || p.l_max != l_max {
        return None;
    }
    let entries = p
        .entries
        .into_iter()
        .map(|(n, l, v)| v.parse::<BigUint>().ok().map(|v| (n, l, v)))
        .collect::<Option<Vec<_>>>()?;
    CountTable::from_entries(n_max, l_max, entries).ok()
}

fn store(path: &Path, t: &CountTable) -> std::io::Result<()> {
    let payload = Payload {
        n_max: t.n_max(),
        l_max: t.l_max(),
        entries: t.entries().into_iter().map(|(n, l, v)| (n, l, v.to_string())).collect(),
    };
    let file = CacheFile { version: VERSION, sha256: digest(&payload), payload };
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(&file).expect("cache serializes"))?;
    std::fs::rename(tmp, path)
}

/// D_n^(l) for n <= n_max, l <= l_max, from the cache when possible.
pub fn count_table(n_max: usize, l_max: usize) -> CountTable {
    let Some(dir) = cache_dir() else {
        return CountTable::build_by_label(n_max, l_max);
    };
    let path = file_for(&dir, n_max, l_max);
    if let Some(t) = load(&path, n_max, l_max) {
        return t;
    }
    let t = CountTable::build_by_label(n_max, l_max);
    if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| store(&path, &t)) {
        eprintln!("warning: cannot write count cache {}: {e}", path.display());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = file_for(dir.path(), 30, 3);
        let t = CountTable::build_by_label(30, 3);
        store(&path, &t).unwrap();
        assert_eq!(load(&path, 30, 3).unwrap(), t);
        assert!(load(&path, 31, 3).is_none());
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replacen("\"2\"", "\"3\"", 1)).unwrap();
        assert!(load(&path, 30, 3).is_none());
    }
}
