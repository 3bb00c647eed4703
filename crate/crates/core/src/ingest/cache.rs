//! On-disk series cache: `<root>/<provider>/<series_id>.csv` plus a
//! `<series_id>.meta` JSON sidecar.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::Provider;
use super::IngestError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub provider: String,
    pub series_id: String,
    /// Seconds since the Unix epoch.
    pub fetched_at: u64,
    pub sha256: String,
    /// Request URL with any API key removed.
    pub source_url: String,
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub content: String,
    pub meta: CacheMeta,
}

impl CacheEntry {
    pub fn age_hours(&self, now: u64) -> f64 {
        now.saturating_sub(self.meta.fetched_at) as f64 / 3600.0
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_stem(series_id: &str) -> String {
    series_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn io_err(path: &Path, e: std::io::Error) -> IngestError {
    IngestError::Io { path: path.to_path_buf(), message: e.to_string() }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default(),
        std::process::id()
    ));
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_path(&self, provider: Provider, series_id: &str) -> PathBuf {
        self.root.join(provider.name()).join(format!("{}.csv", file_stem(series_id)))
    }

    pub fn meta_path(&self, provider: Provider, series_id: &str) -> PathBuf {
        self.root.join(provider.name()).join(format!("{}.meta", file_stem(series_id)))
    }

    fn lock(&self, provider: Provider, series_id: &str) -> Result<File, IngestError> {
        let dir = self.root.join(provider.name());
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let path = dir.join(format!("{}.lock", file_stem(series_id)));
        let f = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        f.lock().map_err(|e| io_err(&path, e))?;
        Ok(f)
    }

    /// A verified entry; missing, unreadable or checksum-mismatched entries are `None`.
    pub fn load(&self, provider: Provider, series_id: &str) -> Option<CacheEntry> {
        let meta: CacheMeta = serde_json::from_str(&fs::read_to_string(self.meta_path(provider, series_id)).ok()?).ok()?;
        let content = fs::read_to_string(self.data_path(provider, series_id)).ok()?;
        (sha256_hex(content.as_bytes()) == meta.sha256).then_some(CacheEntry { content, meta })
    }

    /// Writes data then metadata, each via rename, under the series lock.
    pub fn store(
        &self,
        provider: Provider,
        series_id: &str,
        content: &str,
        source_url: &str,
        fetched_at: u64,
    ) -> Result<CacheMeta, IngestError> {
        let _guard = self.lock(provider, series_id)?;
        let meta = CacheMeta {
            provider: provider.name().to_string(),
            series_id: series_id.to_string(),
            fetched_at,
            sha256: sha256_hex(content.as_bytes()),
            source_url: source_url.to_string(),
        };
        write_atomic(&self.data_path(provider, series_id), content.as_bytes())?;
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        write_atomic(&self.meta_path(provider, series_id), json.as_bytes())?;
        Ok(meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        assert!(cache.load(Provider::Fred, "CPIAUCSL").is_none());
        cache.store(Provider::Fred, "CPIAUCSL", "date,value\n2001-01,1\n", "http://f", 10).unwrap();
        let hit = cache.load(Provider::Fred, "CPIAUCSL").unwrap();
        assert_eq!(hit.content, "date,value\n2001-01,1\n");
        assert_eq!(hit.meta.fetched_at, 10);
        assert_eq!(hit.age_hours(10 + 7200), 2.0);
        assert!(dir.path().join("fred/CPIAUCSL.csv").exists());

        fs::write(cache.data_path(Provider::Fred, "CPIAUCSL"), "date,value\n2001").unwrap();
        assert!(cache.load(Provider::Fred, "CPIAUCSL").is_none());
    }

    #[test]
    fn odd_ids_stay_in_provider_dir() {
        let cache = Cache::new("/c");
        assert_eq!(cache.data_path(Provider::Eia, "a/b c"), PathBuf::from("/c/eia/a_b_c.csv"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
