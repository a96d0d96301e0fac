//! Model file retrieval with an on-disk cache keyed by source and revision.
//!
//! `hf://org/name` is fetched from `<base>/org/name/resolve/<revision>/<file>`;
//! `file:` URIs and bare paths point at a local directory and are used in place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use tweetkit::{Error, Result};

pub const HUB_URL_ENV: &str = "TWEETKIT_HUB_URL";
pub const CACHE_DIR_ENV: &str = "TWEETKIT_CACHE_DIR";
pub const HUB_TOKEN_ENV: &str = "TWEETKIT_HUB_TOKEN";
pub const OFFLINE_ENV: &str = "TWEETKIT_OFFLINE";
pub const DEFAULT_HUB_URL: &str = "https://huggingface.co";

#[derive(Clone, Debug)]
pub struct Hub {
    base_url: String,
    cache_dir: PathBuf,
    token: Option<String>,
    offline: bool,
    client: reqwest::blocking::Client,
}

impl Hub {
    pub fn new(base_url: impl Into<String>, cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            cache_dir: cache_dir.into(),
            token: None,
            offline: false,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(300))
                .build()
                .expect("HTTP client"),
        }
    }

    /// Configuration from the environment; the cache defaults to `~/.cache/tweetkit`.
    pub fn from_env() -> Self {
        let base = std::env::var(HUB_URL_ENV).unwrap_or_else(|_| DEFAULT_HUB_URL.to_string());
        let cache = std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(default_cache_dir);
        let mut hub = Self::new(base, cache);
        hub.token = std::env::var(HUB_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        hub.offline = std::env::var(OFFLINE_ENV).is_ok_and(|v| v == "1" || v.eq_ignore_ascii_case("true"));
        hub
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = dir.into();
        self
    }

    /// Only serve files already in the cache.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    /// Directory holding the files of `uri` at `revision`.
    pub fn model_dir(&self, uri: &str, revision: &str) -> Result<PathBuf> {
        match hf_repo(uri) {
            Some(repo) => Ok(self
                .cache_dir
                .join("hf")
                .join(repo.replace('/', "--"))
                .join(sanitize(revision))),
            None => Ok(local_path(uri)),
        }
    }

    /// Path of `file` for the model, downloading it on a cache miss.
    /// `Ok(None)` means the source does not have that file.
    pub fn file(&self, uri: &str, revision: &str, file: &str) -> Result<Option<PathBuf>> {
        let dir = self.model_dir(uri, revision)?;
        let path = dir.join(file);
        if path.is_file() {
            return Ok(Some(path));
        }
        let Some(repo) = hf_repo(uri) else {
            return Ok(None);
        };
        if dir.join(missing_marker(file)).is_file() {
            return Ok(None);
        }
        if self.offline {
            return Err(fetch_error(uri, format!("`{file}` is not cached and offline mode is on")));
        }
        let url = format!("{}/{repo}/resolve/{revision}/{file}", self.base_url);
        log::info!("downloading {url}");
        let mut request = self.client.get(&url);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| fetch_error(uri, e.to_string()))?;
        let status = response.status();
        fs::create_dir_all(&dir)?;
        if status == reqwest::StatusCode::NOT_FOUND {
            fs::write(dir.join(missing_marker(file)), b"")?;
            return Ok(None);
        }
        if !status.is_success() {
            return Err(fetch_error(uri, format!("GET {url} returned {status}")));
        }
        let bytes = response.bytes().map_err(|e| fetch_error(uri, e.to_string()))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
        tmp.write_all(&bytes)?;
        tmp.persist(&path).map_err(|e| Error::Io(e.error))?;
        Ok(Some(path))
    }

    /// The first of `candidates` the source provides.
    pub fn first_file(&self, uri: &str, revision: &str, candidates: &[&str]) -> Result<Option<(String, PathBuf)>> {
        for name in candidates {
            if let Some(p) = self.file(uri, revision, name)? {
                return Ok(Some((name.to_string(), p)));
            }
        }
        Ok(None)
    }
}

fn default_cache_dir() -> PathBuf {
    std::env::var_os("HOME")
        .map(|h| PathBuf::from(h).join(".cache").join("tweetkit"))
        .unwrap_or_else(|| std::env::temp_dir().join("tweetkit-cache"))
}

fn missing_marker(file: &str) -> String {
    format!(".{file}.missing")
}

pub(crate) fn fetch_error(uri: &str, message: impl Into<String>) -> Error {
    Error::ModelFetch {
        uri: uri.to_string(),
        message: message.into(),
    }
}

fn hf_repo(uri: &str) -> Option<&str> {
    uri.strip_prefix("hf://").or_else(|| uri.strip_prefix("hf:"))
}

fn local_path(uri: &str) -> PathBuf {
    PathBuf::from(uri.strip_prefix("file://").or_else(|| uri.strip_prefix("file:")).unwrap_or(uri))
}

fn sanitize(revision: &str) -> String {
    revision
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}
