use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;

use tweetkit::{ModelHandle, Registry};

use crate::error::ApiError;

/// Lazily loaded model handles with least-recently-used eviction.
pub struct ModelPool {
    registry: Arc<Registry>,
    cache: Mutex<LruCache<String, ModelHandle>>,
}

impl ModelPool {
    pub fn new(registry: Arc<Registry>, capacity: NonZeroUsize) -> Self {
        Self {
            registry,
            cache: Mutex::new(LruCache::new(capacity)),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Keys of the loaded models, most recently used first.
    pub fn loaded(&self) -> Vec<String> {
        self.lock().iter().map(|(k, _)| k.clone()).collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, LruCache<String, ModelHandle>> {
        self.cache.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// The handle serving `task` in `language`, loading it off the async runtime on a miss.
    pub async fn get(&self, task: &str, language: Option<&str>) -> Result<ModelHandle, ApiError> {
        let card = self.registry.resolve_model(task, language).map_err(ApiError::from_load)?;
        let key = format!("{task}={}@{}", card.source_uri, card.revision);
        if let Some(h) = self.lock().get(&key) {
            return Ok(h.clone());
        }
        let registry = self.registry.clone();
        let (task, language) = (task.to_string(), language.map(str::to_string));
        let handle = tokio::task::spawn_blocking(move || registry.load_for_language(&task, language.as_deref()))
            .await
            .map_err(|e| ApiError::internal(e.to_string()))?
            .map_err(ApiError::from_load)?;
        self.lock().put(key, handle.clone());
        Ok(handle)
    }
}
