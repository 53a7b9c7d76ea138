use std::collections::HashMap;
use std::sync::{Arc, Mutex, PoisonError, RwLock};
use std::time::Instant;

use rosebreed_core::breedbase::{load_breedbase, BreedBase};
use rosebreed_core::registry::{latest_model_id, load_artifact, LoadedModel};
use rosebreed_core::{Error, Result};

use crate::config::ServiceConfig;

/// What the service is currently serving. Swapped as a unit.
#[derive(Debug)]
pub struct Active {
    pub model: Arc<LoadedModel>,
    pub breeds: Arc<BreedBase>,
}

const MODEL_CACHE_CAPACITY: usize = 4;

#[derive(Debug)]
pub struct AppState {
    pub config: ServiceConfig,
    active: RwLock<Option<Arc<Active>>>,
    last_error: RwLock<Option<String>>,
    cache: Mutex<HashMap<String, Arc<LoadedModel>>>,
    started: Instant,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            active: RwLock::new(None),
            last_error: RwLock::new(None),
            cache: Mutex::new(HashMap::new()),
            started: Instant::now(),
        })
    }

    pub fn active(&self) -> Option<Arc<Active>> {
        self.active.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn last_error(&self) -> Option<String> {
        self.last_error.read().unwrap_or_else(PoisonError::into_inner).clone()
    }

    pub fn uptime_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Loads the breed base and the configured (or newest) model, then swaps
    /// them in. Requests already holding the previous pair keep using it.
    /// Blocking; returns the served model id.
    pub fn reload(&self) -> Result<String> {
        match self.load_active() {
            Ok(active) => {
                let id = active.model.metadata.model_id.clone();
                *self.active.write().unwrap_or_else(PoisonError::into_inner) = Some(active);
                *self.last_error.write().unwrap_or_else(PoisonError::into_inner) = None;
                log::info!("serving model {id}");
                Ok(id)
            }
            Err(e) => {
                log::error!("model load failed: {e}");
                *self.last_error.write().unwrap_or_else(PoisonError::into_inner) = Some(e.to_string());
                Err(e)
            }
        }
    }

    fn load_active(&self) -> Result<Arc<Active>> {
        let breeds = Arc::new(load_breedbase(&self.config.breeds_file)?);
        let id = match &self.config.model_id {
            Some(id) => id.clone(),
            None => latest_model_id(&self.config.registry_dir)?.ok_or_else(|| {
                Error::NotFound(format!(
                    "no model in registry {}",
                    self.config.registry_dir.display()
                ))
            })?,
        };
        let model = Arc::new(load_artifact(&self.config.registry_dir, &id)?);
        breeds.check_coverage(&model.labels)?;
        Ok(Arc::new(Active { model, breeds }))
    }

    /// The active model when `id` names it, otherwise a cached or freshly
    /// loaded artifact. Blocking.
    pub fn model_by_id(&self, id: &str) -> Result<Arc<LoadedModel>> {
        if let Some(active) = self.active().filter(|a| a.model.metadata.model_id == id) {
            return Ok(active.model.clone());
        }
        if let Some(m) = self.cache.lock().unwrap_or_else(PoisonError::into_inner).get(id) {
            return Ok(m.clone());
        }
        let model = Arc::new(load_artifact(&self.config.registry_dir, id)?);
        let mut cache = self.cache.lock().unwrap_or_else(PoisonError::into_inner);
        if cache.len() >= MODEL_CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(id.to_string(), model.clone());
        Ok(model)
    }
}
