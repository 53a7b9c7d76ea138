use std::net::SocketAddr;
use std::path::PathBuf;

pub const REGISTRY_DIR_ENV: &str = "ROSE_REGISTRY_DIR";
pub const BREEDS_FILE_ENV: &str = "ROSE_BREEDS_FILE";
pub const PORT_ENV: &str = "ROSE_PORT";

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 10 * 1024 * 1024;
pub const DEFAULT_LOW_CONFIDENCE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub registry_dir: PathBuf,
    pub breeds_file: PathBuf,
    /// Serve this artifact instead of the newest one.
    pub model_id: Option<String>,
    pub bind: SocketAddr,
    pub max_upload_bytes: usize,
    /// Predictions whose top probability falls below this are flagged.
    pub low_confidence_threshold: f64,
    /// Uploaded images are kept only in memory unless this is set.
    pub save_uploads: Option<PathBuf>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            registry_dir: PathBuf::from("registry"),
            breeds_file: PathBuf::from("data/breeds.json"),
            model_id: None,
            bind: SocketAddr::from(([127, 0, 0, 1], DEFAULT_PORT)),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            low_confidence_threshold: DEFAULT_LOW_CONFIDENCE_THRESHOLD,
            save_uploads: None,
            cors_origins: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn new(registry_dir: impl Into<PathBuf>, breeds_file: impl Into<PathBuf>) -> Self {
        Self {
            registry_dir: registry_dir.into(),
            breeds_file: breeds_file.into(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_upload_bytes == 0 {
            return Err("max upload size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.low_confidence_threshold) {
            return Err(format!(
                "low-confidence threshold must lie in [0, 1], got {}",
                self.low_confidence_threshold
            ));
        }
        Ok(())
    }
}
