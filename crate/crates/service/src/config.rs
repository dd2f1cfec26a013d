use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use quiz_core::allocation::{AllocationMode, AllocationPolicy};
use serde::{Deserialize, Serialize};

pub const LOG_PATH_ENV: &str = "QUIZ_LOG_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    pub bank_dir: PathBuf,
    pub log_path: PathBuf,
    /// Defaults to `students.jsonl` next to the response log.
    #[serde(default)]
    pub registry_path: Option<PathBuf>,
    #[serde(default)]
    pub policy: AllocationPolicy,
    /// Allocate uniformly at random, ignoring the policy.
    #[serde(default)]
    pub legacy_uniform: bool,
    /// Fixes question draws and tokens; OS entropy when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        let mut config: Self =
            serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing config {}: {e}", path.display()))?;
        config.apply_env(std::env::var_os(LOG_PATH_ENV).map(PathBuf::from));
        Ok(config)
    }

    pub fn apply_env(&mut self, log_path: Option<PathBuf>) {
        if let Some(p) = log_path {
            self.log_path = p;
        }
    }

    pub fn effective_policy(&self) -> AllocationPolicy {
        if self.legacy_uniform {
            AllocationPolicy {
                mode: AllocationMode::Uniform,
                ..self.policy
            }
        } else {
            self.policy
        }
    }

    pub fn registry_path(&self) -> PathBuf {
        self.registry_path.clone().unwrap_or_else(|| {
            self.log_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join("students.jsonl")
        })
    }
}
