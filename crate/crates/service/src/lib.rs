//! Quiz service: session state over append-only logs, the HTTP API and the
//! building blocks of the `quiz` command-line tool.

pub mod cli;
pub mod config;
pub mod http;
pub mod store;

use std::sync::{Arc, Mutex};

pub use config::ServiceConfig;
pub use http::{router, SharedStore};
pub use store::{Persistence, ServiceError, SessionStore};

/// Loads the banks, replays the logs and returns a store ready to serve.
pub fn open_store(config: &ServiceConfig) -> anyhow::Result<SharedStore> {
    let policy = config.effective_policy();
    let mut store = match config.seed {
        Some(seed) => SessionStore::seeded(policy, seed),
        None => SessionStore::new(policy),
    };
    store.load_bank_dir(&config.bank_dir)?;
    store.open(&Persistence {
        log_path: Some(config.log_path.clone()),
        registry_path: Some(config.registry_path()),
    })?;
    Ok(Arc::new(Mutex::new(store)))
}

pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let store = open_store(&config)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, log = %config.log_path.display(), "serving");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
