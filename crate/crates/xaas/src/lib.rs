//! Operator surface: wiring a configuration to local or remote roles, PNG
//! import, and the `xaas` command line.

use std::sync::Arc;
use std::time::Duration;

use xaas_core::orchestrator::{PipelineConfig, Services};
use xaas_core::service::{LocalServices, Role, ServiceApi};
use xaas_gateway::{GatewayError, HttpClient};

pub mod cli;
pub mod import;

pub use xaas_core as core;
pub use xaas_gateway as gateway;

/// Default store directory when neither `--store` nor `XAAS_STORE` is given.
pub const DEFAULT_STORE: &str = "xaas-store";

/// Accepts `host:port` as well as full URLs; the config template writes the
/// former.
pub fn normalize_url(url: &str) -> String {
    if url.starts_with("http://") || url.starts_with("https://") {
        url.to_string()
    } else {
        format!("http://{url}")
    }
}

/// One client per role: remote where the configuration names a URL for the
/// role, in process otherwise.
pub fn services_for(cfg: &PipelineConfig, local: &Arc<LocalServices>) -> Result<Services, GatewayError> {
    let timeout = Duration::from_secs(cfg.timeout_secs);
    let pick = |role: Role| -> Result<Arc<dyn ServiceApi>, GatewayError> {
        Ok(match cfg.service_url(role) {
            Some(url) => Arc::new(HttpClient::new(&normalize_url(url), role, timeout)?),
            None => local.clone(),
        })
    };
    Ok(Services {
        data: pick(Role::Data)?,
        model: pick(Role::Model)?,
        xai: pick(Role::Xai)?,
        eval: pick(Role::Eval)?,
    })
}
