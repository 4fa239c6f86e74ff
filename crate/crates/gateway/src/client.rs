//! Blocking HTTP client for a remote role, usable wherever a local service is.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::http::Response;
use ureq::{Agent, Body};
use xaas_core::provenance::ProvenanceLog;
use xaas_core::service::{Adapter, Role, ServiceApi, ServiceError};
use xaas_core::wire::{
    DatasetInfo, ErrorBody, EvalRequest, EvalResponse, ExplainRequest, ExplainResponse, Health, MaskRequest,
    MaskResponse, PerturbRequest, PerturbResponse, PredictRequest, PredictResponse, RegistryListing, WireDataset,
};

use crate::GatewayError;

/// Responses carry whole datasets and mask stacks.
const BODY_LIMIT: u64 = 1 << 30;

pub struct HttpClient {
    base: String,
    role: Role,
    agent: Agent,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient").field("base", &self.base).field("role", &self.role).finish()
    }
}

impl HttpClient {
    /// `role` only labels connection failures.
    pub fn new(base_url: &str, role: Role, timeout: Duration) -> Result<Self, GatewayError> {
        let base = base_url.trim_end_matches('/').to_string();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(GatewayError::BadUrl(base_url.into()));
        }
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient { base, role, agent })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn transport(&self, e: ureq::Error) -> ServiceError {
        match e {
            ureq::Error::Timeout(t) => ServiceError::Timeout(format!("{} service at {}: {t}", self.role, self.base)),
            other => ServiceError::Unavailable {
                role: self.role,
                message: format!("{}: {other}", self.base),
            },
        }
    }

    fn decode<T: DeserializeOwned>(&self, mut resp: Response<Body>) -> Result<T, ServiceError> {
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(BODY_LIMIT);
        if (200..300).contains(&status) {
            return body
                .read_json::<T>()
                .map_err(|e| ServiceError::Upstream(format!("{}: bad response body: {e}", self.base)));
        }
        let text = body.read_to_string().unwrap_or_default();
        let message = match serde_json::from_str::<ErrorBody>(&text) {
            Ok(b) => b.message,
            Err(_) => format!("HTTP {status}: {text}"),
        };
        Err(match status {
            404 => ServiceError::NotFound(message),
            409 => ServiceError::Conflict(message),
            400 | 422 => ServiceError::Invalid(message),
            502 => ServiceError::Upstream(message),
            503 => ServiceError::Unavailable {
                role: self.role,
                message,
            },
            504 => ServiceError::Timeout(message),
            _ => ServiceError::Internal(message),
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ServiceError> {
        let resp = self.agent.get(&self.url(path)).call().map_err(|e| self.transport(e))?;
        self.decode(resp)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ServiceError> {
        let resp = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(|e| self.transport(e))?;
        self.decode(resp)
    }

    /// Asks the remote role to proxy `name` to an adapter at `base_url`.
    pub fn register(&self, name: &str, base_url: &str) -> Result<(), ServiceError> {
        let body = serde_json::json!({"name": name, "base_url": base_url});
        let _: serde_json::Value = self.post("/registry", &body)?;
        Ok(())
    }
}

/// Path segments here are model, method, metric and dataset names, which the
/// store restricts to URL-safe characters; anything else is rejected before
/// it reaches the wire.
fn seg(s: &str) -> Result<&str, ServiceError> {
    if !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.+".contains(&b)) {
        Ok(s)
    } else {
        Err(ServiceError::Invalid(format!("`{s}` is not a valid path segment")))
    }
}

impl ServiceApi for HttpClient {
    fn health(&self) -> Result<Health, ServiceError> {
        self.get("/health")
    }

    fn register_dataset(&self, dataset: &WireDataset) -> Result<DatasetInfo, ServiceError> {
        self.post("/datasets", dataset)
    }

    fn dataset_info(&self, dataset_id: &str) -> Result<DatasetInfo, ServiceError> {
        self.get(&format!("/datasets/{}", seg(dataset_id)?))
    }

    fn perturb(&self, dataset_id: &str, req: &PerturbRequest) -> Result<PerturbResponse, ServiceError> {
        self.post(&format!("/datasets/{}/perturb", seg(dataset_id)?), req)
    }

    fn mask(&self, dataset_id: &str, req: &MaskRequest) -> Result<MaskResponse, ServiceError> {
        self.post(&format!("/datasets/{}/mask", seg(dataset_id)?), req)
    }

    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError> {
        self.post(&format!("/models/{}/predict", seg(model)?), req)
    }

    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError> {
        self.post(&format!("/xai/{}/explain", seg(method)?), req)
    }

    fn eval(&self, metric: &str, req: &EvalRequest) -> Result<EvalResponse, ServiceError> {
        self.post(&format!("/eval/{}", seg(metric)?), req)
    }

    fn provenance(&self, run_id: &str) -> Result<ProvenanceLog, ServiceError> {
        self.get(&format!("/runs/{}/provenance", seg(run_id)?))
    }

    fn registry(&self) -> Result<RegistryListing, ServiceError> {
        self.get("/registry")
    }
}

/// A dead or failing adapter is the gateway's upstream, hence 502.
fn upstream(e: ServiceError) -> ServiceError {
    match e {
        ServiceError::NotFound(_) | ServiceError::Invalid(_) | ServiceError::Upstream(_) => e,
        other => ServiceError::Upstream(other.to_string()),
    }
}

impl Adapter for HttpClient {
    fn predict(&self, model: &str, req: &PredictRequest) -> Result<PredictResponse, ServiceError> {
        ServiceApi::predict(self, model, req).map_err(upstream)
    }

    fn explain(&self, method: &str, req: &ExplainRequest) -> Result<ExplainResponse, ServiceError> {
        ServiceApi::explain(self, method, req).map_err(upstream)
    }

    fn base_url(&self) -> &str {
        &self.base
    }
}
