//! axum routers for the four roles.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;
use tracing::{info, warn};
use xaas_core::service::{LocalServices, Role, ServiceApi, ServiceError, VERSION};
use xaas_core::wire::{
    EvalRequest, ErrorBody, ExplainRequest, Health, MaskRequest, PerturbRequest, PredictRequest, RegistryRequest,
    RegistryResponse, WireDataset,
};

use crate::client::HttpClient;
use crate::GatewayError;

/// Which routes a server answers: one role, or all four on one port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Served {
    Role(Role),
    All,
}

impl Served {
    pub fn includes(self, role: Role) -> bool {
        match self {
            Served::All => true,
            Served::Role(r) => r == role,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Served::All => "all",
            Served::Role(r) => r.as_str(),
        }
    }
}

impl std::str::FromStr for Served {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "all" {
            Ok(Served::All)
        } else {
            s.parse().map(Served::Role)
        }
    }
}

#[derive(Clone)]
struct AppState {
    services: Arc<LocalServices>,
    served: Served,
    timeout: Duration,
}

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = ErrorBody {
            error: self.0.code().into(),
            message: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a body so that every malformed payload is a 422 with an error body.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::Invalid(format!("malformed body: {e}"))))
}

/// Runs a blocking service call off the async workers, bounded by the
/// per-request timeout.
async fn call<T, F>(st: &AppState, f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&LocalServices) -> Result<T, ServiceError> + Send + 'static,
{
    let services = st.services.clone();
    let task = tokio::task::spawn_blocking(move || f(&services));
    match tokio::time::timeout(st.timeout, task).await {
        Ok(Ok(r)) => r.map(Json).map_err(ApiError),
        Ok(Err(join)) => Err(ApiError(ServiceError::Internal(format!("handler panicked: {join}")))),
        Err(_) => Err(ApiError(ServiceError::Timeout(format!(
            "no response within {} s",
            st.timeout.as_secs_f64()
        )))),
    }
}

async fn health(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        role: st.served.name().into(),
        version: VERSION.into(),
    })
}

async fn register_dataset(State(st): State<AppState>, body: Bytes) -> Response {
    let req: WireDataset = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    match call(&st, move |s| s.register_dataset(&req)).await {
        Ok(info) => (StatusCode::CREATED, info).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn dataset_info(State(st): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    call(&st, move |s| s.dataset_info(&id)).await
}

async fn perturb(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> impl IntoResponse {
    let req: PerturbRequest = parse(&body)?;
    call(&st, move |s| s.perturb(&id, &req)).await
}

async fn mask(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> impl IntoResponse {
    let req: MaskRequest = parse(&body)?;
    call(&st, move |s| s.mask(&id, &req)).await
}

async fn predict(State(st): State<AppState>, Path(name): Path<String>, body: Bytes) -> impl IntoResponse {
    let req: PredictRequest = parse(&body)?;
    call(&st, move |s| s.predict(&name, &req)).await
}

async fn explain(State(st): State<AppState>, Path(method): Path<String>, body: Bytes) -> impl IntoResponse {
    let req: ExplainRequest = parse(&body)?;
    call(&st, move |s| s.explain(&method, &req)).await
}

async fn eval(State(st): State<AppState>, Path(metric): Path<String>, body: Bytes) -> impl IntoResponse {
    let req: EvalRequest = parse(&body)?;
    call(&st, move |s| s.eval(&metric, &req)).await
}

async fn provenance(State(st): State<AppState>, Path(run): Path<String>) -> impl IntoResponse {
    call(&st, move |s| s.provenance(&run)).await
}

async fn registry_list(State(st): State<AppState>) -> impl IntoResponse {
    call(&st, |s| s.registry()).await
}

async fn registry_add(State(st): State<AppState>, body: Bytes) -> impl IntoResponse {
    let req: RegistryRequest = parse(&body)?;
    let timeout = st.timeout;
    call(&st, move |s| {
        let client = HttpClient::new(&req.base_url, Role::Model, timeout)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        s.register_adapter(&req.name, Arc::new(client))?;
        Ok(RegistryResponse {
            name: req.name,
            base_url: req.base_url,
        })
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError(ServiceError::NotFound("no such route on this service".into()))
}

/// Routes of the roles in `served`.
pub fn router(services: Arc<LocalServices>, served: Served, timeout: Duration) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/runs/{id}/provenance", get(provenance));
    if served.includes(Role::Data) {
        r = r
            .route("/datasets", post(register_dataset))
            .route("/datasets/{id}", get(dataset_info))
            .route("/datasets/{id}/perturb", post(perturb))
            .route("/datasets/{id}/mask", post(mask));
    }
    if served.includes(Role::Model) {
        r = r.route("/models/{name}/predict", post(predict));
    }
    if served.includes(Role::Xai) {
        r = r.route("/xai/{method}/explain", post(explain));
    }
    if served.includes(Role::Model) || served.includes(Role::Xai) {
        r = r.route("/registry", get(registry_list).post(registry_add));
    }
    if served.includes(Role::Eval) {
        r = r.route("/eval/{metric}", post(eval));
    }
    r.fallback(not_found).with_state(AppState {
        services,
        served,
        timeout,
    })
}

/// A server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    served: Served,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn served(&self) -> Served {
        self.served
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop()
    }

    /// Blocks until the server stops by itself: on ctrl-c when started with
    /// [`spawn_until_ctrl_c`], otherwise only if it fails.
    pub fn join(mut self) -> std::io::Result<()> {
        let _keep_open = self.shutdown.take();
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    fn stop(&mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Err(e) = self.stop() {
            warn!(error = %e, "server stopped with an error");
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves on a background
/// runtime. Bind failures are returned here rather than from the thread.
pub fn spawn(
    services: Arc<LocalServices>,
    served: Served,
    addr: SocketAddr,
    timeout: Duration,
) -> Result<ServerHandle, GatewayError> {
    start(services, served, addr, timeout, false)
}

/// Like [`spawn`], but the server also stops on ctrl-c; [`ServerHandle::join`]
/// then returns.
pub fn spawn_until_ctrl_c(
    services: Arc<LocalServices>,
    served: Served,
    addr: SocketAddr,
    timeout: Duration,
) -> Result<ServerHandle, GatewayError> {
    start(services, served, addr, timeout, true)
}

fn start(
    services: Arc<LocalServices>,
    served: Served,
    addr: SocketAddr,
    timeout: Duration,
    ctrl_c: bool,
) -> Result<ServerHandle, GatewayError> {
    let listener = std::net::TcpListener::bind(addr).map_err(|source| GatewayError::Bind { addr, source })?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(services, served, timeout);
    let thread = std::thread::Builder::new()
        .name(format!("xaas-{}", served.name()))
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                info!(addr = %local, role = served.name(), "serving");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async move {
                        if ctrl_c {
                            tokio::select! {
                                _ = rx => {}
                                _ = tokio::signal::ctrl_c() => info!("ctrl-c, shutting down"),
                            }
                        } else {
                            let _ = rx.await;
                        }
                    })
                    .await
            })
        })?;
    Ok(ServerHandle {
        addr: local,
        served,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
