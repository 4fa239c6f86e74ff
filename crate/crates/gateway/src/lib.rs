//! HTTP front for the four service roles, and a client that speaks the same
//! contract so the orchestrator can drive remote roles.

use std::net::SocketAddr;

use thiserror::Error;

pub mod client;
pub mod server;

pub use client::HttpClient;
pub use server::{router, spawn, spawn_until_ctrl_c, ServerHandle, Served};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("`{0}` is not an http(s) base url")]
    BadUrl(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
