use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::MockBackend;
use crate::protocol::{error_code, ErrorEnvelope, Role};

/// The mock backend served over HTTP/1.1.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

fn json(status: u16, body: Vec<u8>) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn dispatch(State(backend): State<Arc<MockBackend>>, method: Method, uri: Uri, body: Bytes) -> Response {
    match Role::from_route(uri.path()) {
        Some(role) if method == Method::POST => {
            let (status, bytes) = backend.respond(role, &body).await;
            json(status, bytes)
        }
        _ => json(
            404,
            ErrorEnvelope::new(error_code::UNKNOWN_ENDPOINT, format!("no route for {method} {}", uri.path())).to_bytes(),
        ),
    }
}

pub fn router(backend: Arc<MockBackend>) -> Router {
    Router::new().fallback(dispatch).with_state(backend)
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and serves until dropped or
    /// [`MockServer::shutdown`] is called.
    pub async fn spawn(addr: SocketAddr, backend: Arc<MockBackend>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, router(backend))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            task,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match (&mut self.task).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }

    /// Serves until the task ends (for the `mock-serve` command).
    pub async fn wait(mut self) -> std::io::Result<()> {
        match (&mut self.task).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
