use async_trait::async_trait;

use super::{Backend, BackendError};
use crate::protocol::Role;

/// Sends protocol requests over HTTP/1.1 to `<base_url><route>`.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    base_url: String,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
        }
    }

    pub fn url(&self, role: Role) -> String {
        format!("{}{}", self.base_url, role.route())
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn call(&self, role: Role, body: Vec<u8>) -> Result<Vec<u8>, BackendError> {
        let reply = self
            .client
            .post(self.url(role))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body)
            .send()
            .await
            .map_err(classify)?;
        let status = reply.status().as_u16();
        let bytes = reply.bytes().await.map_err(classify)?;
        if (200..300).contains(&status) {
            Ok(bytes.to_vec())
        } else {
            Err(BackendError::from_status(status, &bytes))
        }
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else {
        BackendError::Transport(e.to_string())
    }
}
