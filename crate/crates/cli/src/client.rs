//! Thin blocking-in-sequence HTTP client for the portal API.

use gridgate_core::portal::TOKEN_HEADER;
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde_json::Value;

/// A failed request: transport failure or a non-success status.
#[derive(Debug)]
pub struct RequestError {
    pub status: Option<StatusCode>,
    pub message: String,
    /// Parsed response body, when the portal sent JSON.
    pub body: Option<Value>,
}

impl std::fmt::Display for RequestError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.status {
            Some(s) => write!(f, "{}: {}", s.as_u16(), self.message),
            None => f.write_str(&self.message),
        }
    }
}

pub struct PortalClient {
    base: String,
    token: String,
    http: reqwest::Client,
}

impl PortalClient {
    pub fn new(base: &str, token: String) -> Self {
        PortalClient {
            base: base.trim_end_matches('/').to_string(),
            token,
            http: reqwest::Client::new(),
        }
    }

    pub async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, RequestError> {
        self.send(Method::GET, path, None).await
    }

    pub async fn post<T: DeserializeOwned>(
        &self,
        path: &str,
        body: &Value,
    ) -> Result<T, RequestError> {
        self.send(Method::POST, path, Some(body)).await
    }

    async fn send<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&Value>,
    ) -> Result<T, RequestError> {
        let transport = |e: reqwest::Error| RequestError {
            status: None,
            message: format!("portal unreachable at {}: {e}", self.base),
            body: None,
        };
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header(TOKEN_HEADER, &self.token);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await.map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(transport)?;
        let value: Option<Value> = serde_json::from_slice(&bytes).ok();
        if !status.is_success() {
            let message = value
                .as_ref()
                .and_then(|v| v.get("error"))
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| String::from_utf8_lossy(&bytes).into_owned());
            return Err(RequestError {
                status: Some(status),
                message,
                body: value,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| RequestError {
            status: Some(status),
            message: format!("unexpected response: {e}"),
            body: value,
        })
    }
}
