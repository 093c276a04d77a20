//! Blocking HTTP client for the caster API.

use std::io::BufReader;
use std::time::Duration;

use caster_service::wire::{decode_stream, Decoded, StreamReader, WireError};
use serde::de::DeserializeOwned;
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("service unreachable at {url}: {message}")]
    Unreachable { url: String, message: String },
    #[error("{method} {path}: HTTP {status}: {body}")]
    Status { method: &'static str, path: String, status: u16, body: String },
    #[error("{path}: {source}")]
    Wire { path: String, source: WireError },
    #[error("{path}: bad response body: {message}")]
    Body { path: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type BodyReader = BufReader<ureq::BodyReader<'static>>;

#[derive(Clone)]
pub struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    pub fn new(url: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_connect(Some(Duration::from_secs(5)))
            .build()
            .into();
        Client { agent, base: url.trim_end_matches('/').to_string() }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn unreachable(&self, e: ureq::Error) -> ClientError {
        ClientError::Unreachable { url: self.base.clone(), message: e.to_string() }
    }

    /// Send a request; returns the status and body text whatever the status.
    pub fn raw(&self, method: &'static str, path: &str, body: Option<&str>) -> Result<(u16, String), ClientError> {
        let url = self.url(path);
        let resp = match (method, body) {
            ("GET", _) => self.agent.get(url).call(),
            ("POST", b) => self.agent.post(url).header("content-type", "application/json").send(b.unwrap_or("")),
            ("PUT", b) => self.agent.put(url).header("content-type", "application/json").send(b.unwrap_or("")),
            _ => panic!("unsupported method {method}"),
        };
        let mut resp = resp.map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| ClientError::Body { path: path.into(), message: e.to_string() })?;
        Ok((status, text))
    }

    /// Like [`Client::raw`], but non-2xx statuses are errors.
    pub fn call(&self, method: &'static str, path: &str, body: Option<&str>) -> Result<String, ClientError> {
        let (status, text) = self.raw(method, path, body)?;
        if !(200..300).contains(&status) {
            return Err(ClientError::Status { method, path: path.into(), status, body: text });
        }
        Ok(text)
    }

    pub fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let text = self.call("GET", path, None)?;
        serde_json::from_str(&text).map_err(|e| ClientError::Body { path: path.into(), message: e.to_string() })
    }

    pub fn post(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        self.send_json("POST", path, body)
    }

    pub fn put(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        self.send_json("PUT", path, body)
    }

    fn send_json(&self, method: &'static str, path: &str, body: &Value) -> Result<Value, ClientError> {
        let text = self.call(method, path, Some(&body.to_string()))?;
        Ok(serde_json::from_str(&text).unwrap_or(Value::Null))
    }

    pub fn health(&self) -> Result<(), ClientError> {
        self.call("GET", "/health", None).map(|_| ())
    }

    /// Open a record stream; the header has been read when this returns.
    pub fn open_stream(&self, path: &str) -> Result<StreamReader<BodyReader>, ClientError> {
        let resp = self.agent.get(self.url(path)).call().map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.into_body().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { method: "GET", path: path.into(), status, body });
        }
        let reader = BufReader::new(resp.into_body().into_reader());
        StreamReader::new(reader).map_err(|source| ClientError::Wire { path: path.into(), source })
    }

    /// Read a whole stream, checking its envelope.
    pub fn stream(&self, path: &str) -> Result<Decoded, ClientError> {
        let resp = self.agent.get(self.url(path)).call().map_err(|e| self.unreachable(e))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.into_body().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { method: "GET", path: path.into(), status, body });
        }
        decode_stream(BufReader::new(resp.into_body().into_reader()))
            .map_err(|source| ClientError::Wire { path: path.into(), source })
    }
}

/// Percent-encode a query or path component.
pub fn encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => out.push(b as char),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}
