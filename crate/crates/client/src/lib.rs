//! Blocking client for the docparse HTTP service.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use docparse_core::api::{
    BenchReport, BenchRequest, ErrorBody, EvalRequest, ParseRequest, ParseResponse, PlanRequest, PlanResponse,
    UnstableRequest,
};
use docparse_core::metrics::EvaluationReport;
use docparse_core::uacs::UnstableReport;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("server rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("server error ({status}): {message}")]
    Server { status: u16, message: String },
}

impl ClientError {
    /// True when the request itself was at fault.
    pub fn is_usage(&self) -> bool {
        matches!(self, ClientError::Rejected { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(3600))
            .build()
            .map_err(|source| ClientError::Transport {
                url: base_url.to_string(),
                source,
            })?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, ClientError> {
        let url = self.url(path);
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let resp = self.http.post(&url).json(body).send().map_err(transport)?;
        let status = resp.status();
        if status.is_success() {
            return resp.json().map_err(transport);
        }
        let text = resp.text().unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map_or(text, |e| e.error);
        if status.is_client_error() {
            Err(ClientError::Rejected {
                status: status.as_u16(),
                message,
            })
        } else {
            Err(ClientError::Server {
                status: status.as_u16(),
                message,
            })
        }
    }

    pub fn health(&self) -> Result<bool, ClientError> {
        let url = self.url("/healthz");
        let resp = self
            .http
            .get(&url)
            .send()
            .map_err(|source| ClientError::Transport { url, source })?;
        Ok(resp.status().is_success())
    }

    pub fn parse(&self, req: &ParseRequest) -> Result<ParseResponse, ClientError> {
        self.post("/v1/parse", req)
    }

    pub fn evaluate(&self, req: &EvalRequest) -> Result<EvaluationReport, ClientError> {
        self.post("/v1/eval", req)
    }

    pub fn plan(&self, req: &PlanRequest) -> Result<PlanResponse, ClientError> {
        self.post("/v1/plan", req)
    }

    pub fn unstable(&self, req: &UnstableRequest) -> Result<UnstableReport, ClientError> {
        self.post("/v1/unstable", req)
    }

    pub fn bench(&self, req: &BenchRequest) -> Result<BenchReport, ClientError> {
        self.post("/v1/bench", req)
    }
}
