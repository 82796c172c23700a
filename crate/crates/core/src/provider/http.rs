use std::time::Duration;

use reqwest::blocking::{Client as HttpClient, RequestBuilder};
use serde::Deserialize;
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ProviderConfig, RetryPolicy, Usage};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};

fn http_client(timeout_secs: f64) -> Result<HttpClient> {
    HttpClient::builder()
        .timeout(Duration::from_secs_f64(timeout_secs))
        .build()
        .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{path}", base_url.trim_end_matches('/'))
}

fn send_json(builder: RequestBuilder, key: Option<&str>) -> std::result::Result<String, BackendError> {
    let builder = match key {
        Some(k) => builder.bearer_auth(k),
        None => builder,
    };
    let resp = builder
        .send()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    let body = resp
        .text()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Status {
            status: status.as_u16(),
            body,
        });
    }
    Ok(body)
}

#[derive(Deserialize)]
struct WireChatResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

pub(crate) fn decode_chat(body: &str) -> std::result::Result<ChatResponse, BackendError> {
    let wire: WireChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Decode("response has no choices".into()))?;
    let content = choice
        .message
        .content
        .ok_or_else(|| BackendError::Decode("choices[0].message.content is missing".into()))?;
    Ok(ChatResponse {
        content,
        finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".into()),
        usage: wire.usage.unwrap_or_default(),
    })
}

/// `POST {base_url}/chat/completions` with an OpenAI-style body.
pub struct HttpChatBackend {
    http: HttpClient,
    url: String,
    key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(config: &ProviderConfig) -> Result<Self> {
        Ok(HttpChatBackend {
            http: http_client(config.timeout_secs)?,
            url: endpoint(&config.base_url, "chat/completions"),
            key: config.credential()?,
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn send(&self, request: &ChatRequest) -> std::result::Result<ChatResponse, BackendError> {
        let body = send_json(self.http.post(&self.url).json(request), self.key.as_deref())?;
        decode_chat(&body)
    }
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub(crate) fn decode_embeddings(body: &str, expected: usize) -> std::result::Result<Vec<Vec<f64>>, BackendError> {
    let wire: WireEmbeddings =
        serde_json::from_str(body).map_err(|e| BackendError::Decode(e.to_string()))?;
    if wire.data.len() != expected {
        return Err(BackendError::Decode(format!(
            "expected {expected} embeddings, got {}",
            wire.data.len()
        )));
    }
    let mut slots: Vec<Option<Vec<f64>>> = vec![None; expected];
    for (pos, item) in wire.data.into_iter().enumerate() {
        let i = item.index.unwrap_or(pos);
        match slots.get_mut(i) {
            Some(slot @ None) => *slot = Some(item.embedding),
            _ => return Err(BackendError::Decode(format!("bad or repeated embedding index {i}"))),
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

/// `POST {base_url}/embeddings` with `{model, input}`.
pub struct HttpEmbeddingProvider {
    http: HttpClient,
    url: String,
    key: Option<String>,
    model: String,
    base_url: String,
    retry: RetryPolicy,
    batch: usize,
}

impl HttpEmbeddingProvider {
    pub fn new(config: &ProviderConfig, batch: usize) -> Result<Self> {
        Ok(HttpEmbeddingProvider {
            http: http_client(config.timeout_secs)?,
            url: endpoint(&config.base_url, "embeddings"),
            key: config.credential()?,
            model: config.model.clone(),
            base_url: config.base_url.clone(),
            retry: config.retry_policy(),
            batch: batch.max(1),
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn provenance(&self) -> String {
        format!("{}#{}", self.base_url.trim_end_matches('/'), self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({ "model": self.model, "input": texts });
        self.retry.run(
            || {
                let raw = send_json(self.http.post(&self.url).json(&body), self.key.as_deref())?;
                decode_embeddings(&raw, texts.len())
            },
            || {},
        )
    }

    fn max_batch(&self) -> usize {
        self.batch
    }
}
