//! Model client contract, an OpenAI-compatible HTTP client, and routing.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::images::ImageRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    /// Network or server failure; worth retrying.
    #[error("transport: {0}")]
    Transport(String),
    /// The model answered but declined or the request was rejected.
    #[error("refusal: {0}")]
    Refusal(String),
}

impl ModelError {
    pub fn is_transport(&self) -> bool {
        matches!(self, ModelError::Transport(_))
    }
}

pub trait ModelClient: Send + Sync {
    fn complete(&self, system_text: &str, user_text: &str, image: Option<&ImageRef>) -> Result<String, ModelError>;
}

/// Client for replay-only runs; any call is an error.
pub struct OfflineClient;

impl ModelClient for OfflineClient {
    fn complete(&self, _: &str, _: &str, _: Option<&ImageRef>) -> Result<String, ModelError> {
        Err(ModelError::Refusal("offline client cannot answer".into()))
    }
}

/// `/chat/completions` endpoint speaking the OpenAI wire format.
pub struct ChatCompletionsClient {
    base_url: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    temperature: f64,
}

impl ChatCompletionsClient {
    /// `api_key_env` names the environment variable holding the credential.
    pub fn new(base_url: &str, model: &str, api_key_env: Option<&str>) -> Self {
        ChatCompletionsClient {
            base_url: base_url.trim_end_matches('/').to_owned(),
            model: model.to_owned(),
            api_key: api_key_env.and_then(|k| std::env::var(k).ok()),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build(),
            temperature: 0.0,
        }
    }
}

pub fn chat_request_body(model: &str, system_text: &str, user_text: &str, image: Option<&ImageRef>, temperature: f64) -> Value {
    let user_content = match image {
        Some(img) => json!([
            {"type": "image_url", "image_url": {"url": img.resolved_url.clone().unwrap_or_else(|| img.file_path_url())}},
            {"type": "text", "text": user_text}
        ]),
        None => Value::String(user_text.to_owned()),
    };
    json!({
        "model": model,
        "temperature": temperature,
        "messages": [
            {"role": "system", "content": system_text},
            {"role": "user", "content": user_content}
        ]
    })
}

pub fn chat_response_text(body: &Value) -> Result<String, ModelError> {
    let choice = body
        .pointer("/choices/0")
        .ok_or_else(|| ModelError::Refusal("response without choices".into()))?;
    if let Some(r) = choice.pointer("/message/refusal").and_then(Value::as_str) {
        return Err(ModelError::Refusal(r.to_owned()));
    }
    choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| ModelError::Refusal("response without message content".into()))
}

impl ModelClient for ChatCompletionsClient {
    fn complete(&self, system_text: &str, user_text: &str, image: Option<&ImageRef>) -> Result<String, ModelError> {
        let body = chat_request_body(&self.model, system_text, user_text, image, self.temperature);
        let mut req = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_string(&body.to_string()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) if code == 429 || code >= 500 => {
                let _ = r.into_string();
                return Err(ModelError::Transport(format!("http {code}")));
            }
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                return Err(ModelError::Refusal(format!("http {code}: {detail}")));
            }
            Err(e) => return Err(ModelError::Transport(e.to_string())),
        };
        let text = resp.into_string().map_err(|e| ModelError::Transport(e.to_string()))?;
        let json: Value = serde_json::from_str(&text).map_err(|e| ModelError::Transport(format!("bad json: {e}")))?;
        chat_response_text(&json)
    }
}

/// One routing rule; `None` matches any region or language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    #[serde(default)]
    pub region: Option<String>,
    #[serde(default)]
    pub language: Option<String>,
    pub client: String,
}

/// (region, language) to client name; the most specific rule wins.
pub struct ClientRouter {
    clients: HashMap<String, Arc<dyn ModelClient>>,
    routes: Vec<Route>,
    default: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("route points at unknown client {0:?}")]
pub struct UnknownClient(pub String);

impl ClientRouter {
    pub fn new(
        clients: HashMap<String, Arc<dyn ModelClient>>,
        routes: Vec<Route>,
        default: &str,
    ) -> Result<Self, UnknownClient> {
        for name in routes.iter().map(|r| r.client.as_str()).chain([default]) {
            if !clients.contains_key(name) {
                return Err(UnknownClient(name.to_owned()));
            }
        }
        Ok(ClientRouter { clients, routes, default: default.to_owned() })
    }

    pub fn single(client: Arc<dyn ModelClient>) -> Self {
        ClientRouter {
            clients: HashMap::from([("default".to_owned(), client)]),
            routes: Vec::new(),
            default: "default".into(),
        }
    }

    pub fn route_name(&self, region: &str, language: &str) -> &str {
        let mut best: Option<(u8, &str)> = None;
        for r in &self.routes {
            let region_ok = r.region.as_deref().is_none_or(|x| x == region);
            let lang_ok = r.language.as_deref().is_none_or(|x| x == language);
            if region_ok && lang_ok {
                let score = 2 * r.region.is_some() as u8 + r.language.is_some() as u8;
                if best.is_none_or(|(s, _)| score > s) {
                    best = Some((score, &r.client));
                }
            }
        }
        best.map(|(_, c)| c).unwrap_or(&self.default)
    }

    pub fn route(&self, region: &str, language: &str) -> &dyn ModelClient {
        self.clients[self.route_name(region, language)].as_ref()
    }

    pub fn names(&self) -> BTreeMap<&str, usize> {
        self.clients.keys().map(|k| (k.as_str(), 0)).collect()
    }
}
