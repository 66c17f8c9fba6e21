//! OpenAI-compatible HTTP backends (`/chat/completions`, `/embeddings`).

use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, ChatBackend, EmbeddingBackend, ModelProfile};
use crate::error::Error;
use crate::prompt::PromptSpec;

struct Endpoint {
    agent: ureq::Agent,
    base_url: String,
    model: String,
    api_key_env: Option<String>,
}

impl Endpoint {
    fn new(base_url: &str, model: &str, api_key_env: Option<String>, timeout: Duration) -> Self {
        Endpoint {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key_env,
        }
    }

    fn post(&self, profile: &ModelProfile, path: &str, body: Value) -> Result<Value, AttemptError> {
        let mut req = self
            .agent
            .post(&format!("{}/{path}", self.base_url))
            .set("Content-Type", "application/json");
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                AttemptError::Fatal(Error::Config(format!(
                    "{}: environment variable {var} is not set",
                    profile.name
                )))
            })?;
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| {
                AttemptError::Fatal(Error::Protocol {
                    model: profile.name.clone(),
                    message: format!("response body is not JSON: {e}"),
                })
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let snippet: String = body.chars().take(200).collect();
                if code == 429 || code >= 500 {
                    Err(AttemptError::Retryable(format!("HTTP {code}: {snippet}")))
                } else {
                    Err(AttemptError::Fatal(Error::Protocol {
                        model: profile.name.clone(),
                        message: format!("HTTP {code}: {snippet}"),
                    }))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(AttemptError::Retryable(t.to_string())),
        }
    }
}

fn malformed(profile: &ModelProfile, what: &str) -> AttemptError {
    AttemptError::Fatal(Error::Protocol {
        model: profile.name.clone(),
        message: format!("malformed response: {what}"),
    })
}

pub struct OpenAiChat(Endpoint);

impl OpenAiChat {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>, timeout: Duration) -> Self {
        OpenAiChat(Endpoint::new(base_url, model, api_key_env, timeout))
    }
}

impl ChatBackend for OpenAiChat {
    fn send(&self, profile: &ModelProfile, prompt: &PromptSpec) -> Result<String, AttemptError> {
        let body = json!({
            "model": self.0.model,
            "messages": [
                {"role": "system", "content": prompt.system_message},
                {"role": "user", "content": prompt.user_message},
            ],
            "temperature": profile.temperature,
            "max_tokens": profile.max_output_tokens,
        });
        let v = self.0.post(profile, "chat/completions", body)?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| malformed(profile, "no choices[0].message.content"))
    }
}

pub struct OpenAiEmbeddings(Endpoint);

impl OpenAiEmbeddings {
    pub fn new(base_url: &str, model: &str, api_key_env: Option<String>, timeout: Duration) -> Self {
        OpenAiEmbeddings(Endpoint::new(base_url, model, api_key_env, timeout))
    }
}

impl EmbeddingBackend for OpenAiEmbeddings {
    fn send(&self, profile: &ModelProfile, texts: &[String]) -> Result<Vec<Vec<f64>>, AttemptError> {
        let v = self
            .0
            .post(profile, "embeddings", json!({"model": self.0.model, "input": texts}))?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed(profile, "no data array"))?;
        let mut out = vec![None; data.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let vec = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| malformed(profile, "item without embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed(profile, "non-numeric component")))
                .collect::<Result<Vec<f64>, _>>()?;
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| malformed(profile, "index out of range"))?;
            *slot = Some(vec);
        }
        out.into_iter()
            .map(|v| v.ok_or_else(|| malformed(profile, "missing index")))
            .collect()
    }
}
