//! OpenAI-style chat-completions client.

use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendError, BackendSpec, SampleRequest, SamplingConfig};

pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
    model: String,
    temperature: f64,
    top_p: f64,
}

impl HttpChatBackend {
    pub fn new(spec: &BackendSpec, sampling: &SamplingConfig) -> Result<Self, BackendError> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http_chat backend needs an endpoint".into()))?;
        let token = match &spec.auth_env_var {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs.max(1)))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            token,
            model: spec.model_name.clone(),
            temperature: sampling.temperature,
            top_p: sampling.top_p,
        })
    }
}

fn content_of(body: &Value) -> Option<&str> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl Backend for HttpChatBackend {
    fn complete(&self, request: &SampleRequest<'_>) -> Result<String, BackendError> {
        let payload = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.system_message},
                {"role": "user", "content": request.prompt},
            ],
            "temperature": self.temperature,
            "top_p": self.top_p,
        });
        let mut builder = self.client.post(&self.endpoint).json(&payload);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        let response = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| BackendError::MalformedBody(e.to_string()))?;
        content_of(&body)
            .map(str::to_owned)
            .ok_or_else(|| BackendError::MalformedBody("missing choices[0].message.content".into()))
    }
}
