//! Adapter for an OpenAI-compatible chat-completions endpoint.
//!
//! Remote models return text only, so log-probability based operations are
//! unavailable and the optimizer is disabled in this mode.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{MasaError, Result};
use crate::rewards::solution_reward;
use crate::textmeta::{parse_meta_output, Message};
use crate::types::MetaPrediction;

pub const DEFAULT_API_KEY_ENV: &str = "MASA_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    #[serde(default)]
    pub content: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    #[serde(default)]
    pub index: usize,
    pub message: ChatMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

/// Sends one chat-completions request.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://host/v1`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub top_p: f64,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 1.0,
            top_p: 1.0,
            timeout_secs: 600,
        }
    }
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
}

impl HttpTransport {
    /// Reads the auth token from the configured environment variable, if set.
    pub fn new(cfg: &EndpointConfig) -> Self {
        let token = std::env::var(&cfg.api_key_env).ok().filter(|t| !t.is_empty());
        Self::with_token(cfg, token)
    }

    pub fn with_token(cfg: &EndpointConfig, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            token,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(request)
            .map_err(|e| MasaError::Endpoint(format!("request to {} failed: {e}", self.url)))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(MasaError::Endpoint(format!("status {status}: {}", body.chars().take(200).collect::<String>())));
        }
        resp.body_mut()
            .read_json::<ChatResponse>()
            .map_err(|e| MasaError::Endpoint(format!("malformed response: {e}")))
    }
}

/// One remote solution completion, scored against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSolution {
    pub text: String,
    pub reward: f64,
    pub truncated: bool,
}

/// Text-only sampling through a chat endpoint.
pub struct EndpointPolicy<T: ChatTransport> {
    pub transport: T,
    pub cfg: EndpointConfig,
}

impl<T: ChatTransport> EndpointPolicy<T> {
    pub fn new(transport: T, cfg: EndpointConfig) -> Self {
        Self { transport, cfg }
    }

    fn texts(&self, messages: Vec<Message>, n: usize, max_tokens: u32) -> Result<Vec<(String, Option<String>)>> {
        if n == 0 {
            return Err(MasaError::Precondition("sample count must be at least 1".into()));
        }
        let request = ChatRequest {
            model: self.cfg.model.clone(),
            messages,
            temperature: self.cfg.temperature,
            top_p: self.cfg.top_p,
            max_tokens,
            n,
            seed: None,
        };
        let response = self.transport.complete(&request)?;
        if response.choices.len() != n {
            return Err(MasaError::Endpoint(format!(
                "expected {n} choices, got {}",
                response.choices.len()
            )));
        }
        let mut choices = response.choices;
        choices.sort_by_key(|c| c.index);
        Ok(choices
            .into_iter()
            .map(|c| (c.message.content.unwrap_or_default(), c.finish_reason))
            .collect())
    }

    /// Samples `count` meta rollouts and parses them.
    pub fn sample_metas(&self, messages: Vec<Message>, count: usize, max_response_tokens: u32) -> Result<Vec<MetaPrediction>> {
        Ok(self
            .texts(messages, count, max_response_tokens)?
            .into_iter()
            .map(|(text, _)| parse_meta_output(&text, max_response_tokens))
            .collect())
    }

    /// Samples `group` solutions. A `length` finish reason counts as truncation.
    pub fn sample_solutions(
        &self,
        messages: Vec<Message>,
        ground_truth: &str,
        group: usize,
        budget: u32,
    ) -> Result<Vec<RemoteSolution>> {
        if budget == 0 {
            return Err(MasaError::Precondition("token budget must be positive".into()));
        }
        Ok(self
            .texts(messages, group, budget)?
            .into_iter()
            .map(|(text, finish)| {
                let truncated = finish.as_deref() == Some("length");
                let reward = if truncated { 0.0 } else { solution_reward(&text, ground_truth) };
                RemoteSolution { text, reward, truncated }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textmeta::Role;
    use std::sync::Mutex;

    struct Canned {
        texts: Vec<(&'static str, &'static str)>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl ChatTransport for Canned {
        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(ChatResponse {
                choices: self
                    .texts
                    .iter()
                    .enumerate()
                    .rev()
                    .map(|(i, (t, f))| ChatChoice {
                        index: i,
                        message: ChatMessage {
                            role: "assistant".into(),
                            content: Some(t.to_string()),
                        },
                        finish_reason: Some(f.to_string()),
                    })
                    .collect(),
                usage: None,
            })
        }
    }

    fn user(s: &str) -> Vec<Message> {
        vec![Message {
            role: Role::User,
            content: s.into(),
        }]
    }

    #[test]
    fn solutions_are_scored_in_index_order() {
        let t = Canned {
            texts: vec![(r"\boxed{4}", "stop"), (r"\boxed{5}", "stop"), (r"\boxed{4", "length")],
            seen: Mutex::new(Vec::new()),
        };
        let policy = EndpointPolicy::new(t, EndpointConfig::default());
        let sols = policy.sample_solutions(user("2+2?"), "4", 3, 64).unwrap();
        assert_eq!(sols.iter().map(|s| s.reward).collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
        assert!(sols[2].truncated);
        let req = &policy.transport.seen.lock().unwrap()[0];
        assert_eq!((req.n, req.max_tokens, req.temperature, req.top_p), (3, 64, 1.0, 1.0));
    }

    #[test]
    fn metas_are_parsed() {
        let t = Canned {
            texts: vec![
                (r#"<meta>a</meta>{"math_notion":["vieta"],"pass_rate":6,"solution_length":900}"#, "stop"),
                ("no structure", "stop"),
            ],
            seen: Mutex::new(Vec::new()),
        };
        let policy = EndpointPolicy::new(t, EndpointConfig::default());
        let metas = policy.sample_metas(user("q"), 2, 1024).unwrap();
        assert!(metas[0].parse_ok);
        assert!(!metas[1].parse_ok);
    }

    #[test]
    fn choice_count_mismatch_is_an_error() {
        let t = Canned {
            texts: vec![("x", "stop")],
            seen: Mutex::new(Vec::new()),
        };
        let policy = EndpointPolicy::new(t, EndpointConfig::default());
        assert!(matches!(policy.sample_metas(user("q"), 2, 1024), Err(MasaError::Endpoint(_))));
    }

    #[test]
    fn request_wire_format() {
        let req = ChatRequest {
            model: "m".into(),
            messages: user("hi"),
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 16,
            n: 2,
            seed: None,
        };
        let v: serde_json::Value = serde_json::to_value(&req).unwrap();
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"], "hi");
        assert!(v.get("seed").is_none());
    }
}
