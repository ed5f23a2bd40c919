use std::io::{BufRead, BufReader};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::AssembledPrompt;

/// Fragment appended to the stream when a provider fails.
pub const ERROR_MARKER: &str = "\n\n[generation failed]";
pub const MOCK_PREAMBLE: &str = "MOCK-ANSWER";
pub const MOCK_FRAGMENT_CHARS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("language model provider failed: {0}")]
    Provider(String),
    #[error("language model did not finish within {0:?}")]
    Timeout(Duration),
    #[error("language model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub text: String,
    pub token_events: Vec<String>,
    pub finish_reason: FinishReason,
    pub error: Option<LlmError>,
}

/// A streaming chat model. Implementations push fragments to `emit` in order
/// and report how the stream ended.
pub trait LlmProvider: Send + Sync {
    fn stream(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str),
    ) -> Result<FinishReason, LlmError>;
}

/// Streams a response, forwarding each fragment to `sink` and recording it.
///
/// On failure the [`ERROR_MARKER`] fragment is emitted last and the result
/// carries `FinishReason::Error`. The concatenated fragments always equal
/// `result.text`.
pub fn generate(
    prompt: &AssembledPrompt,
    provider: &dyn LlmProvider,
    sink: &mut dyn FnMut(&str),
) -> GenerationResult {
    let mut token_events: Vec<String> = Vec::new();
    let outcome = {
        let mut record = |fragment: &str| {
            if fragment.is_empty() {
                return;
            }
            sink(fragment);
            token_events.push(fragment.to_string());
        };
        provider.stream(prompt, &mut record)
    };
    let (finish_reason, error) = match outcome {
        Ok(reason) => (reason, None),
        Err(e) => {
            sink(ERROR_MARKER);
            token_events.push(ERROR_MARKER.to_string());
            (FinishReason::Error, Some(e))
        }
    };
    GenerationResult {
        text: token_events.concat(),
        token_events,
        finish_reason,
        error,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Remote,
    #[default]
    Mock,
}

/// Language model configuration (`[llm]` table of the engine config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSpec {
    pub kind: LlmKind,
    pub model_name: String,
    pub endpoint_url: Option<String>,
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_tokens: Option<u32>,
    /// Mock only: fail after this many fragments.
    pub mock_fail_after: Option<usize>,
    /// Mock only: pause between fragments.
    pub mock_fragment_delay_ms: u64,
}

impl Default for LlmSpec {
    fn default() -> Self {
        Self {
            kind: LlmKind::Mock,
            model_name: "gpt-4o".into(),
            endpoint_url: None,
            api_key_env: None,
            temperature: 0.0,
            timeout_secs: 60,
            max_tokens: None,
            mock_fail_after: None,
            mock_fragment_delay_ms: 0,
        }
    }
}

impl LlmSpec {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0) {
            return Err(LlmError::Config("temperature must be >= 0".into()));
        }
        if self.kind == LlmKind::Remote && self.endpoint_url.as_deref().unwrap_or("").is_empty() {
            return Err(LlmError::Config("remote llm requires endpoint_url".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn LlmProvider>, LlmError> {
        self.validate()?;
        Ok(match self.kind {
            LlmKind::Mock => Box::new(MockLlm {
                fail_after: self.mock_fail_after,
                fragment_delay: Duration::from_millis(self.mock_fragment_delay_ms),
            }),
            LlmKind::Remote => Box::new(RemoteLlm::new(self.clone())?),
        })
    }
}

/// Deterministic provider that echoes what it was asked.
///
/// The answer lists, one per line: the `MOCK-ANSWER` preamble, the query, the
/// ranked source chunk ids, the context length in characters and the number of
/// history turns. It is streamed in fragments of at most eight characters.
#[derive(Debug, Clone, Default)]
pub struct MockLlm {
    pub fail_after: Option<usize>,
    pub fragment_delay: Duration,
}

impl MockLlm {
    pub fn answer_text(prompt: &AssembledPrompt) -> String {
        format!(
            "{MOCK_PREAMBLE}\nquery: {}\nsources: {}\ncontext-chars: {}\nhistory-turns: {}\n",
            prompt.current_user_text,
            prompt.source_ids.join(" "),
            prompt.context.chars().count(),
            prompt.history.len(),
        )
    }
}

/// Splits `text` into pieces of at most `max_chars` characters.
pub fn split_fragments(text: &str, max_chars: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut count = 0;
    for (i, _) in text.char_indices() {
        if count == max_chars {
            out.push(&text[start..i]);
            start = i;
            count = 0;
        }
        count += 1;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

impl LlmProvider for MockLlm {
    fn stream(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str),
    ) -> Result<FinishReason, LlmError> {
        let text = Self::answer_text(prompt);
        for (i, fragment) in split_fragments(&text, MOCK_FRAGMENT_CHARS).into_iter().enumerate() {
            if self.fail_after == Some(i) {
                return Err(LlmError::Provider("mock failure".into()));
            }
            if !self.fragment_delay.is_zero() {
                std::thread::sleep(self.fragment_delay);
            }
            emit(fragment);
        }
        Ok(FinishReason::Stop)
    }
}

/// Client for an OpenAI-style streaming `/chat/completions` endpoint.
pub struct RemoteLlm {
    spec: LlmSpec,
    agent: ureq::Agent,
}

impl RemoteLlm {
    pub fn new(spec: LlmSpec) -> Result<Self, LlmError> {
        spec.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs.max(1))))
            .build()
            .into();
        Ok(Self { spec, agent })
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.spec.timeout_secs.max(1))
    }

    fn classify(&self, message: String, timed_out: bool) -> LlmError {
        if timed_out {
            LlmError::Timeout(self.timeout())
        } else {
            LlmError::Provider(message)
        }
    }
}

fn finish_from(v: &Value) -> Option<FinishReason> {
    match v.as_str()? {
        "length" => Some(FinishReason::Length),
        _ => Some(FinishReason::Stop),
    }
}

impl LlmProvider for RemoteLlm {
    fn stream(
        &self,
        prompt: &AssembledPrompt,
        emit: &mut dyn FnMut(&str),
    ) -> Result<FinishReason, LlmError> {
        let started = Instant::now();
        let mut body = json!({
            "model": self.spec.model_name,
            "messages": prompt.messages(),
            "temperature": self.spec.temperature,
            "stream": true,
        });
        if let Some(max) = self.spec.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let url = self.spec.endpoint_url.as_deref().unwrap_or_default();
        let mut req = self.agent.post(url);
        if let Some(key) = self.spec.api_key_env.as_deref().and_then(|n| std::env::var(n).ok()) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(&body).map_err(|e| {
            let timed_out = matches!(e, ureq::Error::Timeout(_));
            self.classify(e.to_string(), timed_out)
        })?;

        let is_event_stream = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("text/event-stream"));
        let reader = BufReader::new(resp.into_body().into_reader());

        if !is_event_stream {
            let v: Value = serde_json::from_reader(reader)
                .map_err(|e| LlmError::Provider(format!("bad response body: {e}")))?;
            let choice = &v["choices"][0];
            let content = choice["message"]["content"]
                .as_str()
                .ok_or_else(|| LlmError::Provider("response has no message content".into()))?;
            emit(content);
            return Ok(finish_from(&choice["finish_reason"]).unwrap_or(FinishReason::Stop));
        }

        let mut finish = None;
        for line in reader.lines() {
            let line = line.map_err(|e| {
                let timed_out = e.kind() == std::io::ErrorKind::TimedOut
                    || started.elapsed() >= self.timeout();
                self.classify(e.to_string(), timed_out)
            })?;
            let Some(data) = line.strip_prefix("data:") else {
                continue;
            };
            let data = data.trim();
            if data == "[DONE]" {
                break;
            }
            let chunk: Value = serde_json::from_str(data)
                .map_err(|e| LlmError::Provider(format!("bad stream chunk: {e}")))?;
            if let Some(err) = chunk.get("error") {
                return Err(LlmError::Provider(err.to_string()));
            }
            let choice = &chunk["choices"][0];
            if let Some(text) = choice["delta"]["content"].as_str() {
                emit(text);
            }
            if let Some(reason) = finish_from(&choice["finish_reason"]) {
                finish = Some(reason);
            }
            if started.elapsed() >= self.timeout() {
                return Err(LlmError::Timeout(self.timeout()));
            }
        }
        finish.ok_or_else(|| LlmError::Provider("stream ended without finish_reason".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt(q: &str, ids: &[&str]) -> AssembledPrompt {
        AssembledPrompt {
            system_text: format!("template {q}"),
            history: vec![],
            current_user_text: q.into(),
            context: String::new(),
            source_ids: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn mock_echoes_query_and_sources_in_order() {
        let mut seen = Vec::new();
        let r = generate(&prompt("q1", &["c2", "c7"]), &MockLlm::default(), &mut |f| {
            seen.push(f.to_string())
        });
        assert!(r.text.starts_with(MOCK_PREAMBLE));
        let q = r.text.find("q1").unwrap();
        let c2 = r.text.find("c2").unwrap();
        let c7 = r.text.find("c7").unwrap();
        assert!(q < c2 && c2 < c7);
        assert_eq!(seen.concat(), r.text);
        assert_eq!(seen, r.token_events);
        assert!(r.token_events.iter().all(|f| f.chars().count() <= MOCK_FRAGMENT_CHARS));
        assert_eq!(r.finish_reason, FinishReason::Stop);
    }

    #[test]
    fn mock_failure_emits_marker() {
        let mock = MockLlm { fail_after: Some(2), ..Default::default() };
        let r = generate(&prompt("q", &[]), &mock, &mut |_| {});
        assert_eq!(r.finish_reason, FinishReason::Error);
        assert_eq!(r.token_events.len(), 3);
        assert_eq!(r.token_events.last().unwrap(), ERROR_MARKER);
        assert_eq!(r.token_events.concat(), r.text);
        assert!(r.error.is_some());
    }

    #[test]
    fn fragments_respect_char_boundaries() {
        let parts = split_fragments("ääääääääää", 8);
        assert_eq!(parts, vec!["ä".repeat(8).as_str(), "ää"]);
        assert!(split_fragments("", 8).is_empty());
    }

    #[test]
    fn remote_unreachable_is_provider_error() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let spec = LlmSpec {
            kind: LlmKind::Remote,
            endpoint_url: Some(format!("http://127.0.0.1:{port}/v1/chat/completions")),
            timeout_secs: 2,
            ..Default::default()
        };
        let provider = spec.build().unwrap();
        let r = generate(&prompt("q", &[]), provider.as_ref(), &mut |_| {});
        assert_eq!(r.finish_reason, FinishReason::Error);
        assert!(matches!(r.error, Some(LlmError::Provider(_))));
        assert_eq!(r.text, ERROR_MARKER);
    }

    #[test]
    fn remote_requires_endpoint() {
        let spec = LlmSpec { kind: LlmKind::Remote, ..Default::default() };
        assert!(matches!(spec.build(), Err(LlmError::Config(_))));
    }
}
