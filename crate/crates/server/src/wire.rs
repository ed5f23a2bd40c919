//! JSON shapes exchanged with HTTP clients.

use nbrag_core::corpus::NotebookMeta;
use nbrag_core::generation::FinishReason;
use nbrag_core::retrieval::SearchSettings;
use nbrag_core::{Real, Source};
use serde::{Deserialize, Serialize};

use crate::engine::ConditionMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub competition_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub competition_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub session_id: String,
    pub message: String,
    #[serde(default)]
    pub settings: SearchSettings,
    #[serde(default)]
    pub mode: ConditionMode,
}

/// One entry of the `sources` event: the chunk, its scores, and every
/// metadata field of the notebook it came from (flattened).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub rank_position: usize,
    pub chunk_id: String,
    pub chunk_ordinal: usize,
    pub relevance_score: Real,
    pub mmr_score: Real,
    pub rendered_text: String,
    #[serde(flatten)]
    pub meta: NotebookMeta,
}

impl From<&Source> for SourceRecord {
    fn from(s: &Source) -> Self {
        Self {
            rank_position: s.rank_position,
            chunk_id: s.chunk.chunk_id.clone(),
            chunk_ordinal: s.chunk.chunk_ordinal,
            relevance_score: s.relevance_score,
            mmr_score: s.mmr_score,
            rendered_text: s.chunk.rendered_text.clone(),
            meta: s.meta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcesEvent {
    pub sources: Vec<SourceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoneEvent {
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub message: String,
}

/// Body of every non-2xx JSON response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// A chat stream event, named as on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum ChatEvent {
    Token(TokenEvent),
    Sources(SourcesEvent),
    Done(DoneEvent),
    Error(ErrorEvent),
}

impl ChatEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ChatEvent::Token(_) => "token",
            ChatEvent::Sources(_) => "sources",
            ChatEvent::Done(_) => "done",
            ChatEvent::Error(_) => "error",
        }
    }

    pub fn data(&self) -> String {
        let json = match self {
            ChatEvent::Token(e) => serde_json::to_string(e),
            ChatEvent::Sources(e) => serde_json::to_string(e),
            ChatEvent::Done(e) => serde_json::to_string(e),
            ChatEvent::Error(e) => serde_json::to_string(e),
        };
        json.expect("event payloads serialize")
    }

    /// Parses one `event:`/`data:` pair back into an event.
    pub fn parse(name: &str, data: &str) -> Result<Self, String> {
        let err = |e: serde_json::Error| format!("{name} event: {e}");
        match name {
            "token" => serde_json::from_str(data).map(ChatEvent::Token).map_err(err),
            "sources" => serde_json::from_str(data).map(ChatEvent::Sources).map_err(err),
            "done" => serde_json::from_str(data).map(ChatEvent::Done).map_err(err),
            "error" => serde_json::from_str(data).map(ChatEvent::Error).map_err(err),
            other => Err(format!("unknown event `{other}`")),
        }
    }
}

/// Splits a complete `text/event-stream` body into `(event, data)` pairs.
/// Multi-line `data:` fields are joined with `\n`; comments and unknown
/// fields are ignored; events without a name are called `message`.
pub fn split_event_stream(body: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut name: Option<String> = None;
    let mut data: Vec<&str> = Vec::new();
    for line in body.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l)) {
        if line.is_empty() {
            if !data.is_empty() {
                out.push((name.take().unwrap_or_else(|| "message".into()), data.join("\n")));
            }
            name = None;
            data.clear();
        } else if let Some(v) = line.strip_prefix("event:") {
            name = Some(v.trim_start().to_string());
        } else if let Some(v) = line.strip_prefix("data:") {
            data.push(v.strip_prefix(' ').unwrap_or(v));
        }
    }
    out
}

pub fn parse_event_stream(body: &str) -> Result<Vec<ChatEvent>, String> {
    split_event_stream(body)
        .iter()
        .map(|(name, data)| ChatEvent::parse(name, data))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_stream_round_trip() {
        let events = vec![
            ChatEvent::Token(TokenEvent { text: "a\nb".into() }),
            ChatEvent::Done(DoneEvent { finish_reason: FinishReason::Stop }),
        ];
        let body: String = events
            .iter()
            .map(|e| format!("event: {}\ndata: {}\n\n", e.name(), e.data()))
            .collect();
        assert_eq!(parse_event_stream(&body).unwrap(), events);
    }

    #[test]
    fn chat_request_defaults() {
        let req: ChatRequest = serde_json::from_str(r#"{"session_id":"s","message":"hi"}"#).unwrap();
        assert_eq!(req.settings, SearchSettings::default());
        assert_eq!(req.mode, ConditionMode::Community);
    }
}
