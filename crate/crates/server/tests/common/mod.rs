//! Shared setup for the service tests: a fixture engine with its index in a
//! temp dir, a background server, and a tiny blocking HTTP client.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::Duration;

use nbrag_core::config::EngineConfig;
use nbrag_core::generation::LlmSpec;
use nbrag_core::pipeline::{read_metadata, IngestReport};
use nbrag_core::Real;
use nbrag_server::engine::{index_competition, Engine};
use nbrag_server::wire::{parse_event_stream, split_event_stream, ChatEvent};
use nbrag_server::{router, AppState, SessionStore};
use serde_json::Value;
use tempfile::TempDir;

pub const COMPETITION: &str = "titanic";

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/titanic")
}

/// The fixture config with its index redirected into `tmp`.
pub fn fixture_config(tmp: &Path) -> EngineConfig {
    let mut cfg = EngineConfig::load(&fixture_dir().join("engine.toml")).unwrap();
    for c in &mut cfg.competitions {
        c.index_dir = tmp.join(format!("index-{}", c.id));
    }
    cfg
}

pub struct Fixture {
    pub tmp: TempDir,
    pub cfg: EngineConfig,
    pub report: IngestReport,
}

/// Builds the fixture index on disk.
pub fn build_fixture(llm: LlmSpec) -> Fixture {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path());
    cfg.llm = llm;
    let metadata = read_metadata(&cfg.metadata).unwrap();
    let embedder = cfg.embedder.build::<Real>().unwrap();
    let (_, _, report) =
        index_competition(&cfg, &cfg.competitions[0], &metadata, embedder.as_ref()).unwrap();
    Fixture { tmp, cfg, report }
}

impl Fixture {
    pub fn engine(&self) -> Engine {
        Engine::from_config(&self.cfg).unwrap()
    }

    pub fn state(&self) -> AppState {
        AppState::new(self.engine(), SessionStore::in_memory(self.cfg.server.max_session_turns))
    }
}

pub fn mock_llm() -> LlmSpec {
    LlmSpec::default()
}

/// A server running on an ephemeral port for the lifetime of the value.
pub struct TestServer {
    pub base: String,
    _rt: tokio::runtime::Runtime,
}

impl TestServer {
    pub fn start(state: AppState) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let addr = listener.local_addr().unwrap();
        let app = router(state, None);
        rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
        Self {
            base: format!("http://{addr}"),
            _rt: rt,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

pub struct Reply {
    pub status: u16,
    pub content_type: String,
    pub body: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.body))
    }

    pub fn events(&self) -> Vec<ChatEvent> {
        parse_event_stream(&self.body).unwrap()
    }

    pub fn raw_events(&self) -> Vec<(String, String)> {
        split_event_stream(&self.body)
    }
}

fn finish(mut resp: ureq::http::Response<ureq::Body>) -> Reply {
    let status = resp.status().as_u16();
    let content_type = resp
        .headers()
        .get("content-type")
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    let body = resp.body_mut().read_to_string().unwrap();
    Reply {
        status,
        content_type,
        body,
    }
}

pub fn get(url: &str) -> Reply {
    finish(agent().get(url).call().unwrap())
}

pub fn post_json(url: &str, body: &Value) -> Reply {
    finish(agent().post(url).send_json(body).unwrap())
}

pub fn post_raw(url: &str, content_type: &str, body: &str) -> Reply {
    finish(
        agent()
            .post(url)
            .header("content-type", content_type)
            .send(body)
            .unwrap(),
    )
}

pub fn new_session(server: &TestServer) -> String {
    let r = post_json(&server.url("/api/session"), &serde_json::json!({ "competition_id": COMPETITION }));
    assert_eq!(r.status, 201, "{}", r.body);
    r.json()["session_id"].as_str().unwrap().to_string()
}

pub fn chat(server: &TestServer, session_id: &str, message: &str, mode: &str, settings: Value) -> Reply {
    post_json(
        &server.url("/api/chat"),
        &serde_json::json!({
            "session_id": session_id,
            "message": message,
            "mode": mode,
            "settings": settings,
        }),
    )
}

/// Concatenated `token` texts.
pub fn answer_text(events: &[ChatEvent]) -> String {
    events
        .iter()
        .filter_map(|e| match e {
            ChatEvent::Token(t) => Some(t.text.as_str()),
            _ => None,
        })
        .collect()
}

pub fn event_names(events: &[ChatEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.name()).collect()
}

/// Metadata rows of the fixture CSV, keyed by notebook id, as raw strings.
pub fn fixture_csv_rows() -> std::collections::HashMap<String, csv::StringRecord> {
    let mut rdr = csv::Reader::from_path(fixture_dir().join("metadata.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let id_col = headers.iter().position(|h| h == "KernelId").unwrap();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            (r[id_col].to_string(), r)
        })
        .collect()
}

pub fn csv_headers() -> csv::StringRecord {
    csv::Reader::from_path(fixture_dir().join("metadata.csv"))
        .unwrap()
        .headers()
        .unwrap()
        .clone()
}

/// Checks every metadata field of a wire source record against the raw CSV
/// cell it was loaded from: strings byte-for-byte, numbers by their decimal text.
pub fn check_meta_against_csv(cfg: &EngineConfig, record: &Value) -> Result<(), String> {
    use nbrag_core::corpus::MetaField;
    let rows = fixture_csv_rows();
    let headers = csv_headers();
    let id = record["notebook_id"].as_str().ok_or("record without notebook_id")?;
    let row = rows.get(id).ok_or_else(|| format!("{id} not in csv"))?;
    let fields = MetaField::REQUIRED.into_iter().chain([MetaField::AuthorAvatarUrl]);
    for field in fields {
        let column = cfg.metadata.columns.column(field).ok_or("unmapped field")?;
        let col = headers.iter().position(|h| h == column).ok_or("column missing")?;
        let expected = &row[col];
        let actual = match &record[field.name()] {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            other => return Err(format!("{id}.{}: unexpected {other}", field.name())),
        };
        if actual != expected {
            return Err(format!("{id}.{}: {actual:?} != csv {expected:?}", field.name()));
        }
    }
    Ok(())
}
