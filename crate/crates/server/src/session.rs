//! Chat sessions: per-session memory, serialized access, optional JSON persistence.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use nbrag_core::generation::{Role, Turn};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedMutexGuard, RwLock};

pub const DEFAULT_MAX_TURNS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub competition_id: String,
    pub turns: Vec<Turn>,
    pub created_at: DateTime<Utc>,
}

impl Session {
    pub fn new(competition_id: impl Into<String>) -> Self {
        Self {
            session_id: uuid::Uuid::new_v4().to_string(),
            competition_id: competition_id.into(),
            turns: Vec::new(),
            created_at: Utc::now(),
        }
    }

    /// Appends a completed exchange and trims to the last `max_turns` turns,
    /// keeping the transcript starting on a user turn.
    pub fn push_exchange(&mut self, user: &str, assistant: &str, max_turns: usize) {
        self.turns.push(Turn::user(user));
        self.turns.push(Turn::assistant(assistant));
        if self.turns.len() > max_turns {
            let mut cut = self.turns.len() - max_turns;
            while cut < self.turns.len() && self.turns[cut].role != Role::User {
                cut += 1;
            }
            self.turns.drain(..cut);
        }
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// All live sessions. Each session sits behind its own async mutex so that
/// requests on one session run one at a time while sessions proceed in parallel.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    max_turns: usize,
    path: Option<PathBuf>,
    // Serializes snapshot writes.
    write_lock: Mutex<()>,
}

impl SessionStore {
    pub fn in_memory(max_turns: usize) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            max_turns: max_turns.max(2),
            path: None,
            write_lock: Mutex::new(()),
        }
    }

    /// Opens a store backed by `path`, loading existing sessions if the file exists.
    pub fn with_file(path: &Path, max_turns: usize) -> std::io::Result<Self> {
        let mut store = Self::in_memory(max_turns);
        store.path = Some(path.to_path_buf());
        if path.exists() {
            let bytes = std::fs::read(path)?;
            let list: Vec<Session> = serde_json::from_slice(&bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            let map = store.sessions.get_mut();
            for s in list {
                map.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
            }
        }
        Ok(store)
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    pub async fn create(&self, competition_id: &str) -> Session {
        let session = Session::new(competition_id);
        self.sessions
            .write()
            .await
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session.clone())));
        self.persist().await;
        session
    }

    pub async fn get(&self, session_id: &str) -> Option<SessionHandle> {
        self.sessions.read().await.get(session_id).cloned()
    }

    /// Waits for exclusive use of a session.
    pub async fn lock(&self, session_id: &str) -> Option<OwnedMutexGuard<Session>> {
        let handle = self.get(session_id).await?;
        Some(handle.lock_owned().await)
    }

    pub async fn len(&self) -> usize {
        self.sessions.read().await.len()
    }

    pub async fn is_empty(&self) -> bool {
        self.len().await == 0
    }

    /// Writes every session to the backing file, if any. Sessions locked by an
    /// in-flight turn are skipped rather than waited for.
    pub async fn persist(&self) {
        self.snapshot(None).await
    }

    /// Like [`persist`](Self::persist) but includes a session the caller holds locked.
    pub async fn persist_with(&self, held: &Session) {
        self.snapshot(Some(held)).await
    }

    async fn snapshot(&self, held: Option<&Session>) {
        let Some(path) = &self.path else { return };
        let _guard = self.write_lock.lock().await;
        let handles: Vec<SessionHandle> = self.sessions.read().await.values().cloned().collect();
        let mut list: Vec<Session> = handles
            .iter()
            .filter_map(|h| h.try_lock().ok().map(|s| s.clone()))
            .chain(held.cloned())
            .collect();
        list.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.session_id.cmp(&b.session_id)));
        list.dedup_by(|a, b| a.session_id == b.session_id);
        if let Err(e) = write_atomic(path, &list) {
            log::warn!("could not persist sessions to {}: {e}", path.display());
        }
    }
}

fn write_atomic(path: &Path, sessions: &[Session]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let json = serde_json::to_vec_pretty(sessions).map_err(std::io::Error::other)?;
    std::fs::write(&tmp, json)?;
    std::fs::rename(tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_keeps_alternation() {
        let mut s = Session::new("c");
        for i in 0..30 {
            s.push_exchange(&format!("q{i}"), &format!("a{i}"), 7);
        }
        assert!(s.turns.len() <= 7);
        assert_eq!(s.turns[0].role, Role::User);
        for pair in s.turns.windows(2) {
            assert_ne!(pair[0].role, pair[1].role);
        }
        assert_eq!(s.turns.last().unwrap().text, "a29");
    }

    #[tokio::test]
    async fn file_backed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.json");
        let id = {
            let store = SessionStore::with_file(&path, 50).unwrap();
            let s = store.create("titanic").await;
            let mut guard = store.lock(&s.session_id).await.unwrap();
            guard.push_exchange("hello", "hi", 50);
            store.persist_with(&guard).await;
            s.session_id
        };
        let store = SessionStore::with_file(&path, 50).unwrap();
        let s = store.get(&id).await.unwrap();
        assert_eq!(s.lock().await.turns, vec![Turn::user("hello"), Turn::assistant("hi")]);
    }

    #[tokio::test]
    async fn ids_are_distinct() {
        let store = SessionStore::in_memory(DEFAULT_MAX_TURNS);
        let a = store.create("c").await;
        let b = store.create("c").await;
        assert_ne!(a.session_id, b.session_id);
        assert_eq!(store.len().await, 2);
    }
}
