//! Chat service over a notebook index: sessions, condition modes, and a
//! server-sent-event chat endpoint.

pub mod engine;
pub mod http;
pub mod session;
pub mod wire;

pub use engine::{ConditionMode, Engine, EngineError};
pub use http::{router, AppState};
pub use session::{Session, SessionStore};
