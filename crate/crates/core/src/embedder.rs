//! Unit-norm embedding vectors and the providers that produce them.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::scalar::{dot, Scalar};

/// Allowed deviation of a stored vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_LOCAL_DIM: usize = 256;
pub const DEFAULT_REMOTE_MODEL: &str = "text-embedding-ada-002";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("text is empty")]
    EmptyText,
    #[error("embedding provider failed: {0}")]
    Provider(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid vector: {0}")]
    InvalidVector(String),
    #[error("embedder configuration: {0}")]
    Config(String),
}

/// A fixed-dimension vector with unit L2 norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> EmbeddingVector<T> {
    /// Normalizes `values` to unit length.
    pub fn new(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::InvalidVector("zero dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector("non-finite component".into()));
        }
        // Norm in f64 so that f32 inputs normalize as accurately as possible.
        let norm = values
            .iter()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return Err(EmbedError::InvalidVector("zero vector".into()));
        }
        let values = values
            .into_iter()
            .map(|v| T::from_f64_lossy(v.to_f64_lossy() / norm))
            .collect();
        Ok(Self { values })
    }

    /// Wraps values that are already unit-norm, keeping them bit-for-bit.
    pub fn from_unit(values: Vec<T>) -> Result<Self, EmbedError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::InvalidVector("empty or non-finite".into()));
        }
        let v = Self { values };
        let deviation = (v.norm() - 1.0).abs();
        if deviation >= UNIT_NORM_TOLERANCE {
            return Err(EmbedError::InvalidVector(format!(
                "norm deviates from 1 by {deviation:e}"
            )));
        }
        Ok(v)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl<'de, T: Scalar> Deserialize<'de> for EmbeddingVector<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<T>::deserialize(d)?;
        Self::from_unit(values).map_err(serde::de::Error::custom)
    }
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Scalar>(
    a: &EmbeddingVector<T>,
    b: &EmbeddingVector<T>,
) -> Result<T, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(clamp_unit(dot(a.values(), b.values())))
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(x: T) -> T {
    x.max(-T::one()).min(T::one())
}

pub trait Embedder<T: Scalar>: Send + Sync {
    /// Output dimension, when known before the first call.
    fn dim(&self) -> Option<usize>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    LocalHash,
    Remote,
}

/// Embedder configuration (`[embedder]` table of the engine config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    /// Required for local; for remote, validated against every response when set.
    pub dim: Option<usize>,
    pub model_name: String,
    pub endpoint_url: Option<String>,
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retries: u32,
    pub retry_base_ms: u64,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::LocalHash,
            dim: Some(DEFAULT_LOCAL_DIM),
            model_name: DEFAULT_REMOTE_MODEL.into(),
            endpoint_url: None,
            api_key_env: None,
            max_in_flight: 4,
            timeout_secs: 30,
            retries: 3,
            retry_base_ms: 250,
        }
    }
}

impl EmbedderSpec {
    pub fn local(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == Some(0) {
            return Err(EmbedError::Config("dim must be > 0".into()));
        }
        match self.kind {
            EmbedderKind::LocalHash if self.dim.is_none() => {
                Err(EmbedError::Config("local_hash requires dim".into()))
            }
            EmbedderKind::Remote if self.endpoint_url.as_deref().unwrap_or("").is_empty() => {
                Err(EmbedError::Config("remote embedder requires endpoint_url".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build<T: Scalar>(&self) -> Result<Box<dyn Embedder<T>>, EmbedError> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::LocalHash => Box::new(LocalHashEmbedder::new(
                self.dim.unwrap_or(DEFAULT_LOCAL_DIM),
            )?),
            EmbedderKind::Remote => Box::new(RemoteEmbedder::new(self.clone())?),
        })
    }
}

/// One-shot embedding through a provider built from `spec`.
pub fn embed_text<T: Scalar>(text: &str, spec: &EmbedderSpec) -> Result<EmbeddingVector<T>, EmbedError> {
    spec.build::<T>()?.embed(text)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Deterministic bag-of-tokens embedder.
///
/// Lowercases the text, splits on every non-alphanumeric character, hashes each
/// token with 64-bit FNV-1a into `hash % dim`, and L2-normalizes the counts.
/// Counts are divided by their gcd first so that repeating a text any number
/// of times yields a bit-identical vector.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dim: usize,
}

impl LocalHashEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        if dim == 0 {
            return Err(EmbedError::Config("dim must be > 0".into()));
        }
        Ok(Self { dim })
    }

    pub fn bucket_counts(&self, text: &str) -> Vec<u64> {
        let mut counts = vec![0u64; self.dim];
        let lower = text.to_lowercase();
        for token in lower.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            counts[(fnv1a64(token.as_bytes()) % self.dim as u64) as usize] += 1;
        }
        counts
    }
}

impl<T: Scalar> Embedder<T> for LocalHashEmbedder {
    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let counts = self.bucket_counts(text);
        let g = counts.iter().copied().fold(0, gcd);
        if g == 0 {
            return Err(EmbedError::EmptyText);
        }
        EmbeddingVector::new(counts.iter().map(|c| T::from_f64_lossy((c / g) as f64)).collect())
    }
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
struct InFlight {
    available: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            available: Mutex::new(limit.max(1)),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.released.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

/// Embedding client for an OpenAI-style `/embeddings` endpoint.
///
/// Request body `{"model": ..., "input": [texts]}`; response
/// `{"data": [{"embedding": [...]}, ...]}`.
pub struct RemoteEmbedder {
    spec: EmbedderSpec,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl RemoteEmbedder {
    pub fn new(spec: EmbedderSpec) -> Result<Self, EmbedError> {
        spec.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs.max(1))))
            .build()
            .into();
        let in_flight = InFlight::new(spec.max_in_flight);
        Ok(Self {
            spec,
            agent,
            in_flight,
        })
    }

    fn api_key(&self) -> Option<String> {
        self.spec
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok())
    }

    fn request_once(&self, texts: &[&str]) -> Result<Value, String> {
        let _permit = self.in_flight.acquire();
        let url = self.spec.endpoint_url.as_deref().unwrap_or_default();
        let mut req = self.agent.post(url);
        if let Some(key) = self.api_key() {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = json!({ "model": self.spec.model_name, "input": texts });
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| e.to_string())
    }

    fn request(&self, texts: &[&str]) -> Result<Value, EmbedError> {
        let mut last_err = String::new();
        for attempt in 0..=self.spec.retries {
            if attempt > 0 {
                let wait = self.spec.retry_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.request_once(texts) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                    last_err = e;
                }
            }
        }
        Err(EmbedError::Provider(format!(
            "{} attempts failed; last error: {last_err}",
            self.spec.retries + 1
        )))
    }

    fn parse_response<T: Scalar>(
        &self,
        body: &Value,
        expected_len: usize,
    ) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        let data = body
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| EmbedError::Provider("response has no `data` array".into()))?;
        if data.len() != expected_len {
            return Err(EmbedError::Provider(format!(
                "expected {expected_len} embeddings, got {}",
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let raw = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| EmbedError::Provider("item has no `embedding`".into()))?;
                let values = raw
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(T::from_f64_lossy)
                            .ok_or_else(|| EmbedError::Provider("non-numeric component".into()))
                    })
                    .collect::<Result<Vec<T>, _>>()?;
                if let Some(expected) = self.spec.dim {
                    if values.len() != expected {
                        return Err(EmbedError::DimMismatch {
                            expected,
                            actual: values.len(),
                        });
                    }
                }
                EmbeddingVector::new(values)
            })
            .collect()
    }
}

const REMOTE_BATCH: usize = 64;

impl<T: Scalar> Embedder<T> for RemoteEmbedder {
    fn dim(&self) -> Option<usize> {
        self.spec.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, EmbedError> {
        let mut out = Embedder::<T>::embed_batch(self, &[text])?;
        Ok(out.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<T>>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(REMOTE_BATCH) {
            let body = self.request(batch)?;
            out.extend(self.parse_response::<T>(&body, batch.len())?);
        }
        Ok(out)
    }
}
