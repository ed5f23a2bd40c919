//! Retrieval-augmented chat over community notebook posts.
//!
//! The crate covers everything below the network layer:
//!
//! - [`corpus`]: nbformat-4 parsing, metadata loading and the notebook/metadata join
//! - [`chunker`]: markdown-run + code-run chunks and their rendered text
//! - [`embedder`]: unit-norm vectors, the local hashing embedder and a remote client
//! - [`retrieval`]: exact cosine index, MMR selection, vote/view/relevance ranking
//! - [`generation`]: prompt assembly and streaming model providers (including a mock)
//! - [`config`] and [`pipeline`]: config file and directory-level ingest/index helpers
//!
//! Vector math is generic over [`Scalar`] (`f32` or `f64`). The aliases below fix
//! the scalar used by the service and CLI.

pub mod chunker;
pub mod config;
pub mod corpus;
pub mod embedder;
pub mod generation;
pub mod pipeline;
pub mod retrieval;
pub mod scalar;

pub use scalar::Scalar;

/// Scalar type of persisted indexes and served queries.
pub type Real = f32;
pub type Embedding = embedder::EmbeddingVector<Real>;
pub type Index = retrieval::VectorIndex<Real>;
pub type Source = retrieval::RetrievedSource<Real>;
pub type DynEmbedder = dyn embedder::Embedder<Real>;
