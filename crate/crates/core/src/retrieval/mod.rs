//! Exact vector search, MMR selection and metadata-aware ranking.
//!
//! A query runs through four stages:
//!
//! 1. embed the query text,
//! 2. take the `fetch_k` chunks with highest cosine similarity ([`VectorIndex::candidate_search`]),
//! 3. greedily pick [`MMR_K`] of them with [`mmr_select`],
//! 4. order the picks by the user's [`RankingMode`] ([`rank`]) and keep the first `n_sources`.

mod index;
mod mmr;
mod rank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::Chunk;
use crate::corpus::NotebookMeta;
use crate::embedder::{EmbedError, Embedder};
use crate::scalar::Scalar;

pub use index::{Candidate, IndexError, IndexManifest, VectorIndex, CHUNKS_FILE, MANIFEST_FILE};
pub use mmr::{mmr_select, MmrPick};
pub use rank::rank;

/// Number of chunks chosen by MMR before ranking.
pub const MMR_K: usize = 10;
pub const MAX_SOURCES: usize = MMR_K;
pub const MIN_FETCH_K: usize = MMR_K;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RankingMode {
    #[default]
    Relevance,
    Votes,
    Views,
}

impl std::str::FromStr for RankingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relevance" => Ok(RankingMode::Relevance),
            "votes" => Ok(RankingMode::Votes),
            "views" => Ok(RankingMode::Views),
            other => Err(format!("unknown ranking mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub ranking_mode: RankingMode,
    pub n_sources: usize,
    pub mmr_lambda: f64,
    pub fetch_k: usize,
    /// Keep at most one candidate per notebook before MMR.
    pub dedup_notebooks: bool,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            ranking_mode: RankingMode::Relevance,
            n_sources: 3,
            mmr_lambda: 0.5,
            fetch_k: 50,
            dedup_notebooks: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SettingsError {
    #[error("n_sources must be between 1 and {MAX_SOURCES}, got {0}")]
    SourceCount(usize),
    #[error("mmr_lambda must be within [0, 1], got {0}")]
    Lambda(f64),
    #[error("fetch_k must be at least {MIN_FETCH_K}, got {0}")]
    FetchK(usize),
}

impl SearchSettings {
    pub fn validate(&self) -> Result<(), SettingsError> {
        if !(1..=MAX_SOURCES).contains(&self.n_sources) {
            return Err(SettingsError::SourceCount(self.n_sources));
        }
        if !(0.0..=1.0).contains(&self.mmr_lambda) {
            return Err(SettingsError::Lambda(self.mmr_lambda));
        }
        if self.fetch_k < MIN_FETCH_K {
            return Err(SettingsError::FetchK(self.fetch_k));
        }
        Ok(())
    }
}

/// A chunk joined with its notebook's metadata and retrieval scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSource<T> {
    pub chunk: Chunk,
    pub meta: NotebookMeta,
    pub relevance_score: T,
    pub mmr_score: T,
    pub rank_position: usize,
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// Runs the full retrieval pipeline for one query.
pub fn retrieve<T: Scalar>(
    index: &VectorIndex<T>,
    embedder: &dyn Embedder<T>,
    query_text: &str,
    settings: &SearchSettings,
) -> Result<Vec<RetrievedSource<T>>, RetrievalError> {
    settings.validate()?;
    let query = embedder.embed(query_text)?;
    if index.is_empty() {
        return Ok(Vec::new());
    }
    let mut candidates = index.candidate_search(&query, settings.fetch_k)?;
    if settings.dedup_notebooks {
        let mut seen = std::collections::HashSet::new();
        candidates.retain(|c| seen.insert(index.entry(c.entry).0.notebook_id.as_str()));
    }
    let lambda = T::from_f64_lossy(settings.mmr_lambda);
    let picks = mmr_select(&candidates, MMR_K, lambda);
    let selected = picks
        .into_iter()
        .enumerate()
        .map(|(i, pick)| {
            let cand = &candidates[pick.candidate];
            let (chunk, meta) = index.entry(cand.entry);
            RetrievedSource {
                chunk: chunk.clone(),
                meta: meta.clone(),
                relevance_score: cand.relevance,
                mmr_score: pick.mmr_score,
                rank_position: i + 1,
            }
        })
        .collect();
    let mut ranked = rank(selected, settings.ranking_mode);
    ranked.truncate(settings.n_sources);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_bounds() {
        let ok = |n| SearchSettings { n_sources: n, ..Default::default() }.validate();
        assert!(ok(1).is_ok());
        assert!(ok(10).is_ok());
        assert_eq!(ok(0), Err(SettingsError::SourceCount(0)));
        assert_eq!(ok(11), Err(SettingsError::SourceCount(11)));
        let lam = SearchSettings { mmr_lambda: 1.5, ..Default::default() };
        assert!(matches!(lam.validate(), Err(SettingsError::Lambda(_))));
        let nan = SearchSettings { mmr_lambda: f64::NAN, ..Default::default() };
        assert!(nan.validate().is_err());
        let fk = SearchSettings { fetch_k: 9, ..Default::default() };
        assert_eq!(fk.validate(), Err(SettingsError::FetchK(9)));
    }

    #[test]
    fn settings_defaults_from_partial_json() {
        let s: SearchSettings = serde_json::from_str(r#"{"ranking_mode":"votes"}"#).unwrap();
        assert_eq!(s.ranking_mode, RankingMode::Votes);
        assert_eq!(s.n_sources, 3);
        assert_eq!(s.fetch_k, 50);
        assert_eq!(s.mmr_lambda, 0.5);
    }

    #[test]
    fn ranking_mode_parses() {
        assert_eq!("Views".parse::<RankingMode>(), Ok(RankingMode::Views));
        assert!("stars".parse::<RankingMode>().is_err());
    }
}
