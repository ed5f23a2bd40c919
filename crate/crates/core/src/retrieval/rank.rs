use std::cmp::Ordering;

use super::{RankingMode, RetrievedSource};
use crate::scalar::Scalar;

fn desc<T: PartialOrd>(a: &T, b: &T) -> Ordering {
    b.partial_cmp(a).unwrap_or(Ordering::Equal)
}

/// Orders MMR-selected sources by the chosen key and renumbers `rank_position` from 1.
///
/// Keys: relevance mode uses `mmr_score`, votes and views use the notebook's
/// counts, all descending. Ties fall back to `relevance_score` descending and
/// then to chunk id ascending.
pub fn rank<T: Scalar>(mut sources: Vec<RetrievedSource<T>>, mode: RankingMode) -> Vec<RetrievedSource<T>> {
    sources.sort_by(|a, b| {
        let primary = match mode {
            RankingMode::Relevance => desc(&a.mmr_score, &b.mmr_score),
            RankingMode::Votes => b.meta.vote_count.cmp(&a.meta.vote_count),
            RankingMode::Views => b.meta.view_count.cmp(&a.meta.view_count),
        };
        primary
            .then_with(|| desc(&a.relevance_score, &b.relevance_score))
            .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
    });
    for (i, s) in sources.iter_mut().enumerate() {
        s.rank_position = i + 1;
    }
    sources
}
