use std::cmp::Ordering;

use super::index::Candidate;
use crate::embedder::clamp_unit;
use crate::scalar::{dot, Scalar};

/// One MMR selection: index into the candidate slice and its marginal score
/// at the moment it was picked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmrPick<T> {
    pub candidate: usize,
    pub mmr_score: T,
}

/// Greedy maximal-marginal-relevance selection.
///
/// Each step picks the unselected candidate maximizing
///
/// ```text
/// relevance(c) - lambda * max_{s in selected} cos(c, s)
/// ```
///
/// with a zero penalty for the first pick. Note the relevance term is not
/// weighted by `1 - lambda`; `lambda = 0` reduces to pure relevance order.
/// Ties go to the smaller chunk id. Output is in selection order and has
/// `min(k, candidates.len())` entries.
pub fn mmr_select<T: Scalar>(candidates: &[Candidate<'_, T>], k: usize, lambda: T) -> Vec<MmrPick<T>> {
    let k = k.min(candidates.len());
    let mut picks = Vec::with_capacity(k);
    let mut taken = vec![false; candidates.len()];
    // Highest similarity of each candidate to anything selected so far.
    let mut max_sim: Vec<Option<T>> = vec![None; candidates.len()];

    while picks.len() < k {
        let mut best: Option<(usize, T)> = None;
        for (i, cand) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let penalty = max_sim[i].unwrap_or_else(T::zero);
            let score = cand.relevance - lambda * penalty;
            let better = match best {
                None => true,
                Some((j, best_score)) => match score.partial_cmp(&best_score) {
                    Some(Ordering::Greater) => true,
                    Some(Ordering::Equal) => cand.chunk_id < candidates[j].chunk_id,
                    _ => false,
                },
            };
            if better {
                best = Some((i, score));
            }
        }
        let Some((chosen, score)) = best else { break };
        taken[chosen] = true;
        picks.push(MmrPick {
            candidate: chosen,
            mmr_score: score,
        });
        let chosen_vec = candidates[chosen].vector;
        for (i, cand) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let sim = clamp_unit(dot(cand.vector, chosen_vec));
            max_sim[i] = Some(match max_sim[i] {
                Some(m) if m >= sim => m,
                _ => sim,
            });
        }
    }
    picks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand<'a>(id: &'a str, rel: f64, v: &'a [f64]) -> Candidate<'a, f64> {
        Candidate { entry: 0, chunk_id: id, relevance: rel, vector: v }
    }

    #[test]
    fn lambda_zero_is_relevance_order() {
        let (a, b, c) = ([1.0, 0.0], [1.0, 0.0], [0.0, 1.0]);
        let cands = [cand("a", 0.9, &a), cand("b", 0.8, &b), cand("c", 0.1, &c)];
        let order: Vec<_> = mmr_select(&cands, 3, 0.0).iter().map(|p| p.candidate).collect();
        assert_eq!(order, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_penalized_at_lambda_one() {
        // A equals the query, B duplicates A, C is orthogonal. After A, B scores
        // 1 - 1 = 0 and C scores 0 - 0 = 0; the tie goes to C's smaller id.
        let q = [1.0, 0.0];
        let o = [0.0, 1.0];
        let cands = [cand("b_a", 1.0, &q), cand("b_b", 1.0, &q), cand("a_c", 0.0, &o)];
        let picks = mmr_select(&cands, 2, 1.0);
        let ids: Vec<_> = picks.iter().map(|p| cands[p.candidate].chunk_id).collect();
        assert_eq!(ids, vec!["b_a", "a_c"]);
        assert_eq!(picks[0].mmr_score, 1.0);
        assert_eq!(picks[1].mmr_score, 0.0);
    }

    #[test]
    fn k_clamps_to_pool() {
        let v = [1.0];
        let cands = [cand("x", 1.0, &v)];
        assert_eq!(mmr_select(&cands, 10, 0.5).len(), 1);
        assert!(mmr_select::<f64>(&[], 10, 0.5).is_empty());
    }

    #[test]
    fn negative_similarity_lowers_penalty() {
        // With a negative max-similarity the penalty turns into a bonus.
        let (a, b, c) = ([1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]);
        let cands = [cand("a", 0.5, &a), cand("b", 0.2, &b), cand("c", 0.3, &c)];
        let picks = mmr_select(&cands, 2, 1.0);
        assert_eq!(picks[1].candidate, 1);
        assert_eq!(picks[1].mmr_score, 0.2 + 1.0);
    }
}
