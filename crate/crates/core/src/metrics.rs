//! Ranking quality: DCG and NDCG over binary relevance.

use crate::ranking::Ranking;

fn discount(rank: usize) -> f64 {
    1.0 / ((1 + rank) as f64).log2()
}

/// DCG of `ranking` against per-item relevance.
pub fn dcg(ranking: &Ranking, relevance: &[bool]) -> f64 {
    debug_assert_eq!(ranking.len(), relevance.len());
    ranking
        .order()
        .iter()
        .enumerate()
        .filter(|(_, &item)| relevance[item])
        .map(|(position, _)| discount(position + 1))
        .sum()
}

/// DCG of the ideal ranking: all relevant items on top.
pub fn ideal_dcg(relevance: &[bool]) -> f64 {
    let relevant = relevance.iter().filter(|&&r| r).count();
    (1..=relevant).map(discount).sum()
}

/// DCG normalized by the ideal DCG; 1.0 when nothing is relevant.
pub fn ndcg(ranking: &Ranking, relevance: &[bool]) -> f64 {
    let ideal = ideal_dcg(relevance);
    if ideal == 0.0 {
        return 1.0;
    }
    dcg(ranking, relevance) / ideal
}
