//! Doubly-stochastic matrices and their Birkhoff-von-Neumann decomposition
//! into a convex combination of permutations.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ranking::Ranking;

const STOCHASTIC_TOL: f64 = 1e-6;
const ZERO_TOL: f64 = 1e-9;

/// `n x n` matrix with `get(d, j)` = probability of item `d` at position `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublyStochasticMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DoublyStochasticMatrix {
    /// Validates row/column sums and entry range; entries within `1e-9` of
    /// zero are snapped to zero.
    pub fn new(n: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        for v in data.iter_mut() {
            if *v < -ZERO_TOL || *v > 1.0 + STOCHASTIC_TOL || v.is_nan() {
                return Err(Error::NotDoublyStochastic(format!("entry {v} outside [0, 1]")));
            }
            if *v < ZERO_TOL {
                *v = 0.0;
            }
        }
        for i in 0..n {
            let row: f64 = data[i * n..(i + 1) * n].iter().sum();
            let col: f64 = (0..n).map(|r| data[r * n + i]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotDoublyStochastic(format!("row {i} sums to {row}")));
            }
            if (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::NotDoublyStochastic(format!("column {i} sums to {col}")));
            }
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    pub fn permutation(ranking: &Ranking) -> Self {
        let n = ranking.len();
        let mut data = vec![0.0; n * n];
        for (j, &d) in ranking.order().iter().enumerate() {
            data[d * n + j] = 1.0;
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, item: usize, position: usize) -> f64 {
        self.data[item * self.n + position]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Expected zero-based display position of `item`.
    pub fn expected_position(&self, item: usize) -> f64 {
        (0..self.n).map(|j| j as f64 * self.get(item, j)).sum()
    }
}

/// One term of a decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedRanking {
    pub weight: f64,
    pub ranking: Ranking,
}

/// Finds a perfect matching rows -> columns on the positive support using
/// augmenting paths.
fn perfect_matching(n: usize, residual: &[f64]) -> Option<Vec<usize>> {
    // match_col[j] = row matched to column j
    let mut match_col = vec![usize::MAX; n];
    fn augment(row: usize, n: usize, residual: &[f64], seen: &mut [bool], match_col: &mut [usize]) -> bool {
        for col in 0..n {
            if residual[row * n + col] > 0.0 && !seen[col] {
                seen[col] = true;
                if match_col[col] == usize::MAX || augment(match_col[col], n, residual, seen, match_col) {
                    match_col[col] = row;
                    return true;
                }
            }
        }
        false
    }
    let mut seen = vec![false; n];
    for row in 0..n {
        seen.iter_mut().for_each(|s| *s = false);
        if !augment(row, n, residual, &mut seen, &mut match_col) {
            return None;
        }
    }
    let mut row_to_col = vec![0; n];
    for (col, &row) in match_col.iter().enumerate() {
        row_to_col[row] = col;
    }
    Some(row_to_col)
}

/// Greedy decomposition: repeatedly extract a perfect matching on the
/// positive support and subtract its smallest entry.
pub fn bvn_decompose(matrix: &DoublyStochasticMatrix) -> Result<Vec<WeightedRanking>> {
    let n = matrix.n;
    let mut residual = matrix.data.clone();
    let mut terms = Vec::new();
    let mut remaining: f64 = 1.0;
    let cap = n * n + 1;
    while remaining > ZERO_TOL && residual.iter().any(|&v| v > 0.0) {
        if terms.len() >= cap {
            return Err(Error::NotDoublyStochastic("decomposition did not terminate".into()));
        }
        let Some(row_to_col) = perfect_matching(n, &residual) else {
            if remaining < STOCHASTIC_TOL {
                break;
            }
            return Err(Error::NotDoublyStochastic(format!(
                "no perfect matching with {remaining} mass left"
            )));
        };
        let weight = row_to_col
            .iter()
            .enumerate()
            .map(|(d, &j)| residual[d * n + j])
            .fold(f64::INFINITY, f64::min);
        let mut order = vec![0; n];
        for (d, &j) in row_to_col.iter().enumerate() {
            order[j] = d;
            let cell = &mut residual[d * n + j];
            *cell -= weight;
        }
        for v in residual.iter_mut() {
            if *v < ZERO_TOL {
                *v = 0.0;
            }
        }
        remaining -= weight;
        terms.push(WeightedRanking {
            weight,
            ranking: Ranking::new(order)?,
        });
    }
    Ok(terms)
}

/// Draws one ranking with probability proportional to its weight.
pub fn sample_ranking<R: Rng + ?Sized>(terms: &[WeightedRanking], rng: &mut R) -> Result<Ranking> {
    let total: f64 = terms.iter().map(|t| t.weight).sum();
    if terms.is_empty() || !(total > 0.0) {
        return Err(Error::Contract("empty decomposition".into()));
    }
    let mut u = rng.random::<f64>() * total;
    for term in terms {
        if u < term.weight {
            return Ok(term.ranking.clone());
        }
        u -= term.weight;
    }
    Ok(terms[terms.len() - 1].ranking.clone())
}
