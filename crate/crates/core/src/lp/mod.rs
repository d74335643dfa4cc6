//! Fairness-constrained ranking LP over doubly-stochastic matrices.
//!
//! Variables are the `n^2` entries `P[d][j]` (item `d` at position `j`,
//! row-major) followed by one slack `xi[i][j]` per ordered pair of distinct
//! groups. The objective is expected DCG minus `lambda * sum xi`; each
//! ordered pair contributes the soft impact-fairness row
//!
//! ```text
//! (tau - 1) * D_{tau-1}(G_i, G_j) + ImpHat(G_i | P)/Merit(G_i) - ImpHat(G_j | P)/Merit(G_j) <= xi[i][j]
//! ```
//!
//! where `ImpHat(G | P) = mean_{d in G} R(d) * sum_j P[d][j] q(j)` is the
//! expected click mass this step. The running disparity enters in cumulative
//! units, i.e. as the numerator of the amortized average that this step's
//! expected contribution is added to; dividing the row by `tau` would only
//! rescale `lambda` by `1/tau` and make the trade-off drift over time.

pub mod bvn;
pub mod simplex;

pub use bvn::{bvn_decompose, sample_ranking, DoublyStochasticMatrix, WeightedRanking};
pub use simplex::{solve_lp, Constraint, LinearProgram, Solution};

use crate::click::ExposureModel;
use crate::error::{Error, Result};
use crate::fairness::{FairnessLedger, FairnessMode};
use crate::ranking::ItemCatalog;

/// Variable layout of a fair-ranking LP.
#[derive(Clone, Debug, PartialEq)]
pub struct FairLp {
    pub program: LinearProgram,
    pub n_items: usize,
    /// Ordered group pairs, one slack variable each, in variable order.
    pub pairs: Vec<(usize, usize)>,
}

impl FairLp {
    pub fn matrix_var(&self, item: usize, position: usize) -> usize {
        item * self.n_items + position
    }

    pub fn slack_var(&self, pair: usize) -> usize {
        self.n_items * self.n_items + pair
    }

    pub fn n_vars(&self) -> usize {
        self.program.n_vars()
    }
}

/// Solved fair-ranking LP.
#[derive(Clone, Debug, PartialEq)]
pub struct FairLpSolution {
    pub matrix: DoublyStochasticMatrix,
    pub slacks: Vec<f64>,
    pub objective: f64,
}

pub fn build_lp(
    relevance: &[f64],
    ledger: &FairnessLedger,
    merit: &[f64],
    lambda: f64,
    exposure: &ExposureModel,
    catalog: &ItemCatalog,
) -> Result<FairLp> {
    let n = catalog.len();
    if relevance.len() != n || exposure.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: relevance.len().min(exposure.len()),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let m = catalog.group_count();
    if merit.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: merit.len(),
        });
    }
    if let Some(&bad) = merit.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::ZeroMerit(bad));
    }
    let pairs: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..m).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let n_vars = n * n + pairs.len();
    let mut program = LinearProgram::new(n_vars);

    for d in 0..n {
        for j in 0..n {
            program.objective[d * n + j] = relevance[d] / ((j + 2) as f64).log2();
        }
    }
    for p in 0..pairs.len() {
        program.objective[n * n + p] = -lambda;
    }

    for d in 0..n {
        let mut row = vec![0.0; n_vars];
        row[d * n..(d + 1) * n].fill(1.0);
        program.add_equality(row, 1.0);
    }
    for j in 0..n {
        let mut row = vec![0.0; n_vars];
        for d in 0..n {
            row[d * n + j] = 1.0;
        }
        program.add_equality(row, 1.0);
    }

    // Coefficient of P[d][j] in ImpHat(G(d))/Merit(G(d)).
    let sizes = catalog.group_sizes();
    let impact_coef = |d: usize, j: usize| {
        let g = catalog.group_of(d);
        relevance[d] * exposure.at_position(j) / (sizes[g] as f64 * merit[g])
    };
    for (p, &(gi, gj)) in pairs.iter().enumerate() {
        let mut row = vec![0.0; n_vars];
        for &d in catalog.members(gi) {
            for j in 0..n {
                row[d * n + j] += impact_coef(d, j);
            }
        }
        for &d in catalog.members(gj) {
            for j in 0..n {
                row[d * n + j] -= impact_coef(d, j);
            }
        }
        row[n * n + p] = -1.0;
        let running = if ledger.step_count() == 0 {
            0.0
        } else {
            ledger.cumulative_disparity(merit, gi, gj, FairnessMode::Impact)
        };
        program.add_inequality(row, -running);
    }

    Ok(FairLp {
        program,
        n_items: n,
        pairs,
    })
}

pub fn solve_fair_lp(lp: &FairLp) -> Result<FairLpSolution> {
    let solution = solve_lp(&lp.program)?;
    let n = lp.n_items;
    let entries: Vec<f64> = solution.x[..n * n].iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let matrix = DoublyStochasticMatrix::new(n, entries)?;
    Ok(FairLpSolution {
        matrix,
        slacks: solution.x[n * n..].to_vec(),
        objective: solution.objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::click::default_propensities;
    use crate::ranking::Ranking;

    #[test]
    fn variable_count_covers_ordered_pairs() {
        let catalog = ItemCatalog::from_groups(&[0, 1, 2, 0]).unwrap();
        let ledger = FairnessLedger::new(&catalog);
        let lp = build_lp(
            &[0.1, 0.2, 0.3, 0.4],
            &ledger,
            &[0.5, 0.5, 0.5],
            0.1,
            &default_propensities(4).unwrap(),
            &catalog,
        )
        .unwrap();
        assert_eq!(lp.n_vars(), 16 + 3 * 2);
        assert_eq!(lp.pairs.len(), 6);
    }

    #[test]
    fn single_item_is_forced() {
        let catalog = ItemCatalog::from_groups(&[0]).unwrap();
        let ledger = FairnessLedger::new(&catalog);
        let lp = build_lp(
            &[0.3],
            &ledger,
            &[0.3],
            1.0,
            &default_propensities(1).unwrap(),
            &catalog,
        )
        .unwrap();
        let s = solve_fair_lp(&lp).unwrap();
        assert_eq!(s.matrix.as_slice(), &[1.0]);
    }

    #[test]
    fn utility_only_puts_better_item_on_top() {
        let catalog = ItemCatalog::from_groups(&[0, 1]).unwrap();
        let ledger = FairnessLedger::new(&catalog);
        let exposure = ExposureModel::new(vec![1.0, 0.63]).unwrap();
        let lp = build_lp(&[0.9, 0.1], &ledger, &[0.9, 0.1], 0.0, &exposure, &catalog).unwrap();
        let s = solve_fair_lp(&lp).unwrap();
        let identity = DoublyStochasticMatrix::permutation(&Ranking::identity(2));
        assert_eq!(s.matrix, identity);
        // Brute force over both permutations of the utility.
        let swap = 0.9 / 3f64.log2() + 0.1;
        let keep = 0.9 + 0.1 / 3f64.log2();
        assert!((s.objective - keep.max(swap)).abs() < 1e-9);
    }

    #[test]
    fn ties_still_yield_a_vertex() {
        let catalog = ItemCatalog::from_groups(&[0, 0]).unwrap();
        let ledger = FairnessLedger::new(&catalog);
        let lp = build_lp(
            &[0.5, 0.5],
            &ledger,
            &[0.5],
            0.0,
            &default_propensities(2).unwrap(),
            &catalog,
        )
        .unwrap();
        let s = solve_fair_lp(&lp).unwrap();
        assert!(s.matrix.as_slice().iter().all(|&v| (v - v.round()).abs() < 1e-9));
    }
}
