//! Dense two-phase tableau simplex.
//!
//! Pricing is Dantzig's largest reduced cost; after a run of degenerate
//! pivots the solver switches to Bland's smallest-index rule, which cannot
//! cycle, and switches back once the objective moves again.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const DEGENERATE_STREAK: usize = 32;

/// A linear constraint row `coefficients . x (= | <=) rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub coefficients: Vec<f64>,
    pub rhs: f64,
}

/// `maximize objective . x` subject to equality rows, `<=` rows,
/// `0 <= x <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    /// `None` leaves the variable unbounded above.
    pub upper_bounds: Vec<Option<f64>>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        Self {
            objective: vec![0.0; n_vars],
            equalities: Vec::new(),
            inequalities: Vec::new(),
            upper_bounds: vec![None; n_vars],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_equality(&mut self, coefficients: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coefficients.len(), self.n_vars());
        self.equalities.push(Constraint { coefficients, rhs });
    }

    pub fn add_inequality(&mut self, coefficients: Vec<f64>, rhs: f64) {
        debug_assert_eq!(coefficients.len(), self.n_vars());
        self.inequalities.push(Constraint { coefficients, rhs });
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let rows = self.equalities.iter().chain(&self.inequalities);
        for (i, row) in rows.enumerate() {
            if row.coefficients.len() != n {
                return Err(Error::SolverFailure(format!(
                    "row {i} has {} coefficients, expected {n}",
                    row.coefficients.len()
                )));
            }
        }
        if self.upper_bounds.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: self.upper_bounds.len(),
            });
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        let dot = |row: &Constraint| row.coefficients.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
        let eq = self.equalities.iter().map(|r| (dot(r) - r.rhs).abs());
        let ub = self.inequalities.iter().map(|r| (dot(r) - r.rhs).max(0.0));
        let lower = x.iter().map(|v| (-v).max(0.0));
        let upper = x
            .iter()
            .zip(&self.upper_bounds)
            .map(|(v, u)| u.map_or(0.0, |u| (v - u).max(0.0)));
        eq.chain(ub).chain(lower).chain(upper).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Column {
    Original,
    Slack,
    Artificial,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows x (cols + 1)`; last column is the right-hand side.
    data: Vec<f64>,
    basis: Vec<usize>,
    kinds: Vec<Column>,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize, reduced: &mut [f64]) {
        let w = self.width();
        let inv = 1.0 / self.data[pr * w + pc];
        let (before, rest) = self.data.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for v in prow.iter_mut() {
            *v *= inv;
        }
        prow[pc] = 1.0;
        let eliminate = |row: &mut [f64]| {
            let f = row[pc];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        eliminate(reduced);
        self.basis[pr] = pc;
    }

    /// Reduced-cost row for maximizing `costs . x`: entry `c` is how much the
    /// objective rises per unit of column `c` entering.
    fn reduced_costs(&self, costs: &[f64]) -> Vec<f64> {
        let w = self.width();
        let mut reduced = vec![0.0; w];
        reduced[..self.cols].copy_from_slice(costs);
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                let row = &self.data[r * w..(r + 1) * w];
                for (v, a) in reduced.iter_mut().zip(row) {
                    *v -= cb * a;
                }
            }
        }
        reduced
    }

    /// Runs simplex iterations until optimal. `eligible(c)` filters entering
    /// columns.
    fn optimize(
        &mut self,
        reduced: &mut [f64],
        eligible: impl Fn(usize) -> bool,
        max_iterations: usize,
        iterations: &mut usize,
    ) -> Result<()> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_STREAK;
            let entering = if bland {
                (0..self.cols).find(|&c| eligible(c) && reduced[c] > OPT_TOL)
            } else {
                let mut best = None;
                let mut best_val = OPT_TOL;
                for c in 0..self.cols {
                    if reduced[c] > best_val && eligible(c) {
                        best_val = reduced[c];
                        best = Some(c);
                    }
                }
                best
            };
            let Some(pc) = entering else {
                return Ok(());
            };
            let mut leaving: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leaving = match leaving {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let better = if (ratio - lratio).abs() <= 1e-12 {
                                if bland {
                                    self.basis[r] < self.basis[lr]
                                } else {
                                    a > self.at(lr, pc)
                                }
                            } else {
                                ratio < lratio
                            };
                            if better {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, ratio)) = leaving else {
                return Err(Error::SolverFailure("objective is unbounded".into()));
            };
            if ratio <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(pr, pc, reduced);
            *iterations += 1;
            if *iterations > max_iterations {
                return Err(Error::SolverFailure(format!(
                    "iteration cap of {max_iterations} exceeded"
                )));
            }
        }
    }
}

/// Solves `lp` to an optimal basic solution.
pub fn solve_lp(lp: &LinearProgram) -> Result<Solution> {
    lp.validate()?;
    let n = lp.n_vars();

    // Collect rows as (coefficients, rhs, is_inequality).
    let mut rows: Vec<(Vec<f64>, f64, bool)> = Vec::new();
    for c in &lp.equalities {
        rows.push((c.coefficients.clone(), c.rhs, false));
    }
    for c in &lp.inequalities {
        rows.push((c.coefficients.clone(), c.rhs, true));
    }
    for (i, u) in lp.upper_bounds.iter().enumerate() {
        if let Some(u) = *u {
            let mut coefficients = vec![0.0; n];
            coefficients[i] = 1.0;
            rows.push((coefficients, u, true));
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.2).count();
    // An inequality with rhs >= 0 starts with its slack basic; every other
    // row gets an artificial.
    let n_art = rows.iter().filter(|r| !r.2 || r.1 < 0.0).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut kinds = vec![Column::Original; n];
    kinds.extend(std::iter::repeat_n(Column::Slack, n_slack));
    kinds.extend(std::iter::repeat_n(Column::Artificial, n_art));

    let mut data = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let mut next_slack = n;
    let mut next_art = n + n_slack;
    for (r, (coefficients, rhs, is_ineq)) in rows.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        let row = &mut data[r * w..(r + 1) * w];
        for (v, a) in row.iter_mut().zip(coefficients) {
            *v = sign * a;
        }
        row[cols] = sign * rhs;
        if *is_ineq {
            row[next_slack] = sign;
            if sign > 0.0 {
                basis[r] = next_slack;
            }
            next_slack += 1;
        }
        if !*is_ineq || sign < 0.0 {
            row[next_art] = 1.0;
            basis[r] = next_art;
            next_art += 1;
        }
    }
    let mut tableau = Tableau {
        rows: m,
        cols,
        data,
        basis,
        kinds,
    };
    let max_iterations = 50 * (m + cols).max(100);
    let mut iterations = 0;

    if n_art > 0 {
        let phase1: Vec<f64> = tableau
            .kinds
            .iter()
            .map(|k| if *k == Column::Artificial { -1.0 } else { 0.0 })
            .collect();
        let mut reduced = tableau.reduced_costs(&phase1);
        tableau.optimize(&mut reduced, |_| true, max_iterations, &mut iterations)?;
        let infeasibility: f64 = (0..m)
            .filter(|&r| tableau.kinds[tableau.basis[r]] == Column::Artificial)
            .map(|r| tableau.rhs(r))
            .sum();
        if infeasibility > FEAS_TOL {
            return Err(Error::SolverFailure(format!(
                "problem is infeasible (phase-one residual {infeasibility:e})"
            )));
        }
        // Drive remaining zero-level artificials out where the row allows.
        for r in 0..m {
            if tableau.kinds[tableau.basis[r]] != Column::Artificial {
                continue;
            }
            let pc = (0..cols)
                .filter(|&c| tableau.kinds[c] != Column::Artificial)
                .max_by(|&a, &b| tableau.at(r, a).abs().total_cmp(&tableau.at(r, b).abs()));
            if let Some(pc) = pc {
                if tableau.at(r, pc).abs() > PIVOT_TOL {
                    tableau.pivot(r, pc, &mut reduced);
                }
            }
        }
    }

    let mut costs = vec![0.0; cols];
    costs[..n].copy_from_slice(&lp.objective);
    let mut reduced = tableau.reduced_costs(&costs);
    let kinds = tableau.kinds.clone();
    tableau.optimize(
        &mut reduced,
        |c| kinds[c] != Column::Artificial,
        max_iterations,
        &mut iterations,
    )?;

    let mut x = vec![0.0; n];
    for (r, &b) in tableau.basis.iter().enumerate() {
        if b < n {
            x[b] = tableau.rhs(r).max(0.0);
        }
    }
    let residual = lp.max_residual(&x);
    if residual > FEAS_TOL {
        return Err(Error::SolverFailure(format!(
            "solution violates constraints by {residual:e}"
        )));
    }
    Ok(Solution {
        objective: lp.objective_value(&x),
        x,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bounded_variable() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add_inequality(vec![1.0], 1.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12);
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn upper_bounds_are_enforced() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.upper_bounds = vec![Some(3.0), Some(0.5)];
        lp.add_inequality(vec![1.0, 1.0], 10.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 4.0).abs() < 1e-12);
    }

    #[test]
    fn negative_rhs_needs_phase_one() {
        // maximize -x - y  s.t. x + y >= 2 (as -x - y <= -2), x - y = 0
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -1.0];
        lp.add_inequality(vec![-1.0, -1.0], -2.0);
        lp.add_equality(vec![1.0, -1.0], 0.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-9 && (s.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded_are_errors() {
        let mut lp = LinearProgram::new(1);
        lp.add_inequality(vec![1.0], -1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::SolverFailure(_))));

        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.add_inequality(vec![-1.0, 1.0], 1.0);
        assert!(matches!(solve_lp(&lp), Err(Error::SolverFailure(_))));
    }

    #[test]
    fn redundant_equalities_are_tolerated() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 3.0];
        lp.add_equality(vec![1.0, 1.0], 1.0);
        lp.add_equality(vec![2.0, 2.0], 2.0);
        let s = solve_lp(&lp).unwrap();
        assert!((s.objective - 3.0).abs() < 1e-12);
    }
}
