//! Amortized merit-based fairness accounting.
//!
//! The ledger keeps, per group, the running sums of per-step exposure (mean
//! examination propensity over the group's items) and impact (mean clicks).
//! Disparities compare the time-averaged sums after normalizing by merit.

use serde::{Deserialize, Serialize};

use crate::click::ExposureModel;
use crate::error::{Error, Result};
use crate::ranking::{ItemCatalog, Ranking};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMode {
    Exposure,
    Impact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FairnessLedger {
    exposure_sums: Vec<f64>,
    impact_sums: Vec<f64>,
    step_count: u64,
    group_sizes: Vec<usize>,
}

impl FairnessLedger {
    pub fn new(catalog: &ItemCatalog) -> Self {
        let m = catalog.group_count();
        Self {
            exposure_sums: vec![0.0; m],
            impact_sums: vec![0.0; m],
            step_count: 0,
            group_sizes: catalog.group_sizes(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn exposure_sums(&self) -> &[f64] {
        &self.exposure_sums
    }

    pub fn impact_sums(&self) -> &[f64] {
        &self.impact_sums
    }

    pub fn sums(&self, mode: FairnessMode) -> &[f64] {
        match mode {
            FairnessMode::Exposure => &self.exposure_sums,
            FairnessMode::Impact => &self.impact_sums,
        }
    }

    pub fn accumulate(&mut self, ranking: &Ranking, clicks: &[bool], exposure: &ExposureModel, catalog: &ItemCatalog) {
        debug_assert_eq!(catalog.group_count(), self.group_count());
        for g in 0..catalog.group_count() {
            let members = catalog.members(g);
            let size = members.len() as f64;
            let exp: f64 = members
                .iter()
                .map(|&d| exposure.at_position(ranking.position_of(d)))
                .sum();
            let imp = members.iter().filter(|&&d| clicks[d]).count() as f64;
            self.exposure_sums[g] += exp / size;
            self.impact_sums[g] += imp / size;
        }
        self.step_count += 1;
    }

    /// `sums(g) / merit(g)`: the group's cumulative (not averaged) ratio.
    pub fn cumulative_ratio(&self, merit: &[f64], group: usize, mode: FairnessMode) -> f64 {
        self.sums(mode)[group] / merit[group]
    }

    /// Per-group averaged ratio `(sums(g) / tau) / merit(g)`.
    pub fn average_ratios(&self, merit: &[f64], mode: FairnessMode) -> Result<Vec<f64>> {
        check_merits(merit, self.group_count())?;
        if self.step_count == 0 {
            return Err(Error::EmptyHistory);
        }
        let tau = self.step_count as f64;
        Ok(self.sums(mode).iter().zip(merit).map(|(s, m)| (s / tau) / m).collect())
    }

    pub fn disparity(&self, merit: &[f64], gi: usize, gj: usize, mode: FairnessMode) -> Result<f64> {
        check_merits(merit, self.group_count())?;
        if self.step_count == 0 {
            return Err(Error::EmptyHistory);
        }
        let tau = self.step_count as f64;
        let sums = self.sums(mode);
        Ok((sums[gi] / tau) / merit[gi] - (sums[gj] / tau) / merit[gj])
    }

    /// `tau * D_tau(gi, gj)`, computed without the rounding of the average.
    pub fn cumulative_disparity(&self, merit: &[f64], gi: usize, gj: usize, mode: FairnessMode) -> f64 {
        self.cumulative_ratio(merit, gi, mode) - self.cumulative_ratio(merit, gj, mode)
    }

    /// Mean absolute pairwise disparity over all unordered group pairs.
    pub fn overall_disparity(&self, merit: &[f64], mode: FairnessMode) -> Result<f64> {
        let m = self.group_count();
        if m < 2 {
            return Err(Error::UndefinedMetric(m));
        }
        let ratios = self.average_ratios(merit, mode)?;
        Ok(mean_abs_pairwise(&ratios))
    }

    /// Controller error per item: for `d` in `G`,
    /// `tau * max_i D_tau(G_i, G)` over the steps recorded so far.
    ///
    /// Called before the current step is accumulated, so `tau` here is the
    /// previous step count. Zero for the group with the largest ratio.
    pub fn error_term(&self, merit: &[f64], catalog: &ItemCatalog, mode: FairnessMode) -> Result<Vec<f64>> {
        check_merits(merit, self.group_count())?;
        if self.step_count == 0 {
            return Ok(vec![0.0; catalog.len()]);
        }
        let ratios: Vec<f64> = (0..self.group_count())
            .map(|g| self.cumulative_ratio(merit, g, mode))
            .collect();
        let top = ratios.iter().copied().fold(f64::MIN, f64::max);
        Ok((0..catalog.len()).map(|d| top - ratios[catalog.group_of(d)]).collect())
    }
}

pub(crate) fn mean_abs_pairwise(ratios: &[f64]) -> f64 {
    let m = ratios.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (ratios[i] - ratios[j]).abs();
        }
    }
    2.0 * total / (m * (m - 1)) as f64
}

fn check_merits(merit: &[f64], groups: usize) -> Result<()> {
    if merit.len() != groups {
        return Err(Error::DimensionMismatch {
            expected: groups,
            actual: merit.len(),
        });
    }
    match merit.iter().find(|&&m| !(m > 0.0)) {
        Some(&m) => Err(Error::ZeroMerit(m)),
        None => Ok(()),
    }
}

/// Worst single-step exposure-per-merit difference between two distinct
/// groups: one group packed at the top of the ranking, the other at the bottom.
pub fn max_step_exposure_gap(merit: &[f64], exposure: &ExposureModel, catalog: &ItemCatalog) -> f64 {
    let m = catalog.group_count();
    let n = exposure.len();
    let props = exposure.by_rank();
    let top = |size: usize| props[..size].iter().sum::<f64>() / size as f64;
    let bottom = |size: usize| props[n - size..].iter().sum::<f64>() / size as f64;
    let sizes = catalog.group_sizes();
    let mut delta = 0.0f64;
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let gap = top(sizes[a]) / merit[a] - bottom(sizes[b]) / merit[b];
                delta = delta.max(gap);
            }
        }
    }
    delta
}

/// Convergence envelope for the exposure controller started at `tau0`.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoremBound {
    pub tau0: u64,
    pub delta: f64,
    /// `bounds[i][j] = max(tau0 * |D_tau0(i, j)|, 1/lambda + delta)`.
    pub bounds: Vec<Vec<f64>>,
}

impl TheoremBound {
    /// `(2 / (m (m - 1))) * sum_{i<j} bounds[i][j]`: the envelope for
    /// `tau * overall_disparity`.
    pub fn overall(&self) -> f64 {
        let m = self.bounds.len();
        if m < 2 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..m {
            for j in i + 1..m {
                total += self.bounds[i][j];
            }
        }
        2.0 * total / (m * (m - 1)) as f64
    }
}

pub fn theorem_bound(
    ledger: &FairnessLedger,
    merit: &[f64],
    lambda: f64,
    exposure: &ExposureModel,
    catalog: &ItemCatalog,
) -> Result<TheoremBound> {
    check_merits(merit, ledger.group_count())?;
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be > 0, got {lambda}")));
    }
    let m = ledger.group_count();
    let delta = max_step_exposure_gap(merit, exposure, catalog);
    let floor = 1.0 / lambda + delta;
    let bounds = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let start = ledger.cumulative_disparity(merit, i, j, FairnessMode::Exposure).abs();
                    start.max(floor)
                })
                .collect()
        })
        .collect();
    Ok(TheoremBound {
        tau0: ledger.step_count(),
        delta,
        bounds,
    })
}
