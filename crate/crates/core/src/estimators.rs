//! Global relevance estimation from censored clicks.
//!
//! Two running sums are kept side by side: raw click counts (the naive
//! counter, biased towards items that were shown high) and clicks weighted by
//! the inverse of the examination propensity they were shown at, whose
//! average is an unbiased estimate of each item's expected relevance.

use crate::click::ExposureModel;
use crate::error::{Error, Result};
use crate::ranking::{ItemCatalog, Ranking};

/// Default lower bound on estimated group merit.
pub const DEFAULT_MIN_MERIT: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalEstimatorState {
    ips_sums: Vec<f64>,
    naive_sums: Vec<f64>,
    step_count: u64,
}

impl GlobalEstimatorState {
    pub fn new(n_items: usize) -> Self {
        Self {
            ips_sums: vec![0.0; n_items],
            naive_sums: vec![0.0; n_items],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn ips_sums(&self) -> &[f64] {
        &self.ips_sums
    }

    pub fn naive_sums(&self) -> &[f64] {
        &self.naive_sums
    }

    pub fn update(&mut self, clicks: &[bool], ranking: &Ranking, exposure: &ExposureModel) -> Result<()> {
        let n = self.ips_sums.len();
        if clicks.len() != n || ranking.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: clicks.len().min(ranking.len()),
            });
        }
        for (d, _) in clicks.iter().enumerate().filter(|(_, &c)| c) {
            let p = exposure.at_position(ranking.position_of(d));
            if p <= 0.0 {
                return Err(Error::ZeroPropensity(p));
            }
            self.ips_sums[d] += 1.0 / p;
            self.naive_sums[d] += 1.0;
        }
        self.step_count += 1;
        Ok(())
    }

    pub fn ips_estimate(&self) -> Result<Vec<f64>> {
        self.averaged(&self.ips_sums)
    }

    pub fn naive_estimate(&self) -> Result<Vec<f64>> {
        self.averaged(&self.naive_sums)
    }

    fn averaged(&self, sums: &[f64]) -> Result<Vec<f64>> {
        if self.step_count == 0 {
            return Err(Error::EmptyHistory);
        }
        let tau = self.step_count as f64;
        Ok(sums.iter().map(|s| s / tau).collect())
    }
}

/// Per-group mean of item relevances, floored at `min_merit`.
pub fn merit_estimate(relevance: &[f64], catalog: &ItemCatalog, min_merit: f64) -> Result<Vec<f64>> {
    if !(min_merit > 0.0) {
        return Err(Error::ZeroMerit(min_merit));
    }
    if relevance.len() != catalog.len() {
        return Err(Error::DimensionMismatch {
            expected: catalog.len(),
            actual: relevance.len(),
        });
    }
    (0..catalog.group_count())
        .map(|g| {
            let members = catalog.members(g);
            if members.is_empty() {
                return Err(Error::InvalidCatalog(format!("group {g} is empty")));
            }
            let mean = members.iter().map(|&d| relevance[d]).sum::<f64>() / members.len() as f64;
            Ok(mean.max(min_merit))
        })
        .collect()
}
