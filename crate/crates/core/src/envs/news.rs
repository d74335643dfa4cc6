//! Synthetic news stream: articles with a political polarity, users drawn
//! from a two-component polarity mixture with an openness radius.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ranking::{Item, ItemCatalog, Request};

pub const NEGATIVE_MEAN: f64 = -0.5;
pub const POSITIVE_MEAN: f64 = 0.5;
pub const POLARITY_SD: f64 = 0.2;
pub const OPENNESS_RANGE: (f64, f64) = (0.05, 0.55);
pub const MERIT_SAMPLES: usize = 100_000;

/// Group ids: items with negative polarity are group 0.
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NewsEnvironment {
    catalog: ItemCatalog,
    polarities: Vec<f64>,
    p_neg: f64,
    item_relevance: Vec<f64>,
    merit: Vec<f64>,
}

impl NewsEnvironment {
    /// Builds from explicit polarities; group by sign. Ground-truth merits
    /// are Monte-Carlo expectations over `samples` users drawn at `p_neg`.
    pub fn from_polarities<R: Rng + ?Sized>(
        polarities: Vec<f64>,
        p_neg: f64,
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_p_neg(p_neg)?;
        if let Some(p) = polarities.iter().find(|p| !(-1.0..=1.0).contains(*p)) {
            return Err(Error::InvalidCatalog(format!("polarity {p} outside [-1, 1]")));
        }
        let items: Vec<Item> = polarities
            .iter()
            .enumerate()
            .map(|(id, &rho)| Item {
                id,
                group: if rho < 0.0 { LEFT } else { RIGHT },
                attributes: vec![rho],
            })
            .collect();
        let catalog = ItemCatalog::new(items, 2)?;

        let mut item_relevance = vec![0.0; polarities.len()];
        for _ in 0..samples.max(1) {
            let (rho_u, openness) = sample_user(rng, p_neg);
            for (acc, &rho_d) in item_relevance.iter_mut().zip(&polarities) {
                *acc += relevance_probability(rho_u, rho_d, openness);
            }
        }
        item_relevance.iter_mut().for_each(|v| *v /= samples.max(1) as f64);
        let merit = (0..2)
            .map(|g| {
                let members = catalog.members(g);
                members.iter().map(|&d| item_relevance[d]).sum::<f64>() / members.len() as f64
            })
            .collect();
        Ok(Self {
            catalog,
            polarities,
            p_neg,
            item_relevance,
            merit,
        })
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn polarities(&self) -> &[f64] {
        &self.polarities
    }

    /// Mixture weight the ground-truth merits were computed under.
    pub fn p_neg(&self) -> f64 {
        self.p_neg
    }

    /// Expected relevance of each item over the user population.
    pub fn item_relevance(&self) -> &[f64] {
        &self.item_relevance
    }

    pub fn true_merit(&self) -> &[f64] {
        &self.merit
    }
}

fn check_p_neg(p_neg: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p_neg) {
        Ok(())
    } else {
        Err(Error::Config(format!("p_neg must lie in [0, 1], got {p_neg}")))
    }
}

/// `exp(-(rho_u - rho_d)^2 / (2 o^2))`.
pub fn relevance_probability(user_polarity: f64, item_polarity: f64, openness: f64) -> f64 {
    let diff = user_polarity - item_polarity;
    (-(diff * diff) / (2.0 * openness * openness)).exp()
}

/// Draws `(polarity, openness)` for one user.
pub fn sample_user<R: Rng + ?Sized>(rng: &mut R, p_neg: f64) -> (f64, f64) {
    let mean = if rng.random::<f64>() < p_neg {
        NEGATIVE_MEAN
    } else {
        POSITIVE_MEAN
    };
    let normal = Normal::new(mean, POLARITY_SD).expect("valid sd");
    let polarity = normal.sample(rng).clamp(-1.0, 1.0);
    let openness = rng.random_range(OPENNESS_RANGE.0..OPENNESS_RANGE.1);
    (polarity, openness)
}

/// Reads one polarity per line; blank lines and `#` comments are skipped.
pub fn read_polarities(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let field = line.split(',').next_back().unwrap_or(line).trim();
        let value: f64 = field.parse().map_err(|_| Error::Parse {
            line: index + 1,
            message: format!("not a polarity: '{line}'"),
        })?;
        values.push(value);
    }
    Ok(values)
}

/// Builds the news catalog. Without a polarity file, `group_split` items get
/// polarity in `[-1, 0)` and the rest in `[0, 1]`.
pub fn build_news<R: Rng + ?Sized>(
    n_items: usize,
    group_split: usize,
    p_neg: f64,
    rng: &mut R,
    polarity_file: Option<&Path>,
) -> Result<NewsEnvironment> {
    let polarities = match polarity_file {
        Some(path) => read_polarities(path)?,
        None => {
            if group_split == 0 || group_split >= n_items {
                return Err(Error::Config(format!(
                    "group_split must be between 1 and {}, got {group_split}",
                    n_items.saturating_sub(1)
                )));
            }
            (0..n_items)
                .map(|d| {
                    if d < group_split {
                        -rng.random_range(f64::EPSILON..=1.0)
                    } else {
                        rng.random_range(0.0..=1.0)
                    }
                })
                .collect()
        }
    };
    NewsEnvironment::from_polarities(polarities, p_neg, MERIT_SAMPLES, rng)
}

/// One user arrival with Bernoulli relevances; features are `[rho_u, o_u]`.
pub fn sample_news_request<R: Rng + ?Sized>(env: &NewsEnvironment, rng: &mut R, p_neg: f64) -> Result<Request> {
    check_p_neg(p_neg)?;
    let (rho_u, openness) = sample_user(rng, p_neg);
    let relevance = env
        .polarities
        .iter()
        .map(|&rho_d| rng.random::<f64>() < relevance_probability(rho_u, rho_d, openness))
        .collect();
    Ok(Request::new(vec![rho_u, openness], relevance))
}

/// User-mixture schedule: `block_users` right-leaning users, then as many
/// left-leaning ones, then the base mixture.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserSchedule {
    pub p_neg: f64,
    pub block_users: u64,
}

impl UserSchedule {
    pub fn constant(p_neg: f64) -> Self {
        Self { p_neg, block_users: 0 }
    }

    /// Mixture weight for the zero-based step `t`.
    pub fn p_neg_at(&self, t: u64) -> f64 {
        if t < self.block_users {
            0.0
        } else if t < 2 * self.block_users {
            1.0
        } else {
            self.p_neg
        }
    }
}
