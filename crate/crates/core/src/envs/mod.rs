//! Simulation environments and a common per-trial request source.

pub mod movies;
pub mod news;

use std::path::PathBuf;
use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::ranking::{ItemCatalog, Request};

pub use movies::{
    build_movie_env, ingest_ratings, matrix_factorize, sample_movie_request, select_subset, synthetic_ratings,
    Factorization, FactorizeOptions, MovieEnvironment, MovieTrial, RatingTriple,
};
pub use news::{build_news, sample_news_request, NewsEnvironment, UserSchedule};

/// How to build each trial's environment.
#[derive(Clone, Debug)]
pub enum EnvSpec {
    News {
        n_items: usize,
        group_split: usize,
        p_neg: f64,
        block_users: u64,
        polarity_file: Option<PathBuf>,
    },
    Movies(Arc<MovieEnvironment>),
}

impl EnvSpec {
    pub fn news(n_items: usize, group_split: usize, p_neg: f64) -> Self {
        EnvSpec::News {
            n_items,
            group_split,
            p_neg,
            block_users: 0,
            polarity_file: None,
        }
    }

    /// Builds one trial's environment from its own rng stream.
    pub fn instantiate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrialEnv> {
        match self {
            EnvSpec::News {
                n_items,
                group_split,
                p_neg,
                block_users,
                polarity_file,
            } => {
                let env = build_news(*n_items, *group_split, *p_neg, rng, polarity_file.as_deref())?;
                Ok(TrialEnv::News {
                    env,
                    schedule: UserSchedule {
                        p_neg: *p_neg,
                        block_users: *block_users,
                    },
                })
            }
            EnvSpec::Movies(env) => {
                let trial = env.draw_trial(rng);
                let catalog = env.catalog()?;
                let merit = env.true_merit()?;
                Ok(TrialEnv::Movies {
                    env: Arc::clone(env),
                    trial,
                    catalog,
                    merit,
                })
            }
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            EnvSpec::News { .. } => 2,
            EnvSpec::Movies(env) => env.feature_dim(),
        }
    }
}

/// A trial's environment: catalog, ground-truth merits and request stream.
#[derive(Clone, Debug)]
pub enum TrialEnv {
    News {
        env: NewsEnvironment,
        schedule: UserSchedule,
    },
    Movies {
        env: Arc<MovieEnvironment>,
        trial: MovieTrial,
        catalog: ItemCatalog,
        merit: Vec<f64>,
    },
}

impl TrialEnv {
    pub fn catalog(&self) -> &ItemCatalog {
        match self {
            TrialEnv::News { env, .. } => env.catalog(),
            TrialEnv::Movies { catalog, .. } => catalog,
        }
    }

    pub fn true_merit(&self) -> &[f64] {
        match self {
            TrialEnv::News { env, .. } => env.true_merit(),
            TrialEnv::Movies { merit, .. } => merit,
        }
    }

    /// Request for zero-based step `t`.
    pub fn request<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> Result<Request> {
        match self {
            TrialEnv::News { env, schedule } => sample_news_request(env, rng, schedule.p_neg_at(t)),
            TrialEnv::Movies { env, trial, .. } => Ok(sample_movie_request(env, trial, rng)),
        }
    }
}
