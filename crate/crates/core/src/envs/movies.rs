//! Movie-preference environment: ratings ingestion, subset selection,
//! factorization-based completion and per-trial Bernoulli relevance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::{Item, ItemCatalog, Request};

pub const DEFAULT_SLOPE: f64 = 10.0;
pub const DEFAULT_CENTER: f64 = 3.0;
pub const DEFAULT_GROUPS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingTriple {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
}

/// Reads `user,item,rating` rows. A non-numeric first row is taken as a
/// header; extra trailing columns (e.g. timestamps) are ignored.
pub fn ingest_ratings(path: &Path) -> Result<Vec<RatingTriple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (fields.len() >= 3)
            .then(|| {
                Some(RatingTriple {
                    user: fields[0].parse().ok()?,
                    item: fields[1].parse().ok()?,
                    rating: fields[2].parse().ok()?,
                })
            })
            .flatten();
        match parsed {
            Some(t) if (0.5..=5.0).contains(&t.rating) => out.push(t),
            Some(t) => {
                return Err(Error::Parse {
                    line: index + 1,
                    message: format!("rating {} outside [0.5, 5]", t.rating),
                })
            }
            None if index == 0 => continue,
            None => {
                return Err(Error::Parse {
                    line: index + 1,
                    message: format!("expected user,item,rating but got '{line}'"),
                })
            }
        }
    }
    if out.is_empty() {
        warn!("no ratings found in {}", path.display());
    }
    Ok(out)
}

/// Reads `item,group` rows (header allowed) into a map.
pub fn read_groups(path: &Path) -> Result<BTreeMap<u64, usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let parsed = (|| Some((fields.next()?.parse().ok()?, fields.next()?.parse().ok()?)))();
        match parsed {
            Some((item, group)) => {
                out.insert(item, group);
            }
            None if index == 0 => continue,
            None => {
                return Err(Error::Parse {
                    line: index + 1,
                    message: format!("expected item,group but got '{line}'"),
                })
            }
        }
    }
    Ok(out)
}

fn population_sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Three-stage selection: the `candidate_pool` most-rated movies, of those
/// the `n_movies` with the largest rating standard deviation, then the
/// `n_users` users with the most ratings among the chosen movies. Ties go
/// to the lower id.
pub fn select_subset(
    triples: &[RatingTriple],
    n_movies: usize,
    n_users: usize,
    candidate_pool: usize,
) -> Result<Vec<RatingTriple>> {
    let mut by_movie: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for t in triples {
        by_movie.entry(t.item).or_default().push(t.rating);
    }
    if candidate_pool > by_movie.len() {
        return Err(Error::Selection(format!(
            "candidate pool of {candidate_pool} movies requested but only {} are rated",
            by_movie.len()
        )));
    }
    if n_movies > candidate_pool {
        return Err(Error::Selection(format!(
            "{n_movies} movies requested from a pool of {candidate_pool}"
        )));
    }
    let mut pool: Vec<(u64, &Vec<f64>)> = by_movie.iter().map(|(&id, r)| (id, r)).collect();
    pool.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    pool.truncate(candidate_pool);
    let mut spread: Vec<(u64, f64)> = pool.iter().map(|(id, r)| (*id, population_sd(r))).collect();
    spread.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let movies: BTreeSet<u64> = spread.iter().take(n_movies).map(|(id, _)| *id).collect();

    let mut activity: BTreeMap<u64, usize> = BTreeMap::new();
    for t in triples.iter().filter(|t| movies.contains(&t.item)) {
        *activity.entry(t.user).or_default() += 1;
    }
    if n_users > activity.len() {
        return Err(Error::Selection(format!(
            "{n_users} users requested but only {} rated the chosen movies",
            activity.len()
        )));
    }
    let mut users: Vec<(u64, usize)> = activity.into_iter().collect();
    users.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let users: BTreeSet<u64> = users.iter().take(n_users).map(|(id, _)| *id).collect();
    Ok(triples
        .iter()
        .filter(|t| movies.contains(&t.item) && users.contains(&t.user))
        .copied()
        .collect())
}

/// Dense factors with the external ids of their rows, both sorted ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct Factorization {
    pub user_ids: Vec<u64>,
    pub item_ids: Vec<u64>,
    /// `user_ids.len() x dim`, row-major.
    pub users: Vec<Vec<f64>>,
    /// `item_ids.len() x dim`, row-major.
    pub items: Vec<Vec<f64>>,
}

impl Factorization {
    pub fn predict(&self, user: usize, item: usize) -> f64 {
        dot(&self.users[user], &self.items[item])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorizeOptions {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub init_sd: f64,
}

impl FactorizeOptions {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            epochs: 20,
            learning_rate: 0.005,
            regularization: 0.02,
            init_sd: 0.1,
        }
    }
}

/// SGD factorization `r ~ <U_u, V_i>` without bias terms, minimizing squared
/// error on the observed entries plus an L2 penalty.
pub fn matrix_factorize<R: Rng + ?Sized>(
    triples: &[RatingTriple],
    options: &FactorizeOptions,
    rng: &mut R,
) -> Result<Factorization> {
    if options.dim == 0 {
        return Err(Error::Config("factor dimension must be at least 1".into()));
    }
    let user_ids: Vec<u64> = triples
        .iter()
        .map(|t| t.user)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let item_ids: Vec<u64> = triples
        .iter()
        .map(|t| t.item)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let user_index: BTreeMap<u64, usize> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let item_index: BTreeMap<u64, usize> = item_ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut entries: Vec<(usize, usize, f64)> = triples
        .iter()
        .map(|t| (user_index[&t.user], item_index[&t.item], t.rating))
        .collect();

    let init = Normal::new(0.0, options.init_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut draw = |rows: usize| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..options.dim).map(|_| init.sample(rng)).collect())
            .collect()
    };
    let mut users = draw(user_ids.len());
    let mut items = draw(item_ids.len());

    let lr = options.learning_rate;
    let reg = options.regularization;
    for epoch in 0..options.epochs {
        entries.shuffle(rng);
        for &(u, i, r) in &entries {
            let err = r - dot(&users[u], &items[i]);
            if !err.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "factorization residual {err} in epoch {epoch}"
                )));
            }
            for k in 0..options.dim {
                let pu = users[u][k];
                let qi = items[i][k];
                users[u][k] += lr * (err * qi - reg * pu);
                items[i][k] += lr * (err * pu - reg * qi);
            }
        }
    }
    Ok(Factorization {
        user_ids,
        item_ids,
        users,
        items,
    })
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Prepared movie environment, serialized as
/// `{probabilities, features, groups}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MovieEnvironment {
    /// `n_users x n_movies` relevance probabilities.
    pub probabilities: Vec<Vec<f64>>,
    /// `n_users x D` user features.
    pub features: Vec<Vec<f64>>,
    /// Group id per movie.
    pub groups: Vec<usize>,
}

/// `probability(u, d) = 1 / (1 + exp(-a (<U_u, V_d> - b)))`; features are the
/// user factors.
pub fn build_movie_env(
    factors: &Factorization,
    groups: Vec<usize>,
    slope: f64,
    center: f64,
) -> Result<MovieEnvironment> {
    if groups.len() != factors.items.len() {
        return Err(Error::DimensionMismatch {
            expected: factors.items.len(),
            actual: groups.len(),
        });
    }
    let probabilities = (0..factors.users.len())
        .map(|u| {
            (0..factors.items.len())
                .map(|d| logistic(slope * (factors.predict(u, d) - center)))
                .collect()
        })
        .collect();
    let env = MovieEnvironment {
        probabilities,
        features: factors.users.clone(),
        groups,
    };
    env.validate()?;
    Ok(env)
}

/// Groups for the factorized movies: from `map` when given (every movie must
/// be listed), else movie index modulo `DEFAULT_GROUPS`.
pub fn assign_groups(item_ids: &[u64], map: Option<&BTreeMap<u64, usize>>) -> Result<Vec<usize>> {
    match map {
        Some(map) => item_ids
            .iter()
            .map(|id| {
                map.get(id)
                    .copied()
                    .ok_or_else(|| Error::InvalidCatalog(format!("movie {id} has no group")))
            })
            .collect(),
        None => Ok((0..item_ids.len())
            .map(|d| d % DEFAULT_GROUPS.min(item_ids.len().max(1)))
            .collect()),
    }
}

impl MovieEnvironment {
    pub fn n_users(&self) -> usize {
        self.probabilities.len()
    }

    pub fn n_movies(&self) -> usize {
        self.groups.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.probabilities.is_empty() {
            return Err(Error::InvalidCatalog("movie environment has no users".into()));
        }
        if self.features.len() != self.n_users() {
            return Err(Error::DimensionMismatch {
                expected: self.n_users(),
                actual: self.features.len(),
            });
        }
        let dim = self.feature_dim();
        for row in &self.features {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
        }
        for row in &self.probabilities {
            if row.len() != self.n_movies() {
                return Err(Error::DimensionMismatch {
                    expected: self.n_movies(),
                    actual: row.len(),
                });
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::InvalidCatalog(format!("probability {p} outside [0, 1]")));
            }
        }
        self.catalog().map(|_| ())
    }

    pub fn catalog(&self) -> Result<ItemCatalog> {
        let count = self.groups.iter().copied().max().map_or(0, |g| g + 1);
        let items = self
            .groups
            .iter()
            .enumerate()
            .map(|(id, &group)| Item {
                id,
                group,
                attributes: vec![self.column_mean(id)],
            })
            .collect();
        ItemCatalog::new(items, count)
    }

    fn column_mean(&self, movie: usize) -> f64 {
        self.probabilities.iter().map(|row| row[movie]).sum::<f64>() / self.n_users() as f64
    }

    /// Per-group mean of the movies' mean relevance probability.
    pub fn true_merit(&self) -> Result<Vec<f64>> {
        let catalog = self.catalog()?;
        Ok((0..catalog.group_count())
            .map(|g| {
                let members = catalog.members(g);
                members.iter().map(|&d| self.column_mean(d)).sum::<f64>() / members.len() as f64
            })
            .collect())
    }

    /// Draws this trial's binary relevance matrix.
    pub fn draw_trial<R: Rng + ?Sized>(&self, rng: &mut R) -> MovieTrial {
        let relevance = self
            .probabilities
            .iter()
            .map(|row| row.iter().map(|&p| rng.random::<f64>() < p).collect())
            .collect();
        MovieTrial { relevance }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let env: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        env.validate()?;
        Ok(env)
    }
}

/// Full preparation pipeline: subset selection, factorization, group
/// assignment and sigmoid normalization with the default slope and center.
pub fn prepare_environment<R: Rng + ?Sized>(
    triples: &[RatingTriple],
    n_movies: usize,
    n_users: usize,
    candidate_pool: usize,
    options: &FactorizeOptions,
    groups: Option<&BTreeMap<u64, usize>>,
    rng: &mut R,
) -> Result<MovieEnvironment> {
    let chosen = select_subset(triples, n_movies, n_users, candidate_pool)?;
    let factors = matrix_factorize(&chosen, options, rng)?;
    let groups = assign_groups(&factors.item_ids, groups)?;
    build_movie_env(&factors, groups, DEFAULT_SLOPE, DEFAULT_CENTER)
}

/// One trial's fixed binary relevance matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MovieTrial {
    pub relevance: Vec<Vec<bool>>,
}

/// Uniformly drawn user with their row of the trial matrix.
pub fn sample_movie_request<R: Rng + ?Sized>(env: &MovieEnvironment, trial: &MovieTrial, rng: &mut R) -> Request {
    let u = rng.random_range(0..env.n_users());
    Request::new(env.features[u].clone(), trial.relevance[u].clone())
}

/// Synthetic ratings with user taste clusters, so that personalization
/// matters. Each (user, movie) pair is observed with probability `density`.
pub fn synthetic_ratings<R: Rng + ?Sized>(
    n_users: usize,
    n_movies: usize,
    density: f64,
    rng: &mut R,
) -> Vec<RatingTriple> {
    let latent = 3;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, 0.3).expect("noise sd");
    let clusters: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..latent).map(|_| unit.sample(rng)).collect())
        .collect();
    let movies: Vec<Vec<f64>> = (0..n_movies)
        .map(|_| (0..latent).map(|_| unit.sample(rng) * 0.6).collect())
        .collect();
    let popularity: Vec<f64> = (0..n_movies).map(|_| rng.random_range(-0.5..0.5)).collect();
    let mut out = Vec::new();
    for u in 0..n_users {
        let c = &clusters[rng.random_range(0..clusters.len())];
        let taste: Vec<f64> = c.iter().map(|v| v + 0.3 * unit.sample(rng)).collect();
        for (d, v) in movies.iter().enumerate() {
            if rng.random::<f64>() >= density {
                continue;
            }
            let raw = 3.0 + popularity[d] + dot(&taste, v) + noise.sample(rng);
            let rating = ((raw * 2.0).round() / 2.0).clamp(0.5, 5.0);
            out.push(RatingTriple {
                user: u as u64,
                item: d as u64,
                rating,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple(user: u64, item: u64, rating: f64) -> RatingTriple {
        RatingTriple { user, item, rating }
    }

    #[test]
    fn ingest_parses_and_skips_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "userId,movieId,rating,timestamp\n1,10,4.0,123\n2,10,0.5,9\n").unwrap();
        let t = ingest_ratings(&path).unwrap();
        assert_eq!(t, vec![triple(1, 10, 4.0), triple(2, 10, 0.5)]);
        fs::write(&path, "1,10,4.0\n1,x,3\n").unwrap();
        match ingest_ratings(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "1,10,7.0\n").unwrap();
        assert!(ingest_ratings(&path).is_err());
        fs::write(&path, "").unwrap();
        assert!(ingest_ratings(&path).unwrap().is_empty());
    }

    fn toy_set() -> Vec<RatingTriple> {
        // Five movies rated by three users; movie 3 has the widest spread.
        let mut t = Vec::new();
        let ratings = [
            [3.0, 3.0, 3.0],
            [3.0, 3.5, 3.0],
            [2.0, 3.0, 4.0],
            [0.5, 5.0, 2.0],
            [4.0, 4.0, 4.5],
        ];
        for (movie, row) in ratings.iter().enumerate() {
            for (user, &r) in row.iter().enumerate() {
                t.push(triple(user as u64, movie as u64, r));
            }
        }
        t
    }

    #[test]
    fn select_picks_highest_variance() {
        let t = toy_set();
        let chosen = select_subset(&t, 1, 3, 5).unwrap();
        assert!(chosen.iter().all(|x| x.item == 3));
        assert_eq!(chosen.len(), 3);
        assert_eq!(select_subset(&t, 5, 3, 5).unwrap(), t);
        assert!(select_subset(&t, 6, 3, 6).is_err());
        assert!(select_subset(&t, 1, 4, 5).is_err());
    }

    #[test]
    fn select_variance_tie_prefers_lower_id() {
        let t = vec![
            triple(0, 7, 1.0),
            triple(1, 7, 3.0),
            triple(0, 4, 2.0),
            triple(1, 4, 4.0),
        ];
        let chosen = select_subset(&t, 1, 2, 2).unwrap();
        assert!(chosen.iter().all(|x| x.item == 4));
    }

    #[test]
    fn factorizes_rank_one() {
        let t = vec![
            triple(0, 0, 1.0),
            triple(0, 1, 2.0),
            triple(1, 0, 2.0),
            triple(1, 1, 4.0),
        ];
        let mut options = FactorizeOptions::new(1);
        options.epochs = 3000;
        options.learning_rate = 0.02;
        options.regularization = 0.0;
        let f = matrix_factorize(&t, &options, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let err: f64 = t
            .iter()
            .map(|x| (f.predict(x.user as usize, x.item as usize) - x.rating).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-2, "{err}");
    }

    #[test]
    fn factorize_zero_rate_and_seed() {
        let t = vec![triple(0, 0, 1.0), triple(1, 1, 2.0)];
        let mut options = FactorizeOptions::new(2);
        options.learning_rate = 0.0;
        let a = matrix_factorize(&t, &options, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        options.epochs = 0;
        let b = matrix_factorize(&t, &options, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.items, b.items);
        let mut options = FactorizeOptions::new(2);
        options.epochs = 5;
        let c = matrix_factorize(&toy_set(), &options, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let d = matrix_factorize(&toy_set(), &options, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(c, d);
    }

    fn fixed_factors(ratings: &[f64]) -> Factorization {
        Factorization {
            user_ids: vec![0],
            item_ids: (0..ratings.len() as u64).collect(),
            users: vec![vec![1.0]],
            items: ratings.iter().map(|&r| vec![r]).collect(),
        }
    }

    #[test]
    fn sigmoid_normalization() {
        let env = build_movie_env(&fixed_factors(&[3.0, 4.0, 2.0]), vec![0, 0, 0], 10.0, 3.0).unwrap();
        let p = &env.probabilities[0];
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.9999546).abs() < 1e-7);
        assert!((p[2] - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn trial_matrix_is_reused_across_requests() {
        let env = build_movie_env(&fixed_factors(&[3.0, 3.0, 3.0, 3.0]), vec![0, 1, 0, 1], 10.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trial = env.draw_trial(&mut rng);
        for _ in 0..5 {
            let r = sample_movie_request(&env, &trial, &mut rng);
            assert_eq!(r.true_relevance(), trial.relevance[0].as_slice());
            assert_eq!(r.features(), &[1.0]);
        }
        assert_eq!(env.true_merit().unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn json_artifact_has_exact_keys() {
        let env = build_movie_env(&fixed_factors(&[3.0, 4.0]), vec![0, 1], 10.0, 3.0).unwrap();
        let value: serde_json::Value = serde_json::to_value(&env).unwrap();
        let keys: Vec<&str> = value.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, vec!["features", "groups", "probabilities"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        env.write_json(&path).unwrap();
        assert_eq!(MovieEnvironment::read_json(&path).unwrap(), env);
    }

    #[test]
    fn default_groups_cycle() {
        assert_eq!(
            assign_groups(&[5, 6, 7, 8, 9, 10], None).unwrap(),
            vec![0, 1, 2, 3, 4, 0]
        );
        let map: BTreeMap<u64, usize> = [(5, 1), (6, 0)].into_iter().collect();
        assert_eq!(assign_groups(&[5, 6], Some(&map)).unwrap(), vec![1, 0]);
        assert!(assign_groups(&[5, 7], Some(&map)).is_err());
    }
}
