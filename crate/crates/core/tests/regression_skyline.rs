//! The propensity-weighted objective learns from censored clicks about as
//! well as the full-information fit learns from the true labels, and much
//! better than treating clicks as labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fairco::regression::{train, Adam, Objective, RegressionModel, TrainingLog};

const ITEMS: usize = 5;

fn true_probability(x: &[f64], item: usize) -> f64 {
    let w = item as f64 / (ITEMS - 1) as f64 * 2.0 - 1.0;
    1.0 / (1.0 + (-3.0 * (w * x[0] + 0.5 * x[1])).exp())
}

fn fit(log: &TrainingLog, seed: u64) -> RegressionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RegressionModel::new(2, 16, ITEMS, &mut rng);
    let mut adam = Adam::new(0.02);
    train(&mut model, log, &mut adam, 400).unwrap();
    model
}

fn error_against_truth(model: &RegressionModel, points: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in points {
        let y = model.predict(x).unwrap();
        for (d, yd) in y.iter().enumerate() {
            total += (yd - true_probability(x, d)).powi(2);
        }
    }
    total / (points.len() * ITEMS) as f64
}

#[test]
fn unbiased_fit_tracks_skyline() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut unbiased = TrainingLog::new(Objective::Unbiased, 2, ITEMS);
    let mut skyline = TrainingLog::new(Objective::FullInfo, 2, ITEMS);
    let mut naive = TrainingLog::new(Objective::FullInfo, 2, ITEMS);
    // item d is always shown at rank d + 1
    let props: Vec<f64> = (0..ITEMS).map(|d| 1.0 / ((d + 2) as f64).log2()).collect();
    for _ in 0..3000 {
        let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let rel: Vec<bool> = (0..ITEMS).map(|d| rng.random_bool(true_probability(&x, d))).collect();
        let clicks: Vec<bool> = rel.iter().zip(&props).map(|(&r, &p)| r && rng.random_bool(p)).collect();
        unbiased.push_interaction(&x, &clicks, &props).unwrap();
        skyline.push_labeled(&x, &rel).unwrap();
        naive.push_labeled(&x, &clicks).unwrap();
    }
    let grid: Vec<Vec<f64>> = (0..11)
        .flat_map(|i| (0..11).map(move |j| vec![i as f64 / 5.0 - 1.0, j as f64 / 5.0 - 1.0]))
        .collect();
    let e_unbiased = error_against_truth(&fit(&unbiased, 1), &grid);
    let e_skyline = error_against_truth(&fit(&skyline, 1), &grid);
    let e_naive = error_against_truth(&fit(&naive, 1), &grid);
    assert!(
        e_unbiased < 2.0 * e_skyline + 0.005,
        "unbiased {e_unbiased} skyline {e_skyline}"
    );
    assert!(e_naive > 2.0 * e_unbiased, "naive {e_naive} unbiased {e_unbiased}");
}
