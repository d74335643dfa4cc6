//! Personalized relevance regression.
//!
//! A one-hidden-layer network (rectifier hidden units, logistic outputs)
//! maps user features to a relevance probability per item. It is trained
//! full-batch with Adam on either the propensity-weighted click objective
//! or, for skyline diagnostics, plain least squares on true relevances.
//!
//! Both objectives share the form `sum_t sum_d y^2 - 2 a y + b` where `y`
//! is the prediction. With clicks `c` shown at propensity `p` the weights are
//! `a = c / p`, `b = c^2 / p`; with true labels `r` they are `a = r`,
//! `b = r^2`. Training only ever sees `(a, b)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Unbiased,
    FullInfo,
}

/// Network parameters; also used as the gradient and moment containers.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Params {
    fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: Array2::zeros((input, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, output)),
            b2: Array1::zeros(output),
        }
    }

    fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.w1.nrows(), other.w1.ncols(), other.w2.ncols())
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major concatenation `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for slice in self.slices_mut() {
            slice.copy_from_slice(&flat[offset..offset + slice.len()]);
            offset += slice.len();
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    params: Params,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl RegressionModel {
    /// Uniform initialization in `+-1/sqrt(fan_in)` per layer.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let mut params = Params::zeros(input, hidden, output);
        let s1 = 1.0 / (input.max(1) as f64).sqrt();
        let s2 = 1.0 / (hidden.max(1) as f64).sqrt();
        params.w1.mapv_inplace(|_| rng.random_range(-s1..=s1));
        params.b1.mapv_inplace(|_| rng.random_range(-s1..=s1));
        params.w2.mapv_inplace(|_| rng.random_range(-s2..=s2));
        params.b2.mapv_inplace(|_| rng.random_range(-s2..=s2));
        Self { params }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            params: Params::zeros(input, hidden, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.w2.ncols()
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.params.load_flat(flat)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward(view).output.row(0).to_vec())
    }

    fn forward(&self, x: ArrayView2<'_, f64>) -> Forward {
        let p = &self.params;
        let mut hidden = x.dot(&p.w1);
        hidden += &p.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        let mut output = hidden.dot(&p.w2);
        output += &p.b2;
        output.mapv_inplace(sigmoid);
        Forward { hidden, output }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let p = &self.params;
        Checkpoint {
            input_dim: self.input_dim(),
            hidden_dim: self.hidden_dim(),
            output_dim: self.output_dim(),
            w1: p.w1.iter().copied().collect(),
            b1: p.b1.to_vec(),
            w2: p.w2.iter().copied().collect(),
            b2: p.b2.to_vec(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut model = Self::zeros(c.input_dim, c.hidden_dim, c.output_dim);
        let flat: Vec<f64> = c.w1.iter().chain(&c.b1).chain(&c.w2).chain(&c.b2).copied().collect();
        let check = |name: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Contract(format!(
                    "checkpoint {name} has {got} values, expected {want}"
                )))
            }
        };
        check("w1", c.w1.len(), c.input_dim * c.hidden_dim)?;
        check("b1", c.b1.len(), c.hidden_dim)?;
        check("w2", c.w2.len(), c.hidden_dim * c.output_dim)?;
        check("b2", c.b2.len(), c.output_dim)?;
        model.set_flat(&flat)?;
        Ok(model)
    }
}

struct Forward {
    hidden: Array2<f64>,
    output: Array2<f64>,
}

/// Flat JSON checkpoint: dimensions plus row-major weight arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Growing training set in the shared `(a, b)` form.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    objective: Objective,
    feature_dim: usize,
    n_items: usize,
    features: Vec<f64>,
    weight: Vec<f64>,
    offset: Vec<f64>,
}

/// Click log with the propensities each item was shown at.
pub type InteractionLog = TrainingLog;

impl TrainingLog {
    pub fn new(objective: Objective, feature_dim: usize, n_items: usize) -> Self {
        Self {
            objective,
            feature_dim,
            n_items,
            features: Vec::new(),
            weight: Vec::new(),
            offset: Vec::new(),
        }
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.feature_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.weight.is_empty()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    fn check_row(&self, x: &[f64], values: usize) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        if values != self.n_items {
            return Err(Error::DimensionMismatch {
                expected: self.n_items,
                actual: values,
            });
        }
        Ok(())
    }

    /// Appends one interaction: clicks and per-item propensities of the
    /// ranking that was shown.
    pub fn push_interaction(&mut self, x: &[f64], clicks: &[bool], propensities: &[f64]) -> Result<()> {
        if self.objective != Objective::Unbiased {
            return Err(Error::Contract("click rows need an unbiased log".into()));
        }
        self.check_row(x, clicks.len())?;
        self.check_row(x, propensities.len())?;
        if let Some(&p) = propensities.iter().find(|&&p| !(p > 0.0)) {
            return Err(Error::ZeroPropensity(p));
        }
        self.features.extend_from_slice(x);
        for (&c, &p) in clicks.iter().zip(propensities) {
            let c = c as u8 as f64;
            self.weight.push(c / p);
            self.offset.push(c * c / p);
        }
        Ok(())
    }

    /// Appends one fully labeled row (skyline / testing only).
    pub fn push_labeled(&mut self, x: &[f64], relevance: &[bool]) -> Result<()> {
        if self.objective != Objective::FullInfo {
            return Err(Error::Contract("labeled rows need a full-information log".into()));
        }
        self.check_row(x, relevance.len())?;
        self.features.extend_from_slice(x);
        for &r in relevance {
            let r = r as u8 as f64;
            self.weight.push(r);
            self.offset.push(r * r);
        }
        Ok(())
    }

    fn features_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.feature_dim), &self.features).expect("row-major log")
    }

    fn weight_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.n_items), &self.weight).expect("row-major log")
    }

    fn offset_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.n_items), &self.offset).expect("row-major log")
    }
}

fn check_compatible(model: &RegressionModel, log: &TrainingLog) -> Result<()> {
    if model.input_dim() != log.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: log.feature_dim,
        });
    }
    if model.output_dim() != log.n_items {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            actual: log.n_items,
        });
    }
    Ok(())
}

/// Objective value for the log, whichever objective it was built for.
pub fn loss(model: &RegressionModel, log: &TrainingLog) -> Result<f64> {
    check_compatible(model, log)?;
    if log.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let y = model.forward(log.features_view()).output;
    let mut total = 0.0;
    Zip::from(&y)
        .and(&log.weight_view())
        .and(&log.offset_view())
        .for_each(|&y, &a, &b| total += y * y - 2.0 * a * y + b);
    Ok(total)
}

/// Propensity-weighted click objective.
pub fn unbiased_loss(model: &RegressionModel, log: &InteractionLog) -> Result<f64> {
    if log.objective != Objective::Unbiased {
        return Err(Error::Contract("unbiased loss needs a click log".into()));
    }
    loss(model, log)
}

/// Least-squares objective on true relevances.
pub fn full_info_loss(model: &RegressionModel, log: &TrainingLog) -> Result<f64> {
    if log.objective != Objective::FullInfo {
        return Err(Error::Contract("full-information loss needs a labeled log".into()));
    }
    loss(model, log)
}

/// Loss and its exact gradient by backpropagation.
pub fn gradient(model: &RegressionModel, log: &TrainingLog) -> Result<(f64, Params)> {
    check_compatible(model, log)?;
    if log.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let x = log.features_view();
    let Forward { hidden, output } = model.forward(x);
    let mut total = 0.0;
    // dL/dz through the logistic: (2y - 2a) * y * (1 - y)
    let mut dz = Array2::<f64>::zeros(output.raw_dim());
    Zip::from(&mut dz)
        .and(&output)
        .and(&log.weight_view())
        .and(&log.offset_view())
        .for_each(|dz, &y, &a, &b| {
            total += y * y - 2.0 * a * y + b;
            *dz = 2.0 * (y - a) * y * (1.0 - y);
        });
    let p = model.params();
    let grad_w2 = hidden.t().dot(&dz);
    let grad_b2 = dz.sum_axis(Axis(0));
    let mut dh = dz.dot(&p.w2.t());
    Zip::from(&mut dh).and(&hidden).for_each(|g, &h| {
        if h <= 0.0 {
            *g = 0.0;
        }
    });
    let grad_w1 = x.t().dot(&dh);
    let grad_b1 = dh.sum_axis(Axis(0));
    Ok((
        total,
        Params {
            w1: grad_w1,
            b1: grad_b1,
            w2: grad_w2,
            b2: grad_b2,
        },
    ))
}

/// Adam optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Option<Params>,
    second: Option<Params>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut Params, grad: &Params) {
        let first = self.first.get_or_insert_with(|| Params::zeros_like(params));
        let second = self.second.get_or_insert_with(|| Params::zeros_like(params));
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let mut grad = grad.clone();
        let gs = grad.slices_mut();
        let ms = first.slices_mut();
        let vs = second.slices_mut();
        let ps = params.slices_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Full-batch Adam for `epochs` steps. Returns the loss before each step.
pub fn train(model: &mut RegressionModel, log: &TrainingLog, optimizer: &mut Adam, epochs: usize) -> Result<Vec<f64>> {
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (value, grad) = gradient(model, log)?;
        if !value.is_finite() {
            return Err(Error::TrainingDiverged(format!("loss {value} at epoch {epoch}")));
        }
        history.push(value);
        optimizer.apply(model.params_mut(), &grad);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_log(objective: Objective) -> TrainingLog {
        let mut log = TrainingLog::new(objective, 2, 2);
        let rows = [([1.0, 0.0], [true, false]), ([0.0, 1.0], [false, true])];
        for (x, r) in rows {
            match objective {
                Objective::Unbiased => log.push_interaction(&x, &r, &[1.0, 1.0]).unwrap(),
                Objective::FullInfo => log.push_labeled(&x, &r).unwrap(),
            }
        }
        log
    }

    fn constant_model(output: f64, n: usize) -> RegressionModel {
        let mut m = RegressionModel::zeros(1, 1, n);
        let z = (output / (1.0 - output)).ln();
        m.params_mut().b2.fill(z);
        m
    }

    #[test]
    fn unbiased_loss_examples() {
        let model = constant_model(0.5, 1);
        let mut log = TrainingLog::new(Objective::Unbiased, 1, 1);
        log.push_interaction(&[0.0], &[true], &[0.5]).unwrap();
        assert!((unbiased_loss(&model, &log).unwrap() - 0.25).abs() < 1e-12);

        let mut log = TrainingLog::new(Objective::Unbiased, 1, 1);
        log.push_interaction(&[0.0], &[false], &[0.5]).unwrap();
        assert!((unbiased_loss(&model, &log).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_prediction_without_clicks_has_zero_loss() {
        let mut model = RegressionModel::zeros(1, 1, 2);
        model.params_mut().b2.fill(-800.0);
        let mut log = TrainingLog::new(Objective::Unbiased, 1, 2);
        log.push_interaction(&[1.0], &[false, false], &[1.0, 0.5]).unwrap();
        assert_eq!(unbiased_loss(&model, &log).unwrap(), 0.0);
    }

    #[test]
    fn zero_propensity_rejected() {
        let mut log = TrainingLog::new(Objective::Unbiased, 1, 1);
        assert!(matches!(
            log.push_interaction(&[0.0], &[true], &[0.0]),
            Err(Error::ZeroPropensity(_))
        ));
    }

    #[test]
    fn full_info_examples() {
        let model = constant_model(0.5, 1);
        let mut log = TrainingLog::new(Objective::FullInfo, 1, 1);
        log.push_labeled(&[0.0], &[true]).unwrap();
        assert!((full_info_loss(&model, &log).unwrap() - 0.25).abs() < 1e-12);
        assert!(unbiased_loss(&model, &log).is_err());
    }

    #[test]
    fn predict_with_zero_weights_is_half() {
        let model = RegressionModel::zeros(3, 4, 5);
        assert_eq!(model.predict(&[0.3, -1.0, 2.0]).unwrap(), vec![0.5; 5]);
        assert!(matches!(
            model.predict(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn raising_output_bias_only_moves_that_item() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = RegressionModel::new(3, 8, 4, &mut rng);
        let x = [0.2, -0.4, 0.9];
        let before = model.predict(&x).unwrap();
        model.params_mut().b2[2] += 0.5;
        let after = model.predict(&x).unwrap();
        for d in 0..4 {
            if d == 2 {
                assert!(after[d] > before[d]);
            } else {
                assert_eq!(after[d], before[d]);
            }
        }
        assert_eq!(model.predict(&x).unwrap(), after);
    }

    #[test]
    fn parameter_count_matches_layout() {
        let model = RegressionModel::zeros(50, 64, 100);
        assert_eq!(model.parameter_count(), 50 * 64 + 64 + 64 * 100 + 100);
    }

    #[test]
    fn duplicated_log_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = RegressionModel::new(2, 5, 2, &mut rng);
        let log = toy_log(Objective::Unbiased);
        let mut doubled = log.clone();
        doubled
            .push_interaction(&[1.0, 0.0], &[true, false], &[1.0, 1.0])
            .unwrap();
        doubled
            .push_interaction(&[0.0, 1.0], &[false, true], &[1.0, 1.0])
            .unwrap();
        let (l1, g1) = gradient(&model, &log).unwrap();
        let (l2, g2) = gradient(&model, &doubled).unwrap();
        assert!((2.0 * l1 - l2).abs() < 1e-12);
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_perfect_interior_fit() {
        // Targets equal to the model's own predictions.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = RegressionModel::new(2, 4, 3, &mut rng);
        let mut log = TrainingLog::new(Objective::FullInfo, 2, 3);
        log.push_labeled(&[0.4, -0.2], &[false; 3]).unwrap();
        let y = model.predict(&[0.4, -0.2]).unwrap();
        log.weight = y.clone();
        log.offset = y.iter().map(|v| v * v).collect();
        let (value, grad) = gradient(&model, &log).unwrap();
        assert!(value.abs() < 1e-12);
        let norm: f64 = grad.to_flat().iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn training_fits_separable_toy() {
        let log = toy_log(Objective::Unbiased);
        let full = toy_log(Objective::FullInfo);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut model = RegressionModel::new(2, DEFAULT_HIDDEN, 2, &mut rng);
        // Full examination: the click objective is the least-squares one.
        assert!((unbiased_loss(&model, &log).unwrap() - full_info_loss(&model, &full).unwrap()).abs() < 1e-12);
        let start = unbiased_loss(&model, &log).unwrap();
        let mut adam = Adam::default();
        let history = train(&mut model, &log, &mut adam, 200).unwrap();
        let end = unbiased_loss(&model, &log).unwrap();
        assert!(end <= 0.5 * start, "start {start} end {end}");
        assert!(history.windows(2).filter(|w| w[1] > w[0] + 1e-9).count() < 10);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let log = toy_log(Objective::Unbiased);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = RegressionModel::new(2, 6, 2, &mut rng);
        let before = model.clone();
        train(&mut model, &log, &mut Adam::new(0.0), 20).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let log = toy_log(Objective::Unbiased);
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut model = RegressionModel::new(2, 6, 2, &mut rng);
            train(&mut model, &log, &mut Adam::default(), 30).unwrap();
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = RegressionModel::new(3, 4, 2, &mut rng);
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(RegressionModel::from_checkpoint(&back).unwrap(), model);
        let mut broken = back.clone();
        broken.b1.pop();
        assert!(RegressionModel::from_checkpoint(&broken).is_err());
    }
}
