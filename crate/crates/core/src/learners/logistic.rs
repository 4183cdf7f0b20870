//! L2-regularized logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use super::{check_labels, sigmoid, HyperParams, Matrix};
use crate::error::{Error, Result};

const MIN_STD: f64 = 1e-12;

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation; 1 for constant features.
    pub std: Vec<f64>,
    /// Features that were constant at fit time (weight held at zero).
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut std = Vec::with_capacity(d);
        let mut constant = Vec::with_capacity(d);
        for s in var {
            let sd = (s / n).sqrt();
            let is_const = !(sd > MIN_STD);
            constant.push(is_const);
            std.push(if is_const { 1.0 } else { sd });
        }
        Self { mean, std, constant }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (x[j] - self.mean[j]) / self.std[j];
        }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut data = Vec::with_capacity(x.rows() * x.cols());
        let mut buf = vec![0.0; x.cols()];
        for row in x.iter_rows() {
            self.apply(row, &mut buf);
            data.extend_from_slice(&buf);
        }
        Matrix::new(x.rows(), x.cols(), data).expect("same shape")
    }

    pub fn inverse(&self, z: &Matrix) -> Matrix {
        let mut data = Vec::with_capacity(z.rows() * z.cols());
        for row in z.iter_rows() {
            data.extend(row.iter().enumerate().map(|(j, v)| v * self.std[j] + self.mean[j]));
        }
        Matrix::new(z.rows(), z.cols(), data).expect("same shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// Beta values on the standardized scale.
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub standardization: Standardization,
}

impl LinearModel {
    pub fn dimension(&self) -> usize {
        self.weights.len()
    }

    /// `intercept + weights . standardize(x)`
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        let s = &self.standardization;
        Ok(self.intercept
            + self
                .weights
                .iter()
                .enumerate()
                .map(|(j, w)| w * (x[j] - s.mean[j]) / s.std[j])
                .sum::<f64>())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.logit(x).map(sigmoid)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Weighted mean negative log-likelihood plus `lambda/2 * |w|^2` over an
/// already standardized design. Parameters are `[w_0 .. w_{d-1}, intercept]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    x: &'a Matrix,
    y: Vec<f64>,
    sample_weight: Vec<f64>,
    weight_total: f64,
    lambda: f64,
    frozen: Vec<bool>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: &'a Matrix, y: &[bool], lambda: f64, positive_weight: f64) -> Self {
        let sample_weight: Vec<f64> = y.iter().map(|&l| if l { positive_weight } else { 1.0 }).collect();
        Self {
            x,
            y: y.iter().map(|&l| f64::from(u8::from(l))).collect(),
            weight_total: sample_weight.iter().sum(),
            sample_weight,
            lambda,
            frozen: vec![false; x.cols()],
        }
    }

    /// Hold the given weights at their current value (zero gradient).
    pub fn with_frozen(mut self, frozen: Vec<bool>) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn dimension(&self) -> usize {
        self.x.cols() + 1
    }

    fn margin(&self, params: &[f64], row: &[f64]) -> f64 {
        let d = row.len();
        params[d] + row.iter().zip(&params[..d]).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let d = self.x.cols();
        let nll: f64 = self
            .x
            .iter_rows()
            .zip(&self.y)
            .zip(&self.sample_weight)
            .map(|((row, y), c)| {
                let z = self.margin(params, row);
                c * (softplus(z) - y * z)
            })
            .sum();
        let penalty: f64 = params[..d].iter().map(|w| w * w).sum();
        nll / self.weight_total + 0.5 * self.lambda * penalty
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let d = self.x.cols();
        let mut g = vec![0.0; d + 1];
        for ((row, y), c) in self.x.iter_rows().zip(&self.y).zip(&self.sample_weight) {
            let r = c * (sigmoid(self.margin(params, row)) - y);
            for (gj, xj) in g[..d].iter_mut().zip(row) {
                *gj += r * xj;
            }
            g[d] += r;
        }
        for gj in g.iter_mut() {
            *gj /= self.weight_total;
        }
        for j in 0..d {
            g[j] += self.lambda * params[j];
            if self.frozen[j] {
                g[j] = 0.0;
            }
        }
        g
    }
}

/// Objective values after each accepted step, starting with the initial point.
pub type LossTrace = Vec<f64>;

pub fn fit_logistic(x: &Matrix, y: &[bool], hp: &HyperParams) -> Result<LinearModel> {
    fit_logistic_traced(x, y, hp).map(|(m, _)| m)
}

/// Gradient descent from zero with step halving on loss increase; the step
/// grows back towards `learning_rate` after each accepted move.
pub fn fit_logistic_traced(x: &Matrix, y: &[bool], hp: &HyperParams) -> Result<(LinearModel, LossTrace)> {
    hp.validate()?;
    check_labels(y)?;
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch(format!("{} rows vs {} labels", x.rows(), y.len())));
    }
    let standardization = Standardization::fit(x);
    let z = standardization.transform(x);
    let objective = LogisticObjective::new(&z, y, hp.l2_lambda, hp.positive_weight)
        .with_frozen(standardization.constant.clone());

    let d = x.cols();
    let mut params = vec![0.0; d + 1];
    let mut loss = objective.value(&params);
    let mut losses = vec![loss];
    let mut step = hp.learning_rate;
    let mut trial = vec![0.0; d + 1];
    'outer: for _ in 0..hp.max_iters {
        let g = objective.gradient(&params);
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax < hp.grad_tolerance {
            break;
        }
        loop {
            for ((t, p), gj) in trial.iter_mut().zip(&params).zip(&g) {
                *t = p - step * gj;
            }
            let candidate = objective.value(&trial);
            if candidate <= loss {
                std::mem::swap(&mut params, &mut trial);
                loss = candidate;
                losses.push(loss);
                step = (step * 2.0).min(hp.learning_rate);
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                break 'outer;
            }
        }
    }

    let intercept = params[d];
    params.truncate(d);
    for (w, c) in params.iter_mut().zip(&standardization.constant) {
        if *c {
            *w = 0.0;
        }
    }
    Ok((
        LinearModel {
            weights: params,
            intercept,
            standardization,
        },
        losses,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, n: usize, d: usize) -> (Matrix, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut y: Vec<bool> = rows.iter().map(|r| r[0] + 0.5 * r[1] + rng.random_range(-1.0..1.0) > 0.0).collect();
        y[0] = true;
        y[1] = false;
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn antisymmetric_pair_has_zero_intercept() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let m = fit_logistic(&x, &[false, true], &HyperParams::logistic(1.0)).unwrap();
        assert!(m.weights[0] > 0.0);
        assert!(m.intercept.abs() < 1e-9, "{}", m.intercept);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let err = fit_logistic(&x, &[true, true], &HyperParams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels));
        assert_eq!(err.to_string().split(':').next().unwrap(), "degenerate labels");
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LinearModel {
            weights: vec![0.0; 3],
            intercept: 0.0,
            standardization: Standardization::identity(3),
        };
        assert_eq!(m.predict_proba(&[5.0, -2.0, 1e6]).unwrap(), 0.5);
        assert!(m.predict_proba(&[1.0]).is_err());
    }

    #[test]
    fn loss_never_increases() {
        let (x, y) = random_problem(3, 200, 4);
        let hp = HyperParams {
            learning_rate: 50.0,
            ..HyperParams::logistic(0.01)
        };
        let (_, losses) = fit_logistic_traced(&x, &y, &hp).unwrap();
        assert!(losses.len() > 2);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn constant_feature_gets_zero_weight() {
        let (x, y) = random_problem(5, 50, 2);
        let rows: Vec<Vec<f64>> = x.iter_rows().map(|r| vec![r[0], 7.0, r[1]]).collect();
        let x3 = Matrix::from_rows(&rows).unwrap();
        let m = fit_logistic(&x3, &y, &HyperParams::default()).unwrap();
        assert_eq!(m.weights[1], 0.0);
        assert_eq!(m.standardization.std[1], 1.0);
    }

    #[test]
    fn destandardized_refit_predicts_the_same() {
        let (x, y) = random_problem(11, 120, 3);
        let hp = HyperParams::default();
        let a = fit_logistic(&x, &y, &hp).unwrap();
        let round_trip = a.standardization.inverse(&a.standardization.transform(&x));
        let b = fit_logistic(&round_trip, &y, &hp).unwrap();
        for row in x.iter_rows() {
            let (pa, pb) = (a.predict_proba(row).unwrap(), b.predict_proba(row).unwrap());
            assert!((pa - pb).abs() < 1e-9, "{pa} vs {pb}");
        }
    }

    #[test]
    fn deterministic() {
        let (x, y) = random_problem(2, 80, 3);
        let hp = HyperParams::default();
        assert_eq!(fit_logistic(&x, &y, &hp).unwrap(), fit_logistic(&x, &y, &hp).unwrap());
    }
}
