//! Discrete AdaBoost over decision stumps.

use serde::{Deserialize, Serialize};

use super::{check_labels, sigmoid, HyperParams, Matrix};
use crate::error::{Error, Result};

const MIN_EPSILON: f64 = 1e-10;

/// `alpha` for a perfect stump: `0.5 * ln((1 - 1e-10) / 1e-10)`.
pub const ALPHA_CAP: f64 = 11.512_925_464_920_228;

/// `h(x) = polarity` if `x[feature] > threshold`, else `-polarity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: i8,
}

impl Stump {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        let p = f64::from(self.polarity);
        if x[self.feature] > self.threshold {
            p
        } else {
            -p
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    pub stump: Stump,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    rounds: Vec<BoostRound>,
    dimension: usize,
}

impl BoostModel {
    pub fn from_rounds(rounds: Vec<BoostRound>, dimension: usize) -> Self {
        Self { rounds, dimension }
    }

    pub fn rounds(&self) -> &[BoostRound] {
        &self.rounds
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The model after its first `n` rounds; identical to fitting with
    /// `num_rounds = n`.
    pub fn truncated(&self, n: usize) -> BoostModel {
        BoostModel {
            rounds: self.rounds[..n.min(self.rounds.len())].to_vec(),
            dimension: self.dimension,
        }
    }

    /// `F(x) = sum alpha_t h_t(x)`
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: x.len(),
            });
        }
        Ok(self.rounds.iter().map(|r| r.alpha * r.stump.predict(x)).sum())
    }

    /// `sigmoid(2 F(x))`
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.margin(x).map(|f| sigmoid(2.0 * f))
    }
}

/// Per-round diagnostics from [`fit_adaboost_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub epsilon: f64,
    pub weight_sum: f64,
    pub training_error: f64,
}

/// Distinct sorted values of one feature and each row's position among them.
struct FeatureBins {
    values: Vec<f64>,
    bin_of_row: Vec<u32>,
}

impl FeatureBins {
    fn build(x: &Matrix, j: usize) -> Self {
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.sort_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)));
        let mut values = Vec::new();
        let mut bin_of_row = vec![0u32; x.rows()];
        for &i in &order {
            let v = x.get(i, j);
            if values.last() != Some(&v) {
                values.push(v);
            }
            bin_of_row[i] = (values.len() - 1) as u32;
        }
        Self { values, bin_of_row }
    }
}

struct Candidate {
    stump: Stump,
    error: f64,
}

fn best_stump(bins: &[FeatureBins], y: &[f64], w: &[f64], pos: &mut Vec<f64>, neg: &mut Vec<f64>) -> Option<Candidate> {
    let total: f64 = w.iter().sum();
    let mut best: Option<Candidate> = None;
    for (j, fb) in bins.iter().enumerate() {
        let nb = fb.values.len();
        if nb < 2 {
            continue;
        }
        pos.clear();
        pos.resize(nb, 0.0);
        neg.clear();
        neg.resize(nb, 0.0);
        for ((b, yi), wi) in fb.bin_of_row.iter().zip(y).zip(w) {
            if *yi > 0.0 {
                pos[*b as usize] += wi;
            } else {
                neg[*b as usize] += wi;
            }
        }
        let total_neg: f64 = neg.iter().sum();
        let (mut left_pos, mut left_neg) = (0.0, 0.0);
        for k in 0..nb - 1 {
            left_pos += pos[k];
            left_neg += neg[k];
            // polarity +1 predicts +1 right of the threshold
            let err_plus = left_pos + (total_neg - left_neg);
            let err_minus = total - err_plus;
            for (polarity, error) in [(1i8, err_plus), (-1i8, err_minus)] {
                if best.as_ref().is_none_or(|b| error < b.error) {
                    best = Some(Candidate {
                        stump: Stump {
                            feature: j,
                            threshold: 0.5 * (fb.values[k] + fb.values[k + 1]),
                            polarity,
                        },
                        error,
                    });
                }
            }
        }
    }
    best
}

pub fn fit_adaboost(x: &Matrix, y: &[bool], hp: &HyperParams) -> Result<BoostModel> {
    fit_adaboost_traced(x, y, hp).map(|(m, _)| m)
}

/// Runs up to `hp.num_rounds` rounds. Stops early when the best stump has
/// weighted error >= 0.5 (round discarded) or is perfect (round kept with
/// alpha = [`ALPHA_CAP`]).
pub fn fit_adaboost_traced(x: &Matrix, y: &[bool], hp: &HyperParams) -> Result<(BoostModel, Vec<RoundTrace>)> {
    hp.validate()?;
    check_labels(y)?;
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch(format!("{} rows vs {} labels", x.rows(), y.len())));
    }
    let n = x.rows();
    let ys: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let bins: Vec<FeatureBins> = (0..x.cols()).map(|j| FeatureBins::build(x, j)).collect();

    let mut w: Vec<f64> = y.iter().map(|&l| if l { hp.positive_weight } else { 1.0 }).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|wi| *wi /= s);

    let mut margins = vec![0.0; n];
    let mut rounds = Vec::new();
    let mut traces = Vec::new();
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for _ in 0..hp.num_rounds {
        let Some(cand) = best_stump(&bins, &ys, &w, &mut pos, &mut neg) else {
            break;
        };
        if cand.error >= 0.5 {
            break;
        }
        let perfect = cand.error < MIN_EPSILON;
        let eps = cand.error.max(MIN_EPSILON);
        let alpha = if perfect { ALPHA_CAP } else { 0.5 * ((1.0 - eps) / eps).ln() };

        let stump = cand.stump;
        let fb = &bins[stump.feature];
        let mut sum = 0.0;
        let mut wrong = 0usize;
        for i in 0..n {
            let v = fb.values[fb.bin_of_row[i] as usize];
            let h = if v > stump.threshold {
                f64::from(stump.polarity)
            } else {
                -f64::from(stump.polarity)
            };
            w[i] *= (-alpha * ys[i] * h).exp();
            sum += w[i];
            margins[i] += alpha * h;
            if margins[i] * ys[i] <= 0.0 {
                wrong += 1;
            }
        }
        w.iter_mut().for_each(|wi| *wi /= sum);
        rounds.push(BoostRound { stump, alpha });
        traces.push(RoundTrace {
            epsilon: cand.error,
            weight_sum: w.iter().sum(),
            training_error: wrong as f64 / n as f64,
        });
        if perfect {
            break;
        }
    }
    Ok((BoostModel::from_rounds(rounds, x.cols()), traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_d(xs: &[f64]) -> Matrix {
        let rows: Vec<Vec<f64>> = xs.iter().map(|v| vec![*v]).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn alpha_cap_matches_formula() {
        let eps: f64 = 1e-10;
        assert!((ALPHA_CAP - 0.5 * ((1.0 - eps) / eps).ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_in_one_round() {
        let x = one_d(&[0.0, 1.0, 2.0, 3.0]);
        let (m, t) = fit_adaboost_traced(&x, &[false, false, true, true], &HyperParams::boosting(50)).unwrap();
        assert_eq!(m.rounds().len(), 1);
        assert_eq!(t[0].training_error, 0.0);
        let s = m.rounds()[0].stump;
        assert_eq!((s.feature, s.threshold, s.polarity), (0, 1.5, 1));
        assert_eq!(m.rounds()[0].alpha, ALPHA_CAP);
    }

    #[test]
    fn empty_model_is_neutral() {
        let m = BoostModel::from_rounds(vec![], 2);
        assert_eq!(m.predict_proba(&[3.0, 4.0]).unwrap(), 0.5);
        assert!(m.predict_proba(&[3.0]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let x = one_d(&[0.0, 1.0]);
        assert!(matches!(
            fit_adaboost(&x, &[false, false], &HyperParams::boosting(5)),
            Err(Error::DegenerateLabels)
        ));
    }

    #[test]
    fn truncation_equals_shorter_fit() {
        let x = one_d(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let y = [true, false, true, false, false, true, true, false];
        let long = fit_adaboost(&x, &y, &HyperParams::boosting(12)).unwrap();
        let short = fit_adaboost(&x, &y, &HyperParams::boosting(5)).unwrap();
        assert_eq!(long.truncated(5), short);
    }

    #[test]
    fn constant_features_yield_empty_model() {
        let x = one_d(&[1.0, 1.0, 1.0]);
        let m = fit_adaboost(&x, &[true, false, true], &HyperParams::boosting(5)).unwrap();
        assert!(m.rounds().is_empty());
    }
}
