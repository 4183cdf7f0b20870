use rayon::prelude::*;

use super::{CustomerProfile, GroundTruthModel, RiskInputs, SimConfig};
use crate::error::{Error, Result};

/// Exact expected monthly reclamation rate without interventions: draws per
/// active customer-month, both taken in expectation.
///
/// For a customer let `p0(u)` / `p1(u)` be the month-`u` risk without / with
/// an already detected reclamation, averaged over the income draw. While no
/// reclamation has been drawn the risk is `p0`, so the chance that none was
/// drawn up to month `s` is `Q(s) = Π_{u<=s} (1 - p0(u))` and the chance
/// that one is visible at month `t` is `1 - Q(t - lag)`.
pub fn expected_rate(model: &GroundTruthModel, population: &[CustomerProfile], config: &SimConfig) -> f64 {
    let horizon = config.horizon_months;
    let (draws, exposure) = population
        .par_iter()
        .map(|c| {
            let mut q = Vec::with_capacity(horizon as usize);
            let mut no_draw = 1.0;
            let mut survival = 1.0;
            let (mut draws, mut exposure) = (0.0, 0.0);
            for t in 0..horizon {
                if t >= c.attributes.max_benefit_months {
                    break;
                }
                let double_payment = c.four_weekly_pay && config.month(t).month() == c.double_pay_month;
                let risk = |prev: bool| {
                    let p = |income: bool| {
                        model.probability(&RiskInputs {
                            income,
                            previous_reclamation: prev,
                            double_payment,
                            age: c.attributes.age,
                            opened: false,
                            clicked: false,
                        })
                    };
                    c.has_income_prob * p(true) + (1.0 - c.has_income_prob) * p(false)
                };
                let (p0, p1) = (risk(false), risk(true));
                let visible = if t >= model.detection_lag {
                    1.0 - q[(t - model.detection_lag) as usize]
                } else {
                    0.0
                };
                draws += survival * ((1.0 - visible) * p0 + visible * p1);
                exposure += survival;
                no_draw *= 1.0 - p0;
                q.push(no_draw);
                survival *= 1.0 - c.monthly_exit_prob;
            }
            (draws, exposure)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if exposure > 0.0 {
        draws / exposure
    } else {
        0.0
    }
}

/// Bisects the intercept over [-20, 20] so the expected monthly rate equals
/// `config.target_base_rate` (to well below 0.1 percentage points).
pub fn calibrate_intercept(
    model: &GroundTruthModel,
    population: &[CustomerProfile],
    config: &SimConfig,
) -> Result<GroundTruthModel> {
    if population.is_empty() {
        return Err(Error::Config("cannot calibrate on an empty population".into()));
    }
    let target = config.target_base_rate;
    let rate_at = |b0: f64| expected_rate(&GroundTruthModel { b0, ..*model }, population, config);
    let (mut lo, mut hi) = (-20.0, 20.0);
    if rate_at(lo) > target || rate_at(hi) < target {
        return Err(Error::CalibrationUnreachable { target });
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(GroundTruthModel {
        b0: 0.5 * (lo + hi),
        ..*model
    })
}
