//! Two-proportion z-test, Wald intervals, 2x2 chi-square and Welch's t.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

const Z_975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub name: String,
    /// Independent units observed (cases, in the experiment harness).
    pub n: usize,
    pub reclamations: usize,
    pub rate: f64,
    /// Wald 95% interval, clipped to [0, 1].
    pub ci_low: f64,
    pub ci_high: f64,
}

impl GroupStats {
    pub fn from_counts(name: impl Into<String>, n: usize, reclamations: usize) -> Self {
        let rate = if n > 0 { reclamations as f64 / n as f64 } else { 0.0 };
        let half = if n > 0 {
            Z_975 * (rate * (1.0 - rate) / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            name: name.into(),
            n,
            reclamations,
            rate,
            ci_low: (rate - half).max(0.0),
            ci_high: (rate + half).min(1.0),
        }
    }

    fn small_count(&self) -> bool {
        let n = self.n as f64;
        n * self.rate < 5.0 || n * (1.0 - self.rate) < 5.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateComparison {
    pub control: String,
    pub experimental: String,
    /// Experimental rate minus control rate.
    pub difference: f64,
    pub z: f64,
    pub p_value: f64,
    /// Some group has fewer than 5 expected successes or failures.
    pub small_count_warning: bool,
}

impl RateComparison {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn normal_two_sided(z: f64) -> f64 {
    let n = Normal::standard();
    (2.0 * n.sf(z.abs())).min(1.0)
}

/// Pooled-variance z statistic and two-sided p for `c2/n2 - c1/n1`.
pub fn two_proportion_test(c1: usize, n1: usize, c2: usize, n2: usize) -> (f64, f64) {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let pooled = (c1 + c2) as f64 / (n1f + n2f);
    let se = (pooled * (1.0 - pooled) * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let diff = c2 as f64 / n2f - c1 as f64 / n1f;
    if se == 0.0 || !se.is_finite() {
        return (0.0, 1.0);
    }
    let z = diff / se;
    (z, normal_two_sided(z))
}

pub fn analyze_rates(control: &GroupStats, experimental: &GroupStats) -> Result<RateComparison> {
    for g in [control, experimental] {
        if g.n == 0 {
            return Err(Error::EmptyGroup(g.name.clone()));
        }
    }
    let (z, p_value) = two_proportion_test(control.reclamations, control.n, experimental.reclamations, experimental.n);
    Ok(RateComparison {
        control: control.name.clone(),
        experimental: experimental.name.clone(),
        difference: experimental.rate - control.rate,
        z,
        p_value,
        small_count_warning: control.small_count() || experimental.small_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Pearson chi-square (no continuity correction) on the table
/// `[[a, b], [c, d]]`. Tables with an empty margin give statistic 0, p 1.
pub fn chi_square_2x2(a: usize, b: usize, c: usize, d: usize) -> TestResult {
    let (a, b, c, d) = (a as f64, b as f64, c as f64, d as f64);
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom == 0.0 {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    let statistic = n * (a * d - b * c).powi(2) / denom;
    let dist = ChiSquared::new(1.0).expect("valid dof");
    TestResult {
        statistic,
        p_value: dist.sf(statistic),
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance t-test for `mean(x) - mean(y)`; both samples
/// need at least two values.
pub fn welch_t(x: &[f64], y: &[f64]) -> Option<WelchResult> {
    if x.len() < 2 || y.len() < 2 {
        return None;
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let (sx, sy) = (vx / x.len() as f64, vy / y.len() as f64);
    let se2 = sx + sy;
    if se2 == 0.0 {
        let same = mx == my;
        return Some(WelchResult {
            t: if same { 0.0 } else { f64::INFINITY.copysign(mx - my) },
            df: (x.len() + y.len() - 2) as f64,
            p_value: if same { 1.0 } else { 0.0 },
        });
    }
    let t = (mx - my) / se2.sqrt();
    let df = se2.powi(2) / (sx.powi(2) / (x.len() - 1) as f64 + sy.powi(2) / (y.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive dof");
    Some(WelchResult {
        t,
        df,
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
    })
}
