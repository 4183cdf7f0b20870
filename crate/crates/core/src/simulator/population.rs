use rand::distr::{Distribution, Uniform};
use rand::Rng;
use rand_distr::Beta;
use serde::{Deserialize, Serialize};

use super::SimConfig;
use crate::error::{Error, Result};
use crate::event_log::CaseAttributes;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerProfile {
    pub case_id: String,
    pub attributes: CaseAttributes,
    /// Probability of earning income next to the benefit in any given month.
    pub has_income_prob: f64,
    pub four_weekly_pay: bool,
    /// Calendar month (1-12) in which a four-weekly payer is paid twice.
    pub double_pay_month: u32,
    pub open_propensity: f64,
    pub click_propensity_base: f64,
    pub monthly_exit_prob: f64,
}

const GENDERS: [&str; 2] = ["female", "male"];
const MARITAL: [(&str, f64); 4] = [("single", 0.45), ("married", 0.35), ("divorced", 0.15), ("widowed", 0.05)];
const SECTORS: [&str; 8] = [
    "construction",
    "education",
    "healthcare",
    "hospitality",
    "industry",
    "retail",
    "services",
    "transport",
];
const CONTRACTS: [(&str, f64); 3] = [("permanent", 0.5), ("temporary", 0.35), ("on_call", 0.15)];
const DISMISSALS: [(&str, f64); 4] = [
    ("bankruptcy", 0.15),
    ("contract_end", 0.45),
    ("dismissal", 0.15),
    ("reorganization", 0.25),
];

fn pick<R: Rng>(rng: &mut R, options: &[(&str, f64)]) -> String {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (name, p) in options {
        acc += p;
        if u < acc {
            return name.to_string();
        }
    }
    options.last().expect("non-empty options").0.to_string()
}

fn beta(mean: f64, concentration: f64) -> Result<Beta<f64>> {
    Beta::new(mean * concentration, (1.0 - mean) * concentration)
        .map_err(|e| Error::Config(format!("beta({mean}, {concentration}): {e}")))
}

/// Rescales `raw` so its mean is `target` with every value capped at 1.
fn normalize_capped(raw: &[f64], target: f64) -> Vec<f64> {
    let n = raw.len() as f64;
    let mut scale = target * n / raw.iter().sum::<f64>();
    for _ in 0..100 {
        let capped: f64 = raw.iter().filter(|&&r| r * scale >= 1.0).count() as f64;
        let free: f64 = raw.iter().filter(|&&r| r * scale < 1.0).sum();
        if free <= 0.0 {
            break;
        }
        let next = (target * n - capped) / free;
        if (next - scale).abs() <= 1e-15 * scale {
            break;
        }
        scale = next;
    }
    raw.iter().map(|r| (r * scale).min(1.0)).collect()
}

/// Draws `config.population_size` customers. Attribute marginals are fixed
/// tables; the working pattern leans towards `flexible` for customers likely
/// to earn income. Click propensity is `c·exp(κ·z)` where `z` is the
/// standardised static risk proxy `has_income_prob + 0.5·four_weekly_pay`
/// and `c` sets the population mean to `click_rate_given_open`.
pub fn generate_population(config: &SimConfig, seed: u64) -> Result<Vec<CustomerProfile>> {
    config.validate()?;
    let mut rng = seeds::rng(seed, "population");
    let income = beta(config.income_prob_mean, config.income_prob_concentration)?;
    let open = beta(config.open_rate, config.open_concentration)?;
    let age = Uniform::new_inclusive(config.age_min, config.age_max).map_err(|e| Error::Config(e.to_string()))?;
    let max_benefit = Uniform::new_inclusive(config.max_benefit_min, config.max_benefit_max)
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut profiles = Vec::with_capacity(config.population_size);
    for i in 0..config.population_size {
        let has_income_prob = income.sample(&mut rng);
        let four_weekly_pay = rng.random_bool(config.four_weekly_share);
        let double_pay_month = rng.random_range(1..=12);
        let flexible = 0.1 + 0.5 * has_income_prob;
        let working_pattern = pick(&mut rng, &[("flexible", flexible), ("parttime", 0.3), ("fulltime", 1.0)]);
        let attributes = CaseAttributes {
            age: age.sample(&mut rng),
            gender: GENDERS[rng.random_range(0..GENDERS.len())].to_string(),
            marital_status: pick(&mut rng, &MARITAL),
            max_benefit_months: max_benefit.sample(&mut rng),
            sector: SECTORS[rng.random_range(0..SECTORS.len())].to_string(),
            contract_type: pick(&mut rng, &CONTRACTS),
            working_pattern,
            dismissal_reason: pick(&mut rng, &DISMISSALS),
        };
        profiles.push(CustomerProfile {
            case_id: (config.case_id_offset + i as u64).to_string(),
            attributes,
            has_income_prob,
            four_weekly_pay,
            double_pay_month,
            open_propensity: open.sample(&mut rng),
            click_propensity_base: 0.0,
            monthly_exit_prob: config.monthly_exit_prob,
        });
    }

    let proxy: Vec<f64> = profiles
        .iter()
        .map(|p| p.has_income_prob + 0.5 * f64::from(u8::from(p.four_weekly_pay)))
        .collect();
    let n = proxy.len() as f64;
    let mean = proxy.iter().sum::<f64>() / n;
    let sd = (proxy.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let raw: Vec<f64> = proxy
        .iter()
        .map(|v| {
            let z = if sd > 0.0 { (v - mean) / sd } else { 0.0 };
            (config.click_risk_coupling * z).exp()
        })
        .collect();
    for (p, c) in profiles.iter_mut().zip(normalize_capped(&raw, config.click_rate_given_open)) {
        p.click_propensity_base = c;
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_boundaries() {
        let mut c = SimConfig {
            population_size: 0,
            ..Default::default()
        };
        assert!(generate_population(&c, 1).is_err());
        c.population_size = 1;
        let p = generate_population(&c, 1).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].case_id, "100000");
    }

    #[test]
    fn deterministic() {
        let c = SimConfig {
            population_size: 200,
            ..Default::default()
        };
        assert_eq!(generate_population(&c, 9).unwrap(), generate_population(&c, 9).unwrap());
        assert_ne!(generate_population(&c, 9).unwrap(), generate_population(&c, 10).unwrap());
    }

    #[test]
    fn capped_normalisation_hits_target() {
        let raw = [1.0, 1.0, 1.0, 100.0];
        let out = normalize_capped(&raw, 0.5);
        assert_eq!(out[3], 1.0);
        assert!((out.iter().sum::<f64>() / 4.0 - 0.5).abs() < 1e-12);
    }
}
