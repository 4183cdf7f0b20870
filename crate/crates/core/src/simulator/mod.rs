//! Synthetic unemployment-benefit logs with a latent reclamation model and an
//! email-intervention funnel.
//!
//! Each customer is active from the first simulated month until they exit
//! (monthly hazard or benefit entitlement exhausted). Every active month `t`
//! is an income month: the income form is initialised on day 15-20 of `t`,
//! then sent, checked and paid in month `t + 1`. A reclamation is drawn per
//! income month and detected `detection_lag` months later.
//!
//! All random draws for customer `c` in month `t` come from a stream keyed by
//! `(seed, c, t)` and are consumed in a fixed order, so two runs that differ
//! only in the intervention policy see the same draws (common random numbers).

mod calibrate;
mod population;
mod run;

pub use calibrate::{calibrate_intercept, expected_rate};
pub use population::{generate_population, CustomerProfile};
pub use run::{
    realized_rate, simulate, write_outcomes, write_outcomes_file, EmailAll, NoEmail, OutcomeRecord, Policy,
    PolicyContext, SimulationOutput,
};

use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::config::{parse_value, unknown_key, Configurable};
use crate::error::{Error, Result};
use crate::event_log::DEFAULT_RECLAMATION_ACTIVITY;

pub const INITIALIZE_INCOME_FORM: &str = "Initialize the Income Form";
pub const SEND_INCOME_FORM: &str = "Send Income Form";
pub const CHECK_INCOME_FORM: &str = "Check Income Form";
pub const ADJUST_BENEFITS: &str = "Adjust Benefits";
pub const PAY_BENEFITS: &str = "Pay Benefits";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub population_size: usize,
    pub horizon_months: u32,
    pub start: YearMonth,
    pub target_base_rate: f64,
    pub open_rate: f64,
    /// Beta concentration of per-customer open propensities.
    pub open_concentration: f64,
    pub click_rate_given_open: f64,
    /// Strength of the coupling between click propensity and static risk.
    pub click_risk_coupling: f64,
    pub income_prob_mean: f64,
    pub income_prob_concentration: f64,
    pub four_weekly_share: f64,
    pub monthly_exit_prob: f64,
    pub max_benefit_min: u32,
    pub max_benefit_max: u32,
    pub age_min: u32,
    pub age_max: u32,
    /// Case ids are `case_id_offset + i`, so separate populations can be kept disjoint.
    pub case_id_offset: u64,
    pub seed: u64,
    pub reclamation_activity: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population_size: 10_000,
            horizon_months: 6,
            start: YearMonth::new(2017, 1).expect("valid month"),
            target_base_rate: 0.04,
            open_rate: 0.602,
            open_concentration: 4.0,
            click_rate_given_open: 0.0723,
            click_risk_coupling: 1.0,
            income_prob_mean: 0.35,
            income_prob_concentration: 2.0,
            four_weekly_share: 0.25,
            monthly_exit_prob: 0.08,
            max_benefit_min: 3,
            max_benefit_max: 24,
            age_min: 18,
            age_max: 66,
            case_id_offset: 100_000,
            seed: 0,
            reclamation_activity: DEFAULT_RECLAMATION_ACTIVITY.to_string(),
        }
    }
}

fn check_prob(name: &str, p: f64, open: bool) -> Result<()> {
    let ok = if open { p > 0.0 && p < 1.0 } else { (0.0..=1.0).contains(&p) };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} out of range")))
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::Config("population_size must be >= 1".into()));
        }
        if self.horizon_months == 0 {
            return Err(Error::Config("horizon_months must be >= 1".into()));
        }
        check_prob("target_base_rate", self.target_base_rate, true)?;
        check_prob("open_rate", self.open_rate, true)?;
        check_prob("click_rate_given_open", self.click_rate_given_open, true)?;
        check_prob("income_prob_mean", self.income_prob_mean, true)?;
        check_prob("four_weekly_share", self.four_weekly_share, false)?;
        check_prob("monthly_exit_prob", self.monthly_exit_prob, false)?;
        if self.open_concentration <= 0.0 || self.income_prob_concentration <= 0.0 {
            return Err(Error::Config("beta concentrations must be > 0".into()));
        }
        if self.max_benefit_min < 1 || self.max_benefit_min > self.max_benefit_max {
            return Err(Error::Config("need 1 <= max_benefit_min <= max_benefit_max".into()));
        }
        if self.age_min < 16 || self.age_min > self.age_max {
            return Err(Error::Config("need 16 <= age_min <= age_max".into()));
        }
        if self.reclamation_activity.is_empty() {
            return Err(Error::Config("reclamation_activity must be non-empty".into()));
        }
        Ok(())
    }

    pub fn month(&self, t: u32) -> YearMonth {
        self.start.add_months(t as i64)
    }
}

impl Configurable for SimConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "population_size" | "n" => self.population_size = parse_value(value)?,
            "horizon_months" | "months" => self.horizon_months = parse_value(value)?,
            "start" => self.start = value.parse().map_err(Error::Config)?,
            "target_base_rate" | "base_rate" => self.target_base_rate = parse_value(value)?,
            "open_rate" => self.open_rate = parse_value(value)?,
            "open_concentration" => self.open_concentration = parse_value(value)?,
            "click_rate_given_open" => self.click_rate_given_open = parse_value(value)?,
            "click_risk_coupling" => self.click_risk_coupling = parse_value(value)?,
            "income_prob_mean" => self.income_prob_mean = parse_value(value)?,
            "income_prob_concentration" => self.income_prob_concentration = parse_value(value)?,
            "four_weekly_share" => self.four_weekly_share = parse_value(value)?,
            "monthly_exit_prob" => self.monthly_exit_prob = parse_value(value)?,
            "max_benefit_min" => self.max_benefit_min = parse_value(value)?,
            "max_benefit_max" => self.max_benefit_max = parse_value(value)?,
            "age_min" => self.age_min = parse_value(value)?,
            "age_max" => self.age_max = parse_value(value)?,
            "case_id_offset" => self.case_id_offset = parse_value(value)?,
            "seed" => self.seed = parse_value(value)?,
            "reclamation_activity" => self.reclamation_activity = value.to_string(),
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Logit of the monthly reclamation probability:
///
/// `b0 + b_income·income + b_prev·prev + b_double·double + b_age·max(0, age-40)/10`
///
/// where `prev` is whether an earlier reclamation has already been detected
/// and `double` whether a four-weekly payer receives two payments this
/// calendar month. An opened email multiplies the odds by `theta_open`, a
/// clicked one additionally by `theta_click`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub b0: f64,
    pub b_income: f64,
    pub b_prev_reclamation: f64,
    pub b_double_payment_month: f64,
    pub b_age: f64,
    pub theta_open: f64,
    pub theta_click: f64,
    pub detection_lag: u32,
}

impl Default for GroundTruthModel {
    fn default() -> Self {
        Self {
            b0: -3.5,
            b_income: 2.0,
            b_prev_reclamation: 1.0,
            b_double_payment_month: 1.5,
            b_age: 0.2,
            theta_open: 1.0,
            theta_click: 1.0,
            detection_lag: 2,
        }
    }
}

/// Inputs of one reclamation draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskInputs {
    pub income: bool,
    pub previous_reclamation: bool,
    pub double_payment: bool,
    pub age: u32,
    pub opened: bool,
    pub clicked: bool,
}

impl GroundTruthModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_open > 0.0 && self.theta_click > 0.0) {
            return Err(Error::Config("theta values must be > 0".into()));
        }
        if self.detection_lag < 1 {
            return Err(Error::Config("detection_lag must be >= 1".into()));
        }
        Ok(())
    }

    pub fn logit(&self, x: &RiskInputs) -> f64 {
        let mut z = self.b0
            + self.b_income * f64::from(u8::from(x.income))
            + self.b_prev_reclamation * f64::from(u8::from(x.previous_reclamation))
            + self.b_double_payment_month * f64::from(u8::from(x.double_payment))
            + self.b_age * (f64::from(x.age) - 40.0).max(0.0) / 10.0;
        if x.opened {
            z += self.theta_open.ln();
            if x.clicked {
                z += self.theta_click.ln();
            }
        }
        z
    }

    pub fn probability(&self, x: &RiskInputs) -> f64 {
        crate::learners::sigmoid(self.logit(x))
    }
}

impl Configurable for GroundTruthModel {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "b0" => self.b0 = parse_value(value)?,
            "b_income" => self.b_income = parse_value(value)?,
            "b_prev_reclamation" | "b_prev" => self.b_prev_reclamation = parse_value(value)?,
            "b_double_payment_month" | "b_double" => self.b_double_payment_month = parse_value(value)?,
            "b_age" => self.b_age = parse_value(value)?,
            "theta_open" => self.theta_open = parse_value(value)?,
            "theta_click" => self.theta_click = parse_value(value)?,
            "detection_lag" => self.detection_lag = parse_value(value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}
