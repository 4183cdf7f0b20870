#![allow(dead_code)]

use chrono::NaiveDate;
use parlab::event_log::{CaseAttributes, Event, EventLog, Trace};
use parlab::simulator::{calibrate_intercept, generate_population, CustomerProfile, GroundTruthModel, SimConfig};

pub fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

pub fn attrs(age: u32) -> CaseAttributes {
    CaseAttributes {
        age,
        gender: "female".into(),
        marital_status: "single".into(),
        max_benefit_months: 12,
        sector: "retail".into(),
        contract_type: "temporary".into(),
        working_pattern: "parttime".into(),
        dismissal_reason: "contract_end".into(),
    }
}

pub fn trace(case_id: &str, events: &[(&str, &str)]) -> Trace {
    let mut t = Trace::new(case_id, attrs(35));
    t.events = events
        .iter()
        .map(|(d, a)| Event {
            case_id: case_id.into(),
            date: date(d),
            activity: a.to_string(),
        })
        .collect();
    t
}

/// June ×1, July ×3, August ×3.
pub fn three_month_trace() -> Trace {
    trace(
        "25879",
        &[
            ("2017-06-20", "Initialize the Income Form"),
            ("2017-07-03", "Send Income Form"),
            ("2017-07-08", "Check Income Form"),
            ("2017-07-18", "Initialize the Income Form"),
            ("2017-08-02", "Send Income Form"),
            ("2017-08-09", "Check Income Form"),
            ("2017-08-12", "Pay Benefits"),
        ],
    )
}

pub fn log_of(traces: Vec<Trace>) -> EventLog {
    EventLog::from_traces(traces, "Detect Reclamation")
}

pub struct Sim {
    pub config: SimConfig,
    pub model: GroundTruthModel,
    pub population: Vec<CustomerProfile>,
}

/// Calibrated synthetic set-up with default parameters.
pub fn sim(n: usize, months: u32, seed: u64) -> Sim {
    let config = SimConfig {
        population_size: n,
        horizon_months: months,
        seed,
        ..Default::default()
    };
    let population = generate_population(&config, seed).unwrap();
    let model = calibrate_intercept(&GroundTruthModel::default(), &population, &config).unwrap();
    Sim {
        config,
        model,
        population,
    }
}

/// Event log of a calibrated no-intervention run.
pub fn sim_log(n: usize, months: u32, seed: u64) -> EventLog {
    let s = sim(n, months, seed);
    parlab::simulator::simulate(&s.config, &s.model, &s.population, &mut parlab::simulator::NoEmail)
        .unwrap()
        .log
}

/// A small bundle trained once per test binary.
pub fn small_bundle() -> &'static parlab::predictor::PredictorBundle {
    use parlab::learners::HyperParams;
    use parlab::predictor::{train_bundle, TrainConfig};
    use parlab::selection::Grids;
    static BUNDLE: std::sync::OnceLock<parlab::predictor::PredictorBundle> = std::sync::OnceLock::new();
    BUNDLE.get_or_init(|| {
        let log = sim_log(3000, 6, 40);
        let cfg = TrainConfig {
            seed: 41,
            grids: Grids {
                logistic: vec![HyperParams::logistic(0.01)],
                boosting: vec![HyperParams::boosting(40)],
            },
            ..TrainConfig::default()
        };
        train_bundle(&log, &cfg).unwrap().bundle
    })
}
