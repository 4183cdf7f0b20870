use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CustomerProfile, GroundTruthModel, RiskInputs, SimConfig, ADJUST_BENEFITS, CHECK_INCOME_FORM,
    INITIALIZE_INCOME_FORM, PAY_BENEFITS, SEND_INCOME_FORM,
};
use crate::calendar::{intervention_date, YearMonth};
use crate::error::{Error, Result};
use crate::event_log::{Event, EventLog, Trace};
use crate::seeds;

/// What a policy sees at the end of a simulated month.
pub struct PolicyContext<'a> {
    pub month: YearMonth,
    /// Months since the simulation start.
    pub month_index: u32,
    pub send_date: NaiveDate,
    /// Running traces of the customers still active next month.
    pub eligible: Vec<&'a Trace>,
}

/// Chooses whom to email at the end of each month. The email affects the
/// following month's reclamation draw.
pub trait Policy {
    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<BTreeSet<String>>;
}

impl<F> Policy for F
where
    F: FnMut(&PolicyContext<'_>) -> Result<BTreeSet<String>>,
{
    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<BTreeSet<String>> {
        self(ctx)
    }
}

pub struct NoEmail;

impl Policy for NoEmail {
    fn select(&mut self, _: &PolicyContext<'_>) -> Result<BTreeSet<String>> {
        Ok(BTreeSet::new())
    }
}

pub struct EmailAll;

impl Policy for EmailAll {
    fn select(&mut self, ctx: &PolicyContext<'_>) -> Result<BTreeSet<String>> {
        Ok(ctx.eligible.iter().map(|t| t.case_id.clone()).collect())
    }
}

/// One active customer-month. `emailed`, `opened` and `clicked` describe the
/// email sent at the end of the previous month, which acts on this month's
/// draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub case_id: String,
    pub month: YearMonth,
    pub emailed: bool,
    pub opened: bool,
    pub clicked: bool,
    pub reclamation_drawn: bool,
    /// Set when the detection falls inside the simulated horizon.
    pub reclamation_detected_month: Option<YearMonth>,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub log: EventLog,
    pub outcomes: Vec<OutcomeRecord>,
}

#[derive(Default, Clone, Copy)]
struct Treatment {
    emailed: bool,
    opened: bool,
    clicked: bool,
}

struct State {
    trace: Trace,
    active: bool,
    /// Income flag of the last active month, wrapped up next month.
    pending_wrap_up: Option<bool>,
    draws: Vec<u32>,
    treatment: Treatment,
    /// Uniforms reserved for the open and click of an email sent this month.
    engagement_draws: (f64, f64),
}

pub fn simulate(
    config: &SimConfig,
    model: &GroundTruthModel,
    population: &[CustomerProfile],
    policy: &mut dyn Policy,
) -> Result<SimulationOutput> {
    config.validate()?;
    model.validate()?;
    if population.is_empty() {
        return Err(Error::Config("empty population".into()));
    }
    let lag = model.detection_lag;
    let horizon = config.horizon_months;
    let mut states: Vec<State> = population
        .iter()
        .map(|c| State {
            trace: Trace::new(c.case_id.clone(), c.attributes.clone()),
            active: true,
            pending_wrap_up: None,
            draws: Vec::new(),
            treatment: Treatment::default(),
            engagement_draws: (1.0, 1.0),
        })
        .collect();
    let mut outcomes = Vec::new();

    for t in 0..horizon {
        let ym = config.month(t);
        for (c, s) in population.iter().zip(states.iter_mut()) {
            let mut days = seeds::rng(config.seed, &format!("dates/{}/{t}", c.case_id));
            let day: [u32; 6] = [
                days.random_range(1..=5),
                days.random_range(6..=10),
                days.random_range(6..=10),
                days.random_range(11..=14),
                days.random_range(1..=20),
                days.random_range(15..=20),
            ];
            let mut events: Vec<Event> = Vec::new();
            let mut emit = |d: u32, activity: &str| {
                events.push(Event {
                    case_id: c.case_id.clone(),
                    date: ym.date(d),
                    activity: activity.to_string(),
                })
            };
            if let Some(had_income) = s.pending_wrap_up.take() {
                emit(day[0], SEND_INCOME_FORM);
                emit(day[1], CHECK_INCOME_FORM);
                if had_income {
                    emit(day[2], ADJUST_BENEFITS);
                }
                emit(day[3], PAY_BENEFITS);
            }
            if t >= lag && s.draws.contains(&(t - lag)) {
                emit(day[4], &config.reclamation_activity);
            }
            if s.active {
                let mut rng = seeds::rng(config.seed, &format!("dyn/{}/{t}", c.case_id));
                let u: [f64; 5] = std::array::from_fn(|_| rng.random());
                let income = u[0] < c.has_income_prob;
                let treatment = std::mem::take(&mut s.treatment);
                let x = RiskInputs {
                    income,
                    previous_reclamation: s.draws.iter().any(|&d| d + lag <= t),
                    double_payment: c.four_weekly_pay && ym.month() == c.double_pay_month,
                    age: c.attributes.age,
                    opened: treatment.opened,
                    clicked: treatment.clicked,
                };
                let drawn = u[1] < model.probability(&x);
                if drawn {
                    s.draws.push(t);
                }
                outcomes.push(OutcomeRecord {
                    case_id: c.case_id.clone(),
                    month: ym,
                    emailed: treatment.emailed,
                    opened: treatment.opened,
                    clicked: treatment.clicked,
                    reclamation_drawn: drawn,
                    reclamation_detected_month: (drawn && t + lag < horizon).then(|| ym.add_months(lag as i64)),
                });
                emit(day[5], INITIALIZE_INCOME_FORM);
                s.pending_wrap_up = Some(income);
                s.engagement_draws = (u[2], u[3]);
                let exhausted = t + 1 >= c.attributes.max_benefit_months;
                if exhausted || u[4] < c.monthly_exit_prob {
                    s.active = false;
                }
            }
            events.sort_by_key(|e| e.date);
            s.trace.events.extend(events);
        }

        if t + 1 < horizon {
            let ctx = PolicyContext {
                month: ym,
                month_index: t,
                send_date: intervention_date(ym),
                eligible: states.iter().filter(|s| s.active).map(|s| &s.trace).collect(),
            };
            let chosen = policy.select(&ctx)?;
            drop(ctx);
            if !chosen.is_empty() {
                for (c, s) in population.iter().zip(states.iter_mut()) {
                    if s.active && chosen.contains(&c.case_id) {
                        let (u_open, u_click) = s.engagement_draws;
                        let opened = u_open < c.open_propensity;
                        s.treatment = Treatment {
                            emailed: true,
                            opened,
                            clicked: opened && u_click < c.click_propensity_base,
                        };
                    }
                }
            }
        }
    }

    let log = EventLog::from_traces(states.into_iter().map(|s| s.trace), config.reclamation_activity.clone());
    Ok(SimulationOutput { log, outcomes })
}

/// Reclamations drawn per active customer-month.
pub fn realized_rate(outcomes: &[OutcomeRecord]) -> f64 {
    if outcomes.is_empty() {
        return 0.0;
    }
    outcomes.iter().filter(|o| o.reclamation_drawn).count() as f64 / outcomes.len() as f64
}

pub fn write_outcomes<W: Write>(outcomes: &[OutcomeRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "case_id",
        "month",
        "emailed",
        "opened",
        "clicked",
        "reclamation_drawn",
        "reclamation_detected_month",
    ])?;
    let b = |v: bool| if v { "1" } else { "0" };
    for o in outcomes {
        wtr.write_record([
            o.case_id.as_str(),
            &o.month.to_string(),
            b(o.emailed),
            b(o.opened),
            b(o.clicked),
            b(o.reclamation_drawn),
            &o.reclamation_detected_month.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_outcomes_file(outcomes: &[OutcomeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_outcomes(outcomes, std::io::BufWriter::new(file))
}
