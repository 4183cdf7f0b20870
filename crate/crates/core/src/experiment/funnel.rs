//! Intervention funnel and per-stage customer characteristics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{chi_square_2x2, welch_t, TestResult, WelchResult};
use crate::calendar::YearMonth;
use crate::error::{Error, Result};
use crate::event_log::EventLog;
use crate::simulator::ADJUST_BENEFITS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NotFlagged,
    FlaggedNotOpened,
    OpenedNotClicked,
    Clicked,
}

impl Stage {
    pub const FLAGGED: [Stage; 3] = [Stage::FlaggedNotOpened, Stage::OpenedNotClicked, Stage::Clicked];

    pub fn name(self) -> &'static str {
        match self {
            Stage::NotFlagged => "not_flagged",
            Stage::FlaggedNotOpened => "flagged_not_opened",
            Stage::OpenedNotClicked => "opened_not_clicked",
            Stage::Clicked => "clicked",
        }
    }

    pub fn is_flagged(self) -> bool {
        self != Stage::NotFlagged
    }
}

/// One customer-month of the experiment window. `outcome` is whether a
/// reclamation was drawn for the following month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelRecord {
    pub case_id: String,
    pub group: String,
    pub month: YearMonth,
    pub stage: Stage,
    pub outcome: bool,
    /// Predicted probability, when the case was scored.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub count: usize,
    pub reclamations: usize,
    pub rate: Option<f64>,
    /// Stage rate over the rate of all records analysed.
    pub ratio_to_overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelSummary {
    pub total: usize,
    pub overall_rate: Option<f64>,
    pub flagged: usize,
    /// Opened includes clicked; "received" is taken to mean opened.
    pub opened: usize,
    pub clicked: usize,
    pub stages: Vec<StageSummary>,
    pub clicked_vs_opened_not_clicked: Option<f64>,
}

impl FunnelSummary {
    pub fn stage(&self, stage: Stage) -> &StageSummary {
        self.stages.iter().find(|s| s.stage == stage).expect("all flagged stages present")
    }

    pub fn open_rate(&self) -> Option<f64> {
        (self.flagged > 0).then(|| self.opened as f64 / self.flagged as f64)
    }

    pub fn click_rate_given_open(&self) -> Option<f64> {
        (self.opened > 0).then(|| self.clicked as f64 / self.opened as f64)
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Counts and next-month reclamation rates per flagged stage. `records`
/// should hold one experimental group; its overall rate is the reference.
pub fn analyze_funnel(records: &[FunnelRecord]) -> FunnelSummary {
    let total = records.len();
    let overall_rate = ratio(records.iter().filter(|r| r.outcome).count(), total);
    let stages: Vec<StageSummary> = Stage::FLAGGED
        .iter()
        .map(|&stage| {
            let (count, reclamations) = records
                .iter()
                .filter(|r| r.stage == stage)
                .fold((0, 0), |(n, k), r| (n + 1, k + usize::from(r.outcome)));
            let rate = ratio(reclamations, count);
            StageSummary {
                stage,
                count,
                reclamations,
                rate,
                ratio_to_overall: rate.zip(overall_rate).and_then(|(r, o)| (o > 0.0).then(|| r / o)),
            }
        })
        .collect();
    let count = |s: usize| stages[s].count;
    let clicked_rate = stages[2].rate;
    let onc_rate = stages[1].rate;
    FunnelSummary {
        total,
        overall_rate,
        flagged: count(0) + count(1) + count(2),
        opened: count(1) + count(2),
        clicked: count(2),
        clicked_vs_opened_not_clicked: clicked_rate.zip(onc_rate).and_then(|(c, o)| (o > 0.0).then(|| c / o)),
        stages,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseCharacteristics {
    pub has_income: bool,
    pub previous_reclamation: bool,
    pub age: f64,
}

/// Characteristics visible in the log up to the end of `as_of`: income is
/// evidenced by a benefit adjustment, a previous reclamation by a detection.
pub fn characteristics_from_log(log: &EventLog, as_of: YearMonth) -> BTreeMap<String, CaseCharacteristics> {
    log.traces()
        .map(|t| {
            let known = t.as_of(as_of);
            (
                t.case_id.clone(),
                CaseCharacteristics {
                    has_income: known.contains_activity(ADJUST_BENEFITS),
                    previous_reclamation: known.contains_activity(log.reclamation_activity()),
                    age: f64::from(t.attributes.age),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageGroup {
    pub stage: Stage,
    pub n: usize,
    pub income_proportion: Option<f64>,
    pub previous_reclamation_proportion: Option<f64>,
    pub mean_age: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTests {
    pub a: Stage,
    pub b: Stage,
    pub income: Option<TestResult>,
    pub previous_reclamation: Option<TestResult>,
    pub age: Option<WelchResult>,
    /// Names of the characteristics differing at the chosen alpha.
    pub significant: Vec<String>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeTable {
    pub alpha: f64,
    pub groups: Vec<StageGroup>,
    pub pairs: Vec<PairwiseTests>,
}

impl ComparativeTable {
    pub fn group(&self, stage: Stage) -> &StageGroup {
        self.groups.iter().find(|g| g.stage == stage).expect("flagged stage")
    }
}

/// Groups flagged customers by the furthest funnel stage they reached and
/// compares the groups pairwise: chi-square for the two proportions, Welch's
/// t for age. Pairs involving a single-member group report a warning instead
/// of tests.
pub fn compare_characteristics(
    records: &[FunnelRecord],
    characteristics: &BTreeMap<String, CaseCharacteristics>,
    alpha: f64,
) -> Result<ComparativeTable> {
    let mut furthest: BTreeMap<&str, Stage> = BTreeMap::new();
    for r in records.iter().filter(|r| r.stage.is_flagged()) {
        let e = furthest.entry(&r.case_id).or_insert(r.stage);
        *e = (*e).max(r.stage);
    }
    let mut members: BTreeMap<Stage, Vec<CaseCharacteristics>> = Stage::FLAGGED.iter().map(|&s| (s, vec![])).collect();
    for (case, stage) in furthest {
        if let Some(c) = characteristics.get(case) {
            members.get_mut(&stage).expect("flagged stage").push(*c);
        }
    }
    if members.values().filter(|m| !m.is_empty()).count() < 2 {
        return Err(Error::TooFewGroups);
    }

    let share = |m: &[CaseCharacteristics], f: fn(&CaseCharacteristics) -> bool| {
        ratio(m.iter().filter(|c| f(c)).count(), m.len())
    };
    let groups = members
        .iter()
        .map(|(&stage, m)| StageGroup {
            stage,
            n: m.len(),
            income_proportion: share(m, |c| c.has_income),
            previous_reclamation_proportion: share(m, |c| c.previous_reclamation),
            mean_age: (!m.is_empty()).then(|| m.iter().map(|c| c.age).sum::<f64>() / m.len() as f64),
        })
        .collect();

    let mut pairs = Vec::new();
    for (i, &a) in Stage::FLAGGED.iter().enumerate() {
        for &b in &Stage::FLAGGED[i + 1..] {
            let (ma, mb) = (&members[&a], &members[&b]);
            if ma.is_empty() || mb.is_empty() {
                continue;
            }
            if ma.len() < 2 || mb.len() < 2 {
                pairs.push(PairwiseTests {
                    a,
                    b,
                    income: None,
                    previous_reclamation: None,
                    age: None,
                    significant: vec![],
                    warning: Some(format!(
                        "{} vs {}: single-member group, tests suppressed",
                        a.name(),
                        b.name()
                    )),
                });
                continue;
            }
            let table = |f: fn(&CaseCharacteristics) -> bool| {
                let ya = ma.iter().filter(|c| f(c)).count();
                let yb = mb.iter().filter(|c| f(c)).count();
                chi_square_2x2(ya, ma.len() - ya, yb, mb.len() - yb)
            };
            let income = table(|c| c.has_income);
            let prev = table(|c| c.previous_reclamation);
            let ages = |m: &[CaseCharacteristics]| m.iter().map(|c| c.age).collect::<Vec<_>>();
            let age = welch_t(&ages(ma), &ages(mb));
            let mut significant = Vec::new();
            if income.p_value < alpha {
                significant.push("income".to_string());
            }
            if prev.p_value < alpha {
                significant.push("previous_reclamation".to_string());
            }
            if age.is_some_and(|w| w.p_value < alpha) {
                significant.push("age".to_string());
            }
            pairs.push(PairwiseTests {
                a,
                b,
                income: Some(income),
                previous_reclamation: Some(prev),
                age,
                significant,
                warning: None,
            });
        }
    }
    Ok(ComparativeTable { alpha, groups, pairs })
}
