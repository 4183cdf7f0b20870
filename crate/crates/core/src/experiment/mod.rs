//! A/B harness: group assignment, monthly score-and-email cycles on a
//! simulated field population, and the analyses of the results.

mod funnel;
mod preassess;
mod stats;

pub use funnel::{
    analyze_funnel, characteristics_from_log, compare_characteristics, CaseCharacteristics, ComparativeTable,
    FunnelRecord, FunnelSummary, PairwiseTests, Stage, StageGroup, StageSummary,
};
pub use preassess::{pre_assess, PreAssessment};
pub use stats::{
    analyze_rates, chi_square_2x2, two_proportion_test, welch_t, GroupStats, RateComparison, TestResult, WelchResult,
};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{intervention_date, YearMonth};
use crate::config::{parse_value, unknown_key, Configurable};
use crate::error::{Error, Result};
use crate::event_log::EventLog;
use crate::predictor::{score_case, PredictorBundle};
use crate::seeds;
use crate::simulator::{
    generate_population, simulate, CustomerProfile, GroundTruthModel, OutcomeRecord, PolicyContext, SimConfig,
};

pub const CONTROL: &str = "control";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmPolicy {
    /// No scoring, no email: a second control.
    None,
    /// Email every case scoring above the threshold.
    Email,
}

impl std::str::FromStr for ArmPolicy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(ArmPolicy::None),
            "email" => Ok(ArmPolicy::Email),
            other => Err(format!("unknown policy `{other}` (expected none or email)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub policy: ArmPolicy,
}

impl Arm {
    pub fn parse_list(s: &str) -> std::result::Result<Vec<Arm>, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                Ok(Arm {
                    name: p.to_string(),
                    policy: p.parse()?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    /// Share of cases in the experimental arms, split evenly among them.
    pub experimental_fraction: f64,
    pub seed: u64,
    /// Months simulated before the first intervention, so cases have history.
    pub warmup_months: u32,
    pub duration_months: u32,
    pub field_start: YearMonth,
    /// Overrides the bundle's threshold when set.
    pub threshold: Option<f64>,
    pub arms: Vec<Arm>,
}

impl Default for ExperimentDesign {
    fn default() -> Self {
        Self {
            experimental_fraction: 35_812.0 / 86_850.0,
            seed: 0,
            warmup_months: 3,
            duration_months: 3,
            field_start: YearMonth::new(2017, 5).expect("valid month"),
            threshold: None,
            arms: vec![Arm {
                name: "email".into(),
                policy: ArmPolicy::Email,
            }],
        }
    }
}

impl ExperimentDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.experimental_fraction > 0.0 && self.experimental_fraction < 1.0) {
            return Err(Error::Config("experimental_fraction must be in (0, 1)".into()));
        }
        if self.duration_months < 1 {
            return Err(Error::Config("duration_months must be >= 1".into()));
        }
        if self.arms.is_empty() {
            return Err(Error::Config("at least one experimental arm is required".into()));
        }
        let names: BTreeSet<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        if names.len() != self.arms.len() || names.contains(CONTROL) {
            return Err(Error::Config("arm names must be unique and not `control`".into()));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("threshold {t} not in (0, 1]")));
            }
        }
        Ok(())
    }

    /// Months simulated in the field: warm-up, interventions, and the month
    /// in which the last intervention's outcome is drawn.
    pub fn horizon(&self) -> u32 {
        self.warmup_months + self.duration_months + 1
    }

    /// Calendar months at whose end the emails go out.
    pub fn intervention_months(&self) -> Vec<YearMonth> {
        (0..self.duration_months)
            .map(|i| self.field_start.add_months(i64::from(self.warmup_months + i)))
            .collect()
    }

    fn in_window(&self, month_index: u32) -> bool {
        (self.warmup_months..self.warmup_months + self.duration_months).contains(&month_index)
    }
}

impl Configurable for ExperimentDesign {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experimental_fraction" | "fraction" => self.experimental_fraction = parse_value(value)?,
            "seed" => self.seed = parse_value(value)?,
            "warmup_months" => self.warmup_months = parse_value(value)?,
            "duration_months" => self.duration_months = parse_value(value)?,
            "field_start" => self.field_start = value.parse().map_err(Error::Config)?,
            "threshold" => self.threshold = Some(parse_value(value)?),
            "policies" | "arms" => self.arms = Arm::parse_list(value).map_err(Error::Config)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

/// Experimental size is `floor(fraction·n)`; the rest is control.
pub fn experimental_size(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction + 1e-9).floor() as usize).min(n)
}

/// Random split into (control, experimental), deterministic in the design seed.
pub fn assign_groups(case_ids: &[String], design: &ExperimentDesign) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if case_ids.len() < 2 {
        return Err(Error::TooFewTraces(case_ids.len()));
    }
    let mut ids: Vec<&String> = case_ids.iter().collect();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut seeds::rng(design.seed, "assign-groups"));
    let cut = experimental_size(ids.len(), design.experimental_fraction);
    let experimental = ids[..cut].iter().map(|s| s.to_string()).collect();
    let control = ids[cut..].iter().map(|s| s.to_string()).collect();
    Ok((control, experimental))
}

/// Deals the experimental cases round-robin over the arms after a shuffle.
pub fn assign_arms(experimental: &BTreeSet<String>, arms: usize, seed: u64) -> Vec<BTreeSet<String>> {
    let mut ids: Vec<&String> = experimental.iter().collect();
    ids.shuffle(&mut seeds::rng(seed, "assign-arms"));
    let mut out = vec![BTreeSet::new(); arms.max(1)];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % arms.max(1)].insert(id.clone());
    }
    out
}

/// Simulation inputs for the field population.
#[derive(Debug, Clone)]
pub struct FieldSetup {
    pub config: SimConfig,
    pub model: GroundTruthModel,
    pub population: Vec<CustomerProfile>,
}

#[derive(Debug, Clone)]
pub struct AbResult {
    pub design: ExperimentDesign,
    pub threshold: f64,
    /// Control first, then one entry per arm.
    pub groups: Vec<GroupStats>,
    pub comparisons: Vec<RateComparison>,
    pub funnel: Vec<FunnelRecord>,
    pub outcomes: Vec<OutcomeRecord>,
    pub log: EventLog,
}

impl AbResult {
    pub fn records_of<'a>(&'a self, group: &'a str) -> impl Iterator<Item = &'a FunnelRecord> + 'a {
        self.funnel.iter().filter(move |r| r.group == group)
    }

    pub fn funnel_of(&self, group: &str) -> FunnelSummary {
        let records: Vec<FunnelRecord> = self.records_of(group).cloned().collect();
        analyze_funnel(&records)
    }

    pub fn characteristics(&self, group: &str) -> Result<ComparativeTable> {
        let records: Vec<FunnelRecord> = self.records_of(group).cloned().collect();
        let last = *self.design.intervention_months().last().expect("duration >= 1");
        compare_characteristics(&records, &characteristics_from_log(&self.log, last), 0.05)
    }
}

struct Observation {
    case_id: String,
    group: usize,
    month_index: u32,
    score: Option<f64>,
    flagged: bool,
}

/// Runs the field experiment: every intervention month, cases of email arms
/// are scored on their running traces, those above the threshold are emailed
/// on the day preceding the last working day, and the next month's
/// reclamation is recorded for every case of every group.
pub fn run_ab(field: &FieldSetup, bundle: &PredictorBundle, design: &ExperimentDesign) -> Result<AbResult> {
    design.validate()?;
    let threshold = design.threshold.unwrap_or(bundle.threshold);
    let config = SimConfig {
        start: design.field_start,
        horizon_months: design.horizon(),
        ..field.config.clone()
    };
    let case_ids: Vec<String> = field.population.iter().map(|c| c.case_id.clone()).collect();
    let (control, experimental) = assign_groups(&case_ids, design)?;
    let arms = assign_arms(&experimental, design.arms.len(), design.seed);
    let mut group_of: HashMap<&str, usize> = control.iter().map(|c| (c.as_str(), 0)).collect();
    for (i, members) in arms.iter().enumerate() {
        group_of.extend(members.iter().map(|c| (c.as_str(), i + 1)));
    }
    let email_group: Vec<bool> = std::iter::once(false)
        .chain(design.arms.iter().map(|a| a.policy == ArmPolicy::Email))
        .collect();

    let mut observations: Vec<Observation> = Vec::new();
    let mut policy = |ctx: &PolicyContext<'_>| -> Result<BTreeSet<String>> {
        if !design.in_window(ctx.month_index) {
            return Ok(BTreeSet::new());
        }
        debug_assert_eq!(ctx.send_date, intervention_date(ctx.month));
        let scored: Vec<Observation> = ctx
            .eligible
            .par_iter()
            .map(|trace| {
                let group = group_of[trace.case_id.as_str()];
                let score = if email_group[group] {
                    Some(score_case(bundle, trace, ctx.month)?)
                } else {
                    None
                };
                Ok(Observation {
                    case_id: trace.case_id.clone(),
                    group,
                    month_index: ctx.month_index,
                    score,
                    flagged: score.is_some_and(|s| s > threshold),
                })
            })
            .collect::<Result<_>>()?;
        let chosen = scored.iter().filter(|o| o.flagged).map(|o| o.case_id.clone()).collect();
        observations.extend(scored);
        Ok(chosen)
    };
    let sim = simulate(&config, &field.model, &field.population, &mut policy)?;

    let outcome_of: HashMap<(&str, YearMonth), &OutcomeRecord> =
        sim.outcomes.iter().map(|o| ((o.case_id.as_str(), o.month), o)).collect();
    let names: Vec<&str> = std::iter::once(CONTROL)
        .chain(design.arms.iter().map(|a| a.name.as_str()))
        .collect();
    let mut funnel = Vec::with_capacity(observations.len());
    for o in &observations {
        let month = config.month(o.month_index);
        let next = outcome_of
            .get(&(o.case_id.as_str(), month.add_months(1)))
            .expect("eligible cases are active next month");
        let stage = match (o.flagged, next.opened, next.clicked) {
            (false, _, _) => Stage::NotFlagged,
            (true, _, true) => Stage::Clicked,
            (true, true, false) => Stage::OpenedNotClicked,
            (true, false, false) => Stage::FlaggedNotOpened,
        };
        funnel.push(FunnelRecord {
            case_id: o.case_id.clone(),
            group: names[o.group].to_string(),
            month,
            stage,
            outcome: next.reclamation_drawn,
            score: o.score,
        });
    }

    let groups: Vec<GroupStats> = names.iter().map(|name| case_level_stats(name, &funnel)).collect();
    let comparisons = groups[1..]
        .iter()
        .map(|g| analyze_rates(&groups[0], g))
        .collect::<Result<_>>()?;
    Ok(AbResult {
        design: design.clone(),
        threshold,
        groups,
        comparisons,
        funnel,
        outcomes: sim.outcomes,
        log: sim.log,
    })
}

/// Per-case outcome: a case counts as reclaimed if any month following one
/// of its intervention months had a reclamation. Months of one case share the
/// customer's risk, so cases, not case-months, are the independent units.
pub fn case_level_stats(group: &str, records: &[FunnelRecord]) -> GroupStats {
    let mut cases: BTreeMap<&str, bool> = BTreeMap::new();
    for r in records.iter().filter(|r| r.group == group) {
        *cases.entry(&r.case_id).or_insert(false) |= r.outcome;
    }
    GroupStats::from_counts(group, cases.len(), cases.values().filter(|&&o| o).count())
}

/// Reclamations per customer-month of a group.
pub fn monthly_rate(group: &str, records: &[FunnelRecord]) -> Option<f64> {
    let (n, k) = records
        .iter()
        .filter(|r| r.group == group)
        .fold((0usize, 0usize), |(n, k), r| (n + 1, k + usize::from(r.outcome)));
    (n > 0).then(|| k as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub replications: usize,
    /// p-value of the first arm versus control, per replication.
    pub p_values: Vec<f64>,
    pub significant_fraction: f64,
}

/// Independent replications: each draws a fresh field population and fresh
/// simulation and assignment seeds from `root_seed`. `model` is used as
/// given, so it should be calibrated on a population of the same shape.
pub fn replicate(
    config: &SimConfig,
    model: &GroundTruthModel,
    bundle: &PredictorBundle,
    design: &ExperimentDesign,
    replications: usize,
    root_seed: u64,
) -> Result<ReplicationSummary> {
    let p_values: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = seeds::derive(root_seed, &format!("replication/{r}"));
            let config = SimConfig {
                seed: seeds::derive(seed, "simulate"),
                ..config.clone()
            };
            let population = generate_population(&config, seeds::derive(seed, "population"))?;
            let design = ExperimentDesign {
                seed: seeds::derive(seed, "design"),
                ..design.clone()
            };
            let field = FieldSetup {
                config,
                model: *model,
                population,
            };
            Ok(run_ab(&field, bundle, &design)?.comparisons[0].p_value)
        })
        .collect::<Result<_>>()?;
    let significant = p_values.iter().filter(|&&p| p < 0.05).count();
    Ok(ReplicationSummary {
        replications,
        significant_fraction: if replications > 0 {
            significant as f64 / replications as f64
        } else {
            0.0
        },
        p_values,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// Plain-text report: group rates with tests, then funnel and characteristics
/// per email arm.
pub fn summary_text(result: &AbResult) -> String {
    let mut s = String::new();
    let months: Vec<String> = result
        .design
        .intervention_months()
        .iter()
        .map(|m| intervention_date(*m).to_string())
        .collect();
    let _ = writeln!(s, "Interventions sent on: {}", months.join(", "));
    let _ = writeln!(s, "Threshold: score > {}", result.threshold);
    let _ = writeln!(
        s,
        "\nGroups (cases with a reclamation in a month following an intervention month)"
    );
    for g in &result.groups {
        let _ = writeln!(
            s,
            "  {:<12} cases={:<8} reclaimed={:<6} rate={:.2}% [{:.2}%, {:.2}%]  monthly rate={}",
            g.name,
            g.n,
            g.reclamations,
            100.0 * g.rate,
            100.0 * g.ci_low,
            100.0 * g.ci_high,
            pct(monthly_rate(&g.name, &result.funnel))
        );
    }
    for c in &result.comparisons {
        let verdict = if c.significant(0.05) {
            "significant difference at 5%"
        } else {
            "no significant difference at 5%"
        };
        let _ = writeln!(
            s,
            "  {} vs {}: difference {:+.2}pp, z={:.3}, p={:.4} -> {}{}",
            c.experimental,
            c.control,
            100.0 * c.difference,
            c.z,
            c.p_value,
            verdict,
            if c.small_count_warning { " (small counts)" } else { "" }
        );
    }
    for arm in result.design.arms.iter().filter(|a| a.policy == ArmPolicy::Email) {
        let f = result.funnel_of(&arm.name);
        let _ = writeln!(s, "\nFunnel for `{}` (customer-months)", arm.name);
        let _ = writeln!(s, "  scored {}  flagged {}  opened {}  clicked {}", f.total, f.flagged, f.opened, f.clicked);
        let _ = writeln!(
            s,
            "  open rate {}  click rate given open {}  overall rate {}",
            pct(f.open_rate()),
            pct(f.click_rate_given_open()),
            pct(f.overall_rate)
        );
        for st in &f.stages {
            let _ = writeln!(
                s,
                "  {:<20} n={:<7} rate={:<7} x{}",
                st.stage.name(),
                st.count,
                pct(st.rate),
                st.ratio_to_overall.map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into())
            );
        }
        if let Some(r) = f.clicked_vs_opened_not_clicked {
            let _ = writeln!(s, "  clicked vs opened_not_clicked: x{r:.2}");
        }
        match result.characteristics(&arm.name) {
            Ok(t) => {
                let _ = writeln!(s, "\nCharacteristics by furthest stage (`{}`)", arm.name);
                for g in &t.groups {
                    let _ = writeln!(
                        s,
                        "  {:<20} n={:<6} income={:<7} previous reclamation={:<7} mean age={}",
                        g.stage.name(),
                        g.n,
                        pct(g.income_proportion),
                        pct(g.previous_reclamation_proportion),
                        g.mean_age.map(|a| format!("{a:.1}")).unwrap_or_else(|| "-".into())
                    );
                }
                for p in &t.pairs {
                    match &p.warning {
                        Some(w) => {
                            let _ = writeln!(s, "  {w}");
                        }
                        None => {
                            let sig = if p.significant.is_empty() {
                                "none".to_string()
                            } else {
                                p.significant.join(", ")
                            };
                            let _ = writeln!(s, "  {} vs {}: significant at 5%: {}", p.a.name(), p.b.name(), sig);
                        }
                    }
                }
            }
            Err(e) => {
                let _ = writeln!(s, "\nCharacteristics: {e}");
            }
        }
    }
    s
}

#[derive(Serialize)]
struct ComparisonDocument<'a> {
    threshold: f64,
    design: &'a ExperimentDesign,
    groups: &'a [GroupStats],
    comparisons: &'a [RateComparison],
    funnels: Vec<(String, FunnelSummary)>,
    characteristics: Vec<(String, Option<ComparativeTable>)>,
}

/// Writes `groups.csv`, `funnel.csv`, `comparison.json` and `summary.txt`.
pub fn write_results(result: &AbResult, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_file = |name: &str| -> Result<csv::Writer<std::fs::File>> {
        let path = dir.join(name);
        Ok(csv::Writer::from_writer(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?))
    };

    let mut w = csv_file("groups.csv")?;
    w.write_record(["group", "n", "reclamations", "rate", "ci_low", "ci_high"])?;
    for g in &result.groups {
        w.write_record([
            g.name.clone(),
            g.n.to_string(),
            g.reclamations.to_string(),
            g.rate.to_string(),
            g.ci_low.to_string(),
            g.ci_high.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("groups.csv"), e))?;

    let mut w = csv_file("funnel.csv")?;
    w.write_record(["case_id", "group", "month", "stage", "outcome", "score"])?;
    for r in &result.funnel {
        w.write_record([
            r.case_id.clone(),
            r.group.clone(),
            r.month.to_string(),
            r.stage.name().to_string(),
            u8::from(r.outcome).to_string(),
            r.score.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("funnel.csv"), e))?;

    let email_arms: Vec<&Arm> = result.design.arms.iter().filter(|a| a.policy == ArmPolicy::Email).collect();
    let doc = ComparisonDocument {
        threshold: result.threshold,
        design: &result.design,
        groups: &result.groups,
        comparisons: &result.comparisons,
        funnels: email_arms.iter().map(|a| (a.name.clone(), result.funnel_of(&a.name))).collect(),
        characteristics: email_arms
            .iter()
            .map(|a| (a.name.clone(), result.characteristics(&a.name).ok()))
            .collect(),
    };
    let path = dir.join("comparison.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(|e| Error::io(&path, e))?;
    let path = dir.join("summary.txt");
    std::fs::write(&path, summary_text(result)).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_group_sizes() {
        let ids: Vec<String> = (0..86_850).map(|i| i.to_string()).collect();
        let design = ExperimentDesign {
            experimental_fraction: 0.41235,
            ..Default::default()
        };
        let (control, experimental) = assign_groups(&ids, &design).unwrap();
        assert_eq!(experimental.len(), 35_812);
        assert_eq!(control.len(), 51_038);
        assert!(control.is_disjoint(&experimental));
    }

    #[test]
    fn halves() {
        let ids: Vec<String> = (0..4).map(|i| i.to_string()).collect();
        let design = ExperimentDesign {
            experimental_fraction: 0.5,
            ..Default::default()
        };
        let (c, e) = assign_groups(&ids, &design).unwrap();
        assert_eq!((c.len(), e.len()), (2, 2));
    }

    #[test]
    fn intervention_window() {
        let d = ExperimentDesign::default();
        let dates: Vec<String> = d.intervention_months().iter().map(|m| intervention_date(*m).to_string()).collect();
        assert_eq!(dates, ["2017-08-30", "2017-09-28", "2017-10-30"]);
        assert_eq!(d.horizon(), 7);
    }

    #[test]
    fn arms_parse() {
        let arms = Arm::parse_list("none,email").unwrap();
        assert_eq!(arms[0].policy, ArmPolicy::None);
        assert_eq!(arms[1].policy, ArmPolicy::Email);
        assert!(Arm::parse_list("letter").is_err());
    }
}
