//! Estimating an intervention's effect from historical logs before fielding it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::stats::{analyze_rates, GroupStats, RateComparison};
use crate::calendar::YearMonth;
use crate::error::{Error, Result};
use crate::event_log::EventLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreAssessment {
    pub marker_activity: String,
    pub outcome_offset_months: u32,
    pub exposed: GroupStats,
    pub unexposed: GroupStats,
    /// Unstratified comparison (exposed as the "experimental" side).
    pub crude: RateComparison,
    /// Mantel-Haenszel risk difference across calendar-month strata.
    pub matched_difference: f64,
    /// Cochran-Mantel-Haenszel chi-square (1 dof), no continuity correction.
    pub cmh_statistic: f64,
    pub p_value: f64,
    pub strata: usize,
}

impl PreAssessment {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

#[derive(Default, Clone, Copy)]
struct Cell {
    n1: f64,
    a: f64,
    n0: f64,
    c: f64,
}

/// Compares reclamation frequency `outcome_offset_months` after case-months
/// containing `marker_activity` against case-months without it, matched on
/// calendar month. Only months inside each trace's span whose outcome month
/// lies within the log are used. With `at_risk_activity`, a case-month only
/// counts if that activity occurs in the following month, the month an
/// end-of-month intervention acts on; without it, months after a customer
/// left the process dilute the unexposed side.
///
/// The estimate is observational: if the marker was given preferentially to
/// risky cases, the difference mixes selection with effect.
pub fn pre_assess(
    log: &EventLog,
    marker_activity: &str,
    outcome_offset_months: u32,
    at_risk_activity: Option<&str>,
) -> Result<PreAssessment> {
    if !log.activity_alphabet().iter().any(|a| a == marker_activity) {
        return Err(Error::MarkerAbsent(marker_activity.to_string()));
    }
    let last = log
        .traces()
        .filter_map(|t| t.last_month())
        .max()
        .ok_or(Error::EmptyLog)?;
    let offset = i64::from(outcome_offset_months);
    let mut strata: BTreeMap<YearMonth, Cell> = BTreeMap::new();
    for t in log.traces() {
        let (Some(first), Some(end)) = (t.first_month(), t.last_month()) else {
            continue;
        };
        let marked: BTreeSet<YearMonth> = t
            .events
            .iter()
            .filter(|e| e.activity == marker_activity)
            .map(|e| e.month())
            .collect();
        let reclaimed: BTreeSet<YearMonth> = t
            .events
            .iter()
            .filter(|e| e.activity == log.reclamation_activity())
            .map(|e| e.month())
            .collect();
        let at_risk: Option<BTreeSet<YearMonth>> = at_risk_activity.map(|a| {
            t.events
                .iter()
                .filter(|e| e.activity == a)
                .map(|e| e.month().add_months(-1))
                .collect()
        });
        let mut m = first;
        while m <= end && m.add_months(offset) <= last {
            if at_risk.as_ref().is_some_and(|r| !r.contains(&m)) {
                m = m.add_months(1);
                continue;
            }
            let outcome = f64::from(u8::from(reclaimed.contains(&m.add_months(offset))));
            let cell = strata.entry(m).or_default();
            if marked.contains(&m) {
                cell.n1 += 1.0;
                cell.a += outcome;
            } else {
                cell.n0 += 1.0;
                cell.c += outcome;
            }
            m = m.add_months(1);
        }
    }

    let total = strata.values().fold(Cell::default(), |s, c| Cell {
        n1: s.n1 + c.n1,
        a: s.a + c.a,
        n0: s.n0 + c.n0,
        c: s.c + c.c,
    });
    let exposed = GroupStats::from_counts("marker", total.n1 as usize, total.a as usize);
    let unexposed = GroupStats::from_counts("no_marker", total.n0 as usize, total.c as usize);
    let crude = analyze_rates(&unexposed, &exposed)?;

    let (mut rd_num, mut rd_den, mut dev, mut var, mut used) = (0.0, 0.0, 0.0, 0.0, 0);
    for cell in strata.values().filter(|c| c.n1 > 0.0 && c.n0 > 0.0) {
        let n = cell.n1 + cell.n0;
        rd_num += (cell.a * cell.n0 - cell.c * cell.n1) / n;
        rd_den += cell.n1 * cell.n0 / n;
        let m1 = cell.a + cell.c;
        let m0 = n - m1;
        dev += cell.a - cell.n1 * m1 / n;
        if n > 1.0 {
            var += cell.n1 * cell.n0 * m1 * m0 / (n * n * (n - 1.0));
        }
        used += 1;
    }
    let (cmh_statistic, p_value) = if var > 0.0 {
        let s = dev * dev / var;
        (s, ChiSquared::new(1.0).expect("valid dof").sf(s))
    } else {
        (0.0, 1.0)
    };
    Ok(PreAssessment {
        marker_activity: marker_activity.to_string(),
        outcome_offset_months,
        exposed,
        unexposed,
        crude,
        matched_difference: if rd_den > 0.0 { rd_num / rd_den } else { 0.0 },
        cmh_statistic,
        p_value,
        strata: used,
    })
}
