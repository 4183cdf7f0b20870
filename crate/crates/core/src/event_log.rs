//! Event-log data model and CSV ingestion.
//!
//! A log file is a flat table with one row per event. Rows sharing a
//! `case_id` form a trace; case attributes are repeated on every row and must
//! agree within a case. Events are ordered by date, with same-day events kept
//! in file order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{self, YearMonth};
use crate::error::{Error, Result};

pub const DEFAULT_RECLAMATION_ACTIVITY: &str = "Detect Reclamation";

/// Reserved categorical value for anything outside a vocabulary.
pub const OTHER: &str = "other";

pub const CASE_ID: &str = "case_id";
pub const EVENT_DATE: &str = "event_date";
pub const ACTIVITY: &str = "activity";

/// Categorical case attributes, in encoding order.
pub const CATEGORICAL_ATTRIBUTES: [&str; 6] = [
    "gender",
    "marital_status",
    "sector",
    "contract_type",
    "working_pattern",
    "dismissal_reason",
];

const HEADER: [&str; 11] = [
    CASE_ID,
    EVENT_DATE,
    ACTIVITY,
    "age",
    "gender",
    "marital_status",
    "max_benefit_months",
    "sector",
    "contract_type",
    "working_pattern",
    "dismissal_reason",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub case_id: String,
    pub date: NaiveDate,
    pub activity: String,
}

impl Event {
    pub fn month(&self) -> YearMonth {
        YearMonth::of(self.date)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseAttributes {
    pub age: u32,
    pub gender: String,
    pub marital_status: String,
    pub max_benefit_months: u32,
    pub sector: String,
    pub contract_type: String,
    pub working_pattern: String,
    pub dismissal_reason: String,
}

impl Default for CaseAttributes {
    fn default() -> Self {
        Self {
            age: 0,
            gender: OTHER.into(),
            marital_status: OTHER.into(),
            max_benefit_months: 0,
            sector: OTHER.into(),
            contract_type: OTHER.into(),
            working_pattern: OTHER.into(),
            dismissal_reason: OTHER.into(),
        }
    }
}

impl CaseAttributes {
    /// Categorical values in [`CATEGORICAL_ATTRIBUTES`] order.
    pub fn categorical(&self) -> [&str; 6] {
        [
            &self.gender,
            &self.marital_status,
            &self.sector,
            &self.contract_type,
            &self.working_pattern,
            &self.dismissal_reason,
        ]
    }

    fn categorical_mut(&mut self) -> [&mut String; 6] {
        [
            &mut self.gender,
            &mut self.marital_status,
            &mut self.sector,
            &mut self.contract_type,
            &mut self.working_pattern,
            &mut self.dismissal_reason,
        ]
    }
}

/// Events of one case, sorted by date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub attributes: CaseAttributes,
    pub events: Vec<Event>,
}

impl Trace {
    pub fn new(case_id: impl Into<String>, attributes: CaseAttributes) -> Self {
        Self {
            case_id: case_id.into(),
            attributes,
            events: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_month(&self) -> Option<YearMonth> {
        self.events.first().map(Event::month)
    }

    pub fn last_month(&self) -> Option<YearMonth> {
        self.events.last().map(Event::month)
    }

    /// Inclusive number of calendar months between the first and last event.
    pub fn month_span(&self) -> usize {
        match (self.first_month(), self.last_month()) {
            (Some(a), Some(b)) => (b.index() - a.index() + 1) as usize,
            _ => 0,
        }
    }

    pub fn contains_activity(&self, activity: &str) -> bool {
        self.events.iter().any(|e| e.activity == activity)
    }

    /// The running case as seen at the end of `month`.
    pub fn as_of(&self, month: YearMonth) -> Trace {
        let cutoff = month.last_day();
        Trace {
            case_id: self.case_id.clone(),
            attributes: self.attributes.clone(),
            events: self
                .events
                .iter()
                .take_while(|e| e.date <= cutoff)
                .cloned()
                .collect(),
        }
    }

    fn sort_events(&mut self) {
        // stable: same-day events keep insertion order
        self.events.sort_by_key(|e| e.date);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    traces: BTreeMap<String, Trace>,
    activity_alphabet: Vec<String>,
    reclamation_activity: String,
}

impl EventLog {
    /// Builds a log, sorting each trace's events (stable) and deriving the
    /// activity alphabet. Later traces with a duplicate case id replace
    /// earlier ones.
    pub fn from_traces(
        traces: impl IntoIterator<Item = Trace>,
        reclamation_activity: impl Into<String>,
    ) -> Self {
        let mut map = BTreeMap::new();
        for mut trace in traces {
            trace.sort_events();
            map.insert(trace.case_id.clone(), trace);
        }
        let alphabet: BTreeSet<String> = map
            .values()
            .flat_map(|t| t.events.iter().map(|e| e.activity.clone()))
            .collect();
        Self {
            traces: map,
            activity_alphabet: alphabet.into_iter().collect(),
            reclamation_activity: reclamation_activity.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn traces(&self) -> impl ExactSizeIterator<Item = &Trace> {
        self.traces.values()
    }

    pub fn trace(&self, case_id: &str) -> Option<&Trace> {
        self.traces.get(case_id)
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.traces.keys().map(String::as_str)
    }

    pub fn activity_alphabet(&self) -> &[String] {
        &self.activity_alphabet
    }

    pub fn reclamation_activity(&self) -> &str {
        &self.reclamation_activity
    }

    pub fn event_count(&self) -> usize {
        self.traces.values().map(Trace::len).sum()
    }

    /// A new log holding only the given cases.
    pub fn subset<'a>(&self, case_ids: impl IntoIterator<Item = &'a str>) -> EventLog {
        let picked = case_ids
            .into_iter()
            .filter_map(|id| self.traces.get(id).cloned());
        EventLog::from_traces(picked, self.reclamation_activity.clone())
    }

    /// SHA-256 of the canonical CSV serialization.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_log(self, &mut buf).expect("writing to memory");
        hex::encode(Sha256::digest(&buf))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOptions {
    pub reclamation_activity: String,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            reclamation_activity: DEFAULT_RECLAMATION_ACTIVITY.into(),
        }
    }
}

pub fn parse_log(path: impl AsRef<Path>, options: &ParseOptions) -> Result<EventLog> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_log(file, options)
}

/// Reads a log from CSV. Row numbers in errors are file line numbers (the
/// header is line 1).
pub fn read_log<R: Read>(reader: R, options: &ParseOptions) -> Result<EventLog> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| column(name).ok_or_else(|| Error::MissingColumn(name.into()));
    let case_col = required(CASE_ID)?;
    let date_col = required(EVENT_DATE)?;
    let activity_col = required(ACTIVITY)?;
    let age_col = column("age");
    let benefit_col = column("max_benefit_months");
    let categorical_cols: Vec<Option<usize>> =
        CATEGORICAL_ATTRIBUTES.iter().map(|a| column(a)).collect();

    let mut traces: BTreeMap<String, Trace> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let case_id = field(case_col).to_string();
        if case_id.is_empty() {
            return Err(Error::InvalidValue {
                row,
                column: CASE_ID.into(),
                value: String::new(),
            });
        }
        let raw_date = field(date_col);
        let date = calendar::parse_date(raw_date).ok_or_else(|| Error::MalformedDate {
            row,
            value: raw_date.to_string(),
        })?;
        let activity = field(activity_col).to_string();
        if activity.is_empty() {
            return Err(Error::EmptyActivity { row });
        }

        let parse_u32 = |col: Option<usize>, name: &str| -> Result<u32> {
            match col {
                None => Ok(0),
                Some(c) => field(c).parse().map_err(|_| Error::InvalidValue {
                    row,
                    column: name.into(),
                    value: field(c).to_string(),
                }),
            }
        };
        let mut attributes = CaseAttributes {
            age: parse_u32(age_col, "age")?,
            max_benefit_months: parse_u32(benefit_col, "max_benefit_months")?,
            ..CaseAttributes::default()
        };
        for (slot, col) in attributes.categorical_mut().into_iter().zip(&categorical_cols) {
            if let Some(c) = col {
                let v = field(*c);
                *slot = if v.is_empty() { OTHER.into() } else { v.to_string() };
            }
        }

        let event = Event {
            case_id: case_id.clone(),
            date,
            activity,
        };
        match traces.get_mut(&case_id) {
            Some(trace) => {
                if let Some(attribute) = first_difference(&trace.attributes, &attributes) {
                    return Err(Error::InconsistentAttributes {
                        case_id,
                        attribute: attribute.into(),
                    });
                }
                trace.events.push(event);
            }
            None => {
                let mut trace = Trace::new(case_id.clone(), attributes);
                trace.events.push(event);
                traces.insert(case_id, trace);
            }
        }
    }
    Ok(EventLog::from_traces(
        traces.into_values(),
        options.reclamation_activity.clone(),
    ))
}

fn first_difference(a: &CaseAttributes, b: &CaseAttributes) -> Option<&'static str> {
    if a.age != b.age {
        return Some("age");
    }
    if a.max_benefit_months != b.max_benefit_months {
        return Some("max_benefit_months");
    }
    a.categorical()
        .iter()
        .zip(b.categorical())
        .zip(CATEGORICAL_ATTRIBUTES)
        .find(|((x, y), _)| *x != y)
        .map(|(_, name)| name)
}

pub fn write_log<W: Write>(log: &EventLog, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(HEADER)?;
    for trace in log.traces() {
        let a = &trace.attributes;
        let age = a.age.to_string();
        let months = a.max_benefit_months.to_string();
        for e in &trace.events {
            let date = e.date.format("%Y-%m-%d").to_string();
            wtr.write_record([
                e.case_id.as_str(),
                &date,
                &e.activity,
                &age,
                &a.gender,
                &a.marital_status,
                &months,
                &a.sector,
                &a.contract_type,
                &a.working_pattern,
                &a.dismissal_reason,
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_log_file(log: &EventLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(log, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseReport {
    pub case_id: String,
    pub event_count: usize,
    pub month_span: usize,
    pub has_reclamation: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub case_id: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub cases: Vec<CaseReport>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }

    pub fn warnings_for<'a>(&'a self, case_id: &'a str) -> impl Iterator<Item = &'a Warning> + 'a {
        self.warnings
            .iter()
            .filter(move |w| w.case_id.as_deref() == Some(case_id))
    }
}

pub fn validate_log(log: &EventLog) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut warn = |case_id: Option<&str>, message: String| {
        report.warnings.push(Warning {
            case_id: case_id.map(str::to_string),
            message,
        })
    };

    let mut seen = BTreeSet::new();
    for trace in log.traces() {
        let id = Some(trace.case_id.as_str());
        match trace.len() {
            0 => warn(id, "empty trace".into()),
            1 => warn(id, "single-event trace".into()),
            _ => {}
        }
        if trace.events.windows(2).any(|w| w[0].date > w[1].date) {
            warn(id, "events out of date order".into());
        }
        if trace.events.iter().any(|e| e.case_id != trace.case_id) {
            warn(id, "event with foreign case_id".into());
        }
        if trace.attributes.age < 16 {
            warn(id, format!("age {} below 16", trace.attributes.age));
        }
        if trace.attributes.max_benefit_months < 1 {
            warn(id, "max_benefit_months below 1".into());
        }
        seen.extend(trace.events.iter().map(|e| e.activity.as_str()));
    }
    let expected: Vec<&str> = seen.into_iter().collect();
    let actual: Vec<&str> = log.activity_alphabet().iter().map(String::as_str).collect();
    if expected != actual {
        warn(None, "activity alphabet does not match the activities in the log".into());
    }

    report.cases = log
        .traces()
        .map(|t| CaseReport {
            case_id: t.case_id.clone(),
            event_count: t.len(),
            month_span: t.month_span(),
            has_reclamation: t.contains_activity(log.reclamation_activity()),
        })
        .collect();
    report
}
