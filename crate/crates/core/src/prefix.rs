//! Prefix construction, monthly retention and feature encoding.
//!
//! Every completed trace of `m` events yields `m` prefixes standing in for
//! running cases. Prediction happens once a month, so only prefixes that end
//! at a calendar-month boundary (plus the full trace) are retained. Each
//! retained prefix becomes a fixed-layout vector:
//!
//! ```text
//! [ count per activity | max_benefit_months | duration_months | one-hot attrs... | age ]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::YearMonth;
use crate::error::{Error, Result};
use crate::event_log::{CaseAttributes, Event, EventLog, Trace, CATEGORICAL_ATTRIBUTES, OTHER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Reclamation anywhere in the completed trace.
    #[default]
    Eventual,
    /// Reclamation detected in the calendar month after the prefix's last event.
    NextMonth,
}

impl std::str::FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "eventual" => Ok(LabelMode::Eventual),
            "next_month" | "next-month" => Ok(LabelMode::NextMonth),
            other => Err(format!("unknown label mode `{other}`")),
        }
    }
}

/// The first `length` events of a trace.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    trace: &'a Trace,
    pub length: usize,
    pub full_trace_has_reclamation: bool,
    pub next_month_has_reclamation: bool,
}

impl<'a> Prefix<'a> {
    pub fn case_id(&self) -> &'a str {
        &self.trace.case_id
    }

    pub fn events(&self) -> &'a [Event] {
        &self.trace.events[..self.length]
    }

    pub fn attributes(&self) -> &'a CaseAttributes {
        &self.trace.attributes
    }

    pub fn trace(&self) -> &'a Trace {
        self.trace
    }

    pub fn is_full(&self) -> bool {
        self.length == self.trace.len()
    }

    /// Calendar-month difference between the last and first event.
    pub fn duration_months(&self) -> u32 {
        let ev = self.events();
        (ev[self.length - 1].month().index() - ev[0].month().index()) as u32
    }

    /// Distinct calendar months spanned: `duration_months + 1`.
    pub fn prefix_months(&self) -> u32 {
        self.duration_months() + 1
    }

    pub fn label(&self, mode: LabelMode) -> bool {
        match mode {
            LabelMode::Eventual => self.full_trace_has_reclamation,
            LabelMode::NextMonth => self.next_month_has_reclamation,
        }
    }
}

/// All `m` prefixes of a trace, by increasing length.
pub fn generate_prefixes<'a>(trace: &'a Trace, reclamation_activity: &str) -> Result<Vec<Prefix<'a>>> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let full = trace.contains_activity(reclamation_activity);
    let reclamation_months: BTreeSet<YearMonth> = trace
        .events
        .iter()
        .filter(|e| e.activity == reclamation_activity)
        .map(Event::month)
        .collect();
    Ok((1..=trace.len())
        .map(|length| {
            let next = trace.events[length - 1].month().add_months(1);
            Prefix {
                trace,
                length,
                full_trace_has_reclamation: full,
                next_month_has_reclamation: reclamation_months.contains(&next),
            }
        })
        .collect())
}

/// Keeps the prefixes whose next event falls in a later calendar month, and
/// the full-length prefix.
pub fn retain_monthly<'a>(prefixes: Vec<Prefix<'a>>) -> Vec<Prefix<'a>> {
    prefixes
        .into_iter()
        .filter(|p| {
            p.is_full() || {
                let ev = &p.trace.events;
                ev[p.length].month() > ev[p.length - 1].month()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchema {
    activity_alphabet: Vec<String>,
    /// One sorted vocabulary per entry of [`CATEGORICAL_ATTRIBUTES`], each
    /// containing [`OTHER`].
    vocabularies: Vec<Vec<String>>,
    pub label_mode: LabelMode,
}

impl EncodingSchema {
    pub fn new(
        activities: impl IntoIterator<Item = String>,
        vocabularies: [Vec<String>; 6],
        label_mode: LabelMode,
    ) -> Self {
        let activity_alphabet: BTreeSet<String> = activities.into_iter().collect();
        let vocabularies = vocabularies
            .into_iter()
            .map(|v| {
                let mut set: BTreeSet<String> = v.into_iter().collect();
                set.insert(OTHER.to_string());
                set.into_iter().collect()
            })
            .collect();
        Self {
            activity_alphabet: activity_alphabet.into_iter().collect(),
            vocabularies,
            label_mode,
        }
    }

    /// Alphabet and vocabularies observed in a (training) log.
    pub fn from_log(log: &EventLog, label_mode: LabelMode) -> Self {
        let mut vocab: [Vec<String>; 6] = Default::default();
        for trace in log.traces() {
            for (slot, value) in vocab.iter_mut().zip(trace.attributes.categorical()) {
                slot.push(value.to_string());
            }
        }
        Self::new(log.activity_alphabet().iter().cloned(), vocab, label_mode)
    }

    pub fn activity_alphabet(&self) -> &[String] {
        &self.activity_alphabet
    }

    pub fn vocabulary(&self, attribute: usize) -> &[String] {
        &self.vocabularies[attribute]
    }

    pub fn max_benefit_index(&self) -> usize {
        self.activity_alphabet.len()
    }

    pub fn duration_index(&self) -> usize {
        self.activity_alphabet.len() + 1
    }

    pub fn one_hot_offset(&self, attribute: usize) -> usize {
        self.activity_alphabet.len() + 2 + self.vocabularies[..attribute].iter().map(Vec::len).sum::<usize>()
    }

    pub fn age_index(&self) -> usize {
        self.dimension() - 1
    }

    pub fn dimension(&self) -> usize {
        self.activity_alphabet.len() + 2 + self.vocabularies.iter().map(Vec::len).sum::<usize>() + 1
    }

    pub fn activity_index(&self, activity: &str) -> Option<usize> {
        self.activity_alphabet
            .binary_search_by(|a| a.as_str().cmp(activity))
            .ok()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .activity_alphabet
            .iter()
            .map(|a| format!("count:{a}"))
            .collect();
        names.push("max_benefit_months".into());
        names.push("duration_months".into());
        for (attr, vocab) in CATEGORICAL_ATTRIBUTES.iter().zip(&self.vocabularies) {
            names.extend(vocab.iter().map(|v| format!("{attr}={v}")));
        }
        names.push("age".into());
        names
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: bool,
    pub case_id: String,
    pub prefix_months: u32,
}

pub fn encode(prefix: &Prefix<'_>, schema: &EncodingSchema) -> Result<FeatureVector> {
    let mut values = vec![0.0; schema.dimension()];
    for e in prefix.events() {
        let idx = schema
            .activity_index(&e.activity)
            .ok_or_else(|| Error::UnknownActivity(e.activity.clone()))?;
        values[idx] += 1.0;
    }
    let attrs = prefix.attributes();
    values[schema.max_benefit_index()] = attrs.max_benefit_months as f64;
    values[schema.duration_index()] = prefix.duration_months() as f64;
    for (i, value) in attrs.categorical().iter().enumerate() {
        let vocab = schema.vocabulary(i);
        let pos = vocab
            .binary_search_by(|v| v.as_str().cmp(value))
            .or_else(|_| vocab.binary_search_by(|v| v.as_str().cmp(OTHER)))
            .expect("vocabulary contains `other`");
        values[schema.one_hot_offset(i) + pos] = 1.0;
    }
    values[schema.age_index()] = attrs.age as f64;
    Ok(FeatureVector {
        values,
        label: prefix.label(schema.label_mode),
        case_id: prefix.case_id().to_string(),
        prefix_months: prefix.prefix_months(),
    })
}

/// Generate, retain and encode the monthly prefixes of one trace.
pub fn encode_trace(trace: &Trace, schema: &EncodingSchema, reclamation_activity: &str) -> Result<Vec<FeatureVector>> {
    retain_monthly(generate_prefixes(trace, reclamation_activity)?)
        .iter()
        .map(|p| encode(p, schema))
        .collect()
}

/// Monthly vectors for every trace of a log, in case-id order.
pub fn encode_log(log: &EventLog, schema: &EncodingSchema) -> Result<Vec<FeatureVector>> {
    let traces: Vec<&Trace> = log.traces().collect();
    let per_trace: Vec<Vec<FeatureVector>> = traces
        .par_iter()
        .map(|t| encode_trace(t, schema, log.reclamation_activity()))
        .collect::<Result<_>>()?;
    Ok(per_trace.into_iter().flatten().collect())
}

pub fn bucket_by_months(vectors: Vec<FeatureVector>) -> BTreeMap<u32, Vec<FeatureVector>> {
    let mut buckets: BTreeMap<u32, Vec<FeatureVector>> = BTreeMap::new();
    for v in vectors {
        buckets.entry(v.prefix_months).or_default().push(v);
    }
    buckets
}

/// One row per vector: schema columns, then `label`, `case_id`, `prefix_months`.
pub fn write_vectors<W: Write>(schema: &EncodingSchema, vectors: &[FeatureVector], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = schema.feature_names();
    header.extend(["label", "case_id", "prefix_months"].map(String::from));
    wtr.write_record(&header)?;
    for v in vectors {
        let mut row: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        row.push(u8::from(v.label).to_string());
        row.push(v.case_id.clone());
        row.push(v.prefix_months.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calendar::parse_date;
    use crate::event_log::DEFAULT_RECLAMATION_ACTIVITY as RECLAIM;

    fn trace(dates_acts: &[(&str, &str)]) -> Trace {
        let mut t = Trace::new(
            "25879",
            CaseAttributes {
                age: 45,
                gender: "male".into(),
                max_benefit_months: 12,
                ..CaseAttributes::default()
            },
        );
        for (d, a) in dates_acts {
            t.events.push(Event {
                case_id: "25879".into(),
                date: parse_date(d).unwrap(),
                activity: a.to_string(),
            });
        }
        t
    }

    fn june_july_august() -> Trace {
        trace(&[
            ("2017-06-20", "Initialize the Income Form"),
            ("2017-07-03", "Send Income Form"),
            ("2017-07-10", "Check Income Form"),
            ("2017-07-15", "Pay Benefits"),
            ("2017-08-03", "Send Income Form"),
            ("2017-08-09", RECLAIM),
            ("2017-08-15", "Pay Benefits"),
        ])
    }

    #[test]
    fn empty_trace_is_rejected() {
        let t = trace(&[]);
        assert!(matches!(generate_prefixes(&t, RECLAIM), Err(Error::EmptyTrace)));
    }

    #[test]
    fn one_prefix_per_event() {
        let t = june_july_august();
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        assert_eq!(p.len(), 7);
        assert!(p.iter().enumerate().all(|(i, p)| p.length == i + 1));
    }

    #[test]
    fn single_event_prefix_is_trace() {
        let t = trace(&[("2017-06-20", "A")]);
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].events(), &t.events[..]);
    }

    #[test]
    fn monthly_retention_keeps_month_ends() {
        let t = june_july_august();
        let kept: Vec<usize> = retain_monthly(generate_prefixes(&t, RECLAIM).unwrap())
            .iter()
            .map(|p| p.length)
            .collect();
        assert_eq!(kept, [1, 4, 7]);
        let months: Vec<u32> = retain_monthly(generate_prefixes(&t, RECLAIM).unwrap())
            .iter()
            .map(|p| p.prefix_months())
            .collect();
        assert_eq!(months, [1, 2, 3]);
    }

    #[test]
    fn single_month_trace_keeps_only_full_prefix() {
        let t = trace(&[("2017-06-01", "A"), ("2017-06-02", "B"), ("2017-06-30", "C")]);
        let kept = retain_monthly(generate_prefixes(&t, RECLAIM).unwrap());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].length, 3);
    }

    #[test]
    fn first_prefix_encoding() {
        let t = june_july_august();
        let log = EventLog::from_traces([t.clone()], RECLAIM);
        let schema = EncodingSchema::from_log(&log, LabelMode::Eventual);
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        let v = encode(&p[0], &schema).unwrap();
        let init = schema.activity_index("Initialize the Income Form").unwrap();
        for (i, _) in schema.activity_alphabet().iter().enumerate() {
            assert_eq!(v.values[i], if i == init { 1.0 } else { 0.0 });
        }
        assert_eq!(v.values[schema.duration_index()], 0.0);
        assert_eq!(v.values[schema.max_benefit_index()], 12.0);
        assert_eq!(v.values[schema.age_index()], 45.0);
        assert!(v.label, "eventual label sees the August reclamation");

        let last = encode(&p[6], &schema).unwrap();
        assert_eq!(last.values[schema.duration_index()], 2.0);
    }

    #[test]
    fn next_month_label() {
        let t = june_july_august();
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        // July prefixes see the August detection; June and August ones do not.
        let flags: Vec<bool> = p.iter().map(|p| p.next_month_has_reclamation).collect();
        assert_eq!(flags, [false, true, true, true, false, false, false]);
    }

    #[test]
    fn unknown_activity_is_an_error() {
        let t = june_july_august();
        let schema = EncodingSchema::new(["Pay Benefits".to_string()], Default::default(), LabelMode::Eventual);
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        assert!(matches!(encode(&p[0], &schema), Err(Error::UnknownActivity(_))));
    }

    #[test]
    fn unseen_categorical_maps_to_other() {
        let t = june_july_august();
        let schema = EncodingSchema::new(
            t.events.iter().map(|e| e.activity.clone()),
            [vec!["female".to_string()], vec![], vec![], vec![], vec![], vec![]],
            LabelMode::Eventual,
        );
        let p = generate_prefixes(&t, RECLAIM).unwrap();
        let v = encode(&p[0], &schema).unwrap();
        let off = schema.one_hot_offset(0);
        // vocabulary is [female, other]
        assert_eq!(&v.values[off..off + 2], &[0.0, 1.0]);
    }

    #[test]
    fn buckets_group_by_months() {
        let mk = |m| FeatureVector {
            values: vec![],
            label: false,
            case_id: "x".into(),
            prefix_months: m,
        };
        let b = bucket_by_months(vec![mk(1), mk(1), mk(2), mk(3)]);
        let sizes: Vec<(u32, usize)> = b.iter().map(|(k, v)| (*k, v.len())).collect();
        assert_eq!(sizes, [(1, 2), (2, 1), (3, 1)]);
    }

    #[test]
    fn feature_names_match_dimension() {
        let t = june_july_august();
        let log = EventLog::from_traces([t], RECLAIM);
        let schema = EncodingSchema::from_log(&log, LabelMode::Eventual);
        assert_eq!(schema.feature_names().len(), schema.dimension());
        assert_eq!(schema.feature_names()[schema.age_index()], "age");
    }
}
