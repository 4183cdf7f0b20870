//! The deployable predictor: encoding schema, one model per prefix length
//! in months, a pooled fallback and the flagging threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::config::{parse_value, unknown_key, Configurable};
use crate::error::{Error, Result};
use crate::event_log::{EventLog, Trace};
use crate::learners::{fit, HyperParams, LearnerKind, Matrix, Model};
use crate::prefix::{self, encode, encode_log, EncodingSchema, FeatureVector, LabelMode};
use crate::selection::{auc, cross_validate, CvOptions, CvReport, Grids};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// One model over all monthly vectors.
    Pooled,
    /// One model per prefix length in months.
    Bucketed,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Pooled => "pooled",
            Architecture::Bucketed => "bucketed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learner: LearnerKind,
    pub architecture: Architecture,
    pub grids: Grids,
    pub k_folds: usize,
    pub seed: u64,
    pub min_bucket_size: usize,
    pub threshold: f64,
    pub label_mode: LabelMode,
    pub cv_group_by_case: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learner: LearnerKind::Adaboost,
            architecture: Architecture::Bucketed,
            grids: Grids::default(),
            k_folds: 5,
            seed: 0,
            min_bucket_size: 50,
            threshold: 0.8,
            label_mode: LabelMode::Eventual,
            cv_group_by_case: false,
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pooled" => Ok(Architecture::Pooled),
            "bucketed" => Ok(Architecture::Bucketed),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

impl Configurable for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "learner" => self.learner = value.parse().map_err(Error::Config)?,
            "architecture" => self.architecture = value.parse().map_err(Error::Config)?,
            "grid" => {
                self.grids = match value {
                    "default" => Grids::default(),
                    "single-point" | "single_point" => Grids::single_point(),
                    other => return Err(Error::Config(format!("unknown grid `{other}`"))),
                }
            }
            "k" | "k_folds" => self.k_folds = parse_value(value)?,
            "seed" => self.seed = parse_value(value)?,
            "min_bucket_size" => self.min_bucket_size = parse_value(value)?,
            "threshold" => self.threshold = parse_value(value)?,
            "label_mode" => self.label_mode = value.parse().map_err(Error::Config)?,
            "cv_by_case" | "cv_group_by_case" => self.cv_group_by_case = parse_value(value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}

impl TrainConfig {
    fn cv_options(&self, label: &str) -> CvOptions {
        CvOptions {
            k: self.k_folds,
            seed: crate::seeds::derive(self.seed, label),
            group_by_case: self.cv_group_by_case,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingFingerprint {
    pub log_hash: String,
    pub seed: u64,
    pub grid: Vec<HyperParams>,
    pub k_folds: usize,
    pub min_bucket_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorBundle {
    pub format_version: u32,
    pub schema: EncodingSchema,
    pub schema_fingerprint: String,
    pub reclamation_activity: String,
    pub learner: LearnerKind,
    pub architecture: Architecture,
    /// Keyed by prefix length in months (>= 1).
    pub models: BTreeMap<u32, Model>,
    pub pooled_fallback: Model,
    pub threshold: f64,
    pub fingerprint: TrainingFingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BucketOutcome {
    Trained { vectors: usize, positives: usize, cv: CvReport },
    Absorbed { vectors: usize, positives: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub vectors: usize,
    pub positives: usize,
    pub pooled: CvReport,
    pub buckets: BTreeMap<u32, BucketOutcome>,
}

impl TrainingReport {
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut buf = Vec::new();
        self.pooled.write_csv(&mut buf, &[("model", "pooled".to_string())])?;
        for (k, b) in &self.buckets {
            if let BucketOutcome::Trained { cv, .. } = b {
                let mut part = Vec::new();
                cv.write_csv(&mut part, &[("model", format!("bucket_{k}"))])?;
                // drop the repeated header
                let body = part.splitn(2, |c| *c == b'\n').nth(1).unwrap_or_default();
                buf.extend_from_slice(body);
            }
        }
        let mut writer = writer;
        writer.write_all(&buf).map_err(|e| Error::io("<csv writer>", e))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub bundle: PredictorBundle,
    pub report: TrainingReport,
}

fn positives(vectors: &[FeatureVector]) -> usize {
    vectors.iter().filter(|v| v.label).count()
}

fn select_and_fit(vectors: &[FeatureVector], config: &TrainConfig, label: &str) -> Result<(Model, CvReport)> {
    let grid = config.grids.for_learner(config.learner);
    let cv = cross_validate(vectors, grid, config.learner, &config.cv_options(label))?;
    let (x, y) = Matrix::from_vectors(vectors)?;
    let model = fit(config.learner, &x, &y, cv.winner_params())?;
    Ok((model, cv))
}

/// Prefixes, monthly retention, encoding, bucketing, then per-bucket CV and
/// fit. Buckets smaller than `min_bucket_size`, or whose folds cannot hold
/// both classes, are left to the pooled fallback.
/// Bucket key, fitted model or the reason it was absorbed, size, positives.
type FittedBucket = (u32, std::result::Result<(Model, CvReport), String>, usize, usize);

pub fn train_bundle(log: &EventLog, config: &TrainConfig) -> Result<TrainOutput> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if !(config.threshold > 0.0 && config.threshold < 1.0) {
        return Err(Error::Config(format!("threshold {} not in (0, 1)", config.threshold)));
    }
    let schema = EncodingSchema::from_log(log, config.label_mode);
    let vectors = encode_log(log, &schema)?;
    let pos = positives(&vectors);
    if pos == 0 || pos == vectors.len() {
        return Err(Error::DegenerateLabels);
    }

    let (pooled_fallback, pooled_cv) = select_and_fit(&vectors, config, "pooled")?;

    let mut models = BTreeMap::new();
    let mut buckets = BTreeMap::new();
    if config.architecture == Architecture::Bucketed {
        let grouped: Vec<(u32, Vec<FeatureVector>)> = prefix::bucket_by_months(vectors.clone()).into_iter().collect();
        let fitted: Vec<FittedBucket> = grouped
            .par_iter()
            .map(|(months, vs)| {
                let (n, p) = (vs.len(), positives(vs));
                let res = if n < config.min_bucket_size {
                    Err(format!("{n} vectors < min_bucket_size {}", config.min_bucket_size))
                } else {
                    match select_and_fit(vs, config, &format!("bucket-{months}")) {
                        Ok(r) => Ok(r),
                        Err(e @ (Error::FoldMissingClass { .. } | Error::DegenerateLabels | Error::Config(_))) => {
                            Err(e.to_string())
                        }
                        Err(e) => return Err(e),
                    }
                };
                Ok((*months, res, n, p))
            })
            .collect::<Result<_>>()?;
        for (months, res, n, p) in fitted {
            match res {
                Ok((model, cv)) => {
                    models.insert(months, model);
                    buckets.insert(months, BucketOutcome::Trained { vectors: n, positives: p, cv });
                }
                Err(reason) => {
                    buckets.insert(months, BucketOutcome::Absorbed { vectors: n, positives: p, reason });
                }
            }
        }
    }

    let bundle = PredictorBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        schema_fingerprint: schema.fingerprint(),
        schema,
        reclamation_activity: log.reclamation_activity().to_string(),
        learner: config.learner,
        architecture: config.architecture,
        models,
        pooled_fallback,
        threshold: config.threshold,
        fingerprint: TrainingFingerprint {
            log_hash: log.fingerprint(),
            seed: config.seed,
            grid: config.grids.for_learner(config.learner).to_vec(),
            k_folds: config.k_folds,
            min_bucket_size: config.min_bucket_size,
        },
    };
    Ok(TrainOutput {
        bundle,
        report: TrainingReport {
            vectors: vectors.len(),
            positives: pos,
            pooled: pooled_cv,
            buckets,
        },
    })
}

impl PredictorBundle {
    /// The model serving prefixes of `months` months: the exact bucket, else
    /// the nearest one (ties to the smaller key), else the pooled fallback.
    pub fn route(&self, months: u32) -> (Option<u32>, &Model) {
        if let Some(m) = self.models.get(&months) {
            return (Some(months), m);
        }
        let nearest = self
            .models
            .keys()
            .min_by_key(|&&k| (k.abs_diff(months), k))
            .copied();
        match nearest {
            Some(k) => (Some(k), &self.models[&k]),
            None => (None, &self.pooled_fallback),
        }
    }

    /// Probability for an encoded vector, routed by its `prefix_months`.
    pub fn score_vector(&self, v: &FeatureVector) -> Result<f64> {
        self.route(v.prefix_months).1.predict_proba(&v.values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(s)?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported bundle format version {}", b.format_version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Scores a running case on the events known at the end of `as_of`.
pub fn score_case(bundle: &PredictorBundle, running_trace: &Trace, as_of: YearMonth) -> Result<f64> {
    let known = running_trace.as_of(as_of);
    if known.is_empty() {
        return Err(Error::NoEventsBefore {
            case_id: running_trace.case_id.clone(),
            as_of: as_of.to_string(),
        });
    }
    let prefixes = prefix::generate_prefixes(&known, &bundle.reclamation_activity)?;
    let full = prefixes.last().expect("non-empty trace");
    let v = encode(full, &bundle.schema)?;
    bundle.score_vector(&v)
}

/// Cases scoring strictly above the bundle threshold.
pub fn flag_risky(bundle: &PredictorBundle, scores: &BTreeMap<String, f64>) -> BTreeSet<String> {
    flag_above(bundle.threshold, scores)
}

pub fn flag_above(threshold: f64, scores: &BTreeMap<String, f64>) -> BTreeSet<String> {
    scores
        .iter()
        .filter(|(_, &p)| p > threshold)
        .map(|(c, _)| c.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredVector {
    pub case_id: String,
    pub prefix_months: u32,
    pub score: f64,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: Vec<ScoredVector>,
    /// `None` when the labels are single-class.
    pub auc: Option<f64>,
    pub bucket_auc: BTreeMap<u32, Option<f64>>,
}

impl Evaluation {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.label).collect()
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.case_id.clone()).collect()
    }
}

/// Scores every monthly prefix of every trace in `log`.
pub fn evaluate(bundle: &PredictorBundle, log: &EventLog, label_mode: Option<LabelMode>) -> Result<Evaluation> {
    let mut schema = bundle.schema.clone();
    if let Some(mode) = label_mode {
        schema.label_mode = mode;
    }
    let traces: Vec<&Trace> = log.traces().collect();
    let per_trace: Vec<Vec<ScoredVector>> = traces
        .par_iter()
        .map(|t| {
            prefix::encode_trace(t, &schema, &bundle.reclamation_activity)?
                .into_iter()
                .map(|v| {
                    Ok(ScoredVector {
                        score: bundle.score_vector(&v)?,
                        case_id: v.case_id,
                        prefix_months: v.prefix_months,
                        label: v.label,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ScoredVector> = per_trace.into_iter().flatten().collect();
    let pooled = auc(&rows.iter().map(|r| r.score).collect::<Vec<_>>(), &rows.iter().map(|r| r.label).collect::<Vec<_>>())
        .ok()
        .map(|a| a.value);
    let mut by_bucket: BTreeMap<u32, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for r in &rows {
        let e = by_bucket.entry(r.prefix_months).or_default();
        e.0.push(r.score);
        e.1.push(r.label);
    }
    let bucket_auc = by_bucket
        .into_iter()
        .map(|(k, (s, l))| (k, auc(&s, &l).ok().map(|a| a.value)))
        .collect();
    Ok(Evaluation {
        rows,
        auc: pooled,
        bucket_auc,
    })
}
