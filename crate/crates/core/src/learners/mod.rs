//! From-scratch binary classifiers with probability outputs.

mod boost;
mod logistic;

pub use boost::{fit_adaboost, fit_adaboost_traced, BoostModel, BoostRound, RoundTrace, Stump, ALPHA_CAP};
pub use logistic::{fit_logistic, fit_logistic_traced, LinearModel, LogisticObjective, Standardization};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prefix::FeatureVector;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Design matrix and labels from encoded vectors.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<(Self, Vec<bool>)> {
        let rows: Vec<&[f64]> = vectors.iter().map(|v| v.values.as_slice()).collect();
        let m = Self::from_rows(&rows)?;
        Ok((m, vectors.iter().map(|v| v.label).collect()))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Logistic,
    Adaboost,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Logistic => "logistic",
            LearnerKind::Adaboost => "adaboost",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(LearnerKind::Logistic),
            "adaboost" | "ada_boost" => Ok(LearnerKind::Adaboost),
            other => Err(format!("unknown learner `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub l2_lambda: f64,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub grad_tolerance: f64,
    pub num_rounds: usize,
    /// Multiplier on the loss (or initial boosting weight) of positives.
    pub positive_weight: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            l2_lambda: 0.01,
            learning_rate: 1.0,
            max_iters: 500,
            grad_tolerance: 1e-5,
            num_rounds: 100,
            positive_weight: 1.0,
        }
    }
}

impl HyperParams {
    pub fn logistic(l2_lambda: f64) -> Self {
        Self {
            l2_lambda,
            ..Self::default()
        }
    }

    pub fn boosting(num_rounds: usize) -> Self {
        Self {
            num_rounds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("hyper-parameter {what}")));
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be >= 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.num_rounds == 0 {
            return bad("num_rounds must be >= 1");
        }
        if !(self.positive_weight > 0.0) {
            return bad("positive_weight must be > 0");
        }
        Ok(())
    }
}

pub(crate) fn check_labels(y: &[bool]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if y.iter().all(|&l| l) || y.iter().all(|&l| !l) {
        return Err(Error::DegenerateLabels);
    }
    Ok(())
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Logistic(LinearModel),
    Adaboost(BoostModel),
}

impl Model {
    pub fn kind(&self) -> LearnerKind {
        match self {
            Model::Logistic(_) => LearnerKind::Logistic,
            Model::Adaboost(_) => LearnerKind::Adaboost,
        }
    }

    pub fn dimension(&self) -> usize {
        match self {
            Model::Logistic(m) => m.dimension(),
            Model::Adaboost(m) => m.dimension(),
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        match self {
            Model::Logistic(m) => m.predict_proba(x),
            Model::Adaboost(m) => m.predict_proba(x),
        }
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        x.iter_rows().map(|r| self.predict_proba(r)).collect()
    }
}

pub fn fit(kind: LearnerKind, x: &Matrix, y: &[bool], hp: &HyperParams) -> Result<Model> {
    Ok(match kind {
        LearnerKind::Logistic => Model::Logistic(fit_logistic(x, y, hp)?),
        LearnerKind::Adaboost => Model::Adaboost(fit_adaboost(x, y, hp)?),
    })
}

/// Features ranked by influence, descending; ties by feature index.
///
/// Logistic: |beta| on the standardized scale. Boosting: total alpha of the
/// rounds splitting on the feature.
pub fn feature_importance(model: &Model) -> Vec<(usize, f64)> {
    let raw: Vec<f64> = match model {
        Model::Logistic(m) => m.weights.iter().map(|w| w.abs()).collect(),
        Model::Adaboost(m) => {
            let mut mass = vec![0.0; m.dimension()];
            for r in m.rounds() {
                mass[r.stump.feature] += r.alpha;
            }
            mass
        }
    };
    let mut ranked: Vec<(usize, f64)> = raw.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Standalone serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub schema_fingerprint: Option<String>,
    pub model: Model,
}

impl ModelDocument {
    pub fn new(model: Model, schema_fingerprint: Option<String>) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            schema_fingerprint,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }
}
