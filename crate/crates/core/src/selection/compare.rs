//! Pooled versus per-month-bucket predictors, for both learner families.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::split::split_train_test;
use crate::error::Result;
use crate::event_log::EventLog;
use crate::learners::LearnerKind;
use crate::predictor::{evaluate, train_bundle, Architecture, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurationResult {
    pub architecture: Architecture,
    pub learner: LearnerKind,
    pub pooled_test_auc: Option<f64>,
    /// Test AUC restricted to vectors of each prefix length in months.
    pub per_bucket: BTreeMap<u32, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub train_cases: usize,
    pub test_cases: usize,
    pub configurations: Vec<ConfigurationResult>,
}

impl ComparisonReport {
    pub fn get(&self, architecture: Architecture, learner: LearnerKind) -> Option<&ConfigurationResult> {
        self.configurations
            .iter()
            .find(|c| c.architecture == architecture && c.learner == learner)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Long format: one row per configuration and scope (`pooled` or a bucket key).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["architecture", "learner", "scope", "test_auc"])?;
        let fmt = |a: Option<f64>| a.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.configurations {
            wtr.write_record([c.architecture.name(), c.learner.name(), "pooled", &fmt(c.pooled_test_auc)])?;
            for (k, a) in &c.per_bucket {
                wtr.write_record([c.architecture.name(), c.learner.name(), &k.to_string(), &fmt(*a)])?;
            }
        }
        wtr.flush().map_err(|e| crate::Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Splits `log` 80/20 by trace and reports test AUC for the four
/// (architecture, learner) configurations. The pooled configuration is the
/// bucketed bundle's fallback model alone, which is exactly what a pooled
/// training run would fit.
pub fn compare_architectures(log: &EventLog, config: &TrainConfig) -> Result<ComparisonReport> {
    let (train, test) = split_train_test(log, 0.8, crate::seeds::derive(config.seed, "compare-split"))?;
    let mut configurations = Vec::with_capacity(4);
    for learner in [LearnerKind::Logistic, LearnerKind::Adaboost] {
        let cfg = TrainConfig {
            learner,
            architecture: Architecture::Bucketed,
            ..config.clone()
        };
        let bucketed = train_bundle(&train, &cfg)?.bundle;
        let mut pooled = bucketed.clone();
        pooled.architecture = Architecture::Pooled;
        pooled.models.clear();
        for (architecture, bundle) in [(Architecture::Pooled, &pooled), (Architecture::Bucketed, &bucketed)] {
            let eval = evaluate(bundle, &test, None)?;
            configurations.push(ConfigurationResult {
                architecture,
                learner,
                pooled_test_auc: eval.auc,
                per_bucket: eval.bucket_auc,
            });
        }
    }
    Ok(ComparisonReport {
        train_cases: train.len(),
        test_cases: test.len(),
        configurations,
    })
}
