//! Stratified k-fold cross-validation over a hyper-parameter grid.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::auc;
use crate::error::{Error, Result};
use crate::learners::{fit, fit_adaboost, HyperParams, LearnerKind, Matrix, Model};
use crate::prefix::FeatureVector;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    /// Keep all vectors of a case in one fold instead of splitting per vector.
    pub group_by_case: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 0,
            group_by_case: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointResult {
    pub params: HyperParams,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub learner: LearnerKind,
    pub k: usize,
    pub points: Vec<GridPointResult>,
    /// Index into `points`.
    pub winner: usize,
}

impl CvReport {
    pub fn winner_params(&self) -> &HyperParams {
        &self.points[self.winner].params
    }

    pub fn winner_auc(&self) -> f64 {
        self.points[self.winner].mean_auc
    }

    pub fn write_csv<W: Write>(&self, writer: W, prefix_columns: &[(&str, String)]) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = prefix_columns.iter().map(|c| c.0).collect();
        header.extend([
            "learner",
            "grid_index",
            "l2_lambda",
            "num_rounds",
            "positive_weight",
            "mean_auc",
            "fold_aucs",
            "winner",
        ]);
        wtr.write_record(&header)?;
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = prefix_columns.iter().map(|c| c.1.clone()).collect();
            let folds: Vec<String> = p.fold_aucs.iter().map(f64::to_string).collect();
            row.extend([
                self.learner.name().to_string(),
                i.to_string(),
                p.params.l2_lambda.to_string(),
                p.params.num_rounds.to_string(),
                p.params.positive_weight.to_string(),
                p.mean_auc.to_string(),
                folds.join(";"),
                u8::from(i == self.winner).to_string(),
            ]);
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Fold index per instance. Positives and negatives are shuffled separately
/// and dealt round-robin (positives first), so fold sizes differ by at most
/// one and each fold gets its share of both classes. With `groups`, whole
/// groups are dealt instead, stratified on whether the group has a positive.
pub fn stratified_folds(labels: &[bool], groups: Option<&[String]>, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config("k must be >= 2".into()));
    }
    let mut rng = seeds::rng(seed, "cv-folds");
    let fold_of = match groups {
        None => {
            if labels.len() < k {
                return Err(Error::Config(format!("{} instances for {k} folds", labels.len())));
            }
            let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
            let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let mut fold_of = vec![0; labels.len()];
            for (slot, i) in pos.into_iter().chain(neg).enumerate() {
                fold_of[i] = slot % k;
            }
            fold_of
        }
        Some(groups) => {
            if groups.len() != labels.len() {
                return Err(Error::LengthMismatch("groups vs labels".into()));
            }
            let mut group_label: BTreeMap<&str, bool> = BTreeMap::new();
            for (g, &l) in groups.iter().zip(labels) {
                *group_label.entry(g.as_str()).or_insert(false) |= l;
            }
            if group_label.len() < k {
                return Err(Error::Config(format!("{} groups for {k} folds", group_label.len())));
            }
            let mut pos: Vec<&str> = group_label.iter().filter(|e| *e.1).map(|e| *e.0).collect();
            let mut neg: Vec<&str> = group_label.iter().filter(|e| !*e.1).map(|e| *e.0).collect();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let assignment: BTreeMap<&str, usize> = pos
                .into_iter()
                .chain(neg)
                .enumerate()
                .map(|(slot, g)| (g, slot % k))
                .collect();
            groups.iter().map(|g| assignment[g.as_str()]).collect()
        }
    };
    for fold in 0..k {
        let mut has = [false, false];
        for (f, &l) in fold_of.iter().zip(labels) {
            if *f == fold {
                has[usize::from(l)] = true;
            }
        }
        if !(has[0] && has[1]) {
            return Err(Error::FoldMissingClass { fold, k });
        }
    }
    Ok(fold_of)
}

pub fn cross_validate(
    vectors: &[FeatureVector],
    grid: &[HyperParams],
    kind: LearnerKind,
    options: &CvOptions,
) -> Result<CvReport> {
    let (x, y) = Matrix::from_vectors(vectors)?;
    let groups: Vec<String> = vectors.iter().map(|v| v.case_id.clone()).collect();
    cross_validate_matrix(&x, &y, options.group_by_case.then_some(groups.as_slice()), grid, kind, options)
}

/// One unit of CV work: a fold and the grid points it scores.
struct Task {
    fold: usize,
    /// Grid indices; for boosting, points sharing everything but the round
    /// count are served by one fit truncated per point.
    points: Vec<usize>,
}

pub fn cross_validate_matrix(
    x: &Matrix,
    y: &[bool],
    groups: Option<&[String]>,
    grid: &[HyperParams],
    kind: LearnerKind,
    options: &CvOptions,
) -> Result<CvReport> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for hp in grid {
        hp.validate()?;
    }
    let k = options.k;
    let fold_of = stratified_folds(y, groups, k, options.seed)?;

    let families: Vec<Vec<usize>> = match kind {
        LearnerKind::Logistic => (0..grid.len()).map(|i| vec![i]).collect(),
        LearnerKind::Adaboost => {
            let mut fam: Vec<Vec<usize>> = Vec::new();
            for i in 0..grid.len() {
                let key = HyperParams { num_rounds: 1, ..grid[i] };
                match fam.iter_mut().find(|f| HyperParams { num_rounds: 1, ..grid[f[0]] } == key) {
                    Some(f) => f.push(i),
                    None => fam.push(vec![i]),
                }
            }
            fam
        }
    };
    let tasks: Vec<Task> = (0..k)
        .flat_map(|fold| {
            families.iter().map(move |f| Task {
                fold,
                points: f.clone(),
            })
        })
        .collect();

    let results: Vec<Vec<(usize, usize, f64)>> = tasks
        .par_iter()
        .map(|task| -> Result<Vec<(usize, usize, f64)>> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != task.fold).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == task.fold).collect();
            let (xtr, xte) = (x.select_rows(&train), x.select_rows(&test));
            let ytr: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let score = |m: &Model| -> Result<f64> { Ok(auc(&m.predict_matrix(&xte)?, &yte)?.value) };
            match kind {
                LearnerKind::Logistic => task
                    .points
                    .iter()
                    .map(|&p| Ok((p, task.fold, score(&fit(kind, &xtr, &ytr, &grid[p])?)?)))
                    .collect(),
                LearnerKind::Adaboost => {
                    let longest = task.points.iter().map(|&p| grid[p].num_rounds).max().unwrap_or(1);
                    let hp = HyperParams {
                        num_rounds: longest,
                        ..grid[task.points[0]]
                    };
                    let full = fit_adaboost(&xtr, &ytr, &hp)?;
                    task.points
                        .iter()
                        .map(|&p| {
                            let m = Model::Adaboost(full.truncated(grid[p].num_rounds));
                            Ok((p, task.fold, score(&m)?))
                        })
                        .collect()
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut fold_aucs = vec![vec![f64::NAN; k]; grid.len()];
    for (p, fold, a) in results.into_iter().flatten() {
        fold_aucs[p][fold] = a;
    }
    let points: Vec<GridPointResult> = grid
        .iter()
        .zip(fold_aucs)
        .map(|(hp, aucs)| GridPointResult {
            params: *hp,
            mean_auc: aucs.iter().sum::<f64>() / k as f64,
            fold_aucs: aucs,
        })
        .collect();
    let mut winner = 0;
    for (i, p) in points.iter().enumerate() {
        if p.mean_auc > points[winner].mean_auc {
            winner = i;
        }
    }
    Ok(CvReport {
        learner: kind,
        k,
        points,
        winner,
    })
}
