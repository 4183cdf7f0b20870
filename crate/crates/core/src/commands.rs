//! The subcommands behind the `parlab` binary.
//!
//! Every command is first resolved into an [`Invocation`]: the command name,
//! the root seed, the input paths and every setting as `section.key = value`
//! pairs (built-in defaults, then the config file, then command-line flags).
//! The invocation is written to `manifest.json` next to the outputs, and
//! [`execute`] on a manifest's invocation reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::YearMonth;
use crate::config::{parse_value, KeyValues};
use crate::error::{Error, Result};
use crate::event_log::{parse_log, validate_log, write_log_file, EventLog, ParseOptions};
use crate::experiment::{replicate, run_ab, write_results, ExperimentDesign, FieldSetup};
use crate::learners::feature_importance;
use crate::predictor::{evaluate, flag_above, score_case, train_bundle, PredictorBundle, TrainConfig};
use crate::prefix::LabelMode;
use crate::seeds;
use crate::selection::{compare_architectures, cumulative_lift, lift_svg, split_train_test, write_lift_csv};
use crate::simulator::{
    calibrate_intercept, expected_rate, generate_population, realized_rate, simulate, write_outcomes_file,
    GroundTruthModel, NoEmail, SimConfig,
};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Share of reclamations the field predictor caught in its top decile.
pub const REFERENCE_CAPTURE_AT_10: f64 = 0.19;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub command: String,
    pub seed: u64,
    /// Input files by role (`log`, `bundle`, `results`).
    pub inputs: BTreeMap<String, PathBuf>,
    /// Fully resolved settings, `section.key = value`.
    pub settings: BTreeMap<String, String>,
}

impl Invocation {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            seed,
            inputs: BTreeMap::new(),
            settings: BTreeMap::new(),
        }
    }

    fn input(&self, role: &str) -> Result<&Path> {
        self.inputs
            .get(role)
            .map(PathBuf::as_path)
            .ok_or_else(|| Error::Config(format!("missing input `{role}`")))
    }

    fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        for (k, v) in &self.settings {
            kv.insert(k.clone(), v.clone());
        }
        kv
    }

    fn setting<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.settings.get(key).map_or(Ok(default), |v| parse_value(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub inputs: Vec<FileDigest>,
    /// Output files relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Runs an invocation, writing its outputs and manifest under `out`.
/// Returns the human-readable summary printed by the CLI.
pub fn execute(inv: &Invocation, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (summary, mut outputs) = match inv.command.as_str() {
        "simulate" => cmd_simulate(inv, out)?,
        "train" => cmd_train(inv, out)?,
        "evaluate" => cmd_evaluate(inv, out)?,
        "score" => cmd_score(inv, out)?,
        "experiment" => cmd_experiment(inv, out)?,
        "report" => cmd_report(inv, out)?,
        other => return Err(Error::Config(format!("unknown command `{other}`"))),
    };
    outputs.sort();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        invocation: inv.clone(),
        inputs: inv
            .inputs
            .values()
            .filter(|p| p.is_file())
            .map(|p| Ok(FileDigest { path: p.clone(), sha256: digest(p)? }))
            .collect::<Result<_>>()?,
        outputs: outputs
            .iter()
            .map(|name| {
                Ok(FileDigest {
                    path: PathBuf::from(name),
                    sha256: digest(&out.join(name))?,
                })
            })
            .collect::<Result<_>>()?,
    };
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

/// Re-runs the invocation recorded in a manifest into `out`, after checking
/// that its input files are unchanged, and verifies that every recorded
/// output is reproduced byte for byte.
pub fn replay(manifest_path: impl AsRef<Path>, out: &Path) -> Result<String> {
    let recorded = Manifest::load(manifest_path)?;
    for input in &recorded.inputs {
        if digest(&input.path)? != input.sha256 {
            return Err(Error::InputChanged(input.path.clone()));
        }
    }
    let mut summary = execute(&recorded.invocation, out)?;
    let fresh = Manifest::load(out.join(MANIFEST_FILE))?;
    let differing: Vec<String> = recorded
        .outputs
        .iter()
        .filter(|o| !fresh.outputs.contains(o))
        .map(|o| o.path.display().to_string())
        .collect();
    if !differing.is_empty() {
        return Err(Error::ReplayMismatch(differing));
    }
    let _ = writeln!(summary, "replay: {} outputs identical to the manifest", recorded.outputs.len());
    Ok(summary)
}

fn write_text(out: &Path, name: &str, text: &str, outputs: &mut Vec<String>) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T, outputs: &mut Vec<String>) -> Result<()> {
    write_text(out, name, &(serde_json::to_string_pretty(value)? + "\n"), outputs)
}

fn load_log(inv: &Invocation) -> Result<EventLog> {
    let mut opts = ParseOptions::default();
    if let Some(a) = inv.settings.get("log.reclamation_activity") {
        opts.reclamation_activity = a.clone();
    }
    parse_log(inv.input("log")?, &opts)
}

fn sim_setup(inv: &Invocation, seed_label: &str, case_id_offset: Option<u64>) -> Result<SimConfig> {
    let mut config = SimConfig {
        seed: seeds::derive(inv.seed, seed_label),
        ..Default::default()
    };
    if let Some(offset) = case_id_offset {
        config.case_id_offset = offset;
    }
    inv.key_values().apply("sim", &mut config)?;
    config.validate()?;
    Ok(config)
}

fn ground_truth(inv: &Invocation) -> Result<(GroundTruthModel, bool)> {
    let mut model = GroundTruthModel::default();
    let mut kv = inv.key_values();
    let calibrate = inv.setting("model.calibrate", true)?;
    kv = KeyValues::parse(
        &kv.iter()
            .filter(|(k, _)| *k != "model.calibrate")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect::<String>(),
    )?;
    kv.apply("model", &mut model)?;
    model.validate()?;
    Ok((model, calibrate))
}

#[derive(Serialize)]
struct SimulationSummary {
    traces: usize,
    events: usize,
    customer_months: usize,
    target_rate: f64,
    expected_rate: f64,
    realized_rate: f64,
    model: GroundTruthModel,
}

fn cmd_simulate(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let config = sim_setup(inv, "simulate", None)?;
    let (model, calibrate) = ground_truth(inv)?;
    let population = generate_population(&config, seeds::derive(inv.seed, "population"))?;
    let model = if calibrate {
        calibrate_intercept(&model, &population, &config)?
    } else {
        model
    };
    let sim = simulate(&config, &model, &population, &mut NoEmail)?;
    let report = validate_log(&sim.log);
    let mut outputs = Vec::new();
    write_log_file(&sim.log, out.join("log.csv"))?;
    outputs.push("log.csv".into());
    write_outcomes_file(&sim.outcomes, out.join("outcomes.csv"))?;
    outputs.push("outcomes.csv".into());
    let summary = SimulationSummary {
        traces: sim.log.len(),
        events: sim.log.event_count(),
        customer_months: sim.outcomes.len(),
        target_rate: config.target_base_rate,
        expected_rate: expected_rate(&model, &population, &config),
        realized_rate: realized_rate(&sim.outcomes),
        model,
    };
    write_json(out, "simulation.json", &summary, &mut outputs)?;
    let text = format!(
        "simulated {} traces, {} events, {} customer-months\nmonthly reclamation rate: realized {:.3}%, expected {:.3}%, target {:.3}%\nvalidation warnings: {}\n",
        summary.traces,
        summary.events,
        summary.customer_months,
        100.0 * summary.realized_rate,
        100.0 * summary.expected_rate,
        100.0 * summary.target_rate,
        report.warnings.len()
    );
    Ok((text, outputs))
}

fn train_config(inv: &Invocation) -> Result<TrainConfig> {
    let mut config = TrainConfig {
        seed: seeds::derive(inv.seed, "train"),
        ..Default::default()
    };
    let kv = inv.key_values();
    for (k, v) in kv.section("train") {
        if !matches!(k, "train_fraction" | "compare_architectures") {
            crate::config::Configurable::set(&mut config, k, v)
                .map_err(|e| Error::Config(format!("train.{k}: {e}")))?;
        }
    }
    Ok(config)
}

fn cmd_train(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let log = load_log(inv)?;
    let config = train_config(inv)?;
    let fraction: f64 = inv.setting("train.train_fraction", 0.8)?;
    let compare: bool = inv.setting("train.compare_architectures", false)?;
    let (train, holdout) = split_train_test(&log, fraction, seeds::derive(inv.seed, "split"))?;
    let trained = train_bundle(&train, &config)?;
    let mut outputs = Vec::new();
    trained.bundle.save(out.join("bundle.json"))?;
    outputs.push("bundle.json".into());
    write_log_file(&holdout, out.join("holdout.csv"))?;
    outputs.push("holdout.csv".into());
    write_json(out, "training_report.json", &trained.report, &mut outputs)?;
    let mut buf = Vec::new();
    trained.report.write_csv(&mut buf)?;
    write_text(out, "cv_report.csv", &String::from_utf8_lossy(&buf), &mut outputs)?;

    let names = trained.bundle.schema.feature_names();
    let mut imp = String::from("model,rank,feature,importance\n");
    let models = std::iter::once(("pooled".to_string(), &trained.bundle.pooled_fallback))
        .chain(trained.bundle.models.iter().map(|(k, m)| (format!("bucket_{k}"), m)));
    for (name, model) in models {
        for (rank, (f, v)) in feature_importance(model).into_iter().enumerate() {
            let _ = writeln!(imp, "{name},{},\"{}\",{v}", rank + 1, names[f]);
        }
    }
    write_text(out, "feature_importance.csv", &imp, &mut outputs)?;

    let mut text = format!(
        "trained {} {} predictor on {} of {} traces ({} vectors, {} positive)\n",
        config.architecture.name(),
        config.learner.name(),
        train.len(),
        log.len(),
        trained.report.vectors,
        trained.report.positives
    );
    let _ = writeln!(
        text,
        "pooled: winner {:?} mean CV AUC {:.4}",
        trained.report.pooled.winner_params(),
        trained.report.pooled.winner_auc()
    );
    for (k, b) in &trained.report.buckets {
        match b {
            crate::predictor::BucketOutcome::Trained { vectors, cv, .. } => {
                let _ = writeln!(text, "bucket {k}: {vectors} vectors, mean CV AUC {:.4}", cv.winner_auc());
            }
            crate::predictor::BucketOutcome::Absorbed { vectors, reason, .. } => {
                let _ = writeln!(text, "bucket {k}: {vectors} vectors, pooled fallback ({reason})");
            }
        }
    }
    let top: Vec<String> = feature_importance(&trained.bundle.pooled_fallback)
        .into_iter()
        .take(5)
        .map(|(f, v)| format!("{} ({v:.3})", names[f]))
        .collect();
    let _ = writeln!(text, "top pooled features: {}", top.join(", "));

    if compare {
        let report = compare_architectures(&log, &config)?;
        write_json(out, "comparison.json", &report, &mut outputs)?;
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_text(out, "comparison.csv", &String::from_utf8_lossy(&buf), &mut outputs)?;
        let _ = writeln!(text, "\narchitecture  learner    test AUC");
        for c in &report.configurations {
            let _ = writeln!(
                text,
                "{:<13} {:<10} {}",
                c.architecture.name(),
                c.learner.name(),
                c.pooled_test_auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into())
            );
        }
    }
    Ok((text, outputs))
}

fn cmd_evaluate(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let bundle = PredictorBundle::load(inv.input("bundle")?)?;
    let log = load_log(inv)?;
    let mode: LabelMode = inv
        .settings
        .get("eval.label_mode")
        .map_or(Ok(LabelMode::NextMonth), |v| v.parse().map_err(Error::Config))?;
    let granularity: usize = inv.setting("eval.granularity", 100)?;
    let eval = evaluate(&bundle, &log, Some(mode))?;
    let curve = cumulative_lift(&eval.scores(), &eval.labels(), &eval.case_ids(), granularity)?;
    let captured = curve.point_at(0.10).captured_fraction;
    let mut outputs = Vec::new();

    let mut buf = Vec::new();
    write_lift_csv(&curve, &mut buf)?;
    write_text(out, "lift.csv", &String::from_utf8_lossy(&buf), &mut outputs)?;
    let svg = lift_svg(&curve, Some((0.10, REFERENCE_CAPTURE_AT_10, "field predictor: 19% at 10%")));
    write_text(out, "lift.svg", &svg, &mut outputs)?;
    let mut scores = String::from("case_id,prefix_months,score,label\n");
    for r in &eval.rows {
        let _ = writeln!(scores, "{},{},{},{}", r.case_id, r.prefix_months, r.score, u8::from(r.label));
    }
    write_text(out, "scores.csv", &scores, &mut outputs)?;

    #[derive(Serialize)]
    struct Metrics<'a> {
        label_mode: LabelMode,
        vectors: usize,
        base_rate: f64,
        auc: Option<f64>,
        bucket_auc: &'a BTreeMap<u32, Option<f64>>,
        captured_at_10: f64,
        lift_at_10: f64,
        reference_captured_at_10: f64,
    }
    let metrics = Metrics {
        label_mode: mode,
        vectors: eval.rows.len(),
        base_rate: curve.base_rate,
        auc: eval.auc,
        bucket_auc: &eval.bucket_auc,
        captured_at_10: captured,
        lift_at_10: curve.lift_at(0.10),
        reference_captured_at_10: REFERENCE_CAPTURE_AT_10,
    };
    write_json(out, "metrics.json", &metrics, &mut outputs)?;

    let mut text = format!(
        "evaluated {} vectors ({} labels, base rate {:.2}%)\nAUC: {}\n",
        eval.rows.len(),
        serde_json::to_value(mode)?.as_str().unwrap_or_default(),
        100.0 * curve.base_rate,
        eval.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undefined".into())
    );
    for (k, a) in &eval.bucket_auc {
        let _ = writeln!(
            text,
            "  {k} month(s): AUC {}",
            a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undefined".into())
        );
    }
    let _ = writeln!(
        text,
        "top 10% captures {:.1}% of reclamations (lift {:.2}); reference line: field predictor captured 19% (lift 1.9)",
        100.0 * captured,
        curve.lift_at(0.10)
    );
    write_text(out, "report.txt", &text, &mut outputs)?;
    Ok((text, outputs))
}

fn cmd_score(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let bundle = PredictorBundle::load(inv.input("bundle")?)?;
    let log = load_log(inv)?;
    let as_of: YearMonth = inv
        .settings
        .get("score.as_of")
        .ok_or_else(|| Error::Config("score.as_of (--as-of YYYY-MM) is required".into()))?
        .parse()
        .map_err(Error::Config)?;
    let threshold: f64 = inv.setting("score.threshold", bundle.threshold)?;
    let mut scores = BTreeMap::new();
    let mut skipped = 0;
    for trace in log.traces() {
        match score_case(&bundle, trace, as_of) {
            Ok(p) => {
                scores.insert(trace.case_id.clone(), p);
            }
            Err(Error::NoEventsBefore { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let flagged = flag_above(threshold, &scores);
    let mut csv = String::from("case_id,probability,flagged\n");
    for (c, p) in &scores {
        let _ = writeln!(csv, "{c},{p},{}", u8::from(flagged.contains(c)));
    }
    let mut outputs = Vec::new();
    write_text(out, "scores.csv", &csv, &mut outputs)?;
    Ok((
        format!(
            "scored {} cases as of {as_of}; {} flagged (score > {threshold}); {skipped} without events yet\n",
            scores.len(),
            flagged.len()
        ),
        outputs,
    ))
}

fn cmd_experiment(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let bundle = PredictorBundle::load(inv.input("bundle")?)?;
    let mut design = ExperimentDesign {
        seed: seeds::derive(inv.seed, "design"),
        ..Default::default()
    };
    let kv = inv.key_values();
    for (k, v) in kv.section("experiment") {
        if k != "replications" {
            crate::config::Configurable::set(&mut design, k, v)
                .map_err(|e| Error::Config(format!("experiment.{k}: {e}")))?;
        }
    }
    design.validate()?;
    let replications: usize = inv.setting("experiment.replications", 0)?;
    let mut config = sim_setup(inv, "field-simulate", Some(900_000))?;
    config.start = design.field_start;
    config.horizon_months = design.horizon();
    let (model, calibrate) = ground_truth(inv)?;
    let population = generate_population(&config, seeds::derive(inv.seed, "field-population"))?;
    let model = if calibrate {
        calibrate_intercept(&model, &population, &config)?
    } else {
        model
    };
    let field = FieldSetup {
        config: config.clone(),
        model,
        population,
    };
    let result = run_ab(&field, &bundle, &design)?;
    write_results(&result, out)?;
    let mut outputs: Vec<String> = ["groups.csv", "funnel.csv", "comparison.json", "summary.txt"]
        .map(String::from)
        .to_vec();
    write_log_file(&result.log, out.join("field_log.csv"))?;
    outputs.push("field_log.csv".into());
    write_outcomes_file(&result.outcomes, out.join("outcomes.csv"))?;
    outputs.push("outcomes.csv".into());
    let mut text = crate::experiment::summary_text(&result);
    if replications > 0 {
        let summary = replicate(
            &config,
            &model,
            &bundle,
            &design,
            replications,
            seeds::derive(inv.seed, "replications"),
        )?;
        write_json(out, "replications.json", &summary, &mut outputs)?;
        let _ = writeln!(
            text,
            "\n{} replications: p < 0.05 in {:.1}% ({} showed no significant difference)",
            summary.replications,
            100.0 * summary.significant_fraction,
            summary.p_values.iter().filter(|&&p| p >= 0.05).count()
        );
    }
    Ok((text, outputs))
}

fn cmd_report(inv: &Invocation, out: &Path) -> Result<(String, Vec<String>)> {
    let dir = inv.input("results")?;
    let mut text = String::new();
    for name in ["simulation.json", "report.txt", "summary.txt"] {
        let path = dir.join(name);
        if path.is_file() {
            let body = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let _ = writeln!(text, "== {name} ==\n{body}");
        }
    }
    if text.is_empty() {
        return Err(Error::Config(format!("no reports found in {}", dir.display())));
    }
    let mut outputs = Vec::new();
    write_text(out, "report.txt", &text, &mut outputs)?;
    Ok((text, outputs))
}
