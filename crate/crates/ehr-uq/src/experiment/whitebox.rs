//! `eval-whitebox`: score every decoder grid cell on the held-out slice
//! and emit the first results table (CSV + JSON).
//!
//! Table layout: one row per task; one column group per method x tasking
//! cell; within a group the calibration metrics (Brier, NLL, ECE, aECE,
//! AUROC) plus the sample count. Cells that cannot be produced (missing
//! checkpoint, load failure) are reported as missing with a reason and the
//! run continues.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blackbox::{default_tasks, TaskSpec};
use crate::decoder::{read_embeddings, Decoder, DeepEnsemble, EmbeddingRecord};
use crate::ehr::TaskId;
use crate::error::{Error, Result};
use crate::metrics::{
    aece, auroc, brier_score, ece, nll, reliability_table, ProbabilisticPrediction, ReliabilityBin,
};

use super::train::checkpoint_name;
use super::{
    run_pool, stable_seed, ExperimentConfig, Method, RunManifest, RunPaths, Tasking,
    REPORT_SCHEMA_VERSION,
};

pub const WHITEBOX_METRICS: [&str; 5] = ["brier", "nll", "ece", "aece", "auroc"];

/// One task x cell entry of the whitebox table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxCell {
    pub sample_count: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Metrics with degenerate inputs (e.g. one-class AUROC).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
    /// Fixed-width reliability bins backing the plot exports.
    pub reliability: Vec<ReliabilityBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxRow {
    pub task: String,
    pub category: String,
    /// Cell key "method:tasking" -> scored cell.
    pub cells: BTreeMap<String, WhiteboxCell>,
    /// Cell key -> reason the cell could not be evaluated.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub missing: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteboxReport {
    pub schema_version: u32,
    pub seed: u64,
    pub bins: usize,
    pub mc_passes: usize,
    pub ensemble_size: usize,
    pub test_size: usize,
    /// Grid cell keys in column order.
    pub cells: Vec<String>,
    /// One row per task, in the standard task order.
    pub rows: Vec<WhiteboxRow>,
}

pub fn cell_key(method: Method, tasking: Tasking) -> String {
    format!("{}:{}", method.as_str(), tasking.as_str())
}

fn scope_of(task: &TaskSpec, tasking: Tasking) -> String {
    match tasking {
        Tasking::Single => task.id.to_string(),
        Tasking::Multi => task.category.as_str().to_string(),
    }
}

/// Scores one prediction batch into a table cell.
fn score_cell(preds: &[ProbabilisticPrediction], bins: usize) -> Result<WhiteboxCell> {
    let mut metrics = BTreeMap::new();
    let mut undefined = Vec::new();
    metrics.insert("brier".to_string(), brier_score(preds)?);
    metrics.insert("nll".to_string(), nll(preds)?);
    metrics.insert("ece".to_string(), ece(preds, bins)?);
    metrics.insert("aece".to_string(), aece(preds, bins)?);
    let scores: Vec<f64> = preds.iter().map(|p| p.p).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.y).collect();
    match auroc(&scores, &labels) {
        Ok(v) => {
            metrics.insert("auroc".to_string(), v);
        }
        Err(Error::AurocUndefined(_)) => undefined.push("auroc".to_string()),
        Err(e) => return Err(e),
    }
    Ok(WhiteboxCell {
        sample_count: preds.len(),
        metrics,
        undefined,
        reliability: reliability_table(preds, bins)?,
    })
}

/// MC-dropout predictions: the mean of `passes` stochastic forward passes
/// per record, seeded per (cell, record) so reruns reproduce exactly.
fn mc_predictions(
    decoder: &Decoder,
    records: &[EmbeddingRecord],
    task: &TaskId,
    passes: usize,
    run_seed: u64,
    scope: &str,
) -> Result<Vec<ProbabilisticPrediction>> {
    let mut out = Vec::new();
    for rec in records {
        let Some(&y) = rec.labels.get(task) else {
            continue;
        };
        let seed = stable_seed(run_seed, &format!("mc:{scope}:{task}:{}", rec.record_id));
        let p = decoder.predict_mc_mean(&rec.embedding, task, passes, seed)?;
        out.push(ProbabilisticPrediction::new(rec.record_id.clone(), p, y)?);
    }
    Ok(out)
}

type TaskCells = Vec<(TaskId, std::result::Result<WhiteboxCell, String>)>;

/// Evaluates one (method, tasking, scope) checkpoint group for its tasks.
fn eval_scope(
    config: &ExperimentConfig,
    checkpoint_dir: &Path,
    method: Method,
    tasking: Tasking,
    scope: &str,
    tasks: &[TaskId],
    test: &[EmbeddingRecord],
) -> TaskCells {
    let d = &config.decoder;
    let load = |name: String| -> Result<Decoder> {
        let path = checkpoint_dir.join(&name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path.display().to_string()));
        }
        Decoder::load(&path)
    };
    let per_task = |task: &TaskId| -> Result<Vec<ProbabilisticPrediction>> {
        match method {
            Method::Baseline => {
                let decoder = load(checkpoint_name(Method::Baseline, tasking, scope, None))?;
                decoder.predictions_for_task(test, task)
            }
            Method::McDropout => {
                let decoder = load(checkpoint_name(Method::Baseline, tasking, scope, None))?;
                mc_predictions(&decoder, test, task, d.mc_passes, config.run.seed, scope)
            }
            Method::Ensemble => {
                let members = (0..d.ensemble_size)
                    .map(|i| load(checkpoint_name(Method::Ensemble, tasking, scope, Some(i))))
                    .collect::<Result<Vec<_>>>()?;
                DeepEnsemble::from_members(members)?.predictions_for_task(test, task)
            }
        }
    };
    tasks
        .iter()
        .map(|task| {
            let cell = per_task(task)
                .and_then(|preds| score_cell(&preds, d.bins))
                .map_err(|e| e.to_string());
            (task.clone(), cell)
        })
        .collect()
}

/// Scores the full grid on the held-out slice and writes
/// `eval_whitebox.json` / `eval_whitebox.csv` plus a manifest.
pub fn cmd_eval_whitebox(config: &ExperimentConfig) -> Result<WhiteboxReport> {
    let paths = RunPaths::new(&config.run.out_dir);
    if !paths.embeddings().exists() {
        return Err(Error::MissingArtifact(
            paths.embeddings().display().to_string(),
        ));
    }
    let records = read_embeddings(&paths.embeddings())?;
    let start = config.cohort.train_size;
    let end = start + config.cohort.test_size;
    let test: &[EmbeddingRecord] = records.get(start..end).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "test slice {start}..{end} exceeds the {} available records",
            records.len()
        ))
    })?;
    if test.is_empty() {
        return Err(Error::EmptyData);
    }

    let tasks = default_tasks();
    let d = &config.decoder;
    let checkpoint_dir = paths.checkpoints();

    // One job per (method, tasking, scope); multi-task scopes share one
    // decoder load across their tasks.
    struct Job {
        method: Method,
        tasking: Tasking,
        scope: String,
        tasks: Vec<TaskId>,
    }
    let mut jobs_spec = Vec::new();
    for &method in &d.methods {
        for &tasking in &d.tasking {
            let mut by_scope: BTreeMap<String, Vec<TaskId>> = BTreeMap::new();
            for task in &tasks {
                by_scope
                    .entry(scope_of(task, tasking))
                    .or_default()
                    .push(task.id.clone());
            }
            for (scope, scope_tasks) in by_scope {
                jobs_spec.push(Job {
                    method,
                    tasking,
                    scope,
                    tasks: scope_tasks,
                });
            }
        }
    }

    let jobs: Vec<_> = jobs_spec
        .iter()
        .map(|job| {
            let dir = checkpoint_dir.clone();
            move || {
                (
                    cell_key(job.method, job.tasking),
                    eval_scope(config, &dir, job.method, job.tasking, &job.scope, &job.tasks, test),
                )
            }
        })
        .collect();
    let results = run_pool(jobs, config.run.parallelism);

    let mut cell_keys: Vec<String> = d
        .methods
        .iter()
        .flat_map(|&m| d.tasking.iter().map(move |&t| cell_key(m, t)))
        .collect();
    cell_keys.sort();
    cell_keys.dedup();

    let mut rows: Vec<WhiteboxRow> = tasks
        .iter()
        .map(|t| WhiteboxRow {
            task: t.id.to_string(),
            category: t.category.as_str().to_string(),
            cells: BTreeMap::new(),
            missing: BTreeMap::new(),
        })
        .collect();
    let row_index: BTreeMap<String, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.task.clone(), i))
        .collect();
    for (key, task_cells) in results {
        for (task, outcome) in task_cells {
            let row = &mut rows[row_index[task.as_str()]];
            match outcome {
                Ok(cell) => {
                    row.cells.insert(key.clone(), cell);
                }
                Err(reason) => {
                    row.missing.insert(key.clone(), reason);
                }
            }
        }
    }

    let report = WhiteboxReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: config.run.seed,
        bins: d.bins,
        mc_passes: d.mc_passes,
        ensemble_size: d.ensemble_size,
        test_size: test.len(),
        cells: cell_keys,
        rows,
    };
    super::write_json_pretty(&paths.whitebox_json(), &report)?;
    write_whitebox_csv(&paths.whitebox_csv(), &report)?;

    let mut manifest = RunManifest::new("eval-whitebox", config.run.seed);
    manifest.echo("bins", d.bins);
    manifest.echo("mc_passes", d.mc_passes);
    manifest.echo("ensemble_size", d.ensemble_size);
    manifest.echo("cells", report.cells.join(","));
    manifest.add_file(&paths.root, &paths.whitebox_json())?;
    manifest.add_file(&paths.root, &paths.whitebox_csv())?;
    manifest.write(&paths.manifest("eval-whitebox"))?;
    Ok(report)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

fn write_whitebox_csv(path: &Path, report: &WhiteboxReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["task".to_string(), "category".to_string()];
    for cell in &report.cells {
        for metric in WHITEBOX_METRICS {
            header.push(format!("{cell}:{metric}"));
        }
        header.push(format!("{cell}:n"));
    }
    writer
        .write_record(&header)
        .map_err(|e| csv_error(path, e))?;
    for row in &report.rows {
        let mut record = vec![row.task.clone(), row.category.clone()];
        for cell in &report.cells {
            match row.cells.get(cell) {
                Some(scored) => {
                    for metric in WHITEBOX_METRICS {
                        record.push(match scored.metrics.get(metric) {
                            Some(v) => format!("{v}"),
                            None => "NA".to_string(),
                        });
                    }
                    record.push(scored.sample_count.to_string());
                }
                None => {
                    for _ in 0..=WHITEBOX_METRICS.len() {
                        record.push("NA".to_string());
                    }
                }
            }
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads back a whitebox report, checking the schema version.
pub fn read_whitebox_report(path: &Path) -> Result<WhiteboxReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: WhiteboxReport = serde_json::from_str(&text)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "whitebox report schema {} (expected {})",
            report.schema_version, REPORT_SCHEMA_VERSION
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::testutil::tiny_config;
    use crate::experiment::{cmd_synth, cmd_train};

    #[test]
    fn full_grid_round_trips_and_rerun_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path(), 3);
        config.decoder.bins = 5;
        cmd_synth(&config).unwrap();
        let summary = cmd_train(&config).unwrap();
        // baseline 10+3, ensemble (10+3) x 2 members.
        assert_eq!(summary.checkpoints.len(), 39);

        let report = cmd_eval_whitebox(&config).unwrap();
        assert_eq!(report.rows.len(), 10);
        assert_eq!(report.cells.len(), 6);
        for row in &report.rows {
            assert!(row.missing.is_empty(), "{}: {:?}", row.task, row.missing);
            assert_eq!(row.cells.len(), 6);
            for cell in row.cells.values() {
                assert_eq!(cell.sample_count, 10);
                assert_eq!(cell.reliability.len(), 5);
            }
        }

        let paths = RunPaths::new(&config.run.out_dir);
        let parsed = read_whitebox_report(&paths.whitebox_json()).unwrap();
        assert_eq!(parsed, report);

        let json_before = std::fs::read(paths.whitebox_json()).unwrap();
        let csv_before = std::fs::read(paths.whitebox_csv()).unwrap();
        cmd_eval_whitebox(&config).unwrap();
        assert_eq!(std::fs::read(paths.whitebox_json()).unwrap(), json_before);
        assert_eq!(std::fs::read(paths.whitebox_csv()).unwrap(), csv_before);
    }

    #[test]
    fn missing_checkpoints_mark_cells_but_do_not_abort() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path(), 4);
        config.decoder.bins = 5;
        cmd_synth(&config).unwrap();
        cmd_train(&config).unwrap();
        let paths = RunPaths::new(&config.run.out_dir);
        std::fs::remove_file(
            paths
                .checkpoints()
                .join(checkpoint_name(Method::Baseline, Tasking::Single, "anemia", None)),
        )
        .unwrap();

        let report = cmd_eval_whitebox(&config).unwrap();
        let anemia = report.rows.iter().find(|r| r.task == "anemia").unwrap();
        // The missing checkpoint breaks both baseline:single and
        // mc_dropout:single for that task only.
        assert_eq!(anemia.missing.len(), 2);
        assert!(anemia.missing.contains_key("baseline:single"));
        assert!(anemia.missing.contains_key("mc_dropout:single"));
        let other = report.rows.iter().find(|r| r.task == "hyperkalemia").unwrap();
        assert!(other.missing.is_empty());
    }
}
