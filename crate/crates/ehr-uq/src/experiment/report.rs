//! `report`: merge evaluation outputs into human-readable summaries and
//! plot-ready exports.
//!
//! One input run gives a merged summary with a boolean best-cell column
//! per metric (the table-shading analogue) and a reliability export with
//! exactly `bins` rows per task. Two input runs give side-by-side delta
//! columns (second minus first) instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::whitebox::{csv_error, WHITEBOX_METRICS};
use super::{
    read_blackbox_report, read_whitebox_report, BlackboxReport, RunManifest, RunPaths,
    WhiteboxReport,
};

const BLACKBOX_METRICS: [&str; 2] = ["auc", "uq"];

fn lower_is_better(metric: &str) -> bool {
    matches!(metric, "brier" | "nll" | "ece" | "aece")
}

struct LoadedRun {
    name: String,
    whitebox: Option<WhiteboxReport>,
    blackbox: Option<BlackboxReport>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let paths = RunPaths::new(dir);
    let whitebox = if paths.whitebox_json().exists() {
        Some(read_whitebox_report(&paths.whitebox_json())?)
    } else {
        None
    };
    let blackbox = if paths.blackbox_json().exists() {
        Some(read_blackbox_report(&paths.blackbox_json())?)
    } else {
        None
    };
    if whitebox.is_none() && blackbox.is_none() {
        return Err(Error::MissingArtifact(format!(
            "{}: no eval_whitebox.json or eval_blackbox.json",
            dir.display()
        )));
    }
    Ok(LoadedRun {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        whitebox,
        blackbox,
    })
}

/// (task, cell) -> metric -> value, shared shape for both tables.
type ValueGrid = BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>;

fn whitebox_grid(report: &WhiteboxReport) -> ValueGrid {
    let mut grid = ValueGrid::new();
    for row in &report.rows {
        let cells = grid.entry(row.task.clone()).or_default();
        for (key, cell) in &row.cells {
            cells.insert(key.clone(), cell.metrics.clone());
        }
    }
    grid
}

fn blackbox_grid(report: &BlackboxReport) -> ValueGrid {
    let mut grid = ValueGrid::new();
    for row in &report.rows {
        let cells = grid.entry(row.task.clone()).or_default();
        for (key, cell) in &row.cells {
            let mut metrics = BTreeMap::new();
            if let Some(v) = cell.auc {
                metrics.insert("auc".to_string(), v);
            }
            if let Some(v) = cell.uq {
                metrics.insert("uq".to_string(), v);
            }
            cells.insert(key.clone(), metrics);
        }
    }
    grid
}

/// Cells holding the best value of `metric` in one task row; ties share
/// the mark, matching how shaded tables treat equal cells.
fn best_cells(row: &BTreeMap<String, BTreeMap<String, f64>>, metric: &str) -> Vec<String> {
    let candidates: Vec<(&String, f64)> = row
        .iter()
        .filter_map(|(cell, metrics)| metrics.get(metric).map(|&v| (cell, v)))
        .collect();
    let Some(best) = candidates
        .iter()
        .map(|&(_, v)| v)
        .reduce(|a, b| {
            if lower_is_better(metric) {
                a.min(b)
            } else {
                a.max(b)
            }
        })
    else {
        return Vec::new();
    };
    candidates
        .into_iter()
        .filter(|&(_, v)| v == best)
        .map(|(c, _)| c.clone())
        .collect()
}

fn write_summary_csv(
    path: &Path,
    grid: &ValueGrid,
    cells: &[String],
    metrics: &[&str],
    tasks: &[String],
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["task".to_string()];
    for cell in cells {
        for metric in metrics {
            header.push(format!("{cell}:{metric}"));
            header.push(format!("{cell}:{metric}:best"));
        }
    }
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for task in tasks {
        let row = grid.get(task).cloned().unwrap_or_default();
        let mut record = vec![task.clone()];
        for cell in cells {
            for metric in metrics {
                let value = row.get(cell).and_then(|m| m.get(*metric));
                record.push(value.map_or("NA".to_string(), |v| format!("{v}")));
                let best = best_cells(&row, metric).contains(cell);
                record.push((value.is_some() && best).to_string());
            }
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn write_delta_csv(
    path: &Path,
    a: &ValueGrid,
    b: &ValueGrid,
    cells: &[String],
    metrics: &[&str],
    tasks: &[String],
    names: (&str, &str),
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["task".to_string()];
    for cell in cells {
        for metric in metrics {
            header.push(format!("{cell}:{metric}:{}", names.0));
            header.push(format!("{cell}:{metric}:{}", names.1));
            header.push(format!("{cell}:{metric}:delta"));
        }
    }
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for task in tasks {
        let mut record = vec![task.clone()];
        for cell in cells {
            for metric in metrics {
                let va = a.get(task).and_then(|r| r.get(cell)).and_then(|m| m.get(*metric));
                let vb = b.get(task).and_then(|r| r.get(cell)).and_then(|m| m.get(*metric));
                record.push(va.map_or("NA".to_string(), |v| format!("{v}")));
                record.push(vb.map_or("NA".to_string(), |v| format!("{v}")));
                record.push(match (va, vb) {
                    (Some(x), Some(y)) => format!("{}", y - x),
                    _ => "NA".to_string(),
                });
            }
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reliability export: exactly `bins` rows per task, from one chosen cell
/// (preferring `baseline:single`).
fn write_reliability_csv(path: &Path, report: &WhiteboxReport) -> Result<()> {
    let preferred = "baseline:single".to_string();
    let cell_key = if report.cells.contains(&preferred) {
        preferred
    } else {
        report
            .cells
            .first()
            .cloned()
            .ok_or_else(|| Error::SchemaMismatch("whitebox report has no cells".into()))?
    };
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer
        .write_record([
            "task",
            "cell",
            "bin",
            "lower",
            "upper",
            "count",
            "accuracy",
            "mean_confidence",
        ])
        .map_err(|e| csv_error(path, e))?;
    for row in &report.rows {
        let Some(cell) = row.cells.get(&cell_key) else {
            continue;
        };
        for (i, bin) in cell.reliability.iter().enumerate() {
            writer
                .write_record([
                    row.task.clone(),
                    cell_key.clone(),
                    i.to_string(),
                    format!("{}", bin.lower),
                    format!("{}", bin.upper),
                    bin.count.to_string(),
                    bin.accuracy.map_or(String::new(), |v| format!("{v}")),
                    bin.mean_confidence.map_or(String::new(), |v| format!("{v}")),
                ])
                .map_err(|e| csv_error(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn markdown_table(
    out: &mut String,
    grid: &ValueGrid,
    cells: &[String],
    metric: &str,
    tasks: &[String],
) {
    let _ = writeln!(out, "| task | {} |", cells.join(" | "));
    let _ = writeln!(out, "|---{}|", "|---".repeat(cells.len()));
    for task in tasks {
        let row = grid.get(task).cloned().unwrap_or_default();
        let best = best_cells(&row, metric);
        let mut line = format!("| {task} |");
        for cell in cells {
            let text = match row.get(cell).and_then(|m| m.get(metric)) {
                Some(v) if best.contains(cell) => format!(" **{v:.4}** |"),
                Some(v) => format!(" {v:.4} |"),
                None => " NA |".to_string(),
            };
            line.push_str(&text);
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out);
}

/// Merges one or two evaluation runs into summary tables under `out_dir`.
pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> Result<()> {
    if inputs.is_empty() || inputs.len() > 2 {
        return Err(Error::InvalidConfig(format!(
            "report takes one or two run directories, got {}",
            inputs.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let runs = inputs.iter().map(|p| load_run(p)).collect::<Result<Vec<_>>>()?;

    let mut summary = String::from("# Evaluation summary\n\n");
    let mut written: Vec<PathBuf> = Vec::new();

    let task_order: Vec<String> = crate::blackbox::default_tasks()
        .iter()
        .map(|t| t.id.to_string())
        .collect();

    if runs.len() == 1 {
        let run = &runs[0];
        let _ = writeln!(summary, "Input run: `{}`\n", run.name);
        if let Some(report) = &run.whitebox {
            let grid = whitebox_grid(report);
            let path = out_dir.join("summary_whitebox.csv");
            write_summary_csv(&path, &grid, &report.cells, &WHITEBOX_METRICS, &task_order)?;
            written.push(path);
            let path = out_dir.join("reliability.csv");
            write_reliability_csv(&path, report)?;
            written.push(path);
            let _ = writeln!(
                summary,
                "## Decoder calibration (bins = {}, bold = best cell)\n",
                report.bins
            );
            for metric in WHITEBOX_METRICS {
                let _ = writeln!(summary, "### {metric}\n");
                markdown_table(&mut summary, &grid, &report.cells, metric, &task_order);
            }
        }
        if let Some(report) = &run.blackbox {
            let grid = blackbox_grid(report);
            let path = out_dir.join("summary_blackbox.csv");
            write_summary_csv(&path, &grid, &report.cells, &BLACKBOX_METRICS, &task_order)?;
            written.push(path);
            let _ = writeln!(
                summary,
                "## Sampled-response uncertainty (n = {}, bold = best cell)\n",
                report.n_responses
            );
            for metric in BLACKBOX_METRICS {
                let _ = writeln!(summary, "### {metric}\n");
                markdown_table(&mut summary, &grid, &report.cells, metric, &task_order);
            }
        }
    } else {
        let (a, b) = (&runs[0], &runs[1]);
        let _ = writeln!(summary, "Comparing `{}` (a) to `{}` (b)\n", a.name, b.name);
        match (&a.whitebox, &b.whitebox) {
            (Some(ra), Some(rb)) => {
                let cells: Vec<String> = ra
                    .cells
                    .iter()
                    .filter(|c| rb.cells.contains(c))
                    .cloned()
                    .collect();
                let path = out_dir.join("delta_whitebox.csv");
                write_delta_csv(
                    &path,
                    &whitebox_grid(ra),
                    &whitebox_grid(rb),
                    &cells,
                    &WHITEBOX_METRICS,
                    &task_order,
                    ("a", "b"),
                )?;
                written.push(path);
                let _ = writeln!(summary, "- Decoder deltas: `delta_whitebox.csv`");
            }
            (None, None) => {}
            _ => {
                return Err(Error::SchemaMismatch(
                    "whitebox report present in only one input".into(),
                ));
            }
        }
        match (&a.blackbox, &b.blackbox) {
            (Some(ra), Some(rb)) => {
                let cells: Vec<String> = ra
                    .cells
                    .iter()
                    .filter(|c| rb.cells.contains(c))
                    .cloned()
                    .collect();
                let path = out_dir.join("delta_blackbox.csv");
                write_delta_csv(
                    &path,
                    &blackbox_grid(ra),
                    &blackbox_grid(rb),
                    &cells,
                    &BLACKBOX_METRICS,
                    &task_order,
                    ("a", "b"),
                )?;
                written.push(path);
                let _ = writeln!(summary, "- Sampled-response deltas: `delta_blackbox.csv`");
            }
            (None, None) => {}
            _ => {
                return Err(Error::SchemaMismatch(
                    "blackbox report present in only one input".into(),
                ));
            }
        }
    }

    let summary_path = out_dir.join("summary.md");
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    let mut manifest = RunManifest::new("report", 0);
    manifest.echo("inputs", inputs.len());
    for path in &written {
        manifest.add_file(out_dir, path)?;
    }
    manifest.write(&out_dir.join("manifest_report.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::testutil::tiny_config;
    use crate::experiment::{cmd_eval_whitebox, cmd_synth, cmd_train};

    fn prepared_run(root: &Path, seed: u64) -> PathBuf {
        let mut config = tiny_config(root, seed);
        config.decoder.bins = 4;
        cmd_synth(&config).unwrap();
        cmd_train(&config).unwrap();
        cmd_eval_whitebox(&config).unwrap();
        config.run.out_dir
    }

    #[test]
    fn single_run_summary_has_reliability_rows_per_task() {
        let dir = tempfile::tempdir().unwrap();
        let run = prepared_run(&dir.path().join("run"), 2);
        let out = dir.path().join("summary");
        cmd_report(&[run], &out).unwrap();

        let reliability = std::fs::read_to_string(out.join("reliability.csv")).unwrap();
        // Header + 4 bins x 10 tasks.
        assert_eq!(reliability.lines().count(), 1 + 4 * 10);
        let summary = std::fs::read_to_string(out.join("summary.md")).unwrap();
        assert!(summary.contains("### ece"));
        assert!(summary.contains("**"));

        let csv = std::fs::read_to_string(out.join("summary_whitebox.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert!(header.contains("baseline:single:brier:best"));
        // Exactly one best brier cell per row (no ties expected on real
        // values with 6 distinct cells).
        for line in csv.lines().skip(1) {
            let best_count = line.split(',').filter(|v| *v == "true").count();
            assert!(best_count >= WHITEBOX_METRICS.len(), "{line}");
        }
    }

    #[test]
    fn two_runs_produce_delta_columns() {
        let dir = tempfile::tempdir().unwrap();
        let a = prepared_run(&dir.path().join("a"), 2);
        let b = prepared_run(&dir.path().join("b"), 9);
        let out = dir.path().join("delta");
        cmd_report(&[a, b], &out).unwrap();
        let csv = std::fs::read_to_string(out.join("delta_whitebox.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert!(header.contains("baseline:single:brier:a"));
        assert!(header.contains("baseline:single:brier:delta"));
        let first = csv.lines().nth(1).unwrap();
        assert!(!first.contains("NA"));
    }

    #[test]
    fn empty_input_dir_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        assert!(matches!(
            cmd_report(&[dir.path().to_path_buf()], &out),
            Err(Error::MissingArtifact(_))
        ));
    }
}
