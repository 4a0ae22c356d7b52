//! `eval-blackbox`: sample repeated responses from every configured client
//! over prompts built from sampled patient records, score class-entropy
//! uncertainty, and emit the second results table plus replayable archives.
//!
//! Column groups: one per client x tasking, plus `ensemble:<tasking>`
//! combining all clients' response sets. Per group and task the table
//! carries the label AUROC of the yes-frequency ("auc") and the
//! uncertainty-quality AUROC ("uq").
//!
//! Replay mode re-scores archived raw responses through the same parser
//! and scorer without constructing any client: no sockets, no API keys,
//! zero transport audit entries, and a byte-identical report.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::blackbox::{
    default_tasks, ensemble_response_sets, read_archive, sample_responses, write_archive,
    ArchivedResponse, AuditEntry, HttpChatClient, HttpClientConfig, ModelClient, Prompt,
    SamplingParams, ScoredRecord, TaskCategory, TaskSpec,
};
use crate::ehr::{read_cohort, ConceptDictionary, PatientSequence, TaskId};
use crate::error::{Error, Result};
use crate::synth::{sample_test_set, MockBehavior, MockClient, PromptOracle};

use super::synth::{category_tasks, prompts_for_category, truth_for};
use super::whitebox::csv_error;
use super::{
    ClientSection, ExperimentConfig, RunManifest, RunPaths, Tasking, REPORT_SCHEMA_VERSION,
};

/// One task x column-group entry of the blackbox table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxCell {
    pub sample_count: usize,
    /// Label AUROC of the yes-frequency score; `None` when degenerate.
    pub auc: Option<f64>,
    /// AUROC of -entropy against majority correctness; `None` when
    /// degenerate.
    pub uq: Option<f64>,
    pub mean_entropy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxRow {
    pub task: String,
    pub category: String,
    pub cells: BTreeMap<String, BlackboxCell>,
    /// Column group -> reason the whole group degraded for this run.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub missing: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxReport {
    pub schema_version: u32,
    pub seed: u64,
    pub n_responses: usize,
    pub temperature: f64,
    pub records_per_category: usize,
    pub min_positives: usize,
    pub tasking: Vec<Tasking>,
    pub clients: Vec<String>,
    pub ensemble: bool,
    /// Column-group keys in column order.
    pub cells: Vec<String>,
    pub rows: Vec<BlackboxRow>,
}

/// Echo data stored beside the archives so replay reproduces the report
/// header without the original live environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArchiveMeta {
    schema_version: u32,
    seed: u64,
    n_responses: usize,
    temperature: f64,
    records_per_category: usize,
    min_positives: usize,
    tasking: Vec<Tasking>,
    clients: Vec<String>,
    ensemble: bool,
}

const ENSEMBLE_KEY: &str = "ensemble";

enum ClientImpl {
    Mock(MockClient),
    Http(HttpChatClient),
}

struct BuiltClient {
    name: String,
    inner: ClientImpl,
}

impl BuiltClient {
    fn as_model_client(&self) -> &dyn ModelClient {
        match &self.inner {
            ClientImpl::Mock(c) => c,
            ClientImpl::Http(c) => c,
        }
    }
}

fn build_client(section: &ClientSection, oracle: &Option<Arc<PromptOracle>>) -> Result<BuiltClient> {
    let inner = match section.kind.as_str() {
        "mock" => {
            let oracle = oracle
                .as_ref()
                .ok_or_else(|| Error::MissingArtifact("oracle.json (mock clients)".into()))?;
            let behavior = MockBehavior {
                accuracy_signal: section.accuracy_signal.unwrap_or(1.1),
                noise_temperature: section.noise_temperature.unwrap_or(1.0),
                invalid_rate: section.invalid_rate.unwrap_or(0.03),
                seed: section.behavior_seed.unwrap_or(0),
            };
            ClientImpl::Mock(MockClient::new(&section.name, behavior, Arc::clone(oracle))?)
        }
        "http" => {
            let config = HttpClientConfig {
                base_url: section.base_url.clone().expect("validated http client"),
                model: section.model.clone().expect("validated http client"),
                api_key_env: section.api_key_env.clone(),
                timeout_secs: section.timeout_secs.unwrap_or(60),
                max_attempts: section.max_attempts.unwrap_or(3),
                ..HttpClientConfig::default()
            };
            ClientImpl::Http(HttpChatClient::new(config)?)
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "client kind {other:?} (expected \"mock\" or \"http\")"
            )));
        }
    };
    Ok(BuiltClient {
        name: section.name.clone(),
        inner,
    })
}

fn group_key(tasking: Tasking, client: &str) -> String {
    format!("{client}:{}", tasking.as_str())
}

/// Scored records accumulated per (column group, evaluation unit): single
/// tasking evaluates per task, multi per category.
type Groups = BTreeMap<(String, String), Vec<ScoredRecord>>;

fn eval_unit(tasking: Tasking, prompt_tasks: &[TaskSpec]) -> String {
    match tasking {
        Tasking::Single => prompt_tasks[0].id.to_string(),
        Tasking::Multi => prompt_tasks[0].category.as_str().to_string(),
    }
}

/// Samples one prompt from every client, pushing per-client scored records
/// and (when enabled) the cross-client combined set. A client failure
/// marks its column group and, transitively, the ensemble group.
#[allow(clippy::too_many_arguments)]
fn sample_prompt_into_groups(
    clients: &[BuiltClient],
    prompt: &Prompt,
    prompt_tasks: &[TaskSpec],
    seq: &PatientSequence,
    tasking: Tasking,
    config: &ExperimentConfig,
    groups: &mut Groups,
    archives: &mut BTreeMap<(String, Tasking), Vec<ArchivedResponse>>,
    failed: &mut BTreeMap<String, String>,
) -> Result<()> {
    let truth = truth_for(seq, prompt_tasks)?;
    let unit = eval_unit(tasking, prompt_tasks);
    let mut member_sets = Vec::with_capacity(clients.len());
    for client in clients {
        let key = group_key(tasking, &client.name);
        if failed.contains_key(&key) {
            continue;
        }
        let params = SamplingParams {
            temperature: config.blackbox.temperature,
            seed: super::stable_seed(
                config.run.seed,
                &format!(
                    "bb:{}:{}:{}:{}",
                    client.name,
                    tasking.as_str(),
                    seq.patient_id,
                    prompt.fingerprint()
                ),
            ),
        };
        match sample_responses(
            client.as_model_client(),
            prompt,
            config.blackbox.n_responses,
            &params,
        ) {
            Ok(response) => {
                let record = ScoredRecord {
                    record_id: seq.patient_id.clone(),
                    response,
                    truth: truth.clone(),
                };
                archives
                    .entry((client.name.clone(), tasking))
                    .or_default()
                    .push(ArchivedResponse::from_scored(&record, prompt_tasks));
                member_sets.push(record.response.clone());
                groups
                    .entry((key, unit.clone()))
                    .or_default()
                    .push(record);
            }
            Err(e) => {
                failed.insert(key, e.to_string());
            }
        }
    }
    if config.blackbox.ensemble && clients.len() >= 2 {
        let key = group_key(tasking, ENSEMBLE_KEY);
        if member_sets.len() == clients.len() {
            let combined = ensemble_response_sets(&member_sets)?;
            groups
                .entry((key, unit))
                .or_default()
                .push(ScoredRecord {
                    record_id: seq.patient_id.clone(),
                    response: combined,
                    truth,
                });
        } else if !failed.contains_key(&key) {
            failed.insert(key, "a member client failed".to_string());
        }
    }
    Ok(())
}

/// Turns grouped scored records into table rows.
fn assemble_rows(
    groups: &Groups,
    cell_keys: &[String],
    failed: &BTreeMap<String, String>,
) -> Result<Vec<BlackboxRow>> {
    let tasks = default_tasks();
    let mut rows: Vec<BlackboxRow> = tasks
        .iter()
        .map(|t| BlackboxRow {
            task: t.id.to_string(),
            category: t.category.as_str().to_string(),
            cells: BTreeMap::new(),
            missing: failed.clone(),
        })
        .collect();
    let row_index: BTreeMap<String, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.task.clone(), i))
        .collect();

    for ((cell, _unit), records) in groups {
        if !cell_keys.contains(cell) || failed.contains_key(cell) {
            continue;
        }
        let tasking = if cell.ends_with(":multi") { "multi" } else { "single" };
        let outcomes = crate::blackbox::evaluate_blackbox(records, cell, tasking)?;
        for (task, outcome) in outcomes {
            let report = &outcome.report;
            let cell_value = BlackboxCell {
                sample_count: report.sample_count,
                auc: report.get("auroc"),
                uq: report.get("uq_auroc"),
                mean_entropy: outcome.mean_entropy,
                undefined: report.undefined.clone(),
            };
            rows[row_index[task.as_str()]]
                .cells
                .insert(cell.clone(), cell_value);
        }
    }
    Ok(rows)
}

fn cell_keys(tasking: &[Tasking], clients: &[String], ensemble: bool) -> Vec<String> {
    let mut keys = Vec::new();
    for &mode in tasking {
        for client in clients {
            keys.push(group_key(mode, client));
        }
        if ensemble && clients.len() >= 2 {
            keys.push(group_key(mode, ENSEMBLE_KEY));
        }
    }
    keys.sort();
    keys.dedup();
    keys
}

fn write_report_files(
    paths: &RunPaths,
    report: &BlackboxReport,
    audit_entries: &[AuditEntry],
    seed: u64,
) -> Result<()> {
    super::write_json_pretty(&paths.blackbox_json(), report)?;
    write_blackbox_csv(&paths.blackbox_csv(), report)?;
    write_audit(&paths.audit(), audit_entries)?;

    let mut manifest = RunManifest::new("eval-blackbox", seed);
    manifest.echo("n_responses", report.n_responses);
    manifest.echo("records_per_category", report.records_per_category);
    manifest.echo("min_positives", report.min_positives);
    manifest.echo("clients", report.clients.join(","));
    manifest.echo("cells", report.cells.join(","));
    // The audit log carries wall-clock timestamps, so it is deliberately
    // not part of the hashed artifact set.
    manifest.add_file(&paths.root, &paths.blackbox_json())?;
    manifest.add_file(&paths.root, &paths.blackbox_csv())?;
    if paths.archive_meta().exists() {
        manifest.add_file(&paths.root, &paths.archive_meta())?;
    }
    manifest.write(&paths.manifest("eval-blackbox"))?;
    Ok(())
}

fn write_audit(path: &Path, entries: &[AuditEntry]) -> Result<()> {
    let mut out = String::new();
    for entry in entries {
        out.push_str(
            &serde_json::to_string(entry).map_err(|e| Error::SchemaMismatch(e.to_string()))?,
        );
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_blackbox_csv(path: &Path, report: &BlackboxReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header = vec!["task".to_string(), "category".to_string()];
    for cell in &report.cells {
        header.push(format!("{cell}:auc"));
        header.push(format!("{cell}:uq"));
        header.push(format!("{cell}:entropy"));
        header.push(format!("{cell}:n"));
    }
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    for row in &report.rows {
        let mut record = vec![row.task.clone(), row.category.clone()];
        for cell in &report.cells {
            match row.cells.get(cell) {
                Some(c) => {
                    record.push(c.auc.map_or("NA".to_string(), |v| format!("{v}")));
                    record.push(c.uq.map_or("NA".to_string(), |v| format!("{v}")));
                    record.push(format!("{}", c.mean_entropy));
                    record.push(c.sample_count.to_string());
                }
                None => record.extend(std::iter::repeat_n("NA".to_string(), 4)),
            }
        }
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Reads back a blackbox report, checking the schema version.
pub fn read_blackbox_report(path: &Path) -> Result<BlackboxReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: BlackboxReport = serde_json::from_str(&text)
        .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
    if report.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "blackbox report schema {} (expected {})",
            report.schema_version, REPORT_SCHEMA_VERSION
        )));
    }
    Ok(report)
}

/// Runs the blackbox grid. With `replay`, archived responses from that
/// directory are re-scored instead of sampling any client.
pub fn cmd_eval_blackbox(
    config: &ExperimentConfig,
    replay: Option<&Path>,
) -> Result<BlackboxReport> {
    match replay {
        Some(dir) => replay_run(config, dir),
        None => live_run(config),
    }
}

fn live_run(config: &ExperimentConfig) -> Result<BlackboxReport> {
    let paths = RunPaths::new(&config.run.out_dir);
    let b = &config.blackbox;
    if b.clients.is_empty() {
        return Err(Error::InvalidConfig(
            "eval-blackbox needs at least one [[blackbox.clients]] entry".into(),
        ));
    }
    if !paths.cohort().exists() {
        return Err(Error::MissingArtifact(paths.cohort().display().to_string()));
    }
    let sequences = read_cohort(&paths.cohort())?;
    let dict = load_dictionary(&paths)?;

    let needs_oracle = b.clients.iter().any(|c| c.kind == "mock");
    let oracle: Option<Arc<PromptOracle>> = if needs_oracle {
        let text = std::fs::read_to_string(paths.oracle())
            .map_err(|_| Error::MissingArtifact(paths.oracle().display().to_string()))?;
        Some(Arc::new(serde_json::from_str(&text).map_err(|e| {
            Error::SchemaMismatch(format!("oracle.json: {e}"))
        })?))
    } else {
        None
    };

    // Clients in sorted-name order so live and replay enumerate column
    // groups identically.
    let mut sections: Vec<&ClientSection> = b.clients.iter().collect();
    sections.sort_by(|a, z| a.name.cmp(&z.name));
    let clients = sections
        .iter()
        .map(|section| build_client(section, &oracle))
        .collect::<Result<Vec<_>>>()?;
    let client_names: Vec<String> = clients.iter().map(|c| c.name.clone()).collect();
    let mut tasking = b.tasking.clone();
    tasking.sort();
    tasking.dedup();

    let labels: Vec<BTreeMap<TaskId, u8>> = sequences
        .iter()
        .map(|seq| {
            seq.labels
                .iter()
                .map(|(task, label)| (task.clone(), label.label))
                .collect()
        })
        .collect();

    let mut groups: Groups = BTreeMap::new();
    let mut archives: BTreeMap<(String, Tasking), Vec<ArchivedResponse>> = BTreeMap::new();
    let mut failed: BTreeMap<String, String> = BTreeMap::new();

    for category in TaskCategory::ALL {
        let cat_tasks = category_tasks(category);
        let cat_task_ids: Vec<TaskId> = cat_tasks.iter().map(|t| t.id.clone()).collect();
        let sample_seed =
            super::stable_seed(config.run.seed, &format!("sample:{}", category.as_str()));
        let indices = sample_test_set(
            &labels,
            &cat_task_ids,
            b.records_per_category,
            b.min_positives,
            b.max_draws,
            sample_seed,
        )?;
        for &idx in &indices {
            let seq = &sequences[idx];
            let (singles, multi) =
                prompts_for_category(seq, &dict, category, b.narrative_budget)?;
            for &mode in &tasking {
                match mode {
                    Tasking::Single => {
                        for (task, prompt) in cat_tasks.iter().zip(&singles) {
                            sample_prompt_into_groups(
                                &clients,
                                prompt,
                                std::slice::from_ref(task),
                                seq,
                                mode,
                                config,
                                &mut groups,
                                &mut archives,
                                &mut failed,
                            )?;
                        }
                    }
                    Tasking::Multi => {
                        sample_prompt_into_groups(
                            &clients,
                            &multi,
                            &cat_tasks,
                            seq,
                            mode,
                            config,
                            &mut groups,
                            &mut archives,
                            &mut failed,
                        )?;
                    }
                }
            }
        }
    }

    let archive_dir = paths.archives();
    for ((client, mode), records) in &archives {
        let dir = archive_dir.join(client);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_archive(&dir.join(format!("{}.jsonl", mode.as_str())), records)?;
    }
    let meta = ArchiveMeta {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: config.run.seed,
        n_responses: b.n_responses,
        temperature: b.temperature,
        records_per_category: b.records_per_category,
        min_positives: b.min_positives,
        tasking: tasking.clone(),
        clients: client_names.clone(),
        ensemble: b.ensemble && client_names.len() >= 2,
    };
    super::write_json_pretty(&paths.archive_meta(), &meta)?;

    let keys = cell_keys(&tasking, &client_names, b.ensemble);
    let rows = assemble_rows(&groups, &keys, &failed)?;
    let report = BlackboxReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: config.run.seed,
        n_responses: b.n_responses,
        temperature: b.temperature,
        records_per_category: b.records_per_category,
        min_positives: b.min_positives,
        tasking,
        clients: client_names,
        ensemble: meta.ensemble,
        cells: keys,
        rows,
    };

    let mut audit_entries = Vec::new();
    for client in &clients {
        if let ClientImpl::Http(http) = &client.inner {
            audit_entries.extend(http.audit_snapshot().entries);
        }
    }
    write_report_files(&paths, &report, &audit_entries, config.run.seed)?;
    Ok(report)
}

fn load_dictionary(paths: &RunPaths) -> Result<ConceptDictionary> {
    if !paths.concepts().exists() {
        return Err(Error::MissingArtifact(paths.concepts().display().to_string()));
    }
    Ok(crate::ehr::load_concept_dictionary(&paths.concepts())?.dictionary)
}

fn replay_run(config: &ExperimentConfig, replay_dir: &Path) -> Result<BlackboxReport> {
    let paths = RunPaths::new(&config.run.out_dir);
    std::fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    // Accept either a run directory or its archives/ subdirectory.
    let archive_dir = if replay_dir.join("meta.json").exists() {
        replay_dir.to_path_buf()
    } else {
        replay_dir.join("archives")
    };
    let meta_path = archive_dir.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::MissingArtifact(meta_path.display().to_string()));
    }
    let meta: ArchiveMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?,
    )
    .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", meta_path.display())))?;
    if meta.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch(format!(
            "archive meta schema {} (expected {})",
            meta.schema_version, REPORT_SCHEMA_VERSION
        )));
    }

    let mut groups: Groups = BTreeMap::new();
    let failed: BTreeMap<String, String> = BTreeMap::new();
    for &mode in &meta.tasking {
        // Per client: archived records in file order (the live sampling
        // order, which fixes float accumulation order downstream).
        let mut per_client: Vec<Vec<ScoredRecord>> = Vec::new();
        let mut tasks_by_record: BTreeMap<(String, String), Vec<TaskSpec>> = BTreeMap::new();
        for client in &meta.clients {
            let path = archive_dir
                .join(client)
                .join(format!("{}.jsonl", mode.as_str()));
            if !path.exists() {
                return Err(Error::MissingArtifact(path.display().to_string()));
            }
            let archived = read_archive(&path)?;
            for rec in &archived {
                tasks_by_record.insert(
                    (rec.record_id.clone(), rec.fingerprint.clone()),
                    rec.tasks.clone(),
                );
            }
            per_client.push(archived.iter().map(ArchivedResponse::rescore).collect());
        }
        for (client, records) in meta.clients.iter().zip(&per_client) {
            let key = group_key(mode, client);
            for rec in records {
                let tasks = &tasks_by_record[&(rec.record_id.clone(), rec.response.fingerprint.clone())];
                groups
                    .entry((key.clone(), eval_unit(mode, tasks)))
                    .or_default()
                    .push(rec.clone());
            }
        }
        if meta.ensemble {
            let key = group_key(mode, ENSEMBLE_KEY);
            // Walk the first client's records in order and align the rest
            // by (record id, prompt fingerprint).
            let mut lookups: Vec<BTreeMap<(String, String), &ScoredRecord>> = Vec::new();
            for records in per_client.iter().skip(1) {
                lookups.push(
                    records
                        .iter()
                        .map(|r| {
                            (
                                (r.record_id.clone(), r.response.fingerprint.clone()),
                                r,
                            )
                        })
                        .collect(),
                );
            }
            for rec in per_client.first().into_iter().flatten() {
                let id = (rec.record_id.clone(), rec.response.fingerprint.clone());
                let mut member_sets = vec![rec.response.clone()];
                for lookup in &lookups {
                    let other = lookup.get(&id).ok_or_else(|| {
                        Error::MissingArtifact(format!(
                            "archived responses for record {} are incomplete across clients",
                            rec.record_id
                        ))
                    })?;
                    member_sets.push(other.response.clone());
                }
                let tasks = &tasks_by_record[&id];
                groups
                    .entry((key.clone(), eval_unit(mode, tasks)))
                    .or_default()
                    .push(ScoredRecord {
                        record_id: rec.record_id.clone(),
                        response: ensemble_response_sets(&member_sets)?,
                        truth: rec.truth.clone(),
                    });
            }
        }
    }

    let keys = cell_keys(&meta.tasking, &meta.clients, meta.ensemble);
    let rows = assemble_rows(&groups, &keys, &failed)?;
    let report = BlackboxReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: meta.seed,
        n_responses: meta.n_responses,
        temperature: meta.temperature,
        records_per_category: meta.records_per_category,
        min_positives: meta.min_positives,
        tasking: meta.tasking.clone(),
        clients: meta.clients.clone(),
        ensemble: meta.ensemble,
        cells: keys,
        rows,
    };
    // Replay constructs no clients, so the audit log is empty by
    // construction; writing it makes that assertable.
    write_report_files(&paths, &report, &[], meta.seed)?;
    Ok(report)
}

/// Copies archives (and meta) from a live run directory into another run
/// directory, so replay outputs can be compared in isolation.
#[cfg(test)]
pub(crate) fn copy_archives_for_test(from: &RunPaths, to: &RunPaths) -> std::io::Result<()> {
    fn copy_tree(src: &Path, dst: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dst)?;
        for entry in std::fs::read_dir(src)? {
            let entry = entry?;
            let target = dst.join(entry.file_name());
            if entry.file_type()?.is_dir() {
                copy_tree(&entry.path(), &target)?;
            } else {
                std::fs::copy(entry.path(), &target)?;
            }
        }
        Ok(())
    }
    copy_tree(&from.archives(), &to.archives())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::testutil::tiny_config;
    use crate::experiment::cmd_synth;

    fn mock_section(name: &str, signal: f64, seed: u64) -> ClientSection {
        ClientSection {
            name: name.to_string(),
            kind: "mock".to_string(),
            base_url: None,
            model: None,
            api_key_env: None,
            timeout_secs: None,
            max_attempts: None,
            accuracy_signal: Some(signal),
            noise_temperature: Some(1.0),
            invalid_rate: Some(0.02),
            behavior_seed: Some(seed),
        }
    }

    #[test]
    fn live_run_covers_all_cells_and_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(&dir.path().join("live"), 11);
        config.blackbox.clients = vec![
            mock_section("mock-a", 2.0, 1),
            mock_section("mock-b", 2.0, 2),
        ];
        config.blackbox.n_responses = 3;
        cmd_synth(&config).unwrap();

        let report = cmd_eval_blackbox(&config, None).unwrap();
        assert_eq!(report.rows.len(), 10);
        // 2 clients + ensemble, x 2 tasking modes.
        assert_eq!(report.cells.len(), 6);
        for row in &report.rows {
            assert!(row.missing.is_empty(), "{:?}", row.missing);
            assert_eq!(row.cells.len(), 6, "task {}", row.task);
            for cell in row.cells.values() {
                assert_eq!(cell.sample_count, 8);
            }
        }

        let live_paths = RunPaths::new(&config.run.out_dir);
        let live_json = std::fs::read(live_paths.blackbox_json()).unwrap();
        let live_csv = std::fs::read(live_paths.blackbox_csv()).unwrap();

        let mut replay_config = config.clone();
        replay_config.run.out_dir = dir.path().join("replayed");
        let replay_paths = RunPaths::new(&replay_config.run.out_dir);
        std::fs::create_dir_all(&replay_paths.root).unwrap();
        copy_archives_for_test(&live_paths, &replay_paths).unwrap();

        let replayed = cmd_eval_blackbox(&replay_config, Some(&replay_paths.root)).unwrap();
        assert_eq!(replayed, report);
        assert_eq!(std::fs::read(replay_paths.blackbox_json()).unwrap(), live_json);
        assert_eq!(std::fs::read(replay_paths.blackbox_csv()).unwrap(), live_csv);
        // Replay never touches the network: the audit log has no entries.
        let audit = std::fs::read_to_string(replay_paths.audit()).unwrap();
        assert!(audit.is_empty());
    }

    #[test]
    fn missing_cohort_is_a_runtime_artifact_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path(), 0);
        config.blackbox.clients = vec![mock_section("mock-a", 1.0, 1)];
        assert!(matches!(
            cmd_eval_blackbox(&config, None),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn oracle_accuracy_shows_in_auc_column() {
        // A very strong mock should reach label AUROC near 1 for single
        // prompts on most tasks.
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_config(dir.path(), 13);
        config.cohort.n_patients = 60;
        config.cohort.train_size = 30;
        config.cohort.test_size = 20;
        config.blackbox.records_per_category = 20;
        config.blackbox.min_positives = 2;
        config.blackbox.clients = vec![mock_section("mock-strong", 8.0, 3)];
        config.blackbox.tasking = vec![Tasking::Single];
        config.blackbox.ensemble = false;
        cmd_synth(&config).unwrap();
        let report = cmd_eval_blackbox(&config, None).unwrap();
        let mut strong = 0usize;
        let mut total = 0usize;
        for row in &report.rows {
            let cell = &row.cells["mock-strong:single"];
            if let Some(auc) = cell.auc {
                total += 1;
                if auc > 0.9 {
                    strong += 1;
                }
            }
        }
        assert!(total >= 8, "defined AUROC cells: {total}");
        assert!(strong * 2 > total, "high-AUROC cells {strong}/{total}");
    }
}
