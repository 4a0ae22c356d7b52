//! `train`: fit one decoder per grid cell and save checkpoints.
//!
//! Cell enumeration: for single tasking, one decoder per task; for multi
//! tasking, one shared decoder per category. Ensemble cells train
//! `ensemble_size` members whose seeds differ by the member index. MC
//! dropout needs no checkpoints of its own: it reuses the baseline decoder
//! (trained with dropout active) and only changes inference, so requesting
//! `mc_dropout` trains the baseline cells.

use crate::blackbox::TaskCategory;
use crate::decoder::{read_embeddings, Decoder, DecoderConfig, DeepEnsemble, EmbeddingRecord};
use crate::ehr::TaskId;
use crate::error::{Error, Result};

use super::synth::category_tasks;
use super::{
    run_pool, stable_seed, ExperimentConfig, Method, RunManifest, RunPaths, Tasking,
};

/// Checkpoint file name of one trained decoder. `member` is the ensemble
/// member index; baseline decoders have none.
pub fn checkpoint_name(
    method: Method,
    tasking: Tasking,
    scope: &str,
    member: Option<usize>,
) -> String {
    match member {
        Some(i) => format!("{}_{}_{}_m{}.json", method.as_str(), tasking.as_str(), scope, i),
        None => format!("{}_{}_{}.json", method.as_str(), tasking.as_str(), scope),
    }
}

struct TrainCell {
    method: Method,
    tasking: Tasking,
    scope: String,
    tasks: Vec<TaskId>,
}

/// Scopes of one tasking mode: every task, or every category.
fn scopes(tasking: Tasking) -> Vec<(String, Vec<TaskId>)> {
    match tasking {
        Tasking::Single => category_tasks(TaskCategory::Operational)
            .into_iter()
            .chain(category_tasks(TaskCategory::Lab))
            .chain(category_tasks(TaskCategory::Diagnosis))
            .map(|t| (t.id.to_string(), vec![t.id]))
            .collect(),
        Tasking::Multi => TaskCategory::ALL
            .into_iter()
            .map(|c| {
                (
                    c.as_str().to_string(),
                    category_tasks(c).into_iter().map(|t| t.id).collect(),
                )
            })
            .collect(),
    }
}

fn training_cells(config: &ExperimentConfig) -> Vec<TrainCell> {
    let d = &config.decoder;
    let mut methods = Vec::new();
    if d.methods.contains(&Method::Baseline) || d.methods.contains(&Method::McDropout) {
        methods.push(Method::Baseline);
    }
    if d.methods.contains(&Method::Ensemble) {
        methods.push(Method::Ensemble);
    }
    let mut cells = Vec::new();
    for &method in &methods {
        for &tasking in &d.tasking {
            for (scope, tasks) in scopes(tasking) {
                cells.push(TrainCell {
                    method,
                    tasking,
                    scope,
                    tasks,
                });
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    /// Checkpoint file names in cell order.
    pub checkpoints: Vec<String>,
}

/// Trains every decoder the configured grid needs and saves checkpoints
/// under `<run>/checkpoints/`.
pub fn cmd_train(config: &ExperimentConfig) -> Result<TrainSummary> {
    let paths = RunPaths::new(&config.run.out_dir);
    if !paths.embeddings().exists() {
        return Err(Error::MissingArtifact(
            paths.embeddings().display().to_string(),
        ));
    }
    let records = read_embeddings(&paths.embeddings())?;
    let train_slice: &[EmbeddingRecord] = records
        .get(..config.cohort.train_size)
        .ok_or_else(|| {
            Error::InvalidConfig(format!(
                "train_size {} exceeds the {} available records",
                config.cohort.train_size,
                records.len()
            ))
        })?;
    if train_slice.is_empty() {
        return Err(Error::EmptyData);
    }
    let input_dim = train_slice[0].embedding.len();
    let checkpoint_dir = paths.checkpoints();
    std::fs::create_dir_all(&checkpoint_dir).map_err(|e| Error::io(&checkpoint_dir, e))?;

    let cells = training_cells(config);
    if cells.is_empty() {
        return Err(Error::InvalidConfig("decoder grid must be non-empty".into()));
    }

    let d = &config.decoder;
    let jobs: Vec<_> = cells
        .into_iter()
        .map(|cell| {
            let dir = checkpoint_dir.clone();
            let run_seed = config.run.seed;
            let decoder_config = DecoderConfig {
                input_dim,
                task_embed_dim: d.task_embed_dim,
                hidden_dim: d.hidden_dim,
                dropout: d.dropout,
                learning_rate: d.learning_rate,
                epochs: d.epochs,
                batch_size: d.batch_size,
                seed: 0,
            };
            let ensemble_size = d.ensemble_size;
            move || -> Result<Vec<String>> {
                let tag = format!(
                    "train:{}:{}:{}",
                    cell.method.as_str(),
                    cell.tasking.as_str(),
                    cell.scope
                );
                let mut cfg = decoder_config;
                cfg.seed = stable_seed(run_seed, &tag);
                match cell.method {
                    Method::Baseline => {
                        let mut decoder = Decoder::new(cfg, cell.tasks.clone())?;
                        decoder.train(train_slice)?;
                        let name = checkpoint_name(cell.method, cell.tasking, &cell.scope, None);
                        decoder.save(&dir.join(&name))?;
                        Ok(vec![name])
                    }
                    Method::Ensemble => {
                        let ensemble =
                            DeepEnsemble::train(&cfg, &cell.tasks, train_slice, ensemble_size)?;
                        let mut names = Vec::with_capacity(ensemble_size);
                        for (i, member) in ensemble.members().iter().enumerate() {
                            let name =
                                checkpoint_name(cell.method, cell.tasking, &cell.scope, Some(i));
                            member.save(&dir.join(&name))?;
                            names.push(name);
                        }
                        Ok(names)
                    }
                    Method::McDropout => unreachable!("mc_dropout shares baseline checkpoints"),
                }
            }
        })
        .collect();

    let results = run_pool(jobs, config.run.parallelism);
    let mut checkpoints = Vec::new();
    for result in results {
        checkpoints.extend(result?);
    }

    let mut manifest = RunManifest::new("train", config.run.seed);
    manifest.echo("train_size", train_slice.len());
    manifest.echo("input_dim", input_dim);
    manifest.echo("hidden_dim", d.hidden_dim);
    manifest.echo("dropout", d.dropout);
    manifest.echo("epochs", d.epochs);
    manifest.echo("ensemble_size", d.ensemble_size);
    manifest.echo("checkpoints", checkpoints.len());
    for name in &checkpoints {
        manifest.add_file(&paths.root, &checkpoint_dir.join(name))?;
    }
    manifest.write(&paths.manifest("train"))?;
    Ok(TrainSummary { checkpoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_the_expected_cell_arithmetic() {
        let config: ExperimentConfig = toml::from_str("[run]\nout_dir = \"x\"\n").unwrap();
        let cells = training_cells(&config);
        // baseline: 10 single + 3 multi; ensemble: the same 13 scopes.
        assert_eq!(cells.len(), 26);
        let files: usize = cells
            .iter()
            .map(|c| match c.method {
                Method::Ensemble => config.decoder.ensemble_size,
                _ => 1,
            })
            .sum();
        assert_eq!(files, 10 + 3 + 50 + 15);
    }

    #[test]
    fn checkpoint_names_are_stable() {
        assert_eq!(
            checkpoint_name(Method::Baseline, Tasking::Single, "anemia", None),
            "baseline_single_anemia.json"
        );
        assert_eq!(
            checkpoint_name(Method::Ensemble, Tasking::Multi, "lab", Some(4)),
            "ensemble_multi_lab_m4.json"
        );
    }

    #[test]
    fn missing_embeddings_is_a_runtime_artifact_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = crate::experiment::testutil::tiny_config(dir.path(), 0);
        assert!(matches!(
            cmd_train(&config),
            Err(Error::MissingArtifact(_))
        ));
    }
}
