//! `synth`: generate the cohort artifacts one run directory needs.
//!
//! Outputs: `cohort.jsonl` (patient sequences), `embeddings.jsonl` (decoder
//! inputs), `concepts.tsv` (code dictionary), `oracle.json` (prompt
//! fingerprint -> ground truth, for mock responders), and a manifest with
//! content hashes. Rerunning with the same config and seed reproduces every
//! file byte for byte.

use std::collections::BTreeMap;

use crate::blackbox::{build_prompt, default_tasks, PromptMode, Prompt, TaskCategory, TaskSpec};
use crate::ehr::{
    render_timeline, truncate_sequence, write_cohort, write_concept_dictionary,
    ClinicalNarrative, ConceptDictionary, PatientSequence, TaskId,
};
use crate::error::{Error, Result};
use crate::synth::{generate_cohort, CohortConfig, PromptOracle};

use super::{write_json_pretty, ExperimentConfig, RunManifest, RunPaths};

pub(crate) fn cohort_config(config: &ExperimentConfig) -> CohortConfig {
    let section = &config.cohort;
    let mut cohort = CohortConfig::with_defaults(section.n_patients, config.run.seed);
    if let Some(dim) = section.embedding_dim {
        cohort.embedding_dim = dim;
    }
    if let Some(vocab) = section.event_vocab_size {
        cohort.event_vocab_size = vocab;
    }
    if let Some(lo) = section.events_min {
        cohort.events_per_patient.0 = lo;
    }
    if let Some(hi) = section.events_max {
        cohort.events_per_patient.1 = hi;
    }
    if let Some(noise) = section.embedding_noise {
        cohort.embedding_noise = noise;
    }
    cohort
}

/// Tasks of one category, in the standard task order.
pub(crate) fn category_tasks(category: TaskCategory) -> Vec<TaskSpec> {
    default_tasks()
        .into_iter()
        .filter(|t| t.category == category)
        .collect()
}

/// Renders the narrative a prompt for `category` may see: events strictly
/// before the category's shared prediction time.
pub(crate) fn narrative_for(
    seq: &PatientSequence,
    dict: &ConceptDictionary,
    category: TaskCategory,
    budget: usize,
) -> Result<ClinicalNarrative> {
    let tasks = category_tasks(category);
    let first = tasks.first().ok_or(Error::EmptyData)?;
    let label = seq.labels.get(&first.id).ok_or_else(|| Error::MissingLabel {
        record: seq.patient_id.clone(),
        task: first.id.to_string(),
    })?;
    let truncated = truncate_sequence(seq, label.prediction_time);
    Ok(render_timeline(&truncated, dict, budget))
}

/// Both prompts a record contributes for one category: one per task
/// (single mode) and one for the whole category (multi mode).
pub(crate) fn prompts_for_category(
    seq: &PatientSequence,
    dict: &ConceptDictionary,
    category: TaskCategory,
    budget: usize,
) -> Result<(Vec<Prompt>, Prompt)> {
    let tasks = category_tasks(category);
    let narrative = narrative_for(seq, dict, category, budget)?;
    let singles = tasks
        .iter()
        .map(|task| build_prompt(&narrative, std::slice::from_ref(task), PromptMode::Single))
        .collect::<Result<Vec<_>>>()?;
    let multi = build_prompt(&narrative, &tasks, PromptMode::Multi)?;
    Ok((singles, multi))
}

pub(crate) fn truth_for(seq: &PatientSequence, tasks: &[TaskSpec]) -> Result<BTreeMap<TaskId, u8>> {
    tasks
        .iter()
        .map(|task| {
            seq.labels
                .get(&task.id)
                .map(|l| (task.id.clone(), l.label))
                .ok_or_else(|| Error::MissingLabel {
                    record: seq.patient_id.clone(),
                    task: task.id.to_string(),
                })
        })
        .collect()
}

/// Registers every prompt the cohort can produce (all patients, both
/// tasking modes) so mock responders can answer any of them.
pub(crate) fn build_oracle(
    sequences: &[PatientSequence],
    dict: &ConceptDictionary,
    budget: usize,
) -> Result<PromptOracle> {
    let mut oracle = PromptOracle::new();
    for seq in sequences {
        for category in TaskCategory::ALL {
            let tasks = category_tasks(category);
            let truth = truth_for(seq, &tasks)?;
            let (singles, multi) = prompts_for_category(seq, dict, category, budget)?;
            for prompt in singles.iter().chain(std::iter::once(&multi)) {
                oracle.record(prompt, &truth)?;
            }
        }
    }
    Ok(oracle)
}

/// Generates the synthetic cohort and writes all run-directory inputs.
pub fn cmd_synth(config: &ExperimentConfig) -> Result<RunManifest> {
    let paths = RunPaths::new(&config.run.out_dir);
    std::fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;

    let cohort_config = cohort_config(config);
    let cohort = generate_cohort(&cohort_config)?;
    let dict = cohort.dictionary();

    write_cohort(&paths.cohort(), &cohort.sequences)?;
    crate::decoder::write_embeddings(&paths.embeddings(), &cohort.embeddings)?;
    write_concept_dictionary(&paths.concepts(), &cohort.dictionary_rows)?;

    let oracle = build_oracle(&cohort.sequences, &dict, config.blackbox.narrative_budget)?;
    write_json_pretty(&paths.oracle(), &oracle)?;

    let mut manifest = RunManifest::new("synth", config.run.seed);
    manifest.echo("n_patients", cohort_config.n_patients);
    manifest.echo("embedding_dim", cohort_config.embedding_dim);
    manifest.echo("event_vocab_size", cohort_config.event_vocab_size);
    manifest.echo("narrative_budget", config.blackbox.narrative_budget);
    manifest.echo("oracle_prompts", oracle.len());
    for file in [
        paths.cohort(),
        paths.embeddings(),
        paths.concepts(),
        paths.oracle(),
    ] {
        manifest.add_file(&paths.root, &file)?;
    }
    manifest.write(&paths.manifest("synth"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::testutil::tiny_config;

    #[test]
    fn synth_writes_expected_files_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_synth(&tiny_config(&dir.path().join("a"), 5)).unwrap();
        let b = cmd_synth(&tiny_config(&dir.path().join("b"), 5)).unwrap();
        assert_eq!(a.files, b.files, "same seed must reproduce identical bytes");
        assert_eq!(a.files.len(), 4);
        // 30 patients x (10 single + 3 multi) prompts.
        assert_eq!(a.config_echo["oracle_prompts"], "390");

        let c = cmd_synth(&tiny_config(&dir.path().join("c"), 6)).unwrap();
        assert_ne!(a.files, c.files, "different seed must change content");
    }

    #[test]
    fn oracle_knows_every_prompt_mode() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config(dir.path(), 1);
        cmd_synth(&config).unwrap();
        let paths = RunPaths::new(&config.run.out_dir);
        let oracle: PromptOracle =
            serde_json::from_str(&std::fs::read_to_string(paths.oracle()).unwrap()).unwrap();
        let sequences = crate::ehr::read_cohort(&paths.cohort()).unwrap();
        let load = crate::ehr::load_concept_dictionary(&paths.concepts()).unwrap();
        let (singles, multi) = prompts_for_category(
            &sequences[0],
            &load.dictionary,
            TaskCategory::Lab,
            config.blackbox.narrative_budget,
        )
        .unwrap();
        for prompt in singles.iter().chain(std::iter::once(&multi)) {
            assert!(oracle.get(&prompt.fingerprint()).is_some());
        }
    }
}
