//! Cross-model ensembling without logits: sample the same prompt from two
//! models and concatenate the answer sets before scoring entropy.
//!
//! Both mocks see the same ground truth but run independent answer
//! processes, so their disagreements carry signal a single model's
//! self-consistency misses.

use std::sync::Arc;

use ehr_uq::blackbox::{
    build_prompt, default_tasks, ensemble_response_sets, evaluate_blackbox, sample_responses,
    PromptMode, SamplingParams, ScoredRecord,
};
use ehr_uq::ehr::{render_timeline, truncate_sequence, TaskId};
use ehr_uq::synth::{generate_cohort, CohortConfig, MockBehavior, MockClient, PromptOracle};
use ehr_uq::Result;

fn uq(records: &[ScoredRecord], method: &str, task: &TaskId) -> Result<Option<f64>> {
    Ok(evaluate_blackbox(records, method, "single")?[task].report.get("uq_auroc"))
}

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(60, 58);
    cohort_cfg.embedding_dim = 32;
    cohort_cfg.events_per_patient = (8, 16);
    let cohort = generate_cohort(&cohort_cfg)?;
    let dict = cohort.dictionary();
    let task = default_tasks().into_iter().find(|t| t.id.as_str() == "hyperkalemia").unwrap();

    let mut oracle = PromptOracle::new();
    let mut prompts = Vec::new();
    for seq in &cohort.sequences {
        let label = &seq.labels[&task.id];
        let visible = truncate_sequence(seq, label.prediction_time);
        let narrative = render_timeline(&visible, &dict, 3000);
        let prompt = build_prompt(&narrative, std::slice::from_ref(&task), PromptMode::Single)?;
        oracle.record(&prompt, &seq.labels.iter().map(|(t, l)| (t.clone(), l.label)).collect())?;
        prompts.push((seq.patient_id.clone(), prompt, label.label));
    }
    let oracle = Arc::new(oracle);

    let alpha = MockClient::new("mock-alpha", MockBehavior::calibrated(11), oracle.clone())?;
    let beta = MockClient::new("mock-beta", MockBehavior::calibrated(97), oracle)?;

    // n=5 per model; the combined set scores the concatenated ten answers.
    let mut solo_a = Vec::new();
    let mut solo_b = Vec::new();
    let mut combined = Vec::new();
    for (i, (patient_id, prompt, truth)) in prompts.iter().enumerate() {
        let truth_map = std::collections::BTreeMap::from([(task.id.clone(), *truth)]);
        let pa = SamplingParams { temperature: 1.0, seed: 100 + i as u64 };
        let pb = SamplingParams { temperature: 1.0, seed: 5_000_100 + i as u64 };
        let set_a = sample_responses(&alpha, prompt, 5, &pa)?;
        let set_b = sample_responses(&beta, prompt, 5, &pb)?;
        let merged = ensemble_response_sets(&[set_a.clone(), set_b.clone()])?;
        solo_a.push(ScoredRecord { record_id: patient_id.clone(), response: set_a, truth: truth_map.clone() });
        solo_b.push(ScoredRecord { record_id: patient_id.clone(), response: set_b, truth: truth_map.clone() });
        combined.push(ScoredRecord { record_id: patient_id.clone(), response: merged, truth: truth_map });
    }

    println!("uncertainty-quality auroc on task {} ({} records):", task.id, prompts.len());
    println!("  mock-alpha alone  {:?}", uq(&solo_a, "mock-alpha", &task.id)?);
    println!("  mock-beta alone   {:?}", uq(&solo_b, "mock-beta", &task.id)?);
    println!("  combined 5+5      {:?}", uq(&combined, "ensemble", &task.id)?);
    println!("\neach combined record holds {} generations", combined[0].response.n);
    Ok(())
}
