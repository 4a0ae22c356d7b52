//! The whole black-box loop against the in-process mock model: build
//! prompts, sample repeated completions, read uncertainty off the answer
//! distribution, then check that low entropy actually predicts correctness.

use std::sync::Arc;

use ehr_uq::blackbox::{
    build_prompt, default_tasks, evaluate_blackbox, sample_responses, score_uncertainty,
    PromptMode, SamplingParams, ScoredRecord,
};
use ehr_uq::ehr::{render_timeline, truncate_sequence};
use ehr_uq::synth::{generate_cohort, CohortConfig, MockBehavior, MockClient, PromptOracle};
use ehr_uq::Result;

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(40, 33);
    cohort_cfg.embedding_dim = 32;
    cohort_cfg.events_per_patient = (8, 16);
    let cohort = generate_cohort(&cohort_cfg)?;
    let dict = cohort.dictionary();

    let task = default_tasks().into_iter().find(|t| t.id.as_str() == "anemia").unwrap();

    // The oracle hands each prompt's ground truth to the mock responder; it
    // stands in for the knowledge a real model would bring.
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

    let client = MockClient::new("mock-calibrated", MockBehavior::calibrated(4), Arc::new(oracle))?;

    let mut records = Vec::new();
    println!("patient    entropy  majority  truth  n_valid");
    for (i, (patient_id, prompt, truth)) in prompts.iter().enumerate() {
        let params = SamplingParams { temperature: 1.0, seed: 7000 + i as u64 };
        let set = sample_responses(&client, prompt, 10, &params)?;
        let summary = &score_uncertainty(&set)[&task.id];
        if i < 8 {
            println!(
                "{patient_id:<10} {:.4}   {:<8} {truth}      {}",
                summary.entropy,
                format!("{:?}", summary.majority),
                summary.valid_count
            );
        }
        records.push(ScoredRecord {
            record_id: patient_id.clone(),
            response: set,
            truth: [(task.id.clone(), *truth)].into(),
        });
    }

    let outcome = &evaluate_blackbox(&records, "mock-calibrated", "single")?[&task.id];
    println!("\nover {} records:", records.len());
    println!("  label auroc (yes-frequency vs truth)        {:?}", outcome.report.get("auroc"));
    println!("  uq auroc    (-entropy vs majority correct)  {:?}", outcome.report.get("uq_auroc"));
    println!("  mean answer entropy                         {:.4} nats", outcome.mean_entropy);
    Ok(())
}
