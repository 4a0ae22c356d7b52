//! One decoder, five lab tasks. A multi-task decoder shares its whole trunk
//! across tasks; only the learned task embedding switches the question.

use ehr_uq::blackbox::{default_tasks, TaskCategory};
use ehr_uq::decoder::{Decoder, DecoderConfig};
use ehr_uq::metrics::{auroc, brier_score};
use ehr_uq::synth::{generate_cohort, CohortConfig};
use ehr_uq::Result;

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(600, 9);
    cohort_cfg.embedding_dim = 64;
    cohort_cfg.events_per_patient = (8, 20);
    let cohort = generate_cohort(&cohort_cfg)?;
    let (train, test) = cohort.embeddings.split_at(450);

    let lab_tasks: Vec<_> = default_tasks()
        .into_iter()
        .filter(|t| t.category == TaskCategory::Lab)
        .map(|t| t.id)
        .collect();

    let mut decoder = Decoder::new(
        DecoderConfig {
            input_dim: 64,
            hidden_dim: 32,
            task_embed_dim: 16,
            epochs: 8,
            seed: 17,
            ..DecoderConfig::default()
        },
        lab_tasks.clone(),
    )?;
    decoder.train(train)?;

    // Everything except the task-embedding table is task-agnostic: the
    // shared trunk is (64+16)*32 weights + 32 biases + 32 + 1 output row.
    let cfg = decoder.config();
    let trunk = (cfg.input_dim + cfg.task_embed_dim) * cfg.hidden_dim + cfg.hidden_dim
        + cfg.hidden_dim
        + 1;
    let table = lab_tasks.len() * cfg.task_embed_dim;
    println!(
        "parameters: {} total = {trunk} shared trunk + {table} task embeddings\n",
        decoder.params().len()
    );

    println!("task               brier    auroc   (held out, one shared model)");
    for task in &lab_tasks {
        let preds = decoder.predictions_for_task(test, task)?;
        let scores: Vec<f64> = preds.iter().map(|p| p.p).collect();
        let labels: Vec<u8> = preds.iter().map(|p| p.y).collect();
        println!(
            "{:<18} {:.4}   {:.4}",
            task.to_string(),
            brier_score(&preds)?,
            auroc(&scores, &labels)?
        );
    }
    Ok(())
}
