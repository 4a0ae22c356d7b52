//! Trains a single-task probe decoder on frozen synthetic embeddings and
//! scores it on a held-out split.
//!
//! The decoder is a two-layer MLP over (embedding, task embedding); here it
//! sees exactly one task, so the task embedding is a constant offset.

use ehr_uq::decoder::{Decoder, DecoderConfig};
use ehr_uq::ehr::TaskId;
use ehr_uq::metrics::{auroc, brier_score, ece, nll};
use ehr_uq::synth::{generate_cohort, CohortConfig};
use ehr_uq::Result;

fn main() -> Result<()> {
    // Desk-scale cohort: small embeddings keep this run under a second.
    let mut cohort_cfg = CohortConfig::with_defaults(500, 42);
    cohort_cfg.embedding_dim = 64;
    cohort_cfg.events_per_patient = (8, 20);
    let cohort = generate_cohort(&cohort_cfg)?;
    let (train, test) = cohort.embeddings.split_at(400);

    let task = TaskId::new("long_length_of_stay");
    let mut decoder = Decoder::new(
        DecoderConfig {
            input_dim: 64,
            hidden_dim: 32,
            epochs: 30,
            learning_rate: 3e-3,
            seed: 7,
            ..DecoderConfig::default()
        },
        vec![task.clone()],
    )?;

    let trace = decoder.train(train)?;
    println!("training loss every 5 epochs:");
    for (epoch, loss) in trace.epoch_losses.iter().enumerate() {
        if (epoch + 1) % 5 == 0 || epoch == 0 {
            println!("  {:>2}  {loss:.4}", epoch + 1);
        }
    }

    let preds = decoder.predictions_for_task(test, &task)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.p).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.y).collect();
    println!("\nheld-out ({} records, task {task}):", preds.len());
    println!("  brier {:.4}", brier_score(&preds)?);
    println!("  nll   {:.4}", nll(&preds)?);
    println!("  ece   {:.4}", ece(&preds, 10)?);
    println!("  auroc {:.4}", auroc(&scores, &labels)?);
    Ok(())
}
