//! Trains a deep ensemble and compares its calibration against the members
//! it averages.
//!
//! Members differ only in init and batch-shuffling seed (member i trains
//! with seed base+i); the ensemble prediction is the mean of their
//! probabilities. On most runs that mean is better calibrated than a
//! typical member.

use ehr_uq::decoder::{DecoderConfig, DeepEnsemble};
use ehr_uq::ehr::TaskId;
use ehr_uq::metrics::{ece, nll};
use ehr_uq::synth::{generate_cohort, CohortConfig};
use ehr_uq::Result;

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(600, 3);
    cohort_cfg.embedding_dim = 64;
    cohort_cfg.events_per_patient = (8, 20);
    let cohort = generate_cohort(&cohort_cfg)?;
    let (train, test) = cohort.embeddings.split_at(450);

    let task = TaskId::new("hyperkalemia");
    let config = DecoderConfig {
        input_dim: 64,
        hidden_dim: 32,
        epochs: 25,
        learning_rate: 3e-3,
        seed: 100,
        ..DecoderConfig::default()
    };
    let ensemble = DeepEnsemble::train(&config, &[task.clone()], train, 5)?;

    println!("member      ece      nll");
    let mut member_ece = Vec::new();
    let mut member_nll = Vec::new();
    for (i, member) in ensemble.members().iter().enumerate() {
        let preds = member.predictions_for_task(test, &task)?;
        let (e, n) = (ece(&preds, 10)?, nll(&preds)?);
        println!("  {i}      {e:.4}   {n:.4}");
        member_ece.push(e);
        member_nll.push(n);
    }

    let preds = ensemble.predictions_for_task(test, &task)?;
    let (e, n) = (ece(&preds, 10)?, nll(&preds)?);
    println!("ensemble   {e:.4}   {n:.4}");

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!(
        "\nensemble vs member mean: ece {:.4} vs {:.4}, nll {:.4} vs {:.4}",
        e,
        mean(&member_ece),
        n,
        mean(&member_nll)
    );
    Ok(())
}
