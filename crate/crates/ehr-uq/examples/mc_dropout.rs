//! Monte Carlo dropout at inference time: keep the training-time dropout
//! masks active and read predictive uncertainty off the spread of repeated
//! stochastic passes.

use ehr_uq::decoder::{Decoder, DecoderConfig};
use ehr_uq::ehr::TaskId;
use ehr_uq::synth::{generate_cohort, CohortConfig};
use ehr_uq::Result;

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(300, 21);
    cohort_cfg.embedding_dim = 64;
    cohort_cfg.events_per_patient = (8, 20);
    let cohort = generate_cohort(&cohort_cfg)?;
    let (train, test) = cohort.embeddings.split_at(250);

    let task = TaskId::new("anemia");
    let mut decoder = Decoder::new(
        DecoderConfig {
            input_dim: 64,
            hidden_dim: 32,
            dropout: 0.5,
            epochs: 25,
            learning_rate: 3e-3,
            seed: 5,
            ..DecoderConfig::default()
        },
        vec![task.clone()],
    )?;
    decoder.train(train)?;

    println!("record        det      mc mean   mc std    (T=30 passes)");
    for (i, rec) in test.iter().take(8).enumerate() {
        let det = decoder.predict(&rec.embedding, &task)?;
        let samples = decoder.predict_mc(&rec.embedding, &task, 30, 900 + i as u64)?;
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|p| (p - mean).powi(2)).sum::<f64>()
            / samples.len() as f64;
        println!(
            "{:<12}  {det:.4}   {mean:.4}    {:.4}",
            rec.record_id,
            var.sqrt()
        );
    }

    // With dropout 0 every pass is the plain forward pass; MC collapses to
    // the deterministic prediction exactly, not just approximately.
    let mut point = decoder.clone();
    let mut cfg = point.config().clone();
    cfg.dropout = 0.0;
    let params = point.params().to_vec();
    point = Decoder::new(cfg, vec![task.clone()])?;
    point.set_params(params)?;
    let rec = &test[0];
    let det = point.predict(&rec.embedding, &task)?;
    let mc = point.predict_mc_mean(&rec.embedding, &task, 30, 1)?;
    println!("\ndropout 0 identity: |det - mc| = {:e}", (det - mc).abs());
    Ok(())
}
