//! Scores a small batch of probabilistic predictions with every calibration
//! metric in the crate and prints the reliability table behind the ECE.

use ehr_uq::metrics::{
    aece, auroc, brier_score, class_entropy, ece, nll, reliability_table,
    ProbabilisticPrediction,
};
use ehr_uq::Result;

fn main() -> Result<()> {
    // (probability of yes, true label) pairs. The model leans overconfident:
    // several 0.9s sit on negatives.
    let raw: [(f64, u8); 12] = [
        (0.95, 1),
        (0.90, 0),
        (0.85, 1),
        (0.80, 1),
        (0.72, 0),
        (0.64, 1),
        (0.55, 0),
        (0.45, 0),
        (0.38, 0),
        (0.30, 1),
        (0.15, 0),
        (0.05, 0),
    ];
    let preds: Vec<ProbabilisticPrediction> = raw
        .iter()
        .enumerate()
        .map(|(i, &(p, y))| ProbabilisticPrediction::new(format!("r{i}"), p, y))
        .collect::<Result<_>>()?;

    println!("brier  {:.6}", brier_score(&preds)?);
    println!("nll    {:.6}", nll(&preds)?);
    println!("ece    {:.6}", ece(&preds, 5)?);
    println!("aece   {:.6}", aece(&preds, 5)?);

    let scores: Vec<f64> = preds.iter().map(|p| p.p).collect();
    let labels: Vec<u8> = preds.iter().map(|p| p.y).collect();
    println!("auroc  {:.6}", auroc(&scores, &labels)?);

    // Entropy over a batch of discrete answers, e.g. repeated model samples.
    let votes = ["Yes", "Yes", "Yes", "No", "Yes"];
    println!("vote entropy {:.6} nats\n", class_entropy(&votes, 2));

    // Confidence lives in [0.5, 1.0]; the table shows where mass lands and
    // how far each bin's accuracy drifts from its mean confidence.
    println!("bin      range        n   accuracy  confidence");
    for bin in reliability_table(&preds, 5)? {
        match (bin.accuracy, bin.mean_confidence) {
            (Some(acc), Some(conf)) => println!(
                "  [{:.2}, {:.2})  {:>4}   {:.4}    {:.4}",
                bin.lower, bin.upper, bin.count, acc, conf
            ),
            _ => println!("  [{:.2}, {:.2})  {:>4}   (empty)", bin.lower, bin.upper, bin.count),
        }
    }
    Ok(())
}
