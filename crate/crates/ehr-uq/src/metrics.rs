//! Calibration and uncertainty metric kernels: Brier score, ECE, adaptive
//! ECE, NLL, class entropy, AUROC, and reliability-bin tables.
//!
//! All functions are pure and operate on immutable slices; they are safe to
//! call from any number of threads.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ehr::TaskId;
use crate::error::{Error, Result};

/// Probability clamp keeping NLL finite on degenerate predictions.
pub const PROB_EPSILON: f64 = 1e-12;

/// One record's predicted positive-class probability and ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticPrediction {
    pub record_id: String,
    /// Predicted probability of the positive class, in [0, 1].
    pub p: f64,
    /// Ground-truth label, 0 or 1.
    pub y: u8,
}

impl ProbabilisticPrediction {
    pub fn new(record_id: impl Into<String>, p: f64, y: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidProbability(p));
        }
        if y > 1 {
            return Err(Error::InvalidLabel(y));
        }
        Ok(ProbabilisticPrediction {
            record_id: record_id.into(),
            p,
            y,
        })
    }

    /// Confidence of the predicted class: max(p, 1-p).
    pub fn confidence(&self) -> f64 {
        self.p.max(1.0 - self.p)
    }

    /// Predicted class: 1 when p >= 0.5, else 0.
    pub fn predicted_class(&self) -> u8 {
        if self.p >= 0.5 {
            1
        } else {
            0
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted_class() == self.y
    }
}

/// Mean squared error between predicted probabilities and outcomes.
pub fn brier_score(preds: &[ProbabilisticPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let sum: f64 = preds
        .iter()
        .map(|r| {
            let d = f64::from(r.y) - r.p;
            d * d
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

/// Per-sample mean negative log-likelihood (natural log), with probabilities
/// clamped into [PROB_EPSILON, 1 - PROB_EPSILON].
pub fn nll(preds: &[ProbabilisticPrediction]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    let sum: f64 = preds
        .iter()
        .map(|r| {
            let p_true = if r.y == 1 { r.p } else { 1.0 - r.p };
            -p_true.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON).ln()
        })
        .sum();
    Ok(sum / preds.len() as f64)
}

/// One fixed-width confidence bin of a reliability table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Fraction of records in the bin whose predicted class was correct;
    /// `None` for empty bins.
    pub accuracy: Option<f64>,
    /// Mean confidence of records in the bin; `None` for empty bins.
    pub mean_confidence: Option<f64>,
}

fn bin_index(confidence: f64, bins: usize) -> usize {
    // Binary confidence lives in [0.5, 1.0]; the last bin is right-inclusive.
    let width = 0.5 / bins as f64;
    (((confidence - 0.5) / width).floor() as usize).min(bins - 1)
}

/// Per-bin accuracy/confidence table over fixed-width confidence bins on
/// [0.5, 1.0].
pub fn reliability_table(
    preds: &[ProbabilisticPrediction],
    bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    if bins < 1 {
        return Err(Error::InvalidBinCount {
            got: bins,
            reason: "must be >= 1".into(),
        });
    }
    let width = 0.5 / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut hits = vec![0usize; bins];
    let mut conf_sums = vec![0.0f64; bins];
    for r in preds {
        let idx = bin_index(r.confidence(), bins);
        counts[idx] += 1;
        if r.correct() {
            hits[idx] += 1;
        }
        conf_sums[idx] += r.confidence();
    }
    Ok((0..bins)
        .map(|m| {
            let lower = 0.5 + m as f64 * width;
            let upper = if m == bins - 1 { 1.0 } else { 0.5 + (m + 1) as f64 * width };
            if counts[m] > 0 {
                ReliabilityBin {
                    lower,
                    upper,
                    count: counts[m],
                    accuracy: Some(hits[m] as f64 / counts[m] as f64),
                    mean_confidence: Some(conf_sums[m] / counts[m] as f64),
                }
            } else {
                ReliabilityBin {
                    lower,
                    upper,
                    count: 0,
                    accuracy: None,
                    mean_confidence: None,
                }
            }
        })
        .collect())
}

/// Expected calibration error over fixed-width confidence bins.
pub fn ece(preds: &[ProbabilisticPrediction], bins: usize) -> Result<f64> {
    let table = reliability_table(preds, bins)?;
    let n = preds.len() as f64;
    Ok(table
        .iter()
        .filter(|b| b.count > 0)
        .map(|b| {
            (b.count as f64 / n) * (b.accuracy.unwrap() - b.mean_confidence.unwrap()).abs()
        })
        .sum())
}

/// Adaptive ECE: records sorted by confidence and split into `bins`
/// equal-mass groups (sizes differ by at most one, larger groups first;
/// confidence ties stay in stable sort order).
pub fn aece(preds: &[ProbabilisticPrediction], bins: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::EmptyPredictions);
    }
    if bins < 1 || bins > preds.len() {
        return Err(Error::InvalidBinCount {
            got: bins,
            reason: format!("must be in 1..={}", preds.len()),
        });
    }
    let mut order: Vec<&ProbabilisticPrediction> = preds.iter().collect();
    order.sort_by(|a, b| a.confidence().partial_cmp(&b.confidence()).unwrap());

    let n = preds.len();
    let base = n / bins;
    let remainder = n % bins;
    let mut total = 0.0;
    let mut start = 0usize;
    for m in 0..bins {
        let size = base + usize::from(m < remainder);
        let group = &order[start..start + size];
        start += size;
        let acc = group.iter().filter(|r| r.correct()).count() as f64 / size as f64;
        let conf = group.iter().map(|r| r.confidence()).sum::<f64>() / size as f64;
        total += (size as f64 / n as f64) * (acc - conf).abs();
    }
    Ok(total)
}

/// Shannon entropy (natural log) of the empirical distribution of discrete
/// answers. An empty list returns the maximum-uncertainty sentinel ln(K)
/// for a task with `class_count` classes.
pub fn class_entropy<T: Ord>(answers: &[T], class_count: usize) -> f64 {
    if answers.is_empty() {
        return (class_count.max(1) as f64).ln();
    }
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    let n = answers.len() as f64;
    -counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

/// AUROC via the Mann-Whitney formulation: the probability that a uniformly
/// random positive outranks a random negative, ties counted one half.
pub fn auroc(scores: &[f64], positives: &[u8]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: positives.len(),
        });
    }
    let n_pos = positives.iter().filter(|&&y| y == 1).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined(
            "needs at least one positive and one negative".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // Average ranks over tie groups.
    let n = order.len();
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positives[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let n_pos = n_pos as f64;
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg as f64))
}

/// Named metric values for one (task, method, tasking) cell, plus the
/// configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskId,
    pub method: String,
    pub tasking: String,
    pub sample_count: usize,
    pub values: BTreeMap<String, f64>,
    /// Metrics whose inputs were degenerate (e.g. single-class AUROC).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config_echo: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(task: TaskId, method: &str, tasking: &str, sample_count: usize) -> Self {
        MetricReport {
            task,
            method: method.to_string(),
            tasking: tasking.to_string(),
            sample_count,
            values: BTreeMap::new(),
            undefined: Vec::new(),
            config_echo: BTreeMap::new(),
        }
    }

    /// Records one metric value; non-finite values are a caller bug.
    pub fn insert(&mut self, name: &str, value: f64) {
        assert!(value.is_finite(), "metric {name} is not finite: {value}");
        self.values.insert(name.to_string(), value);
    }

    pub fn mark_undefined(&mut self, name: &str) {
        self.undefined.push(name.to_string());
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

/// One line of a predictions JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub record_id: String,
    pub task_id: TaskId,
    pub p: f64,
    pub y: u8,
}

/// Reads a predictions file: JSONL lines `{record_id, task_id, p, y}`.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        writeln!(file, "{}", serde_json::to_string(rec).expect("record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
