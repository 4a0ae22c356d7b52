//! Desk-scale synthetic data: cohorts with known ground truth, and mock
//! chat-completion responders with controllable correctness structure.
//!
//! Every generator output is a pure function of its config seed.

mod mock;
mod server;

pub use mock::{generate_mock_response, MockBehavior, MockClient, OracleEntry, PromptOracle};
pub use server::{MockServer, MockServerConfig};

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::blackbox::{default_tasks, TaskCategory, TaskSpec};
use crate::decoder::EmbeddingRecord;
use crate::ehr::{
    ConceptDictionary, ConceptEntry, EventDomain, MedicalEvent, PatientSequence, TaskId, TaskLabel,
};
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic ground-truth process for one task: labels are Bernoulli of
/// sigmoid(weights . z + intercept) over the patient's latent risk z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

/// Settings of the synthetic cohort generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub embedding_dim: usize,
    pub latent_dim: usize,
    pub event_vocab_size: usize,
    pub events_per_patient: (usize, usize),
    pub tasks: Vec<TaskSpec>,
    /// Per-task logistic coefficients over the latent risk vector.
    pub label_models: BTreeMap<TaskId, LabelModel>,
    /// Std of the Gaussian noise added to each embedding coordinate.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl CohortConfig {
    /// Default desk-scale config: the ten standard tasks with arbitrary
    /// but fixed coefficients giving roughly 10-30% positive rates.
    pub fn with_defaults(n_patients: usize, seed: u64) -> CohortConfig {
        let tasks = default_tasks();
        let latent_dim = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0ef);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut label_models = BTreeMap::new();
        for (i, task) in tasks.iter().enumerate() {
            let mut weights: Vec<f64> = (0..latent_dim).map(|_| normal.sample(&mut rng)).collect();
            let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
            for w in &mut weights {
                *w *= 1.2 / norm;
            }
            let intercept = -1.2 - 0.08 * i as f64;
            label_models.insert(task.id.clone(), LabelModel { weights, intercept });
        }
        CohortConfig {
            n_patients,
            embedding_dim: 768,
            latent_dim,
            event_vocab_size: 120,
            events_per_patient: (20, 60),
            tasks,
            label_models,
            embedding_noise: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be >= 1".into()));
        }
        if self.embedding_dim == 0 || self.latent_dim == 0 || self.event_vocab_size == 0 {
            return Err(Error::InvalidConfig(
                "embedding, latent, and vocabulary dimensions must be positive".into(),
            ));
        }
        let (lo, hi) = self.events_per_patient;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidConfig(
                "events_per_patient must be a nonempty positive range".into(),
            ));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("task list must be non-empty".into()));
        }
        for task in &self.tasks {
            task.validate()?;
            let model = self.label_models.get(&task.id).ok_or_else(|| {
                Error::InvalidConfig(format!("task {} has no label model", task.id))
            })?;
            if model.weights.len() != self.latent_dim {
                return Err(Error::InvalidConfig(format!(
                    "label model for {} has {} weights, latent_dim is {}",
                    task.id,
                    model.weights.len(),
                    self.latent_dim
                )));
            }
            if !model.intercept.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "label model for {} has non-finite coefficients",
                    task.id
                )));
            }
        }
        if self.label_models.len() != self.tasks.len() {
            return Err(Error::InvalidConfig(
                "label models present for tasks not in the task list".into(),
            ));
        }
        Ok(())
    }
}

/// A generated cohort: sequences for narrative rendering, embeddings for
/// decoders, and the concept dictionary covering the synthetic vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCohort {
    pub sequences: Vec<PatientSequence>,
    pub embeddings: Vec<EmbeddingRecord>,
    /// Dictionary rows in vocabulary order, ready for the TSV writer.
    pub dictionary_rows: Vec<(String, ConceptEntry)>,
}

impl GeneratedCohort {
    pub fn dictionary(&self) -> ConceptDictionary {
        ConceptDictionary::new(self.dictionary_rows.iter().cloned().collect())
    }
}

const CONDITION_NAMES: [&str; 10] = [
    "Essential hypertension",
    "Type 2 diabetes mellitus",
    "Atrial fibrillation",
    "Chronic kidney disease stage 3",
    "Community acquired pneumonia",
    "Congestive heart failure",
    "Iron deficiency anemia",
    "Chronic obstructive pulmonary disease",
    "Acute bronchitis",
    "Osteoarthritis of knee",
];

const DRUG_NAMES: [&str; 10] = [
    "Oxycodone hydrochloride 5 MG Oral Tablet",
    "Acetaminophen 10 MG/ML Injectable Solution",
    "Metformin hydrochloride 500 MG Oral Tablet",
    "Lisinopril 10 MG Oral Tablet",
    "Atorvastatin calcium 20 MG Oral Tablet",
    "Furosemide 40 MG Oral Tablet",
    "Amoxicillin 500 MG Oral Capsule",
    "Warfarin sodium 2 MG Oral Tablet",
    "Insulin glargine 100 UNT/ML Injectable Solution",
    "Albuterol 0.83 MG/ML Inhalation Solution",
];

const MEASUREMENT_NAMES: [&str; 8] = [
    "Systolic blood pressure",
    "Diastolic blood pressure",
    "Heart rate",
    "Body temperature",
    "Hemoglobin level",
    "Serum potassium",
    "Serum sodium",
    "Blood glucose",
];

const PROCEDURE_NAMES: [&str; 6] = [
    "Electrocardiogram",
    "Chest X-ray",
    "Computed tomography of head",
    "Transthoracic echocardiography",
    "Colonoscopy",
    "Central venous catheter placement",
];

/// Builds the synthetic vocabulary: code, human-readable name, domain.
fn build_vocabulary(size: usize) -> Vec<(String, String, EventDomain)> {
    let mut rows = Vec::with_capacity(size);
    for i in 0..size {
        let code = format!("SYN{i:05}");
        let (name, domain) = match i % 4 {
            0 => {
                let base = CONDITION_NAMES[(i / 4) % CONDITION_NAMES.len()];
                (variant_name(base, i / 4 / CONDITION_NAMES.len()), EventDomain::Condition)
            }
            1 => {
                let base = DRUG_NAMES[(i / 4) % DRUG_NAMES.len()];
                (variant_name(base, i / 4 / DRUG_NAMES.len()), EventDomain::Drug)
            }
            2 => {
                let base = MEASUREMENT_NAMES[(i / 4) % MEASUREMENT_NAMES.len()];
                (variant_name(base, i / 4 / MEASUREMENT_NAMES.len()), EventDomain::Measurement)
            }
            _ => {
                let base = PROCEDURE_NAMES[(i / 4) % PROCEDURE_NAMES.len()];
                (variant_name(base, i / 4 / PROCEDURE_NAMES.len()), EventDomain::Procedure)
            }
        };
        rows.push((code, name, domain));
    }
    rows
}

fn variant_name(base: &str, repeat: usize) -> String {
    if repeat == 0 {
        base.to_string()
    } else {
        format!("{base}, variant {}", repeat + 1)
    }
}

/// Generates a full cohort: latent risk, risk-conditioned event streams,
/// Bernoulli labels with per-category shared prediction times, and
/// embeddings from one fixed random projection plus noise.
pub fn generate_cohort(config: &CohortConfig) -> Result<GeneratedCohort> {
    config.validate()?;
    let vocab = build_vocabulary(config.event_vocab_size);
    let dictionary_rows: Vec<(String, ConceptEntry)> = vocab
        .iter()
        .map(|(code, name, domain)| {
            (
                code.clone(),
                ConceptEntry {
                    name: name.clone(),
                    domain: *domain,
                },
            )
        })
        .collect();

    // Fixed projection shared by the whole cohort; independent of patients.
    let feat_dim = config.event_vocab_size + config.latent_dim + 1;
    let mut proj_rng = crate::decoder::derive_rng(config.seed, 11, 0);
    let proj_scale = 1.0 / (feat_dim as f64).sqrt();
    let projection: Vec<f64> = (0..config.embedding_dim * feat_dim)
        .map(|_| proj_rng.random_range(-1.0..1.0) * proj_scale * 1.732)
        .collect();

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let noise_dist = Normal::new(0.0, config.embedding_noise.max(0.0)).expect("noise std");
    let base_date = NaiveDate::from_ymd_opt(2013, 1, 1).expect("valid date");

    let categories: Vec<(TaskCategory, Vec<&TaskSpec>)> = TaskCategory::ALL
        .iter()
        .map(|&c| (c, config.tasks.iter().filter(|t| t.category == c).collect()))
        .collect();

    let mut sequences = Vec::with_capacity(config.n_patients);
    let mut embeddings = Vec::with_capacity(config.n_patients);
    for patient_idx in 0..config.n_patients {
        let mut rng = crate::decoder::derive_rng(config.seed, 10, patient_idx as u64);
        let patient_id = format!("p{patient_idx:05}");

        let z: Vec<f64> = (0..config.latent_dim).map(|_| normal.sample(&mut rng)).collect();
        // Event mix shifts toward the upper half of the vocabulary with risk.
        let high_risk_p = sigmoid(z[0]);

        let mut demographics = BTreeMap::new();
        let birth_year = rng.random_range(1940..2000);
        let birth_month = rng.random_range(1..=12u32);
        let birth_day = rng.random_range(1..=28u32);
        demographics.insert(
            "birth_date".to_string(),
            format!("{birth_year:04}-{birth_month:02}-{birth_day:02}"),
        );
        demographics.insert(
            "sex".to_string(),
            if rng.random::<bool>() { "female" } else { "male" }.to_string(),
        );
        demographics.insert(
            "ethnicity".to_string(),
            ["not hispanic or latino", "hispanic or latino", "unknown"]
                [rng.random_range(0..3usize)]
            .to_string(),
        );

        let (lo, hi) = config.events_per_patient;
        let n_events = rng.random_range(lo..=hi);
        let admission_offset = rng.random_range(0..365i64);
        let mut t = Utc
            .from_utc_datetime(
                &(base_date + Duration::days(admission_offset))
                    .and_hms_opt(rng.random_range(6..12), rng.random_range(0..60), 0)
                    .expect("valid time"),
            );
        let mut events = Vec::with_capacity(n_events);
        let mut hist = vec![0.0f64; config.event_vocab_size];
        for _ in 0..n_events {
            let half = config.event_vocab_size / 2;
            let vocab_idx = if rng.random::<f64>() < high_risk_p {
                rng.random_range(half..config.event_vocab_size)
            } else {
                rng.random_range(0..half)
            };
            let (code, _, domain) = &vocab[vocab_idx];
            hist[vocab_idx] += 1.0;
            let value = if *domain == EventDomain::Measurement {
                Some((80.0 + 40.0 * rng.random::<f64>() + 10.0 * z[0]).round())
            } else {
                None
            };
            events.push(MedicalEvent {
                code: code.clone(),
                timestamp: t,
                domain: *domain,
                value,
                unit: None,
            });
            t += Duration::minutes(rng.random_range(30..2880));
        }

        let first_day = events[0].timestamp.date_naive();
        let last = events[events.len() - 1].timestamp;
        let lab_anchor = events[events.len() / 2 + events.len() / 4].timestamp;
        let mut labels = BTreeMap::new();
        for (category, tasks) in &categories {
            if tasks.is_empty() {
                continue;
            }
            // All tasks of one category share one prediction time.
            let prediction_time = match category {
                TaskCategory::Operational => Utc.from_utc_datetime(
                    &first_day.and_hms_opt(23, 59, 0).expect("valid time"),
                ),
                TaskCategory::Lab => lab_anchor - Duration::minutes(1),
                TaskCategory::Diagnosis => Utc.from_utc_datetime(
                    &last.date_naive().and_hms_opt(23, 59, 0).expect("valid time"),
                ) - Duration::minutes(1),
            };
            for task in tasks {
                let model = &config.label_models[&task.id];
                let logit: f64 = model
                    .weights
                    .iter()
                    .zip(&z)
                    .map(|(w, zi)| w * zi)
                    .sum::<f64>()
                    + model.intercept;
                let label = u8::from(rng.random::<f64>() < sigmoid(logit));
                labels.insert(
                    task.id.clone(),
                    TaskLabel {
                        prediction_time,
                        label,
                    },
                );
            }
        }

        let seq = PatientSequence {
            patient_id: patient_id.clone(),
            demographics,
            events,
            labels: labels.clone(),
        };
        seq.validate()?;

        // feat = [normalized histogram; z; 1], embedding = P feat + noise.
        let inv_n = 1.0 / n_events as f64;
        let mut feat = Vec::with_capacity(feat_dim);
        feat.extend(hist.iter().map(|h| h * inv_n));
        feat.extend(z.iter().copied());
        feat.push(1.0);
        let mut embedding = Vec::with_capacity(config.embedding_dim);
        for row in 0..config.embedding_dim {
            let row_slice = &projection[row * feat_dim..(row + 1) * feat_dim];
            let mut acc = 0.0;
            for (p, f) in row_slice.iter().zip(&feat) {
                acc += p * f;
            }
            embedding.push(acc + noise_dist.sample(&mut rng));
        }

        embeddings.push(EmbeddingRecord {
            record_id: patient_id,
            embedding,
            labels: labels
                .iter()
                .map(|(task, l)| (task.clone(), l.label))
                .collect(),
        });
        sequences.push(seq);
    }

    Ok(GeneratedCohort {
        sequences,
        embeddings,
        dictionary_rows,
    })
}

/// Draws `n`-record subsets until every listed task has at least `min_pos`
/// positives, trying at most `max_draws` times. Returns indices into
/// `labels`.
pub fn sample_test_set(
    labels: &[BTreeMap<TaskId, u8>],
    tasks: &[TaskId],
    n: usize,
    min_pos: usize,
    max_draws: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n == 0 || n > labels.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot sample {n} of {} records",
            labels.len()
        )));
    }
    // A task without min_pos positives in the whole pool can never satisfy
    // the constraint; fail fast with the same error as draw exhaustion.
    for task in tasks {
        let total: usize = labels
            .iter()
            .map(|l| usize::from(l.get(task).copied().unwrap_or(0)))
            .sum();
        if total < min_pos {
            return Err(Error::SamplingInfeasible { draws: 0 });
        }
    }

    let mut rng = crate::decoder::derive_rng(seed, 12, 0);
    let mut indices: Vec<usize> = (0..labels.len()).collect();
    for draw in 1..=max_draws {
        // Partial Fisher-Yates: the first n entries become the candidate.
        for i in 0..n {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        let candidate = &indices[..n];
        let ok = tasks.iter().all(|task| {
            candidate
                .iter()
                .filter(|&&idx| labels[idx].get(task).copied().unwrap_or(0) == 1)
                .count()
                >= min_pos
        });
        if ok {
            let mut chosen = candidate.to_vec();
            chosen.sort_unstable();
            return Ok(chosen);
        }
        let _ = draw;
    }
    Err(Error::SamplingInfeasible { draws: max_draws })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(n: usize, seed: u64) -> CohortConfig {
        let mut config = CohortConfig::with_defaults(n, seed);
        config.embedding_dim = 24;
        config.event_vocab_size = 40;
        config.events_per_patient = (4, 9);
        config
    }

    #[test]
    fn generation_is_deterministic() {
        let config = small_config(30, 5);
        let a = generate_cohort(&config).unwrap();
        let b = generate_cohort(&config).unwrap();
        assert_eq!(a, b);
        let c = generate_cohort(&small_config(30, 6)).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn sequences_validate_and_share_category_prediction_times() {
        let cohort = generate_cohort(&small_config(20, 1)).unwrap();
        for seq in &cohort.sequences {
            seq.validate().unwrap();
            let ops =
                ["long_length_of_stay", "icu_transfer"].map(|t| seq.labels[&TaskId::new(t)].prediction_time);
            assert_eq!(ops[0], ops[1]);
            let labs = ["thrombocytopenia", "hyperkalemia", "hypoglycemia"]
                .map(|t| seq.labels[&TaskId::new(t)].prediction_time);
            assert!(labs.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn saturated_negative_intercept_gives_all_zeros() {
        let mut config = small_config(50, 2);
        for model in config.label_models.values_mut() {
            model.intercept = -20.0;
        }
        let cohort = generate_cohort(&config).unwrap();
        for rec in &cohort.embeddings {
            assert!(rec.labels.values().all(|&y| y == 0));
        }
    }

    #[test]
    fn empirical_rate_matches_monte_carlo_oracle() {
        // 10,000 patients against a 1e6-sample Monte-Carlo estimate of
        // E[sigmoid(w.z + b)] for one task.
        let mut config = small_config(10_000, 3);
        config.embedding_dim = 4;
        config.events_per_patient = (2, 3);
        let task = TaskId::new("icu_transfer");
        let model = config.label_models[&task].clone();

        let mut rng = ChaCha8Rng::seed_from_u64(777);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut mc = 0.0;
        let samples = 1_000_000;
        for _ in 0..samples {
            let logit: f64 = model
                .weights
                .iter()
                .map(|w| w * normal.sample(&mut rng))
                .sum::<f64>()
                + model.intercept;
            mc += sigmoid(logit);
        }
        mc /= samples as f64;

        let cohort = generate_cohort(&config).unwrap();
        let rate = cohort
            .embeddings
            .iter()
            .map(|r| f64::from(r.labels[&task]))
            .sum::<f64>()
            / cohort.embeddings.len() as f64;
        assert!(
            (rate - mc).abs() < 0.02,
            "empirical {rate:.4} vs Monte Carlo {mc:.4}"
        );
        // The default coefficients target clinically plausible prevalence.
        assert!((0.05..=0.35).contains(&rate), "rate {rate}");
    }

    #[test]
    fn embeddings_have_declared_dimension() {
        let cohort = generate_cohort(&small_config(5, 4)).unwrap();
        assert!(cohort.embeddings.iter().all(|r| r.embedding.len() == 24));
        assert!(cohort
            .embeddings
            .iter()
            .all(|r| r.embedding.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut config = small_config(0, 1);
        assert!(generate_cohort(&config).is_err());
        config.n_patients = 5;
        config.label_models.remove(&TaskId::new("anemia"));
        assert!(matches!(
            generate_cohort(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn test_set_sampling_meets_positive_floor() {
        let cohort = generate_cohort(&small_config(400, 7)).unwrap();
        let labels: Vec<_> = cohort.embeddings.iter().map(|r| r.labels.clone()).collect();
        let tasks: Vec<TaskId> = ["long_length_of_stay", "icu_transfer"]
            .iter()
            .map(|&t| TaskId::new(t))
            .collect();
        let subset = sample_test_set(&labels, &tasks, 100, 12, 10_000, 9).unwrap();
        assert_eq!(subset.len(), 100);
        for task in &tasks {
            let pos = subset
                .iter()
                .filter(|&&i| labels[i][task] == 1)
                .count();
            assert!(pos >= 12, "{task}: {pos} positives");
        }
        // Determinism.
        assert_eq!(
            subset,
            sample_test_set(&labels, &tasks, 100, 12, 10_000, 9).unwrap()
        );
    }

    #[test]
    fn all_positive_pool_accepts_first_draw() {
        let labels: Vec<BTreeMap<TaskId, u8>> = (0..120)
            .map(|_| BTreeMap::from([(TaskId::new("t"), 1u8)]))
            .collect();
        let subset =
            sample_test_set(&labels, &[TaskId::new("t")], 100, 12, 10_000, 1).unwrap();
        assert_eq!(subset.len(), 100);
    }

    #[test]
    fn infeasible_pool_is_an_error() {
        let mut labels: Vec<BTreeMap<TaskId, u8>> = (0..120)
            .map(|_| BTreeMap::from([(TaskId::new("t"), 0u8)]))
            .collect();
        for row in labels.iter_mut().take(5) {
            row.insert(TaskId::new("t"), 1);
        }
        assert!(matches!(
            sample_test_set(&labels, &[TaskId::new("t")], 100, 12, 10_000, 1),
            Err(Error::SamplingInfeasible { .. })
        ));
    }

    #[test]
    fn dictionary_covers_every_generated_code() {
        let cohort = generate_cohort(&small_config(10, 8)).unwrap();
        let dict = cohort.dictionary();
        for seq in &cohort.sequences {
            for event in &seq.events {
                assert!(dict.lookup(&event.code).is_some(), "missing {}", event.code);
            }
        }
    }
}
