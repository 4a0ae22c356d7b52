//! Deterministic mock chat-completion responder with a controllable
//! correctness/confidence coupling.
//!
//! The mock answers Yes with probability sigmoid(accuracy_signal * s /
//! noise_temperature), where s is +1 when the true label is 1 and -1
//! otherwise. accuracy_signal 0 makes answers uninformative coin flips;
//! large values make majority votes track the truth almost surely. Answers
//! are a pure function of (behavior seed, prompt fingerprint, request
//! seed), so the in-process client and the HTTP mock server agree.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::blackbox::{fingerprint_text, ModelClient, Prompt, PromptMode, SamplingParams};
use crate::ehr::TaskId;
use crate::error::{Error, Result};

/// Answer-process parameters of one mock model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBehavior {
    /// Strength of the truth signal, >= 0. Zero is the null responder.
    pub accuracy_signal: f64,
    /// Softmax temperature dividing the signal; must be positive.
    pub noise_temperature: f64,
    /// Probability of emitting unparseable filler instead of an answer.
    pub invalid_rate: f64,
    pub seed: u64,
}

impl MockBehavior {
    /// Strongly truth-tracking responder.
    pub fn calibrated(seed: u64) -> MockBehavior {
        MockBehavior {
            accuracy_signal: 1.1,
            noise_temperature: 1.0,
            invalid_rate: 0.03,
            seed,
        }
    }

    /// Uninformative responder: 50/50 regardless of truth.
    pub fn null(seed: u64) -> MockBehavior {
        MockBehavior {
            accuracy_signal: 0.0,
            noise_temperature: 1.0,
            invalid_rate: 0.03,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.accuracy_signal < 0.0 || !self.accuracy_signal.is_finite() {
            return Err(Error::InvalidConfig(
                "accuracy_signal must be finite and >= 0".into(),
            ));
        }
        if self.noise_temperature <= 0.0 {
            return Err(Error::InvalidConfig("noise_temperature must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.invalid_rate) {
            return Err(Error::InvalidProbability(self.invalid_rate));
        }
        Ok(())
    }
}

/// What the oracle knows about one prompt: its mode and the true label of
/// every task it asks about, recorded at prompt-build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub mode: PromptMode,
    /// (task, true label) in prompt task order.
    pub truth: Vec<(TaskId, u8)>,
}

/// Fingerprint-keyed ground truth shared by mock responders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptOracle {
    entries: BTreeMap<String, OracleEntry>,
}

impl PromptOracle {
    pub fn new() -> PromptOracle {
        PromptOracle::default()
    }

    /// Registers a prompt and the true labels of its tasks.
    pub fn record(&mut self, prompt: &Prompt, truth: &BTreeMap<TaskId, u8>) -> Result<()> {
        let mut ordered = Vec::with_capacity(prompt.tasks.len());
        for task in &prompt.tasks {
            let Some(&label) = truth.get(&task.id) else {
                return Err(Error::MissingLabel {
                    record: prompt.fingerprint(),
                    task: task.id.to_string(),
                });
            };
            ordered.push((task.id.clone(), label));
        }
        self.entries.insert(
            prompt.fingerprint(),
            OracleEntry {
                mode: prompt.mode,
                truth: ordered,
            },
        );
        Ok(())
    }

    pub fn get(&self, fingerprint: &str) -> Option<&OracleEntry> {
        self.entries.get(fingerprint)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const FILLER: &str =
    "The available records are inconclusive; further observation of the patient is required.";

/// Mixes the behavior seed, prompt fingerprint, and per-request seed into
/// one ChaCha8 stream.
fn response_rng(behavior_seed: u64, fingerprint: &str, request_seed: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&behavior_seed.to_le_bytes());
    key[8..16].copy_from_slice(&request_seed.to_le_bytes());
    let fp = fingerprint.as_bytes();
    let take = fp.len().min(16);
    key[16..16 + take].copy_from_slice(&fp[..take]);
    ChaCha8Rng::from_seed(key)
}

/// Produces the mock's completion text for one request. Shared verbatim by
/// the in-process client and the HTTP server so both transports return the
/// same bytes for the same logical request.
pub fn generate_mock_response(
    behavior: &MockBehavior,
    entry: &OracleEntry,
    fingerprint: &str,
    request_seed: u64,
) -> String {
    let mut rng = response_rng(behavior.seed, fingerprint, request_seed);
    if rng.random::<f64>() < behavior.invalid_rate {
        return FILLER.to_string();
    }
    let answer = |truth: u8, rng: &mut ChaCha8Rng| -> &'static str {
        let s = if truth == 1 { 1.0 } else { -1.0 };
        let p_yes = sigmoid(behavior.accuracy_signal * s / behavior.noise_temperature);
        if rng.random::<f64>() < p_yes {
            "Yes"
        } else {
            "No"
        }
    };
    match entry.mode {
        PromptMode::Single => {
            let (_, truth) = entry.truth[0];
            match answer(truth, &mut rng) {
                "Yes" => "Yes, based on the recorded events this outcome is expected.".to_string(),
                _ => "No.".to_string(),
            }
        }
        PromptMode::Multi => {
            let mut lines = Vec::with_capacity(entry.truth.len());
            for (task, truth) in &entry.truth {
                lines.push(format!("{task}: {}", answer(*truth, &mut rng)));
            }
            lines.join("\n")
        }
    }
}

/// In-process [`ModelClient`] backed by the oracle; no transport involved.
pub struct MockClient {
    name: String,
    behavior: MockBehavior,
    oracle: Arc<PromptOracle>,
}

impl MockClient {
    pub fn new(name: &str, behavior: MockBehavior, oracle: Arc<PromptOracle>) -> Result<MockClient> {
        behavior.validate()?;
        Ok(MockClient {
            name: name.to_string(),
            behavior,
            oracle,
        })
    }
}

impl ModelClient for MockClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt_text: &str, params: &SamplingParams, slot: usize) -> Result<String> {
        let fingerprint = fingerprint_text(prompt_text);
        let entry = self
            .oracle
            .get(&fingerprint)
            .ok_or_else(|| Error::UnknownFingerprint(fingerprint.clone()))?;
        Ok(generate_mock_response(
            &self.behavior,
            entry,
            &fingerprint,
            params.slot_seed(slot),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::{
        build_prompt, default_tasks, parse_answer, sample_responses, Answer, TaskCategory,
    };
    use crate::ehr::ClinicalNarrative;

    fn narrative(marker: &str) -> ClinicalNarrative {
        ClinicalNarrative {
            text: format!("Patient age and demographic information:\n{marker}"),
            token_estimate: 10,
            included_events: 0,
            truncated: false,
            unknown_codes: 0,
        }
    }

    fn single_prompt(marker: &str) -> Prompt {
        let task = default_tasks().remove(1);
        build_prompt(&narrative(marker), &[task], PromptMode::Single).unwrap()
    }

    fn oracle_for(prompt: &Prompt, labels: &[u8]) -> Arc<PromptOracle> {
        let mut oracle = PromptOracle::new();
        let truth: BTreeMap<TaskId, u8> = prompt
            .tasks
            .iter()
            .zip(labels)
            .map(|(t, &y)| (t.id.clone(), y))
            .collect();
        oracle.record(prompt, &truth).unwrap();
        Arc::new(oracle)
    }

    #[test]
    fn identical_requests_get_identical_text() {
        let prompt = single_prompt("m1");
        let oracle = oracle_for(&prompt, &[1]);
        let client = MockClient::new("mock", MockBehavior::calibrated(3), oracle).unwrap();
        let params = SamplingParams::default();
        let text = prompt.full_text();
        assert_eq!(
            client.generate(&text, &params, 2).unwrap(),
            client.generate(&text, &params, 2).unwrap()
        );
        // Different slots draw independently.
        let all: Vec<String> = (0..8)
            .map(|slot| client.generate(&text, &params, slot).unwrap())
            .collect();
        assert!(all.iter().any(|t| t != &all[0]) || all.len() < 2);
    }

    #[test]
    fn unknown_fingerprint_is_an_error() {
        let prompt = single_prompt("m2");
        let oracle = Arc::new(PromptOracle::new());
        let client = MockClient::new("mock", MockBehavior::calibrated(3), oracle).unwrap();
        assert!(matches!(
            client.generate(&prompt.full_text(), &SamplingParams::default(), 0),
            Err(Error::UnknownFingerprint(_))
        ));
    }

    #[test]
    fn null_signal_is_a_fair_coin() {
        let prompt = single_prompt("m3");
        let oracle = oracle_for(&prompt, &[1]);
        let mut behavior = MockBehavior::null(5);
        behavior.invalid_rate = 0.0;
        let client = MockClient::new("mock-null", behavior, oracle).unwrap();
        let text = prompt.full_text();
        let task = prompt.tasks.clone();
        let mut yes = 0usize;
        let n = 400;
        for slot in 0..n {
            let raw = client
                .generate(&text, &SamplingParams::default(), slot)
                .unwrap();
            if parse_answer(&raw, &task, PromptMode::Single)[&task[0].id] == Answer::Yes {
                yes += 1;
            }
        }
        let rate = yes as f64 / n as f64;
        assert!((0.4..=0.6).contains(&rate), "yes rate {rate}");
    }

    #[test]
    fn strong_signal_majority_tracks_truth() {
        // accuracy_signal >= 5: majority vote at n=5 is right on well over
        // 95% of 200 records.
        let tasks = default_tasks();
        let behavior = MockBehavior {
            accuracy_signal: 5.0,
            noise_temperature: 1.0,
            invalid_rate: 0.0,
            seed: 11,
        };
        let mut correct = 0usize;
        let total = 200usize;
        let mut oracle = PromptOracle::new();
        let mut prompts = Vec::new();
        for i in 0..total {
            let prompt = build_prompt(
                &narrative(&format!("record {i}")),
                std::slice::from_ref(&tasks[i % tasks.len()]),
                PromptMode::Single,
            )
            .unwrap();
            let truth = u8::from(i % 3 == 0);
            oracle
                .record(
                    &prompt,
                    &BTreeMap::from([(prompt.tasks[0].id.clone(), truth)]),
                )
                .unwrap();
            prompts.push((prompt, truth));
        }
        let client = MockClient::new("mock-strong", behavior, Arc::new(oracle)).unwrap();
        for (i, (prompt, truth)) in prompts.iter().enumerate() {
            let params = SamplingParams {
                temperature: 1.0,
                seed: i as u64,
            };
            let rs = sample_responses(&client, prompt, 5, &params).unwrap();
            let majority = crate::blackbox::score_uncertainty(&rs)[&prompt.tasks[0].id].majority;
            if majority.as_label() == Some(*truth) {
                correct += 1;
            }
        }
        let acc = correct as f64 / total as f64;
        assert!(acc > 0.95, "majority accuracy {acc}");
    }

    #[test]
    fn invalid_rate_one_parses_nothing() {
        let prompt = single_prompt("m4");
        let oracle = oracle_for(&prompt, &[0]);
        let behavior = MockBehavior {
            accuracy_signal: 1.0,
            noise_temperature: 1.0,
            invalid_rate: 1.0,
            seed: 2,
        };
        let client = MockClient::new("mock-invalid", behavior, oracle).unwrap();
        let rs = sample_responses(&client, &prompt, 5, &SamplingParams::default()).unwrap();
        let scored = &crate::blackbox::score_uncertainty(&rs)[&prompt.tasks[0].id];
        assert_eq!(scored.valid_count, 0);
        assert!((scored.entropy - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn multi_mode_answers_every_task_line() {
        let tasks: Vec<_> = default_tasks()
            .into_iter()
            .filter(|t| t.category == TaskCategory::Lab)
            .collect();
        let prompt = build_prompt(&narrative("m5"), &tasks, PromptMode::Multi).unwrap();
        let truth: BTreeMap<TaskId, u8> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), u8::from(i % 2 == 0)))
            .collect();
        let mut oracle = PromptOracle::new();
        oracle.record(&prompt, &truth).unwrap();
        let mut behavior = MockBehavior::calibrated(7);
        behavior.invalid_rate = 0.0;
        let client = MockClient::new("mock-multi", behavior, Arc::new(oracle)).unwrap();
        let raw = client
            .generate(&prompt.full_text(), &SamplingParams::default(), 0)
            .unwrap();
        let parsed = parse_answer(&raw, &tasks, PromptMode::Multi);
        assert!(parsed.values().all(|a| a.is_valid()), "raw: {raw}\n{parsed:?}");
    }

    #[test]
    fn filler_text_never_parses_as_answer() {
        let task = default_tasks().remove(0);
        let parsed = parse_answer(FILLER, &[task.clone()], PromptMode::Single);
        assert_eq!(parsed[&task.id], Answer::Invalid);
    }
}
