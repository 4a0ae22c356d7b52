//! Response collection, answer parsing, and entropy-based scoring.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ehr::TaskId;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricReport};

use super::client::{ModelClient, SamplingParams};
use super::{Prompt, PromptMode, TaskSpec};

/// Parsed label of one generation for one task. `Invalid` is the failure
/// value for unparseable, ambiguous, or missing answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
    Invalid,
}

impl Answer {
    pub fn is_valid(&self) -> bool {
        !matches!(self, Answer::Invalid)
    }

    /// Positive-class indicator; `Invalid` has none.
    pub fn as_label(&self) -> Option<u8> {
        match self {
            Answer::Yes => Some(1),
            Answer::No => Some(0),
            Answer::Invalid => None,
        }
    }
}

impl std::fmt::Display for Answer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Answer::Yes => "Yes",
            Answer::No => "No",
            Answer::Invalid => "Invalid",
        })
    }
}

/// One raw model generation with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub model: String,
    pub slot: usize,
    pub temperature: f64,
    /// Empty when the slot failed after all retries.
    pub text: String,
    pub failed: bool,
}

/// The n generations for one prompt plus their per-task parsed answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    /// Fingerprint of the prompt that produced every generation here.
    pub fingerprint: String,
    pub mode: PromptMode,
    pub task_ids: Vec<TaskId>,
    pub raw: Vec<RawGeneration>,
    /// Per task, one answer per generation, in `raw` order.
    pub parsed: BTreeMap<TaskId, Vec<Answer>>,
    pub n: usize,
    /// Slots that failed transport after retries (parsed as Invalid).
    pub error_tally: usize,
}

impl ResponseSet {
    /// Rebuilds the parsed map from raw texts; the single source of truth
    /// for how text becomes labels.
    pub fn from_raw(
        fingerprint: String,
        mode: PromptMode,
        tasks: &[TaskSpec],
        raw: Vec<RawGeneration>,
    ) -> ResponseSet {
        let task_ids: Vec<TaskId> = tasks.iter().map(|t| t.id.clone()).collect();
        let mut parsed: BTreeMap<TaskId, Vec<Answer>> =
            task_ids.iter().map(|t| (t.clone(), Vec::new())).collect();
        for generation in &raw {
            let answers = if generation.failed {
                task_ids.iter().map(|t| (t.clone(), Answer::Invalid)).collect()
            } else {
                parse_answer(&generation.text, tasks, mode)
            };
            for task in &task_ids {
                parsed
                    .get_mut(task)
                    .expect("all tasks pre-seeded")
                    .push(answers[task]);
            }
        }
        let error_tally = raw.iter().filter(|g| g.failed).count();
        ResponseSet {
            fingerprint,
            mode,
            task_ids,
            n: raw.len(),
            raw,
            parsed,
            error_tally,
        }
    }

    pub fn valid_count(&self, task: &TaskId) -> usize {
        self.parsed
            .get(task)
            .map(|v| v.iter().filter(|a| a.is_valid()).count())
            .unwrap_or(0)
    }

    /// Frequency of Yes among valid answers; 0.5 when nothing parsed.
    pub fn yes_frequency(&self, task: &TaskId) -> f64 {
        let Some(answers) = self.parsed.get(task) else {
            return 0.5;
        };
        let valid = answers.iter().filter(|a| a.is_valid()).count();
        if valid == 0 {
            return 0.5;
        }
        let yes = answers.iter().filter(|a| **a == Answer::Yes).count();
        yes as f64 / valid as f64
    }
}

/// True when `token` starts at a word boundary in lowercase `text` at
/// `pos` and ends before a non-alphabetic character.
fn word_at(text: &str, pos: usize, token: &str) -> bool {
    if !text[pos..].starts_with(token) {
        return false;
    }
    let after = pos + token.len();
    text[after..]
        .chars()
        .next()
        .map(|c| !c.is_alphabetic())
        .unwrap_or(true)
}

/// Classifies one generation against a single yes/no question.
fn parse_single(raw: &str) -> Answer {
    let lower = raw.to_lowercase();
    // Leading answer after stripping whitespace and punctuation.
    let start = lower
        .find(|c: char| c.is_alphanumeric())
        .unwrap_or(lower.len());
    if word_at(&lower, start, "yes") {
        return Answer::Yes;
    }
    if word_at(&lower, start, "no") {
        return Answer::No;
    }
    // No leading answer: fall back to an exclusive whole-word scan.
    let mut has_yes = false;
    let mut has_no = false;
    let bytes = lower.as_bytes();
    let mut i = 0;
    while i < lower.len() {
        if !lower.is_char_boundary(i) || !bytes[i].is_ascii_alphabetic() {
            i += 1;
            continue;
        }
        let boundary_ok = i == 0 || !bytes[i - 1].is_ascii_alphabetic();
        if boundary_ok {
            if word_at(&lower, i, "yes") {
                has_yes = true;
            } else if word_at(&lower, i, "no") {
                has_no = true;
            }
        }
        i += 1;
    }
    match (has_yes, has_no) {
        (true, false) => Answer::Yes,
        (false, true) => Answer::No,
        _ => Answer::Invalid,
    }
}

/// Parses one generation into per-task answers.
///
/// Single mode looks for a leading "yes"/"no" (case-insensitive, after
/// stripping whitespace and punctuation), then falls back to an exclusive
/// whole-word scan; both or neither present is Invalid. Multi mode scans
/// lines for `task_id: answer` and takes the first line per task; tasks
/// without a line are Invalid.
pub fn parse_answer(
    raw: &str,
    tasks: &[TaskSpec],
    mode: PromptMode,
) -> BTreeMap<TaskId, Answer> {
    match mode {
        PromptMode::Single => tasks
            .iter()
            .map(|t| (t.id.clone(), parse_single(raw)))
            .collect(),
        PromptMode::Multi => {
            let mut out: BTreeMap<TaskId, Answer> = tasks
                .iter()
                .map(|t| (t.id.clone(), Answer::Invalid))
                .collect();
            let mut seen: BTreeMap<&TaskId, bool> = BTreeMap::new();
            for line in raw.lines() {
                let Some((head, tail)) = line.split_once(':') else {
                    continue;
                };
                let head = head.trim().to_lowercase();
                for task in tasks {
                    if head == task.id.as_str().to_lowercase()
                        && !seen.get(&task.id).copied().unwrap_or(false)
                    {
                        seen.insert(&task.id, true);
                        out.insert(task.id.clone(), parse_single(tail));
                    }
                }
            }
            out
        }
    }
}

/// Collects `n` generations for `prompt`, at most `client.max_in_flight()`
/// concurrently. A slot whose transport fails after the client's retries
/// becomes an Invalid placeholder; only all slots failing is an error.
pub fn sample_responses(
    client: &dyn ModelClient,
    prompt: &Prompt,
    n: usize,
    params: &SamplingParams,
) -> Result<ResponseSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("response count n must be >= 1".into()));
    }
    let text = prompt.full_text();
    let bound = client.max_in_flight().max(1);
    let mut outcomes: Vec<Option<std::result::Result<String, Error>>> = Vec::new();
    outcomes.resize_with(n, || None);

    for chunk_start in (0..n).step_by(bound) {
        let chunk_end = (chunk_start + bound).min(n);
        let mut results: Vec<(usize, std::result::Result<String, Error>)> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = (chunk_start..chunk_end)
                    .map(|slot| {
                        let text = &text;
                        scope.spawn(move || (slot, client.generate(text, params, slot)))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("no panic")).collect()
            });
        for (slot, result) in results.drain(..) {
            outcomes[slot] = Some(result);
        }
    }

    let mut raw = Vec::with_capacity(n);
    let mut last_error = String::new();
    let mut failures = 0usize;
    for (slot, outcome) in outcomes.into_iter().enumerate() {
        match outcome.expect("every slot ran") {
            Ok(text) => raw.push(RawGeneration {
                model: client.name().to_string(),
                slot,
                temperature: params.temperature,
                text,
                failed: false,
            }),
            Err(err) => {
                failures += 1;
                last_error = err.to_string();
                raw.push(RawGeneration {
                    model: client.name().to_string(),
                    slot,
                    temperature: params.temperature,
                    text: String::new(),
                    failed: true,
                });
            }
        }
    }
    if failures == n {
        return Err(Error::AllSlotsFailed {
            slots: n,
            last: last_error,
        });
    }
    Ok(ResponseSet::from_raw(
        prompt.fingerprint(),
        prompt.mode,
        &prompt.tasks,
        raw,
    ))
}

/// Concatenates response sets for the same prompt (cross-model ensembling).
/// Model provenance stays on each raw entry.
pub fn ensemble_response_sets(sets: &[ResponseSet]) -> Result<ResponseSet> {
    let Some(first) = sets.first() else {
        return Err(Error::EmptyEnsemble);
    };
    if sets.iter().any(|s| s.fingerprint != first.fingerprint) {
        return Err(Error::FingerprintMismatch);
    }
    if sets
        .iter()
        .any(|s| s.task_ids != first.task_ids || s.mode != first.mode)
    {
        return Err(Error::SchemaMismatch(
            "response sets for one prompt must share task list and mode".into(),
        ));
    }
    let mut raw = Vec::with_capacity(sets.iter().map(|s| s.n).sum());
    let mut parsed: BTreeMap<TaskId, Vec<Answer>> = first
        .task_ids
        .iter()
        .map(|t| (t.clone(), Vec::new()))
        .collect();
    for set in sets {
        raw.extend(set.raw.iter().cloned());
        for task in &first.task_ids {
            parsed
                .get_mut(task)
                .expect("task pre-seeded")
                .extend(set.parsed[task].iter().copied());
        }
    }
    Ok(ResponseSet {
        fingerprint: first.fingerprint.clone(),
        mode: first.mode,
        task_ids: first.task_ids.clone(),
        n: raw.len(),
        raw,
        parsed,
        error_tally: sets.iter().map(|s| s.error_tally).sum(),
    })
}

/// Per-task uncertainty summary of one response set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskUncertainty {
    /// Entropy of the valid-answer distribution; ln 2 when nothing parsed.
    pub entropy: f64,
    /// Modal valid answer; ties and empty sets resolve to No with the flag.
    pub majority: Answer,
    pub valid_count: usize,
    pub tie: bool,
}

/// Scores every task of a response set: answer entropy, majority vote, and
/// valid count. Invalid answers are excluded from the distribution.
pub fn score_uncertainty(rs: &ResponseSet) -> BTreeMap<TaskId, TaskUncertainty> {
    rs.task_ids
        .iter()
        .map(|task| {
            let answers = &rs.parsed[task];
            let valid: Vec<Answer> = answers.iter().filter(|a| a.is_valid()).copied().collect();
            let yes = valid.iter().filter(|a| **a == Answer::Yes).count();
            let no = valid.len() - yes;
            let (majority, tie) = match yes.cmp(&no) {
                std::cmp::Ordering::Greater => (Answer::Yes, false),
                std::cmp::Ordering::Less => (Answer::No, false),
                std::cmp::Ordering::Equal => (Answer::No, true),
            };
            let summary = TaskUncertainty {
                entropy: metrics::class_entropy(&valid, 2),
                majority,
                valid_count: valid.len(),
                tie,
            };
            (task.clone(), summary)
        })
        .collect()
}

/// One evaluation record: a (possibly ensembled) response set plus the
/// ground-truth labels of its tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub record_id: String,
    pub response: ResponseSet,
    pub truth: BTreeMap<TaskId, u8>,
}

/// Per-task evaluation of a batch of scored records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxOutcome {
    pub report: MetricReport,
    /// Mean answer entropy over records, for directional comparisons.
    pub mean_entropy: f64,
}

/// Evaluates one response-set batch: per task, the label AUROC of the
/// yes-frequency score and the uncertainty-quality AUROC of -entropy
/// against majority-vote correctness. Degenerate compositions mark the
/// metric undefined instead of failing.
pub fn evaluate_blackbox(
    records: &[ScoredRecord],
    method: &str,
    tasking: &str,
) -> Result<BTreeMap<TaskId, BlackboxOutcome>> {
    if records.is_empty() {
        return Err(Error::EmptyData);
    }
    let task_ids = records[0].response.task_ids.clone();
    let mut out = BTreeMap::new();
    for task in &task_ids {
        let mut freq_scores = Vec::new();
        let mut labels = Vec::new();
        let mut uq_scores = Vec::new();
        let mut correct = Vec::new();
        let mut entropy_sum = 0.0;
        let mut counted = 0usize;
        for rec in records {
            let Some(&truth) = rec.truth.get(task) else {
                return Err(Error::MissingLabel {
                    record: rec.record_id.clone(),
                    task: task.to_string(),
                });
            };
            let summary = &score_uncertainty(&rec.response)[task];
            freq_scores.push(rec.response.yes_frequency(task));
            labels.push(truth);
            uq_scores.push(-summary.entropy);
            correct.push(u8::from(summary.majority.as_label() == Some(truth)));
            entropy_sum += summary.entropy;
            counted += 1;
        }
        let mut report = MetricReport::new(task.clone(), method, tasking, counted);
        match metrics::auroc(&freq_scores, &labels) {
            Ok(v) => report.insert("auroc", v),
            Err(Error::AurocUndefined(_)) => report.mark_undefined("auroc"),
            Err(e) => return Err(e),
        }
        match metrics::auroc(&uq_scores, &correct) {
            Ok(v) => report.insert("uq_auroc", v),
            Err(Error::AurocUndefined(_)) => report.mark_undefined("uq_auroc"),
            Err(e) => return Err(e),
        }
        out.insert(
            task.clone(),
            BlackboxOutcome {
                report,
                mean_entropy: entropy_sum / counted as f64,
            },
        );
    }
    Ok(out)
}
