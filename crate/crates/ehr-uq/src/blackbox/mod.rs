//! Post-hoc uncertainty for chat-completion classifiers.
//!
//! The pipeline has five steps: render a clinical narrative, assemble a
//! four-block prompt, sample n generations from a pluggable client, parse
//! the constrained answers, and score per-task uncertainty as the entropy
//! of the answer distribution. Response sets from different models combine
//! by concatenation, which is the whole cross-model ensembling story.

mod archive;
mod client;
mod response;

pub use archive::{read_archive, write_archive, ArchivedResponse};
pub use client::{AuditEntry, AuditKind, AuditLog, HttpChatClient, HttpClientConfig, ModelClient, SamplingParams};
pub use response::{
    ensemble_response_sets, evaluate_blackbox, parse_answer, sample_responses, score_uncertainty,
    Answer, BlackboxOutcome, RawGeneration, ResponseSet, ScoredRecord, TaskUncertainty,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ehr::{ClinicalNarrative, TaskId};
use crate::error::{Error, Result};

/// Clinical category a prediction task belongs to. Multi-task prompts and
/// multi-task decoders only ever group tasks of one category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    Operational,
    Lab,
    Diagnosis,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] = [
        TaskCategory::Operational,
        TaskCategory::Lab,
        TaskCategory::Diagnosis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskCategory::Operational => "operational",
            TaskCategory::Lab => "lab",
            TaskCategory::Diagnosis => "diagnosis",
        }
    }
}

impl std::fmt::Display for TaskCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One binary prediction task: its identifier, category, question fragment,
/// and the ordered answer label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub category: TaskCategory,
    /// Question fragment completing "Use your knowledge and reasoning to
    /// {question}", e.g. "predict whether the patient will be transferred
    /// to the ICU on the same day of admission".
    pub question: String,
    pub answer_labels: Vec<String>,
}

impl TaskSpec {
    pub fn new(id: &str, category: TaskCategory, question: &str) -> TaskSpec {
        TaskSpec {
            id: TaskId::new(id),
            category,
            question: question.to_string(),
            answer_labels: vec!["Yes".to_string(), "No".to_string()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "task {} has an empty question",
                self.id
            )));
        }
        let mut labels = self.answer_labels.clone();
        labels.sort();
        labels.dedup();
        if labels.len() < 2 || labels.len() != self.answer_labels.len() {
            return Err(Error::InvalidConfig(format!(
                "task {} needs at least two distinct answer labels",
                self.id
            )));
        }
        Ok(())
    }
}

/// The ten default tasks: two operational outcomes, five lab-result
/// assessments, three new-diagnosis forecasts.
pub fn default_tasks() -> Vec<TaskSpec> {
    vec![
        TaskSpec::new(
            "long_length_of_stay",
            TaskCategory::Operational,
            "predict whether the patient's length of stay will exceed seven days",
        ),
        TaskSpec::new(
            "icu_transfer",
            TaskCategory::Operational,
            "predict whether the patient will be transferred to the ICU on the same day of admission",
        ),
        TaskSpec::new(
            "thrombocytopenia",
            TaskCategory::Lab,
            "predict whether the patient's upcoming lab result will indicate thrombocytopenia",
        ),
        TaskSpec::new(
            "hyperkalemia",
            TaskCategory::Lab,
            "predict whether the patient's upcoming lab result will indicate hyperkalemia",
        ),
        TaskSpec::new(
            "hypoglycemia",
            TaskCategory::Lab,
            "predict whether the patient's upcoming lab result will indicate hypoglycemia",
        ),
        TaskSpec::new(
            "hyponatremia",
            TaskCategory::Lab,
            "predict whether the patient's upcoming lab result will indicate hyponatremia",
        ),
        TaskSpec::new(
            "anemia",
            TaskCategory::Lab,
            "predict whether the patient's upcoming lab result will indicate anemia",
        ),
        TaskSpec::new(
            "hypertension",
            TaskCategory::Diagnosis,
            "predict whether the patient will be first diagnosed with hypertension within a year of discharge",
        ),
        TaskSpec::new(
            "hyperlipidemia",
            TaskCategory::Diagnosis,
            "predict whether the patient will be first diagnosed with hyperlipidemia within a year of discharge",
        ),
        TaskSpec::new(
            "acute_mi",
            TaskCategory::Diagnosis,
            "predict whether the patient will be first diagnosed with acute myocardial infarction within a year of discharge",
        ),
    ]
}

/// Whether a prompt carries one task or all tasks of a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Single,
    Multi,
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::Single => "single",
            PromptMode::Multi => "multi",
        })
    }
}

/// A four-block prompt: role/instructions, clinical narrative, task
/// questions, and output-format constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub role_block: String,
    pub narrative_block: String,
    pub task_block: String,
    pub output_block: String,
    pub tasks: Vec<TaskSpec>,
    pub mode: PromptMode,
    /// Task questions appear both before the narrative (in the role block)
    /// and after it (in the task block), so long contexts cannot bury them.
    pub head_and_tail_question: bool,
}

impl Prompt {
    /// The serialized prompt sent to a model, blocks in fixed order.
    pub fn full_text(&self) -> String {
        format!(
            "{}\n\n{}\n\n{}\n\n{}",
            self.role_block, self.narrative_block, self.task_block, self.output_block
        )
    }

    /// SHA-256 hex digest of the full text; the identity key for response
    /// sets and ensembling.
    pub fn fingerprint(&self) -> String {
        fingerprint_text(&self.full_text())
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }
}

/// SHA-256 hex digest of arbitrary prompt text.
pub fn fingerprint_text(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn joined_questions(tasks: &[TaskSpec]) -> String {
    tasks
        .iter()
        .map(|t| t.question.as_str())
        .collect::<Vec<_>>()
        .join("; and ")
}

/// Assembles the four-block prompt for one task (single mode) or all tasks
/// of one category (multi mode). The questions are repeated head and tail.
pub fn build_prompt(
    narrative: &ClinicalNarrative,
    tasks: &[TaskSpec],
    mode: PromptMode,
) -> Result<Prompt> {
    if tasks.is_empty() {
        return Err(Error::TaskCount {
            expected: "at least 1".into(),
            got: 0,
        });
    }
    for task in tasks {
        task.validate()?;
    }
    match mode {
        PromptMode::Single if tasks.len() != 1 => {
            return Err(Error::TaskCount {
                expected: "exactly 1 in single mode".into(),
                got: tasks.len(),
            });
        }
        PromptMode::Multi => {
            if tasks.len() < 2 {
                return Err(Error::TaskCount {
                    expected: "at least 2 in multi mode".into(),
                    got: tasks.len(),
                });
            }
            let category = tasks[0].category;
            if let Some(stray) = tasks.iter().find(|t| t.category != category) {
                return Err(Error::CategoryMismatch(format!(
                    "multi-task prompt mixes {} with {}",
                    category, stray.category
                )));
            }
        }
        PromptMode::Single => {}
    }

    let role_block = format!(
        "Role: Assuming you are an experienced doctor. Based on the descriptions of \
         the patient's age, demographics, and medical events provided, use your \
         knowledge and reasoning to {}.\n\
         Chain of thoughts:\n\
         1. Review Patient Profile: Analyzing age, sex, and medical history.\n\
         2. Evaluate Current Symptoms: Identify vital signs outside the normal range.\n\
         3. Weigh Risk Factors: Relate the recorded events to known clinical risk factors.",
        joined_questions(tasks)
    );

    let task_block = match mode {
        PromptMode::Single => format!("Tasks:\n{}.", tasks[0].question),
        PromptMode::Multi => {
            let mut block = String::from("Tasks:");
            for task in tasks {
                block.push_str(&format!("\n{}: {}.", task.id, task.question));
            }
            block
        }
    };

    let output_block = match mode {
        PromptMode::Single => {
            "Output format:\nPlease answer with \"Yes\" or \"No\".".to_string()
        }
        PromptMode::Multi => {
            let mut block = String::from(
                "Output format:\nAnswer with exactly one line per task, formatted as \
                 \"<task_id>: Yes\" or \"<task_id>: No\". The task ids are:",
            );
            for task in tasks {
                block.push_str(&format!("\n{}", task.id));
            }
            block
        }
    };

    Ok(Prompt {
        role_block,
        narrative_block: narrative.text.clone(),
        task_block,
        output_block,
        tasks: tasks.to_vec(),
        mode,
        head_and_tail_question: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn narrative() -> ClinicalNarrative {
        ClinicalNarrative {
            text: "Patient age and demographic information:\nThe patient was 36 years old \
                   at the prediction time.\n\nMedical Events:\nOn June 12, 2014:\nOne \
                   clinical drug event, \"Aspirin\" was recorded."
                .to_string(),
            token_estimate: 50,
            included_events: 1,
            truncated: false,
            unknown_codes: 0,
        }
    }

    fn icu_task() -> TaskSpec {
        default_tasks()
            .into_iter()
            .find(|t| t.id.as_str() == "icu_transfer")
            .unwrap()
    }

    #[test]
    fn default_task_census() {
        let tasks = default_tasks();
        assert_eq!(tasks.len(), 10);
        let count = |c: TaskCategory| tasks.iter().filter(|t| t.category == c).count();
        assert_eq!(count(TaskCategory::Operational), 2);
        assert_eq!(count(TaskCategory::Lab), 5);
        assert_eq!(count(TaskCategory::Diagnosis), 3);
        for task in &tasks {
            task.validate().unwrap();
        }
    }

    #[test]
    fn single_prompt_has_card_output_block() {
        let prompt = build_prompt(&narrative(), &[icu_task()], PromptMode::Single).unwrap();
        assert!(prompt
            .output_block
            .contains("Please answer with \"Yes\" or \"No\"."));
        assert!(prompt.role_block.contains("experienced doctor"));
    }

    #[test]
    fn questions_repeat_head_and_tail() {
        let task = icu_task();
        let prompt = build_prompt(&narrative(), &[task.clone()], PromptMode::Single).unwrap();
        let text = prompt.full_text();
        assert!(prompt.head_and_tail_question);
        assert_eq!(text.matches(task.question.as_str()).count(), 2);
        let head = text.find(task.question.as_str()).unwrap();
        let tail = text.rfind(task.question.as_str()).unwrap();
        let narrative_at = text.find("Medical Events:").unwrap();
        assert!(head < narrative_at && narrative_at < tail);
    }

    #[test]
    fn multi_prompt_lists_every_task_line() {
        let tasks: Vec<TaskSpec> = default_tasks()
            .into_iter()
            .filter(|t| t.category == TaskCategory::Lab)
            .collect();
        let prompt = build_prompt(&narrative(), &tasks, PromptMode::Multi).unwrap();
        for task in &tasks {
            assert!(prompt.task_block.contains(&format!("{}: ", task.id)));
            assert!(prompt.output_block.contains(task.id.as_str()));
        }
    }

    #[test]
    fn multi_mode_rejects_mixed_categories() {
        let tasks = vec![icu_task(), default_tasks().remove(2)];
        assert!(matches!(
            build_prompt(&narrative(), &tasks, PromptMode::Multi),
            Err(Error::CategoryMismatch(_))
        ));
    }

    #[test]
    fn single_mode_rejects_two_tasks() {
        let tasks = vec![icu_task(), icu_task()];
        assert!(matches!(
            build_prompt(&narrative(), &tasks, PromptMode::Single),
            Err(Error::TaskCount { .. })
        ));
    }

    #[test]
    fn empty_task_list_rejected() {
        assert!(matches!(
            build_prompt(&narrative(), &[], PromptMode::Single),
            Err(Error::TaskCount { got: 0, .. })
        ));
    }

    #[test]
    fn fingerprint_is_deterministic_and_content_sensitive() {
        let a = build_prompt(&narrative(), &[icu_task()], PromptMode::Single).unwrap();
        let b = build_prompt(&narrative(), &[icu_task()], PromptMode::Single).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);

        let mut other = narrative();
        other.text.push('!');
        let c = build_prompt(&other, &[icu_task()], PromptMode::Single).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
