//! Response archives: JSONL with full raw generations per record, enough
//! to recompute every score offline during replay.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ehr::TaskId;
use crate::error::{Error, Result};

use super::response::{RawGeneration, ResponseSet, ScoredRecord};
use super::{PromptMode, TaskSpec};

/// One archived evaluation record. Parsed answers are not stored; replay
/// re-derives them from the raw texts through the same parser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedResponse {
    pub record_id: String,
    pub mode: PromptMode,
    pub fingerprint: String,
    pub tasks: Vec<TaskSpec>,
    pub truth: BTreeMap<TaskId, u8>,
    pub raw: Vec<RawGeneration>,
}

impl ArchivedResponse {
    pub fn from_scored(record: &ScoredRecord, tasks: &[TaskSpec]) -> ArchivedResponse {
        ArchivedResponse {
            record_id: record.record_id.clone(),
            mode: record.response.mode,
            fingerprint: record.response.fingerprint.clone(),
            tasks: tasks.to_vec(),
            truth: record.truth.clone(),
            raw: record.response.raw.clone(),
        }
    }

    /// Rebuilds the scored record by re-parsing the archived raw texts.
    pub fn rescore(&self) -> ScoredRecord {
        ScoredRecord {
            record_id: self.record_id.clone(),
            response: ResponseSet::from_raw(
                self.fingerprint.clone(),
                self.mode,
                &self.tasks,
                self.raw.clone(),
            ),
            truth: self.truth.clone(),
        }
    }
}

pub fn write_archive(path: &Path, records: &[ArchivedResponse]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        writeln!(file, "{}", serde_json::to_string(rec).expect("record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<Vec<ArchivedResponse>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ArchivedResponse = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::default_tasks;

    fn fixture() -> ArchivedResponse {
        let task = default_tasks().remove(1);
        let raw: Vec<RawGeneration> = ["Yes.", "No.", "Yes, very likely.", "hmm", "yes"]
            .iter()
            .enumerate()
            .map(|(slot, text)| RawGeneration {
                model: "mock-calibrated".into(),
                slot,
                temperature: 1.0,
                text: text.to_string(),
                failed: false,
            })
            .collect();
        ArchivedResponse {
            record_id: "p0".into(),
            mode: PromptMode::Single,
            fingerprint: "fp".into(),
            truth: BTreeMap::from([(task.id.clone(), 1u8)]),
            tasks: vec![task],
            raw,
        }
    }

    #[test]
    fn archive_round_trips_and_rescoring_is_stable() {
        let rec = fixture();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_archive(file.path(), std::slice::from_ref(&rec)).unwrap();
        let loaded = read_archive(file.path()).unwrap();
        assert_eq!(loaded, vec![rec.clone()]);
        assert_eq!(loaded[0].rescore(), rec.rescore());
    }

    #[test]
    fn rescore_reparses_raw_text() {
        let scored = fixture().rescore();
        let task = fixture().tasks[0].id.clone();
        assert_eq!(scored.response.n, 5);
        assert_eq!(scored.response.valid_count(&task), 4);
    }
}
