//! Data model for longitudinal coded medical sequences, ontology-backed
//! translation of codes into natural-language narratives, and leakage-safe
//! temporal truncation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of one clinical prediction task (e.g. `icu_transfer`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        TaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// Kind of a coded medical event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventDomain {
    Drug,
    Measurement,
    Condition,
    Procedure,
    Demographic,
    Other,
}

impl EventDomain {
    /// Lowercase word used in rendered narrative lines.
    pub fn word(&self) -> &'static str {
        match self {
            EventDomain::Drug => "drug",
            EventDomain::Measurement => "measurement",
            EventDomain::Condition => "condition",
            EventDomain::Procedure => "procedure",
            EventDomain::Demographic => "demographic",
            EventDomain::Other => "other",
        }
    }

    /// Lenient parse used by the dictionary loader; unrecognized kinds map
    /// to `Other`.
    pub fn parse_lenient(s: &str) -> EventDomain {
        match s.trim().to_ascii_lowercase().as_str() {
            "drug" => EventDomain::Drug,
            "measurement" => EventDomain::Measurement,
            "condition" => EventDomain::Condition,
            "procedure" => EventDomain::Procedure,
            "demographic" => EventDomain::Demographic,
            _ => EventDomain::Other,
        }
    }
}

/// One coded medical event at a point in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedicalEvent {
    /// Ontology concept identifier, e.g. a vocabulary/code pair like `CVX/20`.
    pub code: String,
    /// UTC instant, second resolution.
    pub timestamp: DateTime<Utc>,
    pub domain: EventDomain,
    /// Numeric measurement value; present only when `domain` is measurement.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
}

/// Label for one task: the instant the prediction is made at, and the
/// binary outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLabel {
    pub prediction_time: DateTime<Utc>,
    pub label: u8,
}

/// Chronologically ordered medical events for one patient, with
/// demographics and per-task outcome labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSequence {
    pub patient_id: String,
    pub demographics: BTreeMap<String, String>,
    pub events: Vec<MedicalEvent>,
    pub labels: BTreeMap<TaskId, TaskLabel>,
}

impl PatientSequence {
    /// Checks the structural invariants: events sorted non-decreasing by
    /// timestamp, measurement values only on measurement events, labels not
    /// before the first event.
    pub fn validate(&self) -> Result<()> {
        for pair in self.events.windows(2) {
            if pair[1].timestamp < pair[0].timestamp {
                return Err(Error::InvalidConfig(format!(
                    "patient {}: events out of chronological order",
                    self.patient_id
                )));
            }
        }
        for ev in &self.events {
            if ev.value.is_some() && ev.domain != EventDomain::Measurement {
                return Err(Error::InvalidConfig(format!(
                    "patient {}: value on non-measurement event {}",
                    self.patient_id, ev.code
                )));
            }
        }
        if let Some(first) = self.events.first() {
            for (task, lab) in &self.labels {
                if lab.prediction_time < first.timestamp {
                    return Err(Error::InvalidConfig(format!(
                        "patient {}: label {} predates first event",
                        self.patient_id, task
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Human-readable description of one concept code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEntry {
    pub name: String,
    pub domain: EventDomain,
}

/// Flat ontology: concept identifier -> name and kind.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConceptDictionary {
    entries: BTreeMap<String, ConceptEntry>,
}

impl ConceptDictionary {
    pub fn new(entries: BTreeMap<String, ConceptEntry>) -> Self {
        ConceptDictionary { entries }
    }

    pub fn lookup(&self, code: &str) -> Option<&ConceptEntry> {
        self.entries.get(code)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Result of loading a dictionary file: the entries plus how many duplicate
/// ids were overwritten (last occurrence wins).
#[derive(Debug, Clone)]
pub struct DictionaryLoad {
    pub dictionary: ConceptDictionary,
    pub duplicate_count: usize,
}

/// Loads a concept dictionary from a TSV file with header
/// `concept_id<TAB>concept_name<TAB>domain`.
///
/// Duplicate ids resolve to the last occurrence; the overwrite count is
/// returned alongside. A header-only file is an error.
pub fn load_concept_dictionary(path: &Path) -> Result<DictionaryLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::EmptyDictionary),
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["concept_id", "concept_name", "domain"] {
        return Err(Error::DictionaryRow {
            line: 1,
            reason: format!("bad header {header:?}"),
        });
    }

    let mut entries = BTreeMap::new();
    let mut duplicate_count = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::DictionaryRow {
                line: idx + 1,
                reason: format!("expected 3 columns, got {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        let name = fields[1].trim();
        if id.is_empty() || name.is_empty() {
            return Err(Error::DictionaryRow {
                line: idx + 1,
                reason: "empty concept_id or concept_name".into(),
            });
        }
        let entry = ConceptEntry {
            name: name.to_string(),
            domain: EventDomain::parse_lenient(fields[2]),
        };
        if entries.insert(id.to_string(), entry).is_some() {
            duplicate_count += 1;
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    Ok(DictionaryLoad {
        dictionary: ConceptDictionary::new(entries),
        duplicate_count,
    })
}

/// Writes `rows` as the TSV format `load_concept_dictionary` reads. Rows
/// are written in the given order.
pub fn write_concept_dictionary(path: &Path, rows: &[(String, ConceptEntry)]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(file, "concept_id\tconcept_name\tdomain").map_err(|e| Error::io(path, e))?;
    for (id, entry) in rows {
        writeln!(file, "{id}\t{}\t{}", entry.name, entry.domain.word())
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Returns the sequence restricted to events strictly before `t_k`.
/// Demographics and labels are preserved unchanged.
pub fn truncate_sequence(seq: &PatientSequence, t_k: DateTime<Utc>) -> PatientSequence {
    PatientSequence {
        patient_id: seq.patient_id.clone(),
        demographics: seq.demographics.clone(),
        events: seq
            .events
            .iter()
            .filter(|e| e.timestamp < t_k)
            .cloned()
            .collect(),
        labels: seq.labels.clone(),
    }
}

fn parse_birth_date(raw: &str) -> Option<NaiveDate> {
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Some(d);
    }
    DateTime::parse_from_rfc3339(raw).ok().map(|d| d.date_naive())
}

/// Whole-year age (floored) at instant `at`, from the `birth_date`
/// demographics entry.
pub fn compute_age(seq: &PatientSequence, at: DateTime<Utc>) -> Result<u32> {
    let raw = seq
        .demographics
        .get("birth_date")
        .ok_or(Error::MissingBirthDate)?;
    let birth = parse_birth_date(raw).ok_or(Error::MissingBirthDate)?;
    let at_date = at.date_naive();
    if at_date < birth {
        return Err(Error::BeforeBirth);
    }
    let mut years = at_date.year() - birth.year();
    if (at_date.month(), at_date.day()) < (birth.month(), birth.day()) {
        years -= 1;
    }
    Ok(years as u32)
}

/// Rendered natural-language timeline of one (already truncated) sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalNarrative {
    pub text: String,
    /// Approximate token count: ceil(character count / 4).
    pub token_estimate: usize,
    /// Events represented in the rendered text.
    pub included_events: usize,
    /// True when events were dropped to satisfy the budget.
    pub truncated: bool,
    /// Codes missing from the dictionary among the rendered events.
    pub unknown_codes: usize,
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn format_date(d: NaiveDate) -> String {
    format!("{} {}, {}", MONTHS[d.month0() as usize], d.day(), d.year())
}

const COUNT_WORDS: [&str; 12] = [
    "One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten", "Eleven",
    "Twelve",
];

fn count_word(n: usize) -> String {
    if (1..=12).contains(&n) {
        COUNT_WORDS[n - 1].to_string()
    } else {
        n.to_string()
    }
}

fn format_value(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

struct DateBlock {
    text: String,
    event_count: usize,
    unknown_count: usize,
}

fn render_date_block(date: NaiveDate, events: &[&MedicalEvent], dict: &ConceptDictionary) -> DateBlock {
    let mut lines = vec![format!("On {}:", format_date(date))];
    let mut event_count = 0usize;
    let mut unknown_count = 0usize;

    // Measurements of the same code collapse into one sentence listing all
    // values; everything else renders one line per event, in order.
    let mut rendered_measurements: Vec<&str> = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        let (name, known) = match dict.lookup(&ev.code) {
            Some(entry) => (entry.name.clone(), true),
            None => (ev.code.clone(), false),
        };
        if ev.domain == EventDomain::Measurement {
            if rendered_measurements.contains(&ev.code.as_str()) {
                continue;
            }
            rendered_measurements.push(&ev.code);
            let group: Vec<&&MedicalEvent> =
                events[i..].iter().filter(|e| e.code == ev.code && e.domain == EventDomain::Measurement).collect();
            let count = group.len();
            let values: Vec<String> = group
                .iter()
                .filter_map(|e| e.value.map(format_value))
                .collect();
            let noun = if count == 1 {
                "measurement event"
            } else {
                "measurement events"
            };
            let line = if values.is_empty() {
                format!("{} {noun}, \"{name}\" was recorded.", count_word(count))
            } else {
                format!(
                    "{} {noun}, \"{name}\" was recorded with values: {}.",
                    count_word(count),
                    values.join(", ")
                )
            };
            lines.push(line);
            event_count += count;
            if !known {
                unknown_count += count;
            }
        } else {
            lines.push(format!(
                "One clinical {} event, \"{name}\" was recorded.",
                ev.domain.word()
            ));
            event_count += 1;
            if !known {
                unknown_count += 1;
            }
        }
    }

    DateBlock {
        text: lines.join("\n"),
        event_count,
        unknown_count,
    }
}

/// Renders a patient sequence as a natural-language timeline card.
///
/// Events are grouped by calendar date; when the text would exceed `budget`
/// (estimated tokens), whole oldest dates are dropped first so the most
/// recent details survive. The demographics header always survives, even in
/// the degenerate case where it alone exceeds the budget.
pub fn render_timeline(
    seq: &PatientSequence,
    dict: &ConceptDictionary,
    budget: usize,
) -> ClinicalNarrative {
    let mut header = String::from("Patient age and demographic information:\n");
    let age_ref = seq.events.last().map(|e| e.timestamp);
    let mut sentences: Vec<String> = Vec::new();
    if let Some(at) = age_ref {
        if let Ok(age) = compute_age(seq, at) {
            sentences.push(format!("The patient was {age} years old at the prediction time."));
        }
    }
    if !seq.demographics.is_empty() {
        let pairs: Vec<String> = seq
            .demographics
            .iter()
            .map(|(k, v)| format!("{k}: {v}"))
            .collect();
        sentences.push(format!(
            "The patient has the following demographic information: {}.",
            pairs.join("; ")
        ));
    }
    if sentences.is_empty() {
        sentences.push("No demographic information is available.".to_string());
    }
    header.push_str(&sentences.join(" "));

    // Group events by UTC calendar date, preserving order.
    let mut blocks: Vec<(NaiveDate, Vec<&MedicalEvent>)> = Vec::new();
    for ev in &seq.events {
        let date = ev.timestamp.date_naive();
        match blocks.last_mut() {
            Some((d, evs)) if *d == date => evs.push(ev),
            _ => blocks.push((date, vec![ev])),
        }
    }
    let rendered: Vec<DateBlock> = blocks
        .iter()
        .map(|(date, evs)| render_date_block(*date, evs, dict))
        .collect();
    let total_blocks = rendered.len();

    // Keep most recent dates under the budget: count how many newest blocks
    // fit together with the header and section title.
    let header_chars = header.chars().count();
    let section_title = "\n\nMedical Events:";
    let mut kept = 0usize;
    for take in (1..=total_blocks).rev() {
        let chars = header_chars
            + section_title.chars().count()
            + rendered[total_blocks - take..]
                .iter()
                .map(|b| b.text.chars().count() + 1)
                .sum::<usize>();
        if chars.div_ceil(4) <= budget {
            kept = take;
            break;
        }
    }

    let mut text = header;
    let mut included_events = 0usize;
    let mut unknown_codes = 0usize;
    if kept > 0 {
        text.push_str(section_title);
        for block in &rendered[total_blocks - kept..] {
            text.push('\n');
            text.push_str(&block.text);
            included_events += block.event_count;
            unknown_codes += block.unknown_count;
        }
    }

    ClinicalNarrative {
        token_estimate: estimate_tokens(&text),
        truncated: kept < total_blocks,
        text,
        included_events,
        unknown_codes,
    }
}

/// Reads a cohort file: JSONL, one `PatientSequence` per line.
pub fn read_cohort(path: &Path) -> Result<Vec<PatientSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: PatientSequence = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        seq.validate()?;
        out.push(seq);
    }
    Ok(out)
}

/// Writes a cohort file: JSONL, one `PatientSequence` per line.
pub fn write_cohort(path: &Path, cohort: &[PatientSequence]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for seq in cohort {
        let line = serde_json::to_string(seq).expect("sequence serializes");
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(s: &str) -> DateTime<Utc> {
        DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
    }

    fn event(code: &str, when: &str, domain: EventDomain, value: Option<f64>) -> MedicalEvent {
        MedicalEvent {
            code: code.to_string(),
            timestamp: ts(when),
            domain,
            value,
            unit: None,
        }
    }

    fn patient(events: Vec<MedicalEvent>) -> PatientSequence {
        let mut demographics = BTreeMap::new();
        demographics.insert("birth_date".to_string(), "1978-01-01".to_string());
        demographics.insert("sex".to_string(), "female".to_string());
        PatientSequence {
            patient_id: "p1".to_string(),
            demographics,
            events,
            labels: BTreeMap::new(),
        }
    }

    fn write_tsv(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn dictionary_single_row() {
        let file = write_tsv(
            "concept_id\tconcept_name\tdomain\nCVX/20\tdiphtheria, tetanus toxoids and acellular pertussis vaccine\tdrug\n",
        );
        let load = load_concept_dictionary(file.path()).unwrap();
        assert_eq!(load.duplicate_count, 0);
        let entry = load.dictionary.lookup("CVX/20").unwrap();
        assert_eq!(
            entry.name,
            "diphtheria, tetanus toxoids and acellular pertussis vaccine"
        );
        assert_eq!(entry.domain, EventDomain::Drug);
    }

    #[test]
    fn dictionary_header_only_is_empty() {
        let file = write_tsv("concept_id\tconcept_name\tdomain\n");
        match load_concept_dictionary(file.path()) {
            Err(Error::EmptyDictionary) => {}
            other => panic!("expected empty dictionary error, got {other:?}"),
        }
    }

    #[test]
    fn dictionary_duplicate_last_wins() {
        let file = write_tsv(
            "concept_id\tconcept_name\tdomain\nA/1\tfirst name\tdrug\nA/1\tsecond name\tdrug\n",
        );
        let load = load_concept_dictionary(file.path()).unwrap();
        assert_eq!(load.duplicate_count, 1);
        assert_eq!(load.dictionary.lookup("A/1").unwrap().name, "second name");
    }

    #[test]
    fn dictionary_malformed_row_names_line() {
        let file = write_tsv("concept_id\tconcept_name\tdomain\nA/1\tonly two columns\n");
        match load_concept_dictionary(file.path()) {
            Err(Error::DictionaryRow { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected row error, got {other:?}"),
        }
    }

    #[test]
    fn dictionary_missing_file() {
        let err = load_concept_dictionary(Path::new("/nonexistent/concepts.tsv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn truncate_strict_boundary() {
        let seq = patient(vec![
            event("a", "2014-06-12T10:00:00Z", EventDomain::Drug, None),
            event("b", "2014-06-12T11:00:00Z", EventDomain::Drug, None),
            event("c", "2014-06-12T12:00:00Z", EventDomain::Drug, None),
        ]);
        let out = truncate_sequence(&seq, ts("2014-06-12T12:00:00Z"));
        assert_eq!(out.events.len(), 2);
        assert_eq!(out.events[1].code, "b");
    }

    #[test]
    fn truncate_before_all_and_after_all() {
        let seq = patient(vec![event("a", "2014-06-12T10:00:00Z", EventDomain::Drug, None)]);
        assert!(truncate_sequence(&seq, ts("2000-01-01T00:00:00Z")).events.is_empty());
        let full = truncate_sequence(&seq, ts("2020-01-01T00:00:00Z"));
        assert_eq!(full.events, seq.events);
    }

    #[test]
    fn truncate_idempotent_and_monotone() {
        let seq = patient(
            (0..20)
                .map(|i| {
                    event(
                        &format!("c{i}"),
                        &format!("2014-06-{:02}T10:00:00Z", i + 1),
                        EventDomain::Condition,
                        None,
                    )
                })
                .collect(),
        );
        let t1 = ts("2014-06-08T00:00:00Z");
        let t2 = ts("2014-06-15T00:00:00Z");
        let once = truncate_sequence(&seq, t1);
        let twice = truncate_sequence(&once, t1);
        assert_eq!(once, twice);
        let small = truncate_sequence(&seq, t1);
        let large = truncate_sequence(&seq, t2);
        assert!(small.events.iter().all(|e| large.events.contains(e)));
    }

    #[test]
    fn age_paper_card() {
        let seq = patient(vec![]);
        assert_eq!(compute_age(&seq, ts("2014-06-12T23:59:00Z")).unwrap(), 36);
    }

    #[test]
    fn age_zero_at_birth() {
        let mut seq = patient(vec![]);
        seq.demographics
            .insert("birth_date".to_string(), "2014-06-12".to_string());
        assert_eq!(compute_age(&seq, ts("2014-06-12T00:00:00Z")).unwrap(), 0);
    }

    #[test]
    fn age_birthday_not_reached() {
        let mut seq = patient(vec![]);
        seq.demographics
            .insert("birth_date".to_string(), "2000-06-13".to_string());
        assert_eq!(compute_age(&seq, ts("2014-06-12T00:00:00Z")).unwrap(), 13);
    }

    #[test]
    fn age_errors() {
        let mut seq = patient(vec![]);
        assert!(matches!(
            compute_age(&seq, ts("1950-01-01T00:00:00Z")),
            Err(Error::BeforeBirth)
        ));
        seq.demographics.remove("birth_date");
        assert!(matches!(
            compute_age(&seq, ts("2014-06-12T00:00:00Z")),
            Err(Error::MissingBirthDate)
        ));
    }

    fn card_dictionary() -> ConceptDictionary {
        let mut entries = BTreeMap::new();
        entries.insert(
            "RxNorm/1049221".to_string(),
            ConceptEntry {
                name: "Oxycodone hydrochloride 5 MG Oral Tablet".to_string(),
                domain: EventDomain::Drug,
            },
        );
        entries.insert(
            "LOINC/8480-6".to_string(),
            ConceptEntry {
                name: "Systolic blood pressure".to_string(),
                domain: EventDomain::Measurement,
            },
        );
        ConceptDictionary::new(entries)
    }

    #[test]
    fn render_single_drug_event_card() {
        let seq = patient(vec![event(
            "RxNorm/1049221",
            "2014-06-12T09:00:00Z",
            EventDomain::Drug,
            None,
        )]);
        let narrative = render_timeline(&seq, &card_dictionary(), 4096);
        assert!(narrative.text.contains("On June 12, 2014:"), "{}", narrative.text);
        assert!(
            narrative.text.contains(
                "One clinical drug event, \"Oxycodone hydrochloride 5 MG Oral Tablet\" was recorded."
            ),
            "{}",
            narrative.text
        );
        assert!(!narrative.truncated);
        assert_eq!(narrative.included_events, 1);
        assert_eq!(narrative.unknown_codes, 0);
    }

    #[test]
    fn render_collapses_repeated_measurements() {
        let values = [131.0, 127.0, 133.0, 143.0];
        let seq = patient(
            values
                .iter()
                .map(|v| {
                    event(
                        "LOINC/8480-6",
                        "2014-06-13T08:00:00Z",
                        EventDomain::Measurement,
                        Some(*v),
                    )
                })
                .collect(),
        );
        let narrative = render_timeline(&seq, &card_dictionary(), 4096);
        assert!(
            narrative.text.contains(
                "Four measurement events, \"Systolic blood pressure\" was recorded with values: 131.0, 127.0, 133.0, 143.0."
            ),
            "{}",
            narrative.text
        );
        assert_eq!(narrative.included_events, 4);
    }

    #[test]
    fn render_degenerate_budget_keeps_header_only() {
        let events = (0..100)
            .map(|i| {
                event(
                    &format!("code{i}"),
                    &format!("2014-06-{:02}T10:00:00Z", (i % 28) + 1),
                    EventDomain::Condition,
                    None,
                )
            })
            .collect();
        let seq = patient(events);
        let narrative = render_timeline(&seq, &card_dictionary(), 1);
        assert!(narrative.truncated);
        assert_eq!(narrative.included_events, 0);
        assert!(narrative.text.starts_with("Patient age and demographic information:"));
        assert!(!narrative.text.contains("Medical Events"));
    }

    #[test]
    fn render_unknown_codes_counted() {
        let seq = patient(vec![event("X/999", "2014-06-12T09:00:00Z", EventDomain::Drug, None)]);
        let narrative = render_timeline(&seq, &card_dictionary(), 4096);
        assert!(narrative.text.contains("\"X/999\""));
        assert_eq!(narrative.unknown_codes, 1);
    }

    #[test]
    fn render_budget_drops_oldest_dates_first() {
        let seq = patient(vec![
            event("RxNorm/1049221", "2014-06-10T09:00:00Z", EventDomain::Drug, None),
            event("RxNorm/1049221", "2014-06-11T09:00:00Z", EventDomain::Drug, None),
            event("RxNorm/1049221", "2014-06-12T09:00:00Z", EventDomain::Drug, None),
        ]);
        let full = render_timeline(&seq, &card_dictionary(), 4096);
        assert!(!full.truncated);
        let tight = render_timeline(&seq, &card_dictionary(), full.token_estimate - 10);
        assert!(tight.truncated);
        assert!(!tight.text.contains("June 10"));
        assert!(tight.text.contains("June 12"), "{}", tight.text);
        assert!(tight.token_estimate <= full.token_estimate - 10);
    }

    #[test]
    fn render_deterministic() {
        let seq = patient(vec![
            event("RxNorm/1049221", "2014-06-12T09:00:00Z", EventDomain::Drug, None),
            event("LOINC/8480-6", "2014-06-13T08:00:00Z", EventDomain::Measurement, Some(131.0)),
        ]);
        let a = render_timeline(&seq, &card_dictionary(), 512);
        let b = render_timeline(&seq, &card_dictionary(), 512);
        assert_eq!(a.text, b.text);
        assert_eq!(a, b);
    }

    #[test]
    fn render_budget_safety() {
        // Budgets at or above the header size always satisfy the estimate.
        let seq = patient(
            (0..40)
                .map(|i| {
                    event(
                        &format!("c{i}"),
                        &format!("2014-06-{:02}T10:00:00Z", (i % 28) + 1),
                        EventDomain::Procedure,
                        None,
                    )
                })
                .collect(),
        );
        let header_only = render_timeline(&seq, &card_dictionary(), 1);
        let floor = header_only.token_estimate;
        for budget in [floor, floor + 5, floor + 20, floor + 100, floor + 1000] {
            let narrative = render_timeline(&seq, &card_dictionary(), budget);
            assert!(
                narrative.token_estimate <= budget,
                "estimate {} exceeds budget {budget}",
                narrative.token_estimate
            );
        }
    }

    #[test]
    fn no_leakage_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..30usize);
            let events: Vec<MedicalEvent> = (0..n)
                .map(|i| {
                    let day = 1 + (i * 27 / n.max(1)) % 27;
                    event(
                        &format!("marker-{i}"),
                        &format!("2014-06-{day:02}T{:02}:00:00Z", rng.random_range(0..24)),
                        EventDomain::Condition,
                        None,
                    )
                })
                .collect();
            let mut events = events;
            events.sort_by_key(|e| e.timestamp);
            let seq = patient(events.clone());
            let cut = events[rng.random_range(0..n)].timestamp;
            let truncated = truncate_sequence(&seq, cut);
            let narrative = render_timeline(&truncated, &ConceptDictionary::default(), 100_000);
            for ev in &events {
                if ev.timestamp >= cut {
                    // Codes are unique markers, so presence in text means leakage.
                    assert!(
                        !narrative.text.contains(&format!("\"{}\"", ev.code)),
                        "event {} at {} leaked past cut {cut}",
                        ev.code,
                        ev.timestamp
                    );
                }
            }
        }
    }

    #[test]
    fn cohort_jsonl_round_trip() {
        let mut seq = patient(vec![
            event("RxNorm/1049221", "2014-06-12T09:00:00Z", EventDomain::Drug, None),
            event("LOINC/8480-6", "2014-06-13T08:00:00Z", EventDomain::Measurement, Some(131.0)),
        ]);
        seq.labels.insert(
            TaskId::new("icu_transfer"),
            TaskLabel {
                prediction_time: ts("2014-06-13T23:59:00Z"),
                label: 1,
            },
        );
        let file = tempfile::NamedTempFile::new().unwrap();
        write_cohort(file.path(), &[seq.clone()]).unwrap();
        let back = read_cohort(file.path()).unwrap();
        assert_eq!(back, vec![seq]);
    }

    #[test]
    fn cohort_rejects_unsorted_events() {
        let seq = PatientSequence {
            patient_id: "p2".to_string(),
            demographics: BTreeMap::new(),
            events: vec![
                event("b", "2014-06-13T00:00:00Z", EventDomain::Drug, None),
                event("a", "2014-06-12T00:00:00Z", EventDomain::Drug, None),
            ],
            labels: BTreeMap::new(),
        };
        assert!(seq.validate().is_err());
    }

    #[test]
    fn utc_timestamps_parse() {
        let t = Utc.with_ymd_and_hms(2014, 6, 12, 9, 0, 0).unwrap();
        assert_eq!(ts("2014-06-12T09:00:00Z"), t);
    }
}
