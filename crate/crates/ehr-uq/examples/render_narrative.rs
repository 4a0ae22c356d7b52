//! Renders a medical-code timeline as the natural-language card a prompt
//! would carry, at two token budgets, and shows the leakage guard.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use ehr_uq::ehr::{
    render_timeline, truncate_sequence, ConceptDictionary, ConceptEntry, EventDomain,
    MedicalEvent, PatientSequence, TaskId, TaskLabel,
};

fn event(code: &str, ts: &str, domain: EventDomain, value: Option<f64>) -> MedicalEvent {
    MedicalEvent {
        code: code.to_string(),
        timestamp: DateTime::parse_from_rfc3339(ts).unwrap().with_timezone(&Utc),
        domain,
        value,
        unit: value.map(|_| "mmHg".to_string()),
    }
}

fn main() {
    let dictionary = ConceptDictionary::new(BTreeMap::from([
        (
            "C001".to_string(),
            ConceptEntry {
                name: "Essential hypertension".to_string(),
                domain: EventDomain::Condition,
            },
        ),
        (
            "M001".to_string(),
            ConceptEntry {
                name: "Systolic blood pressure".to_string(),
                domain: EventDomain::Measurement,
            },
        ),
        (
            "D001".to_string(),
            ConceptEntry {
                name: "Lisinopril 10 MG Oral Tablet".to_string(),
                domain: EventDomain::Drug,
            },
        ),
    ]));

    let prediction_time = DateTime::parse_from_rfc3339("2013-03-02T23:59:00Z")
        .unwrap()
        .with_timezone(&Utc);
    let seq = PatientSequence {
        patient_id: "demo-0001".to_string(),
        demographics: BTreeMap::from([
            ("birth_date".to_string(), "1951-07-20".to_string()),
            ("sex".to_string(), "female".to_string()),
        ]),
        events: vec![
            event("M001", "2013-03-01T08:10:00Z", EventDomain::Measurement, Some(162.0)),
            event("C001", "2013-03-01T09:00:00Z", EventDomain::Condition, None),
            event("D001", "2013-03-01T09:30:00Z", EventDomain::Drug, None),
            event("M001", "2013-03-02T08:05:00Z", EventDomain::Measurement, Some(141.0)),
            // After the prediction time: must never reach a prompt.
            event("M001", "2013-03-03T08:00:00Z", EventDomain::Measurement, Some(120.0)),
        ],
        labels: BTreeMap::from([(
            TaskId::new("hypertension"),
            TaskLabel {
                prediction_time,
                label: 1,
            },
        )]),
    };
    seq.validate().unwrap();

    let visible = truncate_sequence(&seq, prediction_time);
    println!(
        "events: {} total, {} visible before the prediction time\n",
        seq.events.len(),
        visible.events.len()
    );

    let full = render_timeline(&visible, &dictionary, 400);
    println!("--- budget 400 tokens (~{} used) ---", full.token_estimate);
    println!("{}\n", full.text);

    // A tight budget drops whole oldest days first.
    let tight = render_timeline(&visible, &dictionary, 100);
    println!(
        "--- budget 100 tokens (truncated: {}, {} events kept) ---",
        tight.truncated, tight.included_events
    );
    println!("{}", tight.text);
}
