//! Runs the mock model behind a real HTTP server and samples it through
//! the chat-completions client, then shows both transports agree byte for
//! byte. Useful for exercising retries, auth, and the audit log without a
//! paid API.

use std::collections::BTreeMap;
use std::sync::Arc;

use ehr_uq::blackbox::{
    build_prompt, default_tasks, sample_responses, HttpChatClient, HttpClientConfig, PromptMode,
    SamplingParams,
};
use ehr_uq::ehr::{render_timeline, truncate_sequence};
use ehr_uq::synth::{
    generate_cohort, CohortConfig, MockBehavior, MockClient, MockServer, MockServerConfig,
    PromptOracle,
};
use ehr_uq::Result;

fn main() -> Result<()> {
    let mut cohort_cfg = CohortConfig::with_defaults(5, 77);
    cohort_cfg.embedding_dim = 16;
    cohort_cfg.events_per_patient = (6, 10);
    let cohort = generate_cohort(&cohort_cfg)?;
    let dict = cohort.dictionary();
    let task = default_tasks().into_iter().find(|t| t.id.as_str() == "icu_transfer").unwrap();

    let mut oracle = PromptOracle::new();
    let seq = &cohort.sequences[0];
    let visible = truncate_sequence(seq, seq.labels[&task.id].prediction_time);
    let prompt = build_prompt(
        &render_timeline(&visible, &dict, 2000),
        std::slice::from_ref(&task),
        PromptMode::Single,
    )?;
    oracle.record(&prompt, &seq.labels.iter().map(|(t, l)| (t.clone(), l.label)).collect())?;
    let oracle = Arc::new(oracle);

    let behavior = MockBehavior::calibrated(3);
    let server = MockServer::start(
        MockServerConfig {
            behaviors: BTreeMap::from([("mock-calibrated".to_string(), behavior.clone())]),
            api_key: None,
        },
        oracle.clone(),
    )?;
    println!("mock server listening at {}", server.base_url());

    let http = HttpChatClient::new(HttpClientConfig {
        base_url: server.base_url(),
        model: "mock-calibrated".to_string(),
        ..HttpClientConfig::default()
    })?;
    let params = SamplingParams { temperature: 1.0, seed: 12 };
    let over_http = sample_responses(&http, &prompt, 6, &params)?;

    println!("\ncompletions over http:");
    for gen in &over_http.raw {
        println!("  slot {}: {:?}", gen.slot, gen.text);
    }

    // Same behavior, no network: the in-process client must produce the
    // identical response set (modulo the model name on each generation).
    let local = MockClient::new("mock-calibrated", behavior, oracle)?;
    let in_process = sample_responses(&local, &prompt, 6, &params)?;
    let same = over_http
        .raw
        .iter()
        .zip(&in_process.raw)
        .all(|(a, b)| a.text == b.text);
    println!("\ntransport-independent: {same}");
    println!(
        "server handled {} requests; client audit logged {} events",
        server.request_count(),
        http.audit_snapshot().transport_entry_count()
    );
    Ok(())
}
