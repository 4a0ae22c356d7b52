//! Replays an archived black-box evaluation with no model in the loop and
//! shows the regenerated report is byte-identical to the live one.
//!
//! Live runs archive every raw generation. Replay re-parses and re-scores
//! those texts, so anyone can audit a result without credentials, network,
//! or the original model still existing.

use ehr_uq::experiment::{
    cmd_eval_blackbox, cmd_synth, ClientSection, ExperimentConfig, RunPaths, RunSection, Tasking,
};
use ehr_uq::Result;

fn mock_client(name: &str, seed: u64) -> ClientSection {
    ClientSection {
        name: name.to_string(),
        kind: "mock".to_string(),
        base_url: None,
        model: None,
        api_key_env: None,
        timeout_secs: None,
        max_attempts: None,
        accuracy_signal: Some(1.6),
        noise_temperature: None,
        invalid_rate: None,
        behavior_seed: Some(seed),
    }
}

fn main() -> Result<()> {
    let workdir = std::env::temp_dir().join("ehr-uq-replay-example");
    let live_dir = workdir.join("live");
    let replay_dir = workdir.join("replay");
    let _ = std::fs::remove_dir_all(&workdir);

    let mut config = ExperimentConfig {
        run: RunSection { out_dir: live_dir.clone(), seed: 6, parallelism: 2 },
        cohort: Default::default(),
        decoder: Default::default(),
        blackbox: Default::default(),
    };
    config.cohort.n_patients = 40;
    config.cohort.train_size = 0;
    config.cohort.test_size = 0;
    config.cohort.embedding_dim = Some(16);
    config.cohort.events_min = Some(6);
    config.cohort.events_max = Some(12);
    config.blackbox.clients = vec![mock_client("mock-a", 1), mock_client("mock-b", 2)];
    config.blackbox.n_responses = 3;
    config.blackbox.records_per_category = 10;
    config.blackbox.min_positives = 1;
    config.blackbox.tasking = vec![Tasking::Single];

    cmd_synth(&config)?;
    let live = cmd_eval_blackbox(&config, None)?;
    let live_paths = RunPaths::new(&live_dir);
    println!(
        "live run: {} rows, report at {}",
        live.rows.len(),
        live_paths.blackbox_json().display()
    );

    // Same config, new output dir, responses taken from the live archives.
    config.run.out_dir = replay_dir.clone();
    let replayed = cmd_eval_blackbox(&config, Some(&live_paths.archives()))?;
    let replay_paths = RunPaths::new(&replay_dir);

    let live_bytes = std::fs::read(live_paths.blackbox_json()).expect("live report");
    let replay_bytes = std::fs::read(replay_paths.blackbox_json()).expect("replayed report");
    println!("replayed run: {} rows", replayed.rows.len());
    println!("report bytes identical: {}", live_bytes == replay_bytes);

    // The replay audit log exists but records zero transport events.
    let audit = std::fs::read_to_string(replay_paths.audit()).expect("audit log");
    println!("replay transport events: {}", audit.lines().count());
    Ok(())
}
