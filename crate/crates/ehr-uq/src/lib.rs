//! Uncertainty quantification for clinical-outcome prediction over
//! longitudinal medical code sequences.
//!
//! Two regimes are covered:
//!
//! * **White-box**: a trainable two-layer decoder over fixed patient
//!   embeddings, with calibration metrics (Brier, NLL, ECE, aECE, AUROC),
//!   deep ensembles, Monte Carlo dropout, and multi-task decoding via
//!   learned task embeddings.
//! * **Black-box**: repeated sampling of a chat-completion model over
//!   prompts built from natural-language patient timelines, class-entropy
//!   uncertainty scoring, cross-model response ensembling, and multi-task
//!   prompting.
//!
//! Everything runs at desk scale against a synthetic cohort generator and a
//! controllable mock responder, so the full experiment loop is reproducible
//! offline.
//!
//! ## Examples
//!
//! Each major capability has a runnable example:
//!
//! ```bash
//! cargo run --example render_narrative     # codes -> natural-language timeline
//! cargo run --example calibration_metrics  # Brier/NLL/ECE/aECE/AUROC + reliability bins
//! cargo run --example train_decoder        # train a single-task decoder on synthetic data
//! cargo run --example deep_ensemble        # 5-member ensemble vs. its members
//! cargo run --example mc_dropout           # stochastic inference passes
//! cargo run --example multi_task_decoder   # shared decoder with per-task embeddings
//! cargo run --example blackbox_uncertainty # prompt -> sample -> class entropy
//! cargo run --example client_ensemble      # combining response sets from two models
//! cargo run --example mock_server_http     # HTTP client against the local mock server
//! cargo run --example replay_archive       # re-score archived responses offline
//! ```
//!
//! The `ehr-uq` binary drives the same machinery as batch experiments
//! (`synth`, `train`, `eval-whitebox`, `eval-blackbox`, `report`).

pub mod blackbox;
pub mod decoder;
pub mod ehr;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
