//! Batch experiment driver: a declarative config file plus five commands
//! (`synth`, `train`, `eval-whitebox`, `eval-blackbox`, `report`) that
//! together reproduce the full grid structure of the two result tables on
//! synthetic data, or on replayed response archives.
//!
//! Every artifact under the run directory is a pure function of the config
//! and seed. Manifests and reports carry no timestamps, so reruns with the
//! same inputs produce byte-identical files; only audit logs record wall
//! time.

mod blackbox;
mod report;
mod synth;
mod train;
mod whitebox;

pub use blackbox::{
    cmd_eval_blackbox, read_blackbox_report, BlackboxCell, BlackboxReport, BlackboxRow,
};
pub use report::cmd_report;
pub use synth::cmd_synth;
pub use train::{checkpoint_name, cmd_train, TrainSummary};
pub use whitebox::{
    cell_key, cmd_eval_whitebox, read_whitebox_report, WhiteboxCell, WhiteboxReport, WhiteboxRow,
    WHITEBOX_METRICS,
};

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Decoder evaluation method, one axis of a white-box report column group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    McDropout,
    Ensemble,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::McDropout => "mc_dropout",
            Method::Ensemble => "ensemble",
        }
    }
}

/// Whether each decoder or prompt handles one task or a whole category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tasking {
    Single,
    Multi,
}

impl Tasking {
    pub fn as_str(&self) -> &'static str {
        match self {
            Tasking::Single => "single",
            Tasking::Multi => "multi",
        }
    }
}

fn default_parallelism() -> usize {
    2
}

/// `[run]`: where outputs go and the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Worker-pool bound for grid cells.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_n_patients() -> usize {
    3000
}

fn default_train_size() -> usize {
    2000
}

fn default_test_size() -> usize {
    1000
}

/// `[cohort]`: synthetic cohort shape. Optional fields fall back to the
/// generator defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSection {
    pub n_patients: usize,
    /// First `train_size` patients feed decoder training.
    pub train_size: usize,
    /// Next `test_size` patients form the held-out evaluation slice.
    pub test_size: usize,
    pub embedding_dim: Option<usize>,
    pub event_vocab_size: Option<usize>,
    pub events_min: Option<usize>,
    pub events_max: Option<usize>,
    pub embedding_noise: Option<f64>,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection {
            n_patients: default_n_patients(),
            train_size: default_train_size(),
            test_size: default_test_size(),
            embedding_dim: None,
            event_vocab_size: None,
            events_min: None,
            events_max: None,
            embedding_noise: None,
        }
    }
}

/// `[decoder]`: the white-box grid and its hyperparameters. Defaults carry
/// the reference settings: dropout 0.5, 5 ensemble members, 10 bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderSection {
    pub methods: Vec<Method>,
    pub tasking: Vec<Tasking>,
    pub hidden_dim: usize,
    pub task_embed_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub ensemble_size: usize,
    /// Stochastic forward passes for MC dropout.
    pub mc_passes: usize,
    /// Calibration bin count M, shared by ECE and aECE.
    pub bins: usize,
}

impl Default for DecoderSection {
    fn default() -> Self {
        DecoderSection {
            methods: vec![Method::Baseline, Method::McDropout, Method::Ensemble],
            tasking: vec![Tasking::Single, Tasking::Multi],
            hidden_dim: 64,
            task_embed_dim: 16,
            dropout: 0.5,
            learning_rate: 1e-3,
            epochs: 8,
            batch_size: 64,
            ensemble_size: 5,
            mc_passes: 20,
            bins: 10,
        }
    }
}

/// One entry of `[[blackbox.clients]]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientSection {
    pub name: String,
    /// "mock" (in-process responder) or "http" (chat-completions endpoint).
    pub kind: String,
    // http fields
    pub base_url: Option<String>,
    pub model: Option<String>,
    /// Environment variable holding the bearer token; keys never appear in
    /// configs or flags directly.
    pub api_key_env: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    // mock fields
    pub accuracy_signal: Option<f64>,
    pub noise_temperature: Option<f64>,
    pub invalid_rate: Option<f64>,
    pub behavior_seed: Option<u64>,
}

/// `[blackbox]`: the sampled-response grid. Defaults carry the reference
/// settings: n = 5 responses, 100 records per category, at least 12
/// positives per task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BlackboxSection {
    pub clients: Vec<ClientSection>,
    pub n_responses: usize,
    pub records_per_category: usize,
    pub min_positives: usize,
    pub max_draws: usize,
    pub tasking: Vec<Tasking>,
    /// Token budget for each rendered narrative.
    pub narrative_budget: usize,
    pub temperature: f64,
    /// Also score the cross-client combined response sets (needs >= 2
    /// clients).
    pub ensemble: bool,
}

impl Default for BlackboxSection {
    fn default() -> Self {
        BlackboxSection {
            clients: Vec::new(),
            n_responses: 5,
            records_per_category: 100,
            min_positives: 12,
            max_draws: 10_000,
            tasking: vec![Tasking::Single, Tasking::Multi],
            narrative_budget: 3000,
            temperature: 1.0,
            ensemble: true,
        }
    }
}

/// The declarative experiment file (TOML). Sections not needed by a given
/// command may be omitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub run: RunSection,
    #[serde(default)]
    pub cohort: CohortSection,
    #[serde(default)]
    pub decoder: DecoderSection,
    #[serde(default)]
    pub blackbox: BlackboxSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.parallelism == 0 {
            return Err(Error::InvalidConfig("parallelism must be >= 1".into()));
        }
        let c = &self.cohort;
        if c.n_patients == 0 {
            return Err(Error::InvalidConfig("n_patients must be >= 1".into()));
        }
        if c.train_size + c.test_size > c.n_patients {
            return Err(Error::InvalidConfig(format!(
                "train_size + test_size = {} exceeds n_patients = {}",
                c.train_size + c.test_size,
                c.n_patients
            )));
        }
        let d = &self.decoder;
        if d.methods.is_empty() || d.tasking.is_empty() {
            return Err(Error::InvalidConfig("decoder grid must be non-empty".into()));
        }
        if d.ensemble_size == 0 || d.mc_passes == 0 || d.bins == 0 {
            return Err(Error::InvalidConfig(
                "ensemble_size, mc_passes, and bins must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&d.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1)",
                d.dropout
            )));
        }
        let b = &self.blackbox;
        if b.tasking.is_empty() {
            return Err(Error::InvalidConfig("blackbox tasking list is empty".into()));
        }
        if b.n_responses == 0 {
            return Err(Error::InvalidConfig("n_responses must be >= 1".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for client in &b.clients {
            if client.name.is_empty() || client.name.contains(['/', ':']) {
                return Err(Error::InvalidConfig(format!(
                    "client name {:?} must be non-empty without '/' or ':'",
                    client.name
                )));
            }
            if !names.insert(client.name.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate client name {}",
                    client.name
                )));
            }
            match client.kind.as_str() {
                "mock" => {}
                "http" => {
                    if client.base_url.is_none() || client.model.is_none() {
                        return Err(Error::InvalidConfig(format!(
                            "http client {} needs base_url and model",
                            client.name
                        )));
                    }
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "client kind {other:?} (expected \"mock\" or \"http\")"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Well-known file locations under one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> RunPaths {
        RunPaths { root: root.into() }
    }

    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings.jsonl")
    }

    pub fn concepts(&self) -> PathBuf {
        self.root.join("concepts.tsv")
    }

    pub fn oracle(&self) -> PathBuf {
        self.root.join("oracle.json")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn archives(&self) -> PathBuf {
        self.root.join("archives")
    }

    pub fn archive_meta(&self) -> PathBuf {
        self.archives().join("meta.json")
    }

    pub fn audit(&self) -> PathBuf {
        self.root.join("audit.jsonl")
    }

    pub fn whitebox_json(&self) -> PathBuf {
        self.root.join("eval_whitebox.json")
    }

    pub fn whitebox_csv(&self) -> PathBuf {
        self.root.join("eval_whitebox.csv")
    }

    pub fn blackbox_json(&self) -> PathBuf {
        self.root.join("eval_blackbox.json")
    }

    pub fn blackbox_csv(&self) -> PathBuf {
        self.root.join("eval_blackbox.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join(format!("manifest_{command}.json"))
    }
}

/// Summary of one command run: the seed it used and the content hash of
/// every file it wrote. Deliberately timestamp-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub config_echo: BTreeMap<String, String>,
    /// Relative file name -> sha256 of contents.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            config_echo: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }

    pub fn echo(&mut self, key: &str, value: impl ToString) {
        self.config_echo.insert(key.to_string(), value.to_string());
    }

    /// Hashes `path` and records it under its name relative to `root`.
    pub fn add_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let name = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/");
        self.files.insert(name, sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_pretty(path, self)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
        if manifest.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaMismatch(format!(
                "manifest schema {} (expected {})",
                manifest.schema_version, REPORT_SCHEMA_VERSION
            )));
        }
        Ok(manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

pub(crate) fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::SchemaMismatch(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Stable per-cell seed: the run seed XOR the first 8 bytes of
/// sha256(tag). Distinct tags give unrelated streams; the same tag under
/// the same run seed always gives the same value.
pub(crate) fn stable_seed(base: u64, tag: &str) -> u64 {
    let digest = Sha256::digest(tag.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    base ^ u64::from_be_bytes(bytes)
}

/// Runs jobs on a bounded worker pool, preserving input order in the
/// results. Each job owns its outputs; nothing is shared between cells.
pub(crate) fn run_pool<T, F>(jobs: Vec<F>, bound: usize) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let n = jobs.len();
    if n == 0 {
        return Vec::new();
    }
    let slots: Vec<Mutex<Option<F>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = bound.max(1).min(n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().expect("job slot").take().expect("job taken once");
                *results[i].lock().expect("result slot") = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("pool done").expect("job ran"))
        .collect()
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    /// Desk-scale config for command tests: 30 tiny patients, 24-dim
    /// embeddings, short narratives.
    pub(crate) fn tiny_config(root: &Path, seed: u64) -> ExperimentConfig {
        let mut config: ExperimentConfig =
            toml::from_str("[run]\nout_dir = \"placeholder\"\n").unwrap();
        config.run = RunSection {
            out_dir: root.to_path_buf(),
            seed,
            parallelism: 2,
        };
        config.cohort.n_patients = 30;
        config.cohort.train_size = 20;
        config.cohort.test_size = 10;
        config.cohort.embedding_dim = Some(24);
        config.cohort.events_min = Some(6);
        config.cohort.events_max = Some(12);
        config.decoder.hidden_dim = 8;
        config.decoder.epochs = 2;
        config.decoder.ensemble_size = 2;
        config.decoder.mc_passes = 4;
        config.blackbox.narrative_budget = 600;
        config.blackbox.records_per_category = 8;
        config.blackbox.min_positives = 1;
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config: ExperimentConfig = toml::from_str("[run]\nout_dir = \"runs/x\"\n").unwrap();
        config.validate().unwrap();
        assert_eq!(config.run.seed, 0);
        assert_eq!(config.decoder.ensemble_size, 5);
        assert_eq!(config.decoder.dropout, 0.5);
        assert_eq!(config.blackbox.n_responses, 5);
        assert_eq!(config.blackbox.records_per_category, 100);
        assert_eq!(config.blackbox.min_positives, 12);
        assert_eq!(config.decoder.methods.len(), 3);
    }

    #[test]
    fn bad_configs_are_rejected() {
        let over: ExperimentConfig = toml::from_str(
            "[run]\nout_dir = \"x\"\n[cohort]\nn_patients = 10\ntrain_size = 8\ntest_size = 8\n",
        )
        .unwrap();
        assert!(matches!(over.validate(), Err(Error::InvalidConfig(_))));

        let empty_grid: ExperimentConfig =
            toml::from_str("[run]\nout_dir = \"x\"\n[decoder]\nmethods = []\n").unwrap();
        assert!(matches!(empty_grid.validate(), Err(Error::InvalidConfig(_))));

        let bad_client: ExperimentConfig = toml::from_str(
            "[run]\nout_dir = \"x\"\n[[blackbox.clients]]\nname = \"a\"\nkind = \"http\"\n",
        )
        .unwrap();
        assert!(matches!(bad_client.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn stable_seed_is_stable_and_tag_sensitive() {
        assert_eq!(stable_seed(7, "cell"), stable_seed(7, "cell"));
        assert_ne!(stable_seed(7, "cell-a"), stable_seed(7, "cell-b"));
        assert_ne!(stable_seed(7, "cell"), stable_seed(8, "cell"));
    }

    #[test]
    fn pool_preserves_order() {
        let jobs: Vec<_> = (0..17)
            .map(|i| {
                move || {
                    std::thread::sleep(std::time::Duration::from_millis((17 - i) % 3));
                    i * 10
                }
            })
            .collect();
        let results = run_pool(jobs, 4);
        assert_eq!(results, (0..17).map(|i| i * 10).collect::<Vec<_>>());
    }
}
