//! Task-conditioned probe decoder over frozen record embeddings.
//!
//! A two-layer MLP maps the concatenation of a record embedding and a
//! learned task embedding to a positive-class probability. The same decoder
//! serves single-task probes (one task row) and multi-task probes (one row
//! per task, shared trunk). Deep ensembles and MC dropout layer on top of
//! the plain forward pass.
//!
//! All randomness flows through seeds carried in the config or passed
//! explicitly, so training and stochastic inference replay exactly.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write as IoWrite};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ehr::TaskId;
use crate::error::{Error, Result};
use crate::metrics::ProbabilisticPrediction;

const CHECKPOINT_VERSION: u32 = 1;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const TASK_EMBED_STD: f64 = 0.1;

/// Decoder architecture and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub input_dim: usize,
    pub task_embed_dim: usize,
    pub hidden_dim: usize,
    /// Hidden-layer dropout probability in [0, 1); 0 disables dropout.
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            input_dim: 768,
            task_embed_dim: 16,
            hidden_dim: 256,
            dropout: 0.5,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.task_embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::InvalidConfig(
                "decoder dimensions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.learning_rate <= 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rate and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One record of the frozen-embedding training format: an embedding vector
/// plus binary labels for the tasks this record participates in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub record_id: String,
    pub embedding: Vec<f64>,
    pub labels: BTreeMap<TaskId, u8>,
}

/// Per-epoch mean training loss, in epoch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: DecoderConfig,
    tasks: Vec<TaskId>,
    params: Vec<f64>,
}

/// A trained (or freshly initialized) probe decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    config: DecoderConfig,
    tasks: Vec<TaskId>,
    /// Flat parameter vector: W1 rows, b1, w2, b2, then task-embedding rows.
    params: Vec<f64>,
}

/// Flat-vector offsets for one decoder shape.
#[derive(Clone, Copy)]
struct Layout {
    in_full: usize,
    hidden: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    task_embeds: usize,
    total: usize,
}

impl Layout {
    fn new(config: &DecoderConfig, n_tasks: usize) -> Layout {
        let in_full = config.input_dim + config.task_embed_dim;
        let hidden = config.hidden_dim;
        let w1 = 0;
        let b1 = w1 + hidden * in_full;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden;
        let task_embeds = b2 + 1;
        let total = task_embeds + n_tasks * config.task_embed_dim;
        Layout {
            in_full,
            hidden,
            w1,
            b1,
            w2,
            b2,
            task_embeds,
            total,
        }
    }

    fn w1_row(&self, h: usize) -> std::ops::Range<usize> {
        let start = self.w1 + h * self.in_full;
        start..start + self.in_full
    }

    fn task_row(&self, idx: usize, embed_dim: usize) -> std::ops::Range<usize> {
        let start = self.task_embeds + idx * embed_dim;
        start..start + embed_dim
    }
}

/// Dot product with four independent accumulators. The fixed association
/// order keeps results reproducible while letting the optimizer pipeline
/// the multiply-adds.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// y += alpha * x, unrolled to match `dot`.
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    let chunks = x.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        y[j] += alpha * x[j];
        y[j + 1] += alpha * x[j + 1];
        y[j + 2] += alpha * x[j + 2];
        y[j + 3] += alpha * x[j + 3];
    }
    for j in 4 * chunks..x.len() {
        y[j] += alpha * x[j];
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

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Derives an independent ChaCha8 stream from a base seed and two indices.
pub(crate) fn derive_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&base.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..32].copy_from_slice(&0x5a5a_1234_u64.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Scratch buffers reused across forward/backward passes of one decoder.
struct Workspace {
    x: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden_post: Vec<f64>,
    mask: Vec<bool>,
}

impl Workspace {
    fn new(layout: &Layout) -> Workspace {
        Workspace {
            x: vec![0.0; layout.in_full],
            hidden_pre: vec![0.0; layout.hidden],
            hidden_post: vec![0.0; layout.hidden],
            mask: vec![true; layout.hidden],
        }
    }
}

impl Decoder {
    /// Initializes a decoder with He-style uniform trunk weights, zero
    /// biases, and Gaussian task embeddings, all drawn from `config.seed`.
    pub fn new(config: DecoderConfig, tasks: Vec<TaskId>) -> Result<Decoder> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("decoder needs at least one task".into()));
        }
        let layout = Layout::new(&config, tasks.len());
        let mut rng = derive_rng(config.seed, 0, 0);
        let mut params = vec![0.0f64; layout.total];

        let bound1 = (6.0 / layout.in_full as f64).sqrt();
        for p in &mut params[layout.w1..layout.b1] {
            *p = rng.random_range(-bound1..bound1);
        }
        // b1 stays zero.
        let bound2 = (6.0 / layout.hidden as f64).sqrt();
        for p in &mut params[layout.w2..layout.b2] {
            *p = rng.random_range(-bound2..bound2);
        }
        // b2 stays zero.
        let gauss = rand_distr::Normal::new(0.0, TASK_EMBED_STD)
            .expect("constant std is valid");
        for p in &mut params[layout.task_embeds..] {
            *p = rng.sample(gauss);
        }
        Ok(Decoder {
            config,
            tasks,
            params,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    /// Tasks in embedding-row order.
    pub fn tasks(&self) -> &[TaskId] {
        &self.tasks
    }

    /// Flat parameter vector; the gradient from
    /// [`Decoder::training_loss_and_grad`] aligns with it element-wise.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config, self.tasks.len())
    }

    fn task_index(&self, task: &TaskId) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    /// Forward pass to a logit. With a dropout RNG, an inverted-dropout mask
    /// scaled by 1/(1-p) is applied to the hidden activations; the mask
    /// draws stay in `ws.mask`. Dropout 0 skips masking entirely so the
    /// stochastic path reproduces the deterministic one bit for bit.
    fn forward_logit(
        &self,
        params: &[f64],
        embedding: &[f64],
        task_idx: usize,
        ws: &mut Workspace,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let layout = self.layout();
        ws.x[..self.config.input_dim].copy_from_slice(embedding);
        ws.x[self.config.input_dim..]
            .copy_from_slice(&params[layout.task_row(task_idx, self.config.task_embed_dim)]);

        for h in 0..layout.hidden {
            let pre = dot(&params[layout.w1_row(h)], &ws.x) + params[layout.b1 + h];
            ws.hidden_pre[h] = pre;
            ws.hidden_post[h] = pre.max(0.0);
        }
        match dropout_rng {
            Some(rng) if self.config.dropout > 0.0 => {
                let keep = 1.0 - self.config.dropout;
                let scale = 1.0 / keep;
                for h in 0..layout.hidden {
                    let kept = rng.random::<f64>() >= self.config.dropout;
                    ws.mask[h] = kept;
                    ws.hidden_post[h] = if kept { ws.hidden_post[h] * scale } else { 0.0 };
                }
            }
            _ => ws.mask.fill(true),
        }
        dot(&params[layout.w2..layout.b2], &ws.hidden_post) + params[layout.b2]
    }

    /// Deterministic positive-class probability (dropout off).
    pub fn predict(&self, embedding: &[f64], task: &TaskId) -> Result<f64> {
        if embedding.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: embedding.len(),
            });
        }
        let task_idx = self.task_index(task)?;
        let mut ws = Workspace::new(&self.layout());
        Ok(sigmoid(self.forward_logit(&self.params, embedding, task_idx, &mut ws, None)))
    }

    /// One stochastic forward pass per element of the returned vector, with
    /// dropout active. Pass `t` indexes the dropout stream so a fixed
    /// `(seed, t)` pair always reproduces the same mask.
    pub fn predict_mc(
        &self,
        embedding: &[f64],
        task: &TaskId,
        passes: usize,
        seed: u64,
    ) -> Result<Vec<f64>> {
        if embedding.len() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: embedding.len(),
            });
        }
        if passes == 0 {
            return Err(Error::InvalidConfig("MC dropout needs passes >= 1".into()));
        }
        let task_idx = self.task_index(task)?;
        let mut ws = Workspace::new(&self.layout());
        Ok((0..passes)
            .map(|t| {
                let mut rng = derive_rng(seed, 1, t as u64);
                sigmoid(self.forward_logit(
                    &self.params,
                    embedding,
                    task_idx,
                    &mut ws,
                    Some(&mut rng),
                ))
            })
            .collect())
    }

    /// MC-dropout point estimate: the mean over `passes` stochastic passes.
    pub fn predict_mc_mean(
        &self,
        embedding: &[f64],
        task: &TaskId,
        passes: usize,
        seed: u64,
    ) -> Result<f64> {
        let samples = self.predict_mc(embedding, task, passes, seed)?;
        Ok(samples.iter().sum::<f64>() / samples.len() as f64)
    }

    /// Deterministic predictions for every record carrying a label for
    /// `task`; records without that label are skipped.
    pub fn predictions_for_task(
        &self,
        records: &[EmbeddingRecord],
        task: &TaskId,
    ) -> Result<Vec<ProbabilisticPrediction>> {
        let task_idx = self.task_index(task)?;
        let mut ws = Workspace::new(&self.layout());
        let mut out = Vec::new();
        for rec in records {
            let Some(&y) = rec.labels.get(task) else {
                continue;
            };
            if rec.embedding.len() != self.config.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.input_dim,
                    got: rec.embedding.len(),
                });
            }
            let logit = self.forward_logit(&self.params, &rec.embedding, task_idx, &mut ws, None);
            out.push(ProbabilisticPrediction::new(
                rec.record_id.clone(),
                sigmoid(logit),
                y,
            )?);
        }
        Ok(out)
    }

    /// Builds the (record, task) training pairs this decoder can learn from.
    fn training_pairs(&self, records: &[EmbeddingRecord]) -> Result<Vec<(usize, usize, f64)>> {
        let mut pairs = Vec::new();
        for (ri, rec) in records.iter().enumerate() {
            if rec.embedding.len() != self.config.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: self.config.input_dim,
                    got: rec.embedding.len(),
                });
            }
            for (ti, task) in self.tasks.iter().enumerate() {
                if let Some(&y) = rec.labels.get(task) {
                    if y > 1 {
                        return Err(Error::InvalidLabel(y));
                    }
                    pairs.push((ri, ti, f64::from(y)));
                }
            }
        }
        if pairs.is_empty() {
            return Err(Error::EmptyData);
        }
        Ok(pairs)
    }

    /// Mean binary cross-entropy over all labeled (record, task) pairs and
    /// its analytic gradient with respect to [`Decoder::params`].
    ///
    /// With `dropout_seed = Some(s)` the hidden-layer dropout masks are
    /// regenerated from `s` on every call, so two calls at perturbed
    /// parameters see identical masks (which is what a finite-difference
    /// check of the stochastic loss requires). `None` disables dropout.
    pub fn training_loss_and_grad(
        &self,
        records: &[EmbeddingRecord],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<f64>)> {
        let pairs = self.training_pairs(records)?;
        let mut grad = vec![0.0f64; self.params.len()];
        let mut ws = Workspace::new(&self.layout());
        let mut rng = dropout_seed.map(|s| derive_rng(s, 2, 0));
        let loss = self.accumulate_batch(
            &self.params,
            records,
            &pairs,
            &mut grad,
            &mut ws,
            rng.as_mut(),
        );
        let scale = 1.0 / pairs.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        Ok((loss * scale, grad))
    }

    /// Accumulates summed loss and gradient for `pairs` into `grad`.
    fn accumulate_batch(
        &self,
        params: &[f64],
        records: &[EmbeddingRecord],
        pairs: &[(usize, usize, f64)],
        grad: &mut [f64],
        ws: &mut Workspace,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> f64 {
        let layout = self.layout();
        let keep_scale = if self.config.dropout > 0.0 {
            1.0 / (1.0 - self.config.dropout)
        } else {
            1.0
        };
        let mut loss_sum = 0.0;
        let mut dh = vec![0.0f64; layout.hidden];
        for &(ri, ti, y) in pairs {
            let logit = self.forward_logit(
                params,
                &records[ri].embedding,
                ti,
                ws,
                dropout_rng.as_deref_mut(),
            );
            loss_sum += bce_from_logit(logit, y);
            let dlogit = sigmoid(logit) - y;

            // Output layer.
            axpy(dlogit, &ws.hidden_post, &mut grad[layout.w2..layout.b2]);
            grad[layout.b2] += dlogit;

            // Hidden layer through dropout and ReLU.
            let dropout_on = dropout_rng.is_some() && self.config.dropout > 0.0;
            for h in 0..layout.hidden {
                let mut d = dlogit * params[layout.w2 + h];
                if dropout_on {
                    d = if ws.mask[h] { d * keep_scale } else { 0.0 };
                }
                if ws.hidden_pre[h] <= 0.0 {
                    d = 0.0;
                }
                dh[h] = d;
            }

            // Input layer and the task-embedding slice of x.
            let te_range = layout.task_row(ti, self.config.task_embed_dim);
            for h in 0..layout.hidden {
                let d = dh[h];
                if d == 0.0 {
                    continue;
                }
                axpy(d, &ws.x, &mut grad[layout.w1_row(h)]);
                grad[layout.b1 + h] += d;
                let w1_embed = layout.w1_row(h).start + self.config.input_dim;
                axpy(
                    d,
                    &params[w1_embed..w1_embed + self.config.task_embed_dim],
                    &mut grad[te_range.clone()],
                );
            }
        }
        loss_sum
    }

    /// Trains in place with mini-batch Adam. The shuffle order, dropout
    /// masks, and therefore the final parameters depend only on the config
    /// (including its seed) and the record order.
    pub fn train(&mut self, records: &[EmbeddingRecord]) -> Result<TrainingTrace> {
        let pairs = self.training_pairs(records)?;
        let layout = self.layout();
        let mut ws = Workspace::new(&layout);
        let mut adam_m = vec![0.0f64; self.params.len()];
        let mut adam_v = vec![0.0f64; self.params.len()];
        let mut grad = vec![0.0f64; self.params.len()];
        let mut step = 0u64;
        let mut epoch_losses = Vec::with_capacity(self.config.epochs);
        let mut order: Vec<usize> = (0..pairs.len()).collect();

        for epoch in 0..self.config.epochs {
            let mut rng = derive_rng(self.config.seed, 3, epoch as u64);
            // Fisher-Yates on the pair order.
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for (batch_idx, chunk) in order.chunks(self.config.batch_size).enumerate() {
                let batch: Vec<(usize, usize, f64)> =
                    chunk.iter().map(|&i| pairs[i]).collect();
                grad.fill(0.0);
                let mut dropout_rng = (self.config.dropout > 0.0).then(|| {
                    derive_rng(
                        self.config.seed,
                        4 + epoch as u64,
                        batch_idx as u64,
                    )
                });
                let loss_sum = self.accumulate_batch(
                    &self.params,
                    records,
                    &batch,
                    &mut grad,
                    &mut ws,
                    dropout_rng.as_mut(),
                );
                epoch_loss += loss_sum;
                let scale = 1.0 / batch.len() as f64;
                step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
                for i in 0..self.params.len() {
                    let g = grad[i] * scale;
                    adam_m[i] = ADAM_BETA1 * adam_m[i] + (1.0 - ADAM_BETA1) * g;
                    adam_v[i] = ADAM_BETA2 * adam_v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = adam_m[i] / bc1;
                    let v_hat = adam_v[i] / bc2;
                    self.params[i] -= self.config.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
            epoch_losses.push(epoch_loss / pairs.len() as f64);
        }
        Ok(TrainingTrace { epoch_losses })
    }

    /// Serializes config, task order, and parameters as versioned JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tasks: self.tasks.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Decoder> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::SchemaMismatch(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                expected: CHECKPOINT_VERSION,
                got: ckpt.version,
            });
        }
        let layout = Layout::new(&ckpt.config, ckpt.tasks.len());
        if ckpt.params.len() != layout.total {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint parameter count {} does not match shape {}",
                ckpt.params.len(),
                layout.total
            )));
        }
        ckpt.config.validate()?;
        Ok(Decoder {
            config: ckpt.config,
            tasks: ckpt.tasks,
            params: ckpt.params,
        })
    }
}

/// A deep ensemble: independently initialized and trained decoders whose
/// probabilities are averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepEnsemble {
    members: Vec<Decoder>,
}

impl DeepEnsemble {
    /// Trains `k` members that differ only in initialization and data-order
    /// seed (member i uses `config.seed + i`).
    pub fn train(
        config: &DecoderConfig,
        tasks: &[TaskId],
        records: &[EmbeddingRecord],
        k: usize,
    ) -> Result<DeepEnsemble> {
        if k == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let mut members = Vec::with_capacity(k);
        for i in 0..k {
            let mut member_config = config.clone();
            member_config.seed = config.seed.wrapping_add(i as u64);
            let mut member = Decoder::new(member_config, tasks.to_vec())?;
            member.train(records)?;
            members.push(member);
        }
        Ok(DeepEnsemble { members })
    }

    pub fn from_members(members: Vec<Decoder>) -> Result<DeepEnsemble> {
        if members.is_empty() {
            return Err(Error::EmptyEnsemble);
        }
        let tasks = members[0].tasks.clone();
        if members.iter().any(|m| m.tasks != tasks) {
            return Err(Error::InvalidConfig(
                "ensemble members must share the same task list".into(),
            ));
        }
        Ok(DeepEnsemble { members })
    }

    pub fn members(&self) -> &[Decoder] {
        &self.members
    }

    /// Mean of the member probabilities.
    pub fn predict(&self, embedding: &[f64], task: &TaskId) -> Result<f64> {
        let mut sum = 0.0;
        for m in &self.members {
            sum += m.predict(embedding, task)?;
        }
        Ok(sum / self.members.len() as f64)
    }

    /// Ensemble-mean predictions for every record labeled for `task`.
    pub fn predictions_for_task(
        &self,
        records: &[EmbeddingRecord],
        task: &TaskId,
    ) -> Result<Vec<ProbabilisticPrediction>> {
        let mut per_member = Vec::with_capacity(self.members.len());
        for m in &self.members {
            per_member.push(m.predictions_for_task(records, task)?);
        }
        let first = &per_member[0];
        let mut out = Vec::with_capacity(first.len());
        for (i, base) in first.iter().enumerate() {
            let mean = per_member.iter().map(|v| v[i].p).sum::<f64>()
                / per_member.len() as f64;
            out.push(ProbabilisticPrediction::new(
                base.record_id.clone(),
                mean,
                base.y,
            )?);
        }
        Ok(out)
    }
}

/// Reads embedding records: JSONL lines `{record_id, embedding, labels}`.
pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for rec in records {
        writeln!(file, "{}", serde_json::to_string(rec).expect("record serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
