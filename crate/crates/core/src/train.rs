//! Batching, Adam updates, the epoch loop and per-epoch evaluation.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Gender, Manifest};
use crate::ctc::{ctc_loss, greedy_decode, CtcError};
use crate::features::{extract, FeatureError, FeatureMatrix, FeatureParams};
use crate::metrics::{grouped_scores, MetricsError, ScoreReport, ScoredPair, Unit};
use crate::net::{
    backward, forward, init_params, save_checkpoint, Checkpoint, FeatureBatch, Mode, ModelConfig,
    ModelParams, NetError,
};
use crate::textmap::{encode_text, LabelSequence, Vocabulary};

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_wer,seconds";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("batch_size must be at least 1")]
    BadBatchSize,
    #[error("non-finite gradient; update skipped")]
    NonFiniteGradient,
    #[error("training loss diverged at epoch {epoch}")]
    DivergedLoss {
        epoch: usize,
        history: Vec<EpochRecord>,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Features {
        path: String,
        #[source]
        source: FeatureError,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Validation transcripts shown after each epoch.
    pub callback_sample_count: usize,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Global gradient-norm clip applied before each update.
    pub grad_clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-7,
            seed: 0,
            callback_sample_count: 2,
            checkpoint_every: 10,
            grad_clip_norm: 500.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        let open_unit = |b: f64| b > 0.0 && b < 1.0;
        if !open_unit(self.adam_beta1) || !open_unit(self.adam_beta2) {
            return bad("adam betas must lie in (0, 1)");
        }
        if [self.adam_epsilon, self.grad_clip_norm]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return bad("adam_epsilon and grad_clip_norm must be positive");
        }
        Ok(())
    }
}

/// One utterance with its features and encoded transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedItem {
    pub id: String,
    pub transcript: String,
    pub speaker_id: String,
    pub gender: Gender,
    pub corpus_tag: String,
    pub features: FeatureMatrix,
    pub label: LabelSequence,
}

/// Extracts features for every utterance, in parallel, keeping order.
pub fn prepare(
    m: &Manifest,
    p: &FeatureParams,
    vocab: &Vocabulary,
) -> Result<Vec<PreparedItem>, TrainError> {
    m.utterances
        .par_iter()
        .map(|u| {
            let features = extract(&u.audio_path, p).map_err(|source| TrainError::Features {
                path: u.audio_path.display().to_string(),
                source,
            })?;
            Ok(PreparedItem {
                id: u.id(),
                transcript: u.transcript.clone(),
                speaker_id: u.speaker_id.clone(),
                gender: u.gender,
                corpus_tag: u.corpus_tag.clone(),
                label: encode_text(&u.transcript, vocab),
                features,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: FeatureBatch,
    pub labels: Vec<LabelSequence>,
    /// Positions of the batch items in the source list.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_items(items: &[PreparedItem], indices: Vec<usize>) -> Self {
        let bins = items.first().map_or(0, |it| it.features.num_bins);
        let rows: Vec<(&[f64], usize)> = indices
            .iter()
            .map(|&i| {
                (
                    items[i].features.data.as_slice(),
                    items[i].features.num_frames,
                )
            })
            .collect();
        Self {
            features: FeatureBatch::from_items(&rows, bins),
            labels: indices.iter().map(|&i| items[i].label.clone()).collect(),
            indices,
        }
    }
}

/// Splits `items` into batches of `batch_size`, the last one possibly
/// smaller. With `shuffle` the order is permuted under `(seed, epoch)`.
pub fn make_batches(
    items: &[PreparedItem],
    batch_size: usize,
    seed: u64,
    epoch: usize,
    shuffle: bool,
) -> Result<Vec<Batch>, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    if batch_size == 0 {
        return Err(TrainError::BadBatchSize);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch::from_items(items, c.to_vec()))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Bias-corrected Adam update in place. A gradient with any non-finite
/// entry leaves parameters and state untouched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if !grads.all_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let tensors = params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.tensors.iter_mut().zip(state.v.tensors.iter_mut()));
    for ((p, g), (m, v)) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            p.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
    Ok(())
}

/// Rescales `grads` to at most `max_norm` (global L2); returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut ModelParams, max_norm: f64) -> f64 {
    let norm = grads.l2_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_wer: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.epoch, self.train_loss, self.val_loss, self.val_wer, self.seconds
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    /// Mean CTC loss over items whose label fits in the output frames.
    pub mean_loss: f64,
    pub report: ScoreReport,
    pub hypotheses: Vec<String>,
    /// `(target, prediction)` for the first few items.
    pub samples: Vec<(String, String)>,
}

/// Eval-mode forward, greedy decoding and WER over `items`. Group
/// sub-reports are keyed by `group_of` when given.
pub fn evaluate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    items: &[PreparedItem],
    vocab: &Vocabulary,
    batch_size: usize,
    sample_count: usize,
    group_of: Option<&dyn Fn(&PreparedItem) -> String>,
) -> Result<EvalOutcome, TrainError> {
    let batches = make_batches(items, batch_size, 0, 0, false)?;
    let mut losses = vec![f64::INFINITY; items.len()];
    let mut hypotheses = vec![String::new(); items.len()];
    for b in &batches {
        let (logits, _) = forward(params, model_cfg, &b.features, Mode::Eval)?;
        let r = ctc_loss(&logits, &b.labels)?;
        for ((&i, loss), hyp) in b
            .indices
            .iter()
            .zip(r.losses)
            .zip(greedy_decode(&logits, vocab))
        {
            losses[i] = loss;
            hypotheses[i] = hyp;
        }
    }
    let feasible: Vec<f64> = losses.iter().copied().filter(|l| l.is_finite()).collect();
    let mean_loss = if feasible.is_empty() {
        f64::INFINITY
    } else {
        feasible.iter().sum::<f64>() / feasible.len() as f64
    };
    let pairs: Vec<ScoredPair> = items
        .iter()
        .zip(&hypotheses)
        .map(|(it, h)| ScoredPair {
            id: it.id.clone(),
            reference: it.transcript.clone(),
            hypothesis: h.clone(),
            group: group_of.map_or_else(String::new, |g| g(it)),
        })
        .collect();
    let mut report = grouped_scores(&pairs, Unit::Word)?;
    if group_of.is_none() {
        report.groups.clear();
    }
    let samples = items
        .iter()
        .zip(&hypotheses)
        .take(sample_count)
        .map(|(it, h)| (it.transcript.clone(), h.clone()))
        .collect();
    Ok(EvalOutcome {
        mean_loss,
        report,
        hypotheses,
        samples,
    })
}

/// SplitMix64 finalizer, used to derive per-step dropout seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where training artifacts go and what to embed in checkpoints.
#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub features: FeatureParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub skipped_steps: usize,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HISTORY_HEADER}")?;
    for r in history {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()
}

/// Trains from freshly initialized parameters. Each epoch runs shuffled
/// batches through forward, CTC loss, backward, clipping and Adam, then
/// evaluates on `val` and calls `on_epoch`. With `output` set, the history
/// CSV is rewritten after every epoch and checkpoints are saved.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    train: &[PreparedItem],
    val: &[PreparedItem],
    vocab: &Vocabulary,
    output: Option<&OutputSpec>,
    mut on_epoch: impl FnMut(&EpochRecord, &EvalOutcome),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyManifest);
    }
    if let Some(o) = output {
        fs::create_dir_all(&o.dir)?;
    }
    let checkpoint = |params: &ModelParams, name: &str| -> Result<(), TrainError> {
        if let Some(o) = output {
            let ck = Checkpoint {
                model: model_cfg.clone(),
                features: o.features.clone(),
                vocabulary: vocab.as_string(),
                params: params.clone(),
            };
            save_checkpoint(&o.dir.join(name), &ck)?;
        }
        Ok(())
    };

    let mut params = init_params(model_cfg, cfg.seed);
    let mut state = OptimizerState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step: u64 = 0;
    let mut skipped_steps = 0;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in make_batches(train, cfg.batch_size, cfg.seed, epoch, true)? {
            step += 1;
            let mode = Mode::Train {
                seed: mix(cfg.seed ^ mix(step)),
            };
            let (logits, mut tape) = forward(&params, model_cfg, &batch.features, mode)?;
            let r = ctc_loss(&logits, &batch.labels)?;
            let feasible = batch.labels.len() - r.num_infeasible();
            if r.num_infeasible() > 0 {
                log::warn!(
                    "epoch {epoch}: {} item(s) too long for their frames",
                    r.num_infeasible()
                );
            }
            if feasible == 0 {
                continue;
            }
            for (l, &bad) in r.losses.iter().zip(&r.infeasible) {
                if !bad {
                    loss_sum += l;
                    loss_count += 1;
                }
            }
            let scale = 1.0 / feasible as f64;
            let d_logits: Vec<f64> = r.d_logits.iter().map(|g| g * scale).collect();
            let mut grads = backward(&mut tape, &params, model_cfg, &d_logits)?;
            clip_grad_norm(&mut grads, cfg.grad_clip_norm);
            match adam_step(&mut params, &grads, &mut state, cfg) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient) => {
                    skipped_steps += 1;
                    log::warn!("epoch {epoch}: skipped update with non-finite gradient");
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        };

        let eval = evaluate(
            &params,
            model_cfg,
            val,
            vocab,
            cfg.batch_size,
            cfg.callback_sample_count,
            None,
        )?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.mean_loss,
            val_wer: eval.report.error_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_wer {:.2}%",
            record.train_loss,
            record.val_loss,
            record.val_wer
        );
        on_epoch(&record, &eval);
        history.push(record);
        if let Some(o) = output {
            write_history(&o.dir.join("history.csv"), &history)?;
        }
        if train_loss.is_nan() {
            return Err(TrainError::DivergedLoss { epoch, history });
        }
        if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
            checkpoint(&params, &format!("epoch_{epoch:04}.ckpt"))?;
        }
    }
    checkpoint(&params, "model.ckpt")?;
    Ok(TrainOutcome {
        params,
        history,
        skipped_steps,
    })
}
