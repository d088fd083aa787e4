//! Acoustic model: two strided 2-D convolutions with ReLU, a stack of
//! (bidirectional) GRU layers with dropout on their outputs, and a linear
//! projection to per-frame class logits.
//!
//! Each batch item is evaluated on its own true length only, so padded
//! frames never leak into real ones. Logit rows past an item's output
//! length are zero.

mod checkpoint;
mod gradcheck;
mod layers;
mod params;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, TensorCheck};
pub use params::{init_params, tensor_specs, ModelParams, Tensor, TensorSpec};

use layers::{dense_backward, dense_forward, same_len, ConvShape, Gru, GruTrace};
use params::{gru_index, output_index, CONV1_BIAS, CONV1_KERNEL, CONV2_BIAS, CONV2_KERNEL};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("tape was already consumed by a backward pass")]
    TapeConsumed,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint {path}: {reason}")]
    BadCheckpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub conv_filters: usize,
    /// (time, frequency)
    pub conv1_kernel: (usize, usize),
    pub conv1_stride: (usize, usize),
    pub conv2_kernel: (usize, usize),
    pub conv2_stride: (usize, usize),
    pub rnn_layers: usize,
    pub rnn_units: usize,
    pub rnn_bidirectional: bool,
    pub dropout_rate: f64,
    pub vocab_size_with_blank: usize,
    pub feature_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            conv_filters: 16,
            conv1_kernel: (11, 41),
            conv1_stride: (2, 2),
            conv2_kernel: (11, 21),
            conv2_stride: (1, 2),
            rnn_layers: 3,
            rnn_units: 256,
            rnn_bidirectional: true,
            dropout_rate: 0.3,
            vocab_size_with_blank: 30,
            feature_bins: 193,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if self.conv_filters == 0 {
            return bad("conv_filters must be at least 1");
        }
        let dims = [
            self.conv1_kernel,
            self.conv1_stride,
            self.conv2_kernel,
            self.conv2_stride,
        ];
        if dims.iter().any(|&(a, b)| a == 0 || b == 0) {
            return bad("kernel sizes and strides must be positive");
        }
        if self.rnn_layers == 0 || self.rnn_units == 0 {
            return bad("need at least one GRU layer with at least one unit");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.vocab_size_with_blank < 2 {
            return bad("vocab_size_with_blank must be at least 2");
        }
        if self.feature_bins == 0 {
            return bad("feature_bins must be positive");
        }
        Ok(())
    }

    pub fn num_directions(&self) -> usize {
        if self.rnn_bidirectional {
            2
        } else {
            1
        }
    }

    fn conv1_shape(&self, frames: usize) -> ConvShape {
        ConvShape {
            t_in: frames,
            f_in: self.feature_bins,
            c_in: 1,
            c_out: self.conv_filters,
            kt: self.conv1_kernel.0,
            kf: self.conv1_kernel.1,
            st: self.conv1_stride.0,
            sf: self.conv1_stride.1,
        }
    }

    fn conv2_shape(&self, frames: usize) -> ConvShape {
        let c1 = self.conv1_shape(frames);
        ConvShape {
            t_in: c1.t_out(),
            f_in: c1.f_out(),
            c_in: self.conv_filters,
            c_out: self.conv_filters,
            kt: self.conv2_kernel.0,
            kf: self.conv2_kernel.1,
            st: self.conv2_stride.0,
            sf: self.conv2_stride.1,
        }
    }

    /// Frequency bins left after both convolutions.
    pub fn conv_output_bins(&self) -> usize {
        same_len(
            same_len(self.feature_bins, self.conv1_stride.1),
            self.conv2_stride.1,
        )
    }

    pub fn rnn_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.conv_output_bins() * self.conv_filters
        } else {
            self.rnn_output_size()
        }
    }

    pub fn rnn_output_size(&self) -> usize {
        self.rnn_units * self.num_directions()
    }
}

/// Logit frames produced for `input_frames` feature frames.
pub fn output_length(input_frames: usize, cfg: &ModelConfig) -> usize {
    same_len(
        same_len(input_frames, cfg.conv1_stride.0),
        cfg.conv2_stride.0,
    )
}

/// Zero-padded `B x T x F` feature tensor with per-item true lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub data: Vec<f64>,
    pub batch: usize,
    pub frames: usize,
    pub bins: usize,
    pub lengths: Vec<usize>,
}

impl FeatureBatch {
    /// Pads `items` (each `len x bins`, row-major) to the longest one.
    pub fn from_items(items: &[(&[f64], usize)], bins: usize) -> Self {
        let frames = items.iter().map(|&(_, len)| len).max().unwrap_or(0);
        let mut data = vec![0.0; items.len() * frames * bins];
        for (i, &(x, len)) in items.iter().enumerate() {
            let start = i * frames * bins;
            data[start..start + len * bins].copy_from_slice(&x[..len * bins]);
        }
        Self {
            data,
            batch: items.len(),
            frames,
            bins,
            lengths: items.iter().map(|&(_, len)| len).collect(),
        }
    }

    /// True-length rows of item `i`.
    pub fn item(&self, i: usize) -> &[f64] {
        let start = i * self.frames * self.bins;
        &self.data[start..start + self.lengths[i] * self.bins]
    }
}

/// `B x T' x K` pre-softmax scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitBatch {
    pub values: Vec<f64>,
    pub batch: usize,
    pub frames: usize,
    pub classes: usize,
    pub output_lengths: Vec<usize>,
}

impl LogitBatch {
    pub fn zeros(batch: usize, frames: usize, classes: usize, output_lengths: Vec<usize>) -> Self {
        assert_eq!(output_lengths.len(), batch);
        assert!(output_lengths.iter().all(|&l| l <= frames));
        Self {
            values: vec![0.0; batch * frames * classes],
            batch,
            frames,
            classes,
            output_lengths,
        }
    }

    /// The first `output_lengths[i]` rows of item `i`.
    pub fn item(&self, i: usize) -> &[f64] {
        let start = i * self.frames * self.classes;
        &self.values[start..start + self.output_lengths[i] * self.classes]
    }

    pub fn get(&self, i: usize, t: usize, k: usize) -> f64 {
        self.values[(i * self.frames + t) * self.classes + k]
    }

    pub fn set(&mut self, i: usize, t: usize, k: usize, v: f64) {
        self.values[(i * self.frames + t) * self.classes + k] = v;
    }

    pub fn softmax_row(&self, i: usize, t: usize) -> Vec<f64> {
        let start = (i * self.frames + t) * self.classes;
        let row = &self.values[start..start + self.classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active with masks drawn from `seed`.
    Train {
        seed: u64,
    },
    Eval,
}

#[derive(Debug, Clone)]
struct GruLayerTape {
    input: Vec<f64>,
    dirs: Vec<GruTrace>,
    mask: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct ItemTape {
    frames: usize,
    out_frames: usize,
    features: Vec<f64>,
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    gru: Vec<GruLayerTape>,
    top: Vec<f64>,
}

/// Activations recorded by [`forward`]; consumed by one [`backward`] call.
#[derive(Debug)]
pub struct Tape {
    items: Option<Vec<ItemTape>>,
    batch_frames: usize,
}

impl Tape {
    pub fn is_consumed(&self) -> bool {
        self.items.is_none()
    }
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn dropout_mask(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

fn forward_item(
    params: &ModelParams,
    cfg: &ModelConfig,
    features: &[f64],
    frames: usize,
    mut rng: Option<ChaCha8Rng>,
) -> (Vec<f64>, ItemTape) {
    let t = &params.tensors;
    let c1 = cfg.conv1_shape(frames);
    let mut conv1 = c1.forward(features, &t[CONV1_KERNEL].data, &t[CONV1_BIAS].data);
    relu_in_place(&mut conv1);
    let c2 = cfg.conv2_shape(frames);
    let mut conv2 = c2.forward(&conv1, &t[CONV2_KERNEL].data, &t[CONV2_BIAS].data);
    relu_in_place(&mut conv2);

    let len = c2.t_out();
    let mut x = conv2.clone();
    let mut gru = Vec::with_capacity(cfg.rnn_layers);
    let h = cfg.rnn_units;
    let dirs = cfg.num_directions();
    for layer in 0..cfg.rnn_layers {
        let input = cfg.rnn_input_size(layer);
        let traces: Vec<GruTrace> = (0..dirs)
            .map(|d| {
                let g = Gru {
                    input,
                    units: h,
                    reverse: d == 1,
                };
                let base = gru_index(cfg, layer, d);
                g.forward(&x, len, &t[base].data, &t[base + 1].data, &t[base + 2].data)
            })
            .collect();
        let mut out = vec![0.0; len * h * dirs];
        for (d, tr) in traces.iter().enumerate() {
            for step in 0..len {
                out[step * h * dirs + d * h..step * h * dirs + (d + 1) * h]
                    .copy_from_slice(&tr.output[step * h..(step + 1) * h]);
            }
        }
        let mask = match rng.as_mut() {
            Some(r) if cfg.dropout_rate > 0.0 => Some(dropout_mask(r, out.len(), cfg.dropout_rate)),
            _ => None,
        };
        if let Some(m) = &mask {
            out.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        gru.push(GruLayerTape {
            input: std::mem::replace(&mut x, out),
            dirs: traces,
            mask,
        });
    }
    let oi = output_index(cfg);
    let logits = dense_forward(
        &x,
        len,
        cfg.rnn_output_size(),
        &t[oi].data,
        &t[oi + 1].data,
        cfg.vocab_size_with_blank,
    );
    let tape = ItemTape {
        frames,
        out_frames: len,
        features: features.to_vec(),
        conv1,
        conv2,
        gru,
        top: x,
    };
    (logits, tape)
}

fn item_rng(seed: u64, item: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item as u64);
    rng
}

pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &FeatureBatch,
    mode: Mode,
) -> Result<(LogitBatch, Tape), NetError> {
    if batch.bins != cfg.feature_bins {
        return Err(NetError::ShapeMismatch(format!(
            "batch has {} feature bins, model expects {}",
            batch.bins, cfg.feature_bins
        )));
    }
    if batch.lengths.len() != batch.batch
        || batch.data.len() != batch.batch * batch.frames * batch.bins
        || batch.lengths.iter().any(|&l| l == 0 || l > batch.frames)
    {
        return Err(NetError::ShapeMismatch(
            "feature batch lengths inconsistent with its data".into(),
        ));
    }
    if !params.matches(cfg) {
        return Err(NetError::ShapeMismatch(
            "parameters do not match model config".into(),
        ));
    }
    let results: Vec<(Vec<f64>, ItemTape)> = (0..batch.batch)
        .into_par_iter()
        .map(|i| {
            let rng = match mode {
                Mode::Train { seed } => Some(item_rng(seed, i)),
                Mode::Eval => None,
            };
            forward_item(params, cfg, batch.item(i), batch.lengths[i], rng)
        })
        .collect();
    let t_out = output_length(batch.frames, cfg);
    let k = cfg.vocab_size_with_blank;
    let lengths = results.iter().map(|(_, tape)| tape.out_frames).collect();
    let mut logits = LogitBatch::zeros(batch.batch, t_out, k, lengths);
    let mut items = Vec::with_capacity(batch.batch);
    for (i, (l, tape)) in results.into_iter().enumerate() {
        let start = i * t_out * k;
        logits.values[start..start + l.len()].copy_from_slice(&l);
        items.push(tape);
    }
    let tape = Tape {
        items: Some(items),
        batch_frames: t_out,
    };
    Ok((logits, tape))
}

fn backward_item(
    params: &ModelParams,
    cfg: &ModelConfig,
    tape: &ItemTape,
    d_logits: &[f64],
) -> ModelParams {
    let t = &params.tensors;
    let mut grads = params.zeros_like();
    let g = &mut grads.tensors;
    let len = tape.out_frames;
    let h = cfg.rnn_units;
    let dirs = cfg.num_directions();

    let oi = output_index(cfg);
    let (gw, gb) = g.split_at_mut(oi + 1);
    let mut d_x = dense_backward(
        &tape.top,
        len,
        cfg.rnn_output_size(),
        &t[oi].data,
        cfg.vocab_size_with_blank,
        d_logits,
        &mut gw[oi].data,
        &mut gb[0].data,
    );

    for layer in (0..cfg.rnn_layers).rev() {
        let lt = &tape.gru[layer];
        if let Some(mask) = &lt.mask {
            d_x.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        let input = cfg.rnn_input_size(layer);
        let mut d_in = vec![0.0; len * input];
        for (d, tr) in lt.dirs.iter().enumerate() {
            let mut d_out = vec![0.0; len * h];
            for step in 0..len {
                d_out[step * h..(step + 1) * h]
                    .copy_from_slice(&d_x[step * h * dirs + d * h..step * h * dirs + (d + 1) * h]);
            }
            let base = gru_index(cfg, layer, d);
            let (lo, hi) = g.split_at_mut(base + 1);
            let (mid, rest) = hi.split_at_mut(1);
            let gru = Gru {
                input,
                units: h,
                reverse: d == 1,
            };
            let dx = gru.backward(
                &lt.input,
                len,
                tr,
                &t[base].data,
                &t[base + 1].data,
                &d_out,
                &mut lo[base].data,
                &mut mid[0].data,
                &mut rest[0].data,
            );
            d_in.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        }
        d_x = d_in;
    }

    // ReLU after conv2
    d_x.iter_mut().zip(&tape.conv2).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0;
        }
    });
    let c2 = cfg.conv2_shape(tape.frames);
    let (lo, hi) = g.split_at_mut(CONV2_BIAS);
    let mut d_conv1 = c2
        .backward(
            &tape.conv1,
            &t[CONV2_KERNEL].data,
            &d_x,
            &mut lo[CONV2_KERNEL].data,
            &mut hi[0].data,
            true,
        )
        .expect("input gradient requested");
    d_conv1.iter_mut().zip(&tape.conv1).for_each(|(d, a)| {
        if *a <= 0.0 {
            *d = 0.0;
        }
    });
    let c1 = cfg.conv1_shape(tape.frames);
    let (lo, hi) = g.split_at_mut(CONV1_BIAS);
    c1.backward(
        &tape.features,
        &t[CONV1_KERNEL].data,
        &d_conv1,
        &mut lo[CONV1_KERNEL].data,
        &mut hi[0].data,
        false,
    );
    grads
}

/// Gradient of `sum(logits * d_logits)` with respect to every parameter.
pub fn backward(
    tape: &mut Tape,
    params: &ModelParams,
    cfg: &ModelConfig,
    d_logits: &[f64],
) -> Result<ModelParams, NetError> {
    let items = tape.items.take().ok_or(NetError::TapeConsumed)?;
    let k = cfg.vocab_size_with_blank;
    let stride = tape.batch_frames * k;
    if d_logits.len() != items.len() * stride {
        return Err(NetError::ShapeMismatch(format!(
            "d_logits has {} entries, expected {}",
            d_logits.len(),
            items.len() * stride
        )));
    }
    let per_item: Vec<ModelParams> = items
        .par_iter()
        .enumerate()
        .map(|(i, it)| {
            let start = i * stride;
            backward_item(params, cfg, it, &d_logits[start..start + it.out_frames * k])
        })
        .collect();
    let mut total = params.zeros_like();
    for g in &per_item {
        total.add_assign(g);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            conv_filters: 2,
            conv1_kernel: (3, 3),
            conv1_stride: (2, 2),
            conv2_kernel: (3, 3),
            conv2_stride: (1, 2),
            rnn_layers: 1,
            rnn_units: 4,
            rnn_bidirectional: true,
            dropout_rate: 0.3,
            vocab_size_with_blank: 4,
            feature_bins: 5,
        }
    }

    fn random_batch(lengths: &[usize], bins: usize, seed: u64) -> FeatureBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items: Vec<Vec<f64>> = lengths
            .iter()
            .map(|&l| (0..l * bins).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<(&[f64], usize)> = items
            .iter()
            .zip(lengths)
            .map(|(v, &l)| (v.as_slice(), l))
            .collect();
        FeatureBatch::from_items(&refs, bins)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let cfg = tiny_config();
        let a = init_params(&cfg, 11);
        assert_eq!(a, init_params(&cfg, 11));
        assert_ne!(a, init_params(&cfg, 12));
        for t in &a.tensors {
            if t.is_bias() {
                assert!(t.data.iter().all(|&v| v == 0.0), "{}", t.name);
            } else {
                assert!(t.data.iter().any(|&v| v != 0.0), "{}", t.name);
            }
        }
    }

    #[test]
    fn init_respects_glorot_limits() {
        let cfg = tiny_config();
        let p = init_params(&cfg, 3);
        for (s, t) in tensor_specs(&cfg).iter().zip(&p.tensors) {
            if !t.is_bias() {
                let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                assert!(t.data.iter().all(|v| v.abs() < limit));
            }
        }
    }

    /// Parameter count written out from the layer shapes.
    fn closed_form_count(filters: usize, bins: usize, h: usize, layers: usize, k: usize) -> usize {
        let conv1 = filters * 11 * 41 + filters;
        let conv2 = filters * 11 * 21 * filters + filters;
        let f2 = (bins.div_ceil(2)).div_ceil(2);
        let first = 2 * (3 * h * f2 * filters + 3 * h * h + 3 * h);
        let rest = (layers - 1) * 2 * (3 * h * 2 * h + 3 * h * h + 3 * h);
        conv1 + conv2 + first + rest + k * 2 * h + k
    }

    #[test]
    fn parameter_count_delta_between_filter_counts() {
        let c16 = ModelConfig::default();
        let c32 = ModelConfig {
            conv_filters: 32,
            ..ModelConfig::default()
        };
        let n16 = ModelParams::zeros(&c16).num_params();
        let n32 = ModelParams::zeros(&c32).num_params();
        assert_eq!(n16, closed_form_count(16, 193, 256, 3, 30));
        assert_eq!(n32, closed_form_count(32, 193, 256, 3, 30));
        // conv kernels, conv biases and the widened first GRU input
        let delta = (32 - 16) * 451 + (32 * 32 - 16 * 16) * 231 + 16 + 16 + 2 * 3 * 256 * 49 * 16;
        assert_eq!(n32 - n16, delta);
    }

    #[test]
    fn output_lengths() {
        let cfg = ModelConfig::default();
        assert_eq!(output_length(100, &cfg), 50);
        assert_eq!(output_length(101, &cfg), 51);
        assert_eq!(output_length(1, &cfg), 1);
    }

    #[test]
    fn default_shape_contract() {
        let cfg = ModelConfig::default();
        let params = init_params(&cfg, 0);
        let batch = random_batch(&[100, 63], 193, 1);
        let (logits, _) = forward(&params, &cfg, &batch, Mode::Eval).unwrap();
        assert_eq!((logits.batch, logits.frames, logits.classes), (2, 50, 30));
        assert_eq!(logits.output_lengths, vec![50, 32]);
        for t in 0..50 {
            let s: f64 = logits.softmax_row(0, t).iter().sum();
            assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn eval_is_deterministic_and_train_masks_follow_seed() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 0);
        let batch = random_batch(&[9, 6], 5, 2);
        let (a, _) = forward(&params, &cfg, &batch, Mode::Eval).unwrap();
        let (b, _) = forward(&params, &cfg, &batch, Mode::Eval).unwrap();
        assert_eq!(a, b);
        let (c, _) = forward(&params, &cfg, &batch, Mode::Train { seed: 4 }).unwrap();
        let (d, _) = forward(&params, &cfg, &batch, Mode::Train { seed: 4 }).unwrap();
        let (e, _) = forward(&params, &cfg, &batch, Mode::Train { seed: 5 }).unwrap();
        assert_eq!(c, d);
        assert_ne!(c, e);
        assert_ne!(a, c);
    }

    #[test]
    fn shape_errors() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 0);
        let batch = random_batch(&[4], 6, 0);
        assert!(matches!(
            forward(&params, &cfg, &batch, Mode::Eval),
            Err(NetError::ShapeMismatch(_))
        ));
        let other = init_params(
            &ModelConfig {
                rnn_units: 5,
                ..tiny_config()
            },
            0,
        );
        let batch = random_batch(&[4], 5, 0);
        assert!(matches!(
            forward(&other, &cfg, &batch, Mode::Eval),
            Err(NetError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 0);
        let batch = random_batch(&[8], 5, 3);
        let (logits, mut tape) = forward(&params, &cfg, &batch, Mode::Eval).unwrap();
        let g = backward(&mut tape, &params, &cfg, &vec![0.0; logits.values.len()]).unwrap();
        assert!(g.iter_values().all(|&v| v == 0.0));
        assert!(matches!(
            backward(&mut tape, &params, &cfg, &vec![0.0; logits.values.len()]),
            Err(NetError::TapeConsumed)
        ));
    }

    #[test]
    fn gradient_is_linear_in_upstream() {
        let cfg = tiny_config();
        let params = init_params(&cfg, 9);
        let batch = random_batch(&[8, 5], 5, 4);
        let (logits, mut tape) = forward(&params, &cfg, &batch, Mode::Train { seed: 1 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let up: Vec<f64> = logits
            .values
            .iter()
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let g1 = backward(&mut tape, &params, &cfg, &up).unwrap();
        let (_, mut tape) = forward(&params, &cfg, &batch, Mode::Train { seed: 1 }).unwrap();
        let alpha = -3.7;
        let scaled: Vec<f64> = up.iter().map(|v| v * alpha).collect();
        let g2 = backward(&mut tape, &params, &cfg, &scaled).unwrap();
        for (a, b) in g1.iter_values().zip(g2.iter_values()) {
            assert!((a * alpha - b).abs() <= 1e-9 * b.abs().max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn padding_does_not_change_real_frames() {
        let cfg = ModelConfig {
            dropout_rate: 0.0,
            ..tiny_config()
        };
        let params = init_params(&cfg, 5);
        let padded = random_batch(&[13, 7], 5, 8);
        let alone = FeatureBatch::from_items(&[(padded.item(1), 7)], 5);
        let (a, _) = forward(&params, &cfg, &padded, Mode::Eval).unwrap();
        let (b, _) = forward(&params, &cfg, &alone, Mode::Eval).unwrap();
        assert_eq!(a.output_lengths[1], b.output_lengths[0]);
        for (x, y) in a.item(1).iter().zip(b.item(0)) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn forward_shape_matches_output_length(
            lengths in proptest::collection::vec(1usize..20, 1..4),
            bins in 3usize..9,
            stride in 1usize..4,
        ) {
            let cfg = ModelConfig { feature_bins: bins, conv1_stride: (stride, 2), ..tiny_config() };
            let params = init_params(&cfg, 1);
            let batch = random_batch(&lengths, bins, 0);
            let (logits, _) = forward(&params, &cfg, &batch, Mode::Eval).unwrap();
            prop_assert_eq!(logits.batch, lengths.len());
            prop_assert_eq!(logits.frames, output_length(batch.frames, &cfg));
            for (i, &l) in lengths.iter().enumerate() {
                prop_assert_eq!(logits.output_lengths[i], output_length(l, &cfg));
            }
        }
    }
}
