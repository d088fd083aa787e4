//! Connectionist temporal classification: loss, gradient and greedy decoding.
//!
//! The loss of one item is `-ln sum_{A in B^-1(y)} prod_t P(a_t | h_t)`, where
//! `B` merges repeated symbols and then drops blanks. It is evaluated with
//! the usual forward/backward recursions over the blank-augmented label
//! `l' = (blank, y_1, blank, y_2, ..., y_U, blank)` in log space.

use rayon::prelude::*;
use thiserror::Error;

use crate::net::LogitBatch;
use crate::textmap::{decode_ids, LabelSequence, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("label id {id} is out of range or equals the blank index {blank}")]
    InvalidLabel { id: usize, blank: usize },
    #[error("{labels} label sequences for a batch of {batch}")]
    BatchMismatch { labels: usize, batch: usize },
    #[error("enumeration over {classes}^{frames} paths exceeds the brute-force bound")]
    TooLarge { frames: usize, classes: usize },
}

/// Largest `T` and `K` accepted by [`ctc_loss_bruteforce`].
pub const BRUTEFORCE_MAX_FRAMES: usize = 8;
pub const BRUTEFORCE_MAX_CLASSES: usize = 5;

/// Merges consecutive duplicates, then removes blanks.
pub fn collapse(path: &[usize], blank: usize) -> LabelSequence {
    let mut ids = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            ids.push(s);
        }
        prev = Some(s);
    }
    LabelSequence { ids }
}

/// Minimum frame count able to emit `label`: one frame per symbol plus one
/// separating blank for each adjacent repeated pair.
pub fn min_frames(label: &[usize]) -> usize {
    label.len() + label.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn is_feasible(frames: usize, label: &[usize]) -> bool {
    frames >= min_frames(label)
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Row-wise log-softmax of a `frames x classes` matrix.
pub fn log_softmax(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    out
}

/// Loss and logit gradient of a single item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemLoss {
    /// `+inf` when the label is infeasible.
    pub loss: f64,
    /// `frames x classes`, zero when infeasible.
    pub grad: Vec<f64>,
    pub feasible: bool,
}

/// CTC loss of one `frames x classes` logit matrix.
pub fn ctc_loss_item(logits: &[f64], classes: usize, label: &[usize], blank: usize) -> ItemLoss {
    let frames = logits.len() / classes;
    if !is_feasible(frames, label) {
        return ItemLoss {
            loss: f64::INFINITY,
            grad: vec![0.0; logits.len()],
            feasible: false,
        };
    }
    if frames == 0 {
        return ItemLoss {
            loss: 0.0,
            grad: Vec::new(),
            feasible: true,
        };
    }
    let lp = log_softmax(logits, classes);
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(label.iter().flat_map(|&l| [l, blank]))
        .collect();
    let s_len = ext.len();
    // l'_s may be reached from l'_{s-2} when it is a label differing from it.
    let skip: Vec<bool> = (0..s_len)
        .map(|s| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2])
        .collect();
    let neg = f64::NEG_INFINITY;
    let at = |t: usize, s: usize| t * s_len + s;

    let mut alpha = vec![neg; frames * s_len];
    alpha[at(0, 0)] = lp[ext[0]];
    if s_len > 1 {
        alpha[at(0, 1)] = lp[ext[1]];
    }
    for t in 1..frames {
        let row = &lp[t * classes..(t + 1) * classes];
        for s in 0..s_len {
            let mut acc = alpha[at(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[at(t - 1, s - 1)]);
            }
            if skip[s] {
                acc = log_add(acc, alpha[at(t - 1, s - 2)]);
            }
            alpha[at(t, s)] = if acc == neg { neg } else { acc + row[ext[s]] };
        }
    }

    let mut beta = vec![neg; frames * s_len];
    let last = frames - 1;
    beta[at(last, s_len - 1)] = lp[last * classes + ext[s_len - 1]];
    if s_len > 1 {
        beta[at(last, s_len - 2)] = lp[last * classes + ext[s_len - 2]];
    }
    for t in (0..last).rev() {
        let row = &lp[t * classes..(t + 1) * classes];
        for s in 0..s_len {
            let mut acc = beta[at(t + 1, s)];
            if s + 1 < s_len {
                acc = log_add(acc, beta[at(t + 1, s + 1)]);
            }
            if s + 2 < s_len && skip[s + 2] {
                acc = log_add(acc, beta[at(t + 1, s + 2)]);
            }
            beta[at(t, s)] = if acc == neg { neg } else { acc + row[ext[s]] };
        }
    }

    let mut log_p = alpha[at(last, s_len - 1)];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[at(last, s_len - 2)]);
    }

    // d(-ln p)/du_{t,k} = y_{t,k} - (1 / p) * sum_{s: l'_s = k} alpha_t(s) beta_t(s) / y_{t,k}
    let mut grad = vec![0.0; logits.len()];
    let mut occupancy = vec![neg; classes];
    for t in 0..frames {
        occupancy.fill(neg);
        for s in 0..s_len {
            let v = alpha[at(t, s)] + beta[at(t, s)];
            if v > neg {
                occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
            }
        }
        for k in 0..classes {
            let lpk = lp[t * classes + k];
            let mut g = lpk.exp();
            if occupancy[k] > neg {
                g -= (occupancy[k] - lpk - log_p).exp();
            }
            grad[t * classes + k] = g;
        }
    }
    ItemLoss {
        loss: -log_p,
        grad,
        feasible: true,
    }
}

/// Per-item losses and the gradient of their sum with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcResult {
    pub losses: Vec<f64>,
    /// Same layout as [`LogitBatch::values`]; rows at or beyond an item's
    /// output length are zero.
    pub d_logits: Vec<f64>,
    /// `true` for items whose label cannot be aligned in the available frames.
    pub infeasible: Vec<bool>,
}

impl CtcResult {
    /// Mean loss over feasible items, `None` when no item is feasible.
    pub fn mean_feasible_loss(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .losses
            .iter()
            .zip(&self.infeasible)
            .filter(|(_, &bad)| !bad)
            .map(|(&l, _)| l)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn num_infeasible(&self) -> usize {
        self.infeasible.iter().filter(|&&b| b).count()
    }
}

/// Batched CTC loss. The blank is the last class (`K - 1`).
pub fn ctc_loss(logits: &LogitBatch, labels: &[LabelSequence]) -> Result<CtcResult, CtcError> {
    let (b, t_max, k) = (logits.batch, logits.frames, logits.classes);
    if labels.len() != b {
        return Err(CtcError::BatchMismatch {
            labels: labels.len(),
            batch: b,
        });
    }
    let blank = k - 1;
    for l in labels {
        if let Some(&id) = l.ids.iter().find(|&&id| id >= blank) {
            return Err(CtcError::InvalidLabel { id, blank });
        }
    }
    let items: Vec<ItemLoss> = (0..b)
        .into_par_iter()
        .map(|i| {
            let len = logits.output_lengths[i];
            let start = i * t_max * k;
            ctc_loss_item(
                &logits.values[start..start + len * k],
                k,
                &labels[i].ids,
                blank,
            )
        })
        .collect();
    let mut d_logits = vec![0.0; logits.values.len()];
    for (i, item) in items.iter().enumerate() {
        let start = i * t_max * k;
        d_logits[start..start + item.grad.len()].copy_from_slice(&item.grad);
    }
    Ok(CtcResult {
        losses: items.iter().map(|it| it.loss).collect(),
        infeasible: items.iter().map(|it| !it.feasible).collect(),
        d_logits,
    })
}

/// Reference loss by enumerating all `K^T` alignment paths. `frame_probs`
/// holds one probability row per frame; the blank is `blank`.
pub fn ctc_loss_bruteforce(
    frame_probs: &[Vec<f64>],
    label: &[usize],
    blank: usize,
) -> Result<f64, CtcError> {
    let frames = frame_probs.len();
    let classes = frame_probs.first().map_or(0, Vec::len);
    if frames > BRUTEFORCE_MAX_FRAMES || classes > BRUTEFORCE_MAX_CLASSES {
        return Err(CtcError::TooLarge { frames, classes });
    }
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank).ids == label {
            total += path
                .iter()
                .enumerate()
                .map(|(t, &a)| frame_probs[t][a])
                .product::<f64>();
        }
        // odometer increment over base-K digits
        let mut pos = 0;
        loop {
            if pos == frames {
                return Ok(-total.ln());
            }
            path[pos] += 1;
            if path[pos] < classes {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

/// Per-frame argmax (lowest index on ties) over the first `len` frames.
pub fn best_path(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for k in 1..classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Best-path decoding: argmax per frame, collapse, map ids to characters.
pub fn greedy_decode(logits: &LogitBatch, v: &Vocabulary) -> Vec<String> {
    let k = logits.classes;
    let blank = v.blank_index();
    (0..logits.batch)
        .map(|i| {
            let path = best_path(logits.item(i), k);
            let ids = collapse(&path, blank).ids;
            decode_ids(&ids, v).expect("argmax indices lie within the vocabulary")
        })
        .collect()
}
