use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    backward, forward, init_params, FeatureBatch, Mode, ModelConfig, ModelParams, NetError,
};
use crate::ctc::ctc_loss;
use crate::textmap::LabelSequence;

/// Worst relative error seen in one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub loss: f64,
}

fn summed_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &FeatureBatch,
    labels: &[LabelSequence],
    mode: Mode,
) -> Result<f64, NetError> {
    let (logits, _) = forward(params, cfg, batch, mode)?;
    let r = ctc_loss(&logits, labels).map_err(|e| NetError::ShapeMismatch(e.to_string()))?;
    Ok(r.losses.iter().filter(|l| l.is_finite()).sum())
}

/// Compares analytic CTC-loss gradients against central differences
/// `(f(x + eps) - f(x - eps)) / 2 eps`.
///
/// Parameters come from [`init_params`] with biases then drawn uniformly
/// from `[-0.1, 0.1)`, keeping ReLU inputs away from their kink. At least
/// `min_coordinates` coordinates are checked, spread over every tensor (all
/// of a tensor's coordinates when it is small). In train mode the dropout
/// mask is the same for every evaluation because it only depends on `seed`.
pub fn grad_check(
    cfg: &ModelConfig,
    batch: &FeatureBatch,
    labels: &[LabelSequence],
    mode: Mode,
    seed: u64,
    epsilon: f64,
    min_coordinates: usize,
) -> Result<GradCheckReport, NetError> {
    let mut params = init_params(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for t in params.tensors.iter_mut().filter(|t| t.is_bias()) {
        t.data
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-0.1..0.1));
    }

    let (logits, mut tape) = forward(&params, cfg, batch, mode)?;
    let r = ctc_loss(&logits, labels).map_err(|e| NetError::ShapeMismatch(e.to_string()))?;
    let analytic = backward(&mut tape, &params, cfg, &r.d_logits)?;
    let loss = r.losses.iter().filter(|l| l.is_finite()).sum();

    let sizes: Vec<usize> = params.tensors.iter().map(|t| t.len()).collect();
    let per_tensor = min_coordinates.div_ceil(sizes.len()).max(1);
    let mut quota: Vec<usize> = sizes.iter().map(|&n| n.min(per_tensor)).collect();
    // Small tensors are exhausted early; hand their share to larger ones.
    let mut missing = min_coordinates.saturating_sub(quota.iter().sum());
    while missing > 0 && quota.iter().zip(&sizes).any(|(q, n)| q < n) {
        for (q, &n) in quota.iter_mut().zip(&sizes) {
            if missing > 0 && *q < n {
                *q += 1;
                missing -= 1;
            }
        }
    }
    let mut tensors = Vec::with_capacity(params.tensors.len());
    let mut coordinates = 0;
    for (ti, &q) in quota.iter().enumerate() {
        let n = sizes[ti];
        let picks: Vec<usize> = if n <= q {
            (0..n).collect()
        } else {
            sample(&mut rng, n, q).into_vec()
        };
        let mut worst: f64 = 0.0;
        for &j in &picks {
            let orig = params.tensors[ti].data[j];
            params.tensors[ti].data[j] = orig + epsilon;
            let up = summed_loss(&params, cfg, batch, labels, mode)?;
            params.tensors[ti].data[j] = orig - epsilon;
            let down = summed_loss(&params, cfg, batch, labels, mode)?;
            params.tensors[ti].data[j] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic.tensors[ti].data[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        coordinates += picks.len();
        tensors.push(TensorCheck {
            name: params.tensors[ti].name.clone(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        coordinates,
        loss,
    })
}
