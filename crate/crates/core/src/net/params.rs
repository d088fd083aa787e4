use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;

/// Named dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_bias(&self) -> bool {
        self.name.ends_with("bias")
    }
}

/// Shape and Glorot fan sizes of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// All trainable weights, in a fixed order:
///
/// 1. `conv1.kernel [C, kt, kf, 1]`, `conv1.bias [C]`
/// 2. `conv2.kernel [C, kt, kf, C]`, `conv2.bias [C]`
/// 3. per GRU layer and direction: `w_input [3H, In]`, `w_hidden [3H, H]`,
///    `bias [3H]`, gate blocks ordered update, reset, candidate
/// 4. `output.weight [K, D]`, `output.bias [K]`
///
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

pub(crate) const CONV1_KERNEL: usize = 0;
pub(crate) const CONV1_BIAS: usize = 1;
pub(crate) const CONV2_KERNEL: usize = 2;
pub(crate) const CONV2_BIAS: usize = 3;
const GRU_BASE: usize = 4;

/// Index of the first tensor (`w_input`) of a GRU layer direction.
pub(crate) fn gru_index(cfg: &ModelConfig, layer: usize, dir: usize) -> usize {
    GRU_BASE + (layer * cfg.num_directions() + dir) * 3
}

pub(crate) fn output_index(cfg: &ModelConfig) -> usize {
    GRU_BASE + cfg.rnn_layers * cfg.num_directions() * 3
}

pub fn tensor_specs(cfg: &ModelConfig) -> Vec<TensorSpec> {
    let c = cfg.conv_filters;
    let (k1t, k1f) = cfg.conv1_kernel;
    let (k2t, k2f) = cfg.conv2_kernel;
    let h = cfg.rnn_units;
    let spec = |name: String, shape: Vec<usize>, fan_in, fan_out| TensorSpec {
        name,
        shape,
        fan_in,
        fan_out,
    };
    let mut out = vec![
        spec(
            "conv1.kernel".into(),
            vec![c, k1t, k1f, 1],
            k1t * k1f,
            c * k1t * k1f,
        ),
        spec("conv1.bias".into(), vec![c], 0, 0),
        spec(
            "conv2.kernel".into(),
            vec![c, k2t, k2f, c],
            c * k2t * k2f,
            c * k2t * k2f,
        ),
        spec("conv2.bias".into(), vec![c], 0, 0),
    ];
    for layer in 0..cfg.rnn_layers {
        let input = cfg.rnn_input_size(layer);
        for dir in 0..cfg.num_directions() {
            let prefix = format!("gru{layer}.{}", if dir == 0 { "fwd" } else { "bwd" });
            out.push(spec(
                format!("{prefix}.w_input"),
                vec![3 * h, input],
                input,
                3 * h,
            ));
            out.push(spec(format!("{prefix}.w_hidden"), vec![3 * h, h], h, 3 * h));
            out.push(spec(format!("{prefix}.bias"), vec![3 * h], 0, 0));
        }
    }
    let d = cfg.rnn_output_size();
    let k = cfg.vocab_size_with_blank;
    out.push(spec("output.weight".into(), vec![k, d], d, k));
    out.push(spec("output.bias".into(), vec![k], 0, 0));
    out
}

impl ModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            tensors: tensor_specs(cfg)
                .into_iter()
                .map(|s| Tensor::zeros(s.name, s.shape))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn iter_values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn all_finite(&self) -> bool {
        self.iter_values().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.iter_values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    /// `true` when tensor names and shapes agree with `cfg`.
    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let specs = tensor_specs(cfg);
        specs.len() == self.tensors.len()
            && specs.iter().zip(&self.tensors).all(|(s, t)| {
                s.name == t.name
                    && s.shape == t.shape
                    && t.data.len() == s.shape.iter().product::<usize>()
            })
    }
}

/// Glorot-uniform weights, zero biases, deterministic under `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = tensor_specs(cfg)
        .into_iter()
        .map(|s| {
            let mut t = Tensor::zeros(s.name, s.shape);
            if !t.is_bias() {
                let limit = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
                t.data
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-limit..limit));
            }
            t
        })
        .collect();
    ModelParams { tensors }
}
