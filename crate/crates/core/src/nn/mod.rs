//! Dense multilayer perceptrons with exact reverse-mode gradients.
//!
//! Everything is `f64` and batched: inputs are `(batch, features)` matrices
//! and each layer stores its weight matrix as `(out, in)`, row-major.

mod io;
mod optim;
mod replay;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use optim::{Method, Optimizer};
pub use replay::ReplayBuffer;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer sizes {0:?}: need at least two sizes, all positive")]
    InvalidSizes(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("forward cache does not match the network (stale or foreign cache)")]
    StaleCache,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("network architectures differ")]
    ArchitectureMismatch,
    #[error("nothing to average")]
    NoNetworks,
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    /// Row-wise softmax; only meaningful on the output layer.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
    /// Bumped by every parameter update so stale caches can be detected.
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`Mlp::forward_batch`]; `values[0]` is the input
/// and `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    values: Vec<Array2<f64>>,
    generation: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("cache holds the input at least")
    }
}

/// Parameter gradients, one `(weights, bias)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Gradients {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|x| x.is_finite()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    /// Flattened in parameter order (per layer: weights row-major, then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

impl Mlp {
    /// Rectified-linear hidden layers and a linear output layer.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Mlp> {
        Mlp::with_output(sizes, Activation::Linear, seed)
    }

    /// Weights are drawn uniformly from `±1/sqrt(fan_in)`; biases start at zero.
    pub fn with_output(sizes: &[usize], output: Activation, seed: u64) -> Result<Mlp> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::InvalidSizes(sizes.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let bound = (fan_in as f64).sqrt().recip();
                let weights = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n { output } else { Activation::Relu },
                }
            })
            .collect();
        Ok(Mlp { layers, generation: 0 })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Mlp> {
        if layers.is_empty() {
            return Err(NnError::InvalidSizes(vec![]));
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::DimensionMismatch {
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::DimensionMismatch {
                    expected: pair[0].out_dim(),
                    got: pair[1].in_dim(),
                });
            }
        }
        Ok(Mlp { layers, generation: 0 })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::out_dim))
            .collect()
    }

    pub fn same_architecture(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weights.raw_dim() == b.weights.raw_dim() && a.activation == b.activation
            })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters in the same order as [`Gradients::to_flat`].
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            match l.weights.as_slice() {
                Some(w) => out.extend_from_slice(w),
                None => out.extend(l.weights.iter().copied()),
            }
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(NnError::DimensionMismatch {
                expected: self.parameter_count(),
                got: values.len(),
            });
        }
        let mut rest = values;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            match l.weights.as_slice_mut() {
                Some(dst) => dst.copy_from_slice(w),
                None => l.weights.iter_mut().zip(w).for_each(|(d, &s)| *d = s),
            }
            l.bias.iter_mut().zip(b).for_each(|(d, &s)| *d = s);
            rest = tail;
        }
        self.generation += 1;
        Ok(())
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous row");
        let (out, _) = self.forward_batch(x)?;
        Ok(out.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if input.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_owned());
        for layer in &self.layers {
            let x = values.last().expect("non-empty");
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            activate(&mut z, layer.activation);
            values.push(z);
        }
        let out = values.last().expect("non-empty").clone();
        Ok((
            out,
            ForwardCache {
                values,
                generation: self.generation,
            },
        ))
    }

    /// Gradients of a scalar loss given `d_output = dL/d(output)` for the
    /// batch recorded in `cache`. Parameters are not touched.
    pub fn backward(&self, cache: &ForwardCache, d_output: ArrayView2<f64>) -> Result<Gradients> {
        if cache.generation != self.generation || cache.values.len() != self.layers.len() + 1 {
            return Err(NnError::StaleCache);
        }
        for (layer, x) in self.layers.iter().zip(&cache.values) {
            if x.ncols() != layer.in_dim() {
                return Err(NnError::StaleCache);
            }
        }
        let out = cache.output();
        if d_output.dim() != out.dim() {
            return Err(NnError::DimensionMismatch {
                expected: out.len(),
                got: d_output.len(),
            });
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let y = &cache.values[i + 1];
            let x = &cache.values[i];
            activation_backward(&mut delta, y, layer.activation);
            let dw = delta.t().dot(x);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&layer.weights);
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Steps every parameter against its gradient. Non-finite gradients are
    /// rejected before anything is modified.
    pub fn apply_update(&mut self, grads: &Gradients, opt: &mut Optimizer) -> Result<()> {
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|((w, b), l)| w.raw_dim() != l.weights.raw_dim() || b.len() != l.bias.len())
        {
            return Err(NnError::ArchitectureMismatch);
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradients"));
        }
        opt.step(&mut self.layers, grads);
        self.generation += 1;
        let finite = self
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|x| x.is_finite()));
        if !finite {
            return Err(NnError::NonFinite("parameters"));
        }
        Ok(())
    }
}

/// Element-wise arithmetic mean of the parameters of `nets`.
///
/// Each parameter's values are summed in sorted order, so the result does not
/// depend on the order of `nets`, and identical inputs come back unchanged.
pub fn average_weights(nets: &[Mlp]) -> Result<Mlp> {
    let (first, rest) = nets.split_first().ok_or(NnError::NoNetworks)?;
    if rest.iter().any(|n| !n.same_architecture(first)) {
        return Err(NnError::ArchitectureMismatch);
    }
    let flats: Vec<Vec<f64>> = nets.iter().map(Mlp::parameters).collect();
    let mut column = Vec::with_capacity(nets.len());
    let mean: Vec<f64> = (0..flats[0].len())
        .map(|i| {
            column.clear();
            column.extend(flats.iter().map(|f| f[i]));
            if column.iter().all(|&v| v == column[0]) {
                return column[0];
            }
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / nets.len() as f64
        })
        .collect();
    let mut avg = first.clone();
    avg.set_parameters(&mean)?;
    avg.generation = nets.iter().map(|n| n.generation).max().unwrap_or(0) + 1;
    Ok(avg)
}

fn activate(z: &mut Array2<f64>, activation: Activation) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        Activation::Softmax => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row /= sum;
            }
        }
    }
}

/// Turns `dL/dy` into `dL/dz` in place, where `y = act(z)`.
fn activation_backward(delta: &mut Array2<f64>, y: &Array2<f64>, activation: Activation) {
    match activation {
        Activation::Linear => {}
        Activation::Relu => {
            ndarray::Zip::from(delta).and(y).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        Activation::Softmax => {
            for (mut d, y) in delta.rows_mut().into_iter().zip(y.rows()) {
                let dot = d.dot(&y);
                ndarray::Zip::from(&mut d).and(&y).for_each(|d, &y| *d = y * (*d - dot));
            }
        }
    }
}
