//! Dense feedforward networks with hand-written reverse-mode gradients,
//! Adam updates and target-network blending.
//!
//! Parameters are stored per layer as row-major `out x in` weight matrices
//! plus bias vectors. [`GradientSet`] mirrors that layout exactly, so the
//! optimizer and the blending routines can walk parameters and gradients
//! in lockstep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("dimension mismatch: expected length {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation's *output* `y`.
    #[inline]
    fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Per-layer gradients laid out exactly like the parameters of an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Post-activation values of every layer from one forward pass;
/// `activations[0]` is the input.
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    pub activations: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(NeuralError::InvalidArchitecture(format!(
            "need at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(NeuralError::InvalidArchitecture(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl<T: Real> Mlp<T> {
    /// Random initialization: weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero biases. Bit-identical for equal seeds.
    pub fn init(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
            weights.push(w);
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), weights, biases, hidden_activation, output_activation })
    }

    /// Builds a network from explicit parameters. Each weight matrix is row-major
    /// with `layer_sizes[i + 1]` rows and `layer_sizes[i]` columns.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        check_sizes(&layer_sizes)?;
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(NeuralError::ShapeMismatch(format!(
                "{layers} layers but {} weight matrices and {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        for (i, pair) in layer_sizes.windows(2).enumerate() {
            if weights[i].len() != pair[0] * pair[1] || biases[i].len() != pair[1] {
                return Err(NeuralError::ShapeMismatch(format!(
                    "layer {i}: expected {}x{} weights and {} biases",
                    pair[1], pair[0], pair[1]
                )));
            }
        }
        let net = Self { layer_sizes, weights, biases, hidden_activation, output_activation };
        if !net.params().all(|p| p.is_finite()) {
            return Err(NeuralError::NonFinite("parameters"));
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    /// Row-major weights and bias of layer `i`.
    pub fn layer(&self, i: usize) -> (&[T], &[T]) {
        (&self.weights[i], &self.biases[i])
    }

    pub fn layer_mut(&mut self, i: usize) -> (&mut [T], &mut [T]) {
        (&mut self.weights[i], &mut self.biases[i])
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn same_architecture(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes
            && self.hidden_activation == other.hidden_activation
            && self.output_activation == other.output_activation
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.activations.pop().expect("at least one layer"))
    }

    /// Forward pass that keeps every layer's output in `trace` (reusing its buffers).
    pub fn forward_trace(&self, input: &[T], trace: &mut Trace<T>) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.input_dim(), actual: input.len() });
        }
        let acts = &mut trace.activations;
        acts.resize_with(self.layer_sizes.len(), Vec::new);
        acts[0].clear();
        acts[0].extend_from_slice(input);
        for l in 0..self.weights.len() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let act = self.activation_for(l);
            let (head, tail) = acts.split_at_mut(l + 1);
            let x = &head[l];
            let y = &mut tail[0];
            y.clear();
            let w = &self.weights[l];
            for (j, &b) in self.biases[l].iter().enumerate().take(n_out) {
                let row = &w[j * n_in..(j + 1) * n_in];
                y.push(act.apply(b + dot(row, x)));
            }
        }
        Ok(())
    }

    pub fn zero_gradients(&self) -> GradientSet<T> {
        GradientSet {
            weights: self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Gradients of `upstream . output` with respect to parameters and input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<(GradientSet<T>, Vec<T>)> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        let mut grads = self.zero_gradients();
        let mut input_grad = vec![T::zero(); self.input_dim()];
        self.backward_accumulate(&trace, upstream, T::one(), &mut grads, Some(&mut input_grad))?;
        Ok((grads, input_grad))
    }

    /// Adds `scale * d(upstream . output)/d(params)` into `grads`, using the
    /// activations recorded in `trace`. When `input_grad` is given it is
    /// overwritten with the (scaled) gradient with respect to the input.
    pub fn backward_accumulate(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        scale: T,
        grads: &mut GradientSet<T>,
        input_grad: Option<&mut [T]>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.output_dim(), actual: upstream.len() });
        }
        if trace.activations.len() != self.layer_sizes.len() {
            return Err(NeuralError::ShapeMismatch("trace does not belong to this network".into()));
        }
        if !grads.matches(self) {
            return Err(NeuralError::ShapeMismatch("gradient set does not mirror network".into()));
        }
        self.backprop(trace, upstream, scale, Some(grads), input_grad)
    }

    /// Gradient of `upstream . output` with respect to the input only.
    pub fn input_gradient(&self, trace: &Trace<T>, upstream: &[T], input_grad: &mut [T]) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(NeuralError::DimensionMismatch { expected: self.output_dim(), actual: upstream.len() });
        }
        if trace.activations.len() != self.layer_sizes.len() {
            return Err(NeuralError::ShapeMismatch("trace does not belong to this network".into()));
        }
        self.backprop(trace, upstream, T::one(), None, Some(input_grad))
    }

    fn backprop(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        scale: T,
        mut grads: Option<&mut GradientSet<T>>,
        input_grad: Option<&mut [T]>,
    ) -> Result<()> {
        let last = self.weights.len() - 1;
        let out = &trace.activations[last + 1];
        let mut delta: Vec<T> = upstream
            .iter()
            .zip(out)
            .map(|(&g, &y)| scale * g * self.output_activation.derivative_from_output(y))
            .collect();
        let mut prev = Vec::new();
        for l in (0..=last).rev() {
            let n_in = self.layer_sizes[l];
            let x = &trace.activations[l];
            let w = &self.weights[l];
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = (&mut g.weights[l], &mut g.biases[l]);
                for (j, &d) in delta.iter().enumerate() {
                    gb[j] += d;
                    for (g, &xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x.iter()) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            prev.clear();
            prev.resize(n_in, T::zero());
            for (j, &d) in delta.iter().enumerate() {
                for (p, &wi) in prev.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            if l > 0 {
                for (p, &xi) in prev.iter_mut().zip(x) {
                    *p *= self.hidden_activation.derivative_from_output(xi);
                }
            }
            std::mem::swap(&mut delta, &mut prev);
        }
        if let Some(ig) = input_grad {
            if ig.len() != delta.len() {
                return Err(NeuralError::DimensionMismatch { expected: delta.len(), actual: ig.len() });
            }
            ig.copy_from_slice(&delta);
        }
        Ok(())
    }

    /// Blends `source` into `self`: every parameter becomes `(1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &Self, tau: T) -> Result<()> {
        if !self.same_architecture(source) {
            return Err(NeuralError::ShapeMismatch("soft update between different architectures".into()));
        }
        if !(tau > T::zero() && tau <= T::one()) {
            return Err(NeuralError::InvalidHyperparameter(format!("tau must lie in (0, 1], got {tau}")));
        }
        if tau == T::one() {
            self.weights.clone_from(&source.weights);
            self.biases.clone_from(&source.biases);
            return Ok(());
        }
        let keep = T::one() - tau;
        for (t, s) in self.params_mut().zip(source.params()) {
            *t = keep * *t + tau * *s;
        }
        Ok(())
    }
}

/// Functional form of [`Mlp::soft_update_from`].
pub fn soft_update<T: Real>(target: &Mlp<T>, source: &Mlp<T>, tau: T) -> Result<Mlp<T>> {
    let mut out = target.clone();
    out.soft_update_from(source, tau)?;
    Ok(out)
}

impl<T: Real> GradientSet<T> {
    pub fn matches(&self, net: &Mlp<T>) -> bool {
        self.weights.len() == net.weights.len()
            && self.biases.len() == net.biases.len()
            && self.weights.iter().zip(&net.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&net.biases).all(|(a, b)| a.len() == b.len())
    }

    pub fn values(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.weights.iter_mut().zip(self.biases.iter_mut()).flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|g| *g = T::zero());
    }

    pub fn scale(&mut self, k: T) {
        self.values_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self { learning_rate: T::lit(3e-4), beta1: T::lit(0.9), beta2: T::lit(0.999), epsilon: T::lit(1e-8) }
    }
}

impl<T: Real> AdamConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > T::zero()
            && self.beta1 >= T::zero()
            && self.beta1 < T::one()
            && self.beta2 >= T::zero()
            && self.beta2 < T::one()
            && self.epsilon > T::zero();
        if ok {
            Ok(())
        } else {
            Err(NeuralError::InvalidHyperparameter(format!(
                "adam requires lr > 0, 0 <= beta1, beta2 < 1, eps > 0; got {self:?}"
            )))
        }
    }

    /// Bias-corrected update over flat slices; `step` is the already-incremented step count.
    fn apply(&self, step: u64, params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T]) {
        let t = step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Adam moment accumulators for one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    pub first_moment: GradientSet<T>,
    pub second_moment: GradientSet<T>,
    pub step_count: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Mlp<T>, config: AdamConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, first_moment: net.zero_gradients(), second_moment: net.zero_gradients(), step_count: 0 })
    }

    /// One bias-corrected Adam step on `net` (descending `grads`).
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &GradientSet<T>) -> Result<()> {
        if !grads.matches(net) || !self.first_moment.matches(net) || !self.second_moment.matches(net) {
            return Err(NeuralError::ShapeMismatch("adam state, gradients and network disagree".into()));
        }
        if !grads.is_finite() {
            return Err(NeuralError::NonFinite("gradients"));
        }
        self.step_count += 1;
        for l in 0..net.weights.len() {
            self.config.apply(
                self.step_count,
                &mut net.weights[l],
                &grads.weights[l],
                &mut self.first_moment.weights[l],
                &mut self.second_moment.weights[l],
            );
            self.config.apply(
                self.step_count,
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.first_moment.biases[l],
                &mut self.second_moment.biases[l],
            );
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Real>(
    state: &AdamState<T>,
    params: &Mlp<T>,
    grads: &GradientSet<T>,
) -> Result<(AdamState<T>, Mlp<T>)> {
    let (mut s, mut p) = (state.clone(), params.clone());
    s.step(&mut p, grads)?;
    Ok((s, p))
}

/// Adam over a plain parameter vector (e.g. a free-standing log-std).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamVec<T> {
    pub config: AdamConfig<T>,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step_count: u64,
}

impl<T: Real> AdamVec<T> {
    pub fn new(len: usize, config: AdamConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, first_moment: vec![T::zero(); len], second_moment: vec![T::zero(); len], step_count: 0 })
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(NeuralError::DimensionMismatch { expected: self.first_moment.len(), actual: grads.len() });
        }
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(NeuralError::NonFinite("gradients"));
        }
        self.step_count += 1;
        self.config.apply(self.step_count, params, grads, &mut self.first_moment, &mut self.second_moment);
        Ok(())
    }
}
