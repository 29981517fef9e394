//! Network architectures, parameter flattening, forward evaluation and the
//! output-matching loss used throughout the crate.
//!
//! Parameters are stored flat. [`LayerOrdering`] fixes the order: layers in
//! sequence, each weight matrix row-major with one row per output unit, and
//! the layer's bias vector (when enabled) directly after its matrix. For the
//! `[1, 2, 1]` network without bias this gives `(a, b, c, d)` with
//! `phi(x) = c * relu(a x) + d * relu(b x)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Derivative expressed through the activated value. For ReLU the
    /// subgradient at exactly zero is taken as zero.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Fully connected architecture. The activation is applied after every
/// hidden layer; the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelArch {
    layer_widths: Vec<usize>,
    #[serde(default)]
    activation: Activation,
    #[serde(default)]
    bias_enabled: bool,
}

impl ModelArch {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, bias_enabled: bool) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::InvalidArch(format!(
                "need at least input and output widths, got {} entries",
                layer_widths.len()
            )));
        }
        if let Some(pos) = layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArch(format!("layer {pos} has width 0")));
        }
        Ok(Self {
            layer_widths,
            activation,
            bias_enabled,
        })
    }

    /// ReLU network without biases.
    pub fn relu(layer_widths: &[usize]) -> Result<Self> {
        Self::new(layer_widths.to_vec(), Activation::Relu, false)
    }

    /// Re-checks invariants, for values that came through deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.layer_widths.clone(), self.activation, self.bias_enabled).map(|_| ())
    }

    pub fn layer_widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn bias_enabled(&self) -> bool {
        self.bias_enabled
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of weight layers (one fewer than the number of widths).
    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn num_hidden_layers(&self) -> usize {
        self.layer_widths.len() - 2
    }

    /// Width of hidden layer `h`, counting from zero.
    pub fn hidden_width(&self, h: usize) -> Option<usize> {
        (h < self.num_hidden_layers()).then(|| self.layer_widths[h + 1])
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias_enabled { w[1] } else { 0 })
            .sum()
    }

    pub fn ordering(&self) -> LayerOrdering {
        LayerOrdering::new(self)
    }

    pub(crate) fn check_params<T>(&self, what: &'static str, values: &[T]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                actual: values.len(),
            });
        }
        Ok(())
    }
}

/// Position of one weight layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub in_width: usize,
    pub out_width: usize,
    pub weight_offset: usize,
    pub bias_offset: Option<usize>,
}

impl LayerSlot {
    #[inline]
    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        self.weight_offset + row * self.in_width + col
    }

    fn end(&self) -> usize {
        match self.bias_offset {
            Some(b) => b + self.out_width,
            None => self.weight_offset + self.in_width * self.out_width,
        }
    }
}

/// Unflattened weights of one layer: `weights` is `out_width x in_width`,
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Canonical flattening order of a network's weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerOrdering {
    slots: Vec<LayerSlot>,
    len: usize,
}

impl LayerOrdering {
    fn new(arch: &ModelArch) -> Self {
        let mut offset = 0;
        let slots = arch
            .layer_widths
            .windows(2)
            .map(|w| {
                let weight_offset = offset;
                offset += w[0] * w[1];
                let bias_offset = arch.bias_enabled.then(|| {
                    let b = offset;
                    offset += w[1];
                    b
                });
                LayerSlot {
                    in_width: w[0],
                    out_width: w[1],
                    weight_offset,
                    bias_offset,
                }
            })
            .collect();
        Self { slots, len: offset }
    }

    pub fn slots(&self) -> &[LayerSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn flatten<T: Copy>(&self, layers: &[LayerWeights<T>]) -> Result<Vec<T>> {
        if layers.len() != self.slots.len() {
            return Err(Error::DimensionMismatch {
                what: "layer count",
                expected: self.slots.len(),
                actual: layers.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len);
        for (slot, layer) in self.slots.iter().zip(layers) {
            if layer.weights.len() != slot.in_width * slot.out_width {
                return Err(Error::DimensionMismatch {
                    what: "layer weights",
                    expected: slot.in_width * slot.out_width,
                    actual: layer.weights.len(),
                });
            }
            out.extend_from_slice(&layer.weights);
            match (slot.bias_offset, &layer.bias) {
                (Some(_), Some(b)) if b.len() == slot.out_width => out.extend_from_slice(b),
                (None, None) => {}
                (Some(_), b) => {
                    return Err(Error::DimensionMismatch {
                        what: "layer bias",
                        expected: slot.out_width,
                        actual: b.as_ref().map_or(0, Vec::len),
                    })
                }
                (None, Some(b)) => {
                    return Err(Error::DimensionMismatch {
                        what: "layer bias",
                        expected: 0,
                        actual: b.len(),
                    })
                }
            }
        }
        Ok(out)
    }

    pub fn unflatten<T: Copy>(&self, values: &[T]) -> Result<Vec<LayerWeights<T>>> {
        if values.len() != self.len {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.len,
                actual: values.len(),
            });
        }
        Ok(self
            .slots
            .iter()
            .map(|slot| {
                let w_end = slot.weight_offset + slot.in_width * slot.out_width;
                LayerWeights {
                    weights: values[slot.weight_offset..w_end].to_vec(),
                    bias: slot.bias_offset.map(|b| values[b..b + slot.out_width].to_vec()),
                }
            })
            .collect())
    }

    /// Human-readable name of a flat index, e.g. `W1[0,1]` or `b2[0]`
    /// (layers numbered from 1).
    pub fn describe(&self, index: usize) -> Option<String> {
        let (l, slot) = self
            .slots
            .iter()
            .enumerate()
            .find(|(_, s)| index >= s.weight_offset && index < s.end())?;
        let w_end = slot.weight_offset + slot.in_width * slot.out_width;
        Some(if index < w_end {
            let k = index - slot.weight_offset;
            format!("W{}[{},{}]", l + 1, k / slot.in_width, k % slot.in_width)
        } else {
            format!("b{}[{}]", l + 1, index - w_end)
        })
    }
}

/// Flat parameter vector. Always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self(values))
    }

    /// Checks length against `arch` as well as finiteness.
    pub fn for_arch(arch: &ModelArch, values: Vec<T>) -> Result<Self> {
        arch.check_params("parameter vector", &values)?;
        Self::new(values)
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| T::of(v)).collect())
    }

    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![T::zero(); len])
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    /// Euclidean distance in parameter space (not function space).
    pub fn l2_distance(&self, other: &Self) -> T {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

impl<T> AsRef<[T]> for ParamVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Recipe for a reproducible set of inputs drawn uniformly from
/// `[lo, hi]^input_dim`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub seed: u64,
    pub count: usize,
    pub input_dim: usize,
    pub lo: f64,
    pub hi: f64,
}

impl SampleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("samples.count", "must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(Error::config("samples.input_dim", "must be at least 1"));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::config(
                "samples.range",
                format!("need finite lo <= hi, got [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }
}

/// Inputs the empirical function distance is measured on, stored
/// row-major (`len x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet<T> {
    inputs: Vec<T>,
    dim: usize,
    generation: Option<SampleSpec>,
}

impl<T: Scalar> SampleSet<T> {
    pub fn generate(spec: SampleSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let (lo, hi) = (T::of(spec.lo), T::of(spec.hi));
        let inputs = (0..spec.count * spec.input_dim)
            .map(|_| {
                let v = if spec.lo == spec.hi {
                    spec.lo
                } else {
                    rng.gen_range(spec.lo..=spec.hi)
                };
                T::of(v).max(lo).min(hi)
            })
            .collect();
        Ok(Self {
            inputs,
            dim: spec.input_dim,
            generation: Some(spec),
        })
    }

    /// Explicit inputs, e.g. the x column of a labeled table.
    pub fn from_inputs(dim: usize, rows: &[Vec<T>]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("samples.input_dim", "must be at least 1"));
        }
        let mut inputs = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "sample input",
                    expected: dim,
                    actual: row.len(),
                });
            }
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            inputs.extend_from_slice(row);
        }
        Ok(Self {
            inputs,
            dim,
            generation: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn generation(&self) -> Option<&SampleSpec> {
        self.generation.as_ref()
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[T] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.inputs.chunks_exact(self.dim)
    }

    /// Copies the selected rows into a new set (no generation record).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
        }
        Self {
            inputs,
            dim: self.dim,
            generation: None,
        }
    }

    pub(crate) fn check_arch(&self, arch: &ModelArch) -> Result<()> {
        if self.dim != arch.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "sample input",
                expected: arch.input_dim(),
                actual: self.dim,
            });
        }
        if self.is_empty() {
            return Err(Error::EmptySamples);
        }
        Ok(())
    }
}

/// Reusable activation buffers for one evaluation thread.
#[derive(Clone, Debug)]
pub(crate) struct Scratch<T> {
    acts: Vec<Vec<T>>,
    deltas: Vec<Vec<T>>,
}

impl<T: Scalar> Scratch<T> {
    pub(crate) fn new(arch: &ModelArch) -> Self {
        let acts = arch
            .layer_widths
            .iter()
            .map(|&w| vec![T::zero(); w])
            .collect::<Vec<_>>();
        Self {
            deltas: acts.clone(),
            acts,
        }
    }

    pub(crate) fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }
}

/// Forward pass into `scratch`; lengths are the caller's responsibility.
pub(crate) fn forward_into<T: Scalar>(
    arch: &ModelArch,
    order: &LayerOrdering,
    params: &[T],
    x: &[T],
    scratch: &mut Scratch<T>,
) {
    scratch.acts[0].copy_from_slice(x);
    let last = order.slots.len() - 1;
    for (l, slot) in order.slots.iter().enumerate() {
        let (prev, next) = scratch.acts.split_at_mut(l + 1);
        let input = &prev[l];
        let out = &mut next[0];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &params[slot.weight_index(r, 0)..slot.weight_index(r, 0) + slot.in_width];
            let mut z = row
                .iter()
                .zip(input.iter())
                .fold(T::zero(), |acc, (&w, &a)| acc + w * a);
            if let Some(b) = slot.bias_offset {
                z += params[b + r];
            }
            *o = if l == last { z } else { arch.activation.apply(z) };
        }
    }
}

/// Accumulates `d(out . upstream)/d(params)` into `grad`, using the
/// activations left in `scratch` by the preceding [`forward_into`].
fn backward_into<T: Scalar>(
    arch: &ModelArch,
    order: &LayerOrdering,
    params: &[T],
    upstream: &[T],
    scratch: &mut Scratch<T>,
    grad: &mut [T],
) {
    let nl = order.slots.len();
    scratch.deltas[nl].copy_from_slice(upstream);
    for l in (0..nl).rev() {
        let slot = &order.slots[l];
        let (lower, upper) = scratch.deltas.split_at_mut(l + 1);
        let delta = &upper[0];
        let input = &scratch.acts[l];
        for (r, &dr) in delta.iter().enumerate() {
            if dr == T::zero() {
                continue;
            }
            let base = slot.weight_index(r, 0);
            for (c, &a) in input.iter().enumerate() {
                grad[base + c] += dr * a;
            }
            if let Some(b) = slot.bias_offset {
                grad[b + r] += dr;
            }
        }
        if l > 0 {
            let below = &mut lower[l];
            for (c, d) in below.iter_mut().enumerate() {
                let mut s = T::zero();
                for (r, &dr) in delta.iter().enumerate() {
                    s += params[slot.weight_index(r, c)] * dr;
                }
                *d = s * arch.activation.derivative_from_output(input[c]);
            }
        }
    }
}

/// `phi(x, theta)`.
pub fn forward<T: Scalar>(arch: &ModelArch, theta: &ParamVector<T>, x: &[T]) -> Result<Vec<T>> {
    arch.check_params("parameter vector", theta.as_slice())?;
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input vector",
            expected: arch.input_dim(),
            actual: x.len(),
        });
    }
    let order = arch.ordering();
    let mut scratch = Scratch::new(arch);
    forward_into(arch, &order, theta.as_slice(), x, &mut scratch);
    Ok(scratch.output().to_vec())
}

/// Squared output distance summed over output coordinates.
#[inline]
pub(crate) fn sq_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
}

/// Mean of per-sample squared differences between two row-major output
/// tables of `out_dim` columns.
pub(crate) fn mean_sq_diff<T: Scalar>(a: &[T], b: &[T], out_dim: usize) -> T {
    let n = a.len() / out_dim;
    let total = a
        .chunks_exact(out_dim)
        .zip(b.chunks_exact(out_dim))
        .fold(T::zero(), |acc, (x, y)| acc + sq_diff(x, y));
    total / T::of(n as f64)
}

/// Outputs of `theta` on every sample, row-major.
pub fn outputs_on<T: Scalar>(arch: &ModelArch, theta: &ParamVector<T>, samples: &SampleSet<T>) -> Result<Vec<T>> {
    arch.check_params("parameter vector", theta.as_slice())?;
    samples.check_arch(arch)?;
    let order = arch.ordering();
    let mut scratch = Scratch::new(arch);
    let mut out = Vec::with_capacity(samples.len() * arch.output_dim());
    for x in samples.iter() {
        forward_into(arch, &order, theta.as_slice(), x, &mut scratch);
        out.extend_from_slice(scratch.output());
    }
    Ok(out)
}

/// The output-matching objective against fixed targets on a fixed sample
/// set. Targets are usually the outputs of a reference parameter vector.
#[derive(Clone, Debug)]
pub struct Objective<'a, T> {
    arch: &'a ModelArch,
    order: LayerOrdering,
    samples: &'a SampleSet<T>,
    targets: Vec<T>,
}

impl<'a, T: Scalar> Objective<'a, T> {
    pub fn new(arch: &'a ModelArch, theta_ref: &ParamVector<T>, samples: &'a SampleSet<T>) -> Result<Self> {
        let targets = outputs_on(arch, theta_ref, samples)?;
        Ok(Self {
            arch,
            order: arch.ordering(),
            samples,
            targets,
        })
    }

    /// Targets given directly as a row-major `len x output_dim` table.
    pub fn from_targets(arch: &'a ModelArch, samples: &'a SampleSet<T>, targets: Vec<T>) -> Result<Self> {
        samples.check_arch(arch)?;
        let expected = samples.len() * arch.output_dim();
        if targets.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "target table",
                expected,
                actual: targets.len(),
            });
        }
        Ok(Self {
            arch,
            order: arch.ordering(),
            samples,
            targets,
        })
    }

    pub fn arch(&self) -> &ModelArch {
        self.arch
    }

    pub fn samples(&self) -> &SampleSet<T> {
        self.samples
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub(crate) fn scratch(&self) -> Scratch<T> {
        Scratch::new(self.arch)
    }

    /// J over the full sample set.
    pub fn loss(&self, theta: &ParamVector<T>) -> Result<T> {
        self.arch.check_params("parameter vector", theta.as_slice())?;
        Ok(self.loss_with(theta.as_slice(), &mut self.scratch()))
    }

    pub(crate) fn loss_with(&self, theta: &[T], scratch: &mut Scratch<T>) -> T {
        let od = self.arch.output_dim();
        let mut total = T::zero();
        for (i, x) in self.samples.iter().enumerate() {
            forward_into(self.arch, &self.order, theta, x, scratch);
            total += sq_diff(scratch.output(), &self.targets[i * od..(i + 1) * od]);
        }
        total / T::of(self.samples.len() as f64)
    }

    /// Gradient of the batch mean of J with respect to `theta`, written
    /// into `grad`. Returns the batch loss.
    pub(crate) fn grad_with(&self, theta: &[T], batch: &[usize], scratch: &mut Scratch<T>, grad: &mut [T]) -> T {
        let od = self.arch.output_dim();
        grad.iter_mut().for_each(|g| *g = T::zero());
        let scale = T::of(2.0) / T::of(batch.len() as f64);
        let mut upstream = vec![T::zero(); od];
        let mut total = T::zero();
        for &i in batch {
            forward_into(self.arch, &self.order, theta, self.samples.input(i), scratch);
            let target = &self.targets[i * od..(i + 1) * od];
            total += sq_diff(scratch.output(), target);
            for ((u, &o), &t) in upstream.iter_mut().zip(scratch.output()).zip(target) {
                *u = scale * (o - t);
            }
            backward_into(self.arch, &self.order, theta, &upstream, scratch, grad);
        }
        total / T::of(batch.len() as f64)
    }
}

/// J(theta_tilde): mean squared output discrepancy to `theta_ref`.
pub fn aux_loss<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    theta_tilde: &ParamVector<T>,
    samples: &SampleSet<T>,
) -> Result<T> {
    Objective::new(arch, theta_ref, samples)?.loss(theta_tilde)
}

/// Exact gradient of J with respect to `theta_tilde` over `batch`.
pub fn aux_loss_grad<T: Scalar>(
    arch: &ModelArch,
    theta_ref: &ParamVector<T>,
    theta_tilde: &ParamVector<T>,
    batch: &SampleSet<T>,
) -> Result<Vec<T>> {
    let obj = Objective::new(arch, theta_ref, batch)?;
    arch.check_params("parameter vector", theta_tilde.as_slice())?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let mut grad = vec![T::zero(); theta_tilde.len()];
    obj.grad_with(theta_tilde.as_slice(), &idx, &mut obj.scratch(), &mut grad);
    Ok(grad)
}

/// Empirical L2 distance between the two functions on `samples`
/// (square root of the sample mean).
pub fn function_distance<T: Scalar>(
    arch: &ModelArch,
    theta1: &ParamVector<T>,
    theta2: &ParamVector<T>,
    samples: &SampleSet<T>,
) -> Result<T> {
    aux_loss(arch, theta1, theta2, samples).map(|j| j.sqrt())
}
