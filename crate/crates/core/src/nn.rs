//! Minimal differentiable substrate for the autoencoders: 1D convolutions
//! with stride-2 down-sampling, nearest-neighbor up-sampling convolutions,
//! rectified-linear activations, and exact reverse-mode gradients.
//!
//! "Same" zero-padding keeps the length arithmetic exact: a stride-2 layer
//! halves the sequence, an up-sampling layer doubles it. Everything is
//! double precision and deterministic given the same parameters and input.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channels-by-length value container, row-major per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    channels: usize,
    len: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Tensor {
            channels,
            len,
            data: vec![0.0; channels * len],
        }
    }

    pub fn from_data(channels: usize, len: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * len);
        Tensor { channels, len, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, c: usize, t: usize) -> f64 {
        self.data[c * self.len + t]
    }

    pub fn set(&mut self, c: usize, t: usize, x: f64) {
        self.data[c * self.len + t] = x;
    }

    pub fn add_at(&mut self, c: usize, t: usize, x: f64) {
        self.data[c * self.len + t] += x;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Layer families of the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Strided convolution that halves the sequence length.
    ConvDown,
    /// Nearest-neighbor x2 up-sampling followed by a stride-1 convolution.
    ConvUp,
    /// Rectified-linear activation.
    Activation,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::ConvDown => "conv-down",
            LayerKind::ConvUp => "conv-up",
            LayerKind::Activation => "activation",
        }
    }
}

/// Shape description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl LayerSpec {
    pub fn conv_down(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ConvDown,
            in_channels,
            out_channels,
            kernel,
            stride: 2,
        }
    }

    pub fn conv_up(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec {
            kind: LayerKind::ConvUp,
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    /// Trainable parameters: `in * out * kernel` weights plus `out` biases.
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Activation => 0,
            _ => self.in_channels * self.out_channels * self.kernel + self.out_channels,
        }
    }
}

/// Convolution layer with owned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub spec: LayerSpec,
    /// Indexed `[out][in][kernel]`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(spec: LayerSpec) -> Self {
        ConvLayer {
            weights: vec![0.0; spec.in_channels * spec.out_channels * spec.kernel],
            bias: vec![0.0; spec.out_channels],
            spec,
        }
    }

    fn weight(&self, o: usize, c: usize, k: usize) -> f64 {
        self.weights[(o * self.spec.in_channels + c) * self.spec.kernel + k]
    }

    /// Uniform fan-in initialization, biases at zero.
    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        let fan_in = (self.spec.in_channels * self.spec.kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        for w in &mut self.weights {
            *w = rng.gen_range(-bound..bound);
        }
        self.bias.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Conv(ConvLayer),
    Activation,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(conv) => conv.spec.kind,
            Layer::Activation => LayerKind::Activation,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv(conv) => conv.spec.param_count(),
            Layer::Activation => 0,
        }
    }
}

/// Double every timestep: `[a, b] -> [a, a, b, b]`.
fn upsample2(input: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(input.channels, input.len * 2);
    for c in 0..input.channels {
        for t in 0..input.len {
            let x = input.get(c, t);
            out.set(c, 2 * t, x);
            out.set(c, 2 * t + 1, x);
        }
    }
    out
}

/// Fold an up-sampled gradient back: both copies flow to the source step.
fn upsample2_backward(grad: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(grad.channels, grad.len / 2);
    for c in 0..grad.channels {
        for t in 0..out.len {
            out.set(c, t, grad.get(c, 2 * t) + grad.get(c, 2 * t + 1));
        }
    }
    out
}

/// "Same" zero-padding for the given length, kernel, and stride: returns
/// the output length and the left padding.
fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out_len = len.div_ceil(stride);
    let pad_total = ((out_len - 1) * stride + kernel).saturating_sub(len);
    (out_len, pad_total / 2)
}

fn conv_same(layer: &ConvLayer, x: &Tensor) -> Tensor {
    let spec = &layer.spec;
    let (out_len, pad_left) = same_padding(x.len, spec.kernel, spec.stride);
    let mut y = Tensor::zeros(spec.out_channels, out_len);
    for o in 0..spec.out_channels {
        for j in 0..out_len {
            let mut acc = layer.bias[o];
            for c in 0..spec.in_channels {
                let row = x.channel(c);
                for k in 0..spec.kernel {
                    let i = (j * spec.stride + k) as isize - pad_left as isize;
                    if (0..x.len as isize).contains(&i) {
                        acc += layer.weight(o, c, k) * row[i as usize];
                    }
                }
            }
            y.set(o, j, acc);
        }
    }
    y
}

fn conv_same_backward(
    layer: &ConvLayer,
    x: &Tensor,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>, Tensor) {
    let spec = &layer.spec;
    let (out_len, pad_left) = same_padding(x.len, spec.kernel, spec.stride);
    debug_assert_eq!(out_len, grad_out.len);
    let mut d_weights = vec![0.0; layer.weights.len()];
    let mut d_bias = vec![0.0; layer.bias.len()];
    let mut d_input = Tensor::zeros(x.channels, x.len);
    for o in 0..spec.out_channels {
        for j in 0..out_len {
            let g = grad_out.get(o, j);
            d_bias[o] += g;
            for c in 0..spec.in_channels {
                for k in 0..spec.kernel {
                    let i = (j * spec.stride + k) as isize - pad_left as isize;
                    if (0..x.len as isize).contains(&i) {
                        let i = i as usize;
                        d_weights[(o * spec.in_channels + c) * spec.kernel + k] +=
                            g * x.get(c, i);
                        d_input.add_at(c, i, g * layer.weight(o, c, k));
                    }
                }
            }
        }
    }
    (d_weights, d_bias, d_input)
}

/// Gradients for one layer's parameters; empty for activations.
#[derive(Debug, Clone, Default)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetworkGrads {
    pub fn zeros_like(network: &Network) -> Self {
        let layers = network
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(conv) => LayerGrads {
                    weights: vec![0.0; conv.weights.len()],
                    bias: vec![0.0; conv.bias.len()],
                },
                Layer::Activation => LayerGrads::default(),
            })
            .collect();
        NetworkGrads { layers }
    }

    pub fn accumulate(&mut self, other: &NetworkGrads) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine.weights.iter_mut().zip(&theirs.weights) {
                *a += b;
            }
            for (a, b) in mine.bias.iter_mut().zip(&theirs.bias) {
                *a += b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for g in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *g *= factor;
            }
        }
    }

    /// Flatten in the same order as [`Network::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, index-aligned with the layer list.
    layer_inputs: Vec<Tensor>,
    output: Tensor,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    #[cfg(test)]
    fn layer_input_lengths(&self) -> Vec<usize> {
        self.layer_inputs.iter().map(Tensor::len).collect()
    }
}

/// A stack of layers applied in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn init_weights(&mut self, rng: &mut impl Rng) {
        for layer in &mut self.layers {
            if let Layer::Conv(conv) = layer {
                conv.init_weights(rng);
            }
        }
    }

    /// Run the network, keeping per-layer inputs for [`Network::backward`].
    pub fn forward(&self, input: &Tensor) -> Result<ForwardCache> {
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let next = match layer {
                Layer::Conv(conv) => {
                    if current.channels() != conv.spec.in_channels {
                        return Err(Error::ShapeMismatch {
                            layer: format!("layer {index} ({})", conv.spec.kind.name()),
                            expected: format!("{} channels", conv.spec.in_channels),
                            actual: format!("{} channels", current.channels()),
                        });
                    }
                    let x = match conv.spec.kind {
                        LayerKind::ConvUp => upsample2(&current),
                        _ => current.clone(),
                    };
                    conv_same(conv, &x)
                }
                Layer::Activation => {
                    let mut out = current.clone();
                    for x in &mut out.data {
                        *x = x.max(0.0);
                    }
                    out
                }
            };
            layer_inputs.push(current);
            current = next;
        }
        Ok(ForwardCache {
            layer_inputs,
            output: current,
        })
    }

    /// Exact reverse-mode gradients of a scalar loss, given its gradient
    /// with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &Tensor) -> NetworkGrads {
        let mut grads = NetworkGrads::zeros_like(self);
        let mut grad = grad_output.clone();
        for (index, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.layer_inputs[index];
            grad = match layer {
                Layer::Conv(conv) => {
                    let x = match conv.spec.kind {
                        LayerKind::ConvUp => upsample2(input),
                        _ => input.clone(),
                    };
                    let (d_w, d_b, d_x) = conv_same_backward(conv, &x, &grad);
                    grads.layers[index] = LayerGrads {
                        weights: d_w,
                        bias: d_b,
                    };
                    match conv.spec.kind {
                        LayerKind::ConvUp => upsample2_backward(&d_x),
                        _ => d_x,
                    }
                }
                Layer::Activation => {
                    let mut d = grad.clone();
                    for (g, &x) in d.data.iter_mut().zip(input.data()) {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    d
                }
            };
        }
        grads
    }

    /// Parameters flattened layer by layer, weights then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            if let Layer::Conv(conv) = layer {
                out.extend_from_slice(&conv.weights);
                out.extend_from_slice(&conv.bias);
            }
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let mut offset = 0;
        for layer in &mut self.layers {
            if let Layer::Conv(conv) = layer {
                let nw = conv.weights.len();
                conv.weights.copy_from_slice(&params[offset..offset + nw]);
                offset += nw;
                let nb = conv.bias.len();
                conv.bias.copy_from_slice(&params[offset..offset + nb]);
                offset += nb;
            }
        }
        assert_eq!(offset, params.len(), "parameter vector length mismatch");
    }
}

/// Mean squared error over all entries.
pub fn mse(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.data.len(), b.data.len());
    let n = a.data.len() as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Gradient of [`mse`] with respect to its first argument.
pub fn mse_grad(a: &Tensor, b: &Tensor) -> Tensor {
    let n = a.data.len() as f64;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| 2.0 * (x - y) / n)
        .collect();
    Tensor::from_data(a.channels, a.len, data)
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
        }
    }

    /// One update; rejects non-finite gradients with a diagnostic.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.first_moment.len());
        if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient entry {idx} is {}",
                grads[idx]
            )));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bias1;
            let v_hat = self.second_moment[i] / bias2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
