//! Layer kernels with explicit backward passes. Activations are stored
//! channel-major: element `(c, t)` of a `C × L` map lives at `c·L + t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output length of a valid-padding window op.
pub fn valid_length(len: usize, window: usize, stride: usize) -> Option<usize> {
    if window == 0 || stride == 0 || len < window {
        None
    } else {
        Some((len - window) / stride + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn n_weights(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel
    }
}

/// Valid cross-correlation. `weights` is `out × in × k`, `input` is `in × len`.
pub fn conv1d_forward(
    input: &[f64],
    len: usize,
    weights: &[f64],
    bias: &[f64],
    s: ConvShape,
) -> Result<Vec<f64>> {
    let out_len = valid_length(len, s.kernel, s.stride).ok_or_else(|| {
        Error::invalid(format!(
            "conv1d input length {len} is shorter than kernel {}",
            s.kernel
        ))
    })?;
    if input.len() != s.in_channels * len
        || weights.len() != s.n_weights()
        || bias.len() != s.out_channels
    {
        return Err(Error::invalid(
            "conv1d operand sizes do not match the shape",
        ));
    }
    let mut out = vec![0.0; s.out_channels * out_len];
    for o in 0..s.out_channels {
        let orow = &mut out[o * out_len..(o + 1) * out_len];
        orow.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..s.in_channels {
            let w = &weights[(o * s.in_channels + c) * s.kernel..][..s.kernel];
            let x = &input[c * len..(c + 1) * len];
            for (t, acc) in orow.iter_mut().enumerate() {
                let xs = &x[t * s.stride..t * s.stride + s.kernel];
                *acc += w.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(out)
}

/// Accumulates weight/bias gradients into `grad_w`/`grad_b` and returns the
/// gradient with respect to the input.
pub fn conv1d_backward(
    input: &[f64],
    len: usize,
    weights: &[f64],
    s: ConvShape,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let out_len = grad_out.len() / s.out_channels;
    let mut grad_in = vec![0.0; s.in_channels * len];
    for o in 0..s.out_channels {
        let g = &grad_out[o * out_len..(o + 1) * out_len];
        grad_b[o] += g.iter().sum::<f64>();
        for c in 0..s.in_channels {
            let base = (o * s.in_channels + c) * s.kernel;
            let x = &input[c * len..(c + 1) * len];
            let gi = &mut grad_in[c * len..(c + 1) * len];
            for (t, &gt) in g.iter().enumerate() {
                if gt == 0.0 {
                    continue;
                }
                let p = t * s.stride;
                for j in 0..s.kernel {
                    grad_w[base + j] += gt * x[p + j];
                    gi[p + j] += gt * weights[base + j];
                }
            }
        }
    }
    grad_in
}

pub fn avgpool1d_forward(
    input: &[f64],
    channels: usize,
    len: usize,
    window: usize,
    stride: usize,
) -> Result<Vec<f64>> {
    let out_len = valid_length(len, window, stride).ok_or_else(|| {
        Error::invalid(format!(
            "avgpool input length {len} is shorter than window {window}"
        ))
    })?;
    if input.len() != channels * len {
        return Err(Error::invalid(
            "avgpool input size does not match its shape",
        ));
    }
    let mut out = Vec::with_capacity(channels * out_len);
    for c in 0..channels {
        let x = &input[c * len..(c + 1) * len];
        for t in 0..out_len {
            out.push(x[t * stride..t * stride + window].iter().sum::<f64>() / window as f64);
        }
    }
    Ok(out)
}

pub fn avgpool1d_backward(
    grad_out: &[f64],
    channels: usize,
    len: usize,
    window: usize,
    stride: usize,
) -> Vec<f64> {
    let out_len = grad_out.len() / channels.max(1);
    let mut grad_in = vec![0.0; channels * len];
    let inv = 1.0 / window as f64;
    for c in 0..channels {
        for t in 0..out_len {
            let g = grad_out[c * out_len + t] * inv;
            for v in &mut grad_in[c * len + t * stride..c * len + t * stride + window] {
                *v += g;
            }
        }
    }
    grad_in
}

/// `weights` is `units × inputs`, row-major.
pub fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
    let units = bias.len();
    if weights.len() != units * input.len() {
        return Err(Error::invalid(
            "dense weight matrix does not match input and bias sizes",
        ));
    }
    let m = input.len();
    Ok((0..units)
        .map(|u| {
            bias[u]
                + weights[u * m..(u + 1) * m]
                    .iter()
                    .zip(input)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect())
}

pub fn dense_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let m = input.len();
    let mut grad_in = vec![0.0; m];
    for (u, &g) in grad_out.iter().enumerate() {
        grad_b[u] += g;
        if g == 0.0 {
            continue;
        }
        let w = &weights[u * m..(u + 1) * m];
        let gw = &mut grad_w[u * m..(u + 1) * m];
        for i in 0..m {
            gw[i] += g * input[i];
            grad_in[i] += g * w[i];
        }
    }
    grad_in
}

/// Declarative layer description; `Concat` marks where branch outputs are
/// joined and only appears between the branches and the head of a CNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel_size: usize,
        stride: usize,
    },
    Avgpool1d {
        window: usize,
        stride: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
    Flatten,
    Concat,
}

/// `(channels, length)`; dense activations are `(1, units)`.
pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Layer {
    Conv1d {
        shape: ConvShape,
        in_len: usize,
        /// Weights (`out × in × k`) followed by biases.
        params: Vec<f64>,
    },
    Avgpool1d {
        channels: usize,
        in_len: usize,
        window: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        units: usize,
        /// Weights (`units × inputs`) followed by biases.
        params: Vec<f64>,
    },
    Relu,
    Flatten,
}

impl Layer {
    pub fn params(&self) -> Option<&[f64]> {
        match self {
            Layer::Conv1d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut Vec<f64>> {
        match self {
            Layer::Conv1d { params, .. } | Layer::Dense { params, .. } => Some(params),
            _ => None,
        }
    }

    fn split_point(&self) -> usize {
        match self {
            Layer::Conv1d { shape, .. } => shape.n_weights(),
            Layer::Dense { inputs, units, .. } => inputs * units,
            _ => 0,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            Layer::Conv1d { shape, .. } => shape.in_channels * shape.kernel,
            Layer::Dense { inputs, .. } => *inputs,
            _ => 0,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Conv1d {
                shape,
                in_len,
                params,
            } => {
                let (w, b) = params.split_at(shape.n_weights());
                conv1d_forward(x, *in_len, w, b, *shape).expect("shape checked at build")
            }
            Layer::Avgpool1d {
                channels,
                in_len,
                window,
                stride,
            } => avgpool1d_forward(x, *channels, *in_len, *window, *stride)
                .expect("shape checked at build"),
            Layer::Dense { inputs, params, .. } => {
                let (w, b) = params.split_at(self.split_point());
                debug_assert_eq!(x.len(), *inputs);
                dense_forward(x, w, b).expect("shape checked at build")
            }
            Layer::Relu => x.iter().map(|v| v.max(0.0)).collect(),
            Layer::Flatten => x.to_vec(),
        }
    }

    /// `x` is this layer's forward input; parameter gradients accumulate into `grad`.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grad: Option<&mut Vec<f64>>) -> Vec<f64> {
        match self {
            Layer::Conv1d {
                shape,
                in_len,
                params,
            } => {
                let split = shape.n_weights();
                let (gw, gb) = grad.expect("conv grads").split_at_mut(split);
                conv1d_backward(x, *in_len, &params[..split], *shape, grad_out, gw, gb)
            }
            Layer::Avgpool1d {
                channels,
                in_len,
                window,
                stride,
            } => avgpool1d_backward(grad_out, *channels, *in_len, *window, *stride),
            Layer::Dense { params, .. } => {
                let split = self.split_point();
                let (gw, gb) = grad.expect("dense grads").split_at_mut(split);
                dense_backward(x, &params[..split], grad_out, gw, gb)
            }
            Layer::Relu => grad_out
                .iter()
                .zip(x)
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect(),
            Layer::Flatten => grad_out.to_vec(),
        }
    }
}

/// A chain of layers with a fixed input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub input: Shape,
    pub layers: Vec<Layer>,
}

/// Inputs of every layer plus the final output, kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl Stack {
    /// Instantiates `specs` for `input`. `layer_offset` only labels errors.
    pub fn build(input: Shape, specs: &[LayerSpec], layer_offset: usize) -> Result<Stack> {
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let layer_no = layer_offset + i + 1;
            let (ch, len) = shape;
            let fail = |reason: String| Error::Shape {
                layer: layer_no,
                reason,
            };
            let (layer, next) = match *spec {
                LayerSpec::Conv1d {
                    filters,
                    kernel_size,
                    stride,
                } => {
                    if filters == 0 {
                        return Err(fail("conv1d needs at least one filter".into()));
                    }
                    let out = valid_length(len, kernel_size, stride).ok_or_else(|| {
                        fail(format!("conv1d kernel {kernel_size} stride {stride} on length {len} gives no output"))
                    })?;
                    let s = ConvShape {
                        in_channels: ch,
                        out_channels: filters,
                        kernel: kernel_size,
                        stride,
                    };
                    (
                        Layer::Conv1d {
                            shape: s,
                            in_len: len,
                            params: vec![0.0; s.n_weights() + filters],
                        },
                        (filters, out),
                    )
                }
                LayerSpec::Avgpool1d { window, stride } => {
                    let out = valid_length(len, window, stride).ok_or_else(|| {
                        fail(format!("avgpool window {window} stride {stride} on length {len} gives no output"))
                    })?;
                    (
                        Layer::Avgpool1d {
                            channels: ch,
                            in_len: len,
                            window,
                            stride,
                        },
                        (ch, out),
                    )
                }
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(fail("dense layer needs at least one unit".into()));
                    }
                    let inputs = ch * len;
                    (
                        Layer::Dense {
                            inputs,
                            units,
                            params: vec![0.0; inputs * units + units],
                        },
                        (1, units),
                    )
                }
                LayerSpec::Relu => (Layer::Relu, shape),
                LayerSpec::Flatten => (Layer::Flatten, (1, ch * len)),
                LayerSpec::Concat => return Err(fail("concat only joins the CNN branches".into())),
            };
            if matches!(layer, Layer::Dense { .. }) && ch != 1 {
                return Err(fail("dense layer needs a flattened input".into()));
            }
            layers.push(layer);
            shape = next;
        }
        Ok(Stack { input, layers })
    }

    pub fn output_shape(&self) -> Shape {
        let mut shape = self.input;
        for l in &self.layers {
            shape = match l {
                Layer::Conv1d {
                    shape: s, in_len, ..
                } => (
                    s.out_channels,
                    valid_length(*in_len, s.kernel, s.stride).unwrap_or(0),
                ),
                Layer::Avgpool1d {
                    channels,
                    in_len,
                    window,
                    stride,
                } => (
                    *channels,
                    valid_length(*in_len, *window, *stride).unwrap_or(0),
                ),
                Layer::Dense { units, .. } => (1, *units),
                Layer::Relu => shape,
                Layer::Flatten => (1, shape.0 * shape.1),
            };
        }
        shape
    }

    /// Seeded uniform `±√(6 / fan_in)` weights, zero biases.
    pub fn init(&mut self, rng: &mut crate::rng::Rng) {
        use rand::Rng as _;
        for l in &mut self.layers {
            let split = l.split_point();
            let limit = (6.0 / l.fan_in().max(1) as f64).sqrt();
            if let Some(p) = l.params_mut() {
                for (i, v) in p.iter_mut().enumerate() {
                    *v = if i < split {
                        rng.random_range(-limit..limit)
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for l in &self.layers {
            let next = l.forward(acts.last().expect("non-empty"));
            acts.push(next);
        }
        Trace { acts }
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in &self.layers {
            cur = l.forward(&cur);
        }
        cur
    }

    /// `grads` holds one buffer per parametric layer, in layer order.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [Vec<f64>]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        let mut slot = grads.len();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let buf = if l.params().is_some() {
                slot -= 1;
                Some(&mut grads[slot])
            } else {
                None
            };
            g = l.backward(&trace.acts[i], &g, buf);
        }
        g
    }

    pub fn n_param_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.params().is_some()).count()
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers.iter().filter_map(Layer::params)
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers.iter_mut().filter_map(Layer::params_mut)
    }
}
