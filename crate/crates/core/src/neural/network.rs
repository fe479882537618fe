//! CNN and dense network assembly on top of [`Stack`].

use serde::{Deserialize, Serialize};

use super::layers::{LayerSpec, Stack, Trace};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const WEATHER_CHANNELS: usize = 6;
pub const STATIC_INPUTS: usize = 7;

/// A weather branch applied with shared weights to every weather channel,
/// a dense branch for the static inputs, and a dense head over the
/// concatenation of all branch outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub weather_branch: Vec<LayerSpec>,
    pub static_branch: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
}

impl Default for CnnArchitecture {
    fn default() -> Self {
        use LayerSpec::*;
        CnnArchitecture {
            weather_branch: vec![
                Conv1d {
                    filters: 8,
                    kernel_size: 5,
                    stride: 1,
                },
                Relu,
                Avgpool1d {
                    window: 2,
                    stride: 2,
                },
                Conv1d {
                    filters: 12,
                    kernel_size: 3,
                    stride: 1,
                },
                Relu,
                Avgpool1d {
                    window: 2,
                    stride: 2,
                },
                Conv1d {
                    filters: 16,
                    kernel_size: 3,
                    stride: 1,
                },
                Relu,
                Flatten,
            ],
            static_branch: vec![Dense { units: 16 }, Relu, Dense { units: 16 }, Relu],
            head: vec![
                Dense { units: 64 },
                Relu,
                Dense { units: 32 },
                Relu,
                Dense { units: 1 },
            ],
        }
    }
}

impl CnnArchitecture {
    /// A small variant used for gradient checks and quick tests.
    pub fn tiny() -> Self {
        use LayerSpec::*;
        CnnArchitecture {
            weather_branch: vec![
                Conv1d {
                    filters: 3,
                    kernel_size: 3,
                    stride: 1,
                },
                Relu,
                Avgpool1d {
                    window: 2,
                    stride: 2,
                },
                Conv1d {
                    filters: 4,
                    kernel_size: 2,
                    stride: 1,
                },
                Relu,
                Flatten,
            ],
            static_branch: vec![Dense { units: 4 }, Relu],
            head: vec![
                Dense { units: 12 },
                Relu,
                Dense { units: 6 },
                Relu,
                Dense { units: 1 },
            ],
        }
    }
}

/// Hidden widths of a ReLU multilayer perceptron with one linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArchitecture {
    pub hidden: Vec<usize>,
}

impl Default for DenseArchitecture {
    fn default() -> Self {
        DenseArchitecture {
            hidden: vec![64, 32, 16],
        }
    }
}

impl DenseArchitecture {
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(2 * self.hidden.len() + 1);
        for &u in &self.hidden {
            specs.push(LayerSpec::Dense { units: u });
            specs.push(LayerSpec::Relu);
        }
        specs.push(LayerSpec::Dense { units: 1 });
        specs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSpec {
    /// Input row: `channels × weeks` weather values (channel-major) then
    /// `static_inputs` static values.
    Cnn {
        arch: CnnArchitecture,
        weeks: usize,
        channels: usize,
        static_inputs: usize,
    },
    Dense {
        arch: DenseArchitecture,
        inputs: usize,
    },
}

impl NetworkSpec {
    pub fn cnn(arch: CnnArchitecture, weeks: usize) -> Self {
        NetworkSpec::Cnn {
            arch,
            weeks,
            channels: WEATHER_CHANNELS,
            static_inputs: STATIC_INPUTS,
        }
    }

    pub fn dense(arch: DenseArchitecture, inputs: usize) -> Self {
        NetworkSpec::Dense { arch, inputs }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetworkSpec::Cnn {
                weeks,
                channels,
                static_inputs,
                ..
            } => channels * weeks + static_inputs,
            NetworkSpec::Dense { inputs, .. } => *inputs,
        }
    }
}

/// An initialized network. The CNN holds three stacks (weather, static,
/// head); the dense network holds one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub seed: u64,
    pub stacks: Vec<Stack>,
}

/// Per-sample activations for [`Network::backward`].
#[derive(Debug, Clone)]
pub struct NetTrace {
    traces: Vec<Trace>,
    output: f64,
}

impl NetTrace {
    pub fn output(&self) -> f64 {
        self.output
    }

    /// Inputs seen by layer `layer` of stack `stack`; the shared weather
    /// branch yields one per channel.
    pub fn stack_inputs(&self, stack: usize, layer: usize) -> Vec<&[f64]> {
        let n = self.traces.len();
        let range = match (n, stack) {
            (1, _) => 0..1,
            (_, 0) => 0..n - 2,
            (_, 1) => n - 2..n - 1,
            _ => n - 1..n,
        };
        self.traces[range]
            .iter()
            .map(|t| t.acts[layer].as_slice())
            .collect()
    }
}

/// One gradient buffer per parametric layer, matching [`Network::params`].
pub type Grads = Vec<Vec<f64>>;

pub fn build_network(spec: &NetworkSpec, seed: u64) -> Result<Network> {
    let stacks = match spec {
        NetworkSpec::Cnn {
            arch,
            weeks,
            channels,
            static_inputs,
        } => {
            if *channels == 0 {
                return Err(Error::invalid("CNN needs at least one weather channel"));
            }
            let weather = Stack::build((1, *weeks), &arch.weather_branch, 0)?;
            let wout = weather.output_shape();
            if wout.0 != 1 {
                return Err(Error::Shape {
                    layer: arch.weather_branch.len(),
                    reason: "weather branch must end flattened".into(),
                });
            }
            let off = arch.weather_branch.len();
            let stat = Stack::build((1, *static_inputs), &arch.static_branch, off)?;
            let sout = stat.output_shape();
            let off = off + arch.static_branch.len();
            let head = Stack::build((1, channels * wout.1 + sout.0 * sout.1), &arch.head, off)?;
            check_scalar_output(&head, off + arch.head.len())?;
            vec![weather, stat, head]
        }
        NetworkSpec::Dense { arch, inputs } => {
            if *inputs == 0 {
                return Err(Error::invalid("dense network needs at least one input"));
            }
            let specs = arch.layer_specs();
            let mlp = Stack::build((1, *inputs), &specs, 0)?;
            check_scalar_output(&mlp, specs.len())?;
            vec![mlp]
        }
    };
    let mut net = Network {
        spec: spec.clone(),
        seed,
        stacks,
    };
    let mut rng = crate::rng::rng(seed);
    for s in &mut net.stacks {
        s.init(&mut rng);
    }
    Ok(net)
}

fn check_scalar_output(stack: &Stack, last_layer: usize) -> Result<()> {
    if stack.output_shape() != (1, 1) {
        return Err(Error::Shape {
            layer: last_layer,
            reason: format!(
                "network must end in a single output, got {:?}",
                stack.output_shape()
            ),
        });
    }
    Ok(())
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &[f64]> {
        self.stacks.iter().flat_map(Stack::param_slices)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.stacks.iter_mut().flat_map(Stack::param_slices_mut)
    }

    pub fn zero_grads(&self) -> Grads {
        self.params().map(|p| vec![0.0; p.len()]).collect()
    }

    fn cnn_dims(&self) -> (usize, usize) {
        match self.spec {
            NetworkSpec::Cnn {
                weeks, channels, ..
            } => (weeks, channels),
            NetworkSpec::Dense { .. } => unreachable!("dense network has no weather branch"),
        }
    }

    pub fn forward(&self, x: &[f64]) -> NetTrace {
        debug_assert_eq!(x.len(), self.input_dim());
        match self.stacks.as_slice() {
            [mlp] => {
                let t = mlp.forward(x);
                let output = t.output()[0];
                NetTrace {
                    traces: vec![t],
                    output,
                }
            }
            [weather, stat, head] => {
                let (weeks, channels) = self.cnn_dims();
                let mut traces = Vec::with_capacity(channels + 2);
                let mut joined = Vec::with_capacity(head.input.1);
                for c in 0..channels {
                    let t = weather.forward(&x[c * weeks..(c + 1) * weeks]);
                    joined.extend_from_slice(t.output());
                    traces.push(t);
                }
                let t = stat.forward(&x[channels * weeks..]);
                joined.extend_from_slice(t.output());
                traces.push(t);
                let t = head.forward(&joined);
                let output = t.output()[0];
                traces.push(t);
                NetTrace { traces, output }
            }
            _ => unreachable!("networks have one or three stacks"),
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self.stacks.as_slice() {
            [mlp] => mlp.predict(x)[0],
            [weather, stat, head] => {
                let (weeks, channels) = self.cnn_dims();
                let mut joined = Vec::with_capacity(head.input.1);
                for c in 0..channels {
                    joined.extend(weather.predict(&x[c * weeks..(c + 1) * weeks]));
                }
                joined.extend(stat.predict(&x[channels * weeks..]));
                head.predict(&joined)[0]
            }
            _ => unreachable!("networks have one or three stacks"),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        crate::error::check_dim(self.input_dim(), x.cols())?;
        Ok(x.iter_rows().map(|r| self.predict_row(r)).collect())
    }

    /// Accumulates `d loss / d output = g` back through the network.
    pub fn backward(&self, trace: &NetTrace, g: f64, grads: &mut Grads) {
        match self.stacks.as_slice() {
            [mlp] => {
                mlp.backward(&trace.traces[0], &[g], grads);
            }
            [weather, stat, head] => {
                let (_, channels) = self.cnn_dims();
                let nw = weather.n_param_layers();
                let ns = stat.n_param_layers();
                let (gw, rest) = grads.split_at_mut(nw);
                let (gs, gh) = rest.split_at_mut(ns);
                let gj = head.backward(&trace.traces[channels + 1], &[g], gh);
                let per = weather.output_shape().1;
                for c in 0..channels {
                    weather.backward(&trace.traces[c], &gj[c * per..(c + 1) * per], gw);
                }
                stat.backward(&trace.traces[channels], &gj[channels * per..], gs);
            }
            _ => unreachable!("networks have one or three stacks"),
        }
    }

    /// Concatenated branch outputs that feed the CNN head.
    pub fn cnn_features(&self, x: &[f64]) -> Option<Vec<f64>> {
        match self.stacks.as_slice() {
            [weather, stat, _] => {
                let (weeks, channels) = self.cnn_dims();
                let mut joined = Vec::new();
                for c in 0..channels {
                    joined.extend(weather.predict(&x[c * weeks..(c + 1) * weeks]));
                }
                joined.extend(stat.predict(&x[channels * weeks..]));
                Some(joined)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_cnn_builds() {
        let net = build_network(&NetworkSpec::cnn(CnnArchitecture::default(), 45), 3).unwrap();
        assert_eq!(net.stacks[2].input, (1, 6 * 112 + 16));
        assert_eq!(net.input_dim(), 6 * 45 + 7);
        let again = build_network(&NetworkSpec::cnn(CnnArchitecture::default(), 45), 3).unwrap();
        assert_eq!(net, again);
        let other = build_network(&NetworkSpec::cnn(CnnArchitecture::default(), 45), 4).unwrap();
        assert_ne!(net, other);
    }

    #[test]
    fn short_season_names_first_layer() {
        match build_network(&NetworkSpec::cnn(CnnArchitecture::default(), 3), 0) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn head_must_be_scalar() {
        let mut arch = CnnArchitecture::tiny();
        arch.head.pop();
        assert!(matches!(
            build_network(&NetworkSpec::cnn(arch, 12), 0),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn shared_branch_permutes_features() {
        let net = build_network(&NetworkSpec::cnn(CnnArchitecture::tiny(), 12), 9).unwrap();
        let mut x: Vec<f64> = (0..net.input_dim())
            .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
            .collect();
        let a = net.cnn_features(&x).unwrap();
        let (lo, hi) = x.split_at_mut(12);
        lo.swap_with_slice(&mut hi[..12]);
        let b = net.cnn_features(&x).unwrap();
        let per = net.stacks[0].output_shape().1;
        assert_eq!(a[..per], b[per..2 * per]);
        assert_eq!(a[per..2 * per], b[..per]);
        assert_eq!(a[2 * per..], b[2 * per..]);
    }

    #[test]
    fn forward_matches_predict() {
        let net = build_network(&NetworkSpec::cnn(CnnArchitecture::tiny(), 12), 1).unwrap();
        let x: Vec<f64> = (0..net.input_dim())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        assert_eq!(net.forward(&x).output(), net.predict_row(&x));
    }
}
