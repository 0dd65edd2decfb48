//! Ordered layer stacks with a recorded tape for backpropagation.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::nn::layers::{
    relu, relu_backward, sigmoid, sigmoid_backward, Conv2d, ConvSpec, Dense, LayerSpec, MaxPool2d, SIGMOID_EPS,
};
use crate::nn::optim::ParamMut;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub enum Layer<T: Scalar> {
    Conv(Conv2d<T>),
    MaxPool(MaxPool2d),
    Relu,
    Sigmoid,
    Flatten,
    Dense(Dense<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(c) => LayerSpec::Conv(c.spec),
            Layer::MaxPool(p) => LayerSpec::MaxPool { size: p.size },
            Layer::Relu => LayerSpec::Relu,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Dense(d) => LayerSpec::FullyConnected {
                fan_in: d.fan_in(),
                fan_out: d.fan_out(),
            },
        }
    }

    /// A zero-parameter layer for the given spec.
    pub fn from_spec(spec: LayerSpec) -> Self {
        match spec {
            LayerSpec::Conv(c) => Layer::Conv(Conv2d::zeros(c)),
            LayerSpec::MaxPool { size } => Layer::MaxPool(MaxPool2d { size }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::FullyConnected { fan_in, fan_out } => Layer::Dense(Dense::zeros(fan_in, fan_out)),
        }
    }

    fn params(&self) -> Option<(&Tensor<T>, &Tensor<T>)> {
        match self {
            Layer::Conv(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    fn params_mut(&mut self) -> Option<(&mut Tensor<T>, &mut Tensor<T>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NamedLayer<T: Scalar> {
    pub name: String,
    pub layer: Layer<T>,
}

enum Cache<T: Scalar> {
    Input(Tensor<T>),
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Output(Tensor<T>),
    PreActivation(Tensor<T>),
    Shape(Vec<usize>),
}

/// Values recorded by [`Sequential::forward_train`], consumed by backward.
pub struct Tape<T: Scalar> {
    caches: Vec<Cache<T>>,
}

/// Per-layer inputs and activation-pattern signatures from a traced forward.
///
/// A signature hashes the discrete choices a layer made (ReLU on/off pattern,
/// pooling argmax, sigmoid clamp flags); two forwards with equal signatures
/// traverse the same linear piece of the network.
#[derive(Clone, Debug, Default)]
pub struct Trace<T: Scalar> {
    pub inputs: Vec<Tensor<T>>,
    pub signatures: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct Sequential<T: Scalar> {
    pub name: String,
    pub layers: Vec<NamedLayer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(name: impl Into<String>) -> Self {
        Sequential {
            name: name.into(),
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer<T>) {
        self.layers.push(NamedLayer {
            name: name.into(),
            layer,
        });
    }

    /// Item shape after every layer, starting from `input` (a `[C,H,W]` or `[F]` item).
    pub fn shape_trace(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for l in &self.layers {
            let next = l
                .layer
                .spec()
                .output_item_shape(shapes.last().unwrap())
                .map_err(|e| Error::shape(format!("{}.{}: {e}", self.name, l.name)))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.layer.spec().param_count()).sum()
    }

    /// `(name, tensor, is_bias)` for every learnable tensor, weight before bias.
    pub fn params(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = Vec::new();
        for l in &self.layers {
            if let Some((w, b)) = l.layer.params() {
                out.push((format!("{}.{}.weight", self.name, l.name), w, false));
                out.push((format!("{}.{}.bias", self.name, l.name), b, true));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        let seq = &self.name;
        for l in &mut self.layers {
            let name = &l.name;
            if let Some((w, b)) = l.layer.params_mut() {
                out.push(ParamMut {
                    name: format!("{seq}.{name}.weight"),
                    value: w,
                    is_bias: false,
                });
                out.push(ParamMut {
                    name: format!("{seq}.{name}.bias"),
                    value: b,
                    is_bias: true,
                });
            }
        }
        out
    }

    /// Index of the layer owning the `k`-th learnable tensor.
    pub fn layer_of_param(&self, k: usize) -> Option<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.layer.params().is_some())
            .nth(k / 2)
            .map(|(i, _)| i)
    }

    fn step(&self, i: usize, x: &Tensor<T>) -> Result<(Tensor<T>, Option<Cache<T>>)> {
        let named = &self.layers[i];
        let wrap = |e: Error| Error::shape(format!("{}.{}: {e}", self.name, named.name));
        Ok(match &named.layer {
            Layer::Conv(c) => (c.forward(x).map_err(wrap)?, None),
            Layer::Dense(d) => (d.forward(x).map_err(wrap)?, None),
            Layer::MaxPool(p) => {
                let (y, argmax) = p.forward(x).map_err(wrap)?;
                (
                    y,
                    Some(Cache::Pool {
                        input_shape: x.shape().to_vec(),
                        argmax,
                    }),
                )
            }
            Layer::Relu => (relu(x), None),
            Layer::Sigmoid => (sigmoid(x), None),
            Layer::Flatten => {
                let b = x.batch();
                (x.clone().reshape(&[b, x.item_len()])?, None)
            }
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            cur = self.step(i, &cur)?.0;
        }
        Ok(cur)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tape<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for i in 0..self.layers.len() {
            let (y, cache) = self.step(i, &cur)?;
            let cache = match (&self.layers[i].layer, cache) {
                (_, Some(c)) => c,
                (Layer::Conv(_) | Layer::Dense(_), None) => Cache::Input(cur),
                (Layer::Relu, None) => Cache::Output(y.clone()),
                (Layer::Sigmoid, None) => Cache::PreActivation(cur),
                (_, None) => Cache::Shape(cur.shape().to_vec()),
            };
            caches.push(cache);
            cur = y;
        }
        Ok((cur, Tape { caches }))
    }

    /// Forward from layer `start` (whose input is `x`), recording signatures
    /// and, optionally, every layer input.
    pub fn forward_traced(&self, start: usize, x: &Tensor<T>, keep_inputs: bool) -> Result<(Tensor<T>, Trace<T>)> {
        let mut trace = Trace::default();
        let mut cur = x.clone();
        for i in start..self.layers.len() {
            if keep_inputs {
                trace.inputs.push(cur.clone());
            }
            let (y, cache) = self.step(i, &cur)?;
            let sig = match (&self.layers[i].layer, &cache) {
                (Layer::Relu, _) => hash_bits(y.data().iter().map(|&v| v > T::ZERO)),
                (Layer::Sigmoid, _) => {
                    let lo = T::of(SIGMOID_EPS);
                    let hi = T::of(1.0 - SIGMOID_EPS);
                    hash_bits(y.data().iter().map(|&v| v <= lo || v >= hi))
                }
                (_, Some(Cache::Pool { argmax, .. })) => {
                    let mut h = DefaultHasher::new();
                    argmax.iter().for_each(|&a| h.write_usize(a));
                    h.finish()
                }
                _ => 0,
            };
            trace.signatures.push(sig);
            cur = y;
        }
        Ok((cur, trace))
    }

    /// Backpropagates `dy` through the tape. Returns the input gradient (if
    /// requested) and parameter gradients in [`Sequential::params`] order.
    pub fn backward(&self, tape: Tape<T>, dy: Tensor<T>, need_input: bool) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        let mut per_layer: Vec<Option<(Tensor<T>, Tensor<T>)>> = vec![None; self.layers.len()];
        let mut grad = dy;
        let n = self.layers.len();
        for (i, cache) in tape.caches.into_iter().enumerate().rev() {
            let want_input = i > 0 || need_input;
            grad = match (&self.layers[i].layer, cache) {
                (Layer::Conv(c), Cache::Input(x)) => {
                    let g = c.backward(&x, &grad, want_input)?;
                    per_layer[i] = Some((g.weight, g.bias));
                    match g.input {
                        Some(gi) => gi,
                        None => Tensor::zeros(&[0]),
                    }
                }
                (Layer::Dense(d), Cache::Input(x)) => {
                    let g = d.backward(&x, &grad)?;
                    per_layer[i] = Some((g.weight, g.bias));
                    g.input
                }
                (Layer::MaxPool(p), Cache::Pool { input_shape, argmax }) => p.backward(&input_shape, &argmax, &grad)?,
                (Layer::Relu, Cache::Output(y)) => relu_backward(&y, &grad),
                (Layer::Sigmoid, Cache::PreActivation(x)) => sigmoid_backward(&x, &grad),
                (Layer::Flatten, Cache::Shape(s)) => grad.reshape(&s)?,
                _ => return Err(Error::shape(format!("{}: tape does not match layer {i} of {n}", self.name))),
            };
        }
        let grads = per_layer.into_iter().flatten().flat_map(|(w, b)| [w, b]).collect();
        Ok((need_input.then_some(grad), grads))
    }
}

fn hash_bits(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h = DefaultHasher::new();
    let mut word = 0u64;
    let mut k = 0;
    for b in bits {
        word |= (b as u64) << k;
        k += 1;
        if k == 64 {
            h.write_u64(word);
            word = 0;
            k = 0;
        }
    }
    h.write_u64(word);
    h.write_usize(k);
    h.finish()
}

/// Convenience constructor for tests and small experiments.
pub fn conv_layer<T: Scalar>(spec: ConvSpec) -> Layer<T> {
    Layer::Conv(Conv2d::zeros(spec))
}
