use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{mish, mish_grad, softmax_raw};
use crate::error::{invalid, Result};

static NEXT_REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    NEXT_REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Mish,
    /// Only allowed on the final layer.
    Softmax,
}

/// One affine map followed by an activation. Weights are row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    weights: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let outputs = weights.len();
        if outputs == 0 || bias.len() != outputs {
            return invalid(format!(
                "layer has {outputs} weight rows and {} biases",
                bias.len()
            ));
        }
        let inputs = weights[0].len();
        if inputs == 0 || weights.iter().any(|row| row.len() != inputs) {
            return invalid("weight rows must be non-empty and of equal length");
        }
        let weights: Vec<f64> = weights.into_iter().flatten().collect();
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return invalid("layer parameters must be finite");
        }
        Ok(Self {
            weights,
            bias,
            inputs,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    #[serde(skip, default = "next_revision")]
    revision: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("network needs at least one layer");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return invalid(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                ));
            }
        }
        let last = layers.len() - 1;
        if layers[..last].iter().any(|l| l.activation == Activation::Softmax) {
            return invalid("softmax is only allowed on the final layer");
        }
        Ok(Self {
            layers,
            revision: next_revision(),
        })
    }

    /// Glorot-uniform weights and zero biases. `sizes` lists the input width
    /// followed by every layer's output width; all layers but the last use
    /// `hidden`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid("network sizes need an input and at least one positive layer width");
        }
        let count = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..bound)).collect())
                    .collect();
                let act = if i + 1 == count { output } else { hidden };
                Layer::new(weights, vec![0.0; fan_out], act)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flattened parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Replaces all parameters from the flattened layout of [`Self::parameters`].
    pub fn with_parameters(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.parameter_count() {
            return invalid("parameter vector has the wrong length");
        }
        let mut next = self.clone();
        let mut it = params.iter().copied();
        for layer in &mut next.layers {
            layer.weights.iter_mut().chain(layer.bias.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        next.revision = next_revision();
        Ok(next)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if x.len() != self.input_dim() {
            return invalid(format!(
                "input has length {} but the network expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        for layer in &self.layers {
            let z = layer.affine(&current);
            let a = match layer.activation {
                Activation::Identity => z.clone(),
                Activation::Mish => z.iter().map(|&v| mish(v)).collect(),
                Activation::Softmax => softmax_raw(&z),
            };
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
        }
        let trace = ForwardTrace {
            revision: self.revision,
            inputs,
            pre,
            output: current.clone(),
        };
        Ok((current, trace))
    }

    /// Output only, without keeping a trace.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(out, _)| out)
    }

    /// Reverse-mode gradients for one sample. Returns parameter gradients
    /// and the gradient with respect to the input.
    pub fn backward(&self, trace: &ForwardTrace, output_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(trace, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Self::backward`], but accumulates into `grads`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        output_grad: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if trace.revision != self.revision || trace.inputs.len() != self.layers.len() {
            return invalid("trace was not produced by this network");
        }
        if output_grad.len() != self.output_dim() {
            return invalid("output gradient has the wrong length");
        }
        if !grads.matches(self) {
            return invalid("gradient accumulator is not shaped like the network");
        }
        let mut upstream = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let z = &trace.pre[idx];
            let g_pre: Vec<f64> = match layer.activation {
                Activation::Identity => upstream,
                Activation::Mish => upstream.iter().zip(z).map(|(g, &v)| g * mish_grad(v)).collect(),
                Activation::Softmax => {
                    let p = if idx + 1 == self.layers.len() {
                        &trace.output
                    } else {
                        &trace.inputs[idx + 1]
                    };
                    let dot: f64 = upstream.iter().zip(p).map(|(g, p)| g * p).sum();
                    upstream.iter().zip(p).map(|(g, p)| p * (g - dot)).collect()
                }
            };
            let input = &trace.inputs[idx];
            let lg = &mut grads.layers[idx];
            for (o, &g) in g_pre.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                lg.bias[o] += g;
                let row = &mut lg.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(w, x)| *w += g * x);
            }
            let mut down = vec![0.0; layer.inputs];
            for (row, &g) in layer.weights.chunks_exact(layer.inputs).zip(&g_pre) {
                if g == 0.0 {
                    continue;
                }
                down.iter_mut().zip(row).for_each(|(d, w)| *d += g * w);
            }
            upstream = down;
        }
        Ok(upstream)
    }
}

/// Everything [`DenseNet::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    revision: u64,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }

    /// Activation entering each layer; index 0 is the network input.
    pub fn layer_inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients shaped like a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn scale(&mut self, factor: f64) {
        for lg in &mut self.layers {
            lg.weights.iter_mut().chain(lg.bias.iter_mut()).for_each(|g| *g *= factor);
        }
    }

    /// Flattened in the layout of [`DenseNet::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|&g| g == 0.0)
    }
}

/// `theta <- theta - lr * grad`, elementwise.
pub fn sgd_step(net: &DenseNet, grads: &Gradients, lr: f64) -> Result<DenseNet> {
    if !grads.matches(net) {
        return invalid("gradients are not shaped like the network");
    }
    if !lr.is_finite() || lr < 0.0 {
        return invalid(format!("learning rate must be finite and non-negative, got {lr}"));
    }
    let mut next = net.clone();
    for (layer, lg) in next.layers.iter_mut().zip(&grads.layers) {
        layer.weights.iter_mut().zip(&lg.weights).for_each(|(w, g)| *w -= lr * g);
        layer.bias.iter_mut().zip(&lg.bias).for_each(|(b, g)| *b -= lr * g);
    }
    next.revision = next_revision();
    Ok(next)
}
