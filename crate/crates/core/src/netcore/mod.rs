//! Dense networks, losses, and the composed model `G ∘ q ∘ F`.

mod dense;
mod loss;

pub use dense::{sgd_step, Activation, DenseNet, ForwardTrace, Gradients, Layer, LayerGrad};
pub use loss::{
    argmax, cross_entropy, cross_entropy_grad, l1_masked_penalty, masked_penalty, masked_penalty_grad, mish,
    mish_grad, softmax, PenaltyNorm, ProbVector, LOG_EPS,
};

pub(crate) use loss::cross_entropy_raw;

use crate::error::{invalid, Result};
use crate::quantizer::{quantize, QuantOutput, QuantSpec};

/// Trace of `G(q(F(x)))`: the feature layers, one quantizer node, then the
/// classifier layers.
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    pub feature: ForwardTrace,
    pub quant: QuantOutput,
    pub classifier: ForwardTrace,
}

impl PipelineTrace {
    pub fn node_count(&self) -> usize {
        self.feature.layer_count() + 1 + self.classifier.layer_count()
    }
}

/// Forward pass of the quantized model for one sample, quantizing over the
/// sample's own feature vector.
pub fn pipeline_forward(
    feature: &DenseNet,
    classifier: &DenseNet,
    spec: QuantSpec,
    x: &[f64],
) -> Result<(Vec<f64>, PipelineTrace)> {
    let (rep, feature_trace) = feature.forward(x)?;
    let quant = quantize(&rep, spec)?;
    let q: Vec<f64> = quant.values().iter().map(|&v| f64::from(v)).collect();
    let (out, classifier_trace) = classifier.forward(&q)?;
    Ok((
        out,
        PipelineTrace {
            feature: feature_trace,
            quant,
            classifier: classifier_trace,
        },
    ))
}

/// Gradients of both networks; the quantizer node uses the STE estimate.
pub fn pipeline_backward(
    feature: &DenseNet,
    classifier: &DenseNet,
    trace: &PipelineTrace,
    output_grad: &[f64],
) -> Result<(Gradients, Gradients)> {
    if trace.quant.len() != feature.output_dim() || classifier.input_dim() != feature.output_dim() {
        return invalid("pipeline trace does not match the networks");
    }
    let (g_grads, q_grad) = classifier.backward(&trace.classifier, output_grad)?;
    let rep_grad = trace.quant.vjp(&q_grad)?;
    let (f_grads, _) = feature.backward(&trace.feature, &rep_grad)?;
    Ok((f_grads, g_grads))
}
