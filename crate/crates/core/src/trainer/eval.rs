use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::QuantScope;
use crate::dtree::DecisionTree;
use crate::error::{invalid, Result};
use crate::metrics::{binarize_rows, fidelity, FidelityReport};
use crate::netcore::{argmax, cross_entropy, DenseNet, ProbVector};
use crate::quantizer::{quantize, QuantOutput, QuantSpec};
use crate::synthgen::{LabeledDataset, SplitTag};

/// How `F(x)` is turned into the discrete representation `F_q(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Representer {
    pub spec: QuantSpec,
    pub scope: QuantScope,
    /// Chunk size for [`QuantScope::Batch`].
    pub batch_size: usize,
}

impl Representer {
    pub fn per_sample(spec: QuantSpec) -> Self {
        Self {
            spec,
            scope: QuantScope::Sample,
            batch_size: 1,
        }
    }

    /// Quantizes already computed feature vectors.
    pub fn quantize_rows(&self, reps: &[Vec<f64>]) -> Result<Vec<QuantRows>> {
        match self.scope {
            QuantScope::Sample => reps
                .iter()
                .map(|r| quantize(r, self.spec).map(QuantRows::Single))
                .collect(),
            QuantScope::Batch => reps
                .chunks(self.batch_size.max(1))
                .map(|chunk| {
                    let width = chunk[0].len();
                    let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
                    quantize(&flat, self.spec).map(|out| QuantRows::Flat { out, width })
                })
                .collect(),
        }
    }

    /// `F_q(x)` for every input, in order.
    pub fn represent(&self, feature: &DenseNet, xs: &[&[f64]]) -> Result<Vec<Vec<u32>>> {
        let reps = xs.iter().map(|x| feature.eval(x)).collect::<Result<Vec<_>>>()?;
        Ok(self
            .quantize_rows(&reps)?
            .into_iter()
            .flat_map(|group| group.rows())
            .collect())
    }
}

/// Quantizer output for one sample, or for a flattened batch of rows.
#[derive(Debug, Clone)]
pub enum QuantRows {
    Single(QuantOutput),
    Flat { out: QuantOutput, width: usize },
}

impl QuantRows {
    pub fn rows(&self) -> Vec<Vec<u32>> {
        match self {
            Self::Single(out) => vec![out.values().to_vec()],
            Self::Flat { out, width } => out.values().chunks(*width).map(<[u32]>::to_vec).collect(),
        }
    }

    /// Backpropagates per-row gradients through the quantizer.
    pub fn vjp(&self, grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Single(out) => Ok(vec![out.vjp(&grads[0])?]),
            Self::Flat { out, width } => {
                let flat: Vec<f64> = grads.iter().flatten().copied().collect();
                Ok(out.vjp(&flat)?.chunks(*width).map(<[f64]>::to_vec).collect())
            }
        }
    }
}

/// A classifier head over the discrete representation.
pub trait Head {
    fn scores(&self, q: &[u32]) -> Result<Vec<f64>>;
}

impl Head for DenseNet {
    fn scores(&self, q: &[u32]) -> Result<Vec<f64>> {
        let input: Vec<f64> = q.iter().map(|&v| f64::from(v)).collect();
        self.eval(&input)
    }
}

impl Head for DecisionTree {
    fn scores(&self, q: &[u32]) -> Result<Vec<f64>> {
        Ok(self.predict(q)?.as_slice().to_vec())
    }
}

/// Fraction of representations whose argmax score equals the label.
pub fn accuracy_on(head: &dyn Head, reps: &[Vec<u32>], labels: &[usize]) -> Result<f64> {
    if reps.is_empty() {
        return invalid("cannot compute accuracy on an empty split");
    }
    let mut correct = 0usize;
    for (q, &y) in reps.iter().zip(labels) {
        if argmax(&head.scores(q)?) == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / reps.len() as f64)
}

/// Accuracy of `head ∘ F_q` on the samples tagged `tag`.
pub fn evaluate_accuracy(
    feature: &DenseNet,
    head: &dyn Head,
    data: &LabeledDataset,
    tag: SplitTag,
    representer: &Representer,
) -> Result<f64> {
    let idx = data.indices(tag);
    if idx.is_empty() {
        return invalid(format!("split {tag} is empty"));
    }
    let xs: Vec<&[f64]> = idx.iter().map(|&i| data.x[i].as_slice()).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| data.y[i]).collect();
    accuracy_on(head, &representer.represent(feature, &xs)?, &labels)
}

/// Fidelity of `b ∘ q ∘ F` against the ground-truth attributes on the test
/// split (all samples when the dataset is untagged).
pub fn evaluate_fidelity(feature: &DenseNet, data: &LabeledDataset, representer: &Representer) -> Result<FidelityReport> {
    let Some(truth) = &data.f else {
        return invalid("dataset carries no ground-truth attributes");
    };
    let idx = if data.tags.is_empty() {
        (0..data.len()).collect()
    } else {
        data.indices(SplitTag::Test)
    };
    if idx.is_empty() {
        return invalid("no test samples to evaluate fidelity on");
    }
    let xs: Vec<&[f64]> = idx.iter().map(|&i| data.x[i].as_slice()).collect();
    let reps = representer.represent(feature, &xs)?;
    fidelity_of(&truth.select_rows(&idx)?, &reps, representer.spec.bits())
}

/// `d(f ; b(reps))` for representation rows aligned with `truth`.
pub fn fidelity_of(truth: &crate::metrics::AttributeMatrix, reps: &[Vec<u32>], bits: u32) -> Result<FidelityReport> {
    fidelity(truth, &binarize_rows(reps, bits)?)
}

/// Soft cross-entropy of the network output against the (constant) tree
/// output.
pub fn soft_ce_to_tree(net_out: &ProbVector, tree_out: &ProbVector) -> Result<f64> {
    cross_entropy(net_out, tree_out)
}

/// I.i.d. Bernoulli(`p`) mask of length `d`.
pub fn sample_mask<R: Rng + ?Sized>(d: usize, p: f64, rng: &mut R) -> Vec<bool> {
    (0..d).map(|_| rng.random::<f64>() < p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub stop: bool,
    /// 1-based epoch whose model should be reported.
    pub report_epoch: Option<usize>,
}

/// Stops on the second epoch whose validation accuracy is below the
/// previous epoch's and reports the epoch just before that drop.
pub fn early_stop_check(val_acc_history: &[f64]) -> EarlyStop {
    let mut drops = 0;
    for t in 1..val_acc_history.len() {
        if val_acc_history[t] < val_acc_history[t - 1] {
            drops += 1;
            if drops == 2 {
                // index t is epoch t+1, so the epoch before it is t
                return EarlyStop {
                    stop: true,
                    report_epoch: Some(t),
                };
            }
        }
    }
    EarlyStop {
        stop: false,
        report_epoch: None,
    }
}
