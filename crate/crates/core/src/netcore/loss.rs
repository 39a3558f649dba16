//! Activations, the simplex type and the losses used by the trainer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Lower clamp applied inside `log` by [`cross_entropy`].
pub const LOG_EPS: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that `entries` are non-negative and sum to one within 1e-9.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return invalid("probability vector must be non-empty");
        }
        if entries.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return invalid("probability entries must be finite and non-negative");
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("probability entries sum to {sum}, expected 1"));
        }
        Ok(Self(entries))
    }

    /// Scales non-negative weights onto the simplex.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !sum.is_finite() || sum <= 0.0 || weights.iter().any(|w| *w < 0.0) {
            return invalid("cannot normalize weights with non-positive or non-finite sum");
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Ok(Self(weights))
    }

    /// The elementary vector `e_class` of length `k`.
    pub fn one_hot(class: usize, k: usize) -> Self {
        let mut v = vec![0.0; k];
        v[class] = 1.0;
        Self(v)
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = crate::Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Vec<f64> {
        p.0
    }
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x * tanh(softplus(x))`.
pub fn mish(x: f64) -> f64 {
    x * softplus(x).tanh()
}

/// Derivative of [`mish`].
pub fn mish_grad(x: f64) -> f64 {
    let t = softplus(x).tanh();
    t + x * (1.0 - t * t) * sigmoid(x)
}

/// Shift-stabilized softmax.
pub fn softmax(logits: &[f64]) -> ProbVector {
    ProbVector(softmax_raw(logits))
}

pub(crate) fn softmax_raw(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

fn check_same_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return invalid(format!("length mismatch: {} vs {}", u.len(), v.len()));
    }
    Ok(())
}

/// `-sum_i v_i * log(max(u_i, eps))`; terms with `v_i = 0` are skipped.
pub fn cross_entropy(u: &ProbVector, v: &ProbVector) -> Result<f64> {
    cross_entropy_raw(&u.0, &v.0)
}

pub(crate) fn cross_entropy_raw(u: &[f64], v: &[f64]) -> Result<f64> {
    check_same_len(u, v)?;
    Ok(u.iter()
        .zip(v)
        .filter(|(_, &vi)| vi != 0.0)
        .map(|(&ui, &vi)| -vi * ui.max(LOG_EPS).ln())
        .sum())
}

/// Gradient of [`cross_entropy`] with respect to `u`.
pub fn cross_entropy_grad(u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_same_len(u, v)?;
    Ok(u.iter()
        .zip(v)
        .map(|(&ui, &vi)| {
            if vi == 0.0 || ui < LOG_EPS {
                0.0
            } else {
                -vi / ui
            }
        })
        .collect())
}

/// Norm applied to the masked quantized representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyNorm {
    #[default]
    L1,
    /// Squared L2.
    L2,
}

fn check_batch(batch: &[Vec<u32>], mask: &[bool]) -> Result<()> {
    if batch.is_empty() {
        return invalid("penalty batch must be non-empty");
    }
    if let Some(row) = batch.iter().find(|r| r.len() != mask.len()) {
        return invalid(format!(
            "mask length {} does not match feature dimension {}",
            mask.len(),
            row.len()
        ));
    }
    Ok(())
}

/// `(1/s) * sum_i ||F_q(x_i) ⊙ M||_1` over a batch of size `s`.
pub fn l1_masked_penalty(batch: &[Vec<u32>], mask: &[bool]) -> Result<f64> {
    masked_penalty(batch, mask, PenaltyNorm::L1)
}

pub fn masked_penalty(batch: &[Vec<u32>], mask: &[bool], norm: PenaltyNorm) -> Result<f64> {
    check_batch(batch, mask)?;
    let total: f64 = batch
        .iter()
        .map(|row| {
            row.iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&q, _)| {
                    let q = f64::from(q);
                    match norm {
                        PenaltyNorm::L1 => q.abs(),
                        PenaltyNorm::L2 => q * q,
                    }
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of [`masked_penalty`] with respect to one sample's quantized
/// values, given the batch size.
pub fn masked_penalty_grad(row: &[u32], mask: &[bool], norm: PenaltyNorm, batch_size: usize) -> Vec<f64> {
    let s = batch_size as f64;
    row.iter()
        .zip(mask)
        .map(|(&q, &m)| {
            if !m {
                return 0.0;
            }
            // quantized values are non-negative, so |q| = q
            match norm {
                PenaltyNorm::L1 => 1.0 / s,
                PenaltyNorm::L2 => 2.0 * f64::from(q) / s,
            }
        })
        .collect()
}
