use serde::{Deserialize, Serialize};

use crate::dtree::TreeSpec;
use crate::error::{invalid, Result};
use crate::netcore::PenaltyNorm;
use crate::quantizer::QuantSpec;

/// When the tree is refit on the accumulated `(F_q(x), G(F_q(x)))` pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefitMode {
    /// Once at the end of every epoch.
    #[default]
    PerEpoch,
    /// Before every batch update, on the pairs gathered so far this epoch.
    PerBatch,
}

/// Which values share one quantization range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantScope {
    /// Range taken over each sample's feature vector.
    #[default]
    Sample,
    /// Range taken over every feature of every sample in a batch.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the cross-entropy to the labels.
    pub lambda1: f64,
    /// Weight of the soft cross-entropy to the tree, from epoch 2 on.
    pub lambda2: f64,
    /// Weight of the masked penalty on the quantized representation.
    pub lambda3: f64,
    /// Bernoulli parameter of the penalty mask.
    pub mask_p: f64,
    pub penalty_norm: PenaltyNorm,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bits: u32,
    /// Width `d` of the representation `F(x)`.
    pub feature_dim: usize,
    /// Hidden widths of `F`.
    pub feature_hidden: Vec<usize>,
    /// Hidden width of the two-layer classifier `G`.
    pub classifier_hidden: usize,
    pub tree: TreeSpec,
    pub refit_mode: RefitMode,
    pub quant_scope: QuantScope,
    pub early_stop: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 2.0,
            lambda2: 1.0,
            lambda3: 0.001,
            mask_p: 0.5,
            penalty_norm: PenaltyNorm::L1,
            lr: 0.1,
            epochs: 100,
            batch_size: 32,
            bits: 2,
            feature_dim: 32,
            feature_hidden: vec![64],
            classifier_hidden: 64,
            tree: TreeSpec::default(),
            refit_mode: RefitMode::PerEpoch,
            quant_scope: QuantScope::Sample,
            early_stop: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// The same run without the tree and penalty terms.
    pub fn baseline(&self) -> Self {
        Self {
            lambda2: 0.0,
            lambda3: 0.0,
            ..self.clone()
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.lambda2 == 0.0 && self.lambda3 == 0.0
    }

    pub fn quant_spec(&self) -> Result<QuantSpec> {
        QuantSpec::new(self.bits)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !v.is_finite() || v < 0.0 {
                return invalid(format!("{name}: must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_p) {
            return invalid(format!("mask_p: must be in [0, 1], got {}", self.mask_p));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return invalid(format!("lr: must be finite and > 0, got {}", self.lr));
        }
        if self.epochs == 0 {
            return invalid("epochs: must be at least 1");
        }
        if self.batch_size == 0 {
            return invalid("batch_size: must be at least 1");
        }
        if self.feature_dim == 0 || self.classifier_hidden == 0 || self.feature_hidden.contains(&0) {
            return invalid("feature_dim, feature_hidden and classifier_hidden: widths must be positive");
        }
        self.quant_spec()
            .map_err(|e| crate::Error::InvalidArgument(format!("bits: {e}")))?;
        self.tree
            .validate()
            .map_err(|e| crate::Error::InvalidArgument(format!("tree: {e}")))?;
        Ok(())
    }
}
