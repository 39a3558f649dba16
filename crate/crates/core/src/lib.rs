//! Intersection regularization for recovering sparse discrete attributes.
//!
//! A feature extractor `F` is followed by a uniform quantizer `q` and an MLP
//! head `G`. A CART tree `T` is refit on `(q(F(x)), G(q(F(x))))` pairs and
//! `G` is pulled towards it with a soft cross-entropy, so that the
//! quantized features become usable by shallow axis-aligned rules. The
//! [`metrics`] module scores how well the binarized features recover
//! ground-truth attributes that were never shown to the model.

pub mod convergence;
pub mod dtree;
mod error;
pub mod metrics;
pub mod netcore;
pub mod quantizer;
pub mod synthgen;
pub mod trainer;

pub use dtree::{fit_cart, DecisionTree, TreeSample, TreeSpec};
pub use error::{Error, Result};
pub use metrics::{fidelity, AttributeMatrix, FidelityReport};
pub use netcore::{DenseNet, ProbVector};
pub use quantizer::{quantize, QuantOutput, QuantSpec};
pub use synthgen::{generate, split, LabeledDataset, SplitFractions, SplitTag, SynthSpec};
pub use trainer::{train, EpochReport, QuantScope, RefitMode, TrainConfig, TrainOutcome};
