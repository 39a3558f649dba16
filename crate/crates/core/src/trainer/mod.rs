//! Joint training of `F`, `G` and the decision tree `T`.
//!
//! Per batch: update `G` on `lambda1 * CE(G(F_q(x)), y) + lambda2' * CE(G(F_q(x)), T(F_q(x)))`,
//! then update `F` on the same loss plus `lambda3` times the masked penalty
//! on `F_q(x)`, and record `(F_q(x), G(F_q(x)))` for the next tree fit.
//! `lambda2'` is zero during the first epoch. The tree outputs are treated
//! as constants.

mod config;
mod eval;

pub use config::{QuantScope, RefitMode, TrainConfig};
pub use eval::{
    accuracy_on, early_stop_check, evaluate_accuracy, evaluate_fidelity, fidelity_of, sample_mask,
    soft_ce_to_tree, EarlyStop, Head, QuantRows, Representer,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dtree::{fit_cart, DecisionTree, TreeSample};
use crate::error::{invalid, Error, Result};
use crate::netcore::{
    cross_entropy_grad, cross_entropy_raw, masked_penalty, masked_penalty_grad, sgd_step, Activation, DenseNet,
    Gradients, ProbVector,
};
use crate::synthgen::{LabeledDataset, SplitTag};

/// Per-epoch metrics, computed after the epoch's tree refit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Effective soft-CE weight used during this epoch.
    pub lambda2_effective: f64,
    pub train_net_accuracy: f64,
    pub val_net_accuracy: f64,
    pub test_net_accuracy: f64,
    pub train_tree_accuracy: f64,
    pub val_tree_accuracy: f64,
    pub test_tree_accuracy: f64,
    /// Mean soft cross-entropy of `G` against `T` on the training split.
    pub soft_ce: f64,
    /// Mean `||F_q(x)||_1` on the training split.
    pub mean_l1: f64,
    /// Symmetric fidelity on the test split, when ground truth is known.
    pub fidelity: Option<f64>,
    pub fidelity_truth_to_repr: Option<f64>,
    pub fidelity_repr_to_truth: Option<f64>,
}

/// Networks and tree returned by [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub feature: DenseNet,
    pub classifier: DenseNet,
    pub tree: DecisionTree,
    pub reports: Vec<EpochReport>,
    /// Epoch whose models are returned (differs from the last epoch only
    /// after early stopping).
    pub report_epoch: usize,
    pub stopped_early: bool,
    pub baseline: bool,
}

/// Fresh `F` and `G` for the given input width and class count.
pub fn init_networks(config: &TrainConfig, input_dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<(DenseNet, DenseNet)> {
    let mut f_sizes = vec![input_dim];
    f_sizes.extend(&config.feature_hidden);
    f_sizes.push(config.feature_dim);
    let feature = DenseNet::random(&f_sizes, Activation::Mish, Activation::Identity, rng)?;
    let classifier = DenseNet::random(
        &[config.feature_dim, config.classifier_hidden, k],
        Activation::Mish,
        Activation::Softmax,
        rng,
    )?;
    Ok((feature, classifier))
}

/// Fixed partition of the training indices into batches.
pub fn training_batches(data: &LabeledDataset, batch_size: usize) -> Vec<Vec<usize>> {
    data.indices(SplitTag::Train)
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

struct BatchForward {
    feature_traces: Vec<crate::netcore::ForwardTrace>,
    quant: Vec<QuantRows>,
    q: Vec<Vec<u32>>,
}

fn forward_features(
    feature: &DenseNet,
    representer: &Representer,
    data: &LabeledDataset,
    batch: &[usize],
) -> Result<Option<BatchForward>> {
    let mut reps = Vec::with_capacity(batch.len());
    let mut feature_traces = Vec::with_capacity(batch.len());
    for &i in batch {
        let (rep, trace) = feature.forward(&data.x[i])?;
        if rep.iter().any(|v| !v.is_finite()) {
            return Ok(None);
        }
        reps.push(rep);
        feature_traces.push(trace);
    }
    let quant = representer.quantize_rows(&reps)?;
    let q = quant.iter().flat_map(QuantRows::rows).collect();
    Ok(Some(BatchForward {
        feature_traces,
        quant,
        q,
    }))
}

fn as_input(q: &[u32]) -> Vec<f64> {
    q.iter().map(|&v| f64::from(v)).collect()
}

struct Run<'a> {
    config: &'a TrainConfig,
    data: &'a LabeledDataset,
    representer: Representer,
    feature: DenseNet,
    classifier: DenseNet,
    tree: Option<DecisionTree>,
    mask_rng: ChaCha8Rng,
}

impl Run<'_> {
    /// Loss gradient with respect to the classifier outputs, scaled by 1/s.
    fn output_grad(&self, probs: &[f64], label: usize, tree_target: Option<&ProbVector>, lambda2: f64, s: f64) -> Result<(f64, Vec<f64>)> {
        let k = probs.len();
        let onehot = ProbVector::one_hot(label, k);
        let mut loss = self.config.lambda1 * cross_entropy_raw(probs, onehot.as_slice())?;
        let mut grad: Vec<f64> = cross_entropy_grad(probs, onehot.as_slice())?
            .into_iter()
            .map(|g| self.config.lambda1 * g / s)
            .collect();
        if let Some(t) = tree_target.filter(|_| lambda2 != 0.0) {
            loss += lambda2 * cross_entropy_raw(probs, t.as_slice())?;
            for (g, gt) in grad.iter_mut().zip(cross_entropy_grad(probs, t.as_slice())?) {
                *g += lambda2 * gt / s;
            }
        }
        Ok((loss, grad))
    }

    /// One batch update; returns the `(F_q(x), G(F_q(x)))` pairs to record
    /// for the tree, or `None` once the loss stops being finite.
    fn step(&mut self, batch: &[usize], lambda2: f64, record_after_update: bool) -> Result<Option<Vec<TreeSample>>> {
        let s = batch.len() as f64;
        let Some(fwd) = forward_features(&self.feature, &self.representer, self.data, batch)? else {
            return Ok(None);
        };
        let targets: Vec<Option<ProbVector>> = fwd
            .q
            .iter()
            .map(|q| match (&self.tree, lambda2 != 0.0) {
                (Some(t), true) => t.predict(q).map(|p| Some(p.clone())),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;

        // G update
        let mut g_grads = Gradients::zeros_like(&self.classifier);
        let mut loss = 0.0;
        let mut before = Vec::with_capacity(batch.len());
        for (b, &i) in batch.iter().enumerate() {
            let (probs, trace) = self.classifier.forward(&as_input(&fwd.q[b]))?;
            let (l, og) = self.output_grad(&probs, self.data.y[i], targets[b].as_ref(), lambda2, s)?;
            loss += l / s;
            self.classifier.backward_into(&trace, &og, &mut g_grads)?;
            before.push(probs);
        }
        if !loss.is_finite() {
            return Ok(None);
        }
        self.classifier = sgd_step(&self.classifier, &g_grads, self.config.lr)?;

        // F update through the refreshed G and the STE
        let mask = sample_mask(self.config.feature_dim, self.config.mask_p, &mut self.mask_rng);
        let mut scratch = Gradients::zeros_like(&self.classifier);
        let mut q_grads = Vec::with_capacity(batch.len());
        for (b, &i) in batch.iter().enumerate() {
            let (probs, trace) = self.classifier.forward(&as_input(&fwd.q[b]))?;
            let (_, og) = self.output_grad(&probs, self.data.y[i], targets[b].as_ref(), lambda2, s)?;
            let mut dq = self.classifier.backward_into(&trace, &og, &mut scratch)?;
            if self.config.lambda3 != 0.0 {
                let pen = masked_penalty_grad(&fwd.q[b], &mask, self.config.penalty_norm, batch.len());
                dq.iter_mut().zip(pen).for_each(|(d, p)| *d += self.config.lambda3 * p);
            }
            q_grads.push(dq);
        }
        let mut rep_grads = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for group in &fwd.quant {
            let rows = match group {
                QuantRows::Single(_) => 1,
                QuantRows::Flat { out, width } => out.len() / width,
            };
            rep_grads.extend(group.vjp(&q_grads[offset..offset + rows])?);
            offset += rows;
        }
        let mut f_grads = Gradients::zeros_like(&self.feature);
        for (trace, rg) in fwd.feature_traces.iter().zip(&rep_grads) {
            self.feature.backward_into(trace, rg, &mut f_grads)?;
        }
        self.feature = sgd_step(&self.feature, &f_grads, self.config.lr)?;

        if !record_after_update {
            return pairs(&fwd.q, before).map(Some);
        }
        let Some(after) = forward_features(&self.feature, &self.representer, self.data, batch)? else {
            return Ok(None);
        };
        let probs = after
            .q
            .iter()
            .map(|q| self.classifier.eval(&as_input(q)))
            .collect::<Result<Vec<_>>>()?;
        pairs(&after.q, probs).map(Some)
    }

    fn report(&self, epoch: usize, lambda2: f64) -> Result<EpochReport> {
        let tree = self.tree.as_ref().expect("tree is fitted before reporting");
        let reps_of = |tag: SplitTag| -> Result<(Vec<Vec<u32>>, Vec<usize>)> {
            let idx = self.data.indices(tag);
            let xs: Vec<&[f64]> = idx.iter().map(|&i| self.data.x[i].as_slice()).collect();
            let labels = idx.iter().map(|&i| self.data.y[i]).collect();
            Ok((self.representer.represent(&self.feature, &xs)?, labels))
        };
        let (train_q, train_y) = reps_of(SplitTag::Train)?;
        let (val_q, val_y) = reps_of(SplitTag::Val)?;
        let (test_q, test_y) = reps_of(SplitTag::Test)?;
        let net: &dyn Head = &self.classifier;
        let tree_head: &dyn Head = tree;

        let mut soft_ce = 0.0;
        let mut l1 = 0.0;
        for q in &train_q {
            let net_out = self.classifier.eval(&as_input(q))?;
            soft_ce += cross_entropy_raw(&net_out, tree.predict(q)?.as_slice())?;
            l1 += q.iter().map(|&v| f64::from(v)).sum::<f64>();
        }
        let n = train_q.len() as f64;

        let (fid, fwd, bwd) = match &self.data.f {
            Some(truth) => {
                let rep = fidelity_of(
                    &truth.select_rows(&self.data.indices(SplitTag::Test))?,
                    &test_q,
                    self.representer.spec.bits(),
                )?;
                (Some(rep.symmetric), Some(rep.truth_to_repr), Some(rep.repr_to_truth))
            }
            None => (None, None, None),
        };

        Ok(EpochReport {
            epoch,
            lambda2_effective: lambda2,
            train_net_accuracy: accuracy_on(net, &train_q, &train_y)?,
            val_net_accuracy: accuracy_on(net, &val_q, &val_y)?,
            test_net_accuracy: accuracy_on(net, &test_q, &test_y)?,
            train_tree_accuracy: accuracy_on(tree_head, &train_q, &train_y)?,
            val_tree_accuracy: accuracy_on(tree_head, &val_q, &val_y)?,
            test_tree_accuracy: accuracy_on(tree_head, &test_q, &test_y)?,
            soft_ce: soft_ce / n,
            mean_l1: l1 / n,
            fidelity: fid,
            fidelity_truth_to_repr: fwd,
            fidelity_repr_to_truth: bwd,
        })
    }
}

fn pairs(q: &[Vec<u32>], probs: Vec<Vec<f64>>) -> Result<Vec<TreeSample>> {
    q.iter()
        .zip(probs)
        .map(|(q, p)| Ok(TreeSample::new(q.clone(), ProbVector::new(p)?)))
        .collect()
}

fn check_dataset(data: &LabeledDataset, config: &TrainConfig) -> Result<()> {
    if data.is_empty() || data.input_dim() == 0 {
        return invalid("dataset is empty");
    }
    if data.tags.len() != data.len() {
        return invalid("dataset has no train/val/test split");
    }
    for tag in [SplitTag::Train, SplitTag::Val, SplitTag::Test] {
        if data.indices(tag).is_empty() {
            return invalid(format!("split {tag} is empty"));
        }
    }
    if data.k < 2 || data.y.iter().any(|&c| c >= data.k) {
        return invalid("labels must lie in 0..k with k >= 2");
    }
    if config.quant_scope == QuantScope::Sample && config.feature_dim < 2 {
        return invalid("feature_dim: per-sample quantization needs at least 2 features");
    }
    Ok(())
}

/// Runs the full training loop.
pub fn train(data: &LabeledDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(data, config)?;
    let spec = config.quant_spec()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (feature, classifier) = init_networks(config, data.input_dim(), data.k, &mut init_rng)?;
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mask_rng.set_stream(1);
    let mut run = Run {
        config,
        data,
        representer: Representer {
            spec,
            scope: config.quant_scope,
            batch_size: config.batch_size,
        },
        feature,
        classifier,
        tree: None,
        mask_rng,
    };
    let batches = training_batches(data, config.batch_size);
    let mut reports: Vec<EpochReport> = Vec::new();
    let mut history = Vec::new();
    let mut previous: Option<(DenseNet, DenseNet, DecisionTree)> = None;

    for epoch in 1..=config.epochs {
        let lambda2 = if epoch > 1 { config.lambda2 } else { 0.0 };
        let mut accumulated: Vec<TreeSample> = Vec::new();
        for (b, batch) in batches.iter().enumerate() {
            let diverged = || Error::Diverged {
                epoch,
                batch: b,
                reports: reports.clone(),
            };
            match config.refit_mode {
                RefitMode::PerEpoch => {
                    let recorded = run.step(batch, lambda2, true)?.ok_or_else(diverged)?;
                    accumulated.extend(recorded);
                }
                RefitMode::PerBatch => {
                    let Some(fwd) = forward_features(&run.feature, &run.representer, data, batch)? else {
                        return Err(diverged());
                    };
                    for q in fwd.q {
                        let probs = run.classifier.eval(&as_input(&q))?;
                        if probs.iter().any(|p| !p.is_finite()) {
                            return Err(diverged());
                        }
                        accumulated.push(TreeSample::new(q, ProbVector::new(probs)?));
                    }
                    run.tree = Some(fit_cart(&accumulated, config.tree)?);
                    run.step(batch, lambda2, false)?.ok_or_else(diverged)?;
                }
            }
        }
        if config.refit_mode == RefitMode::PerEpoch {
            run.tree = Some(fit_cart(&accumulated, config.tree)?);
        }
        let report = run.report(epoch, lambda2)?;
        let finite = [
            report.soft_ce,
            report.mean_l1,
            report.fidelity.unwrap_or(0.0),
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged {
                epoch,
                batch: batches.len(),
                reports,
            });
        }
        history.push(report.val_net_accuracy);
        reports.push(report);

        if config.early_stop {
            let check = early_stop_check(&history);
            if check.stop {
                let (feature, classifier, tree) = previous.expect("a drop needs a previous epoch");
                return Ok(TrainOutcome {
                    feature,
                    classifier,
                    tree,
                    reports,
                    report_epoch: check.report_epoch.expect("set when stopping"),
                    stopped_early: true,
                    baseline: config.is_baseline(),
                });
            }
            previous = Some((
                run.feature.clone(),
                run.classifier.clone(),
                run.tree.clone().expect("fitted"),
            ));
        }
    }
    Ok(TrainOutcome {
        feature: run.feature,
        classifier: run.classifier,
        tree: run.tree.expect("fitted at least once"),
        reports,
        report_epoch: config.epochs,
        stopped_early: false,
        baseline: config.is_baseline(),
    })
}

/// Mean masked penalty of a batch of representations; exposed for checks
/// against the unmasked form.
pub fn batch_penalty(q: &[Vec<u32>], mask: &[bool], config: &TrainConfig) -> Result<f64> {
    masked_penalty(q, mask, config.penalty_norm)
}
