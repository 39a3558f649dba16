//! CART regression trees over quantized features.
//!
//! Splits are scored by information gain on hardened labels (argmax of the
//! soft target), while leaves predict the mean soft target of the samples
//! routed to them. Samples go left iff `feature <= threshold`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netcore::ProbVector;

/// Gains closer than this are treated as equal; the earlier candidate wins.
const GAIN_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeSpec {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_split: 2,
        }
    }
}

impl TreeSpec {
    pub const MAX_DEPTH_LIMIT: usize = 32;

    pub fn new(max_depth: usize, min_samples_split: usize) -> Result<Self> {
        let spec = Self {
            max_depth,
            min_samples_split,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth > Self::MAX_DEPTH_LIMIT {
            return invalid(format!(
                "max_depth must be at most {}, got {}",
                Self::MAX_DEPTH_LIMIT,
                self.max_depth
            ));
        }
        if self.min_samples_split < 2 {
            return invalid("min_samples_split must be at least 2");
        }
        Ok(())
    }
}

/// One training pair for [`fit_cart`].
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSample {
    pub features: Vec<u32>,
    pub target: ProbVector,
}

impl TreeSample {
    pub fn new(features: Vec<u32>, target: ProbVector) -> Self {
        Self { features, target }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prediction: ProbVector,
    },
}

/// Arena-encoded tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    n_classes: usize,
    nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Index of the leaf node that `features` is routed to.
    pub fn leaf_index(&self, features: &[u32]) -> Result<usize> {
        if features.len() != self.n_features {
            return invalid(format!(
                "tree expects {} features, got {}",
                self.n_features,
                features.len()
            ));
        }
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return Ok(idx),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if f64::from(features[*feature]) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn predict(&self, features: &[u32]) -> Result<&ProbVector> {
        match &self.nodes[self.leaf_index(features)?] {
            Node::Leaf { prediction } => Ok(prediction),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and structurally validates a tree document.
    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text)?;
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return invalid("tree has no nodes");
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            if idx >= self.nodes.len() || std::mem::replace(&mut seen[idx], true) {
                return invalid(format!("node {idx} is out of range or reached twice"));
            }
            match &self.nodes[idx] {
                Node::Leaf { prediction } => {
                    if prediction.len() != self.n_classes {
                        return invalid(format!("leaf {idx} has the wrong class count"));
                    }
                }
                Node::Split {
                    feature, left, right, ..
                } => {
                    if *feature >= self.n_features {
                        return invalid(format!("node {idx} splits on unknown feature {feature}"));
                    }
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return invalid("tree has unreachable nodes");
        }
        Ok(())
    }
}

/// Free-function form of [`DecisionTree::predict`].
pub fn tree_predict<'t>(tree: &'t DecisionTree, features: &[u32]) -> Result<&'t ProbVector> {
    tree.predict(features)
}

fn entropy_bits(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Information gain of splitting a node whose class histogram is
/// `left + right`.
pub(crate) fn gain_from_counts(left: &[usize], right: &[usize]) -> f64 {
    let (nl, nr): (usize, usize) = (left.iter().sum(), right.iter().sum());
    let parent: Vec<usize> = left.iter().zip(right).map(|(a, b)| a + b).collect();
    let n = (nl + nr) as f64;
    let weighted = (nl as f64 / n) * entropy_bits(left, nl) + (nr as f64 / n) * entropy_bits(right, nr);
    (entropy_bits(&parent, nl + nr) - weighted).max(0.0)
}

/// Information gain (base 2) of partitioning `labels` by sample index into
/// `left` and `right`.
pub fn information_gain(labels: &[usize], left: &[usize], right: &[usize]) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return invalid("both sides of a split must be non-empty");
    }
    let mut covered = vec![false; labels.len()];
    for &i in left.iter().chain(right) {
        if i >= labels.len() || std::mem::replace(&mut covered[i], true) {
            return invalid(format!("sample {i} is out of range or assigned twice"));
        }
    }
    if covered.iter().any(|c| !c) {
        return invalid("partition does not cover every label");
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let histogram = |side: &[usize]| {
        let mut counts = vec![0usize; k];
        side.iter().for_each(|&i| counts[labels[i]] += 1);
        counts
    };
    Ok(gain_from_counts(&histogram(left), &histogram(right)))
}

/// A chosen split: samples with `features[feature] <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Compares a candidate against the incumbent under the tie rule; callers
/// enumerate candidates by feature, then threshold, ascending.
pub fn improves(candidate_gain: f64, incumbent: Option<&SplitChoice>) -> bool {
    match incumbent {
        None => true,
        Some(best) => candidate_gain > best.gain + GAIN_TIE_EPS,
    }
}

struct Builder<'a> {
    samples: &'a [TreeSample],
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    spec: TreeSpec,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&self, idx: &[usize]) -> Option<SplitChoice> {
        let mut best: Option<SplitChoice> = None;
        let mut column: Vec<(u32, usize)> = Vec::with_capacity(idx.len());
        let mut total = vec![0usize; self.n_classes];
        idx.iter().for_each(|&i| total[self.labels[i]] += 1);
        for feature in 0..self.n_features {
            column.clear();
            column.extend(idx.iter().map(|&i| (self.samples[i].features[feature], self.labels[i])));
            column.sort_unstable();
            let mut left = vec![0usize; self.n_classes];
            for pos in 0..column.len() - 1 {
                left[column[pos].1] += 1;
                let (here, next) = (column[pos].0, column[pos + 1].0);
                if here == next {
                    continue;
                }
                let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
                let gain = gain_from_counts(&left, &right);
                if improves(gain, best.as_ref()) {
                    best = Some(SplitChoice {
                        feature,
                        threshold: (f64::from(here) + f64::from(next)) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        let mut sum = vec![0.0; self.n_classes];
        for &i in idx {
            sum.iter_mut()
                .zip(self.samples[i].target.as_slice())
                .for_each(|(s, p)| *s += p);
        }
        Node::Leaf {
            prediction: ProbVector::normalized(sum).expect("targets lie on the simplex"),
        }
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf {
            prediction: ProbVector::uniform(self.n_classes),
        });
        let first = self.labels[idx[0]];
        let pure = idx.iter().all(|&i| self.labels[i] == first);
        let split = if depth >= self.spec.max_depth || idx.len() < self.spec.min_samples_split || pure {
            None
        } else {
            self.best_split(&idx).filter(|s| s.gain > GAIN_TIE_EPS)
        };
        let Some(split) = split else {
            self.nodes[slot] = self.leaf(&idx);
            return slot;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| f64::from(self.samples[i].features[split.feature]) <= split.threshold);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        slot
    }
}

/// Greedy top-down CART fit.
pub fn fit_cart(samples: &[TreeSample], spec: TreeSpec) -> Result<DecisionTree> {
    spec.validate()?;
    let Some(first) = samples.first() else {
        return invalid("cannot fit a tree on zero samples");
    };
    let n_features = first.features.len();
    let n_classes = first.target.len();
    if samples
        .iter()
        .any(|s| s.features.len() != n_features || s.target.len() != n_classes)
    {
        return invalid("samples have inconsistent feature or class dimensions");
    }
    let labels = samples.iter().map(|s| s.target.argmax()).collect();
    let mut builder = Builder {
        samples,
        labels,
        n_features,
        n_classes,
        spec,
        nodes: Vec::new(),
    };
    builder.build((0..samples.len()).collect(), 0);
    Ok(DecisionTree {
        n_features,
        n_classes,
        nodes: builder.nodes,
    })
}
