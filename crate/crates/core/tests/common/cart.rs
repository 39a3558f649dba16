use isectreg_core::dtree::{DecisionTree, Node, TreeSample, TreeSpec};
use isectreg_core::netcore::ProbVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.log2()).sum()
}

/// Scores every (feature, threshold) candidate from scratch and keeps the
/// first one within 1e-12 of the best.
pub fn exhaustive_best(samples: &[TreeSample], idx: &[usize]) -> Option<(usize, f64, f64)> {
    let labels: Vec<usize> = idx.iter().map(|&i| samples[i].target.argmax()).collect();
    let parent = entropy(&labels);
    let mut candidates = Vec::new();
    for feature in 0..samples[0].features.len() {
        let mut values: Vec<u32> = idx.iter().map(|&i| samples[i].features[feature]).collect();
        values.sort_unstable();
        values.dedup();
        for w in values.windows(2) {
            let threshold = (f64::from(w[0]) + f64::from(w[1])) / 2.0;
            let (left, right): (Vec<usize>, Vec<usize>) =
                (0..idx.len()).partition(|&p| f64::from(samples[idx[p]].features[feature]) <= threshold);
            let pick = |side: &[usize]| side.iter().map(|&p| labels[p]).collect::<Vec<_>>();
            let n = idx.len() as f64;
            let gain = parent
                - left.len() as f64 / n * entropy(&pick(&left))
                - right.len() as f64 / n * entropy(&pick(&right));
            candidates.push((feature, threshold, gain));
        }
    }
    let top = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    candidates.into_iter().find(|c| c.2 >= top - 1e-12)
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<TreeSample>, TreeSpec) {
    let m = rng.random_range(1..=64);
    let n = rng.random_range(1..=5);
    let k = rng.random_range(2..=4);
    let spread = rng.random_range(1..=16);
    let samples = (0..m)
        .map(|_| {
            let features = (0..n).map(|_| rng.random_range(0..spread)).collect();
            let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            TreeSample::new(features, ProbVector::normalized(weights).unwrap())
        })
        .collect();
    (samples, TreeSpec::new(rng.random_range(0..=3), 2).unwrap())
}

/// Walks the fitted tree, re-deriving every node from the samples routed
/// to it.
pub fn check_node(tree: &DecisionTree, samples: &[TreeSample], spec: TreeSpec, node: usize, idx: Vec<usize>, depth: usize) {
    assert!(!idx.is_empty(), "empty node {node}");
    let labels: Vec<usize> = idx.iter().map(|&i| samples[i].target.argmax()).collect();
    let pure = labels.iter().all(|&l| l == labels[0]);
    let best = exhaustive_best(samples, &idx);
    let should_split = depth < spec.max_depth
        && idx.len() >= spec.min_samples_split
        && !pure
        && best.is_some_and(|b| b.2 > 1e-12);
    match &tree.nodes()[node] {
        Node::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            assert!(should_split, "node {node} split but should be a leaf");
            let (bf, bt, _) = best.unwrap();
            assert_eq!((*feature, *threshold), (bf, bt), "node {node}");
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .into_iter()
                .partition(|&i| f64::from(samples[i].features[*feature]) <= *threshold);
            check_node(tree, samples, spec, *left, l, depth + 1);
            check_node(tree, samples, spec, *right, r, depth + 1);
        }
        Node::Leaf { prediction } => {
            assert!(!should_split, "node {node} is a leaf but a split was available");
            let k = prediction.len();
            let mut mean = vec![0.0; k];
            for &i in &idx {
                for (m, p) in mean.iter_mut().zip(samples[i].target.as_slice()) {
                    *m += p / idx.len() as f64;
                }
            }
            let total: f64 = mean.iter().sum();
            for (a, b) in prediction.as_slice().iter().zip(&mean) {
                assert!((a - b / total).abs() < 1e-12);
            }
        }
    }
}
