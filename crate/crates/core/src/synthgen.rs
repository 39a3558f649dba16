//! Synthetic datasets with planted sparse binary attributes.
//!
//! Each sample carries a hidden attribute row `f` with at most `d0` ones.
//! Its class label comes from a planted complete decision tree over the
//! attributes, and the observed input is a noisy linear embedding
//! `x = A f + sigma * noise`.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::metrics::AttributeMatrix;

const COVERAGE_RETRIES: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub m: usize,
    pub n_attr: usize,
    pub d0: usize,
    pub k: usize,
    pub input_dim: usize,
    pub noise_sigma: f64,
    pub planted_depth: usize,
    pub seed: u64,
    /// Use `A = I` instead of a random mixing matrix; needs `input_dim == n_attr`.
    pub identity_embedding: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m: 2000,
            n_attr: 16,
            d0: 4,
            k: 8,
            input_dim: 32,
            noise_sigma: 0.1,
            planted_depth: 4,
            seed: 0,
            identity_embedding: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return invalid("m: sample count must be positive");
        }
        if self.n_attr == 0 {
            return invalid("n_attr: attribute count must be positive");
        }
        if self.d0 == 0 || self.d0 > self.n_attr {
            return invalid(format!("d0: must be in 1..=n_attr ({}), got {}", self.n_attr, self.d0));
        }
        if self.k < 2 {
            return invalid(format!("k: need at least 2 classes, got {}", self.k));
        }
        if self.input_dim == 0 {
            return invalid("input_dim: must be positive");
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return invalid(format!("noise_sigma: must be finite and >= 0, got {}", self.noise_sigma));
        }
        let min_depth = self.k.next_power_of_two().trailing_zeros() as usize;
        if self.planted_depth < min_depth {
            return invalid(format!(
                "planted_depth: must be at least ceil(log2 k) = {min_depth}, got {}",
                self.planted_depth
            ));
        }
        if self.planted_depth > self.n_attr || self.planted_depth > 20 {
            return invalid(format!(
                "planted_depth: must be at most min(n_attr, 20), got {}",
                self.planted_depth
            ));
        }
        if self.identity_embedding && self.input_dim != self.n_attr {
            return invalid("identity_embedding: requires input_dim == n_attr");
        }
        Ok(())
    }
}

/// Complete binary tree over attribute coordinates, stored heap-style.
/// A sample goes right at a node iff its attribute there is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTree {
    pub depth: usize,
    /// `2^depth - 1` internal nodes, children of `i` at `2i+1` and `2i+2`.
    pub attributes: Vec<usize>,
    /// `2^depth` leaf classes, left to right.
    pub leaf_classes: Vec<usize>,
}

impl PlantedTree {
    pub fn leaf(&self, f_row: &[u8]) -> usize {
        let mut node = 0;
        for _ in 0..self.depth {
            node = 2 * node + 1 + usize::from(f_row[self.attributes[node]] == 1);
        }
        node - self.attributes.len()
    }

    pub fn classify(&self, f_row: &[u8]) -> usize {
        self.leaf_classes[self.leaf(f_row)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => invalid(format!("unknown split tag {other:?}")),
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<usize>,
    pub k: usize,
    /// Ground-truth attributes; never shown to the trainer.
    pub f: Option<AttributeMatrix>,
    /// One tag per sample, or empty before [`split`].
    pub tags: Vec<SplitTag>,
    pub planted: Option<PlantedTree>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Sample indices carrying `tag`, in dataset order.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let m = self.y.len();
        if m == 0 || self.x.len() != m {
            return invalid(format!("dataset has {} inputs and {m} labels", self.x.len()));
        }
        let d = self.input_dim();
        if d == 0 || self.x.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
            return invalid("inputs must be finite rows of equal, positive length");
        }
        if self.y.iter().any(|&c| c >= self.k) {
            return invalid(format!("labels must be below k = {}", self.k));
        }
        if let Some(f) = &self.f {
            if f.n_rows() != m {
                return invalid("attribute matrix row count differs from sample count");
            }
        }
        if !self.tags.is_empty() && self.tags.len() != m {
            return invalid("split tags must cover every sample");
        }
        Ok(())
    }
}

/// Draws a subset uniformly among all subsets of size at most `d0`.
fn sample_sparse_row<R: Rng>(n: usize, d0: usize, binom: &[f64], rng: &mut R) -> Vec<u8> {
    let total: f64 = binom.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut size = d0;
    for (s, &w) in binom.iter().enumerate() {
        if u < w {
            size = s;
            break;
        }
        u -= w;
    }
    let mut coords: Vec<usize> = (0..n).collect();
    let (chosen, _) = coords.partial_shuffle(rng, size);
    let mut row = vec![0u8; n];
    chosen.iter().for_each(|&j| row[j] = 1);
    row
}

fn binomials(n: usize, up_to: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(up_to + 1);
    let mut c = 1.0f64;
    for s in 0..=up_to {
        out.push(c);
        c = c * (n - s) as f64 / (s + 1) as f64;
    }
    out
}

fn plant_tree<R: Rng>(spec: &SynthSpec, f_rows: &[Vec<u8>], rng: &mut R) -> PlantedTree {
    let depth = spec.planted_depth;
    let internal = (1usize << depth) - 1;
    let mut attributes = vec![0usize; internal];
    for node in 0..internal {
        // attributes are distinct along every root-to-node path
        let mut used = Vec::new();
        let mut a = node;
        while a > 0 {
            a = (a - 1) / 2;
            used.push(attributes[a]);
        }
        let free: Vec<usize> = (0..spec.n_attr).filter(|j| !used.contains(j)).collect();
        attributes[node] = free[rng.random_range(0..free.len())];
    }
    let mut tree = PlantedTree {
        depth,
        attributes,
        leaf_classes: vec![0; 1 << depth],
    };
    // every class gets one of the k most visited leaves, the rest are random
    let mut visits = vec![0usize; 1 << depth];
    f_rows.iter().for_each(|r| visits[tree.leaf(r)] += 1);
    let mut order: Vec<usize> = (0..visits.len()).collect();
    order.sort_by(|&a, &b| visits[b].cmp(&visits[a]).then(a.cmp(&b)));
    let mut classes: Vec<usize> = (0..spec.k).collect();
    classes.shuffle(rng);
    for (rank, &leaf) in order.iter().enumerate() {
        tree.leaf_classes[leaf] = if rank < spec.k {
            classes[rank]
        } else {
            rng.random_range(0..spec.k)
        };
    }
    tree
}

fn generate_once(spec: &SynthSpec, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let binom = binomials(spec.n_attr, spec.d0);
    let f_rows: Vec<Vec<u8>> = (0..spec.m)
        .map(|_| sample_sparse_row(spec.n_attr, spec.d0, &binom, &mut rng))
        .collect();
    let planted = plant_tree(spec, &f_rows, &mut rng);
    let y = f_rows.iter().map(|r| planted.classify(r)).collect();

    let mixing: Vec<Vec<f64>> = if spec.identity_embedding {
        (0..spec.input_dim)
            .map(|i| (0..spec.n_attr).map(|j| f64::from(u8::from(i == j))).collect())
            .collect()
    } else {
        (0..spec.input_dim)
            .map(|_| (0..spec.n_attr).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    };
    let x = f_rows
        .iter()
        .map(|row| {
            mixing
                .iter()
                .map(|a| {
                    let signal: f64 = a.iter().zip(row).map(|(w, &v)| w * f64::from(v)).sum();
                    if spec.noise_sigma == 0.0 {
                        signal
                    } else {
                        let eps: f64 = rng.sample(StandardNormal);
                        signal + spec.noise_sigma * eps
                    }
                })
                .collect()
        })
        .collect();
    let f = AttributeMatrix::from_rows(&f_rows).expect("rows are binary and non-empty");
    LabeledDataset {
        x,
        y,
        k: spec.k,
        f: Some(f),
        tags: Vec::new(),
        planted: Some(planted),
    }
}

/// Generates a dataset; deterministic given `spec.seed`.
pub fn generate(spec: &SynthSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let needs_coverage = spec.m >= 50 * spec.k;
    for attempt in 0..=COVERAGE_RETRIES {
        let ds = generate_once(spec, spec.seed.wrapping_add(attempt));
        let mut seen = vec![false; spec.k];
        ds.y.iter().for_each(|&c| seen[c] = true);
        if !needs_coverage || seen.iter().all(|&s| s) {
            return Ok(ds);
        }
    }
    invalid(format!(
        "could not cover all {} classes after {COVERAGE_RETRIES} retries",
        spec.k
    ))
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    /// Largest-remainder sizes for `m` samples; ties favour earlier splits.
    pub fn sizes(&self, m: usize) -> Result<[usize; 3]> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|&p| !p.is_finite() || p <= 0.0) {
            return invalid("split fractions must be positive");
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return invalid("split fractions must sum to 1");
        }
        let raw: Vec<f64> = fr.iter().map(|p| p * m as f64).collect();
        let mut sizes = [0usize; 3];
        for (s, r) in sizes.iter_mut().zip(&raw) {
            *s = r.floor() as usize;
        }
        let assigned: usize = sizes.iter().sum();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let (ra, rb) = (raw[a] - raw[a].floor(), raw[b] - raw[b].floor());
            rb.partial_cmp(&ra).expect("finite").then(a.cmp(&b))
        });
        for &i in order.iter().take(m.saturating_sub(assigned)) {
            sizes[i] += 1;
        }
        if sizes.contains(&0) {
            return invalid(format!("split sizes {sizes:?} leave a split empty"));
        }
        Ok(sizes)
    }
}

/// Seeded shuffle, then contiguous train/val/test blocks.
pub fn split(dataset: &LabeledDataset, fractions: SplitFractions, seed: u64) -> Result<LabeledDataset> {
    let m = dataset.len();
    let sizes = fractions.sizes(m)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tags = vec![SplitTag::Train; m];
    for (pos, &idx) in order.iter().enumerate() {
        tags[idx] = if pos < sizes[0] {
            SplitTag::Train
        } else if pos < sizes[0] + sizes[1] {
            SplitTag::Val
        } else {
            SplitTag::Test
        };
    }
    Ok(LabeledDataset {
        tags,
        ..dataset.clone()
    })
}

pub const X_FILE: &str = "x.csv";
pub const Y_FILE: &str = "y.csv";
pub const F_FILE: &str = "f.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const SPEC_FILE: &str = "spec.json";

/// Writes `x.csv`, `y.csv`, `f.csv`, `split.csv` and, when given, `spec.json`.
pub fn write_bundle(dataset: &LabeledDataset, spec: Option<&SynthSpec>, dir: &Path) -> Result<()> {
    dataset.validate()?;
    std::fs::create_dir_all(dir)?;

    let mut w = csv::Writer::from_path(dir.join(X_FILE))?;
    w.write_record((0..dataset.input_dim()).map(|j| format!("x{j}")))?;
    for row in &dataset.x {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(Y_FILE))?;
    w.write_record(["y"])?;
    for c in &dataset.y {
        w.write_record([c.to_string()])?;
    }
    w.flush()?;

    if let Some(f) = &dataset.f {
        f.save_csv(&dir.join(F_FILE))?;
    }

    let mut w = csv::Writer::from_path(dir.join(SPLIT_FILE))?;
    w.write_record(["index", "tag"])?;
    for (i, t) in dataset.tags.iter().enumerate() {
        w.write_record([i.to_string(), t.to_string()])?;
    }
    w.flush()?;

    if let Some(spec) = spec {
        std::fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(spec)? + "\n")?;
    }
    Ok(())
}

/// Reads a bundle written by [`write_bundle`]. `f.csv` is optional; the
/// class count comes from `spec.json` when present, else from the labels.
pub fn read_bundle(dir: &Path) -> Result<LabeledDataset> {
    let mut x = Vec::new();
    for record in csv::Reader::from_path(dir.join(X_FILE))?.records() {
        let row = record?
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .or_else(|_| invalid(format!("{X_FILE}: not a number: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        x.push(row);
    }
    let mut y = Vec::new();
    for record in csv::Reader::from_path(dir.join(Y_FILE))?.records() {
        let record = record?;
        let field = record.get(0).unwrap_or("");
        y.push(
            field
                .trim()
                .parse::<usize>()
                .or_else(|_| invalid(format!("{Y_FILE}: not a class id: {field:?}")))?,
        );
    }
    let f_path = dir.join(F_FILE);
    let f = if f_path.exists() {
        Some(AttributeMatrix::load_csv(&f_path)?)
    } else {
        None
    };
    let mut tags = vec![None; y.len()];
    for record in csv::Reader::from_path(dir.join(SPLIT_FILE))?.records() {
        let record = record?;
        let idx: usize = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| crate::Error::InvalidArgument(format!("{SPLIT_FILE}: bad index")))?;
        let tag = SplitTag::parse(record.get(1).unwrap_or("").trim())?;
        match tags.get_mut(idx) {
            Some(slot @ None) => *slot = Some(tag),
            _ => return invalid(format!("{SPLIT_FILE}: index {idx} out of range or repeated")),
        }
    }
    let tags: Vec<SplitTag> = if tags.iter().all(Option::is_none) {
        Vec::new()
    } else {
        tags.into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| crate::Error::InvalidArgument(format!("{SPLIT_FILE}: not every sample is tagged")))?
    };
    let spec_path = dir.join(SPEC_FILE);
    let k = if spec_path.exists() {
        let spec: SynthSpec = serde_json::from_str(&std::fs::read_to_string(spec_path)?)?;
        spec.k
    } else {
        y.iter().max().map_or(0, |c| c + 1).max(2)
    };
    let ds = LabeledDataset {
        x,
        y,
        k,
        f,
        tags,
        planted: None,
    };
    ds.validate()?;
    Ok(ds)
}
