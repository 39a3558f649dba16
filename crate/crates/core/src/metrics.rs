//! Feature-fidelity measures between binary attribute matrices.
//!
//! For ground truth `f` (n columns) and extracted features `g` (d columns)
//! over the same m samples:
//!
//! ```text
//! r^(a, b)  = max(F1(a, b), F1(a, 1 - b))
//! d(f || g) = (1/n) * sum_i max_j r^(f_i, g_j)
//! d(f ; g)  = harmonic mean of d(f || g) and d(g || f)
//! ```
//!
//! Conventions: F1 is 0 when there are no true positives, and `r^` is 0
//! when either column is constant, since a constant column and its
//! complement carry no information about any attribute.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// An m x n matrix of 0/1 entries, stored by column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeMatrix {
    names: Vec<String>,
    columns: Vec<Vec<u8>>,
    rows: usize,
}

impl AttributeMatrix {
    /// Builds from sample rows with default names `a0, a1, ...`.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        let names = (0..n).map(|j| format!("a{j}")).collect();
        Self::from_rows_named(names, rows)
    }

    pub fn from_rows_named(names: Vec<String>, rows: &[Vec<u8>]) -> Result<Self> {
        if rows.is_empty() || names.is_empty() {
            return invalid("attribute matrix needs at least one row and one column");
        }
        if let Some(i) = rows.iter().position(|r| r.len() != names.len()) {
            return invalid(format!(
                "row {i} has {} entries, expected {}",
                rows[i].len(),
                names.len()
            ));
        }
        let columns = (0..names.len())
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Self::from_columns_named(names, columns)
    }

    pub fn from_columns(columns: Vec<Vec<u8>>) -> Result<Self> {
        let names = (0..columns.len()).map(|j| format!("a{j}")).collect();
        Self::from_columns_named(names, columns)
    }

    pub fn from_columns_named(names: Vec<String>, columns: Vec<Vec<u8>>) -> Result<Self> {
        if columns.is_empty() || names.len() != columns.len() {
            return invalid("attribute matrix needs one name per column and at least one column");
        }
        let rows = columns[0].len();
        if rows == 0 || columns.iter().any(|c| c.len() != rows) {
            return invalid("attribute columns must be non-empty and of equal length");
        }
        if columns.iter().flatten().any(|&v| v > 1) {
            return invalid("attribute entries must be 0 or 1");
        }
        Ok(Self { names, columns, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[u8] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<u8>] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> Vec<u8> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Keeps the given sample rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() || rows.iter().any(|&r| r >= self.rows) {
            return invalid("row selection is empty or out of range");
        }
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&r| c[r]).collect())
            .collect();
        Ok(Self {
            names: self.names.clone(),
            columns,
            rows: rows.len(),
        })
    }

    /// Header row of names, then one row of 0/1 values per sample.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for i in 0..self.rows {
            w.write_record(self.columns.iter().map(|c| if c[i] == 1 { "1" } else { "0" }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let names: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, record) in r.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| match field.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => invalid(format!("row {i}: expected 0 or 1, got {other:?}")),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows_named(names, &rows)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return invalid(format!("column lengths differ: {a} vs {b}"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision `P[truth | pred]`, recall `P[pred | truth]` and their harmonic
/// mean. Every value is 0 when there are no true positives.
pub fn precision_recall(pred: &[u8], truth: &[u8]) -> Result<PrecisionRecall> {
    check_len(pred.len(), truth.len())?;
    let (tp, np, nt) = counts(pred, truth, false);
    if tp == 0 {
        return Ok(PrecisionRecall {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        });
    }
    let precision = tp as f64 / np as f64;
    let recall = tp as f64 / nt as f64;
    Ok(PrecisionRecall {
        precision,
        recall,
        f1: f1_from_counts(tp, np, nt),
    })
}

pub fn f1(pred: &[u8], truth: &[u8]) -> Result<f64> {
    check_len(pred.len(), truth.len())?;
    let (tp, np, nt) = counts(pred, truth, false);
    Ok(f1_from_counts(tp, np, nt))
}

/// (true positives, predicted positives, actual positives), optionally
/// against the complement of `truth`.
fn counts(pred: &[u8], truth: &[u8], complement_truth: bool) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut np = 0;
    let mut nt = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        let t = if complement_truth { 1 - t } else { t };
        np += p as usize;
        nt += t as usize;
        tp += (p & t) as usize;
    }
    (tp, np, nt)
}

// 2PR / (P + R) simplifies to 2 TP / (|pred| + |truth|)
fn f1_from_counts(tp: usize, np: usize, nt: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (np + nt) as f64
    }
}

fn is_constant(col: &[u8]) -> bool {
    col.iter().all(|&v| v == col[0])
}

/// Annotation-invariant F1 score and which side of `q2` attained it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RHat {
    pub score: f64,
    /// True when the complement `1 - q2` scored strictly higher.
    pub complemented: bool,
}

pub fn r_hat(q1: &[u8], q2: &[u8]) -> Result<RHat> {
    check_len(q1.len(), q2.len())?;
    Ok(r_hat_unchecked(q1, q2))
}

fn r_hat_unchecked(q1: &[u8], q2: &[u8]) -> RHat {
    if q1.is_empty() || is_constant(q1) || is_constant(q2) {
        return RHat {
            score: 0.0,
            complemented: false,
        };
    }
    let (tp, np, nt) = counts(q1, q2, false);
    let direct = f1_from_counts(tp, np, nt);
    let (tp, np, nt) = counts(q1, q2, true);
    let flipped = f1_from_counts(tp, np, nt);
    if flipped > direct {
        RHat {
            score: flipped,
            complemented: true,
        }
    } else {
        RHat {
            score: direct,
            complemented: false,
        }
    }
}

/// Best match in `g` for one column of `f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeMatch {
    pub score: f64,
    /// Column of the other matrix; lowest index on ties.
    pub index: usize,
    pub complemented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedFidelity {
    pub score: f64,
    pub matches: Vec<AttributeMatch>,
}

/// `d(f || g)`: mean over columns of `f` of the best `r^` against any column
/// of `g`.
pub fn directed_fidelity(f: &AttributeMatrix, g: &AttributeMatrix) -> Result<DirectedFidelity> {
    if f.n_rows() != g.n_rows() {
        return invalid(format!(
            "sample counts differ: {} vs {}",
            f.n_rows(),
            g.n_rows()
        ));
    }
    let matches: Vec<AttributeMatch> = f
        .columns()
        .iter()
        .map(|fi| {
            let mut best = AttributeMatch {
                score: f64::NEG_INFINITY,
                index: 0,
                complemented: false,
            };
            for (j, gj) in g.columns().iter().enumerate() {
                let r = r_hat_unchecked(fi, gj);
                if r.score > best.score {
                    best = AttributeMatch {
                        score: r.score,
                        index: j,
                        complemented: r.complemented,
                    };
                }
            }
            best
        })
        .collect();
    let score = matches.iter().map(|m| m.score).sum::<f64>() / matches.len() as f64;
    Ok(DirectedFidelity { score, matches })
}

/// Both directed fidelities and their harmonic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// `d(f || g)`.
    pub truth_to_repr: f64,
    /// `d(g || f)`.
    pub repr_to_truth: f64,
    pub symmetric: f64,
    pub truth_matches: Vec<AttributeMatch>,
    pub repr_matches: Vec<AttributeMatch>,
}

pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn fidelity(f: &AttributeMatrix, g: &AttributeMatrix) -> Result<FidelityReport> {
    let forward = directed_fidelity(f, g)?;
    let backward = directed_fidelity(g, f)?;
    Ok(FidelityReport {
        truth_to_repr: forward.score,
        repr_to_truth: backward.score,
        symmetric: harmonic_mean(forward.score, backward.score),
        truth_matches: forward.matches,
        repr_matches: backward.matches,
    })
}

/// One-hot and complement indicators per coordinate: `(u1 || u2)` with
/// `u1[i, j] = [v_i == j]`, `u2[i, j] = [v_i != j]` for `j in 0..2^bits`,
/// laid out i-major, j-minor.
pub fn binarize(v: &[u32], bits: u32) -> Result<Vec<u8>> {
    if !(1..=16).contains(&bits) {
        return invalid(format!("bits must be in 1..=16, got {bits}"));
    }
    let levels = 1usize << bits;
    if let Some(bad) = v.iter().find(|&&x| x as usize >= levels) {
        return invalid(format!("value {bad} is out of range for {bits} bits"));
    }
    let block = v.len() * levels;
    let mut out = vec![0u8; 2 * block];
    for (i, &x) in v.iter().enumerate() {
        for j in 0..levels {
            let hit = u8::from(x as usize == j);
            out[i * levels + j] = hit;
            out[block + i * levels + j] = 1 - hit;
        }
    }
    Ok(out)
}

/// Binarizes every representation row into an attribute matrix.
pub fn binarize_rows(reps: &[Vec<u32>], bits: u32) -> Result<AttributeMatrix> {
    let Some(first) = reps.first() else {
        return invalid("no representations to binarize");
    };
    let levels = 1usize << bits.min(16);
    let n = first.len();
    let mut names = Vec::with_capacity(2 * n * levels);
    for block in ["u1", "u2"] {
        for i in 0..n {
            for j in 0..levels {
                names.push(format!("{block}_{i}_{j}"));
            }
        }
    }
    let rows = reps
        .iter()
        .map(|r| {
            if r.len() != n {
                return invalid("representations have inconsistent dimensions");
            }
            binarize(r, bits)
        })
        .collect::<Result<Vec<_>>>()?;
    AttributeMatrix::from_rows_named(names, &rows)
}

/// Mean absolute difference between two real-valued columns.
pub fn real_distance(q1: &[f64], q2: &[f64]) -> Result<f64> {
    check_len(q1.len(), q2.len())?;
    if q1.is_empty() {
        return invalid("cannot compare empty columns");
    }
    Ok(q1.iter().zip(q2).map(|(a, b)| (a - b).abs()).sum::<f64>() / q1.len() as f64)
}
