//! Oracles shared by the integration tests.
#![allow(dead_code)]

pub mod biconvex;
pub mod cart;
pub mod nets;

use isectreg_core::quantizer::{derounded_surrogate, QuantSpec};

pub const H: f64 = 1e-5;

/// True when a central difference of the surrogate at `x` is meaningful:
/// no min/max ties, no value within reach of a clamp edge, and the STE gates
/// agree with the surrogate's (the STE gates on the rounded zero point).
pub fn well_conditioned(x: &[f64], spec: QuantSpec) -> bool {
    // two entries are both extremes, whose Jacobian is identically zero
    if x.len() < 3 {
        return false;
    }
    let q = f64::from(spec.q_max());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in x {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[1] - w[0] < 1e-3) {
        return false;
    }
    let range = hi - lo;
    if range < 1e-2 {
        return false;
    }
    let s = range / q;
    let z = -lo / s;
    let margin = 1e-3 * q.max(1.0);
    let near_edge = |v: f64| v.abs() < margin || (v - q).abs() < margin;
    if near_edge(z) {
        return false;
    }
    let z_sur = z.clamp(0.0, q);
    let z_ste = z_sur.round_ties_even();
    let z_interior = z > 0.0 && z < q;
    x.iter().all(|&v| {
        // with an interior zero point the extremes map to exactly 0 and q
        // for every perturbation, so their rows are identically zero
        if z_interior && (v == lo || v == hi) {
            return true;
        }
        let sur = z_sur + v / s;
        let ste = z_ste + v / s;
        let inside = |t: f64| t > 0.0 && t < q;
        !near_edge(sur) && inside(sur) == inside(ste)
    })
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    // identically zero gradients only differ by rounding noise
    diff / na.max(nb).max(1e-8)
}

/// `upstream^T J` of the surrogate by central differences.
pub fn surrogate_vjp_fd(x: &[f64], spec: QuantSpec, upstream: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut plus = x.to_vec();
            let mut minus = x.to_vec();
            plus[j] += H;
            minus[j] -= H;
            let fp = derounded_surrogate(&plus, spec).unwrap();
            let fm = derounded_surrogate(&minus, spec).unwrap();
            upstream
                .iter()
                .zip(fp.iter().zip(&fm))
                .map(|(u, (p, m))| u * (p - m) / (2.0 * H))
                .sum()
        })
        .collect()
}

