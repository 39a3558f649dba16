//! Uniform quantizer with a straight-through gradient estimate.
//!
//! Forward pass over a vector `x` with `r` bits:
//!
//! ```text
//! q_min, q_max = 0, 2^r - 1
//! s      = (x_max - x_min) / (q_max - q_min)
//! z_init = (q_min - x_min) / s
//! z~     = round(clamp(z_init))
//! q~_i   = z~ + x_i / s
//! q_i    = round(clamp(q~_i))
//! ```
//!
//! The backward pass treats `round` as the identity and gates each path by
//! whether the clamped quantity was strictly inside `(q_min, q_max)`. The
//! gradients of `min_j x_j` and `max_j x_j` go to the lowest index attaining
//! the extremum. Ties in `round` resolve to even.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Bit width of the uniform quantizer. `q_min` is always 0 and `q_max` is
/// `2^bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct QuantSpec {
    bits: u32,
}

impl QuantSpec {
    pub const MAX_BITS: u32 = 16;

    pub fn new(bits: u32) -> Result<Self> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return invalid(format!("bits must be in 1..={}, got {bits}", Self::MAX_BITS));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn q_min(&self) -> u32 {
        0
    }

    pub fn q_max(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    /// Number of representable levels, `2^bits`.
    pub fn levels(&self) -> usize {
        1usize << self.bits
    }
}

impl TryFrom<u32> for QuantSpec {
    type Error = crate::Error;

    fn try_from(bits: u32) -> Result<Self> {
        Self::new(bits)
    }
}

impl From<QuantSpec> for u32 {
    fn from(spec: QuantSpec) -> u32 {
        spec.bits
    }
}

/// Range statistics shared by the forward pass, the surrogate and the VJP.
#[derive(Debug, Clone)]
struct RangeStats {
    argmin: usize,
    argmax: usize,
    x_min: f64,
    range: f64,
    q_max: f64,
    scale: f64,
    z_init: f64,
}

impl RangeStats {
    /// Returns `None` for a degenerate range (`x_max == x_min`).
    fn of(x: &[f64], spec: QuantSpec) -> Result<Option<Self>> {
        if x.is_empty() {
            return invalid("cannot quantize an empty vector");
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return invalid(format!("non-finite entry at index {i}"));
        }
        let (mut argmin, mut argmax) = (0, 0);
        for (i, &v) in x.iter().enumerate() {
            if v < x[argmin] {
                argmin = i;
            }
            if v > x[argmax] {
                argmax = i;
            }
        }
        let (x_min, x_max) = (x[argmin], x[argmax]);
        if x_max == x_min {
            return Ok(None);
        }
        let q_max = f64::from(spec.q_max());
        let range = x_max - x_min;
        let scale = range / q_max;
        let z_init = -x_min / scale;
        Ok(Some(Self {
            argmin,
            argmax,
            x_min,
            range,
            q_max,
            scale,
            z_init,
        }))
    }

    fn interior(&self, v: f64) -> bool {
        v > 0.0 && v < self.q_max
    }

    fn clamp(&self, v: f64) -> f64 {
        v.clamp(0.0, self.q_max)
    }

    fn zero_point(&self) -> f64 {
        self.clamp(self.z_init).round_ties_even()
    }

    /// `d z_init / d x_min` and `d z_init / d x_max`.
    fn z_init_partials(&self) -> (f64, f64) {
        let d = self.range;
        let dmin = -self.q_max / d - self.q_max * self.x_min / (d * d);
        let dmax = self.q_max * self.x_min / (d * d);
        (dmin, dmax)
    }
}

/// Result of a forward pass together with what the STE backward pass needs.
#[derive(Debug, Clone)]
pub struct QuantOutput {
    values: Vec<u32>,
    cache: Option<BackwardCache>,
}

#[derive(Debug, Clone)]
struct BackwardCache {
    stats: RangeStats,
    inputs: Vec<f64>,
    /// `q~_i` before clamping.
    pre_clamp: Vec<f64>,
}

impl QuantOutput {
    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<u32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every input entry was equal.
    pub fn is_degenerate(&self) -> bool {
        self.cache.is_none()
    }

    /// Pre-clamp values `q~_i`; empty for a degenerate range.
    pub fn pre_clamp(&self) -> &[f64] {
        self.cache.as_ref().map_or(&[], |c| &c.pre_clamp)
    }

    /// Vector-Jacobian product `upstream^T * J` of the estimated Jacobian.
    pub fn vjp(&self, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.values.len() {
            return invalid(format!(
                "upstream length {} does not match input length {}",
                upstream.len(),
                self.values.len()
            ));
        }
        let n = self.values.len();
        let Some(cache) = &self.cache else {
            return Ok(vec![0.0; n]);
        };
        let stats = &cache.stats;
        let q_over_d = stats.q_max / stats.range;
        let q_over_d2 = q_over_d / stats.range;

        let mut out = vec![0.0; n];
        // sum of gated upstream, and the same weighted by x_i
        let mut gated_sum = 0.0;
        let mut gated_moment = 0.0;
        for i in 0..n {
            if stats.interior(cache.pre_clamp[i]) {
                let u = upstream[i];
                gated_sum += u;
                gated_moment += u * cache.inputs[i];
                out[i] += u * q_over_d;
            }
        }
        // d(x_i / s) / d x_min = Q x_i / D^2, / d x_max = -Q x_i / D^2
        out[stats.argmin] += gated_moment * q_over_d2;
        out[stats.argmax] -= gated_moment * q_over_d2;
        if stats.interior(stats.z_init) {
            let (dmin, dmax) = stats.z_init_partials();
            out[stats.argmin] += gated_sum * dmin;
            out[stats.argmax] += gated_sum * dmax;
        }
        Ok(out)
    }

    /// Dense estimated Jacobian, `J[i][j] = d q_i / d x_j`.
    pub fn jacobian(&self) -> Vec<Vec<f64>> {
        let n = self.values.len();
        // rows of J are VJPs with unit vectors
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                self.vjp(&e).expect("length matches by construction")
            })
            .collect()
    }
}

/// Quantizes `x` and keeps the state needed for [`QuantOutput::vjp`].
pub fn quantize(x: &[f64], spec: QuantSpec) -> Result<QuantOutput> {
    let Some(stats) = RangeStats::of(x, spec)? else {
        return Ok(QuantOutput {
            values: vec![0; x.len()],
            cache: None,
        });
    };
    let zero = stats.zero_point();
    let pre_clamp: Vec<f64> = x.iter().map(|&v| zero + v / stats.scale).collect();
    let values = pre_clamp
        .iter()
        .map(|&v| stats.clamp(v).round_ties_even() as u32)
        .collect();
    Ok(QuantOutput {
        values,
        cache: Some(BackwardCache {
            stats,
            inputs: x.to_vec(),
            pre_clamp,
        }),
    })
}

pub fn quantize_forward(x: &[f64], spec: QuantSpec) -> Result<Vec<u32>> {
    quantize(x, spec).map(QuantOutput::into_values)
}

pub fn quantize_backward(x: &[f64], spec: QuantSpec, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != x.len() {
        return invalid(format!(
            "upstream length {} does not match input length {}",
            upstream.len(),
            x.len()
        ));
    }
    quantize(x, spec)?.vjp(upstream)
}

/// The forward pass with both `round` calls replaced by the identity.
///
/// Away from clamp boundaries and min/max ties its exact gradient equals the
/// STE estimate, which makes it a finite-difference oracle for
/// [`quantize_backward`].
pub fn derounded_surrogate(x: &[f64], spec: QuantSpec) -> Result<Vec<f64>> {
    let Some(stats) = RangeStats::of(x, spec)? else {
        return Ok(vec![0.0; x.len()]);
    };
    let zero = stats.clamp(stats.z_init);
    Ok(x.iter()
        .map(|&v| stats.clamp(zero + v / stats.scale))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bits: u32) -> QuantSpec {
        QuantSpec::new(bits).unwrap()
    }

    #[test]
    fn forward_hand_traces() {
        assert_eq!(quantize_forward(&[0.0, 1.0, 2.0, 3.0], spec(2)).unwrap(), [0, 1, 2, 3]);
        assert_eq!(quantize_forward(&[5.0, 5.0, 5.0], spec(4)).unwrap(), [0, 0, 0]);
        assert_eq!(quantize_forward(&[-1.0, 0.0, 1.0], spec(2)).unwrap(), [0, 2, 3]);
    }

    #[test]
    fn backward_hand_trace() {
        let g = quantize_backward(&[-1.0, 0.0, 1.0], spec(2), &[0.0, 1.0, 0.0]).unwrap();
        let want = [-0.75, 1.5, -0.75];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn backward_degenerate_is_zero() {
        let g = quantize_backward(&[5.0, 5.0, 5.0], spec(2), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(g, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn clamped_coordinates_contribute_nothing() {
        // z_init = 0 and q~ lands on {0,1,2,3}: rows 0 and 3 sit on the clamp boundary
        let x = [0.0, 1.0, 2.0, 3.0];
        let out = quantize(&x, spec(2)).unwrap();
        let jac = out.jacobian();
        assert!(jac[0].iter().all(|&v| v == 0.0));
        assert!(jac[3].iter().all(|&v| v == 0.0));
        assert!(jac[1].iter().any(|&v| v != 0.0));
        let g = out.vjp(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g, [0.0; 4]);
    }

    #[test]
    fn surrogate_hand_traces() {
        // the zero point stays unrounded: 1.5 + x / (2/3), clamped to [0, 3]
        let s = derounded_surrogate(&[-1.0, 0.0, 1.0], spec(2)).unwrap();
        for (a, b) in s.iter().zip([0.0, 1.5, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(derounded_surrogate(&[0.0, 1.0, 2.0, 3.0], spec(2)).unwrap(), [0.0, 1.0, 2.0, 3.0]);
        assert_eq!(derounded_surrogate(&[5.0, 5.0, 5.0], spec(2)).unwrap(), [0.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(quantize_forward(&[], spec(2)).is_err());
        assert!(quantize_forward(&[1.0, f64::NAN], spec(2)).is_err());
        assert!(quantize_forward(&[1.0, f64::INFINITY], spec(2)).is_err());
        assert!(quantize_backward(&[1.0, 2.0], spec(2), &[1.0]).is_err());
        assert!(derounded_surrogate(&[], spec(2)).is_err());
        assert!(QuantSpec::new(0).is_err());
        assert!(QuantSpec::new(17).is_err());
        assert_eq!(QuantSpec::new(16).unwrap().q_max(), 65535);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // two minima: only index 0 receives the x_min partials
        let x = [-1.0, -1.0, 0.5, 1.0];
        let g = quantize_backward(&x, spec(2), &[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(g[1], 0.0);
        assert!(g[0] != 0.0);
    }
}
