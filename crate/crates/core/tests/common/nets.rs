use isectreg_core::netcore::{Activation, DenseNet};
use isectreg_core::quantizer::{derounded_surrogate, QuantSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::H;

pub fn random_net(rng: &mut ChaCha8Rng, input: usize, out_act: Activation) -> DenseNet {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![input];
    sizes.extend((0..depth).map(|_| rng.random_range(1..=8)));
    let hidden = if rng.random_bool(0.5) { Activation::Mish } else { Activation::Identity };
    let net = DenseNet::random(&sizes, hidden, out_act, rng).unwrap();
    // non-zero biases so every term of the backward pass is exercised
    let params: Vec<f64> = net.parameters().iter().map(|p| p + rng.random_range(-0.3..0.3)).collect();
    net.with_parameters(&params).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn central<F: Fn(&[f64]) -> f64>(params: &[f64], f: F) -> Vec<f64> {
    (0..params.len())
        .map(|j| {
            let mut p = params.to_vec();
            p[j] += H;
            let plus = f(&p);
            p[j] -= 2.0 * H;
            let minus = f(&p);
            (plus - minus) / (2.0 * H)
        })
        .collect()
}

/// `c . G(surrogate(F(x)))` with the surrogate in place of the quantizer.
pub fn surrogate_loss(f: &DenseNet, g: &DenseNet, spec: QuantSpec, x: &[f64], c: &[f64]) -> f64 {
    let rep = f.eval(x).unwrap();
    let s = derounded_surrogate(&rep, spec).unwrap();
    dot(&g.eval(&s).unwrap(), c)
}

/// A saturated softmax head drives every gradient down to the level of
/// finite-difference rounding noise, where relative errors mean nothing.
pub fn saturated(probs: &[f64]) -> bool {
    probs.iter().any(|&p| p > 0.999)
}
