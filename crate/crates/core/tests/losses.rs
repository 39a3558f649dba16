use isectreg_core::netcore::{
    cross_entropy, cross_entropy_grad, masked_penalty, masked_penalty_grad, mish, mish_grad, softmax, PenaltyNorm,
    ProbVector,
};
use proptest::prelude::*;

fn prob(k: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|w| ProbVector::normalized(w).unwrap())
}

proptest! {
    #[test]
    fn softmax_lies_on_the_simplex(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn softmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..10), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        for (a, b) in softmax(&logits).as_slice().iter().zip(softmax(&shifted).as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gibbs_inequality((u, v) in (2usize..6).prop_flat_map(|k| (prob(k), prob(k)))) {
        // H(v, u) >= H(v, v) for every u
        prop_assert!(cross_entropy(&u, &v).unwrap() + 1e-12 >= cross_entropy(&v, &v).unwrap());
    }

    #[test]
    fn cross_entropy_gradient_matches_differences((u, v) in (2usize..6).prop_flat_map(|k| (prob(k), prob(k)))) {
        let grad = cross_entropy_grad(u.as_slice(), v.as_slice()).unwrap();
        let h = 1e-7;
        for (i, &g) in grad.iter().enumerate() {
            // -sum v log u with u_i perturbed off the simplex
            let f = |d: f64| -> f64 {
                u.as_slice().iter().zip(v.as_slice()).enumerate()
                    .map(|(j, (&uj, &vj))| -vj * (uj + if j == i { d } else { 0.0 }).ln())
                    .sum()
            };
            let fd = (f(h) - f(-h)) / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-5 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn mish_is_increasing_above_its_minimum(a in -1.0f64..20.0, b in -1.0f64..20.0) {
        // mish has a single minimum near -1.19 and increases after it
        if a < b {
            prop_assert!(mish(a) <= mish(b));
        }
        prop_assert!(mish_grad(a) > 0.0);
    }

    #[test]
    fn mish_grad_matches_differences(x in -8.0f64..8.0) {
        let h = 1e-6;
        let fd = (mish(x + h) - mish(x - h)) / (2.0 * h);
        prop_assert!((fd - mish_grad(x)).abs() < 1e-7);
    }

    #[test]
    fn full_mask_penalty_is_total_l1(rows in prop::collection::vec(prop::collection::vec(0u32..4, 5), 1..8)) {
        let mask = vec![true; 5];
        let total: f64 = rows.iter().flatten().map(|&v| f64::from(v)).sum::<f64>() / rows.len() as f64;
        prop_assert_eq!(masked_penalty(&rows, &mask, PenaltyNorm::L1).unwrap(), total);
        let empty = vec![false; 5];
        prop_assert_eq!(masked_penalty(&rows, &empty, PenaltyNorm::L1).unwrap(), 0.0);
    }
}

#[test]
fn penalty_gradient_follows_the_norm() {
    let row = [0u32, 2, 3];
    let mask = [true, true, false];
    assert_eq!(masked_penalty_grad(&row, &mask, PenaltyNorm::L1, 2), [0.5, 0.5, 0.0]);
    assert_eq!(masked_penalty_grad(&row, &mask, PenaltyNorm::L2, 2), [0.0, 2.0, 0.0]);
}
