use isectreg_core::netcore::{cross_entropy_grad, masked_penalty, sgd_step, Activation, DenseNet, Gradients, Layer, ProbVector};
use isectreg_core::quantizer::quantize;
use isectreg_core::synthgen::{generate, split, LabeledDataset, SplitFractions, SynthSpec};
use isectreg_core::trainer::{
    batch_penalty, evaluate_fidelity, init_networks, train, training_batches, RefitMode, Representer, TrainConfig,
};
use isectreg_core::{Error, QuantSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset(m: usize, seed: u64) -> LabeledDataset {
    let spec = SynthSpec {
        m,
        seed,
        ..SynthSpec::default()
    };
    split(&generate(&spec).unwrap(), SplitFractions::default(), seed).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        feature_dim: 8,
        feature_hidden: vec![12],
        classifier_hidden: 10,
        seed: 5,
        ..TrainConfig::default()
    }
}

/// Plain quantized-network cross-entropy training, written out by hand.
fn plain_ce_training(data: &LabeledDataset, config: &TrainConfig) -> (DenseNet, DenseNet) {
    let spec = config.quant_spec().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (mut f, mut g) = init_networks(config, data.input_dim(), data.k, &mut rng).unwrap();
    let batches = training_batches(data, config.batch_size);
    let grad_of = |g: &DenseNet, q: &[f64], y: usize, s: f64| {
        let (probs, trace) = g.forward(q).unwrap();
        let og: Vec<f64> = cross_entropy_grad(&probs, ProbVector::one_hot(y, data.k).as_slice())
            .unwrap()
            .into_iter()
            .map(|v| config.lambda1 * v / s)
            .collect();
        (trace, og)
    };
    for _ in 0..config.epochs {
        for batch in &batches {
            let s = batch.len() as f64;
            let fwd: Vec<_> = batch.iter().map(|&i| f.forward(&data.x[i]).unwrap()).collect();
            let quant: Vec<_> = fwd.iter().map(|(rep, _)| quantize(rep, spec).unwrap()).collect();
            let qs: Vec<Vec<f64>> = quant.iter().map(|q| q.values().iter().map(|&v| f64::from(v)).collect()).collect();

            let mut g_grads = Gradients::zeros_like(&g);
            for (b, &i) in batch.iter().enumerate() {
                let (trace, og) = grad_of(&g, &qs[b], data.y[i], s);
                g.backward_into(&trace, &og, &mut g_grads).unwrap();
            }
            g = sgd_step(&g, &g_grads, config.lr).unwrap();

            let mut f_grads = Gradients::zeros_like(&f);
            let mut scratch = Gradients::zeros_like(&g);
            for (b, &i) in batch.iter().enumerate() {
                let (trace, og) = grad_of(&g, &qs[b], data.y[i], s);
                let dq = g.backward_into(&trace, &og, &mut scratch).unwrap();
                let drep = quant[b].vjp(&dq).unwrap();
                f.backward_into(&fwd[b].1, &drep, &mut f_grads).unwrap();
            }
            f = sgd_step(&f, &f_grads, config.lr).unwrap();
        }
    }
    (f, g)
}

#[test]
fn baseline_reduces_to_plain_cross_entropy() {
    let data = dataset(300, 1);
    let config = small_config().baseline();
    let outcome = train(&data, &config).unwrap();
    let (f, g) = plain_ce_training(&data, &config);
    assert!(outcome.baseline);
    assert_eq!(outcome.feature.parameters(), f.parameters());
    assert_eq!(outcome.classifier.parameters(), g.parameters());
}

#[test]
fn first_epoch_ignores_the_tree_term() {
    let data = dataset(300, 2);
    let base = TrainConfig {
        epochs: 1,
        lambda3: 0.0,
        ..small_config()
    };
    let with_tree = TrainConfig { lambda2: 7.0, ..base.clone() };
    let off = train(&data, &TrainConfig { lambda2: 0.0, ..base }).unwrap();
    let on = train(&data, &with_tree).unwrap();
    assert_eq!(on.reports[0].lambda2_effective, 0.0);
    assert_eq!(on.feature.parameters(), off.feature.parameters());
    assert_eq!(on.classifier.parameters(), off.classifier.parameters());

    let two = train(&data, &TrainConfig { epochs: 2, ..with_tree }).unwrap();
    assert_eq!(two.reports[1].lambda2_effective, 7.0);
}

#[test]
fn per_batch_mode_also_gates_the_first_epoch() {
    let data = dataset(200, 3);
    let base = TrainConfig {
        epochs: 1,
        lambda3: 0.0,
        refit_mode: RefitMode::PerBatch,
        ..small_config()
    };
    let off = train(&data, &TrainConfig { lambda2: 0.0, ..base.clone() }).unwrap();
    let on = train(&data, &TrainConfig { lambda2: 3.0, ..base }).unwrap();
    assert_eq!(on.feature.parameters(), off.feature.parameters());
}

#[test]
fn full_mask_matches_unmasked_penalty_on_every_batch() {
    let data = dataset(300, 4);
    let config = TrainConfig {
        mask_p: 1.0,
        ..small_config()
    };
    let outcome = train(&data, &config).unwrap();
    let rep = Representer::per_sample(config.quant_spec().unwrap());
    let mask = vec![true; config.feature_dim];
    for batch in training_batches(&data, config.batch_size) {
        let xs: Vec<&[f64]> = batch.iter().map(|&i| data.x[i].as_slice()).collect();
        let q = rep.represent(&outcome.feature, &xs).unwrap();
        let unmasked = q.iter().flatten().map(|&v| f64::from(v)).sum::<f64>() / q.len() as f64;
        assert_eq!(batch_penalty(&q, &mask, &config).unwrap(), unmasked);
        assert_eq!(masked_penalty(&q, &mask, config.penalty_norm).unwrap(), unmasked);
    }
}

#[test]
fn training_is_deterministic() {
    let data = dataset(300, 5);
    let a = train(&data, &small_config()).unwrap();
    let b = train(&data, &small_config()).unwrap();
    assert_eq!(
        serde_json::to_string(&a.reports).unwrap(),
        serde_json::to_string(&b.reports).unwrap()
    );
    assert_eq!(a.tree.to_json().unwrap(), b.tree.to_json().unwrap());
    assert!(a.reports.iter().all(|r| r.fidelity.unwrap().is_finite() && r.soft_ce.is_finite()));
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let data = dataset(200, 6);
    let config = TrainConfig {
        lr: 1e200,
        ..small_config()
    };
    match train(&data, &config) {
        Err(Error::Diverged { epoch, reports, .. }) => assert_eq!(reports.len(), epoch - 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.reports.len())),
    }
}

#[test]
fn rejects_invalid_configs() {
    let data = dataset(200, 7);
    for bad in [
        TrainConfig { lr: 0.0, ..small_config() },
        TrainConfig { mask_p: 1.5, ..small_config() },
        TrainConfig { bits: 0, ..small_config() },
        TrainConfig { epochs: 0, ..small_config() },
    ] {
        assert!(matches!(train(&data, &bad), Err(Error::InvalidArgument(_))));
    }
    let json = r#"{"lambda1": 1.0, "bogus": 3}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

fn identity_net(n: usize) -> DenseNet {
    let weights = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    DenseNet::new(vec![Layer::new(weights, vec![0.0; n], Activation::Identity).unwrap()]).unwrap()
}

fn noiseless() -> LabeledDataset {
    let spec = SynthSpec {
        m: 500,
        input_dim: 16,
        noise_sigma: 0.0,
        identity_embedding: true,
        seed: 8,
        ..SynthSpec::default()
    };
    split(&generate(&spec).unwrap(), SplitFractions::default(), 8).unwrap()
}

#[test]
fn attribute_copying_representation_has_full_fidelity() {
    let data = noiseless();
    let rep = Representer::per_sample(QuantSpec::new(1).unwrap());
    let report = evaluate_fidelity(&identity_net(16), &data, &rep).unwrap();
    assert_eq!(report.symmetric, 1.0);
}

#[test]
fn constant_representation_has_zero_fidelity() {
    let data = noiseless();
    let zero = DenseNet::new(vec![Layer::new(vec![vec![0.0; 16]; 4], vec![0.0; 4], Activation::Identity).unwrap()]).unwrap();
    let rep = Representer::per_sample(QuantSpec::new(2).unwrap());
    assert_eq!(evaluate_fidelity(&zero, &data, &rep).unwrap().symmetric, 0.0);
}

#[test]
fn fidelity_ignores_output_permutations() {
    let data = dataset(300, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let f = DenseNet::random(&[32, 6], Activation::Identity, Activation::Identity, &mut rng).unwrap();
    let layer = &f.layers()[0];
    let order = [3usize, 0, 5, 1, 4, 2];
    let weights = order
        .iter()
        .map(|&r| (0..32).map(|c| layer.weight(r, c)).collect())
        .collect();
    let bias = order.iter().map(|&r| layer.bias()[r]).collect();
    let permuted = DenseNet::new(vec![Layer::new(weights, bias, Activation::Identity).unwrap()]).unwrap();
    let rep = Representer::per_sample(QuantSpec::new(2).unwrap());
    let a = evaluate_fidelity(&f, &data, &rep).unwrap().symmetric;
    let b = evaluate_fidelity(&permuted, &data, &rep).unwrap().symmetric;
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn fidelity_needs_ground_truth() {
    let mut data = dataset(200, 11);
    data.f = None;
    let rep = Representer::per_sample(QuantSpec::new(2).unwrap());
    assert!(evaluate_fidelity(&identity_net(32), &data, &rep).is_err());
}
