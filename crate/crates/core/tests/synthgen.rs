use isectreg_core::dtree::{fit_cart, TreeSample, TreeSpec};
use isectreg_core::netcore::ProbVector;
use isectreg_core::synthgen::{generate, read_bundle, split, write_bundle, SplitFractions, SplitTag, SynthSpec};

fn small(seed: u64) -> SynthSpec {
    SynthSpec {
        m: 600,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn labels_are_realizable_from_true_attributes() {
    for seed in 0..5 {
        let spec = small(seed);
        let ds = generate(&spec).unwrap();
        let f = ds.f.as_ref().unwrap();
        let planted = ds.planted.as_ref().unwrap();
        for i in 0..ds.len() {
            assert_eq!(planted.classify(&f.row(i)), ds.y[i]);
        }
        let samples: Vec<TreeSample> = (0..ds.len())
            .map(|i| {
                let row = f.row(i).into_iter().map(u32::from).collect();
                TreeSample::new(row, ProbVector::one_hot(ds.y[i], ds.k))
            })
            .collect();
        let tree = fit_cart(&samples, TreeSpec::new(spec.n_attr, 2).unwrap()).unwrap();
        let correct = samples
            .iter()
            .zip(&ds.y)
            .filter(|(s, &y)| tree.predict(&s.features).unwrap().argmax() == y)
            .count();
        assert_eq!(correct, ds.len(), "seed {seed}");
    }
}

#[test]
fn attributes_are_sparse_and_classes_covered() {
    for seed in 0..5 {
        let spec = small(seed);
        let ds = generate(&spec).unwrap();
        let f = ds.f.as_ref().unwrap();
        for i in 0..ds.len() {
            assert!(f.row(i).iter().map(|&v| usize::from(v)).sum::<usize>() <= spec.d0);
        }
        let mut seen = vec![false; spec.k];
        ds.y.iter().for_each(|&c| seen[c] = true);
        assert!(seen.iter().all(|&s| s));
    }
}

#[test]
fn noiseless_identity_embedding_copies_attributes() {
    let spec = SynthSpec {
        m: 400,
        input_dim: 16,
        noise_sigma: 0.0,
        identity_embedding: true,
        ..SynthSpec::default()
    };
    let ds = generate(&spec).unwrap();
    let f = ds.f.as_ref().unwrap();
    for i in 0..ds.len() {
        let row: Vec<f64> = f.row(i).into_iter().map(f64::from).collect();
        assert_eq!(ds.x[i], row);
    }
}

#[test]
fn generation_and_split_are_deterministic() {
    let a = split(&generate(&small(3)).unwrap(), SplitFractions::default(), 3).unwrap();
    let b = split(&generate(&small(3)).unwrap(), SplitFractions::default(), 3).unwrap();
    assert_eq!(a, b);
    let c = generate(&small(4)).unwrap();
    assert_ne!(a.x, c.x);
}

#[test]
fn split_tags_partition_samples() {
    let ds = split(&generate(&small(1)).unwrap(), SplitFractions::default(), 9).unwrap();
    let sizes: Vec<usize> = [SplitTag::Train, SplitTag::Val, SplitTag::Test]
        .iter()
        .map(|&t| ds.indices(t).len())
        .collect();
    assert_eq!(sizes, [420, 90, 90]);
    let sizes = SplitFractions { train: 0.7, val: 0.2, test: 0.1 }.sizes(10).unwrap();
    assert_eq!(sizes, [7, 2, 1]);
    assert!(SplitFractions { train: 0.98, val: 0.01, test: 0.01 }.sizes(10).is_err());
}

#[test]
fn bundle_round_trips() {
    let spec = small(2);
    let ds = split(&generate(&spec).unwrap(), SplitFractions::default(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_bundle(&ds, Some(&spec), dir.path()).unwrap();
    let back = read_bundle(dir.path()).unwrap();
    assert_eq!(back.x, ds.x);
    assert_eq!(back.y, ds.y);
    assert_eq!(back.f, ds.f);
    assert_eq!(back.tags, ds.tags);
    assert_eq!(back.k, ds.k);
}

#[test]
fn invalid_specs_name_the_field() {
    let bad = SynthSpec { d0: 0, ..SynthSpec::default() };
    assert!(generate(&bad).unwrap_err().to_string().contains("d0"));
    let bad = SynthSpec { k: 8, planted_depth: 2, ..SynthSpec::default() };
    assert!(generate(&bad).unwrap_err().to_string().contains("planted_depth"));
}
