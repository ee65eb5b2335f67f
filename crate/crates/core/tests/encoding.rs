use mambular::data::{generate_synthetic_ordering_dataset, Feature, FeatureValues, TabularDataset, Task};
use mambular::encoding::{
    fit_tree_bins, ple_encode, BinBoundaries, PleConfig, Preprocessor, Slot, TreeCriterion,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod oracles;
use oracles::exhaustive_tree_thresholds;

fn cfg(max_bins: usize, min_leaf: usize, criterion: TreeCriterion) -> PleConfig {
    PleConfig {
        max_bins,
        min_leaf,
        criterion,
    }
}

#[test]
fn tree_matches_exhaustive_oracle_for_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for case in 0..40 {
        let n = rng.gen_range(8..=256);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (3.0 * v).sin() + 0.3 * rng.gen_range(-1.0..1.0))
            .collect();
        let max_bins = rng.gen_range(2..=12);
        let min_leaf = rng.gen_range(1..=8);
        let got = fit_tree_bins(&x, &y, &cfg(max_bins, min_leaf, TreeCriterion::SquaredError))
            .unwrap();
        let want = exhaustive_tree_thresholds(&x, &y, max_bins, min_leaf, false);
        assert_eq!(got.interior(), want.as_slice(), "case {case}");
    }
}

#[test]
fn tree_matches_exhaustive_oracle_for_classification() {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    for case in 0..40 {
        let n = rng.gen_range(8..=256);
        // Rounded features produce ties between rows.
        let x: Vec<f64> = (0..n).map(|_| (rng.gen_range(-1.0..1.0) * 20.0_f64).round() / 20.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| f64::from(u8::from(rng.gen_bool(if v > 0.2 { 0.85 } else { 0.25 }))))
            .collect();
        let max_bins = rng.gen_range(2..=10);
        let min_leaf = rng.gen_range(1..=6);
        let got = fit_tree_bins(&x, &y, &cfg(max_bins, min_leaf, TreeCriterion::Gini)).unwrap();
        let want = exhaustive_tree_thresholds(&x, &y, max_bins, min_leaf, true);
        assert_eq!(got.interior(), want.as_slice(), "case {case}");
    }
}

#[test]
fn min_leaf_blocks_small_children() {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let y = x.clone();
    let b = fit_tree_bins(&x, &y, &cfg(8, 6, TreeCriterion::SquaredError)).unwrap();
    assert!(b.interior().is_empty());
    let b = fit_tree_bins(&x, &y, &cfg(8, 5, TreeCriterion::SquaredError)).unwrap();
    assert_eq!(b.interior(), &[4.5]);
}

#[test]
fn edges_span_the_training_range() {
    let x = [0.3, -0.7, 0.9, 0.1];
    let b = fit_tree_bins(&x, &[1.0, 0.0, 1.0, 0.0], &cfg(4, 1, TreeCriterion::Gini)).unwrap();
    assert_eq!(b.edges()[0], -0.7);
    assert_eq!(*b.edges().last().unwrap(), 0.9);
}

fn fitted_bins(seed: u64) -> BinBoundaries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|v| v * v + 0.1 * rng.gen_range(-1.0..1.0)).collect();
    fit_tree_bins(&x, &y, &cfg(16, 4, TreeCriterion::SquaredError)).unwrap()
}

#[test]
fn ple_is_bounded_and_monotone_on_a_grid() {
    for seed in 0..5 {
        let bins = fitted_bins(seed);
        let width = 16;
        let grid: Vec<f64> = (0..1000).map(|i| -1.2 + 2.4 * i as f64 / 999.0).collect();
        let mut prev = ple_encode(grid[0], &bins, width);
        for &x in &grid {
            let e = ple_encode(x, &bins, width);
            assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
            for (a, b) in prev.iter().zip(&e) {
                assert!(b >= a, "not monotone at {x}");
            }
            prev = e;
        }
    }
}

#[test]
fn ple_is_one_hot_ladder_at_edges() {
    let bins = BinBoundaries::new(vec![-1.0, -0.2, 0.4, 1.0]).unwrap();
    assert_eq!(ple_encode(-1.0, &bins, 5), vec![0.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(ple_encode(-0.2, &bins, 5), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(ple_encode(0.4, &bins, 5), vec![1.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(ple_encode(1.0, &bins, 5), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(ple_encode(5.0, &bins, 5), vec![1.0, 1.0, 1.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn ple_components_stay_in_unit_interval(
        seed in 0u64..50,
        x in -10.0f64..10.0,
    ) {
        let bins = fitted_bins(seed);
        let e = ple_encode(x, &bins, 20);
        prop_assert!(e.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(e[bins.n_bins()..].iter().all(|&v| v == 0.0));
        // Saturated bins form a prefix.
        let first_unsaturated = e.iter().position(|&v| v < 1.0).unwrap_or(e.len());
        prop_assert!(e[first_unsaturated..].iter().skip(1).all(|&v| v == 0.0));
    }
}

fn mixed_dataset() -> TabularDataset {
    let features = vec![
        Feature {
            name: "a".into(),
            values: FeatureValues::Numeric(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
        },
        Feature {
            name: "colour".into(),
            values: FeatureValues::Categorical(
                ["red", "blue", "red", "green", "blue", "red"].map(String::from).to_vec(),
            ),
        },
        Feature {
            name: "b".into(),
            values: FeatureValues::Numeric(vec![10.0, 8.0, 6.0, 4.0, 2.0, 0.0]),
        },
    ];
    TabularDataset::new(features, "y", vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], Task::Regression).unwrap()
}

#[test]
fn preprocessor_keeps_sequence_slots_and_shapes() {
    let data = mixed_dataset();
    let pre = Preprocessor::fit(&data, &cfg(4, 1, TreeCriterion::SquaredError)).unwrap();
    assert_eq!(pre.slots, vec![Slot::Numeric(0), Slot::Categorical(0), Slot::Numeric(1)]);
    let enc = pre.transform(&data).unwrap();
    assert_eq!(enc.numeric.shape(), &[6, 2, 4]);
    assert_eq!(enc.categorical.len(), 6);
    // Standardized target.
    let mean: f64 = enc.target.iter().sum::<f64>() / 6.0;
    assert!(mean.abs() < 1e-12);
    assert!(enc.numeric.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn unseen_category_maps_to_unknown() {
    let data = mixed_dataset();
    let pre = Preprocessor::fit(&data, &cfg(4, 1, TreeCriterion::SquaredError)).unwrap();
    let mut other = data.subset(&[0, 1]);
    other.features[1].values = FeatureValues::Categorical(vec!["purple".into(), "red".into()]);
    let enc = pre.transform(&other).unwrap();
    assert_eq!(enc.categorical[0], 0);
    assert_ne!(enc.categorical[1], 0);
}

#[test]
fn transform_needs_every_fitted_feature() {
    let data = mixed_dataset();
    let pre = Preprocessor::fit(&data, &cfg(4, 1, TreeCriterion::SquaredError)).unwrap();
    let mut missing = data.clone();
    missing.features.remove(2);
    assert!(pre.transform(&missing).is_err());
}

#[test]
fn out_of_range_values_saturate() {
    let data = mixed_dataset();
    let pre = Preprocessor::fit(&data, &cfg(4, 1, TreeCriterion::SquaredError)).unwrap();
    let mut wide = data.subset(&[0, 1]);
    wide.features[0].values = FeatureValues::Numeric(vec![-100.0, 100.0]);
    let enc = pre.transform(&wide).unwrap();
    let w = 4;
    let low = &enc.numeric.data()[0..w];
    let high = &enc.numeric.data()[2 * w..3 * w];
    assert!(low.iter().all(|&v| v == 0.0));
    let n_bins = pre.bins[0].n_bins();
    assert!(high[..n_bins].iter().all(|&v| v == 1.0));
}

#[test]
fn synthetic_preprocessing_uses_the_default_width() {
    let (data, _) = generate_synthetic_ordering_dataset(3);
    let pre = Preprocessor::fit(&data, &PleConfig::new(64, TreeCriterion::SquaredError)).unwrap();
    assert_eq!(pre.n_numeric(), 5);
    assert_eq!(pre.n_categorical(), 5);
    assert!(pre.bins.iter().all(|b| b.n_bins() <= 64 && b.n_bins() > 1));
    assert_eq!(pre.vocab_sizes(), vec![5; 5]);
}
