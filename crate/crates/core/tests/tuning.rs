use std::collections::BTreeMap;
use std::path::PathBuf;

use facelm::dataset::synth::{canonical_template, synthesize_corpus, SynthConfig};
use facelm::dataset::*;
use facelm::geometry::{BoundingBox, Point2};
use facelm::raster::GrayImage;
use facelm::regressor::TrainParams;
use facelm::tuning::*;

/// Images whose ground truth, in every box, is one dyadic unit-frame shape,
/// so the mean shape and every residual are exact and every model predicts
/// the ground truth exactly.
fn fixed_point_images(n: usize) -> Vec<LoadedImage> {
    let t = canonical_template();
    let (lo, hi) = t.extent();
    let unit = t.map(|p| {
        let q = |v: f64| (v * 64.0).round() / 64.0;
        Point2::new(q((p.x - lo.x) / (hi.x - lo.x)), q((p.y - lo.y) / (hi.y - lo.y)))
    });
    let bbox = BoundingBox::new(16.0, 16.0, 64.0, 64.0).unwrap();
    (0..n)
        .map(|k| LoadedImage {
            record: AnnotatedImage {
                image_path: PathBuf::from(format!("fp{k}.png")),
                size: Some((96, 96)),
                bbox,
                annotations: BTreeMap::new(),
                ground_truth: Some(unit.map(|p| bbox.from_unit(p))),
                meta: SubjectMeta {
                    subject_id: format!("s{k}"),
                    cohort: Cohort::Control,
                    expression: "rest".into(),
                    demographics: Demographics::default(),
                },
            },
            pixels: GrayImage::from_fn(96, 96, |x, y| ((x * 7 + y * 13 + k as u32 * 29) % 251) as u8),
        })
        .collect()
}

fn base() -> TrainParams {
    TrainParams {
        cascade_depth: 2,
        oversampling: 2,
        num_test_splits: 4,
        ..TrainParams::default()
    }
}

#[test]
fn exact_ties_fall_to_lexicographic_order() {
    let train = fixed_point_images(4);
    let val = fixed_point_images(2);
    let grid = GridSpec {
        trees_per_cascade: vec![5],
        tree_depth: vec![2],
        // listed high-to-low so index order and lexicographic order disagree
        min_samples_per_leaf: vec![6, 5],
        feature_pool_size: vec![20],
        base: base(),
        seed: 3,
    };
    let result = grid_search(&train, &val, &grid, &|_| {}).unwrap();
    assert_eq!(result.records.len(), 2);
    assert_eq!(result.records[0].nrmse, 0.0);
    assert_eq!(result.records[1].nrmse, 0.0);
    assert_eq!(result.records[0].model_bytes, result.records[1].model_bytes);
    assert_eq!(result.winner().params.min_samples_per_leaf, 5);
    assert_eq!(result.winner, 1);
}

#[test]
fn single_permutation_grid() {
    let images = synthesize_corpus(&SynthConfig::new(8, 1, 0.0, 4)).unwrap();
    let params = TrainParams {
        trees_per_cascade: 4,
        tree_depth: 2,
        feature_pool_size: 30,
        ..base()
    };
    let result = grid_search(&images[..6], &images[6..], &GridSpec::single(params), &|_| {}).unwrap();
    assert_eq!(result.records.len(), 1);
    assert_eq!(result.winner, 0);
    assert_eq!(result.winner().params, params);
}

#[test]
fn search_is_reproducible_and_winner_is_minimal() {
    let images = synthesize_corpus(&SynthConfig::new(10, 1, 0.4, 6)).unwrap();
    let grid = GridSpec {
        trees_per_cascade: vec![3, 6],
        tree_depth: vec![1, 3],
        min_samples_per_leaf: vec![1, 4],
        feature_pool_size: vec![20, 50],
        base: base(),
        seed: 11,
    };
    let seen = std::sync::atomic::AtomicUsize::new(0);
    let run = || {
        grid_search(&images[..7], &images[7..], &grid, &|_| {
            seen.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        })
        .unwrap()
    };
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(run);
    let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(run);
    assert_eq!(seen.into_inner(), 32);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.records.len(), grid.len());
    for (i, r) in a.records.iter().enumerate() {
        assert_eq!(r.index, i);
        assert_eq!(r.params, grid.permutation(i));
        assert_eq!(r.params.seed, 11 + i as u64);
        assert!(a.winner().nrmse <= r.nrmse);
    }
}

#[test]
fn failing_permutation_aborts_with_its_index() {
    let images = synthesize_corpus(&SynthConfig::new(4, 1, 0.0, 1)).unwrap();
    let mut val = images[3..].to_vec();
    val[0].record.ground_truth = None;
    let grid = GridSpec::single(base());
    assert!(matches!(
        grid_search(&images[..3], &val, &grid, &|_| {}),
        Err(facelm::Error::MissingGroundTruth(_))
    ));
}

#[test]
fn grid_text_round_trip() {
    let g = GridSpec::default();
    assert_eq!(GridSpec::parse(&g.to_text()).unwrap(), g);
    assert!(GridSpec::parse("tree_depth=2\ntree_depth=3\n").is_err());
    assert!(GridSpec::parse("tree_depth=\n").is_err());
    assert!(GridSpec::parse("bogus=1\n").is_err());
}
