//! Cascade of gradient-boosted regression trees over pixel-difference
//! features.
//!
//! Shapes are tracked in the unit frame of the face box: `(0, 0)` is the
//! box's top-left corner and `(1, 1)` its bottom-right. Each cascade stage
//! aligns the mean shape to the current estimate, reads a fixed pool of
//! intensities indexed relative to that alignment, and adds the summed
//! outputs of its trees mapped back through the alignment.

mod format;
mod train;

use crate::error::{Error, Result};
use crate::geometry::{procrustes_linear, BoundingBox, LinearPart, Point2, Shape68, NUM_LANDMARKS};
use crate::raster::GrayImage;
use crate::rng::Rng;

pub use format::{deserialize, read_sidecar, serialize, write_sidecar, FORMAT_VERSION, MAGIC};
pub use train::{compute_mean_shape, train, StageReport};

/// Values per leaf: x and y for every landmark.
pub const SHAPE_DIM: usize = 2 * NUM_LANDMARKS;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    /// Number of cascade stages.
    pub cascade_depth: usize,
    /// Trees fitted per stage.
    pub trees_per_cascade: usize,
    pub tree_depth: usize,
    pub min_samples_per_leaf: usize,
    /// Pixel locations sampled per stage.
    pub feature_pool_size: usize,
    /// Initial shapes generated per training image.
    pub oversampling: usize,
    pub shrinkage: f64,
    /// Scale of the prior favouring nearby feature pairs.
    pub lambda: f64,
    /// Candidate splits evaluated per node.
    pub num_test_splits: usize,
    /// Margin around the mean shape's extent when sampling the pool.
    pub padding: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            cascade_depth: 10,
            trees_per_cascade: 500,
            tree_depth: 4,
            min_samples_per_leaf: 5,
            feature_pool_size: 400,
            oversampling: 20,
            shrinkage: 0.1,
            lambda: 0.1,
            num_test_splits: 20,
            padding: 0.1,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("cascade_depth", self.cascade_depth),
            ("trees_per_cascade", self.trees_per_cascade),
            ("tree_depth", self.tree_depth),
            ("min_samples_per_leaf", self.min_samples_per_leaf),
            ("feature_pool_size", self.feature_pool_size),
            ("oversampling", self.oversampling),
            ("num_test_splits", self.num_test_splits),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidParams(format!("{name} must be at least 1")));
        }
        if self.tree_depth > format::MAX_TREE_DEPTH as usize {
            return Err(Error::InvalidParams(format!(
                "tree_depth {} exceeds {}",
                self.tree_depth,
                format::MAX_TREE_DEPTH
            )));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "shrinkage {} outside (0, 1]",
                self.shrinkage
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParams(format!("lambda {} must be positive", self.lambda)));
        }
        if !(self.padding >= 0.0 && self.padding.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "padding {} must be non-negative",
                self.padding
            )));
        }
        Ok(())
    }

    /// `key=value` lines, in field order.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        vec![
            ("cascade_depth", self.cascade_depth.to_string()),
            ("trees_per_cascade", self.trees_per_cascade.to_string()),
            ("tree_depth", self.tree_depth.to_string()),
            ("min_samples_per_leaf", self.min_samples_per_leaf.to_string()),
            ("feature_pool_size", self.feature_pool_size.to_string()),
            ("oversampling", self.oversampling.to_string()),
            ("shrinkage", self.shrinkage.to_string()),
            ("lambda", self.lambda.to_string()),
            ("num_test_splits", self.num_test_splits.to_string()),
            ("padding", self.padding.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Sets one field by name; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidParams(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "cascade_depth" => self.cascade_depth = num(key, value)?,
            "trees_per_cascade" => self.trees_per_cascade = num(key, value)?,
            "tree_depth" => self.tree_depth = num(key, value)?,
            "min_samples_per_leaf" => self.min_samples_per_leaf = num(key, value)?,
            "feature_pool_size" => self.feature_pool_size = num(key, value)?,
            "oversampling" => self.oversampling = num(key, value)?,
            "shrinkage" => self.shrinkage = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "num_test_splits" => self.num_test_splits = num(key, value)?,
            "padding" => self.padding = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::InvalidParams(format!("unknown parameter {other:?}"))),
        }
        Ok(())
    }
}

/// A pool location expressed relative to its nearest mean-shape landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePoint {
    pub anchor: usize,
    /// Offset from the anchor in the mean shape's unit frame.
    pub offset: Point2,
}

/// Internal node: compares `f[u] − f[v]` against `threshold`; greater goes
/// left (child `2i + 1`), otherwise right (`2i + 2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub u: u32,
    pub v: u32,
    pub threshold: f64,
}

impl Split {
    /// Routes every sample left.
    pub const PASS_LEFT: Split = Split {
        u: 0,
        v: 0,
        threshold: -1.0,
    };
}

/// Complete binary tree: `2^depth − 1` splits in breadth-first order and
/// `2^depth` leaves of `SHAPE_DIM` values each (shrinkage included),
/// expressed in the mean shape's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub depth: u32,
    pub splits: Vec<Split>,
    pub leaves: Vec<f32>,
}

impl RegressionTree {
    #[inline]
    pub fn leaf_index(&self, features: &[f32]) -> usize {
        let n = self.splits.len();
        let mut i = 0;
        while i < n {
            let s = &self.splits[i];
            let diff = (features[s.u as usize] - features[s.v as usize]) as f64;
            i = if diff > s.threshold { 2 * i + 1 } else { 2 * i + 2 };
        }
        i - n
    }

    #[inline]
    pub fn leaf(&self, index: usize) -> &[f32] {
        &self.leaves[index * SHAPE_DIM..(index + 1) * SHAPE_DIM]
    }

    pub fn num_leaves(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    pub pool: Vec<FeaturePoint>,
    pub trees: Vec<RegressionTree>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapePredictorModel {
    /// Mean training shape in the box's unit frame.
    pub mean_shape: Shape68,
    pub cascades: Vec<Cascade>,
    /// Parameters used for training, when known (they live in the
    /// sidecar, not the binary).
    pub params: Option<TrainParams>,
    pub format_version: u32,
}

impl ShapePredictorModel {
    /// A model without stages: predicts the mean shape fitted to the box.
    pub fn mean_only(mean_shape: Shape68) -> Self {
        Self {
            mean_shape,
            cascades: Vec::new(),
            params: None,
            format_version: FORMAT_VERSION,
        }
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        if self.mean_shape.iter().any(|p| !p.is_finite()) {
            return bad("mean shape is not finite".into());
        }
        for (c, cascade) in self.cascades.iter().enumerate() {
            let p = cascade.pool.len();
            if p == 0 {
                return bad(format!("cascade {c}: empty feature pool"));
            }
            for f in &cascade.pool {
                if f.anchor >= NUM_LANDMARKS || !f.offset.is_finite() {
                    return bad(format!("cascade {c}: invalid feature point {f:?}"));
                }
            }
            for (t, tree) in cascade.trees.iter().enumerate() {
                if tree.depth == 0 || tree.depth > format::MAX_TREE_DEPTH {
                    return bad(format!("cascade {c} tree {t}: depth {}", tree.depth));
                }
                let leaves = 1usize << tree.depth;
                if tree.splits.len() != leaves - 1 || tree.leaves.len() != leaves * SHAPE_DIM {
                    return bad(format!("cascade {c} tree {t}: node counts do not match depth"));
                }
                for s in &tree.splits {
                    if s.u as usize >= p || s.v as usize >= p || !s.threshold.is_finite() {
                        return bad(format!("cascade {c} tree {t}: invalid split {s:?}"));
                    }
                }
                if tree.leaves.iter().any(|v| !v.is_finite()) {
                    return bad(format!("cascade {c} tree {t}: non-finite leaf value"));
                }
            }
        }
        Ok(())
    }

    /// Mean shape mapped into `bbox`.
    pub fn initial_shape(&self, bbox: &BoundingBox) -> Shape68 {
        self.mean_shape.map(|p| bbox.from_unit(p))
    }

    /// Landmarks for the face in `bbox`.
    pub fn predict(&self, image: &GrayImage, bbox: &BoundingBox) -> Result<Shape68> {
        bbox.validate()?;
        let mut current = self.mean_shape;
        let mut features = Vec::new();
        let mut delta = [0f64; SHAPE_DIM];
        for cascade in &self.cascades {
            let align = align_to_mean(&self.mean_shape, &current);
            extract_features_into(image, bbox, &current, &align, &cascade.pool, &mut features);
            delta.fill(0.0);
            for tree in &cascade.trees {
                let leaf = tree.leaf(tree.leaf_index(&features));
                for (d, v) in delta.iter_mut().zip(leaf) {
                    *d += *v as f64;
                }
            }
            apply_stage_delta(&mut current, &align, &delta);
        }
        Ok(current.map(|p| bbox.from_unit(p)))
    }
}

/// Free-standing form of [`ShapePredictorModel::predict`].
pub fn predict(model: &ShapePredictorModel, image: &GrayImage, bbox: &BoundingBox) -> Result<Shape68> {
    model.predict(image, bbox)
}

/// Rotation/scale part of the least-squares similarity from the mean shape
/// to `current`. Falls back to identity if `current` has collapsed.
pub(crate) fn align_to_mean(mean: &Shape68, current: &Shape68) -> LinearPart {
    match procrustes_linear(mean.points(), current.points()) {
        Ok((lin, _)) if lin.a.is_finite() && lin.b.is_finite() && lin.scale() > 0.0 => lin,
        _ => LinearPart::IDENTITY,
    }
}

pub(crate) fn apply_stage_delta(current: &mut Shape68, align: &LinearPart, delta: &[f64; SHAPE_DIM]) {
    for i in 0..NUM_LANDMARKS {
        let d = align.apply(Point2::new(delta[2 * i], delta[2 * i + 1]));
        current[i] += d;
    }
}

pub(crate) fn extract_features_into(
    image: &GrayImage,
    bbox: &BoundingBox,
    current: &Shape68,
    align: &LinearPart,
    pool: &[FeaturePoint],
    out: &mut Vec<f32>,
) {
    out.clear();
    out.extend(pool.iter().map(|f| {
        let loc = current[f.anchor] + align.apply(f.offset);
        let img = bbox.from_unit(loc);
        image.sample_clamped(img.x, img.y) as f32
    }));
}

/// Pool intensities for a unit-frame estimate `current` of the face in
/// `bbox`. Each location is `current[anchor] + A·offset`, with `A` the
/// rotation/scale of the mean→current alignment, sampled nearest-neighbour
/// and clamped to the image.
pub fn extract_features(
    image: &GrayImage,
    bbox: &BoundingBox,
    current: &Shape68,
    pool: &[FeaturePoint],
    mean_shape: &Shape68,
) -> Vec<f32> {
    let align = align_to_mean(mean_shape, current);
    let mut out = Vec::with_capacity(pool.len());
    extract_features_into(image, bbox, current, &align, pool, &mut out);
    out
}

/// `count` locations uniform over the mean shape's extent grown by
/// `padding`, each attached to its nearest landmark (lowest index on ties).
pub fn sample_feature_pool(
    mean_shape: &Shape68,
    count: usize,
    padding: f64,
    rng: &mut Rng,
) -> Vec<FeaturePoint> {
    let (lo, hi) = mean_shape.extent();
    (0..count)
        .map(|_| {
            let loc = Point2::new(
                rng.uniform(lo.x - padding, hi.x + padding),
                rng.uniform(lo.y - padding, hi.y + padding),
            );
            anchor_point(mean_shape, loc)
        })
        .collect()
}

pub fn anchor_point(mean_shape: &Shape68, loc: Point2) -> FeaturePoint {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in mean_shape.iter().enumerate() {
        let d = (loc - *p).norm_sq();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    FeaturePoint {
        anchor: best,
        offset: loc - mean_shape[best],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::canonical_template;

    fn unit_mean() -> Shape68 {
        let t = canonical_template();
        let (lo, hi) = t.extent();
        t.map(|p| Point2::new((p.x - lo.x) / (hi.x - lo.x), (p.y - lo.y) / (hi.y - lo.y)))
    }

    #[test]
    fn defaults_validate() {
        TrainParams::default().validate().unwrap();
        for bad in [
            TrainParams { shrinkage: 0.0, ..TrainParams::default() },
            TrainParams { tree_depth: 0, ..TrainParams::default() },
            TrainParams { lambda: -1.0, ..TrainParams::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn key_values_round_trip() {
        let p = TrainParams { shrinkage: 0.25, seed: 99, ..TrainParams::default() };
        let mut q = TrainParams::default();
        for (k, v) in p.to_key_values() {
            q.set(k, &v).unwrap();
        }
        assert_eq!(p, q);
        assert!(q.set("bogus", "1").is_err());
    }

    #[test]
    fn pool_point_on_landmark() {
        let mean = unit_mean();
        let f = anchor_point(&mean, mean[30]);
        assert_eq!(f.anchor, 30);
        assert_eq!(f.offset, Point2::ZERO);
    }

    #[test]
    fn pool_is_deterministic_and_bounded() {
        let mean = unit_mean();
        let a = sample_feature_pool(&mean, 10_000, 0.0, &mut Rng::new(4));
        let b = sample_feature_pool(&mean, 10_000, 0.0, &mut Rng::new(4));
        assert_eq!(a, b);
        let (lo, hi) = mean.extent();
        let locs: Vec<Point2> = a.iter().map(|f| mean[f.anchor] + f.offset).collect();
        let min_x = locs.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let max_x = locs.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = locs.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_y = locs.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        for (got, want) in [(min_x, lo.x), (max_x, hi.x), (min_y, lo.y), (max_y, hi.y)] {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
        assert!(locs
            .iter()
            .all(|p| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y));
    }

    #[test]
    fn constant_image_constant_features() {
        let mean = unit_mean();
        let pool = sample_feature_pool(&mean, 50, 0.3, &mut Rng::new(1));
        let img = GrayImage::filled(64, 48, 137);
        let bbox = BoundingBox::new(5.0, 4.0, 40.0, 30.0).unwrap();
        let f = extract_features(&img, &bbox, &mean, &pool, &mean);
        assert!(f.iter().all(|v| *v == 137.0));
    }

    #[test]
    fn outside_locations_clamp_to_border() {
        let mean = unit_mean();
        let pool = vec![FeaturePoint {
            anchor: 0,
            offset: Point2::new(-50.0, -50.0),
        }];
        let img = GrayImage::from_fn(10, 10, |x, y| (x + 10 * y) as u8);
        let bbox = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(extract_features(&img, &bbox, &mean, &pool, &mean), vec![0.0]);
    }

    #[test]
    fn mean_only_model_returns_initialization() {
        let mean = unit_mean();
        let model = ShapePredictorModel::mean_only(mean);
        let img = GrayImage::filled(100, 100, 0);
        let bbox = BoundingBox::new(10.0, 20.0, 50.0, 60.0).unwrap();
        assert_eq!(model.predict(&img, &bbox).unwrap(), model.initial_shape(&bbox));
        let bad = BoundingBox {
            left: 0.0,
            top: 0.0,
            width: 0.0,
            height: 4.0,
        };
        assert!(matches!(model.predict(&img, &bad), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn leaf_routing() {
        let tree = RegressionTree {
            depth: 2,
            splits: vec![
                Split { u: 0, v: 1, threshold: 0.0 },
                Split { u: 2, v: 0, threshold: 5.0 },
                Split::PASS_LEFT,
            ],
            leaves: vec![0.0; 4 * SHAPE_DIM],
        };
        assert_eq!(tree.leaf_index(&[3.0, 1.0, 20.0]), 0);
        assert_eq!(tree.leaf_index(&[3.0, 1.0, 4.0]), 1);
        assert_eq!(tree.leaf_index(&[1.0, 3.0, 0.0]), 2);
    }
}
