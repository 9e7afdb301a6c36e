use std::time::Instant;

use rayon::prelude::*;

use super::{
    align_to_mean, apply_stage_delta, extract_features_into, sample_feature_pool, Cascade,
    RegressionTree, ShapePredictorModel, Split, TrainParams, FORMAT_VERSION, SHAPE_DIM,
};
use crate::dataset::LoadedImage;
use crate::error::{Error, Result};
use crate::evaluation::nrmse;
use crate::geometry::{BoundingBox, LinearPart, Point2, Shape68, NUM_LANDMARKS};
use crate::rng::Rng;

/// Samples per work unit when scoring split candidates. Fixed so that the
/// order of floating-point reductions does not depend on the thread count.
const SCORE_CHUNK: usize = 1024;

/// Emitted after every cascade stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    /// 1-based stage number.
    pub stage: usize,
    pub stages: usize,
    /// Mean training-set NRMSE (percent) after this stage.
    pub train_nrmse: f64,
    /// Mean training-set NRMSE before the first stage.
    pub initial_nrmse: f64,
    pub elapsed_seconds: f64,
}

/// Coordinate-wise mean of the ground truths, each mapped into the unit
/// frame of its box.
pub fn compute_mean_shape(examples: &[(Shape68, BoundingBox)]) -> Result<Shape68> {
    let normalized: Vec<Shape68> = examples
        .iter()
        .map(|(s, b)| s.map(|p| b.to_unit(p)))
        .collect();
    Shape68::mean(&normalized).ok_or(Error::EmptyDataset)
}

struct Workset<'a> {
    images: &'a [LoadedImage],
    gts: Vec<Shape68>,
    targets: Vec<Shape68>,
    /// Image index of each sample.
    owner: Vec<usize>,
    current: Vec<Shape68>,
}

impl Workset<'_> {
    fn mean_nrmse(&self) -> f64 {
        let errors: Vec<f64> = (0..self.current.len())
            .into_par_iter()
            .map(|s| {
                let i = self.owner[s];
                let b = &self.images[i].record.bbox;
                let pred = self.current[s].map(|p| b.from_unit(p));
                nrmse(&pred, &self.gts[i]).unwrap_or(f64::NAN)
            })
            .collect();
        errors.iter().sum::<f64>() / errors.len() as f64
    }
}

/// Fits a cascade of gradient-boosted regression trees.
///
/// Every training image contributes `oversampling` samples: the mean shape
/// fitted to its box, and ground truths of other images (in their own unit
/// frame) placed in this image's box. Stage after stage, a fresh feature
/// pool is drawn, residuals are expressed in the mean shape's frame, and
/// trees are boosted on them with shrinkage.
pub fn train(
    images: &[LoadedImage],
    params: &TrainParams,
    progress: &mut dyn FnMut(&StageReport),
) -> Result<ShapePredictorModel> {
    params.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut gts = Vec::with_capacity(images.len());
    for img in images {
        let gt = img
            .record
            .ground_truth
            .ok_or_else(|| Error::MissingGroundTruth(img.id()))?;
        img.record.bbox.validate()?;
        gts.push(gt);
    }
    let examples: Vec<_> = gts
        .iter()
        .zip(images)
        .map(|(g, img)| (*g, img.record.bbox))
        .collect();
    let mean = compute_mean_shape(&examples)?;
    let targets: Vec<Shape68> = examples.iter().map(|(s, b)| s.map(|p| b.to_unit(p))).collect();

    let mut rng = Rng::new(params.seed);
    let n_images = images.len();
    let mut owner = Vec::with_capacity(n_images * params.oversampling);
    let mut current = Vec::with_capacity(n_images * params.oversampling);
    for i in 0..n_images {
        for r in 0..params.oversampling {
            owner.push(i);
            if r == 0 || n_images == 1 {
                current.push(mean);
            } else {
                let mut j = rng.below(n_images - 1);
                if j >= i {
                    j += 1;
                }
                current.push(targets[j]);
            }
        }
    }
    let mut work = Workset {
        images,
        gts,
        targets,
        owner,
        current,
    };

    let start = Instant::now();
    let initial_nrmse = work.mean_nrmse();
    let mut previous = initial_nrmse;
    let mut cascades = Vec::with_capacity(params.cascade_depth);
    for stage in 0..params.cascade_depth {
        let cascade = fit_stage(&mut work, &mean, params, &mut rng);
        cascades.push(cascade);

        let now = work.mean_nrmse();
        if !(now <= previous + 1e-12) {
            return Err(Error::TrainingDiverged(format!(
                "mean training NRMSE rose from {previous:.12} to {now:.12} at stage {}",
                stage + 1
            )));
        }
        previous = now;
        progress(&StageReport {
            stage: stage + 1,
            stages: params.cascade_depth,
            train_nrmse: now,
            initial_nrmse,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok(ShapePredictorModel {
        mean_shape: mean,
        cascades,
        params: Some(*params),
        format_version: FORMAT_VERSION,
    })
}

fn fit_stage(work: &mut Workset, mean: &Shape68, params: &TrainParams, rng: &mut Rng) -> Cascade {
    let n = work.current.len();
    let p = params.feature_pool_size;
    let pool = sample_feature_pool(mean, p, params.padding, rng);
    let pool_pos: Vec<Point2> = pool.iter().map(|f| mean[f.anchor] + f.offset).collect();

    let aligns: Vec<LinearPart> = work
        .current
        .par_iter()
        .map(|c| align_to_mean(mean, c))
        .collect();

    let mut features = vec![0f32; n * p];
    features
        .par_chunks_mut(p)
        .enumerate()
        .for_each_init(Vec::new, |buf, (s, out)| {
            let img = &work.images[work.owner[s]];
            extract_features_into(
                &img.pixels,
                &img.record.bbox,
                &work.current[s],
                &aligns[s],
                &pool,
                buf,
            );
            out.copy_from_slice(buf);
        });

    let mut residuals = vec![0f64; n * SHAPE_DIM];
    residuals
        .par_chunks_mut(SHAPE_DIM)
        .enumerate()
        .for_each(|(s, r)| {
            let inv = aligns[s].inverse();
            let target = &work.targets[work.owner[s]];
            for i in 0..NUM_LANDMARKS {
                let d = inv.apply(target[i] - work.current[s][i]);
                r[2 * i] = d.x;
                r[2 * i + 1] = d.y;
            }
        });

    let mut stage_delta = vec![0f64; n * SHAPE_DIM];
    let mut trees = Vec::with_capacity(params.trees_per_cascade);
    for _ in 0..params.trees_per_cascade {
        let tree = fit_tree(&features, p, &residuals, &pool_pos, params, rng);
        residuals
            .par_chunks_mut(SHAPE_DIM)
            .zip(stage_delta.par_chunks_mut(SHAPE_DIM))
            .enumerate()
            .for_each(|(s, (r, d))| {
                let leaf = tree.leaf(tree.leaf_index(&features[s * p..(s + 1) * p]));
                for k in 0..SHAPE_DIM {
                    let v = leaf[k] as f64;
                    r[k] -= v;
                    d[k] += v;
                }
            });
        trees.push(tree);
    }

    work.current
        .par_iter_mut()
        .enumerate()
        .for_each(|(s, cur)| {
            let delta: &[f64; SHAPE_DIM] = stage_delta[s * SHAPE_DIM..(s + 1) * SHAPE_DIM]
                .try_into()
                .expect("chunk length");
            apply_stage_delta(cur, &aligns[s], delta);
        });

    Cascade { pool, trees }
}

fn fit_tree(
    features: &[f32],
    p: usize,
    residuals: &[f64],
    pool_pos: &[Point2],
    params: &TrainParams,
    rng: &mut Rng,
) -> RegressionTree {
    let n = residuals.len() / SHAPE_DIM;
    let n_splits = (1usize << params.tree_depth) - 1;
    let mut node_samples: Vec<Vec<u32>> = vec![Vec::new(); 2 * n_splits + 1];
    node_samples[0] = (0..n as u32).collect();
    let mut splits = Vec::with_capacity(n_splits);

    for node in 0..n_splits {
        let samples = std::mem::take(&mut node_samples[node]);
        let split = choose_split(&samples, features, p, residuals, pool_pos, params, rng)
            .unwrap_or(Split::PASS_LEFT);
        let (left, right): (Vec<u32>, Vec<u32>) = samples.iter().partition(|&&s| {
            let f = &features[s as usize * p..];
            ((f[split.u as usize] - f[split.v as usize]) as f64) > split.threshold
        });
        node_samples[2 * node + 1] = left;
        node_samples[2 * node + 2] = right;
        splits.push(split);
    }

    let mut leaves = vec![0f32; (n_splits + 1) * SHAPE_DIM];
    for (leaf, out) in leaves.chunks_mut(SHAPE_DIM).enumerate() {
        let samples = &node_samples[n_splits + leaf];
        if samples.is_empty() {
            continue;
        }
        let mut sum = [0f64; SHAPE_DIM];
        for &s in samples {
            let r = &residuals[s as usize * SHAPE_DIM..(s as usize + 1) * SHAPE_DIM];
            for k in 0..SHAPE_DIM {
                sum[k] += r[k];
            }
        }
        let scale = params.shrinkage / samples.len() as f64;
        for k in 0..SHAPE_DIM {
            out[k] = (sum[k] * scale) as f32;
        }
    }

    RegressionTree {
        depth: params.tree_depth as u32,
        splits,
        leaves,
    }
}

/// Draws `num_test_splits` random candidates and keeps the one with the
/// largest squared-error reduction, or `None` if every candidate leaves a
/// child with fewer than `min_samples_per_leaf` samples.
fn choose_split(
    samples: &[u32],
    features: &[f32],
    p: usize,
    residuals: &[f64],
    pool_pos: &[Point2],
    params: &TrainParams,
    rng: &mut Rng,
) -> Option<Split> {
    let m = params.min_samples_per_leaf;
    if samples.len() < 2 * m || p < 2 {
        return None;
    }
    let n_cand = params.num_test_splits;

    let mut pairs = Vec::with_capacity(n_cand);
    while pairs.len() < n_cand {
        let u = rng.below(p);
        let v = rng.below(p);
        if u == v {
            continue;
        }
        let accept = (-pool_pos[u].distance(&pool_pos[v]) / params.lambda).exp();
        if rng.unit() < accept {
            pairs.push((u, v));
        }
    }
    let feature_diff = |s: u32, u: usize, v: usize| -> f64 {
        let f = &features[s as usize * p..(s as usize + 1) * p];
        (f[u] - f[v]) as f64
    };
    let candidates: Vec<Split> = pairs
        .iter()
        .map(|&(u, v)| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &s in samples {
                let d = feature_diff(s, u, v);
                lo = lo.min(d);
                hi = hi.max(d);
            }
            Split {
                u: u as u32,
                v: v as u32,
                threshold: rng.uniform(lo, hi),
            }
        })
        .collect();

    // per-candidate left sums and counts, reduced chunk by chunk in order
    let partials: Vec<(Vec<f64>, Vec<usize>)> = samples
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let mut sums = vec![0f64; n_cand * SHAPE_DIM];
            let mut counts = vec![0usize; n_cand];
            for &s in chunk {
                let r = &residuals[s as usize * SHAPE_DIM..(s as usize + 1) * SHAPE_DIM];
                for (c, split) in candidates.iter().enumerate() {
                    if feature_diff(s, split.u as usize, split.v as usize) > split.threshold {
                        counts[c] += 1;
                        let acc = &mut sums[c * SHAPE_DIM..(c + 1) * SHAPE_DIM];
                        for k in 0..SHAPE_DIM {
                            acc[k] += r[k];
                        }
                    }
                }
            }
            (sums, counts)
        })
        .collect();
    let mut left_sums = vec![0f64; n_cand * SHAPE_DIM];
    let mut left_counts = vec![0usize; n_cand];
    for (sums, counts) in &partials {
        for (a, b) in left_sums.iter_mut().zip(sums) {
            *a += *b;
        }
        for (a, b) in left_counts.iter_mut().zip(counts) {
            *a += *b;
        }
    }
    let mut total = [0f64; SHAPE_DIM];
    for &s in samples {
        let r = &residuals[s as usize * SHAPE_DIM..(s as usize + 1) * SHAPE_DIM];
        for k in 0..SHAPE_DIM {
            total[k] += r[k];
        }
    }

    let n = samples.len();
    let mut best: Option<(f64, usize)> = None;
    for c in 0..n_cand {
        let nl = left_counts[c];
        let nr = n - nl;
        if nl < m || nr < m {
            continue;
        }
        let left = &left_sums[c * SHAPE_DIM..(c + 1) * SHAPE_DIM];
        let (mut sl, mut sr) = (0.0, 0.0);
        for k in 0..SHAPE_DIM {
            sl += left[k] * left[k];
            let r = total[k] - left[k];
            sr += r * r;
        }
        let score = sl / nl as f64 + sr / nr as f64;
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, c));
        }
    }
    best.map(|(_, c)| candidates[c])
}
