//! Release acceptance run: one line per criterion, non-zero exit if any
//! fails. Runs without the test harness so the lines always print.

// `!(x < tol)` is deliberate: NaN fails.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use facelm::dataset::synth::{generate_synthetic_corpus, synthesize_corpus, SynthConfig};
use facelm::dataset::{split_by_subject, DatasetIndex, LoadedImage, SplitFractions};
use facelm::evaluation::*;
use facelm::geometry::*;
use facelm::metrics::{compute_metrics, estimate_midline};
use facelm::regressor::*;
use facelm::rng::Rng;
use facelm::tuning::{grid_search, GridSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("geometry oracle suite", geometry),
        ("nrmse fixtures and invariances", nrmse_suite),
        ("statistics oracle equivalence", statistics),
        ("training efficacy", training_efficacy),
        ("domain-shift replication", domain_shift),
        ("prediction latency", latency),
        ("determinism", determinism),
        ("serialization", serialization),
        ("400-permutation grid search", grid),
        ("facial metrics", metrics),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn random_shape(rng: &mut Rng) -> Shape68 {
    Shape68::from_fn(|_| Point2::new(rng.uniform(-400.0, 400.0), rng.uniform(-400.0, 400.0)))
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..1000 {
        let s = random_shape(&mut rng);
        let t = SimilarityTransform::new(
            rng.uniform(0.25, 4.0),
            rng.uniform(-PI, PI),
            Point2::new(rng.uniform(-300.0, 300.0), rng.uniform(-300.0, 300.0)),
        )
        .map_err(|e| e.to_string())?;
        let moved: Vec<Point2> = s.iter().map(|p| apply_transform(&t, *p)).collect();
        let got = procrustes_align(s.points(), &moved).map_err(|e| format!("case {case}: {e}"))?;
        worst.0 = worst.0.max((got.scale - t.scale).abs());
        worst.1 = worst.1.max(angle_diff(got.rotation, t.rotation));
        worst.2 = worst.2.max(got.translation.distance(&t.translation));
    }
    ensure!(worst.0 < 1e-9 && worst.1 < 1e-9 && worst.2 < 1e-6, "worst recovery error {worst:?}");

    let tri = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];
    let shifted: Vec<_> = tri.iter().map(|p| *p + Point2::new(5.0, -3.0)).collect();
    let t = procrustes_align(&tri, &shifted).map_err(|e| e.to_string())?;
    ensure!(
        (t.scale - 1.0).abs() < 1e-12 && t.rotation.abs() < 1e-12 && t.translation.distance(&Point2::new(5.0, -3.0)) < 1e-12,
        "pure translation: {t:?}"
    );
    let turned: Vec<_> = tri.iter().map(|p| Point2::new(-2.0 * p.y, 2.0 * p.x)).collect();
    let t = procrustes_align(&tri, &turned).map_err(|e| e.to_string())?;
    ensure!((t.scale - 2.0).abs() < 1e-9 && (t.rotation - PI / 2.0).abs() < 1e-9, "scale/quarter turn: {t:?}");
    ensure!(procrustes_align(&[tri[0]; 3], &tri).is_err(), "coincident source accepted");

    let id = SimilarityTransform::IDENTITY.apply(Point2::new(7.0, 9.0));
    let two = SimilarityTransform::new(2.0, 0.0, Point2::new(1.0, 1.0)).unwrap().apply(Point2::new(3.0, 4.0));
    let half = SimilarityTransform::new(1.0, PI, Point2::ZERO).unwrap().apply(Point2::new(1.0, 0.0));
    ensure!(id == Point2::new(7.0, 9.0), "identity apply {id:?}");
    ensure!(two.distance(&Point2::new(7.0, 9.0)) < 1e-12, "scaled apply {two:?}");
    ensure!(half.distance(&Point2::new(-1.0, 0.0)) < 1e-12, "half turn {half:?}");

    let mut s = common::face(50.0, Point2::new(0.0, 0.0));
    s[36] = Point2::new(100.0, 200.0);
    s[45] = Point2::new(160.0, 280.0);
    let iod = interocular_distance(&s).map_err(|e| e.to_string())?;
    ensure!(iod == 100.0, "60-80-100 triangle gave {iod}");
    let mirrored = interocular_distance(&mirror_shape(&s, 17.0)).map_err(|e| e.to_string())?;
    ensure!((mirrored - iod).abs() < 1e-12, "mirror changed IOD");
    s[45] = s[36];
    ensure!(interocular_distance(&s).is_err(), "coincident corners accepted");

    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "1000 cases, worst |Δscale| {:.1e}, |Δθ| {:.1e}, |Δt| {:.1e} px",
        worst.0, worst.1, worst.2
    ))
}

fn nrmse_suite() -> Outcome {
    let mut gt = common::face(80.0, Point2::new(200.0, 200.0));
    gt[36] = Point2::new(150.0, 190.0);
    gt[45] = Point2::new(250.0, 190.0);
    let e = |p: &Shape68| nrmse(p, &gt).map_err(|e| e.to_string());
    let zero = e(&gt)?;
    let five = e(&gt.translated(Point2::new(3.0, 4.0)))?;
    let half = e(&Shape68::from_fn(|i| if i < 34 { gt[i] + Point2::new(0.0, 10.0) } else { gt[i] }))?;
    ensure!(zero == 0.0, "identical shapes gave {zero}");
    ensure!((five - 5.0).abs() < 1e-9, "(3,4) offset gave {five}");
    ensure!((half - 50f64.sqrt()).abs() < 1e-9, "half offset gave {half}");

    let mut rng = Rng::new(77);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let g = random_shape(&mut rng);
        let p = random_shape(&mut rng);
        let base = nrmse(&p, &g).map_err(|e| e.to_string())?;
        let t = SimilarityTransform::new(1.0, rng.uniform(-PI, PI), Point2::new(rng.uniform(-99.0, 99.0), 5.0)).unwrap();
        let rigid = nrmse(&p.map(|q| t.apply(q)), &g.map(|q| t.apply(q))).map_err(|e| e.to_string())?;
        let k = rng.uniform(0.05, 20.0);
        let scaled = nrmse(&p.map(|q| q * k), &g.map(|q| q * k)).map_err(|e| e.to_string())?;
        worst = worst.max((rigid - base).abs() / base).max((scaled - base).abs() / base);
    }
    ensure!(worst < 1e-9, "worst relative invariance error {worst:e}");
    Ok(format!("3 fixtures exact, 500 invariance cases within {worst:.1e}"))
}

fn statistics() -> Outcome {
    let mut rng = Rng::new(31);
    let mut checked = 0;
    while checked < 200 {
        let n = 1 + rng.below(10);
        let pairs: Vec<(f64, f64)> = (0..n).map(|_| (rng.below(12) as f64, rng.below(12) as f64)).collect();
        if pairs.iter().all(|(a, b)| a == b) {
            continue;
        }
        let (w, p) = common::wilcoxon_brute_force(&pairs);
        let r = wilcoxon_signed_rank(&pairs).map_err(|e| e.to_string())?;
        ensure!(r.statistic == w && r.p_value == p, "{pairs:?}: got ({}, {}) want ({w}, {p})", r.statistic, r.p_value);
        checked += 1;
    }

    let mut worst_h = 0.0f64;
    for _ in 0..200 {
        let k = 2 + rng.below(3);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..1 + rng.below(8)).map(|_| rng.below(20) as f64).collect())
            .collect();
        if groups.iter().map(Vec::len).sum::<usize>() < 3 {
            continue;
        }
        let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
        let Ok(r) = kruskal_wallis(&refs) else {
            continue;
        };
        worst_h = worst_h.max((r.statistic - common::kruskal_wallis_h(&groups).max(0.0)).abs());
        let warped: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(|v| v.powi(3) + 2.0 * v).collect()).collect();
        let wrefs: Vec<&[f64]> = warped.iter().map(Vec::as_slice).collect();
        let w = kruskal_wallis(&wrefs).map_err(|e| e.to_string())?;
        ensure!(w.statistic.to_bits() == r.statistic.to_bits(), "monotone transform changed H");
    }
    ensure!(worst_h < 1e-9, "worst H error {worst_h:e}");
    let fixture = kruskal_wallis(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).map_err(|e| e.to_string())?;
    ensure!((fixture.statistic - 27.0 / 7.0).abs() < 1e-9, "H fixture {}", fixture.statistic);
    Ok(format!("200 Wilcoxon instances exact, worst H error {worst_h:.1e}, monotone invariance exact"))
}

fn efficacy_params(seed: u64) -> TrainParams {
    TrainParams {
        cascade_depth: 10,
        trees_per_cascade: 50,
        tree_depth: 3,
        feature_pool_size: 200,
        oversampling: 10,
        num_test_splits: 20,
        seed,
        ..TrainParams::default()
    }
}

fn mean_nrmse(e: &[ImageError]) -> f64 {
    e.iter().map(|x| x.nrmse).sum::<f64>() / e.len() as f64
}

fn select(images: &[LoadedImage], subjects: &BTreeSet<String>) -> Vec<LoadedImage> {
    images.iter().filter(|i| subjects.contains(&i.record.meta.subject_id)).cloned().collect()
}

fn training_efficacy() -> Outcome {
    let corpus = synthesize_corpus(&SynthConfig::new(200, 1, 0.0, 1)).map_err(|e| e.to_string())?;
    let index = DatasetIndex::new(PathBuf::new(), corpus.iter().map(|i| i.record.clone()).collect());
    let split = split_by_subject(&index, SplitFractions::new(0.75, 0.125, 0.125).unwrap(), 1).map_err(|e| e.to_string())?;
    let (train_set, val_set, test_set) = (select(&corpus, &split.train), select(&corpus, &split.validation), select(&corpus, &split.test));
    ensure!(
        (train_set.len(), val_set.len(), test_set.len()) == (150, 25, 25),
        "split sizes {} / {} / {}",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    let start = Instant::now();
    let model = train(&train_set, &efficacy_params(0), &mut |_| {}).map_err(|e| e.to_string())?;
    let train_secs = start.elapsed().as_secs_f64();
    let init = ShapePredictorModel::mean_only(model.mean_shape);
    let trained = mean_nrmse(&evaluate_model(&model, "trained", &test_set).map_err(|e| e.to_string())?);
    let baseline = mean_nrmse(&evaluate_model(&init, "init", &test_set).map_err(|e| e.to_string())?);
    let ratio = trained / baseline;
    ensure!(ratio <= 0.6, "held-out NRMSE {trained:.3} vs initialization {baseline:.3} (ratio {ratio:.3})");
    ensure!(train_secs <= 600.0, "training took {train_secs:.0}s");
    Ok(format!(
        "held-out NRMSE {trained:.3} vs initialization {baseline:.3} (ratio {ratio:.3} ≤ 0.6), trained in {train_secs:.1}s"
    ))
}

fn domain_shift() -> Outcome {
    let start = Instant::now();
    let corpus = |n, asym, seed| synthesize_corpus(&SynthConfig::new(n, 1, asym, seed)).map_err(|e| e.to_string());
    let generic_train = corpus(150, 0.0, 100)?;
    let mut mixed_train = corpus(150, 0.0, 200)?;
    mixed_train.extend(corpus(150, 0.8, 300)?);
    let g = train(&generic_train, &efficacy_params(0), &mut |_| {}).map_err(|e| e.to_string())?;
    let m = train(&mixed_train, &efficacy_params(0), &mut |_| {}).map_err(|e| e.to_string())?;
    let mut test = corpus(50, 0.8, 400)?;
    test.extend(corpus(50, 0.0, 500)?);
    let eg = evaluate_model(&g, "generic", &test).map_err(|e| e.to_string())?;
    let em = evaluate_model(&m, "retrained", &test).map_err(|e| e.to_string())?;
    let report = bias_report(&eg, &em).map_err(|e| e.to_string())?;
    let patients = report.model_test(facelm::dataset::Cohort::Patient).ok_or("no patient comparison")?;
    let controls = report.model_test(facelm::dataset::Cohort::Control).ok_or("no control comparison")?;
    let s = |model: &str, c| report.summary(model, c).map(|s| s.to_string()).unwrap_or_default();
    use facelm::dataset::Cohort::{Control, Patient};
    let (gp, mp) = (
        report.summary("generic", Patient).ok_or("missing summary")?.mean,
        report.summary("retrained", Patient).ok_or("missing summary")?.mean,
    );
    let p_pat = patients.p_value().ok_or("patient comparison untested")?;
    let p_con = controls.p_value().unwrap_or(1.0);
    let p_kw = report
        .cohort_test("generic")
        .and_then(|c| c.p_value())
        .ok_or("generic cohort comparison untested")?;
    let n_pat = report.summary("generic", Patient).ok_or("missing summary")?.n;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "patients generic {} vs retrained {} (p {p_pat:.1e}); controls {} vs {} (p {p_con:.3}); generic patients vs controls p {p_kw:.1e}",
        s("generic", Patient),
        s("retrained", Patient),
        s("generic", Control),
        s("retrained", Control)
    );
    ensure!(n_pat == 50, "{n_pat} patient images");
    ensure!(p_kw < ALPHA, "generic model shows no cohort gap: {detail}");
    ensure!(mp < gp && p_pat < ALPHA, "patient cohort not improved: {detail}");
    ensure!(!controls.significant(), "control cohort differs: {detail}");
    ensure!(secs <= 1800.0, "took {secs:.0}s");
    Ok(detail)
}

/// Default-size model (T=10, K=500, D=4, P=400) with random structure;
/// prediction cost depends only on the structure.
fn random_default_model(seed: u64) -> ShapePredictorModel {
    let p = TrainParams::default();
    let mut rng = Rng::new(seed);
    let mean = common::face(0.6, Point2::new(0.5, 0.4));
    let cascades = (0..p.cascade_depth)
        .map(|_| {
            let pool = sample_feature_pool(&mean, p.feature_pool_size, p.padding, &mut rng);
            let trees = (0..p.trees_per_cascade)
                .map(|_| {
                    let leaves = 1usize << p.tree_depth;
                    RegressionTree {
                        depth: p.tree_depth as u32,
                        splits: (0..leaves - 1)
                            .map(|_| Split {
                                u: rng.below(pool.len()) as u32,
                                v: rng.below(pool.len()) as u32,
                                threshold: rng.uniform(-40.0, 40.0),
                            })
                            .collect(),
                        leaves: (0..leaves * SHAPE_DIM).map(|_| rng.uniform(-1e-4, 1e-4) as f32).collect(),
                    }
                })
                .collect();
            Cascade { pool, trees }
        })
        .collect();
    ShapePredictorModel {
        cascades,
        params: Some(p),
        ..ShapePredictorModel::mean_only(mean)
    }
}

fn latency() -> Outcome {
    let model = random_default_model(5);
    model.validate().map_err(|e| e.to_string())?;
    let images = synthesize_corpus(&SynthConfig::new(10, 1, 0.5, 8)).map_err(|e| e.to_string())?;
    let mut times = Vec::with_capacity(100);
    for k in 0..110 {
        let img = &images[k % images.len()];
        let start = Instant::now();
        let shape = model.predict(&img.pixels, &img.record.bbox).map_err(|e| e.to_string())?;
        let dt = start.elapsed();
        std::hint::black_box(shape);
        if k >= 10 {
            times.push(dt.as_secs_f64() * 1e3);
        }
    }
    times.sort_by(f64::total_cmp);
    let median = (times[49] + times[50]) / 2.0;
    ensure!(median <= 10.0, "median {median:.3} ms");
    Ok(format!("median {median:.3} ms over 100 calls (10 cascades × 500 trees, depth 4, 400 features)"))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn determinism() -> Outcome {
    let cfg = SynthConfig::new(12, 2, 0.5, 21);
    let synth_run = |threads| {
        in_pool(threads, || {
            let dir = tempfile::tempdir().unwrap();
            let index = generate_synthetic_corpus(&cfg, dir.path()).unwrap();
            let mut files = vec![std::fs::read(dir.path().join("dataset.xml")).unwrap()];
            for img in &index.images {
                files.push(std::fs::read(index.resolve(img)).unwrap());
            }
            files
        })
    };
    ensure!(synth_run(1) == synth_run(4), "synth output differs between 1 and 4 threads");

    let corpus = synthesize_corpus(&cfg).map_err(|e| e.to_string())?;
    let index = DatasetIndex::new(PathBuf::from("/corpus"), corpus.iter().map(|i| i.record.clone()).collect());
    let split_run = |threads| {
        in_pool(threads, || {
            let s = split_by_subject(&index, SplitFractions::new(0.6, 0.2, 0.2).unwrap(), 9).unwrap();
            [&s.train, &s.validation, &s.test].map(|set| index.subset(set).to_xml_string())
        })
    };
    ensure!(split_run(1) == split_run(4), "split output differs between 1 and 4 threads");

    let params = TrainParams {
        cascade_depth: 3,
        trees_per_cascade: 20,
        tree_depth: 3,
        feature_pool_size: 80,
        oversampling: 4,
        seed: 13,
        ..TrainParams::default()
    };
    let train_run = |threads| in_pool(threads, || serialize(&train(&corpus, &params, &mut |_| {}).unwrap()));
    let model_bytes = train_run(1);
    ensure!(model_bytes == train_run(4), "trained model differs between 1 and 4 threads");

    let grid = GridSpec {
        trees_per_cascade: vec![4, 8],
        tree_depth: vec![2, 3],
        min_samples_per_leaf: vec![1, 3],
        feature_pool_size: vec![30],
        base: TrainParams { cascade_depth: 2, oversampling: 3, ..TrainParams::default() },
        seed: 17,
    };
    let tune_run = |threads| in_pool(threads, || grid_search(&corpus[..16], &corpus[16..], &grid, &|_| {}).unwrap().to_csv());
    ensure!(tune_run(1) == tune_run(4), "tuning report differs between 1 and 4 threads");
    Ok(format!("synth, split, train ({} bytes) and tune outputs identical at 1 and 4 threads", model_bytes.len()))
}

fn serialization() -> Outcome {
    let images = synthesize_corpus(&SynthConfig::new(20, 1, 0.4, 44)).map_err(|e| e.to_string())?;
    let params = TrainParams {
        cascade_depth: 3,
        trees_per_cascade: 15,
        tree_depth: 3,
        feature_pool_size: 60,
        oversampling: 4,
        ..TrainParams::default()
    };
    let model = train(&images, &params, &mut |_| {}).map_err(|e| e.to_string())?;
    let bytes = serialize(&model);
    let back = deserialize(&bytes).map_err(|e| e.to_string())?;
    ensure!(serialize(&back) == bytes, "re-serialized bytes differ");
    for img in &images {
        let a = model.predict(&img.pixels, &img.record.bbox).map_err(|e| e.to_string())?;
        let b = back.predict(&img.pixels, &img.record.bbox).map_err(|e| e.to_string())?;
        let same = a.iter().zip(b.iter()).all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits());
        ensure!(same, "prediction differs after round trip on {}", img.id());
    }
    let big = random_default_model(1);
    let big_bytes = serialize(&big);
    let big_back = deserialize(&big_bytes).map_err(|e| e.to_string())?;
    ensure!(serialize(&big_back) == big_bytes, "default-size model round trip");

    let mut rejected = 0;
    let mut corrupt = |b: Vec<u8>, what: &str| -> Result<(), String> {
        ensure!(deserialize(&b).is_err(), "accepted {what}");
        rejected += 1;
        Ok(())
    };
    let mut magic = bytes.clone();
    magic[1] ^= 0xff;
    corrupt(magic, "bad magic")?;
    let mut version = bytes.clone();
    version[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    let msg = deserialize(&version).err().map(|e| e.to_string()).unwrap_or_default();
    ensure!(msg.contains("unsupported version"), "next version gave {msg:?}");
    corrupt(version, "next version")?;
    for cut in [0, 4, 7, 8 + 68 * 16, bytes.len() / 3, bytes.len() - 1] {
        corrupt(bytes[..cut].to_vec(), &format!("truncation at {cut}"))?;
    }
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(&[0, 0, 0, 0]);
    corrupt(trailing, "trailing bytes")?;
    // pool size of the first cascade set beyond the stream
    let mut counts = bytes.clone();
    let pool_at = 8 + 68 * 16 + 4;
    counts[pool_at..pool_at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
    corrupt(counts, "oversized pool count")?;
    // depth 0 for the first tree
    let mut depth = bytes.clone();
    let p = params.feature_pool_size;
    let depth_at = pool_at + 4 + p * 20 + 4;
    depth[depth_at..depth_at + 4].copy_from_slice(&0u32.to_le_bytes());
    corrupt(depth, "zero tree depth")?;
    // split feature index beyond the pool
    let mut split = bytes.clone();
    split[depth_at + 4..depth_at + 8].copy_from_slice(&(p as u32).to_le_bytes());
    corrupt(split, "split index out of range")?;
    Ok(format!("{} bytes round trip exactly, predictions bit-identical, {rejected} corrupt streams rejected", bytes.len()))
}

fn grid() -> Outcome {
    let images = synthesize_corpus(&SynthConfig::new(30, 1, 0.3, 400)).map_err(|e| e.to_string())?;
    let grid = GridSpec {
        trees_per_cascade: vec![5, 10, 15, 20],
        tree_depth: vec![1, 2, 3, 4, 5],
        min_samples_per_leaf: vec![1, 2, 5, 10],
        feature_pool_size: vec![20, 40, 60, 80, 100],
        base: TrainParams {
            cascade_depth: 3,
            oversampling: 5,
            num_test_splits: 10,
            ..TrainParams::default()
        },
        seed: 400,
    };
    ensure!(grid.len() == 400, "grid has {} permutations", grid.len());
    let result = grid_search(&images[..24], &images[24..], &grid, &|_| {}).map_err(|e| e.to_string())?;
    let min = result.records.iter().map(|r| r.nrmse).fold(f64::INFINITY, f64::min);
    let csv = result.to_csv();
    let rows = csv.lines().skip(1).filter(|l| !l.starts_with("winner,")).count();
    ensure!(result.records.len() == 400 && rows == 400, "{} records, {rows} report rows", result.records.len());
    ensure!(result.winner().nrmse == min, "winner {} but minimum {min}", result.winner().nrmse);
    let w = result.winner();
    Ok(format!(
        "400 permutations, winner #{} (K={}, D={}, m={}, P={}) NRMSE {:.3}",
        w.index, w.params.trees_per_cascade, w.params.tree_depth, w.params.min_samples_per_leaf, w.params.feature_pool_size, w.nrmse
    ))
}

fn metrics() -> Outcome {
    let axis = 320.0;
    let s = common::face(120.0, Point2::new(axis, 240.0));
    let m = compute_metrics(&s).map_err(|e| e.to_string())?;
    let worst = m.delta().values().iter().fold(0.0f64, |a, d| a.max(d.abs()));
    ensure!(worst < 1e-9, "symmetric template delta {worst:e}");

    let foot = estimate_midline(&s).map_err(|e| e.to_string())?.project(s[57]);
    let out = s[54] - foot;
    let mut wide = s;
    wide[54] = s[54] + out * (20.0 / out.norm());
    let mw = compute_metrics(&wide).map_err(|e| e.to_string())?;
    let gain = mw.left.commissure_excursion - m.left.commissure_excursion;
    ensure!((gain - 20.0).abs() < 1e-9, "commissure gain {gain}");
    let mut raised = s;
    for i in 22..=26 {
        raised[i] = s[i] + Point2::new(0.0, -15.0);
    }
    let mr = compute_metrics(&raised).map_err(|e| e.to_string())?;
    let brow = mr.left.brow_height - m.left.brow_height;
    ensure!((brow - 15.0).abs() < 1e-9 && mr.right == m.right, "brow gain {brow}");

    let mut rng = Rng::new(6);
    for _ in 0..200 {
        let jittered = Shape68::from_fn(|i| {
            if [27, 28, 29, 30, 33].contains(&i) {
                Point2::new(axis, s[i].y + rng.uniform(-4.0, 4.0))
            } else {
                s[i] + Point2::new(rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0))
            }
        });
        let a = compute_metrics(&jittered).map_err(|e| e.to_string())?;
        let b = compute_metrics(&mirror_shape(&jittered, axis)).map_err(|e| e.to_string())?;
        let (al, ar, bl, br) = (a.left.values(), a.right.values(), b.left.values(), b.right.values());
        for (x, y) in al.iter().zip(br).chain(ar.iter().zip(bl)) {
            ensure!((x - y).abs() < 1e-9, "mirror swap {x} vs {y}");
        }
    }
    Ok("symmetric deltas < 1e-9, +20 px commissure and +15 px brow exact, mirror swap over 200 shapes".into())
}
