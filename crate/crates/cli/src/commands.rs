use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use facelm::dataset::{
    split_by_subject, synth, write_pts, AnnotatedImage, DatasetIndex, LoadedImage, SplitFractions,
};
use facelm::evaluation::{bias_report, errors_to_csv, evaluate_model_with, Normalizer, Summary};
use facelm::geometry::{BoundingBox, Shape68};
use facelm::metrics::{compute_metrics, metrics_to_csv, MetricsRow};
use facelm::raster::load_image_grayscale;
use facelm::regressor::{self, read_sidecar, write_sidecar, ShapePredictorModel, TrainParams};
use facelm::tuning::{grid_search, GridSpec};
use facelm_annotate::{Server, ServiceConfig};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Split(a) => split_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Refuses to replace an existing file unless `force` is set.
fn check_output(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(CliError::Usage(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn write_output(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn model_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_images(xml: &Path) -> Result<Vec<LoadedImage>> {
    Ok(DatasetIndex::load_xml(xml)?.load_images()?)
}

fn parse_normalizer(s: &str) -> Result<Normalizer> {
    s.parse().map_err(CliError::Usage)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    check_output(&a.out.join("dataset.xml"), a.force)?;
    let mut cfg = synth::SynthConfig::new(a.subjects, a.images_per_subject, a.asymmetry, a.seed);
    cfg.image_size = a.image_size;
    if let Some(p) = a.prefix {
        cfg.subject_prefix = p;
    }
    let index = synth::generate_synthetic_corpus(&cfg, &a.out)?;
    eprintln!(
        "wrote {} images of {} subjects to {}",
        index.images.len(),
        index.grouping().len(),
        a.out.display()
    );
    Ok(())
}

fn parse_fractions(s: &str) -> Result<SplitFractions> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--fractions {s:?}: expected three numbers")))?;
    match parts.as_slice() {
        [t, v, e] => SplitFractions::new(*t, *v, *e).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!("--fractions {s:?}: expected three numbers"))),
    }
}

fn split_cmd(a: SplitArgs) -> Result<()> {
    let fractions = parse_fractions(&a.fractions)?;
    let names = ["train.xml", "validation.xml", "test.xml"];
    for n in names {
        check_output(&a.out_dir.join(n), a.force)?;
    }
    let index = DatasetIndex::load_xml(&a.xml)?;
    let split = split_by_subject(&index, fractions, a.seed)?;
    let parts: [&BTreeSet<String>; 3] = [&split.train, &split.validation, &split.test];
    fs::create_dir_all(&a.out_dir).map_err(|e| CliError::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    for (name, subjects) in names.iter().zip(parts) {
        let subset = index.subset(subjects);
        subset.write_xml(&a.out_dir.join(name))?;
        eprintln!("{name}: {} subjects, {} images", subjects.len(), subset.images.len());
    }
    Ok(())
}

fn resolve_params(a: &ParamArgs) -> Result<TrainParams> {
    let mut p = match &a.params {
        Some(path) => read_sidecar(path)?.0.ok_or_else(|| {
            CliError::Usage(format!("{}: no training parameters found", path.display()))
        })?,
        None => TrainParams::default(),
    };
    let overrides: [(&str, Option<String>); 11] = [
        ("cascade_depth", a.cascade_depth.map(|v| v.to_string())),
        ("trees_per_cascade", a.trees_per_cascade.map(|v| v.to_string())),
        ("tree_depth", a.tree_depth.map(|v| v.to_string())),
        ("min_samples_per_leaf", a.min_samples_per_leaf.map(|v| v.to_string())),
        ("feature_pool_size", a.feature_pool_size.map(|v| v.to_string())),
        ("oversampling", a.oversampling.map(|v| v.to_string())),
        ("shrinkage", a.shrinkage.map(|v| v.to_string())),
        ("lambda", a.lambda.map(|v| v.to_string())),
        ("num_test_splits", a.num_test_splits.map(|v| v.to_string())),
        ("padding", a.padding.map(|v| v.to_string())),
        ("seed", a.seed.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            p.set(k, &v)?;
        }
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let params = resolve_params(&a.params)?;
    let meta = sidecar_path(&a.out);
    check_output(&a.out, a.force)?;
    check_output(&meta, a.force)?;
    let images = load_images(&a.xml)?;
    eprintln!("training on {} images", images.len());
    let model = regressor::train(&images, &params, &mut |r| {
        eprintln!(
            "stage {}/{}: train NRMSE {:.3} (initial {:.3}, {:.1}s)",
            r.stage, r.stages, r.train_nrmse, r.initial_nrmse, r.elapsed_seconds
        );
    })?;
    write_output(&a.out, &regressor::serialize(&model))?;
    let description = vec![
        ("training_xml".to_string(), a.xml.display().to_string()),
        ("training_images".to_string(), images.len().to_string()),
        ("tool_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ];
    write_sidecar(&meta, &model, &description)?;
    eprintln!("wrote {} ({} bytes)", a.out.display(), model.byte_size());
    Ok(())
}

fn tune_cmd(a: TuneArgs) -> Result<()> {
    let mut grid = match &a.grid {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io {
                path: path.clone(),
                source: e,
            })?;
            GridSpec::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    if let Some(seed) = a.seed {
        grid.seed = seed;
    }
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    check_output(&a.out, a.force)?;
    for p in [&a.timing, &a.winner_params].into_iter().flatten() {
        check_output(p, a.force)?;
    }
    let train = load_images(&a.train)?;
    let validation = load_images(&a.validation)?;
    let total = grid.len();
    eprintln!(
        "{total} permutations, {} training and {} validation images",
        train.len(),
        validation.len()
    );
    let result = grid_search(&train, &validation, &grid, &|r| {
        eprintln!("permutation {}/{total}: NRMSE {:.3} ({:.1}s)", r.index + 1, r.nrmse, r.seconds);
    })?;
    write_output(&a.out, result.to_csv().as_bytes())?;
    if let Some(p) = &a.timing {
        write_output(p, result.timing_csv().as_bytes())?;
    }
    let w = result.winner();
    if let Some(p) = &a.winner_params {
        let text: String = w
            .params
            .to_key_values()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        write_output(p, text.as_bytes())?;
    }
    println!(
        "winner: permutation {} NRMSE {:.3} bytes {}",
        w.index, w.nrmse, w.model_bytes
    );
    for (k, v) in w.params.to_key_values() {
        println!("  {k}={v}");
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let normalizer = parse_normalizer(&a.normalizer)?;
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let model = ShapePredictorModel::load(&a.model)?;
    let images = load_images(&a.xml)?;
    let id = a.model_id.unwrap_or_else(|| model_label(&a.model));
    let errors = evaluate_model_with(&model, &id, &images, normalizer)?;
    let csv = errors_to_csv(&errors);
    match &a.out {
        Some(p) => write_output(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let values: Vec<f64> = errors.iter().map(|e| e.nrmse).collect();
    if let Some(summary) = Summary::of(&values) {
        eprintln!("{id}: NRMSE {summary} over {} images", values.len());
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let normalizer = parse_normalizer(&a.normalizer)?;
    let mut csv = false;
    let mut markdown = false;
    for f in a.format.split(',').map(str::trim) {
        match f {
            "csv" => csv = true,
            "markdown" | "md" => markdown = true,
            other => return Err(CliError::Usage(format!("unknown report format {other:?}"))),
        }
    }
    let errors_path = a.out_dir.join("errors.csv");
    let csv_path = a.out_dir.join("report.csv");
    let md_path = a.out_dir.join("report.md");
    check_output(&errors_path, a.force)?;
    if csv {
        check_output(&csv_path, a.force)?;
    }
    if markdown {
        check_output(&md_path, a.force)?;
    }
    let (id_a, id_b) = (model_label(&a.model_a), model_label(&a.model_b));
    if id_a == id_b {
        return Err(CliError::Usage(format!(
            "both models are labelled {id_a:?}; rename one file"
        )));
    }
    let model_a = ShapePredictorModel::load(&a.model_a)?;
    let model_b = ShapePredictorModel::load(&a.model_b)?;
    let images = load_images(&a.xml)?;
    let errors_a = evaluate_model_with(&model_a, &id_a, &images, normalizer)?;
    let errors_b = evaluate_model_with(&model_b, &id_b, &images, normalizer)?;
    let report = bias_report(&errors_a, &errors_b)?;
    let all: Vec<_> = errors_a.iter().chain(&errors_b).cloned().collect();
    write_output(&errors_path, errors_to_csv(&all).as_bytes())?;
    if csv {
        write_output(&csv_path, report.to_csv().as_bytes())?;
    }
    let md = report.to_markdown();
    if markdown {
        write_output(&md_path, md.as_bytes())?;
    }
    print!("{md}");
    Ok(())
}

fn metrics_cmd(a: MetricsArgs) -> Result<()> {
    if !(a.threshold >= 0.0 && a.threshold.is_finite()) {
        return Err(CliError::Usage(format!("--threshold {} must be non-negative", a.threshold)));
    }
    if let Some(p) = &a.out {
        check_output(p, a.force)?;
    }
    let index = DatasetIndex::load_xml(&a.xml)?;
    let mut rows = Vec::new();
    match &a.model {
        Some(path) => {
            let model = ShapePredictorModel::load(path)?;
            for img in &index.images {
                let pixels = load_image_grayscale(&index.resolve(img))?;
                let shape = model.predict(&pixels, &img.bbox)?;
                rows.push(metrics_row(img, &shape)?);
            }
        }
        None => {
            for img in &index.images {
                match &img.ground_truth {
                    Some(gt) => rows.push(metrics_row(img, gt)?),
                    None => eprintln!("skipping {}: no landmarks", img.id()),
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(facelm::Error::EmptyDataset.into());
    }
    let csv = metrics_to_csv(&rows, a.threshold);
    match &a.out {
        Some(p) => write_output(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    let flagged = rows.iter().filter(|r| !r.metrics.flagged(a.threshold).is_empty()).count();
    eprintln!("{} images, {flagged} flagged", rows.len());
    Ok(())
}

fn metrics_row(img: &AnnotatedImage, shape: &Shape68) -> Result<MetricsRow> {
    Ok(MetricsRow {
        image_id: img.id(),
        subject_id: img.meta.subject_id.clone(),
        expression: img.meta.expression.clone(),
        metrics: compute_metrics(shape).map_err(|e| facelm::Error::Image {
            image: img.id(),
            source: Box::new(e),
        })?,
    })
}

fn parse_box(s: &str) -> Result<BoundingBox> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--box {s:?}: expected left,top,width,height")))?;
    match v.as_slice() {
        [l, t, w, h] => BoundingBox::new(*l, *t, *w, *h).map_err(|e| CliError::Usage(e.to_string())),
        _ => Err(CliError::Usage(format!("--box {s:?}: expected left,top,width,height"))),
    }
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let bbox = a.r#box.as_deref().map(parse_box).transpose()?;
    let model = ShapePredictorModel::load(&a.model)?;
    let pixels = load_image_grayscale(&a.image)?;
    let bbox = match bbox {
        Some(b) => b,
        None => BoundingBox::new(0.0, 0.0, pixels.width() as f64, pixels.height() as f64)?,
    };
    let shape = model.predict(&pixels, &bbox)?;
    print!("{}", write_pts(shape.points()));
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        dataset_xml: a.xml,
        store_dir: a.store,
        model: a.model,
        static_dir: a.r#static,
        export_path: a.export,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Io {
            path: PathBuf::new(),
            source: e,
        })?;
    runtime.block_on(async {
        let server = Server::bind(&config, a.addr).await?;
        eprintln!("listening on http://{}", server.local_addr()?);
        server.run().await?;
        Ok(())
    })
}
