use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "facelm", about = "Facial landmark localization toolkit")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic face corpus with dataset XML.
    Synth(SynthArgs),
    /// Split a dataset into subject-disjoint train/validation/test files.
    Split(SplitArgs),
    /// Train a shape predictor.
    Train(TrainArgs),
    /// Grid search over ensemble parameters on a validation set.
    Tune(TuneArgs),
    /// Per-image NRMSE of one model.
    Eval(EvalArgs),
    /// Bias report comparing two models across cohorts.
    Compare(CompareArgs),
    /// Clinical facial metrics per image.
    Metrics(MetricsArgs),
    /// Landmarks for one image, as a pts document on stdout.
    Predict(PredictArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (receives images/ and dataset.xml).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub subjects: usize,
    #[arg(long, default_value_t = 8)]
    pub images_per_subject: usize,
    /// Palsy severity in [0, 1]; 0 gives symmetric control faces.
    #[arg(long, default_value_t = 0.0)]
    pub asymmetry: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 160)]
    pub image_size: u32,
    /// Subject id prefix (default: "p" for patients, "c" for controls).
    #[arg(long)]
    pub prefix: Option<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub xml: PathBuf,
    /// train,validation,test
    #[arg(long, default_value = "0.9,0.05,0.05")]
    pub fractions: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives train.xml, validation.xml and test.xml.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Training parameter overrides, applied on top of `--params`.
#[derive(Debug, Args, Default)]
pub struct ParamArgs {
    /// key=value file of training parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub cascade_depth: Option<usize>,
    #[arg(long)]
    pub trees_per_cascade: Option<usize>,
    #[arg(long)]
    pub tree_depth: Option<usize>,
    #[arg(long)]
    pub min_samples_per_leaf: Option<usize>,
    #[arg(long)]
    pub feature_pool_size: Option<usize>,
    #[arg(long)]
    pub oversampling: Option<usize>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub num_test_splits: Option<usize>,
    #[arg(long)]
    pub padding: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub xml: PathBuf,
    /// Model file; the sidecar goes next to it with a `.meta` suffix.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    /// Grid file (key=v1,v2,… lines); defaults to the built-in 400-point grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Overrides the grid seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Wall-clock seconds per permutation.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    /// Winning parameters as a key=value file usable with `train --params`.
    #[arg(long)]
    pub winner_params: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub xml: PathBuf,
    /// Per-image CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Label for the model column (default: model file stem).
    #[arg(long)]
    pub model_id: Option<String>,
    /// outer, inner or centroid eye distance.
    #[arg(long, default_value = "outer")]
    pub normalizer: String,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model_a: PathBuf,
    #[arg(long)]
    pub model_b: PathBuf,
    #[arg(long)]
    pub xml: PathBuf,
    /// Receives errors.csv plus report.csv and/or report.md.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated: csv, markdown.
    #[arg(long, default_value = "csv,markdown")]
    pub format: String,
    #[arg(long, default_value = "outer")]
    pub normalizer: String,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub xml: PathBuf,
    /// Measure predicted instead of ground-truth shapes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Flag threshold for |left − right|, percent of inter-ocular distance.
    #[arg(long, default_value_t = facelm::metrics::DEFAULT_FLAG_THRESHOLD)]
    pub threshold: f64,
    /// CSV output (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// left,top,width,height (default: the whole image).
    #[arg(long)]
    pub r#box: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub xml: PathBuf,
    /// Annotation store directory.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Built UI assets served at /.
    #[arg(long)]
    pub r#static: Option<PathBuf>,
    /// Export target (default: <store>/ground_truth.xml).
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}
