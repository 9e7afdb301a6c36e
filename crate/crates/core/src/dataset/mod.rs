//! Annotated image collections: parsing, subject-disjoint splitting, box
//! synthesis and the synthetic face corpus.

pub mod pts;
pub mod synth;
pub mod xml;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Point2, Shape68};
use crate::raster::{load_image_grayscale, GrayImage};
use crate::rng::Rng;

pub use pts::{format_coord, parse_pts, write_pts};
pub use synth::{generate_synthetic_corpus, SynthConfig};
pub use xml::parse_annotation_xml;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cohort {
    Patient,
    Control,
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::Patient => "patient",
            Cohort::Control => "control",
        })
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "patient" => Ok(Cohort::Patient),
            "control" => Ok(Cohort::Control),
            other => Err(format!("unknown cohort {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Demographics {
    pub age: Option<f64>,
    pub sex: Option<String>,
    pub race: Option<String>,
    pub etiology: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMeta {
    pub subject_id: String,
    pub cohort: Cohort,
    /// Opaque expression label.
    pub expression: String,
    pub demographics: Demographics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    /// Relative to the owning index's base directory.
    pub image_path: PathBuf,
    /// `(width, height)` in pixels, when known.
    pub size: Option<(u32, u32)>,
    pub bbox: BoundingBox,
    /// Per-annotator markings keyed by annotator id.
    pub annotations: BTreeMap<String, Shape68>,
    pub ground_truth: Option<Shape68>,
    pub meta: SubjectMeta,
}

impl AnnotatedImage {
    /// Stable identifier: the relative path with `/` separators.
    pub fn id(&self) -> String {
        self.image_path
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Replaces the ground truth with the coordinate-wise mean of the
    /// annotator shapes (no outlier rejection). No-op without annotations.
    pub fn average_annotations(&mut self) {
        let shapes: Vec<Shape68> = self.annotations.values().copied().collect();
        if let Some(mean) = Shape68::mean(&shapes) {
            self.ground_truth = Some(mean);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub base_dir: PathBuf,
    pub images: Vec<AnnotatedImage>,
    grouping: BTreeMap<String, Vec<usize>>,
}

impl DatasetIndex {
    pub fn new(base_dir: PathBuf, images: Vec<AnnotatedImage>) -> Self {
        let mut grouping: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, img) in images.iter().enumerate() {
            grouping
                .entry(img.meta.subject_id.clone())
                .or_default()
                .push(i);
        }
        Self {
            base_dir,
            images,
            grouping,
        }
    }

    pub fn load_xml(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        parse_annotation_xml(&text, &base)
    }

    /// Subject id → image indices, ordered by subject id.
    pub fn grouping(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.grouping
    }

    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.grouping.keys().map(String::as_str)
    }

    pub fn resolve(&self, img: &AnnotatedImage) -> PathBuf {
        self.base_dir.join(&img.image_path)
    }

    /// Images whose subject is in `subjects`, in original order.
    pub fn subset(&self, subjects: &BTreeSet<String>) -> DatasetIndex {
        let images = self
            .images
            .iter()
            .filter(|img| subjects.contains(&img.meta.subject_id))
            .cloned()
            .collect();
        DatasetIndex::new(self.base_dir.clone(), images)
    }

    /// Concatenates two indices, rebasing image paths onto `self.base_dir`.
    pub fn merged(&self, other: &DatasetIndex) -> DatasetIndex {
        let mut images = self.images.clone();
        for img in &other.images {
            let mut img = img.clone();
            img.image_path = relative_path(&other.resolve(&img), &self.base_dir);
            images.push(img);
        }
        DatasetIndex::new(self.base_dir.clone(), images)
    }

    /// XML text with paths relative to `base_dir`.
    pub fn to_xml_string(&self) -> String {
        xml::write_xml(self.images.iter().map(|img| (img, img.id())))
    }

    /// XML text for a document stored in `xml_dir`.
    pub fn to_xml_string_in(&self, xml_dir: &Path) -> String {
        xml::write_xml(self.images.iter().map(|img| {
            let rel = relative_path(&self.resolve(img), xml_dir);
            let file = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            (img, file)
        }))
    }

    pub fn write_xml(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or(Path::new(""));
        let text = self.to_xml_string_in(dir);
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Decodes every image, in parallel, preserving order.
    pub fn load_images(&self) -> Result<Vec<LoadedImage>> {
        self.images
            .par_iter()
            .map(|img| {
                let pixels = load_image_grayscale(&self.resolve(img))?;
                Ok(LoadedImage {
                    record: img.clone(),
                    pixels,
                })
            })
            .collect()
    }
}

fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    pathdiff::diff_paths(abs(target), abs(base)).unwrap_or_else(|| target.to_path_buf())
}

/// An annotated image together with its decoded pixels.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub record: AnnotatedImage,
    pub pixels: GrayImage,
}

impl LoadedImage {
    pub fn id(&self) -> String {
        self.record.id()
    }
}

/// Subject ids per partition.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub validation: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

/// Fractions `(train, validation, test)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let all = [train, validation, test];
        if all.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(Error::InvalidFractions(format!(
                "fractions must be non-negative: {all:?}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidFractions(format!(
                "fractions must sum to 1: {all:?}"
            )));
        }
        if train <= 0.0 {
            return Err(Error::InvalidFractions("train fraction must be positive".into()));
        }
        Ok(Self {
            train,
            validation,
            test,
        })
    }
}

/// Partitions subjects (never images) into train/validation/test.
///
/// Subjects are taken in sorted id order, shuffled with the seeded
/// generator, then cut into `round(f · n)` validation and test subjects;
/// the remainder goes to train. A positive fraction that rounds to zero
/// still receives one subject.
pub fn split_by_subject(
    index: &DatasetIndex,
    fractions: SplitFractions,
    seed: u64,
) -> Result<SplitAssignment> {
    let mut subjects: Vec<String> = index.subjects().map(str::to_string).collect();
    let n = subjects.len();
    let requested = [fractions.train, fractions.validation, fractions.test]
        .iter()
        .filter(|f| **f > 0.0)
        .count();
    if n < requested {
        return Err(Error::InsufficientSubjects(format!(
            "{n} subjects for {requested} non-empty splits"
        )));
    }
    let count = |f: f64| -> usize {
        if f > 0.0 {
            ((f * n as f64).round() as usize).max(1)
        } else {
            0
        }
    };
    let n_val = count(fractions.validation);
    let n_test = count(fractions.test);
    if n_val + n_test >= n {
        return Err(Error::InsufficientSubjects(format!(
            "{n} subjects leave none for training"
        )));
    }

    let mut rng = Rng::new(seed);
    rng.shuffle(&mut subjects);
    let mut it = subjects.into_iter();
    let validation = it.by_ref().take(n_val).collect();
    let test = it.by_ref().take(n_test).collect();
    let train = it.collect();
    Ok(SplitAssignment {
        train,
        validation,
        test,
    })
}

/// Landmark bounding box with a 10% margin per side, optionally perturbed.
///
/// The centre moves by at most `jitter · max(width, height)` and each side
/// is scaled by a factor in `[1 − jitter, 1 + jitter]`.
pub fn synthesize_box(gt: &Shape68, jitter: f64, seed: u64) -> Result<BoundingBox> {
    if !(0.0..0.5).contains(&jitter) {
        return Err(Error::InvalidInput(format!(
            "box jitter {jitter} outside [0, 0.5)"
        )));
    }
    let (lo, hi) = gt.extent();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    if !(w > 0.0 && h > 0.0) {
        return Err(Error::DegenerateShape(
            "landmarks have zero-area extent".into(),
        ));
    }
    let width = 1.2 * w;
    let height = 1.2 * h;
    let mut center = Point2::new(lo.x + w / 2.0, lo.y + h / 2.0);
    let mut scale = 1.0;
    if jitter > 0.0 {
        let mut rng = Rng::new(seed);
        let k = jitter / std::f64::consts::SQRT_2;
        center.x += rng.signed() * k * width;
        center.y += rng.signed() * k * height;
        scale += rng.signed() * jitter;
    }
    BoundingBox::new(
        center.x - scale * width / 2.0,
        center.y - scale * height / 2.0,
        scale * width,
        scale * height,
    )
}
