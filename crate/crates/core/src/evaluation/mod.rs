//! Landmark error measurement and the cohort/model comparison report.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

pub use stats::{
    average_ranks, chi_square_sf, kruskal_wallis, regularized_gamma_q, wilcoxon_signed_rank,
    wilcoxon_signed_rank_with, Summary, TestResult, WilcoxonMethod, WILCOXON_EXACT_MAX_N,
};

use crate::dataset::{Cohort, LoadedImage};
use crate::error::{Error, Result};
use crate::geometry::{interocular_distance, Point2, Shape68, NUM_LANDMARKS};
use crate::regressor::ShapePredictorModel;

/// Significance level for every report flag.
pub const ALPHA: f64 = 0.01;

/// Distance used to normalize the landmark RMSE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalizer {
    /// Outer eye corners, landmarks 36 and 45.
    #[default]
    OuterEyeCorners,
    /// Inner eye corners, landmarks 39 and 42.
    InnerEyeCorners,
    /// Centroids of the two six-point eye contours.
    EyeCentroids,
}

impl Normalizer {
    pub fn distance(self, s: &Shape68) -> Result<f64> {
        let d = match self {
            Normalizer::OuterEyeCorners => return interocular_distance(s),
            Normalizer::InnerEyeCorners => s[39].distance(&s[42]),
            Normalizer::EyeCentroids => {
                let c = |r: std::ops::Range<usize>| {
                    let sum = r.fold(Point2::ZERO, |acc, i| acc + s[i]);
                    sum * (1.0 / 6.0)
                };
                c(36..42).distance(&c(42..48))
            }
        };
        if !(d > 0.0) {
            return Err(Error::DegenerateShape("normalizing distance is zero".into()));
        }
        Ok(d)
    }
}

impl std::str::FromStr for Normalizer {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "outer" => Ok(Normalizer::OuterEyeCorners),
            "inner" => Ok(Normalizer::InnerEyeCorners),
            "centroid" => Ok(Normalizer::EyeCentroids),
            other => Err(format!("unknown normalizer {other:?} (outer, inner, centroid)")),
        }
    }
}

/// Root-mean-square point error as a percentage of the ground truth's
/// inter-ocular distance.
pub fn nrmse(predicted: &Shape68, ground_truth: &Shape68) -> Result<f64> {
    nrmse_with(predicted, ground_truth, Normalizer::OuterEyeCorners)
}

pub fn nrmse_with(predicted: &Shape68, ground_truth: &Shape68, normalizer: Normalizer) -> Result<f64> {
    let norm = normalizer.distance(ground_truth)?;
    let ss: f64 = predicted
        .iter()
        .zip(ground_truth.iter())
        .map(|(p, g)| (*p - *g).norm_sq())
        .sum();
    Ok(100.0 * (ss / NUM_LANDMARKS as f64).sqrt() / norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageError {
    pub image_id: String,
    pub cohort: Cohort,
    pub model_id: String,
    /// Percent of the normalizing distance.
    pub nrmse: f64,
}

pub fn evaluate_model(
    model: &ShapePredictorModel,
    model_id: &str,
    images: &[LoadedImage],
) -> Result<Vec<ImageError>> {
    evaluate_model_with(model, model_id, images, Normalizer::default())
}

/// One error per image, in input order.
pub fn evaluate_model_with(
    model: &ShapePredictorModel,
    model_id: &str,
    images: &[LoadedImage],
    normalizer: Normalizer,
) -> Result<Vec<ImageError>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(img) = images.iter().find(|i| i.record.ground_truth.is_none()) {
        return Err(Error::MissingGroundTruth(img.id()));
    }
    images
        .par_iter()
        .map(|img| {
            let id = img.id();
            let annotate = |e: Error| Error::Image {
                image: id.clone(),
                source: Box::new(e),
            };
            let gt = img.record.ground_truth.as_ref().expect("checked above");
            let pred = model.predict(&img.pixels, &img.record.bbox).map_err(annotate)?;
            let value = nrmse_with(&pred, gt, normalizer).map_err(annotate)?;
            Ok(ImageError {
                image_id: id.clone(),
                cohort: img.record.meta.cohort,
                model_id: model_id.to_string(),
                nrmse: value,
            })
        })
        .collect()
}

/// Outcome of one hypothesis test inside a report.
#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    Tested(TestResult),
    /// The test statistic is undefined because the samples do not differ
    /// (every value tied, or every paired difference zero).
    NoDifference(String),
    /// Too few observations to run the test.
    NotApplicable(String),
}

impl Comparison {
    fn from_result(r: Result<TestResult>) -> Result<Comparison> {
        match r {
            Ok(t) => Ok(Comparison::Tested(t)),
            Err(Error::DegenerateData(m)) => Ok(Comparison::NoDifference(m)),
            Err(Error::InvalidInput(m)) => Ok(Comparison::NotApplicable(m)),
            Err(e) => Err(e),
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            Comparison::Tested(t) => Some(t.p_value),
            _ => None,
        }
    }

    pub fn statistic(&self) -> Option<f64> {
        match self {
            Comparison::Tested(t) => Some(t.statistic),
            _ => None,
        }
    }

    pub fn significant(&self) -> bool {
        self.p_value().is_some_and(|p| p < ALPHA)
    }

    fn describe(&self, stat_name: &str) -> String {
        match self {
            Comparison::Tested(t) => format!(
                "{stat_name} = {:.3}, p = {}{}",
                t.statistic,
                format_p(t.p_value),
                if self.significant() { " *" } else { "" }
            ),
            Comparison::NoDifference(_) => "no difference".into(),
            Comparison::NotApplicable(m) => format!("n/a ({m})"),
        }
    }
}

fn format_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub model_id: String,
    pub cohort: Cohort,
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub model_a: String,
    pub model_b: String,
    /// Per model, then per cohort, for the cohorts present.
    pub summaries: Vec<GroupSummary>,
    /// Kruskal-Wallis, patient vs control, one entry per model.
    pub cohort_tests: Vec<(String, Comparison)>,
    /// Paired Wilcoxon, model A vs model B, one entry per cohort present.
    pub model_tests: Vec<(Cohort, Comparison)>,
    pub alpha: f64,
    pub errors_a: Vec<ImageError>,
    pub errors_b: Vec<ImageError>,
}

const COHORTS: [Cohort; 2] = [Cohort::Patient, Cohort::Control];

fn single_model_id(errors: &[ImageError], which: &str) -> Result<String> {
    let first = errors
        .first()
        .ok_or_else(|| Error::Pairing(format!("no errors for model {which}")))?;
    if let Some(e) = errors.iter().find(|e| e.model_id != first.model_id) {
        return Err(Error::Pairing(format!(
            "model {which} mixes ids {:?} and {:?}",
            first.model_id, e.model_id
        )));
    }
    Ok(first.model_id.clone())
}

fn by_id<'a>(errors: &'a [ImageError], which: &str) -> Result<BTreeMap<&'a str, &'a ImageError>> {
    let mut map = BTreeMap::new();
    for e in errors {
        if map.insert(e.image_id.as_str(), e).is_some() {
            return Err(Error::Pairing(format!(
                "image {} appears twice for model {which}",
                e.image_id
            )));
        }
    }
    Ok(map)
}

/// Compares two models evaluated on the same images: cohort differences
/// within each model and paired model differences within each cohort.
pub fn bias_report(errors_a: &[ImageError], errors_b: &[ImageError]) -> Result<EvaluationReport> {
    let model_a = single_model_id(errors_a, "A")?;
    let model_b = single_model_id(errors_b, "B")?;
    let map_a = by_id(errors_a, "A")?;
    let map_b = by_id(errors_b, "B")?;
    let ids_a: BTreeSet<&str> = map_a.keys().copied().collect();
    let ids_b: BTreeSet<&str> = map_b.keys().copied().collect();
    if ids_a != ids_b {
        let only_a = ids_a.difference(&ids_b).count();
        let only_b = ids_b.difference(&ids_a).count();
        return Err(Error::Pairing(format!(
            "image sets differ: {only_a} only in A, {only_b} only in B"
        )));
    }
    for (id, a) in &map_a {
        if map_b[id].cohort != a.cohort {
            return Err(Error::Pairing(format!("image {id} has different cohorts")));
        }
    }

    let values = |errors: &[ImageError], c: Cohort| -> Vec<f64> {
        errors.iter().filter(|e| e.cohort == c).map(|e| e.nrmse).collect()
    };

    let mut summaries = Vec::new();
    let mut cohort_tests = Vec::new();
    for (id, errors) in [(&model_a, errors_a), (&model_b, errors_b)] {
        for c in COHORTS {
            if let Some(summary) = Summary::of(&values(errors, c)) {
                summaries.push(GroupSummary {
                    model_id: id.clone(),
                    cohort: c,
                    summary,
                });
            }
        }
        let patients = values(errors, Cohort::Patient);
        let controls = values(errors, Cohort::Control);
        let test = Comparison::from_result(kruskal_wallis(&[&patients, &controls]))?;
        cohort_tests.push((id.clone(), test));
    }

    let mut model_tests = Vec::new();
    for c in COHORTS {
        let pairs: Vec<(f64, f64)> = errors_a
            .iter()
            .filter(|e| e.cohort == c)
            .map(|a| (a.nrmse, map_b[a.image_id.as_str()].nrmse))
            .collect();
        if pairs.is_empty() {
            continue;
        }
        model_tests.push((c, Comparison::from_result(wilcoxon_signed_rank(&pairs))?));
    }

    Ok(EvaluationReport {
        model_a,
        model_b,
        summaries,
        cohort_tests,
        model_tests,
        alpha: ALPHA,
        errors_a: errors_a.to_vec(),
        errors_b: errors_b.to_vec(),
    })
}

impl EvaluationReport {
    pub fn summary(&self, model_id: &str, cohort: Cohort) -> Option<&Summary> {
        self.summaries
            .iter()
            .find(|g| g.model_id == model_id && g.cohort == cohort)
            .map(|g| &g.summary)
    }

    pub fn model_test(&self, cohort: Cohort) -> Option<&Comparison> {
        self.model_tests.iter().find(|(c, _)| *c == cohort).map(|(_, t)| t)
    }

    pub fn cohort_test(&self, model_id: &str) -> Option<&Comparison> {
        self.cohort_tests.iter().find(|(m, _)| m == model_id).map(|(_, t)| t)
    }

    /// Summary rows followed by test rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let row = |w: &mut csv::Writer<Vec<u8>>, fields: [String; 8]| {
            w.write_record(&fields).expect("in-memory write");
        };
        row(
            &mut w,
            ["kind", "model", "cohort", "n", "mean", "std", "statistic", "p_value"].map(String::from),
        );
        for g in &self.summaries {
            row(
                &mut w,
                [
                    "summary".into(),
                    g.model_id.clone(),
                    g.cohort.to_string(),
                    g.summary.n.to_string(),
                    g.summary.mean.to_string(),
                    g.summary.std.to_string(),
                    String::new(),
                    String::new(),
                ],
            );
        }
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for (m, t) in &self.cohort_tests {
            row(
                &mut w,
                [
                    "kruskal_wallis".into(),
                    m.clone(),
                    "patient|control".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    opt(t.statistic()),
                    opt(t.p_value()),
                ],
            );
        }
        for (c, t) in &self.model_tests {
            row(
                &mut w,
                [
                    "wilcoxon".into(),
                    format!("{}|{}", self.model_a, self.model_b),
                    c.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    opt(t.statistic()),
                    opt(t.p_value()),
                ],
            );
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Human-readable summary table with significance marks at `alpha`.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Landmark error (NRMSE, % inter-ocular distance)\n");
        let _ = writeln!(out, "| cohort | {} | {} | paired test |", self.model_a, self.model_b);
        let _ = writeln!(out, "|---|---|---|---|");
        for c in COHORTS {
            let cell = |m: &str| {
                self.summary(m, c)
                    .map(|s| format!("{s} (n = {})", s.n))
                    .unwrap_or_else(|| "n/a".into())
            };
            let test = self
                .model_test(c)
                .map(|t| t.describe("W"))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(out, "| {c} | {} | {} | {test} |", cell(&self.model_a), cell(&self.model_b));
        }
        let _ = writeln!(out, "\nPatients vs controls (Kruskal-Wallis):\n");
        for (m, t) in &self.cohort_tests {
            let _ = writeln!(out, "- {m}: {}", t.describe("H"));
        }
        let _ = writeln!(out, "\n`*` marks p < {}.", self.alpha);
        out
    }
}

/// Per-image errors as CSV: `image,cohort,model,nrmse`.
pub fn errors_to_csv(errors: &[ImageError]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image", "cohort", "model", "nrmse"]).expect("in-memory write");
    for e in errors {
        w.write_record([
            e.image_id.as_str(),
            &e.cohort.to_string(),
            &e.model_id,
            &e.nrmse.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
