//! Synthetic face corpus.
//!
//! Each subject gets a symmetric 68-landmark face built from a canonical
//! template plus subject-level proportions. Each image then applies an
//! expression, an optional unilateral flaccid-palsy droop, small regional
//! deformations and a global similarity, and renders a grayscale picture
//! whose brows, eyes, nose, lips and head outline are drawn from those
//! landmarks. Ground truth is the generating shape.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::dataset::{
    synthesize_box, AnnotatedImage, Cohort, DatasetIndex, Demographics, LoadedImage, SubjectMeta,
};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Shape68, MIRROR_INDEX, NUM_LANDMARKS};
use crate::raster::GrayImage;
use crate::rng::Rng;

/// The eight expression labels cycled through per subject.
pub const EXPRESSIONS: [&str; 8] = [
    "rest",
    "brow_raise",
    "gentle_eye_closure",
    "full_eye_closure",
    "nose_wrinkle",
    "closed_smile",
    "open_smile",
    "lip_pucker",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub images_per_subject: usize,
    /// Palsy severity in `[0, 1]`; zero yields symmetric control faces.
    pub asymmetry: f64,
    pub seed: u64,
    /// Square image side in pixels.
    pub image_size: u32,
    /// Prefix for subject ids, so corpora can be merged.
    pub subject_prefix: String,
    pub box_jitter: f64,
}

impl SynthConfig {
    pub fn new(n_subjects: usize, images_per_subject: usize, asymmetry: f64, seed: u64) -> Self {
        Self {
            n_subjects,
            images_per_subject,
            asymmetry,
            seed,
            image_size: 160,
            subject_prefix: if asymmetry > 0.0 { "p".into() } else { "c".into() },
            box_jitter: 0.03,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.images_per_subject == 0 {
            return Err(Error::InvalidInput(
                "synthetic corpus needs at least one subject and one image".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.asymmetry) {
            return Err(Error::InvalidInput(format!(
                "asymmetry {} outside [0, 1]",
                self.asymmetry
            )));
        }
        if self.image_size < 64 {
            return Err(Error::InvalidInput("image_size must be at least 64".into()));
        }
        Ok(())
    }
}

/// Canonical symmetric face in inter-ocular units: outer eye corners at
/// `(∓0.5, 0)`, nose pointing down the +y axis.
pub fn canonical_template() -> Shape68 {
    let mut p = [Point2::ZERO; NUM_LANDMARKS];
    // jaw: half-ellipse from the subject-right ear, under the chin, to the left ear
    for (k, q) in p.iter_mut().enumerate().take(17) {
        let t = std::f64::consts::PI * k as f64 / 16.0;
        *q = Point2::new(-0.9 * t.cos(), 0.05 + 1.25 * t.sin());
    }
    // subject-right brow, outer to inner
    for k in 0..5 {
        let x = -0.78 + k as f64 * 0.16;
        let y = -0.20 - 0.10 * (std::f64::consts::PI * (k as f64 + 1.0) / 6.0).sin();
        p[17 + k] = Point2::new(x, y);
    }
    for (k, y) in [-0.12, 0.05, 0.22, 0.40].into_iter().enumerate() {
        p[27 + k] = Point2::new(0.0, y);
    }
    p[31] = Point2::new(-0.18, 0.49);
    p[32] = Point2::new(-0.09, 0.53);
    p[33] = Point2::new(0.0, 0.55);
    let right_eye = [
        (-0.50, 0.0),
        (-0.40, -0.075),
        (-0.25, -0.075),
        (-0.15, 0.0),
        (-0.25, 0.055),
        (-0.40, 0.055),
    ];
    for (k, (x, y)) in right_eye.into_iter().enumerate() {
        p[36 + k] = Point2::new(x, y);
    }
    let outer_lip = [
        (48, -0.32, 0.80),
        (49, -0.20, 0.74),
        (50, -0.08, 0.71),
        (51, 0.0, 0.73),
        (57, 0.0, 0.95),
        (58, -0.08, 0.94),
        (59, -0.20, 0.90),
        (60, -0.26, 0.80),
        (61, -0.10, 0.785),
        (62, 0.0, 0.79),
        (66, 0.0, 0.81),
        (67, -0.10, 0.815),
    ];
    for (i, x, y) in outer_lip {
        p[i] = Point2::new(x, y);
    }
    // complete the left side by reflection
    for i in 0..NUM_LANDMARKS {
        let m = MIRROR_INDEX[i];
        if m != i && p[i] == Point2::ZERO {
            p[i] = Point2::new(-p[m].x, p[m].y);
        }
    }
    Shape68::from_fn(|i| p[i])
}

/// Which facial half a landmark belongs to and how strongly (0 on the
/// midline, 1 laterally). Negative x is the subject-right half.
fn lateral_weight(template: &Shape68, i: usize) -> f64 {
    let x = template[i].x;
    match i {
        48..=67 => (x.abs() / 0.32).min(1.0),
        31..=35 => (x.abs() / 0.18).min(1.0) * 0.5,
        _ if x.abs() < 1e-9 => 0.0,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy)]
struct SubjectTraits {
    face_width: f64,
    face_length: f64,
    brow_lift: f64,
    eye_open: f64,
    nose_length: f64,
    mouth_width: f64,
    mouth_drop: f64,
    skin: f64,
    brow_tone: f64,
    lip_tone: f64,
    /// -1 for the subject-right side, +1 for the left.
    palsy_side: f64,
    severity: f64,
}

fn draw_traits(rng: &mut Rng, asymmetry: f64) -> SubjectTraits {
    SubjectTraits {
        face_width: 1.0 + 0.08 * rng.signed(),
        face_length: 1.0 + 0.08 * rng.signed(),
        brow_lift: 0.05 * rng.signed(),
        eye_open: 1.0 + 0.25 * rng.signed(),
        nose_length: 0.05 * rng.signed(),
        mouth_width: 1.0 + 0.12 * rng.signed(),
        mouth_drop: 0.05 * rng.signed(),
        skin: rng.uniform(150.0, 200.0),
        brow_tone: rng.uniform(40.0, 80.0),
        lip_tone: rng.uniform(60.0, 100.0),
        palsy_side: if rng.unit() < 0.5 { -1.0 } else { 1.0 },
        severity: asymmetry * rng.uniform(0.75, 1.25),
    }
}

fn subject_face(t: &SubjectTraits) -> Shape68 {
    let base = canonical_template();
    Shape68::from_fn(|i| {
        let mut q = base[i];
        match i {
            0..=16 => {
                q.x *= t.face_width;
                q.y = 0.05 + (q.y - 0.05) * t.face_length;
            }
            17..=26 => q.y -= t.brow_lift,
            28..=35 => q.y += t.nose_length * (q.y - 0.0) / 0.55,
            37 | 38 | 43 | 44 => q.y *= t.eye_open,
            40 | 41 | 46 | 47 => q.y *= t.eye_open,
            48..=67 => {
                q.x *= t.mouth_width;
                q.y += t.mouth_drop;
            }
            _ => {}
        }
        q
    })
}

/// Symmetric displacement field of one expression at unit intensity, in
/// inter-ocular units.
fn expression_field(face: &Shape68, expression: usize) -> [Point2; NUM_LANDMARKS] {
    let mut d = [Point2::ZERO; NUM_LANDMARKS];
    let side = |i: usize| face[i].x.signum();
    match expression {
        1 => {
            for v in d.iter_mut().take(27).skip(17) {
                v.y = -0.10;
            }
            for i in [37, 38, 43, 44] {
                d[i].y = -0.02;
            }
        }
        2 | 3 => {
            let closure = if expression == 2 { 0.55 } else { 0.95 };
            for (upper, lower) in [(37, 41), (38, 40), (43, 47), (44, 46)] {
                d[upper].y = closure * (face[lower].y - face[upper].y);
            }
            if expression == 3 {
                for v in d.iter_mut().take(27).skip(17) {
                    v.y = 0.03;
                }
            }
        }
        4 => {
            for i in 31..=35 {
                d[i].y = -0.04;
            }
            for i in [20, 21, 22, 23] {
                d[i].y = 0.035;
            }
            for i in 48..=54 {
                d[i].y = -0.02;
            }
        }
        5 | 6 => {
            let (lift, spread) = if expression == 5 { (0.06, 0.06) } else { (0.08, 0.08) };
            for i in 48..=67 {
                let w = (face[i].x.abs() / 0.32).min(1.0);
                d[i] = Point2::new(side(i) * spread * w, -lift * w * w);
            }
            if expression == 6 {
                for i in [55, 56, 57, 58, 59, 65, 66, 67] {
                    d[i].y += 0.13;
                }
                for i in 5..=11 {
                    d[i].y += 0.06;
                }
            }
        }
        7 => {
            for i in 48..=67 {
                d[i].x = -0.35 * face[i].x;
                d[i].y = -0.01;
            }
        }
        _ => {}
    }
    d
}

/// Resting droop of the paralysed half at unit severity.
fn droop_field(face: &Shape68, side: f64) -> [Point2; NUM_LANDMARKS] {
    let mut d = [Point2::ZERO; NUM_LANDMARKS];
    let template = canonical_template();
    for i in 0..NUM_LANDMARKS {
        if face[i].x * side <= 1e-9 {
            continue;
        }
        let w = lateral_weight(&template, i);
        d[i] = match i {
            17..=26 => Point2::new(0.0, 0.10),
            40 | 41 | 46 | 47 => Point2::new(0.0, 0.04),
            36 | 45 => Point2::new(0.0, 0.015),
            31..=35 => Point2::new(0.0, 0.03 * w),
            48..=67 => Point2::new(-side * 0.04 * w, 0.12 * w),
            _ => Point2::ZERO,
        };
    }
    d
}

fn image_shape(
    face: &Shape68,
    traits: &SubjectTraits,
    expression: usize,
    rng: &mut Rng,
) -> Shape68 {
    let template = canonical_template();
    let intensity = rng.uniform(0.7, 1.3);
    let expr = expression_field(face, expression);
    let droop = droop_field(face, traits.palsy_side);
    let s = traits.severity.min(1.0);

    // symmetric regional offsets: (brows, eyes, nose, mouth)
    let regions: [Point2; 4] = std::array::from_fn(|_| {
        Point2::new(0.012 * rng.signed(), 0.012 * rng.signed())
    });
    let region_of = |i: usize| match i {
        17..=26 => Some(0),
        36..=47 => Some(1),
        27..=35 => Some(2),
        48..=67 => Some(3),
        _ => None,
    };

    let mut shape = Shape68::from_fn(|i| {
        let mut q = face[i];
        let affected = face[i].x * traits.palsy_side > 1e-9;
        let paralysis = if affected {
            1.0 - s * lateral_weight(&template, i)
        } else {
            1.0
        };
        q += expr[i] * (intensity * paralysis);
        q += droop[i] * traits.severity;
        if let Some(r) = region_of(i) {
            let o = regions[r];
            // mirror the horizontal offset so that pairs stay symmetric
            let dx = if q.x < 0.0 { o.x } else if q.x > 0.0 { -o.x } else { 0.0 };
            q += Point2::new(dx, o.y);
        }
        q
    });
    for i in 0..NUM_LANDMARKS {
        shape[i] += Point2::new(0.002 * rng.normal(), 0.002 * rng.normal());
    }
    shape
}

/// Places an inter-ocular-unit shape into the image.
fn pose(shape: &Shape68, size: u32, rng: &mut Rng) -> Shape68 {
    let side = size as f64;
    let iod = side * rng.uniform(0.28, 0.34);
    let theta = rng.signed() * 6f64.to_radians();
    let (s, c) = theta.sin_cos();
    let center = Point2::new(
        side * (0.5 + 0.04 * rng.signed()),
        side * (0.36 + 0.04 * rng.signed()),
    );
    shape.map(|p| {
        Point2::new(
            center.x + iod * (c * p.x - s * p.y),
            center.y + iod * (s * p.x + c * p.y),
        )
    })
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Canvas {
    fn fill_polygon(&mut self, poly: &[Point2], value: f32) {
        self.fill_polygon_masked(poly, value, |_, _| true);
    }

    /// Even–odd fill sampled at pixel centres.
    fn fill_polygon_masked(&mut self, poly: &[Point2], value: f32, mask: impl Fn(f64, f64) -> bool) {
        if poly.len() < 3 {
            return;
        }
        let ymin = poly.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let ymax = poly.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let y0 = ymin.floor().max(0.0) as usize;
        let y1 = (ymax.ceil().max(0.0) as usize).min(self.h);
        let mut xs = Vec::new();
        for row in y0..y1 {
            let yc = row as f64 + 0.5;
            xs.clear();
            for k in 0..poly.len() {
                let a = poly[k];
                let b = poly[(k + 1) % poly.len()];
                if (a.y <= yc) != (b.y <= yc) {
                    xs.push(a.x + (yc - a.y) / (b.y - a.y) * (b.x - a.x));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                let start = (span[0] - 0.5).ceil().max(0.0) as usize;
                let end = ((span[1] - 0.5).ceil().max(0.0) as usize).min(self.w);
                for col in start..end {
                    if mask(col as f64 + 0.5, yc) {
                        self.px[row * self.w + col] = value;
                    }
                }
            }
        }
    }

    fn thick_polyline(&mut self, pts: &[Point2], half_width: f64, value: f32) {
        for seg in pts.windows(2) {
            let d = seg[1] - seg[0];
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let n = Point2::new(-d.y / len * half_width, d.x / len * half_width);
            self.fill_polygon(&[seg[0] + n, seg[1] + n, seg[1] - n, seg[0] - n], value);
        }
    }

    fn disc(&mut self, c: Point2, r: f64, value: f32, mask: impl Fn(f64, f64) -> bool) {
        let poly: Vec<Point2> = (0..24)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / 24.0;
                Point2::new(c.x + r * t.cos(), c.y + r * t.sin())
            })
            .collect();
        self.fill_polygon_masked(&poly, value, mask);
    }
}

fn point_in_polygon(poly: &[Point2], x: f64, y: f64) -> bool {
    let mut inside = false;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        if (a.y <= y) != (b.y <= y) && x < a.x + (y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
    }
    inside
}

fn render(shape: &Shape68, traits: &SubjectTraits, size: u32, rng: &mut Rng) -> GrayImage {
    let n = size as usize;
    let mut canvas = Canvas {
        w: n,
        h: n,
        px: vec![0.0; n * n],
    };
    let g0 = rng.uniform(30.0, 70.0);
    let g1 = rng.uniform(50.0, 110.0);
    let dir = rng.uniform(0.0, std::f64::consts::TAU);
    let (ds, dc) = dir.sin_cos();
    for row in 0..n {
        for col in 0..n {
            let t = ((col as f64 / n as f64 - 0.5) * dc + (row as f64 / n as f64 - 0.5) * ds) + 0.5;
            canvas.px[row * n + col] = (g0 + (g1 - g0) * t) as f32;
        }
    }
    let pts = shape.points();
    let iod = pts[36].distance(&pts[45]);
    let skin = traits.skin as f32;

    // head: jaw plus a forehead arc over the brows
    let mut head: Vec<Point2> = pts[0..17].to_vec();
    let top = pts[27] + (pts[27] - pts[8]) * 0.45;
    let (left_ear, right_ear) = (pts[16], pts[0]);
    for k in 1..12 {
        let t = k as f64 / 12.0;
        let a = std::f64::consts::PI * t;
        let mid = left_ear.midpoint(&right_ear);
        let half = (left_ear - right_ear) * 0.5;
        let up = top - mid;
        head.push(mid + half * a.cos() + up * a.sin());
    }
    canvas.fill_polygon(&head, skin);

    let brow_value = traits.brow_tone as f32;
    canvas.thick_polyline(&pts[17..22], 0.035 * iod, brow_value);
    canvas.thick_polyline(&pts[22..27], 0.035 * iod, brow_value);

    for eye in [&pts[36..42], &pts[42..48]] {
        canvas.fill_polygon(eye, 225.0);
        let c = eye.iter().fold(Point2::ZERO, |a, p| a + *p) * (1.0 / 6.0);
        let poly = eye.to_vec();
        canvas.disc(c, 0.06 * iod, 45.0, |x, y| point_in_polygon(&poly, x, y));
        canvas.thick_polyline(&[eye[0], eye[1], eye[2], eye[3]], 0.012 * iod, skin * 0.45);
    }

    canvas.thick_polyline(&pts[27..31], 0.02 * iod, skin * 0.85);
    canvas.thick_polyline(&pts[31..36], 0.02 * iod, skin * 0.6);
    for i in [32, 34] {
        canvas.disc(pts[i] - Point2::new(0.0, 0.02 * iod), 0.025 * iod, skin * 0.4, |_, _| true);
    }

    canvas.fill_polygon(&pts[48..60], traits.lip_tone as f32);
    canvas.fill_polygon(&pts[60..68], 25.0);

    let mut img = ::image::ImageBuffer::<::image::Luma<f32>, Vec<f32>>::from_raw(
        size,
        size,
        canvas.px,
    )
    .expect("buffer matches size");
    img = ::image::imageops::blur(&img, 1.0);
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| (v as f64 + 4.0 * rng.normal()).round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayImage::new(size, size, data).expect("size checked")
}

/// Generates the corpus in memory. Image paths are `images/<subject>_<k>.png`.
pub fn synthesize_corpus(cfg: &SynthConfig) -> Result<Vec<LoadedImage>> {
    cfg.validate()?;
    let cohort = if cfg.asymmetry > 0.0 {
        Cohort::Patient
    } else {
        Cohort::Control
    };
    let digits = cfg.n_subjects.to_string().len().max(3);
    let mut out = Vec::with_capacity(cfg.n_subjects * cfg.images_per_subject);
    for s in 0..cfg.n_subjects {
        let mut rng = Rng::derive(cfg.seed, s as u64);
        let traits = draw_traits(&mut rng, cfg.asymmetry);
        let face = subject_face(&traits);
        let subject_id = format!("{}{:0digits$}", cfg.subject_prefix, s);
        let first_expression = rng.below(EXPRESSIONS.len());
        let age = rng.uniform(8.0, 85.0).round();
        for k in 0..cfg.images_per_subject {
            let expression = (first_expression + k) % EXPRESSIONS.len();
            let local = image_shape(&face, &traits, expression, &mut rng);
            let gt = pose(&local, cfg.image_size, &mut rng);
            let pixels = render(&gt, &traits, cfg.image_size, &mut rng);
            let bbox = synthesize_box(&gt, cfg.box_jitter, rng.next_u64())?;
            let record = AnnotatedImage {
                image_path: PathBuf::from(format!("images/{subject_id}_{k}.png")),
                size: Some((cfg.image_size, cfg.image_size)),
                bbox,
                annotations: BTreeMap::new(),
                ground_truth: Some(gt),
                meta: SubjectMeta {
                    subject_id: subject_id.clone(),
                    cohort,
                    expression: EXPRESSIONS[expression].to_string(),
                    demographics: Demographics {
                        age: Some(age),
                        ..Demographics::default()
                    },
                },
            };
            out.push(LoadedImage { record, pixels });
        }
    }
    Ok(out)
}

/// Writes the corpus under `out_dir` (`images/*.png` and `dataset.xml`)
/// and returns its index.
pub fn generate_synthetic_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<DatasetIndex> {
    let images = synthesize_corpus(cfg)?;
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    for img in &images {
        img.pixels.save_png(&out_dir.join(&img.record.image_path))?;
    }
    let index = DatasetIndex::new(
        out_dir.to_path_buf(),
        images.into_iter().map(|i| i.record).collect(),
    );
    let xml_path = out_dir.join("dataset.xml");
    std::fs::write(&xml_path, index.to_xml_string()).map_err(|e| Error::io(&xml_path, e))?;
    Ok(index)
}
