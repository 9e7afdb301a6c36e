//! Clinical facial measurements from a landmark shape: brow height,
//! palpebral fissure height and oral commissure excursion on each side.
//!
//! "Left" and "right" are the subject's. Vertical distances are taken along
//! the image y axis, so brow height is translation invariant but not
//! rotation invariant. The pupil is approximated by the centroid of the six
//! eye landmarks and the facial midline by a total-least-squares line
//! through the nasal bridge (27–30) and subnasale (33).

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{interocular_distance, Point2, Shape68};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

struct SideLandmarks {
    eye: [usize; 6],
    brow: [usize; 5],
    upper_lid: [usize; 2],
    lower_lid: [usize; 2],
    commissure: usize,
}

const RIGHT: SideLandmarks = SideLandmarks {
    eye: [36, 37, 38, 39, 40, 41],
    brow: [17, 18, 19, 20, 21],
    upper_lid: [37, 38],
    lower_lid: [40, 41],
    commissure: 48,
};

const LEFT: SideLandmarks = SideLandmarks {
    eye: [42, 43, 44, 45, 46, 47],
    brow: [22, 23, 24, 25, 26],
    upper_lid: [43, 44],
    lower_lid: [46, 47],
    commissure: 54,
};

fn landmarks(side: Side) -> &'static SideLandmarks {
    match side {
        Side::Left => &LEFT,
        Side::Right => &RIGHT,
    }
}

const MIDLINE_LANDMARKS: [usize; 5] = [27, 28, 29, 30, 33];
const LOWER_LIP_MIDPOINT: usize = 57;

/// Infinite line through two distinct points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MidlineModel {
    pub a: Point2,
    pub b: Point2,
}

impl MidlineModel {
    pub fn new(a: Point2, b: Point2) -> Result<Self> {
        if a == b || !a.is_finite() || !b.is_finite() {
            return Err(Error::DegenerateShape("midline points coincide".into()));
        }
        Ok(Self { a, b })
    }

    /// Unit direction from `a` towards `b`.
    pub fn direction(&self) -> Point2 {
        let d = self.b - self.a;
        d * (1.0 / d.norm())
    }

    pub fn project(&self, p: Point2) -> Point2 {
        let u = self.direction();
        self.a + u * (p - self.a).dot(&u)
    }

    pub fn distance_to(&self, p: Point2) -> f64 {
        p.distance(&self.project(p))
    }
}

/// Total-least-squares fit through landmarks 27–30 and 33. The returned
/// points are the centroid and the centroid plus a unit direction.
pub fn estimate_midline(s: &Shape68) -> Result<MidlineModel> {
    let pts = MIDLINE_LANDMARKS.map(|i| s[i]);
    let n = pts.len() as f64;
    let c = pts.iter().fold(Point2::ZERO, |acc, p| acc + *p) * (1.0 / n);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in &pts {
        let d = *p - c;
        sxx += d.x * d.x;
        syy += d.y * d.y;
        sxy += d.x * d.y;
    }
    if sxx == 0.0 && syy == 0.0 {
        return Err(Error::DegenerateShape("midline landmarks coincide".into()));
    }
    // principal axis of the 2×2 scatter matrix
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = Point2::new(theta.cos(), theta.sin());
    MidlineModel::new(c, c + dir)
}

/// Centroid of the six eye landmarks on `side`.
pub fn pupil_proxy(s: &Shape68, side: Side) -> Point2 {
    let eye = landmarks(side).eye;
    eye.iter().fold(Point2::ZERO, |acc, &i| acc + s[i]) * (1.0 / eye.len() as f64)
}

/// Brow y at `x` by linear interpolation along the brow landmarks sorted by
/// x, clamped to the polyline's x range.
fn brow_y_at(s: &Shape68, brow: &[usize; 5], x: f64) -> f64 {
    let mut pts = brow.map(|i| s[i]);
    pts.sort_by(|p, q| p.x.total_cmp(&q.x));
    if x <= pts[0].x {
        return pts[0].y;
    }
    if x >= pts[4].x {
        return pts[4].y;
    }
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        if x <= q.x {
            if q.x == p.x {
                return p.y.min(q.y);
            }
            let t = (x - p.x) / (q.x - p.x);
            return p.y + t * (q.y - p.y);
        }
    }
    pts[4].y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideMetrics {
    pub brow_height: f64,
    pub palpebral_fissure_height: f64,
    pub commissure_excursion: f64,
}

impl SideMetrics {
    pub const NAMES: [&'static str; 3] = [
        "brow_height",
        "palpebral_fissure_height",
        "commissure_excursion",
    ];

    pub fn values(&self) -> [f64; 3] {
        [
            self.brow_height,
            self.palpebral_fissure_height,
            self.commissure_excursion,
        ]
    }

    fn zip(&self, other: &SideMetrics, f: impl Fn(f64, f64) -> f64) -> SideMetrics {
        SideMetrics {
            brow_height: f(self.brow_height, other.brow_height),
            palpebral_fissure_height: f(self.palpebral_fissure_height, other.palpebral_fissure_height),
            commissure_excursion: f(self.commissure_excursion, other.commissure_excursion),
        }
    }

    fn scaled(&self, k: f64) -> SideMetrics {
        self.zip(self, |a, _| a * k)
    }
}

/// Pixel measurements per side plus the inter-ocular distance used for the
/// percentage forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacialMetrics {
    pub left: SideMetrics,
    pub right: SideMetrics,
    pub interocular_distance: f64,
}

impl FacialMetrics {
    pub fn side(&self, side: Side) -> &SideMetrics {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// `left − right` in pixels.
    pub fn delta(&self) -> SideMetrics {
        self.left.zip(&self.right, |l, r| l - r)
    }

    /// Side values as percent of inter-ocular distance.
    pub fn percent(&self, side: Side) -> SideMetrics {
        self.side(side).scaled(100.0 / self.interocular_distance)
    }

    pub fn delta_percent(&self) -> SideMetrics {
        self.delta().scaled(100.0 / self.interocular_distance)
    }

    /// Names of the measurements whose |delta| exceeds `threshold_percent`
    /// of the inter-ocular distance.
    pub fn flagged(&self, threshold_percent: f64) -> Vec<&'static str> {
        SideMetrics::NAMES
            .iter()
            .zip(self.delta_percent().values())
            .filter(|(_, d)| d.abs() > threshold_percent)
            .map(|(n, _)| *n)
            .collect()
    }
}

fn side_metrics(s: &Shape68, side: Side, midline: &MidlineModel) -> SideMetrics {
    let lm = landmarks(side);
    let pupil = pupil_proxy(s, side);
    let brow_y = brow_y_at(s, &lm.brow, pupil.x);
    let upper = s[lm.upper_lid[0]].midpoint(&s[lm.upper_lid[1]]);
    let lower = s[lm.lower_lid[0]].midpoint(&s[lm.lower_lid[1]]);
    let anchor = midline.project(s[LOWER_LIP_MIDPOINT]);
    SideMetrics {
        brow_height: (pupil.y - brow_y).abs(),
        palpebral_fissure_height: upper.distance(&lower),
        commissure_excursion: s[lm.commissure].distance(&anchor),
    }
}

pub fn compute_metrics(s: &Shape68) -> Result<FacialMetrics> {
    let iod = interocular_distance(s)?;
    let midline = estimate_midline(s)?;
    Ok(FacialMetrics {
        left: side_metrics(s, Side::Left, &midline),
        right: side_metrics(s, Side::Right, &midline),
        interocular_distance: iod,
    })
}

/// One row of the metrics table.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub image_id: String,
    pub subject_id: String,
    pub expression: String,
    pub metrics: FacialMetrics,
}

/// Default asymmetry flag threshold, percent of inter-ocular distance.
pub const DEFAULT_FLAG_THRESHOLD: f64 = 10.0;

/// CSV with pixel and percent values per side, their deltas, and a `flag`
/// column listing measurements whose |delta| exceeds the threshold
/// (`;`-separated, empty when none).
pub fn metrics_to_csv(rows: &[MetricsRow], threshold_percent: f64) -> String {
    let mut header = vec![
        "image".to_string(),
        "subject".into(),
        "expression".into(),
        "interocular_distance".into(),
    ];
    for unit in ["px", "pct"] {
        for name in SideMetrics::NAMES {
            for part in ["right", "left", "delta"] {
                header.push(format!("{name}_{part}_{unit}"));
            }
        }
    }
    header.push("flag".into());

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let m = &r.metrics;
        let mut rec = vec![
            r.image_id.clone(),
            r.subject_id.clone(),
            r.expression.clone(),
            m.interocular_distance.to_string(),
        ];
        let px = (m.right.values(), m.left.values(), m.delta().values());
        let pct = (
            m.percent(Side::Right).values(),
            m.percent(Side::Left).values(),
            m.delta_percent().values(),
        );
        for (right, left, delta) in [px, pct] {
            for k in 0..3 {
                rec.push(right[k].to_string());
                rec.push(left[k].to_string());
                rec.push(delta[k].to_string());
            }
        }
        rec.push(m.flagged(threshold_percent).join(";"));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
