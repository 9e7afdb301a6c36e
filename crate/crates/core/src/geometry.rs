//! Points, 68-landmark shapes, boxes and 2-D similarity transforms.
//!
//! Image coordinates throughout: x grows rightward, y grows downward, origin
//! at the top-left pixel corner.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use crate::error::{Error, Result};

/// Number of landmarks in the Multi-PIE annotation scheme.
pub const NUM_LANDMARKS: usize = 68;

/// Outer corner of the subject-right eye.
pub const RIGHT_EYE_OUTER: usize = 36;
/// Outer corner of the subject-left eye.
pub const LEFT_EYE_OUTER: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm_sq(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (*self - *other).norm()
    }

    pub fn dot(&self, other: &Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn midpoint(&self, other: &Point2) -> Point2 {
        Point2::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }
}

impl Add for Point2 {
    type Output = Point2;

    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Point2 {
    fn add_assign(&mut self, rhs: Point2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Point2 {
    type Output = Point2;

    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;

    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Exactly 68 landmarks with fixed index semantics:
///
/// | indices | region |
/// |---|---|
/// | 0–16 | jawline |
/// | 17–21 | subject-right brow |
/// | 22–26 | subject-left brow |
/// | 27–30 | nasal midline |
/// | 31–35 | nasal base |
/// | 36–41 | subject-right eye (36 outer, 39 inner corner) |
/// | 42–47 | subject-left eye (42 inner, 45 outer corner) |
/// | 48–59 | outer lip vermilion |
/// | 60–67 | inner lip edge |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape68 {
    points: [Point2; NUM_LANDMARKS],
}

impl Shape68 {
    /// Builds a shape, rejecting non-finite coordinates.
    pub fn new(points: [Point2; NUM_LANDMARKS]) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidShape(format!("landmark {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn from_slice(points: &[Point2]) -> Result<Self> {
        let arr: [Point2; NUM_LANDMARKS] = points.try_into().map_err(|_| {
            Error::InvalidShape(format!(
                "expected {NUM_LANDMARKS} landmarks, got {}",
                points.len()
            ))
        })?;
        Self::new(arr)
    }

    pub fn from_fn(mut f: impl FnMut(usize) -> Point2) -> Self {
        Self {
            points: std::array::from_fn(&mut f),
        }
    }

    pub fn points(&self) -> &[Point2; NUM_LANDMARKS] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point2> {
        self.points.iter()
    }

    pub fn map(&self, mut f: impl FnMut(Point2) -> Point2) -> Shape68 {
        Shape68::from_fn(|i| f(self.points[i]))
    }

    pub fn translated(&self, offset: Point2) -> Shape68 {
        self.map(|p| p + offset)
    }

    pub fn centroid(&self) -> Point2 {
        centroid(&self.points)
    }

    /// Tight axis-aligned extent as `(min, max)` corners.
    pub fn extent(&self) -> (Point2, Point2) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Coordinate-wise arithmetic mean: points are summed in slice order and
    /// then divided by the count.
    pub fn mean(shapes: &[Shape68]) -> Option<Shape68> {
        if shapes.is_empty() {
            return None;
        }
        let n = shapes.len() as f64;
        Some(Shape68::from_fn(|i| {
            let mut sum = Point2::ZERO;
            for s in shapes {
                sum += s.points[i];
            }
            Point2::new(sum.x / n, sum.y / n)
        }))
    }
}

impl Index<usize> for Shape68 {
    type Output = Point2;

    fn index(&self, i: usize) -> &Point2 {
        &self.points[i]
    }
}

impl IndexMut<usize> for Shape68 {
    fn index_mut(&mut self, i: usize) -> &mut Point2 {
        &mut self.points[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(left: f64, top: f64, width: f64, height: f64) -> Result<Self> {
        let b = Self {
            left,
            top,
            width,
            height,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.left, self.top, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "left={} top={} width={} height={}",
                self.left, self.top, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn right(&self) -> f64 {
        self.left + self.width
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    /// Maps an image point into the box's unit frame.
    pub fn to_unit(&self, p: Point2) -> Point2 {
        Point2::new((p.x - self.left) / self.width, (p.y - self.top) / self.height)
    }

    /// Maps a unit-frame point back into the image.
    pub fn from_unit(&self, p: Point2) -> Point2 {
        Point2::new(self.left + p.x * self.width, self.top + p.y * self.height)
    }

    pub fn intersects(&self, width: f64, height: f64) -> bool {
        self.left < width && self.top < height && self.right() > 0.0 && self.bottom() > 0.0
    }
}

/// `p ↦ scale · R(rotation) · p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: Point2,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation: 0.0,
        translation: Point2::ZERO,
    };

    pub fn new(scale: f64, rotation: f64, translation: Point2) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) || !rotation.is_finite() || !translation.is_finite()
        {
            return Err(Error::InvalidTransform(format!(
                "scale={scale} rotation={rotation}"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn linear(&self) -> LinearPart {
        let (s, c) = self.rotation.sin_cos();
        LinearPart {
            a: self.scale * c,
            b: self.scale * s,
        }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        self.linear().apply(p) + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: wrap_angle(self.rotation + other.rotation),
            translation: self.apply(other.translation),
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: wrap_angle(-self.rotation),
            translation: Point2::ZERO,
        };
        let t = inv.linear().apply(self.translation);
        SimilarityTransform {
            translation: Point2::new(-t.x, -t.y),
            ..inv
        }
    }
}

/// Free-standing form of [`SimilarityTransform::apply`].
pub fn apply_transform(t: &SimilarityTransform, p: Point2) -> Point2 {
    t.apply(p)
}

/// Rotation-and-scale part of a similarity, kept as the matrix
/// `[[a, -b], [b, a]]` so hot loops avoid trigonometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPart {
    pub a: f64,
    pub b: f64,
}

impl LinearPart {
    pub const IDENTITY: LinearPart = LinearPart { a: 1.0, b: 0.0 };

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        Point2::new(self.a * p.x - self.b * p.y, self.b * p.x + self.a * p.y)
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    pub fn inverse(&self) -> LinearPart {
        let d = self.a * self.a + self.b * self.b;
        LinearPart {
            a: self.a / d,
            b: -self.b / d,
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut t = theta % two_pi;
    if t > std::f64::consts::PI {
        t -= two_pi;
    } else if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

fn centroid(points: &[Point2]) -> Point2 {
    let n = points.len() as f64;
    let sum = points.iter().fold(Point2::ZERO, |acc, p| acc + *p);
    Point2::new(sum.x / n, sum.y / n)
}

/// Closed-form least-squares similarity mapping `source` onto `target`,
/// returned as `(linear, translation)`. Reflections are excluded.
pub fn procrustes_linear(source: &[Point2], target: &[Point2]) -> Result<(LinearPart, Point2)> {
    if source.len() != target.len() {
        return Err(Error::InvalidShape(format!(
            "point lists differ in length ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 2 {
        return Err(Error::DegenerateShape(
            "need at least two points to align".into(),
        ));
    }
    let sc = centroid(source);
    let tc = centroid(target);
    let mut var = 0.0;
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (s, t) in source.iter().zip(target) {
        let s = *s - sc;
        let t = *t - tc;
        var += s.norm_sq();
        dot += s.x * t.x + s.y * t.y;
        cross += s.x * t.y - s.y * t.x;
    }
    if !(var > 0.0) {
        return Err(Error::DegenerateShape(
            "all source points coincide".into(),
        ));
    }
    let linear = LinearPart {
        a: dot / var,
        b: cross / var,
    };
    let translation = tc - linear.apply(sc);
    Ok((linear, translation))
}

/// Similarity transform minimizing `Σ |T(source_i) − target_i|²`.
pub fn procrustes_align(source: &[Point2], target: &[Point2]) -> Result<SimilarityTransform> {
    let (lin, translation) = procrustes_linear(source, target)?;
    let scale = lin.scale();
    if !(scale > 0.0) {
        return Err(Error::DegenerateShape(
            "target collapses to a single point".into(),
        ));
    }
    Ok(SimilarityTransform {
        scale,
        rotation: lin.b.atan2(lin.a),
        translation,
    })
}

/// Euclidean distance between the outer eye corners (36 and 45).
pub fn interocular_distance(s: &Shape68) -> Result<f64> {
    let d = s[RIGHT_EYE_OUTER].distance(&s[LEFT_EYE_OUTER]);
    if !(d > 0.0) {
        return Err(Error::DegenerateShape(
            "outer eye corners coincide".into(),
        ));
    }
    Ok(d)
}

/// Left/right landmark correspondence under horizontal reflection. Indices
/// on the midline map to themselves.
pub const MIRROR_INDEX: [usize; NUM_LANDMARKS] = mirror_table();

const fn mirror_table() -> [usize; NUM_LANDMARKS] {
    let mut t = [0usize; NUM_LANDMARKS];
    let mut i = 0;
    while i < NUM_LANDMARKS {
        t[i] = i;
        i += 1;
    }
    const PAIRS: [(usize, usize); 29] = [
        // jaw
        (0, 16),
        (1, 15),
        (2, 14),
        (3, 13),
        (4, 12),
        (5, 11),
        (6, 10),
        (7, 9),
        // brows
        (17, 26),
        (18, 25),
        (19, 24),
        (20, 23),
        (21, 22),
        // nose base
        (31, 35),
        (32, 34),
        // eyes
        (36, 45),
        (37, 44),
        (38, 43),
        (39, 42),
        (40, 47),
        (41, 46),
        // outer lips
        (48, 54),
        (49, 53),
        (50, 52),
        (59, 55),
        (58, 56),
        // inner lips
        (60, 64),
        (61, 63),
        (67, 65),
    ];
    let mut k = 0;
    while k < PAIRS.len() {
        let (a, b) = PAIRS[k];
        t[a] = b;
        t[b] = a;
        k += 1;
    }
    t
}

/// Reflects about the vertical line `x = axis_x` and re-indexes so the
/// result is again a valid Shape68.
pub fn mirror_shape(s: &Shape68, axis_x: f64) -> Shape68 {
    Shape68::from_fn(|i| {
        let p = s[MIRROR_INDEX[i]];
        Point2::new(2.0 * axis_x - p.x, p.y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tri() -> Vec<Point2> {
        vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ]
    }

    #[test]
    fn identity_alignment() {
        let s = tri();
        let t = procrustes_align(&s, &s).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let s = tri();
        let target: Vec<_> = s.iter().map(|p| *p + Point2::new(5.0, -3.0)).collect();
        let t = procrustes_align(&s, &target).unwrap();
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(t.rotation.abs() < 1e-12);
        assert!((t.translation.x - 5.0).abs() < 1e-12);
        assert!((t.translation.y + 3.0).abs() < 1e-12);
    }

    #[test]
    fn scale_and_quarter_turn() {
        let s = tri();
        // (x, y) -> 2 * (-y, x)
        let target: Vec<_> = s.iter().map(|p| Point2::new(-2.0 * p.y, 2.0 * p.x)).collect();
        let t = procrustes_align(&s, &target).unwrap();
        assert!((t.scale - 2.0).abs() < 1e-9);
        assert!((t.rotation - PI / 2.0).abs() < 1e-9);
        assert!(t.translation.norm() < 1e-9);
    }

    #[test]
    fn coincident_source_is_degenerate() {
        let s = vec![Point2::new(3.0, 3.0); 4];
        let t = tri().into_iter().chain([Point2::ZERO]).collect::<Vec<_>>();
        assert!(matches!(
            procrustes_align(&s, &t),
            Err(Error::DegenerateShape(_))
        ));
    }

    #[test]
    fn apply_examples() {
        let p = SimilarityTransform::IDENTITY.apply(Point2::new(7.0, 9.0));
        assert_eq!(p, Point2::new(7.0, 9.0));
        let t = SimilarityTransform::new(2.0, 0.0, Point2::new(1.0, 1.0)).unwrap();
        assert_eq!(t.apply(Point2::new(3.0, 4.0)), Point2::new(7.0, 9.0));
        let t = SimilarityTransform::new(1.0, PI, Point2::ZERO).unwrap();
        let q = apply_transform(&t, Point2::new(1.0, 0.0));
        assert!((q.x + 1.0).abs() < 1e-12 && q.y.abs() < 1e-12);
    }

    #[test]
    fn compose_and_invert() {
        let t = SimilarityTransform::new(1.5, 0.3, Point2::new(2.0, -1.0)).unwrap();
        let u = SimilarityTransform::new(0.5, -1.2, Point2::new(-4.0, 7.0)).unwrap();
        let p = Point2::new(3.0, 11.0);
        let a = t.compose(&u).apply(p);
        let b = t.apply(u.apply(p));
        assert!(a.distance(&b) < 1e-12);
        let back = t.inverse().apply(t.apply(p));
        assert!(back.distance(&p) < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_scale() {
        assert!(SimilarityTransform::new(0.0, 0.0, Point2::ZERO).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn interocular_examples() {
        let mut s = Shape68::from_fn(|i| Point2::new(i as f64, 2.0 * i as f64));
        s[36] = Point2::new(100.0, 200.0);
        s[45] = Point2::new(160.0, 280.0);
        assert!((interocular_distance(&s).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(
            interocular_distance(&mirror_shape(&s, 13.0)).unwrap(),
            interocular_distance(&s).unwrap()
        );
        s[45] = s[36];
        assert!(interocular_distance(&s).is_err());
    }

    #[test]
    fn mirror_table_is_involution() {
        for i in 0..NUM_LANDMARKS {
            assert_eq!(MIRROR_INDEX[MIRROR_INDEX[i]], i);
        }
        for fixed in [27, 28, 29, 30, 33, 51, 57, 62, 66, 8] {
            assert_eq!(MIRROR_INDEX[fixed], fixed);
        }
    }

    #[test]
    fn wrong_length_rejected() {
        let pts = vec![Point2::ZERO; 67];
        assert!(Shape68::from_slice(&pts).is_err());
    }
}
