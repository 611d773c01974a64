//! Cubic Bézier strokes and the sketch document that carries them.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul, Sub};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("curve parameter t={0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("need at least 2 samples per stroke, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite coordinate in stroke `{0}`")]
    NonFinite(String),
    #[error("stroke `{id}` has invalid width {width}")]
    InvalidWidth { id: String, width: f64 },
    #[error("stroke `{id}` has opacity {opacity} outside [0, 1]")]
    InvalidOpacity { id: String, opacity: f64 },
    #[error("duplicate stroke id `{0}`")]
    DuplicateId(String),
    #[error("stroke `{0}` lies outside the extended canvas bounds")]
    OutOfBounds(String),
    #[error("canvas dimensions must be positive, got {0}x{1}")]
    EmptyCanvas(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ZERO: Point = Point { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    /// Exact at `t = 0`, `t = 1`, and when both points coincide.
    pub fn lerp(self, other: Point, t: f64) -> Point {
        if self == other {
            return self;
        }
        self * (1.0 - t) + other * t
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Cubic Bernstein basis at `t`. Weights are nonnegative and sum to one on [0, 1].
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicBezier {
    pub points: [Point; 4],
}

impl CubicBezier {
    pub const fn new(p0: Point, p1: Point, p2: Point, p3: Point) -> Self {
        Self {
            points: [p0, p1, p2, p3],
        }
    }

    /// Exact degree elevation of the segment `a`–`b`.
    pub fn line(a: Point, b: Point) -> Self {
        Self::new(a, a.lerp(b, 1.0 / 3.0), a.lerp(b, 2.0 / 3.0), b)
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.is_finite())
    }

    /// Evaluates the curve without range checking `t`.
    pub fn point_at(&self, t: f64) -> Point {
        let [p0, p1, p2, p3] = self.points;
        let a = p0.lerp(p1, t);
        let b = p1.lerp(p2, t);
        let c = p2.lerp(p3, t);
        a.lerp(b, t).lerp(b.lerp(c, t), t)
    }

    /// Splits at `t` with de Casteljau's construction.
    pub fn split_at(&self, t: f64) -> (CubicBezier, CubicBezier) {
        let [p0, p1, p2, p3] = self.points;
        let a = p0.lerp(p1, t);
        let b = p1.lerp(p2, t);
        let c = p2.lerp(p3, t);
        let d = a.lerp(b, t);
        let e = b.lerp(c, t);
        let f = d.lerp(e, t);
        (CubicBezier::new(p0, a, d, f), CubicBezier::new(f, e, c, p3))
    }

    /// Cuts the curve into `n` pieces of equal parameter span.
    pub fn subdivide(&self, n: usize) -> Vec<CubicBezier> {
        let mut pieces = Vec::with_capacity(n);
        let mut rest = *self;
        for i in 0..n.saturating_sub(1) {
            let (head, tail) = rest.split_at(1.0 / (n - i) as f64);
            pieces.push(head);
            rest = tail;
        }
        pieces.push(rest);
        pieces
    }

    pub fn translated(&self, dx: f64, dy: f64) -> CubicBezier {
        let offset = Point::new(dx, dy);
        CubicBezier {
            points: self.points.map(|p| p + offset),
        }
    }

    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        (lo, hi)
    }
}

/// Evaluates `curve` at `t` using the cubic Bernstein basis.
pub fn eval_bezier(curve: &CubicBezier, t: f64) -> Result<Point, GeomError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(GeomError::ParameterOutOfRange(t));
    }
    Ok(curve.point_at(t))
}

/// Parameters `i / (k - 1)` for `i = 0..k`.
pub fn sample_params(k: usize) -> Result<Vec<f64>, GeomError> {
    if k < 2 {
        return Err(GeomError::TooFewSamples(k));
    }
    let last = (k - 1) as f64;
    Ok((0..k).map(|i| i as f64 / last).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrokeTag {
    Input,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub id: String,
    pub curve: CubicBezier,
    pub width: f64,
    pub opacity: f64,
    pub tag: StrokeTag,
}

impl Stroke {
    pub fn new(id: impl Into<String>, curve: CubicBezier, width: f64, opacity: f64, tag: StrokeTag) -> Self {
        Self {
            id: id.into(),
            curve,
            width,
            opacity,
            tag,
        }
    }

    pub fn is_input(&self) -> bool {
        self.tag == StrokeTag::Input
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if !self.curve.is_finite() {
            return Err(GeomError::NonFinite(self.id.clone()));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(GeomError::InvalidWidth {
                id: self.id.clone(),
                width: self.width,
            });
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(GeomError::InvalidOpacity {
                id: self.id.clone(),
                opacity: self.opacity,
            });
        }
        Ok(())
    }
}

/// `k` points at uniform parameter spacing, endpoints included.
pub fn sample_stroke(stroke: &Stroke, k: usize) -> Result<Vec<Point>, GeomError> {
    Ok(sample_params(k)?
        .into_iter()
        .map(|t| stroke.curve.point_at(t))
        .collect())
}

/// Chord-length approximation over `segments` uniform-t pieces.
pub fn stroke_length(stroke: &Stroke, segments: usize) -> f64 {
    curve_length(&stroke.curve, segments)
}

pub fn curve_length(curve: &CubicBezier, segments: usize) -> f64 {
    let segments = segments.max(1);
    let mut prev = curve.points[0];
    let mut total = 0.0;
    for i in 1..=segments {
        let p = curve.point_at(i as f64 / segments as f64);
        total += prev.distance(p);
        prev = p;
    }
    total
}

/// Mean absolute turning angle per unit length over 16 samples.
pub fn curvature(curve: &CubicBezier) -> f64 {
    const SAMPLES: usize = 16;
    let pts: Vec<Point> = (0..SAMPLES)
        .map(|i| curve.point_at(i as f64 / (SAMPLES - 1) as f64))
        .collect();
    let mut length = 0.0;
    let mut turning = 0.0;
    let mut prev_dir: Option<Point> = None;
    for w in pts.windows(2) {
        let d = w[1] - w[0];
        let len = d.norm();
        length += len;
        if len <= 1e-12 {
            continue;
        }
        if let Some(p) = prev_dir {
            turning += p.cross(d).atan2(p.dot(d)).abs();
        }
        prev_dir = Some(d);
    }
    if length <= 1e-12 {
        0.0
    } else {
        turning / length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub strokes: Vec<Stroke>,
}

impl Sketch {
    pub fn new(canvas_w: u32, canvas_h: u32) -> Self {
        Self {
            canvas_w,
            canvas_h,
            strokes: Vec::new(),
        }
    }

    pub fn with_strokes(canvas_w: u32, canvas_h: u32, strokes: Vec<Stroke>) -> Self {
        Self {
            canvas_w,
            canvas_h,
            strokes,
        }
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Stroke> {
        self.strokes.iter().find(|s| s.id == id)
    }

    pub fn input_strokes(&self) -> impl Iterator<Item = &Stroke> {
        self.strokes.iter().filter(|s| s.is_input())
    }

    pub fn generated_strokes(&self) -> impl Iterator<Item = &Stroke> {
        self.strokes.iter().filter(|s| !s.is_input())
    }

    /// Extended bounds `[-w, 2w] x [-h, 2h]` allowed for control points.
    pub fn extended_bounds(&self) -> (Point, Point) {
        let (w, h) = (self.canvas_w as f64, self.canvas_h as f64);
        (Point::new(-w, -h), Point::new(2.0 * w, 2.0 * h))
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if self.canvas_w == 0 || self.canvas_h == 0 {
            return Err(GeomError::EmptyCanvas(self.canvas_w, self.canvas_h));
        }
        let (lo, hi) = self.extended_bounds();
        let mut seen = HashSet::with_capacity(self.strokes.len());
        for s in &self.strokes {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(GeomError::DuplicateId(s.id.clone()));
            }
            let inside = s
                .curve
                .points
                .iter()
                .all(|p| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y);
            if !inside {
                return Err(GeomError::OutOfBounds(s.id.clone()));
            }
        }
        Ok(())
    }

    /// Median width of the Input strokes, if there are any.
    pub fn median_input_width(&self) -> Option<f64> {
        let mut widths: Vec<f64> = self.input_strokes().map(|s| s.width).collect();
        if widths.is_empty() {
            return None;
        }
        widths.sort_by(f64::total_cmp);
        let n = widths.len();
        Some(if n % 2 == 1 {
            widths[n / 2]
        } else {
            0.5 * (widths[n / 2 - 1] + widths[n / 2])
        })
    }
}

impl fmt::Display for StrokeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StrokeTag::Input => f.write_str("input"),
            StrokeTag::Generated => f.write_str("generated"),
        }
    }
}

/// Splits a sketch by tag, preserving order and ids within each half.
pub fn partition(sketch: &Sketch) -> (Sketch, Sketch) {
    let (input, generated): (Vec<Stroke>, Vec<Stroke>) =
        sketch.strokes.iter().cloned().partition(|s| s.is_input());
    (
        Sketch::with_strokes(sketch.canvas_w, sketch.canvas_h, input),
        Sketch::with_strokes(sketch.canvas_w, sketch.canvas_h, generated),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_stroke() -> Stroke {
        Stroke::new(
            "s",
            CubicBezier::new(
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(2.0, 0.0),
                Point::new(3.0, 0.0),
            ),
            2.0,
            1.0,
            StrokeTag::Generated,
        )
    }

    #[test]
    fn eval_zero_curve() {
        let c = CubicBezier::new(Point::ZERO, Point::ZERO, Point::ZERO, Point::ZERO);
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(eval_bezier(&c, t).unwrap(), Point::ZERO);
        }
    }

    #[test]
    fn eval_collinear_midpoint() {
        let p = eval_bezier(&line_stroke().curve, 0.5).unwrap();
        assert!((p.x - 1.5).abs() < 1e-15 && p.y == 0.0);
    }

    #[test]
    fn eval_arch_midpoint_matches_de_casteljau() {
        let c = CubicBezier::new(
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        );
        // de Casteljau by hand: (0,.5),(.5,1),(1,.5) -> (.25,.75),(.75,.75) -> (.5,.75)
        let p = eval_bezier(&c, 0.5).unwrap();
        assert!((p.x - 0.5).abs() < 1e-15);
        assert!((p.y - 0.75).abs() < 1e-15);
        assert_eq!(c.split_at(0.5).0.points[3], p);
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let c = line_stroke().curve;
        assert_eq!(eval_bezier(&c, 1.5), Err(GeomError::ParameterOutOfRange(1.5)));
        assert!(eval_bezier(&c, -0.01).is_err());
    }

    #[test]
    fn sample_two_gives_endpoints() {
        let s = line_stroke();
        let pts = sample_stroke(&s, 2).unwrap();
        assert_eq!(pts, vec![s.curve.points[0], s.curve.points[3]]);
        assert_eq!(sample_stroke(&s, 1), Err(GeomError::TooFewSamples(1)));
    }

    #[test]
    fn sample_ten_uniform_in_t() {
        let pts = sample_stroke(&line_stroke(), 10).unwrap();
        for (i, p) in pts.iter().enumerate() {
            assert!((p.x - i as f64 * 3.0 / 9.0).abs() < 1e-12, "{i}: {p:?}");
        }
        let dot = Stroke::new(
            "d",
            CubicBezier::new(Point::new(4.0, 4.0), Point::new(4.0, 4.0), Point::new(4.0, 4.0), Point::new(4.0, 4.0)),
            1.0,
            1.0,
            StrokeTag::Input,
        );
        let pts = sample_stroke(&dot, 10).unwrap();
        assert_eq!(pts.len(), 10);
        assert!(pts.iter().all(|p| *p == Point::new(4.0, 4.0)));
    }

    #[test]
    fn length_cases() {
        assert!((stroke_length(&line_stroke(), 16) - 3.0).abs() < 1e-12);
        let mut dot = line_stroke();
        dot.curve = CubicBezier::new(Point::ZERO, Point::ZERO, Point::ZERO, Point::ZERO);
        assert_eq!(stroke_length(&dot, 8), 0.0);

        let mut arc = line_stroke();
        arc.curve = CubicBezier::new(
            Point::new(0.0, 0.0),
            Point::new(0.0, 0.5523),
            Point::new(0.4477, 1.0),
            Point::new(1.0, 1.0),
        );
        let dense = stroke_length(&arc, 4096);
        let coarse = stroke_length(&arc, 64);
        assert!((dense - std::f64::consts::FRAC_PI_2).abs() < 0.01);
        assert!((coarse - dense).abs() < 0.01);
        let mut prev = 0.0;
        for n in [1, 2, 4, 8, 16, 64] {
            let l = stroke_length(&arc, n);
            assert!(l >= prev);
            prev = l;
        }
    }

    #[test]
    fn subdivide_traces_same_curve() {
        let c = CubicBezier::new(
            Point::new(0.0, 0.0),
            Point::new(10.0, 30.0),
            Point::new(40.0, -5.0),
            Point::new(50.0, 20.0),
        );
        let pieces = c.subdivide(3);
        assert_eq!(pieces.len(), 3);
        for (i, piece) in pieces.iter().enumerate() {
            for j in 0..=10 {
                let local = j as f64 / 10.0;
                let global = (i as f64 + local) / 3.0;
                assert!(piece.point_at(local).distance(c.point_at(global)) < 1e-9);
            }
        }
    }

    #[test]
    fn partition_mixed() {
        let mut sk = Sketch::new(10, 10);
        for i in 0..8 {
            let mut s = line_stroke();
            s.id = format!("s{i}");
            s.tag = if i % 3 == 0 { StrokeTag::Input } else { StrokeTag::Generated };
            sk.strokes.push(s);
        }
        let (a, b) = partition(&sk);
        assert_eq!((a.len(), b.len()), (3, 5));
        assert_eq!(
            a.strokes.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            ["s0", "s3", "s6"]
        );
        assert_eq!(
            b.strokes.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(),
            ["s1", "s2", "s4", "s5", "s7"]
        );
    }

    #[test]
    fn partition_uniform_tags() {
        let mut sk = Sketch::new(10, 10);
        sk.strokes.push(line_stroke());
        let (a, b) = partition(&sk);
        assert!(a.is_empty());
        assert_eq!(b, sk);
    }

    #[test]
    fn validate_catches_duplicates_and_ranges() {
        let mut sk = Sketch::new(10, 10);
        sk.strokes.push(line_stroke());
        sk.strokes.push(line_stroke());
        assert_eq!(sk.validate(), Err(GeomError::DuplicateId("s".into())));
        sk.strokes.pop();
        sk.strokes[0].opacity = 1.5;
        assert!(matches!(sk.validate(), Err(GeomError::InvalidOpacity { .. })));
        sk.strokes[0].opacity = 1.0;
        sk.strokes[0].curve = sk.strokes[0].curve.translated(100.0, 0.0);
        assert_eq!(sk.validate(), Err(GeomError::OutOfBounds("s".into())));
    }

    #[test]
    fn curvature_of_line_is_zero() {
        assert!(curvature(&line_stroke().curve).abs() < 1e-12);
    }

    #[test]
    fn median_width() {
        let mut sk = Sketch::new(10, 10);
        assert_eq!(sk.median_input_width(), None);
        for (i, w) in [3.0, 1.0, 2.0, 10.0].into_iter().enumerate() {
            let mut s = line_stroke();
            s.id = i.to_string();
            s.tag = StrokeTag::Input;
            s.width = w;
            sk.strokes.push(s);
        }
        assert_eq!(sk.median_input_width(), Some(2.5));
    }
}
