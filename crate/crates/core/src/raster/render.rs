use super::{CanvasSpec, RasterError, RasterImage};
use crate::geom::{bernstein, Point, Sketch, Stroke, StrokeTag};
use crate::svg::INPUT_COLOR;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Fixed-point scale for accumulated `ln(1 - coverage)`. Integer sums are
/// associative, which makes compositing independent of stroke order.
const LOG_SCALE: f64 = (1u64 << 40) as f64;

/// Temperature of the soft minimum over polyline segments, in pixels.
const SOFTMIN_TAU: f64 = 0.05;
/// Segments farther than this beyond the nearest one are ignored.
const SOFTMIN_CUTOFF: f64 = 20.0 * SOFTMIN_TAU;
/// Axis rounding: coverage sees `hypot(d, AXIS_EPS)` so the ramp is smooth
/// where a pixel center lies on the curve.
const AXIS_EPS: f64 = 0.05;

/// A pixel within reach of a stroke.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub pixel: u32,
    pub dist: f64,
    /// d(dist)/d(control point j); zero unless gradients were requested.
    pub grad: [Point; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum DistanceMode {
    /// Exact nearest-segment distance.
    Hard,
    /// Soft minimum of axis-rounded segment distances; differentiable in the
    /// control points.
    Smooth { with_grad: bool },
}

fn polyline(stroke: &Stroke, segments: usize) -> Vec<Point> {
    (0..=segments)
        .map(|i| stroke.curve.point_at(i as f64 / segments as f64))
        .collect()
}

#[inline]
fn segment_query(pt: Point, a: Point, b: Point) -> (f64, f64, Point) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let s = if len2 > 0.0 {
        ((pt - a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = a + ab * s;
    let diff = q - pt;
    (diff.norm(), s, diff)
}

/// Minimum distance from `pt` to the `segments`-piece polyline of the stroke.
pub fn distance_to_stroke(pt: Point, stroke: &Stroke, segments: usize) -> f64 {
    let verts = polyline(stroke, segments.max(1));
    verts
        .windows(2)
        .map(|w| segment_query(pt, w[0], w[1]).0)
        .fold(f64::INFINITY, f64::min)
}

struct Patch {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Patch {
    fn spans(&self, lo: Point, hi: Point, reach: f64, width: u32, height: u32) -> Option<(usize, usize, usize, usize)> {
        let (sx0, sx1) = pixel_span(lo.x - reach, hi.x + reach, width)?;
        let (sy0, sy1) = pixel_span(lo.y - reach, hi.y + reach, height)?;
        Some((sx0.max(self.x0), sx1.min(self.x0 + self.w - 1), sy0.max(self.y0), sy1.min(self.y0 + self.h - 1)))
    }
}

/// Pixels whose center lies closer than `reach` to the stroke, under the
/// given distance model.
pub(crate) fn footprint(
    stroke: &Stroke,
    width: u32,
    height: u32,
    segments: usize,
    reach: f64,
    mode: DistanceMode,
) -> Vec<Hit> {
    let segments = segments.max(1);
    let verts = polyline(stroke, segments);
    let (mut lo, mut hi) = (verts[0], verts[0]);
    for v in &verts {
        lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
        hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
    }
    let smooth = mode != DistanceMode::Hard;
    let margin = if smooth { reach + SOFTMIN_CUTOFF } else { reach };
    let Some((x0, x1)) = pixel_span(lo.x - margin, hi.x + margin, width) else {
        return Vec::new();
    };
    let Some((y0, y1)) = pixel_span(lo.y - margin, hi.y + margin, height) else {
        return Vec::new();
    };
    let patch = Patch {
        x0,
        y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    };
    let seg_bounds = |a: Point, b: Point| (Point::new(a.x.min(b.x), a.y.min(b.y)), Point::new(a.x.max(b.x), a.y.max(b.y)));
    let rounded = |d: f64| if smooth { d.hypot(AXIS_EPS) } else { d };

    // Pass 1: nearest distance per pixel.
    let mut best = vec![f64::INFINITY; patch.w * patch.h];
    for w in verts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (blo, bhi) = seg_bounds(a, b);
        let Some((sx0, sx1, sy0, sy1)) = patch.spans(blo, bhi, margin, width, height) else {
            continue;
        };
        for py in sy0..=sy1 {
            let row = (py - y0) * patch.w;
            let cy = py as f64 + 0.5;
            for px in sx0..=sx1 {
                let (d, _, _) = segment_query(Point::new(px as f64 + 0.5, cy), a, b);
                let slot = &mut best[row + px - x0];
                *slot = slot.min(rounded(d));
            }
        }
    }

    let pixel_of = |i: usize| (((i / patch.w) + y0) * width as usize + (i % patch.w) + x0) as u32;
    if !smooth {
        return best
            .iter()
            .enumerate()
            .filter(|(_, d)| **d < reach)
            .map(|(i, d)| Hit {
                pixel: pixel_of(i),
                dist: *d,
                grad: [Point::ZERO; 4],
            })
            .collect();
    }

    // Pass 2: soft minimum over segments near the nearest one.
    let with_grad = mode == DistanceMode::Smooth { with_grad: true };
    let weights: Vec<[f64; 4]> = if with_grad {
        (0..=segments).map(|i| bernstein(i as f64 / segments as f64)).collect()
    } else {
        Vec::new()
    };
    let mut sum = vec![0.0f64; patch.w * patch.h];
    let mut grad = if with_grad {
        vec![[Point::ZERO; 4]; patch.w * patch.h]
    } else {
        Vec::new()
    };
    for (k, w) in verts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (blo, bhi) = seg_bounds(a, b);
        let Some((sx0, sx1, sy0, sy1)) = patch.spans(blo, bhi, margin, width, height) else {
            continue;
        };
        for py in sy0..=sy1 {
            let row = (py - y0) * patch.w;
            let cy = py as f64 + 0.5;
            for px in sx0..=sx1 {
                let i = row + px - x0;
                let m = best[i];
                if m >= reach + SOFTMIN_CUTOFF {
                    continue;
                }
                let (d, s, diff) = segment_query(Point::new(px as f64 + 0.5, cy), a, b);
                let e = d.hypot(AXIS_EPS);
                if e - m > SOFTMIN_CUTOFF {
                    continue;
                }
                let wk = (-(e - m) / SOFTMIN_TAU).exp();
                sum[i] += wk;
                if with_grad {
                    let dir = diff * (wk / e);
                    let (wa, wb) = (&weights[k], &weights[k + 1]);
                    for j in 0..4 {
                        grad[i][j] = grad[i][j] + dir * ((1.0 - s) * wa[j] + s * wb[j]);
                    }
                }
            }
        }
    }

    let mut hits = Vec::new();
    for i in 0..patch.w * patch.h {
        if sum[i] <= 0.0 {
            continue;
        }
        let dist = best[i] - SOFTMIN_TAU * sum[i].ln();
        if dist < reach {
            let g = if with_grad {
                grad[i].map(|p| p * (1.0 / sum[i]))
            } else {
                [Point::ZERO; 4]
            };
            hits.push(Hit {
                pixel: pixel_of(i),
                dist,
                grad: g,
            });
        }
    }
    hits
}

/// Pixel indices whose centers fall in `[lo, hi]`, clipped to `0..n`.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(usize, usize)> {
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// Smoothstep ramp: returns (coverage fraction, d(fraction)/du, u).
#[inline]
fn ramp(dist: f64, width: f64, aa: f64) -> (f64, f64) {
    let u = ((0.5 * width + aa - dist) / (2.0 * aa)).clamp(0.0, 1.0);
    (u * u * (3.0 - 2.0 * u), 6.0 * u * (1.0 - u))
}

struct Composite {
    log: Vec<i64>,
    opaque: Vec<u32>,
}

impl Composite {
    fn new(n: usize) -> Self {
        Self {
            log: vec![0; n],
            opaque: vec![0; n],
        }
    }

    fn add(&mut self, pixel: usize, cov: f64) {
        if cov <= 0.0 {
            return;
        }
        if cov >= 1.0 {
            self.opaque[pixel] += 1;
        } else {
            self.log[pixel] += ((1.0 - cov).ln() * LOG_SCALE).round() as i64;
        }
    }

    fn value(&self, pixel: usize, background: f64) -> f64 {
        if self.opaque[pixel] > 0 {
            0.0
        } else {
            background * (self.log[pixel] as f64 / LOG_SCALE).exp()
        }
    }

    /// d(intensity)/d(coverage of one stroke with coverage `cov`) at `pixel`.
    fn d_value(&self, pixel: usize, cov: f64, background: f64) -> f64 {
        let opaque = self.opaque[pixel];
        if cov >= 1.0 {
            if opaque == 1 {
                -background * (self.log[pixel] as f64 / LOG_SCALE).exp()
            } else {
                0.0
            }
        } else if opaque > 0 {
            0.0
        } else {
            -self.value(pixel, background) / (1.0 - cov)
        }
    }
}

fn footprints(sketch: &Sketch, spec: &CanvasSpec, with_grad: bool) -> Vec<Vec<Hit>> {
    sketch
        .strokes
        .par_iter()
        .map(|s| {
            footprint(
                s,
                spec.width,
                spec.height,
                spec.segments,
                0.5 * s.width + spec.aa_band,
                DistanceMode::Smooth { with_grad },
            )
        })
        .collect()
}

fn composite(sketch: &Sketch, spec: &CanvasSpec, prints: &[Vec<Hit>]) -> Composite {
    let mut acc = Composite::new(spec.pixel_count());
    for (stroke, hits) in sketch.strokes.iter().zip(prints) {
        for h in hits {
            let (frac, _) = ramp(h.dist, stroke.width, spec.aa_band);
            acc.add(h.pixel as usize, stroke.opacity * frac);
        }
    }
    acc
}

fn image_from(acc: &Composite, spec: &CanvasSpec) -> RasterImage {
    let data = (0..spec.pixel_count())
        .map(|p| acc.value(p, spec.background))
        .collect();
    RasterImage::gray(spec.width, spec.height, data)
}

/// Grayscale rendering of every stroke as dark ink.
pub fn render(sketch: &Sketch, spec: &CanvasSpec) -> RasterImage {
    let prints = footprints(sketch, spec, false);
    image_from(&composite(sketch, spec, &prints), spec)
}

/// RGB rendering with Input strokes in the input blue and the rest black.
pub fn render_two_tone(sketch: &Sketch, spec: &CanvasSpec) -> RasterImage {
    let prints = footprints(sketch, spec, false);
    let blue = INPUT_COLOR.unit();
    let mut channels: Vec<Composite> = (0..3).map(|_| Composite::new(spec.pixel_count())).collect();
    for (stroke, hits) in sketch.strokes.iter().zip(&prints) {
        let ink = match stroke.tag {
            StrokeTag::Input => blue,
            StrokeTag::Generated => [0.0; 3],
        };
        for h in hits {
            let (frac, _) = ramp(h.dist, stroke.width, spec.aa_band);
            let cov = stroke.opacity * frac;
            for (c, acc) in channels.iter_mut().enumerate() {
                acc.add(h.pixel as usize, cov * (1.0 - ink[c]));
            }
        }
    }
    let mut data = Vec::with_capacity(spec.pixel_count() * 3);
    for p in 0..spec.pixel_count() {
        for acc in &channels {
            data.push(acc.value(p, spec.background));
        }
    }
    RasterImage {
        width: spec.width,
        height: spec.height,
        channels: 3,
        data,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeGradient {
    pub id: String,
    pub d_points: [Point; 4],
    pub d_width: f64,
    pub d_opacity: f64,
}

impl StrokeGradient {
    pub fn zero(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            d_points: [Point::ZERO; 4],
            d_width: 0.0,
            d_opacity: 0.0,
        }
    }

    /// Flattened as x0 y0 .. x3 y3 width opacity.
    pub fn to_array(&self) -> [f64; 10] {
        let p = &self.d_points;
        [
            p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y, self.d_width, self.d_opacity,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Gradients aligned index-for-index with the sketch's strokes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeGradients {
    pub strokes: Vec<StrokeGradient>,
}

impl StrokeGradients {
    pub fn zeros(sketch: &Sketch) -> Self {
        Self {
            strokes: sketch.strokes.iter().map(|s| StrokeGradient::zero(&s.id)).collect(),
        }
    }

    /// Adds `scale * other` in place; both must describe the same strokes.
    pub fn add_scaled(&mut self, other: &StrokeGradients, scale: f64) {
        for (a, b) in self.strokes.iter_mut().zip(&other.strokes) {
            for j in 0..4 {
                a.d_points[j] = a.d_points[j] + b.d_points[j] * scale;
            }
            a.d_width += scale * b.d_width;
            a.d_opacity += scale * b.d_opacity;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.strokes.iter().all(|g| g.to_array().iter().all(|v| *v == 0.0))
    }
}

/// Renders and backpropagates `sum(adjoint * intensity)` to every Generated
/// stroke's control points, width and opacity. Input strokes get zeros.
pub fn render_with_gradients(
    sketch: &Sketch,
    spec: &CanvasSpec,
    adjoint: &RasterImage,
) -> Result<(RasterImage, StrokeGradients), RasterError> {
    render_with_adjoint(sketch, spec, |_| Ok(adjoint.clone()))
}

/// Like [`render_with_gradients`], with the adjoint computed from the
/// rendered image by `adjoint_of`.
pub fn render_with_adjoint<E: From<RasterError>>(
    sketch: &Sketch,
    spec: &CanvasSpec,
    adjoint_of: impl FnOnce(&RasterImage) -> Result<RasterImage, E>,
) -> Result<(RasterImage, StrokeGradients), E> {
    let prints = footprints(sketch, spec, true);
    let acc = composite(sketch, spec, &prints);
    let image = image_from(&acc, spec);
    let adjoint = adjoint_of(&image)?;
    adjoint.check_dims(spec.width, spec.height)?;
    if adjoint.channels != 1 {
        return Err(RasterError::ChannelMismatch {
            want: 1,
            got: adjoint.channels,
        }
        .into());
    }
    let aa = spec.aa_band;

    let strokes = sketch
        .strokes
        .par_iter()
        .zip(&prints)
        .map(|(stroke, hits)| {
            let mut g = StrokeGradient::zero(&stroke.id);
            if stroke.tag == StrokeTag::Input {
                return g;
            }
            for h in hits {
                let pixel = h.pixel as usize;
                let adj = adjoint.data[pixel];
                if adj == 0.0 {
                    continue;
                }
                let (frac, dfrac_du) = ramp(h.dist, stroke.width, aa);
                let cov = stroke.opacity * frac;
                let upstream = adj * acc.d_value(pixel, cov, spec.background);
                if upstream == 0.0 {
                    continue;
                }
                g.d_opacity += upstream * frac;
                let dcov_du = stroke.opacity * dfrac_du;
                g.d_width += upstream * dcov_du / (4.0 * aa);
                let d_dist = -upstream * dcov_du / (2.0 * aa);
                if d_dist != 0.0 {
                    for j in 0..4 {
                        g.d_points[j] = g.d_points[j] + h.grad[j] * d_dist;
                    }
                }
            }
            g
        })
        .collect();
    Ok((image, StrokeGradients { strokes }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::CubicBezier;

    fn straight(id: &str, a: Point, b: Point, width: f64, opacity: f64) -> Stroke {
        Stroke::new(id, CubicBezier::line(a, b), width, opacity, StrokeTag::Generated)
    }

    #[test]
    fn distance_examples() {
        let s = straight("s", Point::new(0.0, 0.0), Point::new(3.0, 0.0), 1.0, 1.0);
        assert!(distance_to_stroke(Point::new(1.2, 0.0), &s, 64) < 1e-6);
        assert!((distance_to_stroke(Point::new(0.0, 5.0), &s, 16) - 5.0).abs() < 1e-12);
        assert!((distance_to_stroke(Point::new(1.5, 2.0), &s, 16) - 2.0).abs() < 1e-12);
        // beyond the end cap
        assert!((distance_to_stroke(Point::new(7.0, 3.0), &s, 16) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_sketch_is_white() {
        let img = render(&Sketch::new(8, 6), &CanvasSpec::new(8, 6));
        assert_eq!(img.data.len(), 48);
        assert!(img.data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn on_axis_coverage() {
        let spec = CanvasSpec::new(20, 20);
        // axis along y = 10.5 runs through pixel centers of row 10
        let mut sk = Sketch::new(20, 20);
        sk.strokes.push(straight("a", Point::new(2.0, 10.5), Point::new(18.0, 10.5), 4.0, 1.0));
        let img = render(&sk, &spec);
        assert_eq!(img.get(10, 10), 0.0);
        assert_eq!(img.get(10, 0), 1.0);
        sk.strokes[0].opacity = 0.5;
        let img = render(&sk, &spec);
        assert!((img.get(10, 10) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn ramp_band() {
        // width 4, aa 1: full inside d <= 1, zero at d >= 3, half at d = 2
        assert_eq!(ramp(1.0, 4.0, 1.0).0, 1.0);
        assert_eq!(ramp(3.0, 4.0, 1.0).0, 0.0);
        assert!((ramp(2.0, 4.0, 1.0).0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_adjoint_zero_gradients() {
        let spec = CanvasSpec::new(16, 16);
        let mut sk = Sketch::new(16, 16);
        sk.strokes.push(straight("a", Point::new(2.0, 3.0), Point::new(12.0, 9.0), 3.0, 0.7));
        let (_, g) = render_with_gradients(&sk, &spec, &RasterImage::filled(16, 16, 1, 0.0)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn opacity_gradient_with_unit_adjoint() {
        let spec = CanvasSpec::new(24, 24);
        let mut sk = Sketch::new(24, 24);
        let stroke = straight("a", Point::new(3.0, 4.0), Point::new(20.0, 17.0), 3.0, 0.6);
        sk.strokes.push(stroke.clone());
        let (_, g) = render_with_gradients(&sk, &spec, &RasterImage::filled(24, 24, 1, 1.0)).unwrap();
        // Single stroke: intensity = 1 - o * ramp, so dL/do = -sum(ramp).
        let img = render(&sk, &spec);
        let expected: f64 = -img.data.iter().map(|v| (1.0 - v) / 0.6).sum::<f64>();
        assert!(expected < 0.0);
        assert!((g.strokes[0].d_opacity - expected).abs() < 1e-8 * expected.abs());
    }

    #[test]
    fn input_strokes_get_no_gradient() {
        let spec = CanvasSpec::new(16, 16);
        let mut sk = Sketch::new(16, 16);
        let mut s = straight("a", Point::new(2.0, 3.0), Point::new(12.0, 9.0), 3.0, 0.7);
        s.tag = StrokeTag::Input;
        sk.strokes.push(s);
        let (_, g) = render_with_gradients(&sk, &spec, &RasterImage::filled(16, 16, 1, 1.0)).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn adjoint_dimension_mismatch() {
        let spec = CanvasSpec::new(16, 16);
        let err = render_with_gradients(&Sketch::new(16, 16), &spec, &RasterImage::filled(8, 16, 1, 1.0));
        assert!(matches!(err, Err(RasterError::DimensionMismatch { .. })));
    }

    #[test]
    fn offscreen_stroke_is_inert() {
        let spec = CanvasSpec::new(16, 16);
        let mut sk = Sketch::new(16, 16);
        sk.strokes.push(straight("a", Point::new(-20.0, -20.0), Point::new(-10.0, -12.0), 3.0, 1.0));
        let (img, g) = render_with_gradients(&sk, &spec, &RasterImage::filled(16, 16, 1, 1.0)).unwrap();
        assert!(img.data.iter().all(|v| *v == 1.0));
        assert!(g.is_zero());
    }

    #[test]
    fn two_tone_colors() {
        let spec = CanvasSpec::new(20, 20);
        let mut sk = Sketch::new(20, 20);
        let mut a = straight("a", Point::new(2.0, 5.5), Point::new(18.0, 5.5), 4.0, 1.0);
        a.tag = StrokeTag::Input;
        sk.strokes.push(a);
        sk.strokes.push(straight("b", Point::new(2.0, 15.5), Point::new(18.0, 15.5), 4.0, 1.0));
        let img = render_two_tone(&sk, &spec);
        let px = |x: usize, y: usize| &img.data[(y * 20 + x) * 3..(y * 20 + x) * 3 + 3];
        let blue = INPUT_COLOR.unit();
        for c in 0..3 {
            assert!((px(10, 5)[c] - blue[c]).abs() < 1e-9);
            assert_eq!(px(10, 15)[c], 0.0);
            assert_eq!(px(10, 10)[c], 1.0);
        }
    }
}
