#![allow(dead_code)]

pub mod gen;
pub mod http;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchfill::geom::{CubicBezier, Point, Sketch, Stroke, StrokeTag};
use sketchfill::objective::{objective_gradients, total_objective, LossWeights, PyramidBackend};
use sketchfill::raster::{build_mask, render, render_with_gradients, CanvasSpec, MaskGrid, RasterImage, StrokeGradients};

pub const FD_STEP: f64 = 1e-4;

/// Relative agreement with an absolute floor for components that vanish.
pub fn agrees(analytic: f64, fd: f64) -> bool {
    (analytic - fd).abs() <= (1e-3 * analytic.abs().max(fd.abs())).max(1e-5)
}

pub fn random_stroke(rng: &mut ChaCha8Rng, id: String, w: f64, h: f64, tag: StrokeTag) -> Stroke {
    let a = Point::new(rng.gen_range(4.0..w - 4.0), rng.gen_range(4.0..h - 4.0));
    let mut pts = [a; 4];
    for p in pts.iter_mut().skip(1) {
        *p = Point::new(
            (a.x + rng.gen_range(-14.0..14.0)).clamp(1.0, w - 1.0),
            (a.y + rng.gen_range(-14.0..14.0)).clamp(1.0, h - 1.0),
        );
    }
    Stroke::new(
        id,
        CubicBezier { points: pts },
        rng.gen_range(1.0..4.0),
        rng.gen_range(0.3..0.9),
        tag,
    )
}

pub struct GradFixture {
    pub sketch: Sketch,
    pub guide: RasterImage,
    pub mask: MaskGrid,
    pub adjoint: RasterImage,
    pub spec: CanvasSpec,
}

/// 40x40 canvas, two Input strokes (masked), six Generated strokes, a guide
/// rendered from unrelated strokes, and a random pixel adjoint.
pub fn grad_fixture(seed: u64) -> GradFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (40u32, 40u32);
    let spec = CanvasSpec::new(w, h).with_segments(CanvasSpec::OPTIMIZATION_SEGMENTS);
    let mut sketch = Sketch::new(w, h);
    for i in 0..2 {
        sketch.strokes.push(random_stroke(&mut rng, format!("in{i}"), 40.0, 40.0, StrokeTag::Input));
    }
    for i in 0..6 {
        sketch.strokes.push(random_stroke(&mut rng, format!("g{i}"), 40.0, 40.0, StrokeTag::Generated));
    }
    let mut target = Sketch::new(w, h);
    for i in 0..5 {
        target.strokes.push(random_stroke(&mut rng, format!("t{i}"), 40.0, 40.0, StrokeTag::Generated));
    }
    let guide = render(&target, &spec);
    let (input, _) = sketchfill::geom::partition(&sketch);
    let mask = build_mask(&input, &spec, 2.0, 3.0);
    let adjoint = RasterImage::gray(w, h, (0..w * h).map(|_| rng.gen_range(-1.0..1.0)).collect());
    GradFixture {
        sketch,
        guide,
        mask,
        adjoint,
        spec,
    }
}

fn get(s: &Stroke, k: usize) -> f64 {
    match k {
        8 => s.width,
        9 => s.opacity,
        _ => {
            let p = s.curve.points[k / 2];
            if k.is_multiple_of(2) {
                p.x
            } else {
                p.y
            }
        }
    }
}

fn set(s: &mut Stroke, k: usize, v: f64) {
    match k {
        8 => s.width = v,
        9 => s.opacity = v,
        _ => {
            let p = &mut s.curve.points[k / 2];
            if k.is_multiple_of(2) {
                p.x = v
            } else {
                p.y = v
            }
        }
    }
}

/// Compares every Generated-stroke parameter of `grads` against central
/// differences of `f`. Returns (components checked, failures).
pub fn fd_compare(sketch: &Sketch, grads: &StrokeGradients, f: impl Fn(&Sketch) -> f64) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut failures = Vec::new();
    for (si, s) in sketch.strokes.iter().enumerate() {
        let analytic = grads.strokes[si].to_array();
        for k in 0..10 {
            let mut plus = sketch.clone();
            let mut minus = sketch.clone();
            let v = get(s, k);
            set(&mut plus.strokes[si], k, v + FD_STEP);
            set(&mut minus.strokes[si], k, v - FD_STEP);
            let fd = if s.is_input() { 0.0 } else { (f(&plus) - f(&minus)) / (2.0 * FD_STEP) };
            checked += 1;
            if !agrees(analytic[k], fd) {
                failures.push(format!("{}[{k}]: analytic {} vs fd {fd}", s.id, analytic[k]));
            }
        }
    }
    (checked, failures)
}

/// Checks both the raster adjoint gradients and the full objective gradients.
pub fn check_fixture(seed: u64) -> (usize, Vec<String>) {
    let fx = grad_fixture(seed);
    let backend = PyramidBackend::default();
    let weights = LossWeights::default();
    let (_, rg) = render_with_gradients(&fx.sketch, &fx.spec, &fx.adjoint).unwrap();
    let inner = |sk: &Sketch| -> f64 {
        render(sk, &fx.spec).data.iter().zip(&fx.adjoint.data).map(|(a, b)| a * b).sum()
    };
    let (n1, mut fails) = fd_compare(&fx.sketch, &rg, inner);
    let og = objective_gradients(&fx.sketch, &fx.guide, &fx.mask, weights, &backend, &fx.spec).unwrap();
    let total = |sk: &Sketch| total_objective(sk, &fx.guide, &fx.mask, weights, &backend, &fx.spec).unwrap().total;
    let (n2, f2) = fd_compare(&fx.sketch, &og, total);
    fails.extend(f2.into_iter().map(|f| format!("objective {f}")));
    (n1 + n2, fails)
}

/// Known 16-stroke target on a 256x256 canvas.
pub fn reconstruction_target() -> Sketch {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut s = Sketch::new(256, 256);
    for i in 0..16 {
        let a = Point::new(rng.gen_range(20.0..236.0), rng.gen_range(20.0..236.0));
        let mut pts = [a; 4];
        for p in pts.iter_mut().skip(1) {
            *p = a + Point::new(rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0));
        }
        s.strokes.push(Stroke::new(format!("t{i}"), CubicBezier { points: pts }, 3.0, 1.0, StrokeTag::Generated));
    }
    s
}

/// Left half of a `w`x`h` canvas set.
pub fn half_plane_mask(w: u32, h: u32) -> MaskGrid {
    MaskGrid::from_binary(w, h, (0..w * h).map(|i| u8::from(i % w < w / 2)).collect(), 3.0)
}
