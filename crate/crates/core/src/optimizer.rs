//! Stage one: random stroke placement and Adam descent on the completion loss.

use crate::geom::{Point, Sketch, Stroke, StrokeTag, CubicBezier};
use crate::objective::{LossBreakdown, LossWeights, Objective, ObjectiveError, PerceptualBackend};
use crate::raster::{CanvasSpec, MaskGrid, RasterImage, StrokeGradients};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use thiserror::Error;

/// Parameters per stroke: four control points, width, opacity.
pub const PARAMS_PER_STROKE: usize = 10;
pub const WIDTH_RANGE: (f64, f64) = (0.1, 20.0);
/// Radius of the disc around each anchor that initial control points are drawn from.
pub const INIT_RADIUS: f64 = 8.0;
pub const FALLBACK_WIDTH: f64 = 2.0;

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error("mask leaves no free pixel to place strokes on")]
    NoFreeSpace,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("parameter and gradient lengths differ ({params} vs {grads})")]
    LengthMismatch { params: usize, grads: usize },
    #[error("non-finite gradient for stroke `{stroke}` (parameter {param})")]
    NonFiniteGradient { stroke: String, param: usize },
    #[error("input sketch contains generated stroke `{0}`")]
    NotInput(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub n_strokes: usize,
    pub iterations: usize,
    pub lr_position: f64,
    pub lr_width: f64,
    pub lr_opacity: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weights: LossWeights,
    pub rng_seed: u64,
    /// Keep a copy of the sketch every this many iterations; 0 disables.
    pub snapshot_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_strokes: 512,
            iterations: 1000,
            lr_position: 0.8,
            lr_width: 0.1,
            lr_opacity: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weights: LossWeights::default(),
            rng_seed: 0,
            snapshot_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.to_string()));
        if self.n_strokes == 0 {
            return bad("n_strokes must be positive");
        }
        if [self.lr_position, self.lr_width, self.lr_opacity, self.epsilon]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return bad("learning rates and epsilon must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("adam betas must lie in (0, 1)");
        }
        self.weights.validate()?;
        Ok(())
    }

    fn learning_rate(&self, param: usize) -> f64 {
        match param % PARAMS_PER_STROKE {
            8 => self.lr_width,
            9 => self.lr_opacity,
            _ => self.lr_position,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update with per-group learning rates, followed by
/// projection of widths and opacities into their valid ranges.
///
/// `params` uses the [`PARAMS_PER_STROKE`] layout. On a non-finite gradient
/// nothing is modified and the offending parameter index is returned.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    config: &OptimizerConfig,
) -> Result<(), usize> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(state.m.len(), params.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(bad);
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        let v = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        *p -= config.learning_rate(i) * m_hat / (v_hat.sqrt() + config.epsilon);
        match i % PARAMS_PER_STROKE {
            8 => *p = p.clamp(WIDTH_RANGE.0, WIDTH_RANGE.1),
            9 => *p = p.clamp(0.0, 1.0),
            _ => {}
        }
    }
    Ok(())
}

fn stroke_params(s: &Stroke) -> [f64; PARAMS_PER_STROKE] {
    let p = &s.curve.points;
    [p[0].x, p[0].y, p[1].x, p[1].y, p[2].x, p[2].y, p[3].x, p[3].y, s.width, s.opacity]
}

fn set_stroke_params(s: &mut Stroke, v: &[f64], lo: Point, hi: Point) {
    for j in 0..4 {
        s.curve.points[j] = Point::new(v[2 * j].clamp(lo.x, hi.x), v[2 * j + 1].clamp(lo.y, hi.y));
    }
    s.width = v[8];
    s.opacity = v[9];
}

/// Places `n` short random strokes anchored on mask-free pixels.
pub fn init_strokes(
    n: usize,
    mask: &MaskGrid,
    spec: &CanvasSpec,
    seed: u64,
    width: f64,
) -> Result<Sketch, OptimizerError> {
    if n == 0 {
        return Err(OptimizerError::InvalidConfig("n_strokes must be positive".into()));
    }
    let free: Vec<usize> = mask
        .binary
        .iter()
        .enumerate()
        .filter(|(_, b)| **b == 0)
        .map(|(i, _)| i)
        .collect();
    if free.is_empty() {
        return Err(OptimizerError::NoFreeSpace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = mask.width as usize;
    let mut sketch = Sketch::new(spec.width, spec.height);
    for i in 0..n {
        let pixel = free[rng.gen_range(0..free.len())];
        let anchor = Point::new((pixel % w) as f64 + 0.5, (pixel / w) as f64 + 0.5);
        let mut pts = [Point::ZERO; 4];
        for p in &mut pts {
            let r = INIT_RADIUS * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            *p = anchor + Point::new(r * theta.cos(), r * theta.sin());
        }
        sketch.strokes.push(Stroke::new(
            format!("g{i}"),
            CubicBezier { points: pts },
            width,
            1.0,
            StrokeTag::Generated,
        ));
    }
    Ok(sketch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abort {
    pub iteration: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Input strokes followed by the optimized strokes.
    pub sketch: Sketch,
    pub trace: Vec<LossBreakdown>,
    pub snapshots: Vec<Sketch>,
    /// Set when the run stopped early; `sketch` then holds the last good state.
    pub aborted: Option<Abort>,
}

/// Called with the iteration index and its loss breakdown.
pub type ProgressFn<'a> = &'a (dyn Fn(usize, &LossBreakdown) + Sync);

/// Optional cancellation and progress reporting for long runs.
#[derive(Default)]
pub struct RunControl<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub progress: Option<ProgressFn<'a>>,
}

/// Renames generated ids that collide with input ids.
fn disambiguate(input: &Sketch, generated: &mut Sketch) {
    let taken: HashSet<&str> = input.strokes.iter().map(|s| s.id.as_str()).collect();
    if generated.strokes.iter().all(|s| !taken.contains(s.id.as_str())) {
        return;
    }
    for round in 1.. {
        let rename = |id: &str| format!("g{round}-{}", id.trim_start_matches('g'));
        if generated.strokes.iter().all(|s| !taken.contains(rename(&s.id).as_str())) {
            for s in &mut generated.strokes {
                s.id = rename(&s.id);
            }
            return;
        }
    }
}

/// Initializes `config.n_strokes` strokes and optimizes them.
pub fn optimize(
    input: &Sketch,
    guide: &RasterImage,
    mask: &MaskGrid,
    config: &OptimizerConfig,
    backend: &dyn PerceptualBackend,
    control: &RunControl<'_>,
) -> Result<OptimizationResult, OptimizerError> {
    config.validate()?;
    let spec = CanvasSpec::new(input.canvas_w, input.canvas_h).with_segments(CanvasSpec::OPTIMIZATION_SEGMENTS);
    let width = input.median_input_width().unwrap_or(FALLBACK_WIDTH);
    let init = init_strokes(config.n_strokes, mask, &spec, config.rng_seed, width)?;
    optimize_from(input, init, guide, mask, config, backend, control)
}

/// Optimizes the given Generated strokes against the loss, leaving `input`
/// untouched.
pub fn optimize_from(
    input: &Sketch,
    mut generated: Sketch,
    guide: &RasterImage,
    mask: &MaskGrid,
    config: &OptimizerConfig,
    backend: &dyn PerceptualBackend,
    control: &RunControl<'_>,
) -> Result<OptimizationResult, OptimizerError> {
    config.validate()?;
    if let Some(s) = input.generated_strokes().next() {
        return Err(OptimizerError::NotInput(s.id.clone()));
    }
    disambiguate(input, &mut generated);
    let spec = CanvasSpec::new(input.canvas_w, input.canvas_h).with_segments(CanvasSpec::OPTIMIZATION_SEGMENTS);
    let objective = Objective::new(guide, mask, config.weights, backend, spec)?;

    let n_input = input.len();
    let mut sketch = input.clone();
    sketch
        .strokes
        .extend(generated.strokes.into_iter().map(|mut s| {
            s.tag = StrokeTag::Generated;
            s
        }));
    let (lo, hi) = sketch.extended_bounds();

    let mut params: Vec<f64> = sketch.strokes[n_input..].iter().flat_map(stroke_params).collect();
    let mut state = AdamState::new(params.len());
    let mut trace = Vec::with_capacity(config.iterations);
    let mut snapshots = Vec::new();
    let mut aborted = None;

    for it in 0..config.iterations {
        if control.cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            aborted = Some(Abort {
                iteration: it,
                reason: "interrupted".into(),
            });
            break;
        }
        let (loss, grads) = match objective.evaluate_with_gradients(&sketch) {
            Ok(v) => v,
            Err(e) => {
                aborted = Some(Abort {
                    iteration: it,
                    reason: e.to_string(),
                });
                break;
            }
        };
        if let Some(report) = control.progress {
            report(it, &loss);
        }
        trace.push(loss);
        let flat = flatten_generated(&grads, n_input);
        if let Err(bad) = adam_step(&mut state, &mut params, &flat, config) {
            let stroke = sketch.strokes[n_input + bad / PARAMS_PER_STROKE].id.clone();
            return Err(OptimizerError::NonFiniteGradient {
                stroke,
                param: bad % PARAMS_PER_STROKE,
            });
        }
        for (s, v) in sketch.strokes[n_input..]
            .iter_mut()
            .zip(params.chunks(PARAMS_PER_STROKE))
        {
            set_stroke_params(s, v, lo, hi);
        }
        if config.snapshot_every > 0 && (it + 1) % config.snapshot_every == 0 {
            snapshots.push(sketch.clone());
        }
    }
    Ok(OptimizationResult {
        sketch,
        trace,
        snapshots,
        aborted,
    })
}

fn flatten_generated(grads: &StrokeGradients, n_input: usize) -> Vec<f64> {
    grads.strokes[n_input..].iter().flat_map(|g| g.to_array()).collect()
}

/// Loss trace as CSV with a header row.
pub fn trace_csv(trace: &[LossBreakdown]) -> String {
    let mut out = String::from("iteration,similarity_term,perceptual_term,overlap_term,overlap_count,total\n");
    for (i, l) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            l.similarity_term, l.perceptual_term, l.overlap_term, l.overlap_count, l.total
        ));
    }
    out
}
