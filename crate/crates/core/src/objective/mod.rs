//! Completion loss: embedding alignment and perceptual distance to the
//! guidance image, plus a penalty on generated strokes that land on the
//! input strokes.

mod backend;
mod remote;

pub use backend::{DifferentiableBackend, PerceptualBackend, PyramidBackend};
pub use remote::RemoteBackend;

use crate::geom::{bernstein, sample_params, GeomError, Point, Sketch, StrokeTag};
use crate::raster::{render, render_with_adjoint, CanvasSpec, MaskGrid, RasterError, RasterImage, StrokeGradients};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points sampled per generated stroke for the overlap penalty.
pub const OVERLAP_SAMPLES: usize = 10;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("embedding has zero norm; cosine similarity is undefined")]
    DegenerateEmbedding,
    #[error("backend `{0}` provides no pixel adjoints and cannot drive optimization")]
    NoAdjoint(String),
    #[error("loss weights must be nonnegative and not all zero")]
    InvalidWeights,
    #[error("mask is {got_w}x{got_h}, canvas is {want_w}x{want_h}")]
    MaskMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("perceptual backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let w = [self.alpha, self.beta, self.gamma];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) || w.iter().all(|v| *v == 0.0) {
            return Err(ObjectiveError::InvalidWeights);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub similarity_term: f64,
    pub perceptual_term: f64,
    pub overlap_term: f64,
    /// Sample points of generated strokes inside the binary mask.
    pub overlap_count: usize,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(weights: &LossWeights, similarity: f64, perceptual: f64, overlap: f64, count: usize) -> Self {
        Self {
            similarity_term: similarity,
            perceptual_term: perceptual,
            overlap_term: overlap,
            overlap_count: count,
            total: weights.alpha * similarity + weights.beta * perceptual + weights.gamma * overlap,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.similarity_term.is_finite()
            && self.perceptual_term.is_finite()
            && self.overlap_term.is_finite()
            && self.total.is_finite()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64, ObjectiveError> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !(na.is_finite() && nb.is_finite()) {
        return Err(ObjectiveError::DegenerateEmbedding);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of the backend embeddings of `a` and `b`.
pub fn embedding_similarity(
    backend: &dyn PerceptualBackend,
    a: &RasterImage,
    b: &RasterImage,
) -> Result<f64, ObjectiveError> {
    b.check_dims(a.width, a.height)?;
    cosine(&backend.embed(a)?, &backend.embed(b)?)
}

fn check_mask(mask: &MaskGrid, width: u32, height: u32) -> Result<(), ObjectiveError> {
    if mask.width != width || mask.height != height {
        return Err(ObjectiveError::MaskMismatch {
            want_w: width,
            want_h: height,
            got_w: mask.width,
            got_h: mask.height,
        });
    }
    Ok(())
}

/// Exact count of the `k` uniform-t samples per stroke that fall on set mask
/// pixels, and the differentiable surrogate: the blurred field summed at the
/// same samples.
pub fn overlap_penalty(generated: &Sketch, mask: &MaskGrid, k: usize) -> Result<(usize, f64), ObjectiveError> {
    check_mask(mask, generated.canvas_w, generated.canvas_h)?;
    let params = sample_params(k)?;
    let mut count = 0usize;
    let mut smooth = 0.0;
    for s in &generated.strokes {
        for &t in &params {
            let p = s.curve.point_at(t);
            count += mask.lookup_nearest(p) as usize;
            smooth += mask.field(p).0;
        }
    }
    Ok((count, smooth))
}

/// Gradient of the overlap surrogate over the Generated strokes of `sketch`.
fn overlap_gradients(sketch: &Sketch, mask: &MaskGrid, k: usize, scale: f64) -> Result<StrokeGradients, ObjectiveError> {
    let params = sample_params(k)?;
    let basis: Vec<[f64; 4]> = params.iter().map(|t| bernstein(*t)).collect();
    let mut grads = StrokeGradients::zeros(sketch);
    for (s, g) in sketch.strokes.iter().zip(grads.strokes.iter_mut()) {
        if s.tag == StrokeTag::Input {
            continue;
        }
        for (&t, w) in params.iter().zip(&basis) {
            let (_, df) = mask.field(s.curve.point_at(t));
            if df == Point::ZERO {
                continue;
            }
            for j in 0..4 {
                g.d_points[j] = g.d_points[j] + df * (scale * w[j]);
            }
        }
    }
    Ok(grads)
}

/// The completion objective bound to one guide, mask and backend. Caches the
/// guide's embedding across evaluations.
pub struct Objective<'a> {
    guide: RasterImage,
    guide_embedding: Vec<f64>,
    mask: &'a MaskGrid,
    weights: LossWeights,
    backend: &'a dyn PerceptualBackend,
    spec: CanvasSpec,
    samples: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        guide: &RasterImage,
        mask: &'a MaskGrid,
        weights: LossWeights,
        backend: &'a dyn PerceptualBackend,
        spec: CanvasSpec,
    ) -> Result<Self, ObjectiveError> {
        guide.check_dims(spec.width, spec.height)?;
        check_mask(mask, spec.width, spec.height)?;
        weights.validate()?;
        let guide = guide.to_gray();
        let guide_embedding = backend.embed(&guide)?;
        Ok(Self {
            guide,
            guide_embedding,
            mask,
            weights,
            backend,
            spec,
            samples: OVERLAP_SAMPLES,
        })
    }

    pub fn spec(&self) -> &CanvasSpec {
        &self.spec
    }

    pub fn guide(&self) -> &RasterImage {
        &self.guide
    }

    /// `1 - cosine`. With alpha = 0 a degenerate embedding is tolerated and
    /// reported as 0 since it cannot affect the total.
    fn similarity_term(&self, embedding: &[f64]) -> Result<f64, ObjectiveError> {
        match cosine(embedding, &self.guide_embedding) {
            Ok(sim) => Ok(1.0 - sim),
            Err(ObjectiveError::DegenerateEmbedding) if self.weights.alpha == 0.0 => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    fn generated_only(sketch: &Sketch) -> Sketch {
        Sketch::with_strokes(
            sketch.canvas_w,
            sketch.canvas_h,
            sketch.generated_strokes().cloned().collect(),
        )
    }

    pub fn evaluate(&self, complete: &Sketch) -> Result<LossBreakdown, ObjectiveError> {
        let image = render(complete, &self.spec);
        let similarity = self.similarity_term(&self.backend.embed(&image)?)?;
        let perceptual = self.backend.distance(&image, &self.guide)?;
        let (count, overlap) = overlap_penalty(&Self::generated_only(complete), self.mask, self.samples)?;
        Ok(LossBreakdown::assemble(&self.weights, similarity, perceptual, overlap, count))
    }

    /// Loss and its gradient with respect to every Generated stroke.
    pub fn evaluate_with_gradients(&self, complete: &Sketch) -> Result<(LossBreakdown, StrokeGradients), ObjectiveError> {
        let diff = self
            .backend
            .differentiable()
            .ok_or_else(|| ObjectiveError::NoAdjoint(self.backend.name().to_string()))?;
        let w = self.weights;
        let mut terms = (0.0, 0.0);
        let (_, mut grads) = render_with_adjoint(complete, &self.spec, |image| -> Result<RasterImage, ObjectiveError> {
            let embedding = self.backend.embed(image)?;
            terms.0 = self.similarity_term(&embedding)?;
            let mut cot = vec![0.0; embedding.len()];
            if w.alpha != 0.0 {
                // d(1 - cos)/de = -(g / (|e||g|) - cos * e / |e|^2)
                let (ne, ng) = (norm(&embedding), norm(&self.guide_embedding));
                let cos = 1.0 - terms.0;
                for ((c, e), g) in cot.iter_mut().zip(&embedding).zip(&self.guide_embedding) {
                    *c = -w.alpha * (g / (ne * ng) - cos * e / (ne * ne));
                }
            }
            let mut adjoint = match diff.embedding_distance(&embedding, &self.guide_embedding) {
                Some((dist, dist_cot)) => {
                    terms.1 = dist;
                    if w.beta != 0.0 {
                        for (c, d) in cot.iter_mut().zip(&dist_cot) {
                            *c += w.beta * d;
                        }
                    }
                    RasterImage::filled(image.width, image.height, 1, 0.0)
                }
                None => {
                    let (dist, dist_grad) = diff.distance_grad(image, &self.guide)?;
                    terms.1 = dist;
                    let mut adj = dist_grad;
                    adj.data.iter_mut().for_each(|g| *g *= w.beta);
                    adj
                }
            };
            if cot.iter().any(|c| *c != 0.0) {
                let back = diff.embed_vjp(image, &cot)?;
                for (a, b) in adjoint.data.iter_mut().zip(&back.data) {
                    *a += b;
                }
            }
            Ok(adjoint)
        })?;
        let (count, overlap) = overlap_penalty(&Self::generated_only(complete), self.mask, self.samples)?;
        if w.gamma != 0.0 {
            let og = overlap_gradients(complete, self.mask, self.samples, w.gamma)?;
            grads.add_scaled(&og, 1.0);
        }
        Ok((LossBreakdown::assemble(&w, terms.0, terms.1, overlap, count), grads))
    }
}

/// One-shot evaluation of the completion loss.
pub fn total_objective(
    complete: &Sketch,
    guide: &RasterImage,
    mask: &MaskGrid,
    weights: LossWeights,
    backend: &dyn PerceptualBackend,
    spec: &CanvasSpec,
) -> Result<LossBreakdown, ObjectiveError> {
    Objective::new(guide, mask, weights, backend, *spec)?.evaluate(complete)
}

/// Gradient of [`total_objective`] with respect to Generated stroke parameters.
pub fn objective_gradients(
    complete: &Sketch,
    guide: &RasterImage,
    mask: &MaskGrid,
    weights: LossWeights,
    backend: &dyn PerceptualBackend,
    spec: &CanvasSpec,
) -> Result<StrokeGradients, ObjectiveError> {
    Ok(Objective::new(guide, mask, weights, backend, *spec)?
        .evaluate_with_gradients(complete)?
        .1)
}
