use super::ObjectiveError;
use crate::raster::RasterImage;
use rayon::prelude::*;

/// Image embedding and perceptual distance.
///
/// Implementations must be deterministic, with `distance(a, a) == 0` and
/// `distance` symmetric.
pub trait PerceptualBackend: Send + Sync {
    fn name(&self) -> &str;

    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>, ObjectiveError>;

    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64, ObjectiveError>;

    /// Pixel-space adjoints, required for optimization.
    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        None
    }
}

pub trait DifferentiableBackend {
    /// Vector-Jacobian product of `embed` at `image`: returns
    /// d(cotangent . embed(image)) / d(pixel) as a single-channel image.
    fn embed_vjp(&self, image: &RasterImage, cotangent: &[f64]) -> Result<RasterImage, ObjectiveError>;

    /// `distance(a, b)` and its gradient with respect to the pixels of `a`.
    fn distance_grad(&self, a: &RasterImage, b: &RasterImage) -> Result<(f64, RasterImage), ObjectiveError>;

    /// For backends whose distance is a function of the two embeddings: the
    /// distance and its gradient with respect to the first embedding.
    fn embedding_distance(&self, _a: &[f64], _b: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }
}

/// Multi-scale local-contrast features.
///
/// The grayscale image is box-downsampled by 2 to form `levels` pyramid
/// levels. Each level is Gaussian-smoothed (`blur`, in level pixels, edges
/// replicated), tiled into `cell`x`cell` blocks, and every pixel contributes
/// its intensity minus the mean of its block, scaled by `level_gain^level`.
/// The embedding is linear in the pixels and invariant to uniform intensity
/// shifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidBackend {
    pub levels: usize,
    pub cell: usize,
    pub blur: f64,
    pub level_gain: f64,
}

impl Default for PyramidBackend {
    fn default() -> Self {
        Self {
            levels: 4,
            cell: 8,
            blur: 3.0,
            level_gain: 3.0,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> (i64, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    (r, k.into_iter().map(|v| v / norm).collect())
}

/// Convolves every row with the symmetric `kernel`, edges replicated, or
/// applies the adjoint of that operation.
fn blur_rows(w: usize, data: &mut [f64], kernel: &(i64, Vec<f64>), transpose: bool) {
    let (r, k) = (kernel.0 as usize, &kernel.1);
    data.par_chunks_mut(w).for_each_init(
        || vec![0.0; w + 2 * r],
        |buf, row| {
            if transpose {
                buf.iter_mut().for_each(|v| *v = 0.0);
                for (i, g) in row.iter().enumerate() {
                    for (j, kv) in k.iter().enumerate() {
                        buf[i + j] += kv * g;
                    }
                }
                row.copy_from_slice(&buf[r..r + w]);
                row[0] += buf[..r].iter().sum::<f64>();
                row[w - 1] += buf[r + w..].iter().sum::<f64>();
            } else {
                buf[..r].fill(row[0]);
                buf[r..r + w].copy_from_slice(row);
                buf[r + w..].fill(row[w - 1]);
                for (i, out) in row.iter_mut().enumerate() {
                    *out = k.iter().zip(&buf[i..i + 2 * r + 1]).map(|(a, b)| a * b).sum();
                }
            }
        },
    );
}

fn transpose(w: usize, h: usize, data: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

/// Separable Gaussian smoothing with replicated edges (or its adjoint).
fn smooth(w: usize, h: usize, data: &mut Vec<f64>, sigma: f64, adjoint: bool) {
    if sigma <= 0.0 {
        return;
    }
    let kernel = gaussian_kernel(sigma);
    blur_rows(w, data, &kernel, adjoint);
    let mut t = transpose(w, h, data);
    blur_rows(h, &mut t, &kernel, adjoint);
    *data = transpose(h, w, &t);
}

struct Level {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl PyramidBackend {
    fn pyramid(&self, image: &RasterImage) -> Vec<Level> {
        let gray = image.to_gray();
        let mut levels = vec![Level {
            w: gray.width as usize,
            h: gray.height as usize,
            data: gray.data,
        }];
        while levels.len() < self.levels {
            let prev = levels.last().expect("non-empty");
            let (w, h) = (prev.w / 2, prev.h / 2);
            if w == 0 || h == 0 {
                break;
            }
            let mut data = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let i = 2 * y * prev.w + 2 * x;
                    data[y * w + x] =
                        0.25 * (prev.data[i] + prev.data[i + 1] + prev.data[i + prev.w] + prev.data[i + prev.w + 1]);
                }
            }
            levels.push(Level { w, h, data });
        }
        levels
    }

    /// Subtracts each block's mean in place. Self-adjoint.
    fn center_cells(&self, w: usize, h: usize, data: &mut [f64]) {
        let c = self.cell.max(1);
        for by in (0..h).step_by(c) {
            for bx in (0..w).step_by(c) {
                let (ey, ex) = ((by + c).min(h), (bx + c).min(w));
                let n = ((ey - by) * (ex - bx)) as f64;
                let mut mean = 0.0;
                for y in by..ey {
                    mean += data[y * w + bx..y * w + ex].iter().sum::<f64>();
                }
                mean /= n;
                for y in by..ey {
                    for v in &mut data[y * w + bx..y * w + ex] {
                        *v -= mean;
                    }
                }
            }
        }
    }

    fn features(&self, image: &RasterImage) -> Vec<f64> {
        let mut out = Vec::new();
        for (li, mut level) in self.pyramid(image).into_iter().enumerate() {
            smooth(level.w, level.h, &mut level.data, self.blur, false);
            self.center_cells(level.w, level.h, &mut level.data);
            let gain = self.level_gain.powi(li as i32);
            out.extend(level.data.iter().map(|v| v * gain));
        }
        out
    }

    fn check_pair(a: &RasterImage, b: &RasterImage) -> Result<(), ObjectiveError> {
        b.check_dims(a.width, a.height)?;
        Ok(())
    }
}

impl PerceptualBackend for PyramidBackend {
    fn name(&self) -> &str {
        "pyramid"
    }

    fn embed(&self, image: &RasterImage) -> Result<Vec<f64>, ObjectiveError> {
        Ok(self.features(image))
    }

    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64, ObjectiveError> {
        Self::check_pair(a, b)?;
        let (fa, fb) = (self.features(a), self.features(b));
        Ok(feature_mse(&fa, &fb).0)
    }

    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        Some(self)
    }
}

impl DifferentiableBackend for PyramidBackend {
    fn embed_vjp(&self, image: &RasterImage, cotangent: &[f64]) -> Result<RasterImage, ObjectiveError> {
        let shapes: Vec<(usize, usize)> = self.pyramid(image).iter().map(|l| (l.w, l.h)).collect();
        let total: usize = shapes.iter().map(|(w, h)| w * h).sum();
        if cotangent.len() != total {
            return Err(ObjectiveError::Backend(format!(
                "cotangent has {} entries, embedding has {total}",
                cotangent.len()
            )));
        }
        let mut offset = total;
        let mut carry: Vec<f64> = Vec::new();
        for (li, &(w, h)) in shapes.iter().enumerate().rev() {
            offset -= w * h;
            let gain = self.level_gain.powi(li as i32);
            let mut grad: Vec<f64> = cotangent[offset..offset + w * h].iter().map(|v| v * gain).collect();
            self.center_cells(w, h, &mut grad);
            smooth(w, h, &mut grad, self.blur, true);
            if li + 1 < shapes.len() {
                let (cw, ch) = shapes[li + 1];
                for y in 0..ch {
                    for x in 0..cw {
                        let g = 0.25 * carry[y * cw + x];
                        let i = 2 * y * w + 2 * x;
                        grad[i] += g;
                        grad[i + 1] += g;
                        grad[i + w] += g;
                        grad[i + w + 1] += g;
                    }
                }
            }
            carry = grad;
        }
        if image.channels != 1 {
            return Err(ObjectiveError::Backend("adjoints need a grayscale image".into()));
        }
        Ok(RasterImage::gray(image.width, image.height, carry))
    }

    fn distance_grad(&self, a: &RasterImage, b: &RasterImage) -> Result<(f64, RasterImage), ObjectiveError> {
        Self::check_pair(a, b)?;
        let (value, cot) = feature_mse(&self.features(a), &self.features(b));
        Ok((value, self.embed_vjp(a, &cot)?))
    }

    fn embedding_distance(&self, a: &[f64], b: &[f64]) -> Option<(f64, Vec<f64>)> {
        (a.len() == b.len()).then(|| feature_mse(a, b))
    }
}

fn feature_mse(fa: &[f64], fb: &[f64]) -> (f64, Vec<f64>) {
    let n = fa.len().max(1) as f64;
    let diff: Vec<f64> = fa.iter().zip(fb).map(|(x, y)| x - y).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (value, diff.iter().map(|d| 2.0 * d / n).collect())
}
