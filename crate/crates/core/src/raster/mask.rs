use super::render::{footprint, DistanceMode};
use super::CanvasSpec;
use crate::geom::{Point, Sketch};

/// Occupancy of the input strokes: an exact binary grid, its Gaussian blur,
/// and the depth of every set pixel below the mask boundary.
///
/// The overlap potential sampled by [`MaskGrid::field`] is the blur of
/// `binary + depth / (4 sigma)`, treating each pixel as a unit box so it can be
/// evaluated (with gradient) at any continuous position. The depth term keeps
/// the potential sloped toward free space deep inside large masked regions,
/// where the blurred binary grid alone is flat. `smooth` caches the blurred
/// binary grid at pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    pub width: u32,
    pub height: u32,
    pub binary: Vec<u8>,
    pub smooth: Vec<f64>,
    /// Euclidean distance from each set pixel center to the nearest free one.
    pub depth: Vec<f64>,
    pub sigma: f64,
    /// Summed-area table of `binary`, (width+1) x (height+1).
    occupied: Vec<u32>,
}

/// Blur support in units of sigma.
const SUPPORT: f64 = 6.0;

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl MaskGrid {
    pub fn empty(width: u32, height: u32, sigma: f64) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            binary: vec![0; n],
            smooth: vec![0.0; n],
            depth: vec![0.0; n],
            sigma,
            occupied: vec![0; (width as usize + 1) * (height as usize + 1)],
        }
    }

    /// Builds the blurred field from a binary grid.
    pub fn from_binary(width: u32, height: u32, binary: Vec<u8>, sigma: f64) -> Self {
        assert_eq!(binary.len(), width as usize * height as usize);
        let depth = distance_to_free(&binary, width as usize, height as usize);
        let mut mask = Self {
            width,
            height,
            binary,
            smooth: Vec::new(),
            depth,
            sigma,
            occupied: Vec::new(),
        };
        mask.smooth = mask.blur_at_centers();
        mask.occupied = summed_area(&mask.binary, width as usize, height as usize);
        mask
    }

    pub fn is_set(&self, x: u32, y: u32) -> bool {
        self.binary[y as usize * self.width as usize + x as usize] == 1
    }

    pub fn smooth_at(&self, x: u32, y: u32) -> f64 {
        self.smooth[y as usize * self.width as usize + x as usize]
    }

    pub fn set_count(&self) -> usize {
        self.binary.iter().filter(|b| **b == 1).count()
    }

    pub fn free_count(&self) -> usize {
        self.binary.len() - self.set_count()
    }

    /// Binary value at the pixel containing `p`; zero off-canvas.
    pub fn lookup_nearest(&self, p: Point) -> u8 {
        let (x, y) = (p.x.floor(), p.y.floor());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return 0;
        }
        self.binary[y as usize * self.width as usize + x as usize]
    }

    fn radius(&self) -> i64 {
        (SUPPORT * self.sigma).ceil() as i64 + 1
    }

    /// Per-cell weights `Phi((x-i)/s) - Phi((x-i-1)/s)` and their derivatives
    /// for cells `first..first+len` along one axis.
    fn axis_range(&self, x: f64, n: u32) -> (i64, i64) {
        let r = self.radius();
        (((x.floor() as i64) - r).max(0), ((x.floor() as i64) + r).min(n as i64 - 1))
    }

    fn axis_weights(&self, x: f64, n: u32) -> (i64, Vec<f64>, Vec<f64>) {
        let (first, last) = self.axis_range(x, n);
        let s = self.sigma;
        let mut w = Vec::new();
        let mut dw = Vec::new();
        for i in first..=last {
            let a = (x - i as f64) / s;
            let b = (x - i as f64 - 1.0) / s;
            w.push(normal_cdf(a) - normal_cdf(b));
            dw.push((normal_pdf(a) - normal_pdf(b)) / s);
        }
        (first, w, dw)
    }

    fn window_empty(&self, x0: usize, y0: usize, w: usize, h: usize) -> bool {
        let stride = self.width as usize + 1;
        let at = |x: usize, y: usize| self.occupied[y * stride + x];
        at(x0 + w, y0 + h) + at(x0, y0) == at(x0, y0 + h) + at(x0 + w, y0)
    }

    /// Weight of pixel `i` in the overlap potential.
    fn potential(&self, i: usize) -> f64 {
        if self.binary[i] == 1 {
            1.0 + self.depth[i] / (4.0 * self.sigma)
        } else {
            0.0
        }
    }

    /// Overlap potential and its spatial gradient at a continuous position.
    pub fn field(&self, p: Point) -> (f64, Point) {
        if self.sigma <= 0.0 {
            return (self.lookup_nearest(p) as f64, Point::ZERO);
        }
        let r = self.radius() as f64;
        if p.x < -r || p.y < -r || p.x > self.width as f64 + r || p.y > self.height as f64 + r {
            return (0.0, Point::ZERO);
        }
        let ((xa, xb), (ya, yb)) = (self.axis_range(p.x, self.width), self.axis_range(p.y, self.height));
        if xb < xa || yb < ya || self.window_empty(xa as usize, ya as usize, (xb - xa + 1) as usize, (yb - ya + 1) as usize) {
            return (0.0, Point::ZERO);
        }
        let (x0, wx, dwx) = self.axis_weights(p.x, self.width);
        let (y0, wy, dwy) = self.axis_weights(p.y, self.height);
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        let stride = self.width as usize;
        for (j, (wyj, dwyj)) in wy.iter().zip(&dwy).enumerate() {
            let row = (y0 as usize + j) * stride + x0 as usize;
            let mut acc = 0.0;
            let mut dacc = 0.0;
            for (i, (wxi, dwxi)) in wx.iter().zip(&dwx).enumerate() {
                let c = self.potential(row + i);
                if c != 0.0 {
                    acc += wxi * c;
                    dacc += dwxi * c;
                }
            }
            v += wyj * acc;
            gx += wyj * dacc;
            gy += dwyj * acc;
        }
        (v, Point::new(gx, gy))
    }

    fn blur_at_centers(&self) -> Vec<f64> {
        let (w, h) = (self.width as usize, self.height as usize);
        if self.sigma <= 0.0 {
            return self.binary.iter().map(|b| *b as f64).collect();
        }
        let r = self.radius();
        // Offsets are constant at pixel centers, so the blur is separable.
        let kernel: Vec<f64> = (-r..=r)
            .map(|k| {
                let c = k as f64 + 0.5;
                normal_cdf(c / self.sigma) - normal_cdf((c - 1.0) / self.sigma)
            })
            .collect();
        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kw) in kernel.iter().enumerate() {
                    let sx = x as i64 + ki as i64 - r;
                    if sx >= 0 && (sx as usize) < w && self.binary[y * w + sx as usize] == 1 {
                        acc += kw;
                    }
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, kw) in kernel.iter().enumerate() {
                    let sy = y as i64 + ki as i64 - r;
                    if sy >= 0 && (sy as usize) < h {
                        acc += kw * tmp[sy as usize * w + x];
                    }
                }
                // truncation leaves interiors a few ulps-of-1e-9 short of one
                out[y * w + x] = if acc > 1.0 - 1e-8 { 1.0 } else { acc.max(0.0) };
            }
        }
        out
    }
}

fn summed_area(binary: &[u8], w: usize, h: usize) -> Vec<u32> {
    let stride = w + 1;
    let mut sat = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0;
        for x in 0..w {
            row += binary[y * w + x] as u32;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    sat
}

/// Exact Euclidean distance transform: for set pixels, the distance to the
/// nearest free pixel center; zero for free pixels. A grid with no free pixel
/// gets `width + height` everywhere.
fn distance_to_free(binary: &[u8], w: usize, h: usize) -> Vec<f64> {
    if !binary.contains(&0) {
        return vec![(w + h) as f64; binary.len()];
    }
    let inf = ((w + h) * (w + h)) as f64 * 4.0;
    let mut sq: Vec<f64> = binary.iter().map(|b| if *b == 0 { 0.0 } else { inf }).collect();
    let mut line = Vec::new();
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| sq[y * w + x]));
        let out = lower_envelope(&line);
        for y in 0..h {
            sq[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        let out = lower_envelope(&sq[y * w..(y + 1) * w]);
        sq[y * w..(y + 1) * w].copy_from_slice(&out);
    }
    sq.iter().map(|v| v.sqrt()).collect()
}

/// One-dimensional squared distance transform `min_q (p - q)^2 + f(q)` by
/// the lower envelope of parabolas.
fn lower_envelope(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let meet = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * q as f64 - 2.0 * p as f64)
    };
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut out = vec![0.0; n];
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
    out
}

/// Hard (non anti-aliased, opacity-ignoring) coverage: 1 where a pixel center
/// is strictly within half a stroke width of some stroke.
pub fn hard_coverage_grid(sketch: &Sketch, spec: &CanvasSpec) -> Vec<u8> {
    let mut grid = vec![0u8; spec.pixel_count()];
    for s in &sketch.strokes {
        for h in footprint(s, spec.width, spec.height, spec.segments, 0.5 * s.width, DistanceMode::Hard) {
            grid[h.pixel as usize] = 1;
        }
    }
    grid
}

/// Occupancy mask of `input`, dilated by a disc of radius `dilation` and
/// blurred with `blur_sigma`.
pub fn build_mask(input: &Sketch, spec: &CanvasSpec, dilation: f64, blur_sigma: f64) -> MaskGrid {
    let (w, h) = (spec.width as usize, spec.height as usize);
    let hard = hard_coverage_grid(input, spec);
    let r = dilation.max(0.0);
    let ri = r.floor() as i64;
    let offsets: Vec<(i64, i64)> = (-ri..=ri)
        .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| ((dx * dx + dy * dy) as f64) <= r * r)
        .collect();
    let mut binary = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            if hard[y * w + x] == 0 {
                continue;
            }
            for (dx, dy) in &offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                    binary[ny as usize * w + nx as usize] = 1;
                }
            }
        }
    }
    MaskGrid::from_binary(spec.width, spec.height, binary, blur_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{CubicBezier, Stroke, StrokeTag};

    fn horizontal(y: f64, width: f64) -> Sketch {
        let mut sk = Sketch::new(32, 24);
        sk.strokes.push(Stroke::new(
            "in",
            CubicBezier::line(Point::new(4.0, y), Point::new(28.0, y)),
            width,
            0.3,
            StrokeTag::Input,
        ));
        sk
    }

    fn column(mask: &MaskGrid, x: u32) -> Vec<u32> {
        (0..mask.height).filter(|y| mask.is_set(x, *y)).collect()
    }

    #[test]
    fn empty_input_gives_empty_mask() {
        let spec = CanvasSpec::new(32, 24);
        let m = build_mask(&Sketch::new(32, 24), &spec, 2.0, 3.0);
        assert_eq!(m.set_count(), 0);
        assert!(m.smooth.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn straight_stroke_band() {
        let spec = CanvasSpec::new(32, 24);
        let m = build_mask(&horizontal(10.0, 4.0), &spec, 0.0, 3.0);
        // centers y+0.5 strictly within 2 of y=10: rows 8..=11
        assert_eq!(column(&m, 16), vec![8, 9, 10, 11]);
        assert!(m.is_set(10, 10));
        assert!(!m.is_set(10, 0));
    }

    #[test]
    fn dilation_widens_band_by_twice_radius() {
        let spec = CanvasSpec::new(32, 24);
        let m = build_mask(&horizontal(10.0, 4.0), &spec, 2.0, 3.0);
        assert_eq!(column(&m, 16), (6..=13).collect::<Vec<_>>());
    }

    #[test]
    fn smooth_field_properties() {
        let (w, h) = (60u32, 60u32);
        let binary: Vec<u8> = (0..w * h).map(|i| u8::from(i % w >= 30)).collect();
        let m = MaskGrid::from_binary(w, h, binary, 2.0);
        // deep interior
        assert_eq!(m.smooth_at(45, 30), 1.0);
        assert!(m.smooth_at(2, 30) < 1e-9);
        assert!(m.smooth.iter().all(|v| (0.0..=1.0).contains(v)));
        // 1-D oracle: rows far from the top and bottom edges see the column
        // potential 1 + (i - 29) / (4 sigma) for i >= 30
        let oracle = |x: f64| -> f64 {
            let cdf = |z: f64| 0.5 * libm::erfc(-z / 8.0f64.sqrt());
            (30..60)
                .map(|i| {
                    let c = 1.0 + (i - 29) as f64 / 8.0;
                    c * (cdf(x - i as f64) - cdf(x - i as f64 - 1.0))
                })
                .sum()
        };
        for x in [22.0, 29.5, 30.0, 31.25, 44.0] {
            let (v, _) = m.field(Point::new(x, 30.0));
            assert!((v - oracle(x)).abs() < 1e-9, "x={x}: {v} vs {}", oracle(x));
        }
        let (_, g) = m.field(Point::new(30.0, 30.0));
        assert!(g.x > 0.0 && g.y.abs() < 1e-8);
        // deep inside, the blurred depth ramp still slopes toward free space
        let (_, g) = m.field(Point::new(45.0, 30.0));
        assert!((g.x - 1.0 / 8.0).abs() < 1e-6 && g.y.abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn depth_matches_brute_force() {
        let (w, h) = (23usize, 17usize);
        let binary: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                u8::from((x - 9).pow(2) + (y - 8).pow(2) < 40 || (x > 15 && y > 3))
            })
            .collect();
        let d = distance_to_free(&binary, w, h);
        for i in 0..w * h {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let want = (0..w * h)
                .filter(|j| binary[*j] == 0)
                .map(|j| ((j % w) as f64 - x).hypot((j / w) as f64 - y))
                .fold(f64::INFINITY, f64::min);
            assert!((d[i] - want).abs() < 1e-12, "{i}");
        }
        assert_eq!(distance_to_free(&[1; 6], 3, 2), vec![5.0; 6]);
    }

    #[test]
    fn field_gradient_matches_finite_differences() {
        let (w, h) = (40u32, 40u32);
        let binary: Vec<u8> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                u8::from((x - 20).pow(2) + (y - 18).pow(2) < 64)
            })
            .collect();
        let m = MaskGrid::from_binary(w, h, binary, 3.0);
        for p in [Point::new(27.3, 17.1), Point::new(14.9, 23.6), Point::new(20.2, 30.0)] {
            let (_, g) = m.field(p);
            let eps = 1e-5;
            let fx = (m.field(p + Point::new(eps, 0.0)).0 - m.field(p - Point::new(eps, 0.0)).0) / (2.0 * eps);
            let fy = (m.field(p + Point::new(0.0, eps)).0 - m.field(p - Point::new(0.0, eps)).0) / (2.0 * eps);
            assert!((g.x - fx).abs() < 1e-7 && (g.y - fy).abs() < 1e-7);
        }
    }

    #[test]
    fn nearest_lookup() {
        let binary = vec![0, 1, 0, 0];
        let m = MaskGrid::from_binary(2, 2, binary, 1.0);
        assert_eq!(m.lookup_nearest(Point::new(1.9, 0.1)), 1);
        assert_eq!(m.lookup_nearest(Point::new(0.9, 0.1)), 0);
        assert_eq!(m.lookup_nearest(Point::new(-0.1, 0.1)), 0);
        assert_eq!(m.lookup_nearest(Point::new(2.0, 0.1)), 0);
    }
}
