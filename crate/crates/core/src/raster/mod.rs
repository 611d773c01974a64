//! Software rasterization of width/opacity strokes.
//!
//! Coverage is a smoothstep ramp over the distance to a polyline
//! approximation of each curve; strokes composite multiplicatively so the
//! image does not depend on stroke order.

mod mask;
mod render;

pub use mask::{build_mask, hard_coverage_grid, MaskGrid};
pub use render::{
    distance_to_stroke, render, render_two_tone, render_with_adjoint, render_with_gradients, StrokeGradient,
    StrokeGradients,
};

use serde::{Deserialize, Serialize};
use std::io::Cursor;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    DimensionMismatch {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("expected a {want}-channel image, got {got}")]
    ChannelMismatch { want: u8, got: u8 },
    #[error("png decode: {0}")]
    Decode(String),
    #[error("png encode: {0}")]
    Encode(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanvasSpec {
    pub width: u32,
    pub height: u32,
    /// Background intensity; 1.0 is white.
    pub background: f64,
    /// Half-width of the anti-aliasing ramp in pixels.
    pub aa_band: f64,
    /// Polyline pieces per curve for distance queries.
    pub segments: usize,
}

impl CanvasSpec {
    pub const OPTIMIZATION_SEGMENTS: usize = 16;
    pub const FINAL_SEGMENTS: usize = 64;

    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            background: 1.0,
            aa_band: 1.0,
            segments: Self::FINAL_SEGMENTS,
        }
    }

    pub fn with_segments(mut self, segments: usize) -> Self {
        self.segments = segments.max(1);
        self
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    /// Row-major, channel-interleaved intensities in [0, 1].
    pub data: Vec<f64>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, channels: u8, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width as usize * height as usize * channels as usize],
        }
    }

    pub fn gray(width: u32, height: u32, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width as usize * height as usize);
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels as usize]
    }

    pub fn check_dims(&self, width: u32, height: u32) -> Result<(), RasterError> {
        if self.width != width || self.height != height {
            return Err(RasterError::DimensionMismatch {
                want_w: width,
                want_h: height,
                got_w: self.width,
                got_h: self.height,
            });
        }
        Ok(())
    }

    /// Luminance view; RGB uses Rec. 601 weights.
    pub fn to_gray(&self) -> RasterImage {
        match self.channels {
            1 => self.clone(),
            _ => {
                let c = self.channels as usize;
                let data = self
                    .data
                    .chunks(c)
                    .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                    .collect();
                RasterImage::gray(self.width, self.height, data)
            }
        }
    }

    pub fn mse(&self, other: &RasterImage) -> Result<f64, RasterError> {
        other.check_dims(self.width, self.height)?;
        if self.channels != other.channels {
            return Err(RasterError::ChannelMismatch {
                want: self.channels,
                got: other.channels,
            });
        }
        let n = self.data.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// Resampled to `width` x `height` with a triangle filter; unchanged if
    /// the size already matches.
    pub fn resized(&self, width: u32, height: u32) -> RasterImage {
        if self.width == width && self.height == height {
            return self.clone();
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(width as usize * height as usize * c);
        let planes: Vec<_> = (0..c)
            .map(|ch| {
                let plane: Vec<f32> = self.data.iter().skip(ch).step_by(c).map(|v| *v as f32).collect();
                let buf = image::ImageBuffer::<image::Luma<f32>, _>::from_raw(self.width, self.height, plane)
                    .expect("plane matches dimensions");
                image::imageops::resize(&buf, width, height, image::imageops::FilterType::Triangle).into_raw()
            })
            .collect();
        for i in 0..width as usize * height as usize {
            data.extend(planes.iter().map(|p| (p[i] as f64).clamp(0.0, 1.0)));
        }
        RasterImage {
            width,
            height,
            channels: self.channels,
            data,
        }
    }

    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(Cursor::new(&mut buf), self.width, self.height);
            enc.set_color(match self.channels {
                1 => png::ColorType::Grayscale,
                3 => png::ColorType::Rgb,
                4 => png::ColorType::Rgba,
                n => return Err(RasterError::Encode(format!("unsupported channel count {n}"))),
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| RasterError::Encode(e.to_string()))?;
            let bytes: Vec<u8> = self.data.iter().map(|v| to_byte(*v)).collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| RasterError::Encode(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn from_png(bytes: &[u8]) -> Result<RasterImage, RasterError> {
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::normalize_to_color8());
        let mut reader = decoder.read_info().map_err(|e| RasterError::Decode(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| RasterError::Decode("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| RasterError::Decode(e.to_string()))?;
        let raw = &buf[..info.buffer_size()];
        let (channels, keep): (u8, usize) = match info.color_type {
            png::ColorType::Grayscale => (1, 1),
            png::ColorType::GrayscaleAlpha => (1, 2),
            png::ColorType::Rgb => (3, 3),
            png::ColorType::Rgba => (3, 4),
            png::ColorType::Indexed => return Err(RasterError::Decode("unexpanded palette".into())),
        };
        let data = raw
            .chunks(keep)
            .flat_map(|px| px[..channels as usize].iter().map(|b| *b as f64 / 255.0))
            .collect();
        Ok(RasterImage {
            width: info.width,
            height: info.height,
            channels,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<RasterImage, RasterError> {
        RasterImage::from_png(&std::fs::read(path)?)
    }
}

/// Scales to 8 bits, rounding half up.
fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
