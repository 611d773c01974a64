//! Guidance images: scribble conditioning and the providers that turn a
//! prompt plus scribble into the optimization target.

use crate::geom::Sketch;
use crate::raster::{hard_coverage_grid, CanvasSpec, RasterError, RasterImage};
use reqwest::blocking::{multipart, Client};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;
use thiserror::Error;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("guidance-unavailable: {0}")]
    Unavailable(String),
    #[error("provider returned a {got_w}x{got_h} image for a {want_w}x{want_h} canvas")]
    Contract {
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("guidance prompt is empty")]
    EmptyPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub prompt: String,
    pub scribble: RasterImage,
    /// Opaque sampler settings passed through to the service.
    pub params: BTreeMap<String, f64>,
}

impl GuidanceRequest {
    pub fn new(prompt: impl Into<String>, scribble: RasterImage) -> Self {
        Self {
            prompt: prompt.into(),
            scribble,
            params: BTreeMap::new(),
        }
    }
}

pub trait GuidanceProvider: Send + Sync {
    fn name(&self) -> &str;

    fn fetch(&self, request: &GuidanceRequest) -> Result<RasterImage, GuidanceError>;
}

/// Black-on-white hard-coverage rendering of every stroke, whatever its tag.
pub fn scribble_image(input: &Sketch, spec: &CanvasSpec) -> RasterImage {
    let grid = hard_coverage_grid(input, spec);
    RasterImage::gray(
        spec.width,
        spec.height,
        grid.iter().map(|c| if *c == 1 { 0.0 } else { 1.0 }).collect(),
    )
}

/// Validates the request, calls the provider and checks the returned size.
pub fn fetch_guidance(provider: &dyn GuidanceProvider, request: &GuidanceRequest) -> Result<RasterImage, GuidanceError> {
    if request.prompt.trim().is_empty() {
        return Err(GuidanceError::EmptyPrompt);
    }
    let image = provider.fetch(request)?;
    let s = &request.scribble;
    if image.width != s.width || image.height != s.height {
        return Err(GuidanceError::Contract {
            want_w: s.width,
            want_h: s.height,
            got_w: image.width,
            got_h: image.height,
        });
    }
    Ok(image)
}

/// Ignores the prompt and loads a fixed PNG.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub path: PathBuf,
}

impl FileProvider {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }
}

impl GuidanceProvider for FileProvider {
    fn name(&self) -> &str {
        "file"
    }

    fn fetch(&self, _request: &GuidanceRequest) -> Result<RasterImage, GuidanceError> {
        RasterImage::load_png(&self.path).map_err(|e| GuidanceError::Unavailable(format!("{}: {e}", self.path.display())))
    }
}

/// Scribble-conditioned generation service.
///
/// `POST {endpoint}/generate` with multipart fields `prompt` (text),
/// `scribble` (PNG) and `params` (JSON object); answers a PNG. Results of the
/// wrong size are resampled to the canvas.
pub struct HttpProvider {
    endpoint: String,
    client: Client,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, GuidanceError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GuidanceError::Unavailable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl GuidanceProvider for HttpProvider {
    fn name(&self) -> &str {
        "http"
    }

    fn fetch(&self, request: &GuidanceRequest) -> Result<RasterImage, GuidanceError> {
        let unavailable = |e: &dyn std::fmt::Display| GuidanceError::Unavailable(e.to_string());
        let scribble = &request.scribble;
        let png = scribble.to_png().map_err(|e| unavailable(&e))?;
        let params = serde_json::to_vec(&request.params).map_err(|e| unavailable(&e))?;
        let form = multipart::Form::new()
            .text("prompt", request.prompt.clone())
            .part(
                "scribble",
                multipart::Part::bytes(png)
                    .file_name("scribble.png")
                    .mime_str("image/png")
                    .map_err(|e| unavailable(&e))?,
            )
            .part(
                "params",
                multipart::Part::bytes(params)
                    .mime_str("application/json")
                    .map_err(|e| unavailable(&e))?,
            );
        let resp = self
            .client
            .post(format!("{}/generate", self.endpoint))
            .multipart(form)
            .send()
            .map_err(|e| unavailable(&e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(GuidanceError::Unavailable(format!("generation service answered {status}")));
        }
        let bytes = resp.bytes().map_err(|e| unavailable(&e))?;
        let image = RasterImage::from_png(&bytes).map_err(|e: RasterError| unavailable(&e))?;
        Ok(image.resized(scribble.width, scribble.height))
    }
}
