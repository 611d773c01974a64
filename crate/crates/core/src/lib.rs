//! Prompt-driven completion of partial vector sketches.
//!
//! Stage one optimizes new cubic strokes against a guidance image while
//! keeping them off the user's strokes; stage two repeatedly asks a
//! vision-language model for style differences and applies the resulting
//! adjustment programs until the sketch stops changing.

pub mod geom;
pub mod dsl;
pub mod guidance;
pub mod objective;
pub mod optimizer;
pub mod pipeline;
pub mod raster;
pub mod svg;
pub mod vlm;

pub use geom::{CubicBezier, Point, Sketch, Stroke, StrokeTag};
pub use raster::{CanvasSpec, RasterImage};
