//! Style-adjustment language: a small, side-effect-free replacement for
//! model-written code. Programs only ever touch Generated strokes.

mod adjust;
mod ast;
mod interp;
mod parser;

pub use adjust::{adjustment_loop, AdjustmentOutcome, AdjustmentStep, LoopStatus, DEFAULT_MAX_ITERS};
pub use ast::*;
pub use interp::{apply_program, sketch_fingerprint, DslError, LENGTH_SEGMENTS};
pub use parser::{parse_program, ParseError};

/// Deletes near-invisible strokes, caps widths at 90% of the input width,
/// pins opacity near 1 and nudges strokes by (2, 2).
pub const CANONICAL_PROGRAM: &str = "\
select generated where opacity < 0.12 => delete;
select generated => set width = max(0.5, min(width, input_width * 0.9));
select generated => set opacity = clamp(opacity, 0.95, 1);
select generated => translate(2, 2);
";
