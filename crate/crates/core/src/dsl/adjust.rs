use super::{apply_program, sketch_fingerprint};
use crate::geom::Sketch;
use crate::raster::{render_two_tone, CanvasSpec};
use crate::svg::serialize_svg;
use crate::vlm::{detect_style_differences, generate_adjustment_program, AugmentedPrompt, StyleDiffReport, VlmClient, SKELETON};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_ITERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentStep {
    pub report: StyleDiffReport,
    /// Program text as applied; empty for the identity program.
    pub program: String,
    /// Fingerprint after this step.
    pub fingerprint: String,
    /// Set when code generation or application failed and the identity
    /// program was used instead.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoopStatus {
    /// The sketch stopped changing.
    Converged,
    MaxIterations,
    /// Detection failed; the trace is partial.
    DetectionFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentOutcome {
    pub sketch: Sketch,
    pub trace: Vec<AdjustmentStep>,
    pub status: LoopStatus,
}

/// Detect, generate, apply; repeat until a program leaves the sketch
/// unchanged or `max_iters` rounds have run.
///
/// A round whose program could not be generated or applied keeps the sketch
/// as is and does not count as convergence.
pub fn adjustment_loop(client: &VlmClient, sketch: &Sketch, prompt: &AugmentedPrompt, max_iters: usize) -> AdjustmentOutcome {
    let spec = CanvasSpec::new(sketch.canvas_w, sketch.canvas_h);
    let mut current = sketch.clone();
    let mut fingerprint = sketch_fingerprint(&current);
    let mut trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        let svg = serialize_svg(&current);
        let report = match detect_style_differences(client, &render_two_tone(&current, &spec), &svg) {
            Ok(r) => r,
            Err(e) => {
                return AdjustmentOutcome {
                    sketch: current,
                    trace,
                    status: LoopStatus::DetectionFailed { message: e.to_string() },
                }
            }
        };
        let mut failure = None;
        let mut program = String::new();
        if !report.no_differences {
            match generate_adjustment_program(client, &report, &svg, prompt, SKELETON) {
                Ok((text, ast)) => match apply_program(&ast, &current) {
                    Ok(next) => {
                        current = next;
                        program = text;
                    }
                    Err(e) => failure = Some(e.to_string()),
                },
                Err(e) => failure = Some(e.to_string()),
            }
        }
        let next = sketch_fingerprint(&current);
        let unchanged = next == fingerprint && failure.is_none();
        fingerprint = next.clone();
        trace.push(AdjustmentStep {
            report,
            program,
            fingerprint: next,
            failure,
        });
        if unchanged {
            return AdjustmentOutcome {
                sketch: current,
                trace,
                status: LoopStatus::Converged,
            };
        }
    }
    AdjustmentOutcome {
        sketch: current,
        trace,
        status: LoopStatus::MaxIterations,
    }
}
