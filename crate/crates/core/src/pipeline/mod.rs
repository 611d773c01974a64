//! Two-stage completion sessions: content optimization, then style
//! adjustment, plus iteration on finished sessions and persistence.

mod store;

pub use store::{SessionStore, StoreError};

use crate::dsl::{adjustment_loop, AdjustmentStep, LoopStatus, DEFAULT_MAX_ITERS};
use crate::geom::{Sketch, StrokeTag};
use crate::guidance::{fetch_guidance, scribble_image, GuidanceProvider, GuidanceRequest};
use crate::objective::{LossBreakdown, PerceptualBackend};
use crate::optimizer::{optimize, OptimizerConfig, ProgressFn, RunControl};
use crate::raster::{build_mask, render, CanvasSpec, RasterImage};
use crate::vlm::{augment_prompt, AugmentedPrompt, VlmClient, VlmError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::AtomicBool;
use thiserror::Error;

pub const MASK_DILATION: f64 = 2.0;
pub const MASK_SIGMA: f64 = 3.0;
pub const INTERRUPTED: &str = "interrupted";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "reason")]
pub enum SessionStatus {
    Created,
    Stage1Running,
    Stage1Done,
    Stage2Running,
    Done,
    Failed(String),
}

impl SessionStatus {
    pub fn is_running(&self) -> bool {
        matches!(self, SessionStatus::Stage1Running | SessionStatus::Stage2Running)
    }

    /// Whether `self -> next` is an edge of the status graph.
    pub fn can_become(&self, next: &SessionStatus) -> bool {
        use SessionStatus::*;
        matches!(
            (self, next),
            (Created, Stage1Running) | (Stage1Running, Stage1Done) | (Stage1Done, Stage2Running) | (Stage2Running, Done)
        ) || (self.is_running() && matches!(next, Failed(_)))
    }
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SessionStatus::Failed(r) => write!(f, "Failed({r})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub prompt: String,
    pub augmented: Option<AugmentedPrompt>,
    pub input: Sketch,
    /// Persisted as a PNG blob next to the record.
    #[serde(skip)]
    pub guidance: Option<RasterImage>,
    pub intermediate: Option<Sketch>,
    #[serde(rename = "final")]
    pub final_sketch: Option<Sketch>,
    pub loss_trace: Vec<LossBreakdown>,
    pub adjustment_trace: Vec<AdjustmentStep>,
    pub adjustment_status: Option<LoopStatus>,
    pub warnings: Vec<String>,
    pub status: SessionStatus,
    pub parent: Option<String>,
    pub config: OptimizerConfig,
}

impl SessionState {
    /// Every stroke of `input` is re-tagged Input.
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, mut input: Sketch, config: OptimizerConfig) -> Self {
        for s in &mut input.strokes {
            s.tag = StrokeTag::Input;
        }
        Self {
            id: id.into(),
            prompt: prompt.into(),
            augmented: None,
            input,
            guidance: None,
            intermediate: None,
            final_sketch: None,
            loss_trace: Vec::new(),
            adjustment_trace: Vec::new(),
            adjustment_status: None,
            warnings: Vec::new(),
            status: SessionStatus::Created,
            parent: None,
            config,
        }
    }

    pub fn seed(&self) -> u64 {
        self.config.rng_seed
    }

    fn transition(&mut self, next: SessionStatus, hooks: &Hooks<'_>) {
        debug_assert!(self.status.can_become(&next), "{} -> {next}", self.status);
        self.status = next;
        if let Some(f) = hooks.on_transition {
            f(self);
        }
    }

    fn fail(&mut self, reason: impl Into<String>, hooks: &Hooks<'_>) {
        self.transition(SessionStatus::Failed(reason.into()), hooks);
    }
}

/// Random 16-hex-digit session id.
pub fn new_session_id() -> String {
    format!("{:016x}", rand::thread_rng().gen::<u64>())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("session {id} is {found}, expected {expected}")]
    Precondition { id: String, expected: String, found: String },
    #[error("unknown stroke ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("invalid request: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRequest {
    pub retained_ids: Vec<String>,
    /// Tagged Input regardless of the colors they were drawn with.
    pub new_strokes: Sketch,
    pub prompt: Option<String>,
}

pub struct PipelineContext<'a> {
    pub vlm: &'a VlmClient,
    pub guidance: &'a dyn GuidanceProvider,
    pub backend: &'a dyn PerceptualBackend,
    pub max_adjust_iters: usize,
}

impl<'a> PipelineContext<'a> {
    pub fn new(vlm: &'a VlmClient, guidance: &'a dyn GuidanceProvider, backend: &'a dyn PerceptualBackend) -> Self {
        Self {
            vlm,
            guidance,
            backend,
            max_adjust_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Observers for long runs. `on_transition` sees every status change.
#[derive(Default)]
pub struct Hooks<'a> {
    pub cancel: Option<&'a AtomicBool>,
    pub progress: Option<ProgressFn<'a>>,
    pub on_transition: Option<&'a (dyn Fn(&SessionState) + Sync)>,
}

fn require(session: &SessionState, expected: SessionStatus) -> Result<(), PipelineError> {
    if session.status == expected {
        Ok(())
    } else {
        Err(PipelineError::Precondition {
            id: session.id.clone(),
            expected: expected.to_string(),
            found: session.status.to_string(),
        })
    }
}

fn cancelled(hooks: &Hooks<'_>) -> bool {
    hooks.cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed))
}

/// Augments the prompt, fetches guidance and optimizes new strokes.
/// Component failures end in `Failed`; only a wrong starting status is an
/// `Err`.
pub fn stage1(session: &mut SessionState, ctx: &PipelineContext<'_>, hooks: &Hooks<'_>) -> Result<(), PipelineError> {
    require(session, SessionStatus::Created)?;
    session.transition(SessionStatus::Stage1Running, hooks);
    let spec = CanvasSpec::new(session.input.canvas_w, session.input.canvas_h);

    let augmented = match augment_prompt(ctx.vlm, &session.prompt, &render(&session.input, &spec)) {
        Ok(p) => p,
        Err(VlmError::AugmentationUnavailable(e)) => {
            session.warnings.push(format!("augmentation-unavailable: {e}; using the fixed style suffix"));
            AugmentedPrompt::fallback(session.prompt.clone())
        }
        Err(e) => {
            session.fail(e.to_string(), hooks);
            return Ok(());
        }
    };
    session.augmented = Some(augmented.clone());
    if cancelled(hooks) {
        session.fail(INTERRUPTED, hooks);
        return Ok(());
    }

    let request = GuidanceRequest::new(augmented.combined.clone(), scribble_image(&session.input, &spec));
    // quantized so the optimization target is exactly what gets stored
    let fetched = fetch_guidance(ctx.guidance, &request)
        .map_err(|e| e.to_string())
        .and_then(|img| img.to_png().and_then(|png| RasterImage::from_png(&png)).map_err(|e| format!("guidance image: {e}")));
    let guidance = match fetched {
        Ok(img) => img,
        Err(e) => {
            session.fail(e.to_string(), hooks);
            return Ok(());
        }
    };
    session.guidance = Some(guidance.clone());

    let mask = build_mask(&session.input, &spec, MASK_DILATION, MASK_SIGMA);
    let control = RunControl {
        cancel: hooks.cancel,
        progress: hooks.progress,
    };
    match optimize(&session.input, &guidance, &mask, &session.config, ctx.backend, &control) {
        Ok(result) => {
            session.loss_trace = result.trace;
            match result.aborted {
                Some(abort) => session.fail(abort.reason, hooks),
                None => {
                    session.intermediate = Some(result.sketch);
                    session.transition(SessionStatus::Stage1Done, hooks);
                }
            }
        }
        Err(e) => session.fail(e.to_string(), hooks),
    }
    Ok(())
}

/// Runs the style adjustment loop on the intermediate sketch.
pub fn stage2(session: &mut SessionState, ctx: &PipelineContext<'_>, hooks: &Hooks<'_>) -> Result<(), PipelineError> {
    require(session, SessionStatus::Stage1Done)?;
    session.transition(SessionStatus::Stage2Running, hooks);
    let intermediate = session.intermediate.clone().expect("Stage1Done implies an intermediate sketch");
    let prompt = session
        .augmented
        .clone()
        .unwrap_or_else(|| AugmentedPrompt::fallback(session.prompt.clone()));
    let outcome = adjustment_loop(ctx.vlm, &intermediate, &prompt, ctx.max_adjust_iters);
    if cancelled(hooks) {
        session.fail(INTERRUPTED, hooks);
        return Ok(());
    }
    if let LoopStatus::DetectionFailed { message } = &outcome.status {
        session.warnings.push(format!("style detection failed: {message}"));
    }
    for step in &outcome.trace {
        if let Some(f) = &step.failure {
            session.warnings.push(format!("adjustment round used the identity program: {f}"));
        }
    }
    session.adjustment_trace = outcome.trace;
    session.adjustment_status = Some(outcome.status);
    session.final_sketch = Some(outcome.sketch);
    session.transition(SessionStatus::Done, hooks);
    Ok(())
}

/// Stage 1 then, unless it failed, stage 2.
pub fn complete(session: &mut SessionState, ctx: &PipelineContext<'_>, hooks: &Hooks<'_>) -> Result<(), PipelineError> {
    stage1(session, ctx, hooks)?;
    if session.status == SessionStatus::Stage1Done {
        stage2(session, ctx, hooks)?;
    }
    Ok(())
}

/// New session whose input is the retained strokes of `parent`'s final
/// sketch plus the request's new strokes, all tagged Input.
pub fn iterate(parent: &SessionState, request: &IterationRequest, id: impl Into<String>) -> Result<SessionState, PipelineError> {
    require(parent, SessionStatus::Done)?;
    let fin = parent.final_sketch.as_ref().expect("Done implies a final sketch");
    let unknown: Vec<String> = request
        .retained_ids
        .iter()
        .filter(|id| fin.get(id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(PipelineError::UnknownIds(unknown));
    }
    let new = &request.new_strokes;
    if !new.is_empty() && (new.canvas_w, new.canvas_h) != (fin.canvas_w, fin.canvas_h) {
        return Err(PipelineError::Validation(format!(
            "new strokes are on a {}x{} canvas, session canvas is {}x{}",
            new.canvas_w, new.canvas_h, fin.canvas_w, fin.canvas_h
        )));
    }
    let keep: HashSet<&str> = request.retained_ids.iter().map(String::as_str).collect();
    let mut input = Sketch::new(fin.canvas_w, fin.canvas_h);
    input.strokes.extend(fin.strokes.iter().filter(|s| keep.contains(s.id.as_str())).cloned());
    let mut taken: HashSet<String> = input.strokes.iter().map(|s| s.id.clone()).collect();
    for s in &new.strokes {
        let mut s = s.clone();
        let mut n = 1;
        let base = s.id.clone();
        while taken.contains(&s.id) {
            s.id = format!("{base}-new{n}");
            n += 1;
        }
        taken.insert(s.id.clone());
        input.strokes.push(s);
    }
    input.validate().map_err(|e| PipelineError::Validation(e.to_string()))?;
    let prompt = request.prompt.clone().filter(|p| !p.trim().is_empty()).unwrap_or_else(|| parent.prompt.clone());
    let mut child = SessionState::new(id, prompt, input, parent.config.clone());
    child.parent = Some(parent.id.clone());
    Ok(child)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_graph() {
        use SessionStatus::*;
        let f = || Failed("x".into());
        assert!(Created.can_become(&Stage1Running));
        assert!(Stage2Running.can_become(&Done));
        assert!(Stage1Running.can_become(&f()));
        assert!(!Created.can_become(&f()));
        assert!(!Created.can_become(&Done));
        assert!(!Done.can_become(&Stage1Running));
        assert!(!Stage1Done.can_become(&f()));
    }

    #[test]
    fn status_json_shape() {
        let s = serde_json::to_string(&SessionStatus::Failed("interrupted".into())).unwrap();
        assert_eq!(s, r#"{"state":"Failed","reason":"interrupted"}"#);
        assert_eq!(serde_json::to_string(&SessionStatus::Done).unwrap(), r#"{"state":"Done"}"#);
    }

    #[test]
    fn ids_are_distinct_hex() {
        let (a, b) = (new_session_id(), new_session_id());
        assert_ne!(a, b);
        assert!(a.len() == 16 && a.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
