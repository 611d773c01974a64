//! Vision-language model access: prompt augmentation, style-difference
//! detection and adjustment-program generation, with record/replay.

mod client;

pub use client::{
    replay_or_call, ChatTransport, Fixture, FixtureStore, OpenAiTransport, Part, VlmClient, VlmMode, VlmRequest, DEFAULT_MODEL,
    DEFAULT_TIMEOUT, LIVE_ATTEMPTS,
};

use crate::dsl::{parse_program, AdjustmentProgram};
use crate::raster::RasterImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AUGMENT_PREAMBLE: &str = include_str!("prompts/augment.txt");
pub const DETECT_PREAMBLE: &str = include_str!("prompts/detect.txt");
pub const CODEGEN_PREAMBLE: &str = include_str!("prompts/codegen.txt");

pub const MAX_DESCRIPTION_WORDS: usize = 60;
pub const FALLBACK_STYLE: &str = "in non-photorealistic styles";
pub const NO_DIFFERENCES: &str = "NO DIFFERENCES";
pub const CODEGEN_ATTEMPTS: usize = 3;

/// Template handed to the model; `??` marks the holes it fills in.
pub const SKELETON: &str = "\
# 1. remove strokes with extreme attributes
select generated where opacity < ?? => delete;
# 2. adjust stroke width
select generated => set width = max(??, min(width, input_width * ??));
# 3. adjust opacity
select generated => set opacity = clamp(opacity, ??, ??);
# 4. adjust the path
select generated => translate(??, ??);
";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("client failure after {attempts} attempts: {last}")]
    ClientFailure { attempts: usize, last: String },
    #[error("missing fixture {0}")]
    MissingFixture(String),
    #[error("fixture store: {0}")]
    Store(String),
    #[error("not configured: {0}")]
    NotConfigured(String),
    #[error("precondition: {0}")]
    Precondition(String),
    #[error("augmentation-unavailable: {0}")]
    AugmentationUnavailable(String),
    #[error("report-parse: {0}")]
    ReportParse(String),
    #[error("codegen-failure after {attempts} attempts: {last}")]
    CodegenFailure { attempts: usize, last: String },
    #[error("image encoding: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub base: String,
    pub style_descriptions: String,
    pub combined: String,
}

impl AugmentedPrompt {
    pub fn new(base: impl Into<String>, style_descriptions: impl Into<String>) -> Self {
        let base = base.into();
        let style_descriptions = style_descriptions.into();
        let combined = format!("{base}, {style_descriptions}");
        Self {
            base,
            style_descriptions,
            combined,
        }
    }

    pub fn fallback(base: impl Into<String>) -> Self {
        Self::new(base, FALLBACK_STYLE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aspect {
    AbstractionLevel,
    Thickness,
    Smoothness,
    Curvature,
    Opacity,
    Other,
}

const ASPECT_KEYWORDS: [(Aspect, &[&str]); 5] = [
    (Aspect::AbstractionLevel, &["abstract", "detail", "sparse", "simplif", "minimal", "number of stroke", "fewer stroke", "more stroke"]),
    (Aspect::Thickness, &["thick", "thin", "width", "wide", "bold", "weight"]),
    (Aspect::Smoothness, &["smooth", "jagged", "rough", "wobbl", "jitter", "shaky", "sketchy"]),
    (Aspect::Curvature, &["curv", "straight", "bend", "angular", "round"]),
    (Aspect::Opacity, &["opacity", "opaque", "transparen", "faint", "alpha", "translucen"]),
];

/// The aspect whose keyword occurs earliest in the line, `Other` if none does.
pub fn classify_aspect(line: &str) -> Aspect {
    let lower = line.to_lowercase();
    ASPECT_KEYWORDS
        .iter()
        .filter_map(|(aspect, words)| words.iter().filter_map(|w| lower.find(w)).min().map(|pos| (pos, *aspect)))
        .min_by_key(|(pos, _)| *pos)
        .map_or(Aspect::Other, |(_, a)| a)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleDiffItem {
    pub aspect: Aspect,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StyleDiffReport {
    pub items: Vec<StyleDiffItem>,
    /// Set when the model reported that the styles already match.
    pub no_differences: bool,
}

impl StyleDiffReport {
    pub fn none() -> Self {
        Self {
            items: Vec::new(),
            no_differences: true,
        }
    }

    pub fn to_text(&self) -> String {
        if self.no_differences {
            return NO_DIFFERENCES.to_string();
        }
        self.items
            .iter()
            .enumerate()
            .map(|(i, it)| format!("{}. {}\n", i + 1, it.description))
            .collect()
    }
}

/// Numbered lines (`1.` or `1)`) become items; `None` when there are none.
pub fn parse_report(reply: &str) -> Option<StyleDiffReport> {
    if reply.trim().to_uppercase().starts_with(NO_DIFFERENCES) {
        return Some(StyleDiffReport::none());
    }
    let items: Vec<StyleDiffItem> = reply
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
            if digits == 0 {
                return None;
            }
            let rest = line[digits..].strip_prefix(['.', ')'])?.trim();
            let rest = rest.trim_matches('*').trim();
            (!rest.is_empty()).then(|| StyleDiffItem {
                aspect: classify_aspect(rest),
                description: rest.to_string(),
            })
        })
        .collect();
    (!items.is_empty()).then_some(StyleDiffReport {
        items,
        no_differences: false,
    })
}

/// Collapses the reply to one paragraph of at most 60 words.
pub fn clean_description(reply: &str) -> String {
    let words: Vec<&str> = reply.split_whitespace().collect();
    let text = words[..words.len().min(MAX_DESCRIPTION_WORDS)].join(" ");
    text.trim_matches(|c: char| c == '"' || c == '\'' || c == '`').trim().to_string()
}

/// Contents of the first fenced block, without the info string.
pub fn extract_fenced_block(reply: &str) -> Option<String> {
    let start = reply.find("```")?;
    let after = &reply[start + 3..];
    let body_start = after.find('\n')? + 1;
    let body = &after[body_start..];
    let end = body.find("```")?;
    Some(body[..end].to_string())
}

fn png_part(image: &RasterImage) -> Result<Part, VlmError> {
    Ok(Part::Image {
        png: image.to_png().map_err(|e| VlmError::Image(e.to_string()))?,
    })
}

fn text(t: impl Into<String>) -> Part {
    Part::Text { text: t.into() }
}

/// Asks for a short style description of the input sketch. Any failure,
/// including an empty answer, is reported as augmentation-unavailable so
/// callers can fall back to [`AugmentedPrompt::fallback`].
pub fn augment_prompt(client: &VlmClient, base: &str, rendered_input: &RasterImage) -> Result<AugmentedPrompt, VlmError> {
    if base.trim().is_empty() {
        return Err(VlmError::Precondition("base prompt is empty".into()));
    }
    let request = VlmRequest::new(
        AUGMENT_PREAMBLE,
        vec![text(format!("Description of the finished sketch: {base}")), png_part(rendered_input)?],
        200,
    );
    let reply = client
        .complete(&request)
        .map_err(|e| VlmError::AugmentationUnavailable(e.to_string()))?;
    let description = clean_description(&reply);
    if description.is_empty() {
        return Err(VlmError::AugmentationUnavailable("empty description".into()));
    }
    Ok(AugmentedPrompt::new(base, description))
}

pub fn detect_style_differences(client: &VlmClient, two_tone: &RasterImage, svg_text: &str) -> Result<StyleDiffReport, VlmError> {
    let mut parts = vec![png_part(two_tone)?, text(format!("SVG source:\n{svg_text}"))];
    let mut last = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            parts.push(text(format!(
                "Your previous answer could not be read. Answer only with a numbered list such as\n1. thickness: ...\n2. opacity: ...\nor exactly {NO_DIFFERENCES}."
            )));
        }
        let reply = client.complete(&VlmRequest::new(DETECT_PREAMBLE, parts.clone(), 400))?;
        if let Some(report) = parse_report(&reply) {
            return Ok(report);
        }
        last = reply;
    }
    Err(VlmError::ReportParse(format!(
        "no numbered list in reply: {}",
        last.chars().take(120).collect::<String>()
    )))
}

/// Asks for a program and retries with the parser diagnostics until one
/// parses. Returns the extracted text together with its AST.
pub fn generate_adjustment_program(
    client: &VlmClient,
    report: &StyleDiffReport,
    svg_text: &str,
    prompt: &AugmentedPrompt,
    skeleton: &str,
) -> Result<(String, AdjustmentProgram), VlmError> {
    if report.items.is_empty() {
        return Err(VlmError::Precondition("style difference report is empty".into()));
    }
    let mut parts = vec![
        text(format!("Style differences:\n{}", report.to_text())),
        text(format!("SVG source:\n{svg_text}")),
        text(format!("Drawing prompt: {}", prompt.combined)),
        text(format!("Skeleton:\n```\n{skeleton}```")),
    ];
    let mut last = String::new();
    for _ in 0..CODEGEN_ATTEMPTS {
        let reply = client.complete(&VlmRequest::new(CODEGEN_PREAMBLE, parts.clone(), 800))?;
        let error = match extract_fenced_block(&reply) {
            None => "the reply has no fenced code block".to_string(),
            Some(program) => match parse_program(&program) {
                Ok(ast) => return Ok((program, ast)),
                Err(e) => format!("parse error at {e}"),
            },
        };
        parts.push(text(format!(
            "Your previous reply was rejected: {error}.\nReply with one fenced code block containing a corrected program."
        )));
        last = error;
    }
    Err(VlmError::CodegenFailure {
        attempts: CODEGEN_ATTEMPTS,
        last,
    })
}
