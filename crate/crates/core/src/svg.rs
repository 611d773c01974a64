//! Strict SVG subset used for interchange.
//!
//! Only `path` elements with absolute `M`, `L` and `C` commands are accepted.
//! Every cubic segment becomes its own [`Stroke`]; `L` segments are lowered to
//! exact degree-elevated cubics. Input strokes are recognised by the stroke
//! color `rgb(51, 102, 178)` and written back with the same color.

use crate::geom::{CubicBezier, GeomError, Point, Sketch, Stroke, StrokeTag};
use std::fmt::Write as _;
use thiserror::Error;

/// Stroke color that marks user-drawn input strokes.
pub const INPUT_COLOR: Rgb = Rgb(51, 102, 178);
pub const GENERATED_COLOR: Rgb = Rgb(0, 0, 0);

const DEFAULT_WIDTH: f64 = 2.0;
const DEFAULT_OPACITY: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvgError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("root element must be <svg>, found <{0}>")]
    NotSvg(String),
    #[error("missing or invalid `{0}` on <svg>")]
    BadDimension(&'static str),
    #[error("unsupported path command `{0}`")]
    UnsupportedCommand(char),
    #[error("unsupported element <{0}>")]
    UnsupportedElement(String),
    #[error("unsupported attribute `{0}`")]
    UnsupportedAttribute(String),
    #[error("bad path data in `{id}`: {message}")]
    PathData { id: String, message: String },
    #[error("bad value for `{attr}`: {value}")]
    BadAttribute { attr: &'static str, value: String },
    #[error(transparent)]
    Invalid(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    /// Parses `rgb(r, g, b)` ignoring whitespace.
    pub fn parse(text: &str) -> Option<Rgb> {
        let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let inner = compact.strip_prefix("rgb(")?.strip_suffix(')')?;
        let mut parts = inner.split(',').map(|p| p.parse::<u8>().ok());
        let rgb = Rgb(parts.next()??, parts.next()??, parts.next()??);
        parts.next().is_none().then_some(rgb)
    }

    pub fn unit(self) -> [f64; 3] {
        [self.0 as f64 / 255.0, self.1 as f64 / 255.0, self.2 as f64 / 255.0]
    }
}

impl std::fmt::Display for Rgb {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "rgb({},{},{})", self.0, self.1, self.2)
    }
}

pub fn parse_svg(text: &str) -> Result<Sketch, SvgError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| {
        let pos = e.pos();
        SvgError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "svg" {
        return Err(SvgError::NotSvg(root.tag_name().name().to_string()));
    }
    let dim = |name: &'static str| -> Result<u32, SvgError> {
        root.attribute(name)
            .and_then(|v| v.trim().trim_end_matches("px").parse::<u32>().ok())
            .filter(|v| *v > 0)
            .ok_or(SvgError::BadDimension(name))
    };
    let mut sketch = Sketch::new(dim("width")?, dim("height")?);

    let mut path_index = 0usize;
    for node in root.descendants().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "svg" if node == root => continue,
            "title" | "desc" | "metadata" => continue,
            "path" => {}
            other => return Err(SvgError::UnsupportedElement(other.to_string())),
        }
        if node.attribute("transform").is_some() {
            return Err(SvgError::UnsupportedAttribute("transform".into()));
        }
        let base_id = node
            .attribute("id")
            .map(str::to_string)
            .unwrap_or_else(|| format!("p{path_index}"));
        path_index += 1;

        let tag = match node.attribute("stroke") {
            Some(c) => match Rgb::parse(c) {
                Some(INPUT_COLOR) => StrokeTag::Input,
                Some(_) => StrokeTag::Generated,
                None => {
                    return Err(SvgError::BadAttribute {
                        attr: "stroke",
                        value: c.to_string(),
                    })
                }
            },
            None => StrokeTag::Generated,
        };
        let width = number_attr(node.attribute("stroke-width"), "stroke-width", DEFAULT_WIDTH)?;
        let opacity = number_attr(node.attribute("stroke-opacity"), "stroke-opacity", DEFAULT_OPACITY)?;

        let d = node.attribute("d").unwrap_or("");
        let curves = parse_path_data(d).map_err(|e| match e {
            PathError::Command(c) => SvgError::UnsupportedCommand(c),
            PathError::Syntax(message) => SvgError::PathData {
                id: base_id.clone(),
                message,
            },
        })?;
        let single = curves.len() == 1;
        for (k, curve) in curves.into_iter().enumerate() {
            let id = if single {
                base_id.clone()
            } else {
                format!("{base_id}.{k}")
            };
            sketch.strokes.push(Stroke::new(id, curve, width, opacity, tag));
        }
    }
    sketch.validate()?;
    Ok(sketch)
}

fn number_attr(value: Option<&str>, attr: &'static str, default: f64) -> Result<f64, SvgError> {
    match value {
        None => Ok(default),
        Some(v) => v
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| SvgError::BadAttribute {
                attr,
                value: v.to_string(),
            }),
    }
}

enum PathError {
    Command(char),
    Syntax(String),
}

enum Token {
    Cmd(char),
    Num(f64),
}

fn tokenize(d: &str) -> Result<Vec<Token>, PathError> {
    let bytes = d.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() || c == ',' {
            i += 1;
        } else if c.is_ascii_alphabetic() && c != 'e' && c != 'E' {
            match c {
                'M' | 'L' | 'C' => out.push(Token::Cmd(c)),
                other => return Err(PathError::Command(other)),
            }
            i += 1;
        } else if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() {
            let start = i;
            i += 1;
            let mut seen_dot = c == '.';
            while i < bytes.len() {
                let b = bytes[i] as char;
                if b.is_ascii_digit() {
                    i += 1;
                } else if b == '.' && !seen_dot {
                    seen_dot = true;
                    i += 1;
                } else if (b == 'e' || b == 'E') && i + 1 < bytes.len() {
                    i += 1;
                    if matches!(bytes[i], b'-' | b'+') {
                        i += 1;
                    }
                    seen_dot = true;
                } else {
                    break;
                }
            }
            let lit = &d[start..i];
            let v = lit
                .parse::<f64>()
                .map_err(|_| PathError::Syntax(format!("bad number `{lit}`")))?;
            out.push(Token::Num(v));
        } else {
            return Err(PathError::Command(c));
        }
    }
    Ok(out)
}

fn parse_path_data(d: &str) -> Result<Vec<CubicBezier>, PathError> {
    let tokens = tokenize(d)?;
    let mut curves = Vec::new();
    let mut current: Option<Point> = None;
    let mut cmd: Option<char> = None;
    let mut nums: Vec<f64> = Vec::new();

    let mut flush = |cmd: char, nums: &[f64], current: &mut Option<Point>| -> Result<(), PathError> {
        let arity = match cmd {
            'M' | 'L' => 2,
            _ => 6,
        };
        if nums.is_empty() || !nums.len().is_multiple_of(arity) {
            return Err(PathError::Syntax(format!(
                "`{cmd}` expects a multiple of {arity} numbers, got {}",
                nums.len()
            )));
        }
        for (i, chunk) in nums.chunks(arity).enumerate() {
            let pts: Vec<Point> = chunk.chunks(2).map(|c| Point::new(c[0], c[1])).collect();
            // Extra coordinate pairs after M are implicit line-tos.
            let effective = if cmd == 'M' && i > 0 { 'L' } else { cmd };
            match effective {
                'M' => *current = Some(pts[0]),
                'L' => {
                    let start = current.ok_or_else(|| PathError::Syntax("path must start with M".into()))?;
                    curves.push(CubicBezier::line(start, pts[0]));
                    *current = Some(pts[0]);
                }
                _ => {
                    let start = current.ok_or_else(|| PathError::Syntax("path must start with M".into()))?;
                    curves.push(CubicBezier::new(start, pts[0], pts[1], pts[2]));
                    *current = Some(pts[2]);
                }
            }
        }
        Ok(())
    };

    for tok in tokens {
        match tok {
            Token::Cmd(c) => {
                if let Some(prev) = cmd {
                    flush(prev, &nums, &mut current)?;
                } else if !nums.is_empty() {
                    return Err(PathError::Syntax("numbers before first command".into()));
                }
                if current.is_none() && c != 'M' {
                    return Err(PathError::Syntax("path must start with M".into()));
                }
                cmd = Some(c);
                nums.clear();
            }
            Token::Num(v) => {
                if cmd.is_none() {
                    return Err(PathError::Syntax("numbers before first command".into()));
                }
                nums.push(v);
            }
        }
    }
    if let Some(prev) = cmd {
        flush(prev, &nums, &mut current)?;
    }
    Ok(curves)
}

/// Fixed 4-decimal formatting with negative zero folded to zero.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn path_data(curve: &CubicBezier) -> String {
    let [p0, p1, p2, p3] = curve.points;
    format!(
        "M {} {} C {} {} {} {} {} {}",
        fmt_num(p0.x),
        fmt_num(p0.y),
        fmt_num(p1.x),
        fmt_num(p1.y),
        fmt_num(p2.x),
        fmt_num(p2.y),
        fmt_num(p3.x),
        fmt_num(p3.y)
    )
}

pub fn serialize_svg(sketch: &Sketch) -> String {
    let (w, h) = (sketch.canvas_w, sketch.canvas_h);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for s in &sketch.strokes {
        let color = match s.tag {
            StrokeTag::Input => INPUT_COLOR,
            StrokeTag::Generated => GENERATED_COLOR,
        };
        let _ = writeln!(
            out,
            r#"  <path id="{}" d="{}" stroke="{}" stroke-width="{}" stroke-opacity="{}" fill="none" stroke-linecap="round"/>"#,
            escape_attr(&s.id),
            path_data(&s.curve),
            color,
            fmt_num(s.width),
            fmt_num(s.opacity)
        );
    }
    out.push_str("</svg>\n");
    out
}
