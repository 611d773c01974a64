use super::ast::*;
use crate::geom::{curvature, stroke_length, Point, Sketch, Stroke, StrokeTag};
use crate::optimizer::{FALLBACK_WIDTH, WIDTH_RANGE};
use crate::svg::serialize_svg;
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use thiserror::Error;

/// Chord segments used for the `length` attribute and `simplify`.
pub const LENGTH_SEGMENTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("statement {statement}: selector `{selector}` may modify input strokes")]
    Policy { statement: usize, selector: Selector },
    #[error("statement {statement}, stroke {stroke}: {message}")]
    Eval {
        statement: usize,
        stroke: String,
        message: String,
    },
}

struct Env {
    input_width: f64,
}

fn eval(e: &Expr, s: &Stroke, env: &Env) -> f64 {
    let bin = |a: &Expr, b: &Expr| (eval(a, s, env), eval(b, s, env));
    match e {
        Expr::Num(v) => *v,
        Expr::Attr(Attr::Width) => s.width,
        Expr::Attr(Attr::Opacity) => s.opacity,
        Expr::Length => stroke_length(s, LENGTH_SEGMENTS),
        Expr::Curvature => curvature(&s.curve),
        Expr::InputWidth => env.input_width,
        Expr::Neg(a) => -eval(a, s, env),
        Expr::Bin(a, op, b) => {
            let (x, y) = bin(a, b);
            match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
            }
        }
        Expr::Min(a, b) => {
            let (x, y) = bin(a, b);
            x.min(y)
        }
        Expr::Max(a, b) => {
            let (x, y) = bin(a, b);
            x.max(y)
        }
        Expr::Clamp(v, lo, hi) => {
            let (lo, hi) = bin(lo, hi);
            eval(v, s, env).max(lo).min(hi)
        }
    }
}

fn finite(e: &Expr, s: &Stroke, env: &Env, statement: usize) -> Result<f64, DslError> {
    let v = eval(e, s, env);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(DslError::Eval {
            statement,
            stroke: s.id.clone(),
            message: format!("`{e}` evaluated to {v}"),
        })
    }
}

fn holds(b: &BoolExpr, s: &Stroke, env: &Env, statement: usize) -> Result<bool, DslError> {
    Ok(match b {
        BoolExpr::Cmp(l, op, r) => {
            let (x, y) = (finite(l, s, env, statement)?, finite(r, s, env, statement)?);
            match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
                CmpOp::Eq => x == y,
            }
        }
        BoolExpr::And(l, r) => holds(l, s, env, statement)? && holds(r, s, env, statement)?,
        BoolExpr::Or(l, r) => holds(l, s, env, statement)? || holds(r, s, env, statement)?,
    })
}

/// Clamps an offset so every control point stays inside `[lo, hi]`.
fn clamp_offset(d: f64, min: f64, max: f64, lo: f64, hi: f64) -> f64 {
    d.max(lo - min).min(hi - max)
}

fn translate(s: &Stroke, dx: f64, dy: f64, lo: Point, hi: Point) -> Stroke {
    let (bmin, bmax) = s.curve.points.iter().fold(
        (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(a, b), p| (Point::new(a.x.min(p.x), a.y.min(p.y)), Point::new(b.x.max(p.x), b.y.max(p.y))),
    );
    let dx = clamp_offset(dx, bmin.x, bmax.x, lo.x, hi.x);
    let dy = clamp_offset(dy, bmin.y, bmax.y, lo.y, hi.y);
    let mut out = s.clone();
    out.curve = s.curve.translated(dx, dy);
    for p in &mut out.curve.points {
        // absorbs rounding in `min + (lo - min)`
        *p = Point::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y));
    }
    out
}

fn smooth(s: &Stroke, lambda: f64) -> Stroke {
    let [p0, p1, p2, p3] = s.curve.points;
    let mut out = s.clone();
    out.curve.points[1] = p1.lerp(p0.lerp(p3, 1.0 / 3.0), lambda);
    out.curve.points[2] = p2.lerp(p0.lerp(p3, 2.0 / 3.0), lambda);
    out
}

fn fresh_id(base: &str, taken: &mut HashSet<String>) -> String {
    let mut id = base.to_string();
    let mut n = 1;
    while taken.contains(&id) {
        id = format!("{base}~{n}");
        n += 1;
    }
    taken.insert(id.clone());
    id
}

fn apply_statement(k: usize, st: &Statement, sketch: &Sketch, env: &Env) -> Result<Sketch, DslError> {
    let (lo, hi) = sketch.extended_bounds();
    let mut taken: HashSet<String> = sketch.strokes.iter().map(|s| s.id.clone()).collect();
    let mut out = Vec::with_capacity(sketch.strokes.len());
    for s in &sketch.strokes {
        let selected = s.tag == StrokeTag::Generated
            && match &st.predicate {
                Some(p) => holds(p, s, env, k)?,
                None => true,
            };
        if !selected {
            out.push(s.clone());
            continue;
        }
        match &st.action {
            Action::Delete => {}
            Action::Set(attr, e) => {
                let v = finite(e, s, env, k)?;
                let mut t = s.clone();
                match attr {
                    Attr::Width => t.width = v.clamp(WIDTH_RANGE.0, WIDTH_RANGE.1),
                    Attr::Opacity => t.opacity = v.clamp(0.0, 1.0),
                }
                out.push(t);
            }
            Action::Translate(dx, dy) => out.push(translate(s, *dx, *dy, lo, hi)),
            Action::Smooth(lambda) => out.push(smooth(s, *lambda)),
            Action::Simplify(tol) => {
                if stroke_length(s, LENGTH_SEGMENTS) >= *tol {
                    out.push(s.clone());
                }
            }
            Action::Split(n) => {
                taken.remove(&s.id);
                for (i, piece) in s.curve.subdivide(*n as usize).into_iter().enumerate() {
                    let mut t = s.clone();
                    t.id = fresh_id(&format!("{}.{i}", s.id), &mut taken);
                    t.curve = piece;
                    out.push(t);
                }
            }
        }
    }
    Ok(Sketch::with_strokes(sketch.canvas_w, sketch.canvas_h, out))
}

/// Runs the statements in order against a Generated-only view of the sketch.
///
/// `input_width` is the median Input width, or the optimizer's fallback
/// width when the sketch has no Input strokes.
pub fn apply_program(program: &AdjustmentProgram, sketch: &Sketch) -> Result<Sketch, DslError> {
    for (k, st) in program.statements.iter().enumerate() {
        if st.selector != Selector::Generated {
            return Err(DslError::Policy {
                statement: k,
                selector: st.selector,
            });
        }
    }
    let env = Env {
        input_width: sketch.median_input_width().unwrap_or(FALLBACK_WIDTH),
    };
    let mut current = sketch.clone();
    for (k, st) in program.statements.iter().enumerate() {
        current = apply_statement(k, st, &current, &env)?;
    }
    Ok(current)
}

/// Hex SHA-256 of the canonical SVG serialization.
pub fn sketch_fingerprint(sketch: &Sketch) -> String {
    hex::encode(Sha256::digest(serialize_svg(sketch).as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::geom::CubicBezier;
    use crate::svg::parse_svg;

    fn stroke(id: &str, tag: StrokeTag, width: f64, opacity: f64) -> Stroke {
        Stroke::new(
            id,
            CubicBezier::new(Point::new(10.0, 10.0), Point::new(20.0, 40.0), Point::new(40.0, -10.0), Point::new(50.0, 20.0)),
            width,
            opacity,
            tag,
        )
    }

    fn fixture() -> Sketch {
        Sketch::with_strokes(
            64,
            64,
            vec![
                stroke("in0", StrokeTag::Input, 3.0, 1.0),
                stroke("in1", StrokeTag::Input, 3.4, 1.0),
                stroke("faint", StrokeTag::Generated, 4.0, 0.05),
                stroke("thick", StrokeTag::Generated, 5.0, 0.5),
            ],
        )
    }

    fn run(src: &str, sketch: &Sketch) -> Result<Sketch, DslError> {
        apply_program(&parse_program(src).unwrap(), sketch)
    }

    #[test]
    fn delete_and_width_clamp() {
        let out = run(
            "select generated where opacity < 0.12 => delete;\n\
             select generated => set width = max(0.5, min(width, input_width * 0.9));",
            &fixture(),
        )
        .unwrap();
        assert!(out.get("faint").is_none());
        // median input width 3.2, so max(0.5, min(5, 2.88))
        assert!((out.get("thick").unwrap().width - 2.88).abs() < 1e-12);
        assert_eq!(out.get("in0"), fixture().get("in0"));
    }

    #[test]
    fn identity_program() {
        let f = fixture();
        let out = run("", &f).unwrap();
        assert_eq!(out, f);
        assert_eq!(sketch_fingerprint(&out), sketch_fingerprint(&f));
    }

    #[test]
    fn policy_rejects_input_selectors() {
        for sel in ["all", "input"] {
            let e = run(&format!("select generated => delete;\nselect {sel} => delete;"), &fixture()).unwrap_err();
            assert!(matches!(e, DslError::Policy { statement: 1, .. }), "{e}");
        }
    }

    #[test]
    fn eval_error_names_statement_and_stroke() {
        let e = run("select generated => translate(1, 1);\nselect generated where width / 0 > 1 => delete;", &fixture()).unwrap_err();
        assert_eq!(
            e,
            DslError::Eval {
                statement: 1,
                stroke: "faint".into(),
                message: "`width / 0` evaluated to inf".into()
            }
        );
    }

    #[test]
    fn snapshot_semantics() {
        // each stroke reads its own pre-statement values
        let out = run("select generated => set opacity = opacity + 0.1;", &fixture()).unwrap();
        assert!((out.get("faint").unwrap().opacity - 0.15).abs() < 1e-12);
        assert!((out.get("thick").unwrap().opacity - 0.6).abs() < 1e-12);
        // the second statement sees the first one's result
        let out = run("select generated => set width = 1; select generated where width == 1 => delete;", &fixture()).unwrap();
        assert_eq!(out.generated_strokes().count(), 0);
    }

    #[test]
    fn set_clamps_to_stroke_invariants() {
        let out = run("select generated => set opacity = 7; select generated => set width = -3;", &fixture()).unwrap();
        let s = out.get("thick").unwrap();
        assert_eq!((s.opacity, s.width), (1.0, WIDTH_RANGE.0));
    }

    #[test]
    fn translate_is_clamped_to_extended_bounds() {
        let out = run("select generated => translate(200, -1000);", &fixture()).unwrap();
        let s = out.get("thick").unwrap();
        // x: max control x is 50, bound 128; y: min control y is -10, bound -64
        assert_eq!(s.curve.points[0], Point::new(10.0 + 78.0, 10.0 - 54.0));
        assert!(out.validate().is_ok());
    }

    #[test]
    fn smooth_moves_toward_chord() {
        let close = |a: Point, b: Point| a.distance(b) < 1e-12;
        // chord from (10,10) to (50,20); thirds at (70/3, 40/3) and (110/3, 50/3)
        let out = run("select generated => smooth(1);", &fixture()).unwrap();
        let p = out.get("thick").unwrap().curve.points;
        assert!(close(p[1], Point::new(70.0 / 3.0, 40.0 / 3.0)));
        assert!(close(p[2], Point::new(110.0 / 3.0, 50.0 / 3.0)));
        assert_eq!((p[0], p[3]), (Point::new(10.0, 10.0), Point::new(50.0, 20.0)));
        let half = run("select generated => smooth(0.5);", &fixture()).unwrap();
        assert!(close(half.get("thick").unwrap().curve.points[1], Point::new(65.0 / 3.0, 80.0 / 3.0)));
    }

    #[test]
    fn simplify_deletes_short_strokes() {
        let mut f = fixture();
        f.strokes.push(Stroke::new("dot", CubicBezier::line(Point::new(5.0, 5.0), Point::new(8.0, 9.0)), 1.0, 1.0, StrokeTag::Generated));
        let out = run("select generated => simplify(5.5);", &f).unwrap();
        assert!(out.get("dot").is_none());
        assert!(out.get("thick").is_some());
        let out = run("select generated => simplify(4.9);", &f).unwrap();
        assert!(out.get("dot").is_some());
    }

    #[test]
    fn split_preserves_curve_and_ids() {
        let mut f = fixture();
        f.strokes.push(stroke("thick.1", StrokeTag::Input, 1.0, 1.0));
        let out = run("select generated where width > 4.5 => split(3);", &f).unwrap();
        let ids: Vec<&str> = out.strokes.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["in0", "in1", "faint", "thick.0", "thick.1~1", "thick.2", "thick.1"]);
        assert!(out.validate().is_ok());
        let original = f.get("thick").unwrap().curve;
        for (i, id) in ["thick.0", "thick.1~1", "thick.2"].iter().enumerate() {
            let piece = out.get(id).unwrap().curve;
            for j in 0..=50 {
                let u = j as f64 / 50.0;
                let t = (i as f64 + u) / 3.0;
                assert!(piece.point_at(u).distance(original.point_at(t)) < 1e-9);
            }
        }
    }

    #[test]
    fn fingerprint_changes_and_survives_round_trip() {
        let f = fixture();
        assert_eq!(sketch_fingerprint(&f), sketch_fingerprint(&f.clone()));
        let moved = run("select generated => translate(2, 2);", &f).unwrap();
        assert_ne!(sketch_fingerprint(&f), sketch_fingerprint(&moved));
        let back = parse_svg(&serialize_svg(&f)).unwrap();
        assert_eq!(sketch_fingerprint(&back), sketch_fingerprint(&f));
        assert_eq!(sketch_fingerprint(&f).len(), 64);
    }

    #[test]
    fn input_width_fallback() {
        let f = Sketch::with_strokes(64, 64, vec![stroke("g", StrokeTag::Generated, 9.0, 1.0)]);
        let out = run("select generated => set width = input_width;", &f).unwrap();
        assert_eq!(out.get("g").unwrap().width, FALLBACK_WIDTH);
    }
}
