//! Proptest strategies shared by the property suites.

use proptest::prelude::*;
use sketchfill::dsl::*;
use sketchfill::geom::{CubicBezier, Point, Sketch, Stroke, StrokeTag};

pub fn point() -> impl Strategy<Value = Point> {
    (-60.0..180.0f64, -60.0..180.0f64).prop_map(|(x, y)| Point::new(x, y))
}

fn stroke(i: usize) -> impl Strategy<Value = Stroke> {
    (point(), point(), point(), point(), 0.1..12.0f64, 0.0..=1.0f64, any::<bool>()).prop_map(move |(a, b, c, d, w, o, input)| {
        let tag = if input { StrokeTag::Input } else { StrokeTag::Generated };
        Stroke::new(format!("s{i}"), CubicBezier::new(a, b, c, d), w, o, tag)
    })
}

pub fn sketch() -> impl Strategy<Value = Sketch> {
    (1usize..8)
        .prop_flat_map(|n| (0..n).map(stroke).collect::<Vec<_>>())
        .prop_map(|strokes| Sketch::with_strokes(120, 120, strokes))
}

pub fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-5.0..5.0f64).prop_map(Expr::Num),
        Just(Expr::Attr(Attr::Width)),
        Just(Expr::Attr(Attr::Opacity)),
        Just(Expr::Length),
        Just(Expr::Curvature),
        Just(Expr::InputWidth),
    ];
    leaf.prop_recursive(3, 16, 3, |inner| {
        let op = prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div)];
        prop_oneof![
            (inner.clone(), op, inner.clone()).prop_map(|(a, o, b)| Expr::Bin(Box::new(a), o, Box::new(b))),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Min(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Max(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone(), inner).prop_map(|(a, b, c)| Expr::Clamp(Box::new(a), Box::new(b), Box::new(c))),
        ]
    })
}

pub fn bexpr() -> impl Strategy<Value = BoolExpr> {
    let cmp = prop_oneof![Just(CmpOp::Lt), Just(CmpOp::Le), Just(CmpOp::Gt), Just(CmpOp::Ge), Just(CmpOp::Eq)];
    let leaf = (expr(), cmp, expr()).prop_map(|(a, c, b)| BoolExpr::Cmp(a, c, b));
    leaf.prop_recursive(2, 6, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| BoolExpr::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| BoolExpr::Or(Box::new(a), Box::new(b))),
        ]
    })
}

pub fn action(allow_split: bool) -> impl Strategy<Value = Action> {
    let max_split = if allow_split { 4u32 } else { 1 };
    prop_oneof![
        Just(Action::Delete),
        (prop_oneof![Just(Attr::Width), Just(Attr::Opacity)], expr()).prop_map(|(a, e)| Action::Set(a, e)),
        (-300.0..300.0f64, -300.0..300.0f64).prop_map(|(x, y)| Action::Translate(x, y)),
        (0.0..=1.0f64).prop_map(Action::Smooth),
        (0.0..200.0f64).prop_map(Action::Simplify),
        (2u32..=max_split.max(2)).prop_map(move |n| if allow_split { Action::Split(n) } else { Action::Delete }),
    ]
}

pub fn program(allow_split: bool) -> impl Strategy<Value = AdjustmentProgram> {
    proptest::collection::vec(
        (proptest::option::of(bexpr()), action(allow_split)).prop_map(|(predicate, action)| Statement {
            selector: Selector::Generated,
            predicate,
            action,
        }),
        0..5,
    )
    .prop_map(|statements| AdjustmentProgram { statements })
}

fn svg_stroke(i: usize, w: f64, h: f64) -> impl Strategy<Value = Stroke> {
    let pt = (0.0..=w, 0.0..=h).prop_map(|(x, y)| Point::new(x, y));
    (
        [pt.clone(), pt.clone(), pt.clone(), pt],
        0.001f64..40.0,
        0.0f64..=1.0,
        any::<bool>(),
        "[a-zA-Z0-9 _&<>\"'.-]{0,6}",
    )
        .prop_map(move |(points, width, opacity, input, name)| {
            let tag = if input { StrokeTag::Input } else { StrokeTag::Generated };
            Stroke::new(format!("s{i}_{name}"), CubicBezier { points }, width, opacity, tag)
        })
}

pub fn svg_sketch() -> impl Strategy<Value = Sketch> {
    (1u32..1024, 1u32..1024, 0usize..24).prop_flat_map(|(w, h, n)| {
        let strokes: Vec<_> = (0..n).map(|i| svg_stroke(i, w as f64, h as f64)).collect();
        strokes.prop_map(move |s| Sketch::with_strokes(w, h, s))
    })
}
