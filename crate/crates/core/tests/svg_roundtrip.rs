mod common;

use common::gen::svg_sketch;
use proptest::prelude::*;
use sketchfill::svg::{parse_svg, serialize_svg};

const TOL: f64 = 5e-5 + 1e-9;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parse_inverts_serialize(original in svg_sketch()) {
        let text = serialize_svg(&original);
        let parsed = parse_svg(&text).unwrap();
        prop_assert_eq!((parsed.canvas_w, parsed.canvas_h), (original.canvas_w, original.canvas_h));
        prop_assert_eq!(parsed.len(), original.len());
        for (a, b) in original.strokes.iter().zip(&parsed.strokes) {
            prop_assert_eq!(&a.id, &b.id);
            prop_assert_eq!(a.tag, b.tag);
            prop_assert!((a.width - b.width).abs() <= TOL);
            prop_assert!((a.opacity - b.opacity).abs() <= TOL);
            for (p, q) in a.curve.points.iter().zip(&b.curve.points) {
                prop_assert!((p.x - q.x).abs() <= TOL && (p.y - q.y).abs() <= TOL, "{:?} vs {:?}", p, q);
            }
        }
        // once quantized, the text is a fixed point
        prop_assert_eq!(serialize_svg(&parsed), text);
    }
}
