mod common;

use sketchfill::geom::Sketch;
use sketchfill::objective::{overlap_penalty, LossWeights, PyramidBackend, OVERLAP_SAMPLES};
use sketchfill::optimizer::{init_strokes, optimize, optimize_from, OptimizerConfig, RunControl};
use sketchfill::raster::{render, CanvasSpec, MaskGrid, RasterImage};

#[test]
fn strokes_escape_half_plane_mask() {
    let (w, h) = (256u32, 256u32);
    let mask = common::half_plane_mask(w, h);
    let spec = CanvasSpec::new(w, h);
    // anchors inside the masked left half
    let inside = MaskGrid::from_binary(w, h, mask.binary.iter().map(|b| 1 - b).collect(), 3.0);
    let start = init_strokes(32, &inside, &spec, 5, 2.0).unwrap();
    let guide = RasterImage::filled(w, h, 1, 1.0);
    let config = OptimizerConfig {
        n_strokes: 32,
        iterations: 300,
        weights: LossWeights::new(0.0, 0.0, 1.0),
        ..Default::default()
    };
    let r = optimize_from(&Sketch::new(w, h), start.clone(), &guide, &mask, &config, &PyramidBackend::default(), &RunControl::default()).unwrap();
    let (before, _) = overlap_penalty(&start, &mask, OVERLAP_SAMPLES).unwrap();
    let (after, _) = overlap_penalty(&r.sketch, &mask, OVERLAP_SAMPLES).unwrap();
    assert!(before > 300);
    assert!(after * 20 <= 320, "{after}");
    let counts: Vec<usize> = r.trace.iter().map(|l| l.overlap_count).collect();
    for i in 50..counts.len().saturating_sub(100) {
        assert!(counts[i + 100] <= counts[i], "window at {i}: {} -> {}", counts[i], counts[i + 100]);
    }
}

#[test]
fn reconstruction_locks_measured_ratio() {
    let target = common::reconstruction_target();
    let spec = CanvasSpec::new(256, 256);
    let guide = render(&target, &spec);
    let mask = MaskGrid::empty(256, 256, 3.0);
    let config = OptimizerConfig {
        n_strokes: 32,
        iterations: 500,
        ..Default::default()
    };
    let init = init_strokes(32, &mask, &spec, config.rng_seed, 2.0).unwrap();
    let initial = render(&init, &spec).mse(&guide).unwrap();
    let r = optimize(&Sketch::new(256, 256), &guide, &mask, &config, &PyramidBackend::default(), &RunControl::default()).unwrap();
    let last = render(&r.sketch, &spec).mse(&guide).unwrap();
    // measured 0.346
    assert!(last <= 0.4 * initial, "{}", last / initial);
    assert!(r.trace.iter().all(|l| l.is_finite()));
}
