//! Property tests for the spec-level invariants: blend identities under
//! arbitrary masks, dice bounds, TPS interpolation, metric symmetry,
//! vocabulary round-trips.

use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

use stroke_edit::autograd::Tensor;
use stroke_edit::geometry::ControlPointSet;
use stroke_edit::losses::dice_loss;
use stroke_edit::metrics;
use stroke_edit::networks::slm_blend;
use stroke_edit::vocab::Vocab;

fn small_image(seed: u64, h: usize, w: usize) -> ndarray::Array3<f32> {
    let mut rng = stroke_edit::util::derive_rng(seed, &["prop-image"]);
    use rand::Rng;
    ndarray::Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The blend with a binary ground-truth mask reproduces the original
    /// outside strokes exactly, whatever the edited content is.
    #[test]
    fn blend_with_binary_mask_preserves_background(seed in 0u64..1000, threshold in 0.05f32..0.95) {
        let mut rng = stroke_edit::util::derive_rng(seed, &["prop-blend"]);
        use rand::Rng;
        let shape = IxDyn(&[1, 3, 6, 10]);
        let edited = Tensor::<f32>::constant(ArrayD::from_shape_fn(shape.clone(), |_| rng.gen_range(0.0..1.0)));
        let original = Tensor::<f32>::constant(ArrayD::from_shape_fn(shape, |_| rng.gen_range(0.0..1.0)));
        let mask_arr = ArrayD::from_shape_fn(IxDyn(&[1, 1, 6, 10]), |_| {
            if rng.gen_range(0.0f32..1.0) < threshold { 1.0f32 } else { 0.0 }
        });
        let out = slm_blend(&edited, &Tensor::constant(mask_arr.clone()), &original);
        for y in 0..6 {
            for x in 0..10 {
                for c in 0..3 {
                    let o = out.value()[[0, c, y, x]];
                    let expect = if mask_arr[[0, 0, y, x]] == 1.0 {
                        edited.value()[[0, c, y, x]]
                    } else {
                        original.value()[[0, c, y, x]]
                    };
                    prop_assert_eq!(o.to_bits(), expect.to_bits());
                }
            }
        }
    }

    /// Soft dice stays within [0, 1] for arbitrary soft masks.
    #[test]
    fn dice_is_bounded(seed in 0u64..1000) {
        let mut rng = stroke_edit::util::derive_rng(seed, &["prop-dice"]);
        use rand::Rng;
        let a = ArrayD::from_shape_fn(IxDyn(&[8, 12]), |_| rng.gen_range(0.0f64..1.0));
        let b = ArrayD::from_shape_fn(IxDyn(&[8, 12]), |_| rng.gen_range(0.0f64..1.0));
        let d = dice_loss(&Tensor::constant(a), &Tensor::constant(b)).item();
        prop_assert!((0.0..=1.0).contains(&d), "dice out of range: {}", d);
    }

    /// The fitted spline maps every destination control point onto its
    /// paired source point within 1e-4 in normalized coordinates.
    #[test]
    fn tps_interpolates_control_points(seed in 0u64..500) {
        let mut rng = stroke_edit::util::derive_rng(seed, &["prop-tps"]);
        use rand::Rng;
        let base = ControlPointSet::canonical(4).unwrap();
        let mut dst = ArrayD::<f64>::zeros(IxDyn(&[1, 8, 2]));
        let mut src = ArrayD::<f64>::zeros(IxDyn(&[1, 8, 2]));
        for (i, p) in base.points().iter().enumerate() {
            dst[[0, i, 0]] = p[0] + rng.gen_range(-0.08..0.08);
            dst[[0, i, 1]] = p[1] + rng.gen_range(-0.08..0.08);
            src[[0, i, 0]] = p[0] + rng.gen_range(-0.08..0.08);
            src[[0, i, 1]] = p[1] + rng.gen_range(-0.08..0.08);
        }
        // evaluate the grid exactly at the destination points by sampling a
        // fine grid is overkill; instead use the public warp on a coordinate
        // ramp so grid(q) is recoverable.
        let (h, w) = (33, 65);
        let ramp_x = ArrayD::from_shape_fn(IxDyn(&[1, 1, h, w]), |ix| {
            -1.0 + 2.0 * ix[3] as f64 / (w - 1) as f64
        });
        let warped = stroke_edit::geometry::tps_warp(
            &Tensor::constant(ramp_x),
            &Tensor::constant(src.clone()),
            &Tensor::constant(dst.clone()),
        ).unwrap();
        // at a destination point, the warp should sample the source point's
        // x coordinate (the ramp is the identity function of x)
        for i in 0..8 {
            let (dx, dy) = (dst[[0, i, 0]], dst[[0, i, 1]]);
            // nearest grid node to the destination point
            let gx = ((dx + 1.0) * (w - 1) as f64 / 2.0).round() as usize;
            let gy = ((dy + 1.0) * (h - 1) as f64 / 2.0).round() as usize;
            let gx = gx.min(w - 1);
            let gy = gy.min(h - 1);
            let got = warped.value()[[0, 0, gy, gx]];
            // grid-node quantization dominates the tolerance: one cell is
            // 2/(w-1) ~ 0.031 wide, the spline itself is accurate to 1e-4
            prop_assert!((got - src[[0, i, 0]]).abs() < 0.08,
                "spline misses control point {}: {} vs {}", i, got, src[[0, i, 0]]);
        }
    }

    /// mse and ssim are symmetric in their arguments.
    #[test]
    fn metric_symmetry(seed in 0u64..200) {
        let a = small_image(seed, 12, 16);
        let b = small_image(seed + 10_000, 12, 16);
        prop_assert_eq!(metrics::mse(&a, &b), metrics::mse(&b, &a));
        let s1 = metrics::ssim(&a, &b);
        let s2 = metrics::ssim(&b, &a);
        prop_assert!((s1 - s2).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s1));
    }

    /// Vocabulary encode/decode round-trips every in-vocabulary word.
    #[test]
    fn vocab_roundtrip(word in "[a-z]{1,10}") {
        let vocab = Vocab::new("abcdefghijklmnopqrstuvwxyz");
        let ids = vocab.encode_padded(&word, 12).unwrap();
        prop_assert_eq!(ids.len(), 12);
        prop_assert_eq!(vocab.decode(&ids), word);
    }
}

/// Exact spline interpolation at the control points, checked directly in
/// normalized coordinates (non-proptest because it needs the dense grid).
#[test]
fn tps_control_point_interpolation_tight() {
    use stroke_edit::geometry::tps_grid;
    let base = ControlPointSet::canonical(5).unwrap();
    let mut rng = stroke_edit::util::derive_rng(3, &["tps-tight"]);
    use rand::Rng;
    let mut dst = ArrayD::<f64>::zeros(IxDyn(&[1, 10, 2]));
    let mut src = ArrayD::<f64>::zeros(IxDyn(&[1, 10, 2]));
    for (i, p) in base.points().iter().enumerate() {
        dst[[0, i, 0]] = p[0] + rng.gen_range(-0.05..0.05);
        dst[[0, i, 1]] = p[1] + rng.gen_range(-0.05..0.05);
        src[[0, i, 0]] = p[0] + rng.gen_range(-0.05..0.05);
        src[[0, i, 1]] = p[1] + rng.gen_range(-0.05..0.05);
    }
    // grid with nodes exactly at destination points cannot be arranged in
    // general, so evaluate the interpolant through a 2-point sanity grid:
    // instead verify via the grid op on a dense raster and interpolate.
    let (h, w) = (257, 257);
    let grid = tps_grid(&Tensor::constant(dst.clone()), &Tensor::constant(src.clone()), h, w)
        .unwrap();
    for i in 0..10 {
        let (dx, dy) = (dst[[0, i, 0]], dst[[0, i, 1]]);
        let fx = (dx + 1.0) * (w - 1) as f64 / 2.0;
        let fy = (dy + 1.0) * (h - 1) as f64 / 2.0;
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        for d in 0..2 {
            let v00 = grid.value()[[0, y0, x0, d]];
            let v01 = grid.value()[[0, y0, x1, d]];
            let v10 = grid.value()[[0, y1, x0, d]];
            let v11 = grid.value()[[0, y1, x1, d]];
            let interp = v00 * (1.0 - tx) * (1.0 - ty)
                + v01 * tx * (1.0 - ty)
                + v10 * (1.0 - tx) * ty
                + v11 * tx * ty;
            let expect = src[[0, i, d]];
            // bilinear quantization on a 257-node grid adds ~(2/256)^2 * curvature;
            // the spline itself interpolates to ~1e-4
            assert!(
                (interp - expect).abs() < 5e-4,
                "control point {i} axis {d}: {interp} vs {expect}"
            );
        }
    }
}
