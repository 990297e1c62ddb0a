//! Thin-plate-spline warping with gradients to the control points.
//!
//! `tps_warp(image, src, dst)` fits the interpolant f with f(dst_i) = src_i
//! and resamples the image at f evaluated on the output pixel grid. The
//! spline system is solved in f64 with nalgebra regardless of the tensor
//! scalar type; the backward pass differentiates through the solve via the
//! implicit-function rule, so predicted control points receive exact
//! gradients.

use nalgebra::DMatrix;
use ndarray::{Array4, ArrayD, IxDyn};
use rayon::prelude::*;

use crate::autograd::sample::{grid_sample, PaddingMode};
use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Diagonal regularization added to the radial kernel; keeps near-collinear
/// predicted points from producing a singular system.
pub const TPS_REGULARIZATION: f64 = 1e-4;

#[inline]
fn kernel(r2: f64) -> f64 {
    if r2 < 1e-12 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// d(kernel)/d(r2); the product with d(r2)/dp stays bounded near r = 0.
#[inline]
fn kernel_dr2(r2: f64) -> f64 {
    if r2 < 1e-12 {
        0.0
    } else {
        r2.ln() + 1.0
    }
}

struct Spline {
    coeffs: DMatrix<f64>, // (n + 3) x 2
    anchors: Vec<[f64; 2]>,
}

fn build_system(anchors: &[[f64; 2]], extra_reg: f64) -> DMatrix<f64> {
    let n = anchors.len();
    let mut a = DMatrix::<f64>::zeros(n + 3, n + 3);
    for i in 0..n {
        for j in 0..n {
            let dx = anchors[i][0] - anchors[j][0];
            let dy = anchors[i][1] - anchors[j][1];
            a[(i, j)] = kernel(dx * dx + dy * dy);
        }
        a[(i, i)] += TPS_REGULARIZATION + extra_reg;
        a[(i, n)] = 1.0;
        a[(i, n + 1)] = anchors[i][0];
        a[(i, n + 2)] = anchors[i][1];
        a[(n, i)] = 1.0;
        a[(n + 1, i)] = anchors[i][0];
        a[(n + 2, i)] = anchors[i][1];
    }
    for i in n..n + 3 {
        a[(i, i)] += extra_reg;
    }
    a
}

fn fit(anchors: &[[f64; 2]], values: &[[f64; 2]]) -> Result<Spline> {
    let n = anchors.len();
    let mut b = DMatrix::<f64>::zeros(n + 3, 2);
    for i in 0..n {
        b[(i, 0)] = values[i][0];
        b[(i, 1)] = values[i][1];
    }
    let a = build_system(anchors, 0.0);
    // LU of a singular system can return finite garbage, so validate the
    // solution by its residual against the base system.
    let residual_ok = |c: &DMatrix<f64>| -> bool {
        let r = &a * c - &b;
        let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        c.iter().all(|v| v.is_finite()) && r.iter().all(|v| v.abs() < 1e-6 * scale)
    };
    let coeffs = match a.clone().lu().solve(&b) {
        Some(c) if residual_ok(&c) => c,
        // degenerate (coincident or collinear) anchor layout: retry with a
        // full-diagonal regularization, then re-validate against the base
        // system before giving up
        _ => build_system(anchors, 1e-3)
            .lu()
            .solve(&b)
            .filter(residual_ok)
            .ok_or_else(|| Error::Singular {
                context: "thin-plate-spline fit".into(),
                message: "control-point system is singular even after the 1e-3 \
                          regularization fallback (points coincident or collinear)"
                    .into(),
            })?,
    };
    Ok(Spline {
        coeffs,
        anchors: anchors.to_vec(),
    })
}

impl Spline {
    fn eval(&self, q: [f64; 2]) -> [f64; 2] {
        let n = self.anchors.len();
        let mut out = [0.0f64; 2];
        #[allow(clippy::needless_range_loop)]
        for d in 0..2 {
            let mut acc = self.coeffs[(n, d)]
                + self.coeffs[(n + 1, d)] * q[0]
                + self.coeffs[(n + 2, d)] * q[1];
            for (i, a) in self.anchors.iter().enumerate() {
                let dx = q[0] - a[0];
                let dy = q[1] - a[1];
                acc += self.coeffs[(i, d)] * kernel(dx * dx + dy * dy);
            }
            out[d] = acc;
        }
        out
    }
}

fn points_of<S: Scalar>(t: &ArrayD<S>, row: usize) -> Vec<[f64; 2]> {
    let n = t.shape()[1];
    (0..n)
        .map(|i| [t[[row, i, 0]].fp(), t[[row, i, 1]].fp()])
        .collect()
}

/// Dense sampling grid `[B, H, W, 2]` from the spline that maps each
/// `dst[i]` to `src[i]`. Both point tensors are `[B, N, 2]`.
pub fn tps_grid<S: Scalar>(
    dst: &Tensor<S>,
    src: &Tensor<S>,
    h: usize,
    w: usize,
) -> Result<Tensor<S>> {
    let dv = dst.shared_value();
    let sv = src.shared_value();
    assert_eq!(dv.shape(), sv.shape(), "tps_grid: point set shape mismatch");
    assert_eq!(dv.shape()[2], 2, "tps_grid: points must be (x, y) pairs");
    let b = dv.shape()[0];
    let n = dv.shape()[1];

    // output pixel grid in normalized coordinates (corner-aligned)
    let qx: Vec<f64> = (0..w)
        .map(|j| if w == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (w - 1) as f64 })
        .collect();
    let qy: Vec<f64> = (0..h)
        .map(|i| if h == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (h - 1) as f64 })
        .collect();

    let splines = (0..b)
        .map(|bi| fit(&points_of(&dv, bi), &points_of(&sv, bi)))
        .collect::<Result<Vec<_>>>()?;

    let mut value = Array4::<S>::zeros((b, h, w, 2));
    let rows: Vec<Vec<[f64; 2]>> = splines
        .par_iter()
        .map(|sp| {
            let mut row = Vec::with_capacity(h * w);
            for &y in &qy {
                for &x in &qx {
                    row.push(sp.eval([x, y]));
                }
            }
            row
        })
        .collect();
    for (bi, row) in rows.iter().enumerate() {
        for i in 0..h {
            for j in 0..w {
                let p = row[i * w + j];
                value[[bi, i, j, 0]] = S::from_fp(p[0]);
                value[[bi, i, j, 1]] = S::from_fp(p[1]);
            }
        }
    }

    let dst_t = dst.clone();
    let src_t = src.clone();
    Ok(Tensor::from_op(
        value.into_dyn(),
        vec![dst.clone(), src.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
            let dv_ref: &ArrayD<S> = &dv;
            let sv_ref: &ArrayD<S> = &sv;
            #[allow(clippy::type_complexity)]
            let per_batch: Vec<(Vec<[f64; 2]>, Vec<[f64; 2]>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let anchors = points_of(dv_ref, bi);
                    let values = points_of(sv_ref, bi);
                    // re-fit (cheap: n + 3 <= ~25)
                    let spline = fit(&anchors, &values).expect("refit of solved system");
                    let c = &spline.coeffs;
                    let a = build_system(&anchors, 0.0);
                    let lu = a.lu();

                    // dL/dc = Phi^T G accumulated per pixel, and the phi-side
                    // anchor gradient in the same sweep
                    let mut dldc = DMatrix::<f64>::zeros(n + 3, 2);
                    let mut d_anchor = vec![[0.0f64; 2]; n];
                    for i in 0..h {
                        for j in 0..w {
                            let q = [qx[j], qy[i]];
                            let go = [
                                g4[[bi, i, j, 0]].fp(),
                                g4[[bi, i, j, 1]].fp(),
                            ];
                            if go[0] == 0.0 && go[1] == 0.0 {
                                continue;
                            }
                            for (ai, anc) in anchors.iter().enumerate() {
                                let dx = q[0] - anc[0];
                                let dy = q[1] - anc[1];
                                let r2 = dx * dx + dy * dy;
                                let u = kernel(r2);
                                dldc[(ai, 0)] += u * go[0];
                                dldc[(ai, 1)] += u * go[1];
                                // dL/dU_ai(q) * dU/danchor
                                let dldu = c[(ai, 0)] * go[0] + c[(ai, 1)] * go[1];
                                let du = kernel_dr2(r2);
                                d_anchor[ai][0] += dldu * du * 2.0 * (anc[0] - q[0]);
                                d_anchor[ai][1] += dldu * du * 2.0 * (anc[1] - q[1]);
                            }
                            dldc[(n, 0)] += go[0];
                            dldc[(n, 1)] += go[1];
                            dldc[(n + 1, 0)] += q[0] * go[0];
                            dldc[(n + 1, 1)] += q[0] * go[1];
                            dldc[(n + 2, 0)] += q[1] * go[0];
                            dldc[(n + 2, 1)] += q[1] * go[1];
                        }
                    }

                    // through the solve: dL/db = A^{-T} dL/dc (A symmetric),
                    // dL/dA = -dL/db c^T
                    let dldb = lu.solve(&dldc).expect("solve in backward");
                    let dlda = -&dldb * c.transpose();
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let dx = anchors[i][0] - anchors[j][0];
                            let dy = anchors[i][1] - anchors[j][1];
                            let du = kernel_dr2(dx * dx + dy * dy);
                            let coef = (dlda[(i, j)] + dlda[(j, i)]) * du * 2.0;
                            d_anchor[i][0] += coef * dx;
                            d_anchor[i][1] += coef * dy;
                        }
                        d_anchor[i][0] += dlda[(i, n + 1)] + dlda[(n + 1, i)];
                        d_anchor[i][1] += dlda[(i, n + 2)] + dlda[(n + 2, i)];
                    }
                    let d_values: Vec<[f64; 2]> =
                        (0..n).map(|i| [dldb[(i, 0)], dldb[(i, 1)]]).collect();
                    (d_anchor, d_values)
                })
                .collect();

            if dst_t.requires_grad() {
                let mut dd = ArrayD::<S>::zeros(IxDyn(&[b, n, 2]));
                for (bi, (da, _)) in per_batch.iter().enumerate() {
                    for (i, p) in da.iter().enumerate() {
                        dd[[bi, i, 0]] = S::from_fp(p[0]);
                        dd[[bi, i, 1]] = S::from_fp(p[1]);
                    }
                }
                dst_t.accumulate_grad(dd);
            }
            if src_t.requires_grad() {
                let mut ds = ArrayD::<S>::zeros(IxDyn(&[b, n, 2]));
                for (bi, (_, dv)) in per_batch.iter().enumerate() {
                    for (i, p) in dv.iter().enumerate() {
                        ds[[bi, i, 0]] = S::from_fp(p[0]);
                        ds[[bi, i, 1]] = S::from_fp(p[1]);
                    }
                }
                src_t.accumulate_grad(ds);
            }
        }),
    ))
}

/// Resamples `image` `[B, C, H, W]` through the spline mapping `dst` back to
/// `src` (both `[B, N, 2]` or `[1, N, 2]` broadcast over the batch).
/// Out-of-range samples take the border value.
pub fn tps_warp<S: Scalar>(
    image: &Tensor<S>,
    src: &Tensor<S>,
    dst: &Tensor<S>,
) -> Result<Tensor<S>> {
    assert!(!image.is_empty(), "tps_warp: empty image");
    assert_eq!(
        src.shape()[1],
        dst.shape()[1],
        "tps_warp: control point sets must have the same size"
    );
    let b = image.shape()[0];
    let (h, w) = (image.shape()[2], image.shape()[3]);
    let expand = |t: &Tensor<S>| -> Tensor<S> {
        if t.shape()[0] == b {
            t.clone()
        } else {
            assert_eq!(t.shape()[0], 1, "point batch must be 1 or match image");
            Tensor::concat(0, &vec![t.clone(); b])
        }
    };
    let grid = tps_grid(&expand(dst), &expand(src), h, w)?;
    Ok(grid_sample(image, &grid, PaddingMode::Border))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::{check_gradients, rel_error};
    use crate::geometry::points::ControlPointSet;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn jittered_points(k: usize, amount: f64, rng: &mut ChaCha12Rng) -> Tensor<f64> {
        let base = ControlPointSet::canonical(k).unwrap();
        let mut arr = ArrayD::zeros(IxDyn(&[1, 2 * k, 2]));
        for (i, p) in base.points().iter().enumerate() {
            arr[[0, i, 0]] = p[0] + rng.gen_range(-amount..amount);
            arr[[0, i, 1]] = p[1] + rng.gen_range(-amount..amount);
        }
        Tensor::variable(arr)
    }

    #[test]
    fn spline_interpolates_control_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let dst = jittered_points(5, 0.04, &mut rng);
        let src = ControlPointSet::canonical(5).unwrap().to_tensor::<f64>();
        let anchors = points_of(dst.value(), 0);
        let values = points_of(src.value(), 0);
        let sp = fit(&anchors, &values).unwrap();
        for (a, v) in anchors.iter().zip(values.iter()) {
            let got = sp.eval(*a);
            // regularization permits a tiny fitting slack
            assert!((got[0] - v[0]).abs() < 1e-4, "x: {} vs {}", got[0], v[0]);
            assert!((got[1] - v[1]).abs() < 1e-4, "y: {} vs {}", got[1], v[1]);
        }
    }

    #[test]
    fn identity_points_give_identity_warp() {
        let pts = ControlPointSet::canonical(4).unwrap().to_tensor::<f64>();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, 8, 16]), |_| rng.gen_range(0.0..1.0f64));
        let out = tps_warp(&Tensor::constant(img.clone()), &pts, &pts).unwrap();
        let max_dev = (&img - out.value())
            .mapv(f64::abs)
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-5, "identity warp deviation {max_dev}");
    }

    #[test]
    fn translation_matches_dense_shift_oracle() {
        // shift all dst points by delta in x: output(q) = input(q - delta)
        let (h, w) = (12, 24);
        let delta = 0.25; // normalized units -> delta * (w-1)/2 pixels
        let src = ControlPointSet::canonical(5).unwrap().to_tensor::<f64>();
        let mut dst_arr = src.value().clone();
        for i in 0..10 {
            dst_arr[[0, i, 0]] += delta;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        // smooth image so sub-pixel comparisons are meaningful
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 1, h, w]), |ix| {
            let (y, x) = (ix[2] as f64, ix[3] as f64);
            0.5 + 0.4 * ((x / 5.0).sin() * (y / 3.0).cos()) + 0.05 * rng.gen_range(-1.0..1.0)
        });
        let out = tps_warp(
            &Tensor::constant(img.clone()),
            &src,
            &Tensor::constant(dst_arr),
        )
        .unwrap();
        // dense shift oracle: sample input at x - shift_px with border clamp
        let shift_px = delta * (w - 1) as f64 / 2.0;
        let mut worst: f64 = 0.0;
        for y in 2..h - 2 {
            for x in 2..w - 2 {
                let sx = x as f64 - shift_px;
                let x0 = sx.floor();
                let f = sx - x0;
                let x0 = (x0 as isize).clamp(0, w as isize - 1) as usize;
                let x1 = (x0 + 1).min(w - 1);
                let expect = img[[0, 0, y, x0]] * (1.0 - f) + img[[0, 0, y, x1]] * f;
                let got = out.value()[[0, 0, y, x]];
                worst = worst.max((expect - got).abs());
            }
        }
        // tolerance: 1 pixel of drift, measured through the value ramp
        assert!(worst < 0.08, "translation mismatch {worst}");
    }

    #[test]
    fn control_point_gradients_match_finite_differences_on_16x32() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        // globally bilinear image keeps resampling smooth in the points
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 1, 16, 32]), |ix| {
            let (y, x) = (ix[2] as f64, ix[3] as f64);
            0.1 + 0.013 * x + 0.021 * y + 0.0007 * x * y
        });
        let dst0 = jittered_points(4, 0.05, &mut rng);
        let src = ControlPointSet::canonical(4).unwrap();
        let weight = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[1, 1, 16, 32]), |ix| {
            ((ix[2] * 31 + ix[3] * 7) as f64 * 0.13).sin()
        }));
        check_gradients(
            &[dst0.value().clone()],
            |ts| {
                let out = tps_warp(
                    &Tensor::constant(img.clone()),
                    &src.to_tensor::<f64>(),
                    &ts[0],
                )
                .unwrap();
                out.mul(&weight).mean()
            },
            3e-6,
            1e-7,
        );
    }

    #[test]
    fn image_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let img0 = ArrayD::from_shape_fn(IxDyn(&[1, 1, 6, 10]), |_| rng.gen_range(0.0..1.0f64));
        let dst = jittered_points(3, 0.05, &mut rng);
        let src = ControlPointSet::canonical(3).unwrap().to_tensor::<f64>();
        check_gradients(
            &[img0],
            |ts| tps_warp(&ts[0], &src, &dst).unwrap().sqr().mean(),
            1e-5,
            1e-7,
        );
    }

    #[test]
    fn degenerate_points_error_mentions_fallback() {
        let pts = Tensor::constant(ArrayD::from_elem(IxDyn(&[1, 8, 2]), 0.3f64));
        let src = ControlPointSet::canonical(4).unwrap().to_tensor::<f64>();
        let img = Tensor::constant(ArrayD::zeros(IxDyn(&[1, 1, 4, 8])));
        let err = tps_warp(&img, &src, &pts).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fallback"), "message should note the fallback: {msg}");
    }

    #[test]
    fn grad_direction_sanity_under_small_perturbation() {
        // moving a control point along +x shifts sampled content; the
        // directional derivative from autograd must match a coarse secant
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 1, 10, 20]), |ix| 0.04 * ix[3] as f64);
        let src = ControlPointSet::canonical(3).unwrap().to_tensor::<f64>();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let dst = jittered_points(3, 0.03, &mut rng);
        let f = |pts: &Tensor<f64>| {
            tps_warp(&Tensor::constant(img.clone()), &src, pts)
                .unwrap()
                .mean()
        };
        let base = f(&dst);
        base.backward();
        let g = dst.grad().unwrap();
        let h = 1e-4;
        let mut shifted = dst.value().clone();
        shifted[[0, 2, 0]] += h;
        let up = f(&Tensor::constant(shifted)).item();
        let mut shifted2 = dst.value().clone();
        shifted2[[0, 2, 0]] -= h;
        let down = f(&Tensor::constant(shifted2)).item();
        let numeric = (up - down) / (2.0 * h);
        assert!(
            rel_error(g[[0, 2, 0]], numeric, 1e-6) < 1e-3,
            "directional derivative mismatch: {} vs {}",
            g[[0, 2, 0]],
            numeric
        );
    }
}
