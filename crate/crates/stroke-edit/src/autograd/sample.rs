//! Differentiable bilinear grid sampling.
//!
//! `grid` holds normalized source coordinates in [-1, 1]^2 with corner
//! alignment: -1 maps to pixel 0 and +1 to the last pixel, so an evenly
//! spaced identity grid reproduces the input exactly. Gradients flow to both
//! the input image and the grid, which is what lets thin-plate-spline
//! control points train end to end.

use ndarray::{Array3, Array4, ArrayD, Axis, Ix4};
use rayon::prelude::*;

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PaddingMode {
    /// Clamp sample coordinates to the image rectangle.
    Border,
    /// Out-of-range taps contribute zero.
    Zeros,
}

struct TapWeights {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
    // d(px)/d(gx) after clamping (0 where the coordinate saturated)
    dpx: f64,
    dpy: f64,
}

fn resolve(gx: f64, gy: f64, w: usize, h: usize, mode: PaddingMode) -> TapWeights {
    let sx = (w - 1) as f64 / 2.0;
    let sy = (h - 1) as f64 / 2.0;
    let mut px = (gx + 1.0) * sx;
    let mut py = (gy + 1.0) * sy;
    let (mut dpx, mut dpy) = (sx, sy);
    if mode == PaddingMode::Border {
        if px <= 0.0 || px >= (w - 1) as f64 {
            dpx = 0.0;
        }
        if py <= 0.0 || py >= (h - 1) as f64 {
            dpy = 0.0;
        }
        px = px.clamp(0.0, (w - 1) as f64);
        py = py.clamp(0.0, (h - 1) as f64);
    }
    let x0 = px.floor();
    let y0 = py.floor();
    TapWeights {
        x0: x0 as isize,
        y0: y0 as isize,
        fx: px - x0,
        fy: py - y0,
        dpx,
        dpy,
    }
}

#[inline]
fn tap<S: Scalar>(plane: &ndarray::ArrayView2<'_, S>, y: isize, x: isize) -> f64 {
    let (h, w) = plane.dim();
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        plane[[y as usize, x as usize]].fp()
    }
}

/// Sample `x` `[B, C, H, W]` at `grid` `[B, Ho, Wo, 2]` (last axis = (x, y)).
pub fn grid_sample<S: Scalar>(x: &Tensor<S>, grid: &Tensor<S>, mode: PaddingMode) -> Tensor<S> {
    let xv = x.shared_value();
    let gv = grid.shared_value();
    let x4 = xv.view().into_dimensionality::<Ix4>().expect("input must be 4-d");
    let g4 = gv.view().into_dimensionality::<Ix4>().expect("grid must be 4-d");
    let (b, c, h, w) = x4.dim();
    let (gb, ho, wo, two) = g4.dim();
    assert_eq!(b, gb, "grid_sample: batch mismatch");
    assert_eq!(two, 2, "grid_sample: grid last axis must be 2");

    let planes: Vec<Array3<S>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let img = x4.index_axis(Axis(0), bi);
            let mut out = Array3::<S>::zeros((c, ho, wo));
            for i in 0..ho {
                for j in 0..wo {
                    let gx = g4[[bi, i, j, 0]].fp();
                    let gy = g4[[bi, i, j, 1]].fp();
                    let t = resolve(gx, gy, w, h, mode);
                    for ci in 0..c {
                        let plane = img.index_axis(Axis(0), ci);
                        let v00 = tap(&plane, t.y0, t.x0);
                        let v01 = tap(&plane, t.y0, t.x0 + 1);
                        let v10 = tap(&plane, t.y0 + 1, t.x0);
                        let v11 = tap(&plane, t.y0 + 1, t.x0 + 1);
                        let top = v00 * (1.0 - t.fx) + v01 * t.fx;
                        let bot = v10 * (1.0 - t.fx) + v11 * t.fx;
                        out[[ci, i, j]] = S::from_fp(top * (1.0 - t.fy) + bot * t.fy);
                    }
                }
            }
            out
        })
        .collect();
    let mut out = Array4::<S>::zeros((b, c, ho, wo));
    for (bi, p) in planes.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), bi).assign(&p);
    }

    let xt = x.clone();
    let gt = grid.clone();
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone(), grid.clone()],
        Box::new(move |g| {
            let gout = g.view().into_dimensionality::<Ix4>().unwrap();
            let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
            let g4 = gv.view().into_dimensionality::<Ix4>().unwrap();
            let results: Vec<(Array3<S>, Array3<S>)> = (0..b)
                .into_par_iter()
                .map(|bi| {
                    let img = x4.index_axis(Axis(0), bi);
                    let mut dimg = Array3::<S>::zeros((c, h, w));
                    let mut dgrid = Array3::<S>::zeros((ho, wo, 2));
                    for i in 0..ho {
                        for j in 0..wo {
                            let gx = g4[[bi, i, j, 0]].fp();
                            let gy = g4[[bi, i, j, 1]].fp();
                            let t = resolve(gx, gy, w, h, mode);
                            let (mut ax, mut ay) = (0.0f64, 0.0f64);
                            for ci in 0..c {
                                let go = gout[[bi, ci, i, j]].fp();
                                if go == 0.0 {
                                    continue;
                                }
                                let plane = img.index_axis(Axis(0), ci);
                                let v00 = tap(&plane, t.y0, t.x0);
                                let v01 = tap(&plane, t.y0, t.x0 + 1);
                                let v10 = tap(&plane, t.y0 + 1, t.x0);
                                let v11 = tap(&plane, t.y0 + 1, t.x0 + 1);
                                // gradient to the grid point
                                let dvdx = (v01 - v00) * (1.0 - t.fy) + (v11 - v10) * t.fy;
                                let dvdy = (v10 - v00) * (1.0 - t.fx) + (v11 - v01) * t.fx;
                                ax += go * dvdx * t.dpx;
                                ay += go * dvdy * t.dpy;
                                // gradient to the four taps
                                let mut scatter = |y: isize, x: isize, wgt: f64| {
                                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                        let slot = &mut dimg[[ci, y as usize, x as usize]];
                                        *slot = *slot + S::from_fp(go * wgt);
                                    }
                                };
                                scatter(t.y0, t.x0, (1.0 - t.fx) * (1.0 - t.fy));
                                scatter(t.y0, t.x0 + 1, t.fx * (1.0 - t.fy));
                                scatter(t.y0 + 1, t.x0, (1.0 - t.fx) * t.fy);
                                scatter(t.y0 + 1, t.x0 + 1, t.fx * t.fy);
                            }
                            dgrid[[i, j, 0]] = S::from_fp(ax);
                            dgrid[[i, j, 1]] = S::from_fp(ay);
                        }
                    }
                    (dimg, dgrid)
                })
                .collect();
            if xt.requires_grad() {
                let mut dx = Array4::<S>::zeros((b, c, h, w));
                for (bi, (dimg, _)) in results.iter().enumerate() {
                    dx.index_axis_mut(Axis(0), bi).assign(dimg);
                }
                xt.accumulate_grad(dx.into_dyn());
            }
            if gt.requires_grad() {
                let mut dg = Array4::<S>::zeros((b, ho, wo, 2));
                for (bi, (_, dgrid)) in results.iter().enumerate() {
                    dg.index_axis_mut(Axis(0), bi).assign(dgrid);
                }
                gt.accumulate_grad(dg.into_dyn());
            }
        }),
    )
}

/// Evenly spaced identity grid `[1, H, W, 2]` covering [-1, 1]^2.
pub fn identity_grid<S: Scalar>(h: usize, w: usize) -> ArrayD<S> {
    let mut g = Array4::<S>::zeros((1, h, w, 2));
    for i in 0..h {
        for j in 0..w {
            let gy = if h == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (h - 1) as f64 };
            let gx = if w == 1 { 0.0 } else { -1.0 + 2.0 * j as f64 / (w - 1) as f64 };
            g[[0, i, j, 0]] = S::from_fp(gx);
            g[[0, i, j, 1]] = S::from_fp(gy);
        }
    }
    g.into_dyn()
}

/// Rotation grid about the image centre (angle in degrees, counter-clockwise
/// in image coordinates) for sampling an `[h, w]` image.
pub fn rotation_grid<S: Scalar>(h: usize, w: usize, angle_deg: f64) -> ArrayD<S> {
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    // Aspect matters: rotate in pixel space, express in normalized coords.
    let (hw, hh) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let mut g = Array4::<S>::zeros((1, h, w, 2));
    for i in 0..h {
        for j in 0..w {
            let x = j as f64 - hw;
            let y = i as f64 - hh;
            let sx = cos * x - sin * y;
            let sy = sin * x + cos * y;
            g[[0, i, j, 0]] = S::from_fp(if w == 1 { 0.0 } else { sx / hw });
            g[[0, i, j, 1]] = S::from_fp(if h == 1 { 0.0 } else { sy / hh });
        }
    }
    g.into_dyn()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::gradcheck::check_gradients;
    use ndarray::IxDyn;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identity_grid_reproduces_input() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 3, 6, 9]), |_| rng.gen_range(0.0..1.0f64));
        let grid = identity_grid::<f64>(6, 9);
        let out = grid_sample(
            &Tensor::constant(x.clone()),
            &Tensor::constant(grid),
            PaddingMode::Border,
        );
        let diff = (&x - out.value()).mapv(f64::abs);
        assert!(diff.iter().cloned().fold(0.0, f64::max) < 1e-12);
    }

    #[test]
    fn border_mode_clamps() {
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 1, 2, 2]), |ix| (ix[2] * 2 + ix[3]) as f64);
        let mut grid = ndarray::Array4::<f64>::zeros((1, 1, 1, 2));
        grid[[0, 0, 0, 0]] = -5.0; // far left
        grid[[0, 0, 0, 1]] = -5.0; // far top
        let out = grid_sample(
            &Tensor::constant(x.clone()),
            &Tensor::constant(grid.clone().into_dyn()),
            PaddingMode::Border,
        );
        assert_eq!(out.value()[[0, 0, 0, 0]], 0.0); // top-left value
        let out_zeros = grid_sample(
            &Tensor::constant(x),
            &Tensor::constant(grid.into_dyn()),
            PaddingMode::Zeros,
        );
        assert_eq!(out_zeros.value()[[0, 0, 0, 0]], 0.0);
    }

    #[test]
    fn grad_checks_on_smooth_image() {
        // A globally bilinear image keeps interpolation C^1 so finite
        // differences are valid for the grid gradient.
        let (h, w) = (5, 7);
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 2, h, w]), |ix| {
            let (c, y, x) = (ix[1] as f64, ix[2] as f64, ix[3] as f64);
            0.2 + 0.05 * x + 0.08 * y + 0.01 * x * y + 0.1 * c
        });
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let grid = ArrayD::from_shape_fn(IxDyn(&[1, 3, 4, 2]), |_| rng.gen_range(-0.8..0.8f64));
        check_gradients(
            &[img.clone(), grid.clone()],
            |ts| grid_sample(&ts[0], &ts[1], PaddingMode::Border).sqr().mean(),
            1e-6,
            1e-7,
        );
        check_gradients(
            &[img, grid],
            |ts| grid_sample(&ts[0], &ts[1], PaddingMode::Zeros).sqr().mean(),
            1e-6,
            1e-7,
        );
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let x = ArrayD::from_shape_fn(IxDyn(&[1, 1, 4, 8]), |_| rng.gen_range(0.0..1.0f64));
        let g = rotation_grid::<f64>(4, 8, 0.0);
        let out = grid_sample(
            &Tensor::constant(x.clone()),
            &Tensor::constant(g),
            PaddingMode::Border,
        );
        let diff = (&x - out.value()).mapv(f64::abs);
        assert!(diff.iter().cloned().fold(0.0, f64::max) < 1e-12);
    }
}
