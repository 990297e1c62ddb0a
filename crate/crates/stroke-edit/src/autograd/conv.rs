//! Convolution, pooling and resampling kernels (NCHW layout).
//!
//! conv2d lowers to im2col + GEMM, parallelized over the batch with rayon.
//! Backward passes recompute im2col instead of caching it; the GEMMs
//! dominate anyway. Per-sample results are reduced in batch order so runs
//! are bitwise reproducible regardless of thread scheduling.

use ndarray::{Array2, Array3, Array4, ArrayD, ArrayView3, Axis, Ix4};
use rayon::prelude::*;

use super::{Scalar, Tensor};

fn as4<S: Scalar>(t: &ArrayD<S>) -> ndarray::ArrayView4<'_, S> {
    t.view().into_dimensionality::<Ix4>().expect("expected 4-d tensor")
}

pub(crate) fn im2col<S: Scalar>(
    x: ArrayView3<'_, S>,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    out_hw: (usize, usize),
) -> Array2<S> {
    let (cin, h, w) = x.dim();
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let (ho, wo) = out_hw;
    let mut cols = Array2::<S>::zeros((cin * kh * kw, ho * wo));
    let xs = x.as_slice().expect("contiguous input");
    let cs = cols.as_slice_mut().unwrap();
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[base + oy * wo + ox] = xs[src_row + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im<S: Scalar>(
    cols: &Array2<S>,
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    out_hw: (usize, usize),
) -> Array3<S> {
    let (sh, sw) = stride;
    let (ph, pw) = pad;
    let (ho, wo) = out_hw;
    let mut x = Array3::<S>::zeros((cin, h, w));
    let xs = x.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("contiguous cols");
    for c in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let base = row * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (c * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * sw + kj) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        xs[dst_row + ix as usize] = xs[dst_row + ix as usize] + cs[base + oy * wo + ox];
                    }
                }
            }
        }
    }
    x
}

/// 2-D convolution: `x` `[B, Cin, H, W]`, `weight` `[Cout, Cin, kh, kw]`,
/// optional `bias` `[Cout]`.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    stride: (usize, usize),
    pad: (usize, usize),
) -> Tensor<S> {
    let xv = x.shared_value();
    let wv = weight.shared_value();
    let (b, cin, h, w) = as4(&xv).dim();
    let (cout, wcin, kh, kw) = as4(&wv).dim();
    assert_eq!(cin, wcin, "conv2d: channel mismatch");
    assert!(
        h + 2 * pad.0 >= kh && w + 2 * pad.1 >= kw,
        "conv2d: kernel larger than padded input"
    );
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;

    let w2 = wv
        .to_shape((cout, cin * kh * kw))
        .expect("weight reshape")
        .to_owned();
    let x_std = xv.as_standard_layout();
    let xview = x_std.view().into_dimensionality::<Ix4>().unwrap();
    let per_batch: Vec<Array2<S>> = (0..b)
        .into_par_iter()
        .map(|bi| {
            let cols = im2col(xview.index_axis(Axis(0), bi), kh, kw, stride, pad, (ho, wo));
            w2.dot(&cols)
        })
        .collect();
    let mut out = Array4::<S>::zeros((b, cout, ho, wo));
    for (bi, m) in per_batch.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), bi)
            .assign(&m.into_shape_with_order((cout, ho, wo)).unwrap());
    }
    if let Some(bias) = bias {
        let bv = bias.value();
        for c in 0..cout {
            let add = bv[[c]];
            out.index_axis_mut(Axis(1), c).mapv_inplace(|v| v + add);
        }
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let xt = x.clone();
    let wt = weight.clone();
    let bt = bias.cloned();
    Tensor::from_op(
        out.into_dyn(),
        parents,
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let x_std = xv.as_standard_layout();
            let xview = x_std.view().into_dimensionality::<Ix4>().unwrap();
            let w2 = wv.to_shape((cout, cin * kh * kw)).unwrap().to_owned();
            if xt.requires_grad() {
                let dxs: Vec<Array3<S>> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let go = g4
                            .index_axis(Axis(0), bi)
                            .as_standard_layout()
                            .to_shape((cout, ho * wo))
                            .unwrap()
                            .to_owned();
                        let dcols = w2.t().dot(&go);
                        col2im(&dcols, cin, h, w, kh, kw, stride, pad, (ho, wo))
                    })
                    .collect();
                let mut dx = Array4::<S>::zeros((b, cin, h, w));
                for (bi, d) in dxs.into_iter().enumerate() {
                    dx.index_axis_mut(Axis(0), bi).assign(&d);
                }
                xt.accumulate_grad(dx.into_dyn());
            }
            if wt.requires_grad() {
                let dws: Vec<Array2<S>> = (0..b)
                    .into_par_iter()
                    .map(|bi| {
                        let cols =
                            im2col(xview.index_axis(Axis(0), bi), kh, kw, stride, pad, (ho, wo));
                        let go = g4
                            .index_axis(Axis(0), bi)
                            .as_standard_layout()
                            .to_shape((cout, ho * wo))
                            .unwrap()
                            .to_owned();
                        go.dot(&cols.t())
                    })
                    .collect();
                let mut dw = Array2::<S>::zeros((cout, cin * kh * kw));
                for d in dws {
                    dw = dw + d;
                }
                wt.accumulate_grad(
                    dw.into_shape_with_order((cout, cin, kh, kw))
                        .unwrap()
                        .into_dyn(),
                );
            }
            if let Some(bt) = &bt {
                if bt.requires_grad() {
                    let mut db = ndarray::Array1::<S>::zeros(cout);
                    for c in 0..cout {
                        let s: f64 = g4
                            .index_axis(Axis(1), c)
                            .iter()
                            .map(|v| v.fp())
                            .sum();
                        db[c] = S::from_fp(s);
                    }
                    bt.accumulate_grad(db.into_dyn());
                }
            }
        }),
    )
}

fn bin_edges(size: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins)
        .map(|i| {
            let start = i * size / bins;
            let end = ((i + 1) * size).div_ceil(bins);
            (start, end.max(start + 1).min(size))
        })
        .collect()
}

/// Adaptive average pooling to an `(oh, ow)` output grid.
pub fn adaptive_avg_pool<S: Scalar>(x: &Tensor<S>, out_hw: (usize, usize)) -> Tensor<S> {
    let xv = x.shared_value();
    let (b, c, h, w) = as4(&xv).dim();
    let (oh, ow) = out_hw;
    assert!(oh >= 1 && ow >= 1 && oh <= h && ow <= w, "adaptive pool: bad target size");
    let rows = bin_edges(h, oh);
    let cols = bin_edges(w, ow);
    let x4 = as4(&xv);
    let mut out = Array4::<S>::zeros((b, c, oh, ow));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x4.index_axis(Axis(0), bi);
            let plane = plane.index_axis(Axis(0), ci);
            for (i, &(r0, r1)) in rows.iter().enumerate() {
                for (j, &(c0, c1)) in cols.iter().enumerate() {
                    let mut acc = 0f64;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            acc += plane[[y, xx]].fp();
                        }
                    }
                    out[[bi, ci, i, j]] =
                        S::from_fp(acc / ((r1 - r0) * (c1 - c0)) as f64);
                }
            }
        }
    }
    let xt = x.clone();
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = Array4::<S>::zeros((b, c, h, w));
            for bi in 0..b {
                for ci in 0..c {
                    for (i, &(r0, r1)) in rows.iter().enumerate() {
                        for (j, &(c0, c1)) in cols.iter().enumerate() {
                            let share = g4[[bi, ci, i, j]]
                                / S::from_fp(((r1 - r0) * (c1 - c0)) as f64);
                            for y in r0..r1 {
                                for xx in c0..c1 {
                                    dx[[bi, ci, y, xx]] = dx[[bi, ci, y, xx]] + share;
                                }
                            }
                        }
                    }
                }
            }
            xt.accumulate_grad(dx.into_dyn());
        }),
    )
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest_2x<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let xv = x.shared_value();
    let (b, c, h, w) = as4(&xv).dim();
    let x4 = as4(&xv);
    let mut out = Array4::<S>::zeros((b, c, h * 2, w * 2));
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h * 2 {
                for xx in 0..w * 2 {
                    out[[bi, ci, y, xx]] = x4[[bi, ci, y / 2, xx / 2]];
                }
            }
        }
    }
    let xt = x.clone();
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = Array4::<S>::zeros((b, c, h, w));
            for bi in 0..b {
                for ci in 0..c {
                    for y in 0..h * 2 {
                        for xx in 0..w * 2 {
                            dx[[bi, ci, y / 2, xx / 2]] =
                                dx[[bi, ci, y / 2, xx / 2]] + g4[[bi, ci, y, xx]];
                        }
                    }
                }
            }
            xt.accumulate_grad(dx.into_dyn());
        }),
    )
}

fn lerp_weights(size_in: usize, size_out: usize) -> Vec<(usize, usize, f64)> {
    // align_corners=true mapping; (lo, hi, frac) per output index
    (0..size_out)
        .map(|i| {
            if size_out == 1 || size_in == 1 {
                return (0usize, 0usize, 0.0);
            }
            let src = i as f64 * (size_in - 1) as f64 / (size_out - 1) as f64;
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(size_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resize to `(oh, ow)` with corner alignment.
pub fn resize_bilinear<S: Scalar>(x: &Tensor<S>, out_hw: (usize, usize)) -> Tensor<S> {
    let xv = x.shared_value();
    let (b, c, h, w) = as4(&xv).dim();
    let (oh, ow) = out_hw;
    let wy = lerp_weights(h, oh);
    let wx = lerp_weights(w, ow);
    let x4 = as4(&xv);
    let mut out = Array4::<S>::zeros((b, c, oh, ow));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x4.index_axis(Axis(0), bi);
            let plane = plane.index_axis(Axis(0), ci);
            for (i, &(y0, y1, fy)) in wy.iter().enumerate() {
                for (j, &(x0, x1, fx)) in wx.iter().enumerate() {
                    let v00 = plane[[y0, x0]].fp();
                    let v01 = plane[[y0, x1]].fp();
                    let v10 = plane[[y1, x0]].fp();
                    let v11 = plane[[y1, x1]].fp();
                    let top = v00 * (1.0 - fx) + v01 * fx;
                    let bot = v10 * (1.0 - fx) + v11 * fx;
                    out[[bi, ci, i, j]] = S::from_fp(top * (1.0 - fy) + bot * fy);
                }
            }
        }
    }
    let xt = x.clone();
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let mut dx = Array4::<S>::zeros((b, c, h, w));
            for bi in 0..b {
                for ci in 0..c {
                    for (i, &(y0, y1, fy)) in wy.iter().enumerate() {
                        for (j, &(x0, x1, fx)) in wx.iter().enumerate() {
                            let gv = g4[[bi, ci, i, j]].fp();
                            dx[[bi, ci, y0, x0]] =
                                dx[[bi, ci, y0, x0]] + S::from_fp(gv * (1.0 - fx) * (1.0 - fy));
                            dx[[bi, ci, y0, x1]] =
                                dx[[bi, ci, y0, x1]] + S::from_fp(gv * fx * (1.0 - fy));
                            dx[[bi, ci, y1, x0]] =
                                dx[[bi, ci, y1, x0]] + S::from_fp(gv * (1.0 - fx) * fy);
                            dx[[bi, ci, y1, x1]] =
                                dx[[bi, ci, y1, x1]] + S::from_fp(gv * fx * fy);
                        }
                    }
                }
            }
            xt.accumulate_grad(dx.into_dyn());
        }),
    )
}

/// Mean over the H axis of a `[B, C, H, W]` tensor, producing `[B, C, W]`.
pub fn mean_over_height<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.mean_axis_keep(2)
        .reshape(&[x.shape()[0], x.shape()[1], x.shape()[3]])
}

/// Reverse the W axis (horizontal flip).
pub fn flip_horizontal<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let value = x
        .value()
        .slice_axis(Axis(3), ndarray::Slice::new(0, None, -1))
        .to_owned();
    let xt = x.clone();
    Tensor::from_op(
        value,
        vec![x.clone()],
        Box::new(move |g| {
            xt.accumulate_grad(
                g.slice_axis(Axis(3), ndarray::Slice::new(0, None, -1))
                    .to_owned(),
            );
        }),
    )
}
