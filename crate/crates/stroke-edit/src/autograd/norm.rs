//! Instance normalization with affine parameters.
//!
//! Per-(sample, channel) statistics, no running averages, so eval-mode
//! behaviour is identical to train-mode and fully deterministic.

use ndarray::{Array4, Ix1, Ix4};

use super::{Scalar, Tensor};

/// Normalizes each (batch, channel) plane of `x` `[B, C, H, W]` to zero
/// mean / unit variance, then applies `gamma * xhat + beta`.
pub fn instance_norm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Tensor<S> {
    let xv = x.shared_value();
    let gv = gamma.shared_value();
    let bv = beta.shared_value();
    let x4 = xv.view().into_dimensionality::<Ix4>().expect("4-d input");
    let (b, c, h, w) = x4.dim();
    let n = (h * w) as f64;
    assert!(h * w > 0, "instance_norm: empty plane");
    assert_eq!(gv.len(), c, "gamma size mismatch");
    assert_eq!(bv.len(), c, "beta size mismatch");

    let mut mean = vec![0f64; b * c];
    let mut invstd = vec![0f64; b * c];
    let mut out = Array4::<S>::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            let plane = x4.index_axis(ndarray::Axis(0), bi);
            let plane = plane.index_axis(ndarray::Axis(0), ci);
            let mu: f64 = plane.iter().map(|v| v.fp()).sum::<f64>() / n;
            let var: f64 = plane.iter().map(|v| (v.fp() - mu).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            mean[bi * c + ci] = mu;
            invstd[bi * c + ci] = is;
            let g = gv[[ci]].fp();
            let be = bv[[ci]].fp();
            for y in 0..h {
                for xx in 0..w {
                    let xh = (plane[[y, xx]].fp() - mu) * is;
                    out[[bi, ci, y, xx]] = S::from_fp(g * xh + be);
                }
            }
        }
    }

    let xt = x.clone();
    let gt = gamma.clone();
    let bt = beta.clone();
    Tensor::from_op(
        out.into_dyn(),
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
            let x4 = xv.view().into_dimensionality::<Ix4>().unwrap();
            let gv1 = gv.view().into_dimensionality::<Ix1>().unwrap();
            let mut dx = Array4::<S>::zeros((b, c, h, w));
            let mut dgamma = vec![0f64; c];
            let mut dbeta = vec![0f64; c];
            for bi in 0..b {
                for ci in 0..c {
                    let mu = mean[bi * c + ci];
                    let is = invstd[bi * c + ci];
                    let gam = gv1[ci].fp();
                    let xplane = x4.index_axis(ndarray::Axis(0), bi);
                    let xplane = xplane.index_axis(ndarray::Axis(0), ci);
                    let gplane = g4.index_axis(ndarray::Axis(0), bi);
                    let gplane = gplane.index_axis(ndarray::Axis(0), ci);
                    // accumulate sums for the coupled terms
                    let mut sum_g = 0f64;
                    let mut sum_gx = 0f64;
                    for y in 0..h {
                        for xx in 0..w {
                            let go = gplane[[y, xx]].fp();
                            let xh = (xplane[[y, xx]].fp() - mu) * is;
                            sum_g += go;
                            sum_gx += go * xh;
                            dgamma[ci] += go * xh;
                            dbeta[ci] += go;
                        }
                    }
                    for y in 0..h {
                        for xx in 0..w {
                            let go = gplane[[y, xx]].fp();
                            let xh = (xplane[[y, xx]].fp() - mu) * is;
                            let v = gam * is * (go - sum_g / n - xh * sum_gx / n);
                            dx[[bi, ci, y, xx]] = S::from_fp(v);
                        }
                    }
                }
            }
            if xt.requires_grad() {
                xt.accumulate_grad(dx.into_dyn());
            }
            if gt.requires_grad() {
                gt.accumulate_grad(
                    ndarray::Array1::from_iter(dgamma.iter().map(|&v| S::from_fp(v))).into_dyn(),
                );
            }
            if bt.requires_grad() {
                bt.accumulate_grad(
                    ndarray::Array1::from_iter(dbeta.iter().map(|&v| S::from_fp(v))).into_dyn(),
                );
            }
        }),
    )
}
