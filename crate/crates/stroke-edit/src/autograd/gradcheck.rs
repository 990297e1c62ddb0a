//! Central finite-difference gradient checking.
//!
//! Used throughout the test suites to validate every differentiable kernel
//! against an independent numeric oracle. Checks are meant to run with
//! `f64` tensors; `f32` round-off drowns the comparison at tight tolerances.

use ndarray::ArrayD;

use super::{Scalar, Tensor};

/// Relative error with an absolute floor, so near-zero gradients do not
/// explode the ratio.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(floor)
}

/// Central finite difference of `f` at `inputs`, perturbing one element of
/// one input at a time.
pub fn central_difference<S: Scalar>(
    inputs: &[ArrayD<S>],
    which: usize,
    index: usize,
    h: f64,
    f: &impl Fn(&[Tensor<S>]) -> Tensor<S>,
) -> f64 {
    let eval = |delta: f64| -> f64 {
        let tensors: Vec<Tensor<S>> = inputs
            .iter()
            .enumerate()
            .map(|(i, arr)| {
                let mut a = arr.clone();
                if i == which {
                    let v = a.as_slice_mut().expect("contiguous input");
                    v[index] = v[index] + S::from_fp(delta);
                }
                Tensor::variable(a)
            })
            .collect();
        f(&tensors).item().fp()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

/// Asserts that analytic gradients of the scalar `f(inputs)` match central
/// finite differences at relative tolerance `rtol` (with absolute floor
/// `atol` applied to both the comparison and the ratio denominator).
///
/// Panics with a description of the first offending element.
pub fn check_gradients<S: Scalar>(
    inputs: &[ArrayD<S>],
    f: impl Fn(&[Tensor<S>]) -> Tensor<S>,
    h: f64,
    atol: f64,
) {
    let rtol = 1e-3;
    let tensors: Vec<Tensor<S>> = inputs.iter().map(|a| Tensor::variable(a.clone())).collect();
    let out = f(&tensors);
    assert_eq!(out.len(), 1, "gradient check needs a scalar function");
    out.backward();

    for (wi, t) in tensors.iter().enumerate() {
        let analytic = t
            .grad()
            .unwrap_or_else(|| ArrayD::zeros(t.value().raw_dim()));
        let flat = analytic.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        for (idx, &a) in flat.iter().enumerate() {
            let numeric = central_difference(inputs, wi, idx, h, &f);
            let a = a.fp();
            let err = (a - numeric).abs();
            if err > atol && rel_error(a, numeric, atol) > rtol {
                panic!(
                    "gradient mismatch: input {wi} element {idx}: analytic {a:.9e} vs numeric {numeric:.9e} (abs err {err:.3e})"
                );
            }
        }
    }
}

/// Like [`check_gradients`] but only probes a subset of elements (for
/// expensive functions). `stride` selects every n-th element.
pub fn check_gradients_sampled<S: Scalar>(
    inputs: &[ArrayD<S>],
    f: impl Fn(&[Tensor<S>]) -> Tensor<S>,
    h: f64,
    atol: f64,
    stride: usize,
) {
    let rtol = 1e-3;
    let tensors: Vec<Tensor<S>> = inputs.iter().map(|a| Tensor::variable(a.clone())).collect();
    let out = f(&tensors);
    out.backward();
    for (wi, t) in tensors.iter().enumerate() {
        let analytic = t
            .grad()
            .unwrap_or_else(|| ArrayD::zeros(t.value().raw_dim()));
        let flat = analytic.as_standard_layout();
        let flat = flat.as_slice().expect("standard layout");
        for idx in (0..flat.len()).step_by(stride.max(1)) {
            let numeric = central_difference(inputs, wi, idx, h, &f);
            let a = flat[idx].fp();
            let err = (a - numeric).abs();
            if err > atol && rel_error(a, numeric, atol) > rtol {
                panic!(
                    "gradient mismatch: input {wi} element {idx}: analytic {a:.9e} vs numeric {numeric:.9e} (abs err {err:.3e})"
                );
            }
        }
    }
}
