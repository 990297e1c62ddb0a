//! Evaluation metrics: per-image MSE / PSNR / SSIM, corpus-level FID and
//! sequence accuracy, plus the report writer.
//!
//! Every kernel here is paired with an independent naive implementation in
//! [`reference`]; the test suites assert agreement on random inputs.

mod evaluate;
mod fid;
pub mod reference;

pub use evaluate::{evaluate, EvalArgs, EvalMode};
pub use fid::{fid, FidStats};

use serde::{Deserialize, Serialize};

use crate::util::Image;

/// Cap applied to per-image PSNR so identical images stay finite.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Mean squared pixel difference over all channels, accumulated in f64.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.shape(), b.shape(), "mse: shape mismatch");
    let n = a.len().max(1);
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n as f64
}

/// PSNR in dB for unit dynamic range, from a precomputed MSE.
pub fn psnr(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr_between(a: &Image, b: &Image) -> f64 {
    psnr(mse(a, b))
}

/// Rec.601 luma conversion, the grayscale SSIM operates on.
pub(crate) fn to_gray(img: &Image) -> ndarray::Array2<f64> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
        if c >= 3 {
            0.299 * img[[0, y, x]] as f64
                + 0.587 * img[[1, y, x]] as f64
                + 0.114 * img[[2, y, x]] as f64
        } else {
            img[[0, y, x]] as f64
        }
    })
}

/// Gaussian window parameters shared by the fast kernel and the reference.
/// The window shrinks (with sigma rescaled) when the image is smaller than
/// the standard 11x11 support.
pub(crate) fn ssim_window(h: usize, w: usize) -> (usize, f64) {
    let mut win = 11usize.min(h).min(w);
    if win.is_multiple_of(2) {
        win -= 1;
    }
    assert!(win >= 1, "image too small for SSIM");
    (win, 1.5 * win as f64 / 11.0)
}

pub(crate) fn gaussian_kernel_1d(win: usize, sigma: f64) -> Vec<f64> {
    let half = (win / 2) as f64;
    let mut k: Vec<f64> = (0..win)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM over valid window positions, 11x11 Gaussian sigma 1.5,
/// K1 = 0.01, K2 = 0.03, unit dynamic range, on the grayscale conversion.
/// Implemented with separable filtering; see [`reference::ssim_direct`] for
/// the naive sliding-window oracle.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ssim: shape mismatch");
    let ga = to_gray(a);
    let gb = to_gray(b);
    let (h, w) = ga.dim();
    let (win, sigma) = ssim_window(h, w);
    let k = gaussian_kernel_1d(win, sigma);

    // separable valid-mode filtering of the five moment planes
    let filter = |plane: &ndarray::Array2<f64>| -> ndarray::Array2<f64> {
        let (ph, pw) = plane.dim();
        let mut horiz = ndarray::Array2::<f64>::zeros((ph, pw - win + 1));
        for y in 0..ph {
            for x in 0..pw - win + 1 {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * plane[[y, x + i]];
                }
                horiz[[y, x]] = acc;
            }
        }
        let mut out = ndarray::Array2::<f64>::zeros((ph - win + 1, pw - win + 1));
        for y in 0..ph - win + 1 {
            for x in 0..pw - win + 1 {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * horiz[[y + i, x]];
                }
                out[[y, x]] = acc;
            }
        }
        out
    };

    let mu_a = filter(&ga);
    let mu_b = filter(&gb);
    let aa = filter(&(&ga * &ga));
    let bb = filter(&(&gb * &gb));
    let ab = filter(&(&ga * &gb));

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    ndarray::Zip::from(&mu_a)
        .and(&mu_b)
        .and(&aa)
        .and(&bb)
        .and(&ab)
        .for_each(|&ma, &mb, &saa, &sbb, &sab| {
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        });
    total / count as f64
}

/// Percentage of decoded strings equal to their target, case-insensitive.
pub fn sequence_accuracy(decodes: &[String], targets: &[String]) -> f64 {
    assert_eq!(decodes.len(), targets.len());
    if decodes.is_empty() {
        return 0.0;
    }
    let matches = decodes
        .iter()
        .zip(targets)
        .filter(|(d, t)| d.to_lowercase() == t.to_lowercase())
        .count();
    100.0 * matches as f64 / decodes.len() as f64
}

/// Corpus-level evaluation report. `schema_version` guards the JSON layout.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    /// Mean over images of per-image pixel MSE.
    pub mse: f64,
    /// Mean per-image PSNR in dB (each image capped at 100 dB).
    pub psnr: f64,
    /// Mean per-image SSIM.
    pub ssim: f64,
    /// Frechet distance between feature distributions; NaN-free by
    /// construction. Only meaningful relative to the same `feature_backend`.
    pub fid: f64,
    /// Recognizer word accuracy of edited images against target texts, %.
    pub seq_acc: f64,
    pub n_images: usize,
    /// Which feature extractor produced FID features. The desk backend is
    /// the frozen recognizer stem, not comparable with InceptionV3 numbers.
    pub feature_backend: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

pub const EVAL_SCHEMA_VERSION: u32 = 1;
