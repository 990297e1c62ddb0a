//! Every term of the composite training objective, plus the weighted total.
//!
//! Image reconstruction terms pair a non-saturating GAN loss with an MSE
//! penalty; guidance maps use dice; the recognizer contributes per-step
//! cross-entropy; and the VGG-style pair (perceptual + Gram style) runs on
//! frozen feature activations. Real (unpaired) samples keep only the
//! recognition and perceptual/style terms against the input image itself —
//! everything else is masked to exactly zero with no gradient.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

/// Balance factors; defaults are the published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_b1: f64,
    pub lambda_t1: f64,
    pub lambda_v1: f64,
    pub lambda_v2: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_b1: 10.0,
            lambda_t1: 10.0,
            lambda_v1: 1.0,
            lambda_v2: 500.0,
            lambda_1: 10.0,
            lambda_2: 1.0,
            lambda_3: 0.1,
        }
    }
}

/// Per-term scalars for logging; disabled terms report exactly 0.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub kind: String,
    pub l_b_s: f64,
    pub l_b_guide: f64,
    pub l_t_t: f64,
    pub l_t_guide: f64,
    pub l_rec: f64,
    pub l_per: f64,
    pub l_style: f64,
    pub total: f64,
    pub d_b: f64,
    pub d_t: f64,
}

impl LossReport {
    /// The weighted recombination of the reported terms; must match `total`
    /// up to round-off (the training loop asserts this).
    pub fn recombined_total(&self, w: &LossWeights) -> f64 {
        self.l_b_s
            + self.l_t_t
            + w.lambda_1 * (self.l_b_guide + self.l_t_guide)
            + w.lambda_2 * (w.lambda_v1 * self.l_per + w.lambda_v2 * self.l_style)
            + w.lambda_3 * self.l_rec
    }
}

/// Non-saturating generator GAN term: -mean log sigmoid(fake logits),
/// computed as softplus(-x) for stability.
pub fn gan_generator_loss<S: Scalar>(fake_logits: &Tensor<S>) -> Tensor<S> {
    fake_logits.neg().softplus().mean()
}

/// Discriminator loss -mean[log sigmoid(real) + log(1 - sigmoid(fake))].
/// The fake branch is detached here, so generator parameters can never
/// receive gradient from this loss.
pub fn gan_discriminator_loss<S: Scalar>(
    real_logits: &Tensor<S>,
    fake_logits: &Tensor<S>,
) -> Tensor<S> {
    let real_term = real_logits.neg().softplus().mean();
    let fake_term = fake_logits.detach().softplus().mean();
    real_term.add(&fake_term)
}

pub fn mse_loss<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    assert_eq!(a.shape(), b.shape(), "mse_loss: shape mismatch");
    a.sub(b).sqr().mean()
}

/// GAN + weighted L2 on the reconstructed background.
pub fn background_loss<S: Scalar>(
    o_s: &Tensor<S>,
    t_b: &Tensor<S>,
    d_b_fake_logits: &Tensor<S>,
    weights: &LossWeights,
) -> (Tensor<S>, f64, f64) {
    let adv = gan_generator_loss(d_b_fake_logits);
    let l2 = mse_loss(o_s, t_b).scale(weights.lambda_b1);
    let total = adv.add(&l2);
    let (a, l) = (adv.item().fp(), l2.item().fp());
    (total, a, l)
}

/// GAN + weighted L2 on the edited image (identical structure, lambda_t1).
pub fn edited_loss<S: Scalar>(
    o_hat_t: &Tensor<S>,
    t_t: &Tensor<S>,
    d_t_fake_logits: &Tensor<S>,
    weights: &LossWeights,
) -> (Tensor<S>, f64, f64) {
    let adv = gan_generator_loss(d_t_fake_logits);
    let l2 = mse_loss(o_hat_t, t_t).scale(weights.lambda_t1);
    let total = adv.add(&l2);
    let (a, l) = (adv.item().fp(), l2.item().fp());
    (total, a, l)
}

/// Smoothing added to the dice ratio; defined even when both masks are empty.
pub const DICE_EPS: f64 = 1.0;

/// Soft dice: 1 - (2 |pred ∩ gt| + eps) / (|pred| + |gt| + eps), with the
/// intersection as the sum of elementwise products and |X| as the pixel sum.
pub fn dice_loss<S: Scalar>(pred: &Tensor<S>, gt: &Tensor<S>) -> Tensor<S> {
    assert_eq!(pred.shape(), gt.shape(), "dice_loss: shape mismatch");
    let inter = pred.mul(gt).sum().scale(2.0).add_scalar(DICE_EPS);
    let denom = pred.sum().add(&gt.sum()).add_scalar(DICE_EPS);
    Tensor::scalar(S::one()).sub(&inter.div(&denom))
}

/// Mean over N decode steps of the negative log-probability of the
/// ground-truth token, texts padded with EOS to length N.
/// `logits` is `[B, N, classes]`.
pub fn recognition_loss<S: Scalar>(
    logits: &Tensor<S>,
    texts: &[String],
    vocab: &Vocab,
    n_steps: usize,
) -> Result<Tensor<S>> {
    let (b, n, classes) = (logits.shape()[0], logits.shape()[1], logits.shape()[2]);
    assert_eq!(b, texts.len(), "one text per batch row");
    assert_eq!(n, n_steps);
    assert_eq!(classes, vocab.classes());
    for t in texts {
        if t.chars().count() >= n_steps {
            return Err(Error::Data {
                sample: None,
                message: format!("text {t:?} does not fit in {n_steps} steps"),
            });
        }
    }
    let mut onehot = ArrayD::<S>::zeros(IxDyn(&[b, n, classes]));
    for (bi, text) in texts.iter().enumerate() {
        for (si, idx) in vocab.encode_padded(text, n)?.into_iter().enumerate() {
            onehot[[bi, si, idx]] = S::one();
        }
    }
    let logp = logits.log_softmax(2);
    // mean over steps and batch of -log p(gt)
    Ok(logp
        .mul(&Tensor::constant(onehot))
        .sum()
        .scale(-1.0 / (b * n) as f64))
}

/// Mean absolute difference of activations, averaged over feature levels.
/// The target features are detached.
pub fn perceptual_loss<S: Scalar>(gen_feats: &[Tensor<S>], gt_feats: &[Tensor<S>]) -> Tensor<S> {
    assert_eq!(
        gen_feats.len(),
        gt_feats.len(),
        "perceptual_loss: level count mismatch"
    );
    let mut acc = Tensor::scalar(S::zero());
    for (g, t) in gen_feats.iter().zip(gt_feats) {
        acc = acc.add(&g.sub(&t.detach()).abs().mean());
    }
    acc.scale(1.0 / gen_feats.len() as f64)
}

/// Channel Gram matrix of `[B, C, H, W]` features for one batch row,
/// normalized by the spatial element count: `G = F F^T / (H W)`.
pub fn gram_matrix<S: Scalar>(feats: &Tensor<S>, row: usize) -> Tensor<S> {
    let (c, h, w) = (feats.shape()[1], feats.shape()[2], feats.shape()[3]);
    let f = feats.narrow(0, row, row + 1).reshape(&[c, h * w]);
    let ft = f.permute(&[1, 0]);
    f.matmul(&ft).scale(1.0 / (h * w) as f64)
}

/// Mean absolute difference of channel Gram matrices, normalized by
/// (channels x spatial elements) and averaged over levels and the batch.
pub fn style_loss<S: Scalar>(gen_feats: &[Tensor<S>], gt_feats: &[Tensor<S>]) -> Tensor<S> {
    assert_eq!(
        gen_feats.len(),
        gt_feats.len(),
        "style_loss: level count mismatch"
    );
    let mut acc = Tensor::scalar(S::zero());
    for (g, t) in gen_feats.iter().zip(gt_feats) {
        let b = g.shape()[0];
        let c = g.shape()[1];
        let t = t.detach();
        let mut level = Tensor::scalar(S::zero());
        for bi in 0..b {
            let gg = gram_matrix(g, bi).scale(1.0 / c as f64);
            let gt = gram_matrix(&t, bi).scale(1.0 / c as f64);
            level = level.add(&gg.sub(&gt).abs().mean());
        }
        acc = acc.add(&level.scale(1.0 / b as f64));
    }
    acc.scale(1.0 / gen_feats.len() as f64)
}

/// lambda_v1 * L_per + lambda_v2 * L_style.
pub fn vgg_loss<S: Scalar>(
    gen_feats: &[Tensor<S>],
    gt_feats: &[Tensor<S>],
    weights: &LossWeights,
) -> (Tensor<S>, f64, f64) {
    let per = perceptual_loss(gen_feats, gt_feats);
    let style = style_loss(gen_feats, gt_feats);
    let (p, s) = (per.item().fp(), style.item().fp());
    (
        per.scale(weights.lambda_v1)
            .add(&style.scale(weights.lambda_v2)),
        p,
        s,
    )
}

/// Sample kind for loss masking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Synthetic,
    Real,
}

/// The scalar loss terms that feed the weighted total.
pub struct GeneratorTerms<S: Scalar> {
    pub l_b_s: Option<Tensor<S>>,
    pub l_t_t: Option<Tensor<S>>,
    pub l_b_guide: Option<Tensor<S>>,
    pub l_t_guide: Option<Tensor<S>>,
    pub l_vgg: Option<Tensor<S>>,
    pub l_rec: Option<Tensor<S>>,
}

/// Weighted total: synthetic samples combine every term; real samples keep
/// only the VGG and recognition terms (self-reconstruction supervision).
pub fn total_generator_loss<S: Scalar>(
    terms: &GeneratorTerms<S>,
    weights: &LossWeights,
    kind: SampleKind,
) -> Result<Tensor<S>> {
    let need = |t: &Option<Tensor<S>>, name: &str| -> Result<Tensor<S>> {
        t.clone().ok_or_else(|| Error::Config(format!(
            "missing mandatory loss term {name} for {kind:?} sample"
        )))
    };
    match kind {
        SampleKind::Synthetic => {
            let total = need(&terms.l_b_s, "l_b_s")?
                .add(&need(&terms.l_t_t, "l_t_t")?)
                .add(
                    &need(&terms.l_b_guide, "l_b_guide")?
                        .add(&need(&terms.l_t_guide, "l_t_guide")?)
                        .scale(weights.lambda_1),
                )
                .add(&need(&terms.l_vgg, "l_vgg")?.scale(weights.lambda_2))
                .add(&need(&terms.l_rec, "l_rec")?.scale(weights.lambda_3));
            Ok(total)
        }
        SampleKind::Real => Ok(need(&terms.l_vgg, "l_vgg")?
            .scale(weights.lambda_2)
            .add(&need(&terms.l_rec, "l_rec")?.scale(weights.lambda_3))),
    }
}
