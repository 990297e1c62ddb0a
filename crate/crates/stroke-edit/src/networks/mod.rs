//! The learnable pieces: background reconstruction (BRM), text modification
//! (TMM), patch discriminators, the attention recognizer, and the
//! stroke-level blend that composites them.

mod brm;
mod disc;
mod recognizer;
mod tmm;

pub use brm::{Brm, BrmOutput};
pub use disc::PatchDiscriminator;
pub use recognizer::{
    perceptual_features, recognizer_fid_features, Recognizer, RecognizerOutput,
};
pub use tmm::{Tmm, TmmOutput};

use serde::{Deserialize, Serialize};

use crate::autograd::{Scalar, Tensor};
use crate::datagen::{render_canonical, GenConfig, Registries};
use crate::error::Result;
use crate::nn::Graph;
use crate::util::{Image, Mask};

/// Architecture hyperparameters; embedded in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub n_resblocks: usize,
    pub psp_pool_sizes: Vec<usize>,
    pub image_w: usize,
    pub image_h: usize,
    /// Control points per contour (2K total).
    pub k: usize,
    pub vocab: String,
    pub max_text_len: usize,
    pub rec_hidden: usize,
    pub rec_embed: usize,
    pub rec_attn: usize,
    pub rec_use_rectifier: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_channels: 32,
            n_resblocks: 4,
            psp_pool_sizes: vec![1, 2, 4, 8],
            image_w: 256,
            image_h: 64,
            k: 10,
            vocab: "abcdefghijklmnopqrstuvwxyz".into(),
            max_text_len: 25,
            rec_hidden: 48,
            rec_embed: 24,
            rec_attn: 48,
            rec_use_rectifier: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_resblocks < 1 {
            return Err(crate::Error::Config("n_resblocks must be >= 1".into()));
        }
        if !self.image_w.is_multiple_of(8) || !self.image_h.is_multiple_of(8) {
            return Err(crate::Error::Config(format!(
                "image size {}x{} must be divisible by 8 (three down-sampling layers)",
                self.image_w, self.image_h
            )));
        }
        if self.k < 2 {
            return Err(crate::Error::Config("K must be >= 2".into()));
        }
        Ok(())
    }

    pub fn vocab_obj(&self) -> crate::vocab::Vocab {
        crate::vocab::Vocab::new(&self.vocab)
    }
}

/// Stroke-level blend: `guide * edited + (1 - guide) * original`, the guide
/// broadcast over channels. Exact identities at guide 0 and 1.
pub fn slm_blend<S: Scalar>(
    edited: &Tensor<S>,
    guide: &Tensor<S>,
    original: &Tensor<S>,
) -> Tensor<S> {
    assert_eq!(
        &edited.shape()[2..],
        &guide.shape()[2..],
        "slm_blend: spatial shape mismatch"
    );
    assert_eq!(
        edited.shape(),
        original.shape(),
        "slm_blend: edited/original shape mismatch"
    );
    let one_minus = guide.neg().add_scalar(1.0);
    guide.mul(edited).add(&one_minus.mul(original))
}

/// Which stages apply the stroke-level blend. Training defaults follow the
/// placement study (blend in BRM only); inference applies both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlmPlacement {
    pub train_brm: bool,
    pub train_tmm: bool,
    pub infer_brm: bool,
    pub infer_tmm: bool,
}

impl Default for SlmPlacement {
    fn default() -> Self {
        SlmPlacement {
            train_brm: true,
            train_tmm: false,
            infer_brm: true,
            infer_tmm: true,
        }
    }
}

impl SlmPlacement {
    pub fn disabled() -> Self {
        SlmPlacement {
            train_brm: false,
            train_tmm: false,
            infer_brm: false,
            infer_tmm: false,
        }
    }
}

/// Everything `edit_image` returns, for inspection and debug grids.
pub struct EditBundle {
    pub o_t: Image,
    pub o_s: Image,
    pub guide_s: Mask,
    pub guide_t: Mask,
    pub o_hat_t: Image,
    pub o_hat_s: Image,
    pub i_t: Image,
    pub filtered_style: Image,
}

/// Stacks CHW images into a `[B, C, H, W]` tensor.
pub fn image_to_tensor_batch<S: Scalar>(images: &[Image]) -> Tensor<S> {
    assert!(!images.is_empty());
    let (c, h, w) = (
        images[0].shape()[0],
        images[0].shape()[1],
        images[0].shape()[2],
    );
    let mut arr = ndarray::ArrayD::<S>::zeros(ndarray::IxDyn(&[images.len(), c, h, w]));
    for (bi, img) in images.iter().enumerate() {
        assert_eq!(img.shape(), images[0].shape(), "ragged batch");
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    arr[[bi, ci, y, x]] = S::from_fp(img[[ci, y, x]] as f64);
                }
            }
        }
    }
    Tensor::constant(arr)
}

pub fn image_to_tensor<S: Scalar>(img: &Image) -> Tensor<S> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut arr = ndarray::ArrayD::<S>::zeros(ndarray::IxDyn(&[1, c, h, w]));
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                arr[[0, ci, y, x]] = S::from_fp(img[[ci, y, x]] as f64);
            }
        }
    }
    Tensor::constant(arr)
}

pub fn tensor_to_image<S: Scalar>(t: &Tensor<S>, row: usize) -> Image {
    let (c, h, w) = (t.shape()[1], t.shape()[2], t.shape()[3]);
    ndarray::Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        t.value()[[row, ci, y, x]].fp() as f32
    })
}

pub fn tensor_to_mask<S: Scalar>(t: &Tensor<S>, row: usize) -> Mask {
    let (h, w) = (t.shape()[2], t.shape()[3]);
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| t.value()[[row, 0, y, x]].fp() as f32)
}

fn binarize<S: Scalar>(guide: &Tensor<S>) -> Tensor<S> {
    Tensor::constant(
        guide
            .value()
            .mapv(|v| if v.fp() >= 0.5 { S::one() } else { S::zero() }),
    )
}

/// Full inference pipeline on one image: reconstruct the background, blend
/// behind the predicted source-stroke mask, render and warp the target
/// text, fuse, and blend the edited strokes over the reconstructed
/// background. Deterministic (no augmentation).
#[allow(clippy::too_many_arguments)]
pub fn edit_image<S: Scalar>(
    i_s: &Image,
    target_text: &str,
    brm: &Brm,
    tmm: &Tmm,
    gen_graph: &Graph<'_, S>,
    regs: &Registries,
    gen_config: &GenConfig,
    slm: SlmPlacement,
    binarize_guide: bool,
) -> Result<EditBundle> {
    let i_t_img = render_canonical(target_text, regs, gen_config)?;
    let x_s = image_to_tensor::<S>(i_s);
    let x_t = image_to_tensor::<S>(&i_t_img);

    let brm_out = brm.forward(gen_graph, &x_s);
    let guide_s_blend = if binarize_guide {
        binarize(&brm_out.guide_s)
    } else {
        brm_out.guide_s.clone()
    };
    let o_s = if slm.infer_brm {
        slm_blend(&brm_out.o_hat_s, &guide_s_blend, &x_s)
    } else {
        brm_out.o_hat_s.clone()
    };

    let tmm_out = tmm.forward(
        gen_graph,
        &x_s,
        &x_t,
        &brm_out,
        &brm_out.guide_s.detach(),
        true, // block gradients (irrelevant at inference, kept for parity)
        None, // no augmentation in eval mode
    )?;
    let guide_t_blend = if binarize_guide {
        binarize(&tmm_out.guide_t)
    } else {
        tmm_out.guide_t.clone()
    };
    let o_t = if slm.infer_tmm {
        slm_blend(&tmm_out.o_hat_t, &guide_t_blend, &o_s)
    } else {
        tmm_out.o_hat_t.clone()
    };

    Ok(EditBundle {
        o_t: tensor_to_image(&o_t, 0),
        o_s: tensor_to_image(&o_s, 0),
        guide_s: tensor_to_mask(&brm_out.guide_s, 0),
        guide_t: tensor_to_mask(&tmm_out.guide_t, 0),
        o_hat_t: tensor_to_image(&tmm_out.o_hat_t, 0),
        o_hat_s: tensor_to_image(&brm_out.o_hat_s, 0),
        i_t: i_t_img,
        filtered_style: tensor_to_image(&tmm_out.filtered_style, 0),
    })
}
