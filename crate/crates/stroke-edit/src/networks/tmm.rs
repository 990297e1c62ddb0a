//! Text modification: control-point prediction, TPS warp of the canonical
//! target render, background filtering + style augmentation of the source,
//! twin encoders, and a decoder fused with (gradient-severed) background
//! features.

use rand_chacha::ChaCha12Rng;

use crate::autograd::conv::adaptive_avg_pool;
use crate::autograd::{Scalar, Tensor};
use crate::error::Result;
use crate::geometry::{background_filter, style_augment_with, tps_warp, AugmentParams, ControlPointSet};
use crate::nn::{Activation, Conv2d, ConvBlock, Graph, Linear, ParamStore, ResBlock};

use super::brm::{BrmOutput, Encoder, UpBlock};
use super::ModelConfig;

/// Convolutional feature extractor + two FC layers regressing 2K contour
/// points through tanh. The final layer starts at zero weights with the
/// bias set so the initial prediction is exactly the canonical layout.
pub struct ControlPointPredictor {
    convs: Vec<ConvBlock>,
    fc1: Linear,
    fc2: Linear,
    k: usize,
}

const CPP_POOL: (usize, usize) = (2, 6);

impl ControlPointPredictor {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        config: &ModelConfig,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let base = config.base_channels;
        let chans = [3, base, 2 * base, 4 * base];
        let convs = (0..3)
            .map(|i| {
                ConvBlock::new(
                    store,
                    &format!("{name}.conv{i}"),
                    chans[i],
                    chans[i + 1],
                    (3, 3),
                    (2, 2),
                    (1, 1),
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        let feat = 4 * base * CPP_POOL.0 * CPP_POOL.1;
        let hidden = 64;
        let fc1 = Linear::new(store, &format!("{name}.fc1"), feat, hidden, rng);
        let canonical = ControlPointSet::canonical(config.k).expect("K >= 2");
        // atanh of the canonical coordinates so tanh(bias) reproduces them
        let bias = canonical.to_flat::<S>().mapv(|v| {
            let x = v.fp().clamp(-0.999, 0.999);
            S::from_fp(0.5 * ((1.0 + x) / (1.0 - x)).ln())
        });
        let fc2 = Linear::new_zero_with_bias(store, &format!("{name}.fc2"), hidden, bias);
        ControlPointPredictor {
            convs,
            fc1,
            fc2,
            k: config.k,
        }
    }

    /// Predicted points `[B, 2K, 2]` with coordinates in (-1, 1).
    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, i_s: &Tensor<S>) -> Tensor<S> {
        let b = i_s.shape()[0];
        let mut y = i_s.clone();
        for c in &self.convs {
            y = c.forward(g, &y);
        }
        let pooled = adaptive_avg_pool(&y, CPP_POOL);
        let flat = pooled.reshape(&[b, pooled.len() / b]);
        let hidden = self.fc1.forward(g, &flat).relu();
        let out = self.fc2.forward(g, &hidden).tanh();
        out.reshape(&[b, 2 * self.k, 2])
    }
}

pub struct TmmOutput<S: Scalar> {
    /// Feature-level fused edited image (sigmoid head), pre-blend.
    pub o_hat_t: Tensor<S>,
    /// Predicted target-stroke guidance map in (0, 1).
    pub guide_t: Tensor<S>,
    /// Predicted control points `[B, 2K, 2]`.
    pub control_points: Tensor<S>,
    /// The background-filtered (and possibly augmented) style input, kept
    /// for debug grids.
    pub filtered_style: Tensor<S>,
    /// The warped canonical target render.
    pub warped_target: Tensor<S>,
}

pub struct Tmm {
    cpp: ControlPointPredictor,
    enc_target: Encoder,
    enc_style: Encoder,
    merge: ConvBlock,
    res: Vec<ResBlock>,
    ups: Vec<UpBlock>,
    fuses: Vec<ConvBlock>,
    head_image: Conv2d,
    head_guide: Conv2d,
    canonical: ControlPointSet,
}

impl Tmm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        config: &ModelConfig,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let base = config.base_channels;
        let cpp = ControlPointPredictor::new(store, "tmm.cpp", config, rng);
        let enc_target = Encoder::new(store, "tmm.enc_target", 3, base, 0, rng);
        let enc_style = Encoder::new(store, "tmm.enc_style", 3, base, 0, rng);
        let merge = ConvBlock::new(
            store,
            "tmm.merge",
            8 * base,
            4 * base,
            (1, 1),
            (1, 1),
            (0, 0),
            Activation::Relu,
            rng,
        );
        let res = (0..config.n_resblocks)
            .map(|i| ResBlock::new(store, &format!("tmm.res{i}"), 4 * base, rng))
            .collect();
        let ups = vec![
            UpBlock::new(store, "tmm.up0", 4 * base, 2 * base, rng),
            UpBlock::new(store, "tmm.up1", 2 * base, base, rng),
            UpBlock::new(store, "tmm.up2", base, base, rng),
        ];
        // fusion channels follow the BRM skip levels (2b, b, b)
        let skip_chans = [2 * base, base, base];
        let fuses = (0..3)
            .map(|i| {
                ConvBlock::new(
                    store,
                    &format!("tmm.fuse{i}"),
                    skip_chans[i] * 2,
                    skip_chans[i],
                    (1, 1),
                    (1, 1),
                    (0, 0),
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        let head_image = Conv2d::new(store, "tmm.head_image", base, 3, (3, 3), (1, 1), (1, 1), rng);
        let head_guide = Conv2d::new(store, "tmm.head_guide", base, 1, (3, 3), (1, 1), (1, 1), rng);
        Tmm {
            cpp,
            enc_target,
            enc_style,
            merge,
            res,
            ups,
            fuses,
            head_image,
            head_guide,
            canonical: ControlPointSet::canonical(config.k).expect("K >= 2"),
        }
    }

    /// Weight tensor of the guidance head (used by masking audits).
    pub fn guide_head_weight(&self) -> crate::nn::ParamId {
        self.head_guide.w
    }

    pub fn predict_control_points<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        i_s: &Tensor<S>,
    ) -> Tensor<S> {
        self.cpp.forward(g, i_s)
    }

    /// Full modification pass.
    ///
    /// `guide_for_filter` selects what the background filtering sees:
    /// ground-truth masks for synthetic samples, detached predictions for
    /// real ones. With `block_gradient`, values flow forward through the
    /// fused background features but no gradient reaches any BRM parameter.
    /// `augment` carries per-sample augmentation draws (None in eval mode).
    #[allow(clippy::too_many_arguments)]
    pub fn forward<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        i_s: &Tensor<S>,
        i_t: &Tensor<S>,
        brm_out: &BrmOutput<S>,
        guide_for_filter: &Tensor<S>,
        block_gradient: bool,
        augment: Option<&[AugmentParams]>,
    ) -> Result<TmmOutput<S>> {
        assert_eq!(i_s.shape(), i_t.shape(), "source/target size mismatch");
        let b = i_s.shape()[0];

        // (a) control points, (b) warp the canonical render onto them
        let points = self.cpp.forward(g, i_s);
        let canonical = Tensor::concat(0, &vec![self.canonical.to_tensor::<S>(); b]);
        let warped = tps_warp(i_t, &canonical, &points)?;

        // (c) strip the background from the style image, then augment
        let filtered = background_filter(i_s, guide_for_filter);
        let styled = match augment {
            Some(params) => style_augment_with(&filtered, params),
            None => filtered.clone(),
        };

        // (d) encode both, concatenate at the bottleneck
        let f_target = self.enc_target.forward(g, &warped);
        let f_style = self.enc_style.forward(g, &styled);
        let mut y = self.merge.forward(g, &Tensor::concat(1, &[f_target, f_style]));
        for r in &self.res {
            y = r.forward(g, &y);
        }

        // (e) decode, fusing the background features per level
        for ((up, fuse), skip) in self.ups.iter().zip(&self.fuses).zip(&brm_out.skip_feats) {
            y = up.forward(g, &y);
            let skip = if block_gradient { skip.detach() } else { skip.clone() };
            y = fuse.forward(g, &Tensor::concat(1, &[y, skip]));
        }

        let o_hat_t = self.head_image.forward(g, &y).sigmoid();
        let guide_t = self.head_guide.forward(g, &y).sigmoid();
        Ok(TmmOutput {
            o_hat_t,
            guide_t,
            control_points: points,
            filtered_style: styled,
            warped_target: warped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::Brm;
    use crate::util::derive_rng;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            image_w: 48,
            image_h: 16,
            k: 4,
            ..Default::default()
        }
    }

    fn rand_input(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = derive_rng(seed, &["tmm-test-input"]);
        Tensor::constant(ArrayD::from_shape_fn(IxDyn(shape), |_| {
            rng.gen_range(0.0..1.0f64)
        }))
    }

    struct Setup {
        store: ParamStore<f64>,
        brm: Brm,
        tmm: Tmm,
        n_brm_params: usize,
    }

    fn setup() -> Setup {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(5, &["tmm-test"]);
        let brm = Brm::new(&mut store, &config, &mut rng);
        let n_brm_params = store.len();
        let tmm = Tmm::new(&mut store, &config, &mut rng);
        Setup {
            store,
            brm,
            tmm,
            n_brm_params,
        }
    }

    #[test]
    fn initial_control_points_equal_canonical_layout() {
        let s = setup();
        let g = Graph::new(&s.store, false);
        let x = rand_input(&[2, 3, 16, 48], 1);
        let pts = s.tmm.predict_control_points(&g, &x);
        assert_eq!(pts.shape(), &[2, 8, 2]);
        let canonical = ControlPointSet::canonical(4).unwrap();
        for bi in 0..2 {
            for (i, p) in canonical.points().iter().enumerate() {
                assert!((pts.value()[[bi, i, 0]] - p[0]).abs() < 1e-9);
                assert!((pts.value()[[bi, i, 1]] - p[1]).abs() < 1e-9);
            }
        }
        for v in pts.value().iter() {
            assert!(v.abs() <= 1.0, "tanh range violated");
        }
    }

    #[test]
    fn output_shapes_match_input() {
        let s = setup();
        let g = Graph::new(&s.store, false);
        let i_s = rand_input(&[2, 3, 16, 48], 2);
        let i_t = rand_input(&[2, 3, 16, 48], 3);
        let guide = rand_input(&[2, 1, 16, 48], 4);
        let brm_out = s.brm.forward(&g, &i_s);
        let out = s
            .tmm
            .forward(&g, &i_s, &i_t, &brm_out, &guide, true, None)
            .unwrap();
        assert_eq!(out.o_hat_t.shape(), &[2, 3, 16, 48]);
        assert_eq!(out.guide_t.shape(), &[2, 1, 16, 48]);
        for v in out.o_hat_t.value().iter() {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let s = setup();
        let i_s = rand_input(&[1, 3, 16, 48], 5);
        let i_t = rand_input(&[1, 3, 16, 48], 6);
        let guide = rand_input(&[1, 1, 16, 48], 7);
        let run = || {
            let g = Graph::new(&s.store, false);
            let brm_out = s.brm.forward(&g, &i_s);
            s.tmm
                .forward(&g, &i_s, &i_t, &brm_out, &guide, true, None)
                .unwrap()
                .o_hat_t
                .shared_value()
        };
        assert_eq!(*run(), *run());
    }

    #[test]
    fn blocked_gradient_reaches_no_brm_parameter() {
        let s = setup();
        let g = Graph::new(&s.store, true);
        let i_s = rand_input(&[1, 3, 16, 48], 8);
        let i_t = rand_input(&[1, 3, 16, 48], 9);
        let gt = rand_input(&[1, 3, 16, 48], 10);
        let guide_gt = rand_input(&[1, 1, 16, 48], 11);
        let brm_out = s.brm.forward(&g, &i_s);
        let out = s
            .tmm
            .forward(&g, &i_s, &i_t, &brm_out, &guide_gt, true, None)
            .unwrap();
        // a pure TMM loss
        out.o_hat_t.sub(&gt).sqr().mean().backward();
        for (id, slot) in s.store.slots() {
            if id.0 < s.n_brm_params {
                let grad = g.grad_of(id);
                let nonzero = grad
                    .map(|gr| gr.iter().any(|v| *v != 0.0))
                    .unwrap_or(false);
                assert!(
                    !nonzero,
                    "BRM parameter {} received gradient through blocked connections",
                    slot.name
                );
            }
        }
    }

    #[test]
    fn unblocked_gradient_reaches_brm_parameters() {
        let s = setup();
        let g = Graph::new(&s.store, true);
        let i_s = rand_input(&[1, 3, 16, 48], 12);
        let i_t = rand_input(&[1, 3, 16, 48], 13);
        let gt = rand_input(&[1, 3, 16, 48], 14);
        let guide_gt = rand_input(&[1, 1, 16, 48], 15);
        let brm_out = s.brm.forward(&g, &i_s);
        let out = s
            .tmm
            .forward(&g, &i_s, &i_t, &brm_out, &guide_gt, false, None)
            .unwrap();
        out.o_hat_t.sub(&gt).sqr().mean().backward();
        let brm_nonzero = s
            .store
            .slots()
            .filter(|(id, _)| id.0 < s.n_brm_params)
            .filter(|(id, _)| {
                g.grad_of(*id)
                    .map(|gr| gr.iter().any(|v| *v != 0.0))
                    .unwrap_or(false)
            })
            .count();
        assert!(
            brm_nonzero > 0,
            "with block_gradient off, BRM must receive gradient through fusion"
        );
    }

    #[test]
    fn augmentation_params_change_the_output() {
        let s = setup();
        let g = Graph::new(&s.store, false);
        let i_s = rand_input(&[1, 3, 16, 48], 16);
        let i_t = rand_input(&[1, 3, 16, 48], 17);
        let guide = rand_input(&[1, 1, 16, 48], 18);
        let brm_out = s.brm.forward(&g, &i_s);
        let plain = s
            .tmm
            .forward(&g, &i_s, &i_t, &brm_out, &guide, true, None)
            .unwrap();
        let rotated = s
            .tmm
            .forward(
                &g,
                &i_s,
                &i_t,
                &brm_out,
                &guide,
                true,
                Some(&[AugmentParams {
                    angle_deg: 12.0,
                    flip: true,
                }]),
            )
            .unwrap();
        assert_ne!(plain.o_hat_t.value(), rotated.o_hat_t.value());
    }
}
