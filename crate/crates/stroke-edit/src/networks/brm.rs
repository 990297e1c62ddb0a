//! Background reconstruction: encoder (three down-sampling layers + four
//! residual blocks), pyramid pooling over the bottleneck, and a decoder
//! producing the partially reconstructed background, the source-stroke
//! guidance map, and the per-level features the modification branch fuses.

use rand_chacha::ChaCha12Rng;

use crate::autograd::conv::{adaptive_avg_pool, resize_bilinear, upsample_nearest_2x};
use crate::autograd::{Scalar, Tensor};
use crate::nn::{Activation, Conv2d, ConvBlock, Graph, ParamStore, ResBlock};

use super::ModelConfig;

pub(crate) struct Encoder {
    downs: Vec<ConvBlock>,
    res: Vec<ResBlock>,
}

impl Encoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        base: usize,
        n_res: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let chans = [cin, base, 2 * base, 4 * base];
        let downs = (0..3)
            .map(|i| {
                ConvBlock::new(
                    store,
                    &format!("{name}.down{i}"),
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
        let res = (0..n_res)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), 4 * base, rng))
            .collect();
        Encoder { downs, res }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        let mut y = x.clone();
        for d in &self.downs {
            y = d.forward(g, &y);
        }
        for r in &self.res {
            y = r.forward(g, &y);
        }
        y
    }
}

/// Pyramid pooling: average the bottleneck at several bin counts, project,
/// upsample back and fuse. Bin counts clamp to the map size, so small desk
/// resolutions keep working.
pub(crate) struct PspModule {
    branches: Vec<ConvBlock>,
    fuse: ConvBlock,
    sizes: Vec<usize>,
}

impl PspModule {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        sizes: &[usize],
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let proj = (channels / sizes.len().max(1)).max(1);
        // pooled maps are tiny (down to 1x1); per-plane normalization is
        // degenerate there, so branch projections are norm-free
        let branches = sizes
            .iter()
            .enumerate()
            .map(|(i, _)| {
                ConvBlock::new_plain(
                    store,
                    &format!("{name}.branch{i}"),
                    channels,
                    proj,
                    (1, 1),
                    (1, 1),
                    (0, 0),
                    Activation::Relu,
                    rng,
                )
            })
            .collect();
        let fuse = ConvBlock::new(
            store,
            &format!("{name}.fuse"),
            channels + proj * sizes.len(),
            channels,
            (3, 3),
            (1, 1),
            (1, 1),
            Activation::Relu,
            rng,
        );
        PspModule {
            branches,
            fuse,
            sizes: sizes.to_vec(),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let mut parts = vec![x.clone()];
        for (branch, &size) in self.branches.iter().zip(&self.sizes) {
            let pooled = adaptive_avg_pool(x, (size.min(h), size.min(w)));
            let proj = branch.forward(g, &pooled);
            parts.push(resize_bilinear(&proj, (h, w)));
        }
        self.fuse.forward(g, &Tensor::concat(1, &parts))
    }
}

/// One decoder level: 2x nearest upsample then a conv block.
pub(crate) struct UpBlock {
    conv: ConvBlock,
}

impl UpBlock {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        UpBlock {
            conv: ConvBlock::new(
                store,
                name,
                cin,
                cout,
                (3, 3),
                (1, 1),
                (1, 1),
                Activation::Relu,
                rng,
            ),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, x: &Tensor<S>) -> Tensor<S> {
        self.conv.forward(g, &upsample_nearest_2x(x))
    }
}

pub struct BrmOutput<S: Scalar> {
    /// Partially reconstructed background (sigmoid head).
    pub o_hat_s: Tensor<S>,
    /// Predicted source-stroke guidance map in (0, 1).
    pub guide_s: Tensor<S>,
    /// Decoder features in decoding order (spatial size doubles per level);
    /// the modification branch fuses these one-to-one.
    pub skip_feats: Vec<Tensor<S>>,
}

pub struct Brm {
    encoder: Encoder,
    psp: PspModule,
    ups: Vec<UpBlock>,
    head_image: Conv2d,
    head_guide: Conv2d,
}

impl Brm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        config: &ModelConfig,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let base = config.base_channels;
        let encoder = Encoder::new(store, "brm.enc", 3, base, config.n_resblocks, rng);
        let psp = PspModule::new(store, "brm.psp", 4 * base, &config.psp_pool_sizes, rng);
        let ups = vec![
            UpBlock::new(store, "brm.up0", 4 * base, 2 * base, rng),
            UpBlock::new(store, "brm.up1", 2 * base, base, rng),
            UpBlock::new(store, "brm.up2", base, base, rng),
        ];
        let head_image = Conv2d::new(store, "brm.head_image", base, 3, (3, 3), (1, 1), (1, 1), rng);
        let head_guide = Conv2d::new(store, "brm.head_guide", base, 1, (3, 3), (1, 1), (1, 1), rng);
        Brm {
            encoder,
            psp,
            ups,
            head_image,
            head_guide,
        }
    }

    /// Weight tensor of the guidance head (used by masking audits).
    pub fn guide_head_weight(&self) -> crate::nn::ParamId {
        self.head_guide.w
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<'_, S>, i_s: &Tensor<S>) -> BrmOutput<S> {
        assert_eq!(
            (i_s.shape()[2] % 8, i_s.shape()[3] % 8),
            (0, 0),
            "input size must be divisible by 8"
        );
        let bottleneck = self.encoder.forward(g, i_s);
        let enhanced = self.psp.forward(g, &bottleneck);
        let mut feats = Vec::with_capacity(3);
        let mut y = enhanced;
        for up in &self.ups {
            y = up.forward(g, &y);
            feats.push(y.clone());
        }
        let o_hat_s = self.head_image.forward(g, &y).sigmoid();
        let guide_s = self.head_guide.forward(g, &y).sigmoid();
        BrmOutput {
            o_hat_s,
            guide_s,
            skip_feats: feats,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};

    fn small_config() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            image_w: 48,
            image_h: 16,
            ..Default::default()
        }
    }

    #[test]
    fn output_shapes_and_skip_levels() {
        let config = small_config();
        let mut store = ParamStore::<f32>::new();
        let mut rng = derive_rng(1, &["brm-test"]);
        let brm = Brm::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, true);
        let x = Tensor::constant(ArrayD::zeros(IxDyn(&[2, 3, 16, 48])));
        let out = brm.forward(&g, &x);
        assert_eq!(out.o_hat_s.shape(), &[2, 3, 16, 48]);
        assert_eq!(out.guide_s.shape(), &[2, 1, 16, 48]);
        assert_eq!(out.skip_feats.len(), 3);
        // spatial size doubles per decoding level (halves in reverse)
        for (i, f) in out.skip_feats.iter().enumerate() {
            let scale = 1 << (2 - i);
            assert_eq!(f.shape()[2], 16 / scale);
            assert_eq!(f.shape()[3], 48 / scale);
        }
        for v in out.guide_s.value().iter() {
            assert!(*v > 0.0 && *v < 1.0, "sigmoid output out of (0,1)");
        }
    }

    #[test]
    fn forward_is_deterministic_for_fixed_seed() {
        let config = small_config();
        let build = || {
            let mut store = ParamStore::<f32>::new();
            let mut rng = derive_rng(7, &["brm-test"]);
            let brm = Brm::new(&mut store, &config, &mut rng);
            (store, brm)
        };
        let (s1, b1) = build();
        let (s2, b2) = build();
        let mut xr = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let x = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[1, 3, 16, 48]), |_| {
            xr.gen_range(0.0..1.0f32)
        }));
        let o1 = b1.forward(&Graph::new(&s1, false), &x);
        let o2 = b2.forward(&Graph::new(&s2, false), &x);
        assert_eq!(o1.o_hat_s.value(), o2.o_hat_s.value());
        assert_eq!(o1.guide_s.value(), o2.guide_s.value());
    }

    #[test]
    fn every_parameter_gets_gradient_from_l2_on_o_hat_s() {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(2, &["brm-test"]);
        let brm = Brm::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, true);
        let mut xr = rand_chacha::ChaCha12Rng::seed_from_u64(4);
        let x = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[1, 3, 16, 48]), |_| {
            xr.gen_range(0.0..1.0f64)
        }));
        let target = Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[1, 3, 16, 48]), |_| {
            xr.gen_range(0.0..1.0f64)
        }));
        let out = brm.forward(&g, &x);
        // both heads participate so the guide head is audited too
        let loss = out
            .o_hat_s
            .sub(&target)
            .sqr()
            .mean()
            .add(&out.guide_s.mean().scale(0.1));
        loss.backward();
        let grads = g.grads();
        assert_eq!(
            grads.len(),
            store.len(),
            "every BRM parameter should receive gradient"
        );
        let nonzero = grads
            .iter()
            .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
            .count();
        assert_eq!(nonzero, store.len(), "no parameter gradient may be all-zero");
    }
}
