//! Conditional patch discriminator: candidate and condition images are
//! concatenated channelwise and classified by a 4-layer stride-2 stack into
//! an h/16 x w/16 realness logit map.

use rand_chacha::ChaCha12Rng;

use crate::autograd::{Scalar, Tensor};
use crate::nn::{Activation, Conv2d, ConvBlock, Graph, ParamStore};

pub struct PatchDiscriminator {
    layers: Vec<ConvBlock>,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        base: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let chans = [6, base, 2 * base, 4 * base, 8 * base];
        let layers = (0..4)
            .map(|i| {
                // first layer skips normalization, the patchGAN convention
                if i == 0 {
                    ConvBlock::new_plain(
                        store,
                        &format!("{name}.l{i}"),
                        chans[i],
                        chans[i + 1],
                        (4, 4),
                        (2, 2),
                        (1, 1),
                        Activation::LeakyRelu,
                        rng,
                    )
                } else {
                    ConvBlock::new(
                        store,
                        &format!("{name}.l{i}"),
                        chans[i],
                        chans[i + 1],
                        (4, 4),
                        (2, 2),
                        (1, 1),
                        Activation::LeakyRelu,
                        rng,
                    )
                }
            })
            .collect();
        let head = Conv2d::new(store, &format!("{name}.head"), 8 * base, 1, (3, 3), (1, 1), (1, 1), rng);
        PatchDiscriminator { layers, head }
    }

    /// `candidate` and `condition` are `[B, 3, H, W]`; returns logits
    /// `[B, 1, H/16, W/16]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        candidate: &Tensor<S>,
        condition: &Tensor<S>,
    ) -> Tensor<S> {
        assert_eq!(
            candidate.shape(),
            condition.shape(),
            "discriminator inputs must match"
        );
        let mut y = Tensor::concat(1, &[candidate.clone(), condition.clone()]);
        for l in &self.layers {
            y = l.forward(g, &y);
        }
        self.head.forward(g, &y)
    }
}
