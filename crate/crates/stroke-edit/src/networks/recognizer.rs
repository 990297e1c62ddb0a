//! Attention-based text recognizer: optional TPS rectification, a small
//! convolutional stem pooled to a horizontal sequence, a BiLSTM encoder and
//! an attention LSTM decoder emitting `max_text_len` steps of class logits.
//!
//! Pre-trained on generator output, then frozen: during editor training it
//! serves as the recognition-loss provider, the perceptual feature
//! extractor, and the desk-scale FID backend.

use ndarray::{ArrayD, IxDyn};
use rand_chacha::ChaCha12Rng;

use crate::autograd::conv::{adaptive_avg_pool, mean_over_height};
use crate::autograd::{Scalar, Tensor};
use crate::error::Result;
use crate::geometry::{tps_warp, ControlPointSet};
use crate::nn::{Activation, ConvBlock, Graph, Linear, LstmCell, ParamId, ParamStore};
use crate::util::Image;
use crate::vocab::Vocab;

use super::{image_to_tensor, ModelConfig};

const RECTIFIER_K: usize = 3;

pub struct Recognizer {
    rect_convs: Option<Vec<ConvBlock>>,
    rect_fc1: Option<Linear>,
    rect_fc2: Option<Linear>,
    stem: Vec<ConvBlock>,
    lstm_fw: LstmCell,
    lstm_bw: LstmCell,
    w_enc: Linear,
    w_dec: Linear,
    attn_v: Linear,
    embedding: ParamId,
    decoder: LstmCell,
    out: Linear,
    pub vocab: Vocab,
    pub n_steps: usize,
    hidden: usize,
    attn: usize,
    canonical: ControlPointSet,
}

pub struct RecognizerOutput<S: Scalar> {
    /// `[B, N, classes]` per-step logits.
    pub logits: Tensor<S>,
}

fn atanh_flat<S: Scalar>(points: &ControlPointSet) -> ArrayD<S> {
    points.to_flat::<S>().mapv(|v| {
        let x = v.fp().clamp(-0.999, 0.999);
        S::from_fp(0.5 * ((1.0 + x) / (1.0 - x)).ln())
    })
}

impl Recognizer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        config: &ModelConfig,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let vocab = config.vocab_obj();
        let classes = vocab.classes();
        let hidden = config.rec_hidden;
        let attn = config.rec_attn;

        let (rect_convs, rect_fc1, rect_fc2) = if config.rec_use_rectifier {
            let convs = vec![
                ConvBlock::new(store, "rec.rect0", 3, 8, (3, 3), (2, 2), (1, 1), Activation::Relu, rng),
                ConvBlock::new(store, "rec.rect1", 8, 16, (3, 3), (2, 2), (1, 1), Activation::Relu, rng),
            ];
            let fc1 = Linear::new(store, "rec.rect_fc1", 16 * 2 * 4, 32, rng);
            let canonical = ControlPointSet::canonical(RECTIFIER_K).expect("K >= 2");
            let fc2 =
                Linear::new_zero_with_bias(store, "rec.rect_fc2", 32, atanh_flat::<S>(&canonical));
            (Some(convs), Some(fc1), Some(fc2))
        } else {
            (None, None, None)
        };

        let stem = vec![
            ConvBlock::new(store, "rec.stem0", 3, 16, (3, 3), (1, 1), (1, 1), Activation::Relu, rng),
            ConvBlock::new(store, "rec.stem1", 16, 24, (3, 3), (2, 2), (1, 1), Activation::Relu, rng),
            ConvBlock::new(store, "rec.stem2", 24, 32, (3, 3), (2, 2), (1, 1), Activation::Relu, rng),
            ConvBlock::new(store, "rec.stem3", 32, hidden, (3, 3), (2, 1), (1, 1), Activation::Relu, rng),
        ];
        let lstm_fw = LstmCell::new(store, "rec.lstm_fw", hidden, hidden, rng);
        let lstm_bw = LstmCell::new(store, "rec.lstm_bw", hidden, hidden, rng);
        let enc_dim = 2 * hidden;
        let w_enc = Linear::new(store, "rec.attn_enc", enc_dim, attn, rng);
        let w_dec = Linear::new(store, "rec.attn_dec", enc_dim, attn, rng);
        let attn_v = Linear::new(store, "rec.attn_v", attn, 1, rng);
        // classes + 1 rows: the trailing row embeds the start token
        let embedding = store.add("rec.embedding", {
            use rand_distr::{Distribution, Normal};
            let dist = Normal::new(0.0, 0.1).unwrap();
            ArrayD::from_shape_fn(IxDyn(&[classes + 1, config.rec_embed]), |_| {
                S::from_fp(dist.sample(rng))
            })
        });
        let decoder = LstmCell::new(store, "rec.decoder", config.rec_embed + enc_dim, enc_dim, rng);
        let out = Linear::new(store, "rec.out", 2 * enc_dim, classes, rng);
        Recognizer {
            rect_convs,
            rect_fc1,
            rect_fc2,
            stem,
            lstm_fw,
            lstm_bw,
            w_enc,
            w_dec,
            attn_v,
            embedding,
            decoder,
            out,
            vocab,
            n_steps: config.max_text_len,
            hidden,
            attn,
            canonical: ControlPointSet::canonical(RECTIFIER_K).expect("K >= 2"),
        }
    }

    fn rectify<S: Scalar>(&self, g: &Graph<'_, S>, images: &Tensor<S>) -> Result<Tensor<S>> {
        let (Some(convs), Some(fc1), Some(fc2)) = (&self.rect_convs, &self.rect_fc1, &self.rect_fc2)
        else {
            return Ok(images.clone());
        };
        let b = images.shape()[0];
        let mut y = images.clone();
        for c in convs {
            y = c.forward(g, &y);
        }
        let pooled = adaptive_avg_pool(&y, (2, 4));
        let flat = pooled.reshape(&[b, 16 * 2 * 4]);
        let pts = fc2.forward(g, &fc1.forward(g, &flat).relu()).tanh();
        let pts = pts.reshape(&[b, 2 * RECTIFIER_K, 2]);
        let canonical = Tensor::concat(0, &vec![self.canonical.to_tensor::<S>(); b]);
        // resample so the predicted text contour lands on the canonical frame
        tps_warp(images, &pts, &canonical)
    }

    /// BiLSTM-encoded sequence `[B, T, 2 hidden]`.
    fn encode<S: Scalar>(&self, g: &Graph<'_, S>, images: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.rectify(g, images)?;
        let mut y = x;
        for c in &self.stem {
            y = c.forward(g, &y);
        }
        let seq = mean_over_height(&y); // [B, C, T]
        let b = seq.shape()[0];
        let t = seq.shape()[2];
        let steps: Vec<Tensor<S>> = (0..t)
            .map(|i| seq.narrow(2, i, i + 1).reshape(&[b, self.hidden]))
            .collect();
        let (mut h, mut c) = self.lstm_fw.zero_state::<S>(b);
        let mut fw = Vec::with_capacity(t);
        for s in &steps {
            let (nh, nc) = self.lstm_fw.step(g, s, &h, &c);
            h = nh;
            c = nc;
            fw.push(h.clone());
        }
        let (mut h, mut c) = self.lstm_bw.zero_state::<S>(b);
        let mut bw = vec![None; t];
        for (i, s) in steps.iter().enumerate().rev() {
            let (nh, nc) = self.lstm_bw.step(g, s, &h, &c);
            h = nh;
            c = nc;
            bw[i] = Some(h.clone());
        }
        let enc: Vec<Tensor<S>> = (0..t)
            .map(|i| {
                Tensor::concat(1, &[fw[i].clone(), bw[i].take().expect("filled")])
                    .reshape(&[b, 1, 2 * self.hidden])
            })
            .collect();
        Ok(Tensor::concat(1, &enc))
    }

    fn embed_tokens<S: Scalar>(&self, g: &Graph<'_, S>, tokens: &[usize]) -> Tensor<S> {
        let rows = self.vocab.classes() + 1;
        let b = tokens.len();
        let mut onehot = ArrayD::<S>::zeros(IxDyn(&[b, rows]));
        for (bi, &tk) in tokens.iter().enumerate() {
            onehot[[bi, tk]] = S::one();
        }
        Tensor::constant(onehot).matmul(&g.leaf(self.embedding))
    }

    /// Runs the attention decoder for `n_steps`. With `teacher` token rows
    /// (length `n_steps`, EOS-padded) the ground truth feeds each next step;
    /// otherwise the argmax of the previous step does (greedy decoding).
    fn decode_steps<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        enc: &Tensor<S>,
        teacher: Option<&[Vec<usize>]>,
    ) -> Tensor<S> {
        let (b, t, ed) = (enc.shape()[0], enc.shape()[1], enc.shape()[2]);
        let classes = self.vocab.classes();
        let start = classes;
        let enc_proj = self
            .w_enc
            .forward(g, &enc.reshape(&[b * t, ed]))
            .reshape(&[b, t, self.attn]);
        let (mut h, mut c) = self.decoder.zero_state::<S>(b);
        let mut prev: Vec<usize> = vec![start; b];
        let mut step_logits = Vec::with_capacity(self.n_steps);
        for step in 0..self.n_steps {
            let dec_proj = self.w_dec.forward(g, &h).reshape(&[b, 1, self.attn]);
            let scores = self
                .attn_v
                .forward(g, &enc_proj.add(&dec_proj).tanh().reshape(&[b * t, self.attn]))
                .reshape(&[b, t]);
            let alpha = scores.softmax(1).reshape(&[b, t, 1]);
            let ctx = alpha.mul(enc).sum_axis_keep(1).reshape(&[b, ed]);
            let emb = self.embed_tokens(g, &prev);
            let (nh, nc) = self
                .decoder
                .step(g, &Tensor::concat(1, &[emb, ctx.clone()]), &h, &c);
            h = nh;
            c = nc;
            let logits = self.out.forward(g, &Tensor::concat(1, &[h.clone(), ctx]));
            prev = match teacher {
                Some(rows) => rows.iter().map(|ids| ids[step]).collect(),
                None => (0..b)
                    .map(|bi| {
                        let mut best = 0;
                        let mut best_v = f64::NEG_INFINITY;
                        for k in 0..classes {
                            let v = logits.value()[[bi, k]].fp();
                            if v > best_v {
                                best_v = v;
                                best = k;
                            }
                        }
                        best
                    })
                    .collect(),
            };
            step_logits.push(logits.reshape(&[b, 1, classes]));
        }
        Tensor::concat(1, &step_logits)
    }

    /// Per-step class logits. `teacher_texts` enables teacher forcing (the
    /// mode used whenever a loss is computed); without it decoding is
    /// greedy.
    pub fn forward<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        images: &Tensor<S>,
        teacher_texts: Option<&[String]>,
    ) -> Result<RecognizerOutput<S>> {
        let enc = self.encode(g, images)?;
        let teacher: Option<Vec<Vec<usize>>> = match teacher_texts {
            Some(texts) => Some(
                texts
                    .iter()
                    .map(|t| self.vocab.encode_padded(t, self.n_steps))
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        let logits = self.decode_steps(g, &enc, teacher.as_deref());
        Ok(RecognizerOutput { logits })
    }

    /// Greedy decode to strings (stops at the first EOS per row).
    pub fn greedy_decode<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        images: &Tensor<S>,
    ) -> Result<Vec<String>> {
        let out = self.forward(g, images, None)?;
        let classes = self.vocab.classes();
        let b = out.logits.shape()[0];
        Ok((0..b)
            .map(|bi| {
                let ids: Vec<usize> = (0..self.n_steps)
                    .map(|si| {
                        let mut best = 0;
                        let mut best_v = f64::NEG_INFINITY;
                        for k in 0..classes {
                            let v = out.logits.value()[[bi, si, k]].fp();
                            if v > best_v {
                                best_v = v;
                                best = k;
                            }
                        }
                        best
                    })
                    .collect();
                self.vocab.decode(&ids)
            })
            .collect())
    }

    /// Per-step probability distributions (softmax over classes).
    pub fn probabilities<S: Scalar>(
        &self,
        g: &Graph<'_, S>,
        images: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        Ok(self.forward(g, images, None)?.logits.softmax(2))
    }
}

/// Frozen activations at a shallow and a deep stem layer; the desk-scale
/// stand-in for the usual pretrained-VGG features. The rectifier is skipped
/// so features stay aligned with the image.
pub fn perceptual_features<S: Scalar>(
    rec: &Recognizer,
    g: &Graph<'_, S>,
    images: &Tensor<S>,
) -> Vec<Tensor<S>> {
    let shallow = rec.stem[0].forward(g, images);
    let mut deep = shallow.clone();
    for c in &rec.stem[1..] {
        deep = c.forward(g, &deep);
    }
    vec![shallow, deep]
}

/// Pooled deep stem features, one vector per image; the desk-scale FID
/// backend.
pub fn recognizer_fid_features(
    rec: &Recognizer,
    store: &ParamStore<crate::Elem>,
    images: &[Image],
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        let batch = Tensor::concat(
            0,
            &chunk
                .iter()
                .map(image_to_tensor::<crate::Elem>)
                .collect::<Vec<_>>(),
        );
        let g = Graph::new(store, false);
        let feats = perceptual_features(rec, &g, &batch);
        let deep = &feats[1];
        let (b, c) = (deep.shape()[0], deep.shape()[1]);
        let pooled = adaptive_avg_pool(deep, (1, 1));
        for bi in 0..b {
            out.push((0..c).map(|ci| pooled.value()[[bi, ci, 0, 0]].fp()).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;
    use rand::Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            image_w: 48,
            image_h: 16,
            vocab: "abc".into(),
            max_text_len: 6,
            rec_hidden: 12,
            rec_embed: 8,
            rec_attn: 10,
            rec_use_rectifier: true,
            ..Default::default()
        }
    }

    fn rand_images(b: usize, seed: u64) -> Tensor<f64> {
        let mut rng = derive_rng(seed, &["rec-test"]);
        Tensor::constant(ArrayD::from_shape_fn(IxDyn(&[b, 3, 16, 48]), |_| {
            rng.gen_range(0.0..1.0f64)
        }))
    }

    #[test]
    fn logits_shape_and_probability_normalization() {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(1, &["rec-build"]);
        let rec = Recognizer::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, false);
        let images = rand_images(2, 2);
        let out = rec.forward(&g, &images, None).unwrap();
        assert_eq!(out.logits.shape(), &[2, 6, 4]);
        let probs = rec.probabilities(&g, &images).unwrap();
        for bi in 0..2 {
            for si in 0..6 {
                let s: f64 = (0..4).map(|k| probs.value()[[bi, si, k]]).sum();
                assert!((s - 1.0).abs() < 1e-5, "row sum {s}");
            }
        }
    }

    #[test]
    fn teacher_forcing_uses_given_tokens_and_is_trainable() {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(3, &["rec-build"]);
        let rec = Recognizer::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, true);
        let images = rand_images(2, 4);
        let texts = vec!["ab".to_string(), "cab".to_string()];
        let out = rec.forward(&g, &images, Some(&texts)).unwrap();
        let loss = crate::losses::recognition_loss(&out.logits, &texts, &rec.vocab, 6).unwrap();
        loss.backward();
        let with_grad = g.grads().len();
        assert!(
            with_grad > store.len() / 2,
            "most recognizer parameters should train ({with_grad}/{})",
            store.len()
        );
    }

    #[test]
    fn greedy_decode_returns_vocab_strings() {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(5, &["rec-build"]);
        let rec = Recognizer::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, false);
        let decoded = rec.greedy_decode(&g, &rand_images(3, 6)).unwrap();
        assert_eq!(decoded.len(), 3);
        for d in decoded {
            assert!(d.chars().all(|c| "abc".contains(c)), "bad decode {d:?}");
            assert!(d.len() <= 6);
        }
    }

    #[test]
    fn perceptual_features_are_two_levels_shallow_larger() {
        let config = small_config();
        let mut store = ParamStore::<f64>::new();
        let mut rng = derive_rng(7, &["rec-build"]);
        let rec = Recognizer::new(&mut store, &config, &mut rng);
        let g = Graph::new(&store, false);
        let images = rand_images(1, 8);
        let feats = perceptual_features(&rec, &g, &images);
        assert_eq!(feats.len(), 2);
        let shallow = feats[0].shape()[2] * feats[0].shape()[3];
        let deep = feats[1].shape()[2] * feats[1].shape()[3];
        assert!(shallow > deep);
        // frozen + deterministic
        let again = perceptual_features(&rec, &Graph::new(&store, false), &images);
        assert_eq!(feats[0].value(), again[0].value());
    }
}
