//! Hybrid batch construction: (batch_size - real_per_batch) synthetic pairs
//! followed by real_per_batch unpaired samples, with per-sample kind
//! implied by position. Real samples self-reconstruct: the target text is
//! the transcript and `i_t` is its canonical render.
//!
//! Index streams are epoch-shuffled deterministically from (seed, epoch),
//! so any iteration's batch is reproducible without carrying RNG state —
//! exhausted streams wrap around with a reshuffle.

use ndarray::{ArrayD, IxDyn};
use rand::seq::SliceRandom;

use crate::datagen::{render_canonical, RealDataset, Registries, SynthDataset};
use crate::error::{Error, Result};
use crate::networks::image_to_tensor_batch;
use crate::autograd::Tensor;
use crate::util::{derive_rng_indexed, Image, Mask};
use crate::Elem;

use super::TrainConfig;

pub struct Batch {
    /// `[B, 3, H, W]`, synthetic rows first.
    pub i_s: Tensor<Elem>,
    /// `[B, 3, H, W]` canonical target-text renders.
    pub i_t: Tensor<Elem>,
    /// `[S, 3, H, W]` ground-truth edited images (synthetic rows).
    pub t_t: Option<Tensor<Elem>>,
    /// `[S, 3, H, W]` ground-truth backgrounds.
    pub t_b: Option<Tensor<Elem>>,
    /// `[S, 1, H, W]` ground-truth stroke masks.
    pub guide_s_gt: Option<Tensor<Elem>>,
    pub guide_t_gt: Option<Tensor<Elem>>,
    /// Target text per row (transcript for real rows).
    pub texts_tgt: Vec<String>,
    /// Source text per row (equals target for real rows).
    pub texts_src: Vec<String>,
    pub n_syn: usize,
    pub n_real: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.n_syn + self.n_real
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The dataset index a given stream position maps to, shuffling once per
/// epoch.
pub(crate) fn stream_index(seed: u64, label: &str, len: usize, counter: u64) -> usize {
    let epoch = counter / len as u64;
    let pos = (counter % len as u64) as usize;
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = derive_rng_indexed(seed, &["shuffle", label], epoch);
    order.shuffle(&mut rng);
    order[pos]
}

fn mask_to_plane(mask: &Mask) -> Image {
    let (h, w) = (mask.shape()[0], mask.shape()[1]);
    ndarray::Array3::from_shape_fn((1, h, w), |(_, y, x)| mask[[y, x]])
}

pub fn build_hybrid_batch(
    syn: &SynthDataset,
    real: Option<&RealDataset>,
    regs: &Registries,
    config: &TrainConfig,
    iteration: u64,
) -> Result<Batch> {
    let n_real = config.real_per_batch;
    let n_syn = config.batch_size - n_real;
    if syn.is_empty() && n_syn > 0 {
        return Err(Error::data(None, "synthetic dataset is empty"));
    }
    if n_real > 0 && real.map(|r| r.is_empty()).unwrap_or(true) {
        return Err(Error::data(
            None,
            "real_per_batch > 0 but no (non-empty) real dataset was provided",
        ));
    }

    let mut i_s_rows: Vec<Image> = Vec::with_capacity(config.batch_size);
    let mut i_t_rows: Vec<Image> = Vec::with_capacity(config.batch_size);
    let mut t_t_rows: Vec<Image> = Vec::with_capacity(n_syn);
    let mut t_b_rows: Vec<Image> = Vec::with_capacity(n_syn);
    let mut gs_rows: Vec<Image> = Vec::with_capacity(n_syn);
    let mut gt_rows: Vec<Image> = Vec::with_capacity(n_syn);
    let mut texts_tgt = Vec::with_capacity(config.batch_size);
    let mut texts_src = Vec::with_capacity(config.batch_size);

    for slot in 0..n_syn {
        let counter = iteration * n_syn as u64 + slot as u64;
        let idx = stream_index(config.seed, "synthetic", syn.len(), counter);
        let s = syn.get(idx)?;
        i_s_rows.push(s.i_s);
        i_t_rows.push(s.i_t);
        t_t_rows.push(s.t_t);
        t_b_rows.push(s.t_b);
        gs_rows.push(mask_to_plane(&s.t_guide_s));
        gt_rows.push(mask_to_plane(&s.t_guide_t));
        texts_tgt.push(s.tgt_text);
        texts_src.push(s.src_text);
    }
    if n_real > 0 {
        let real = real.expect("checked above");
        for slot in 0..n_real {
            let counter = iteration * n_real as u64 + slot as u64;
            let idx = stream_index(config.seed, "real", real.len(), counter);
            let s = real.get(idx)?;
            // self-reconstruction: target text := transcript
            let gen_config = &syn.manifest.config;
            i_t_rows.push(render_canonical(&s.transcript, regs, gen_config)?);
            i_s_rows.push(s.i_s);
            texts_tgt.push(s.transcript.clone());
            texts_src.push(s.transcript);
        }
    }

    Ok(Batch {
        i_s: image_to_tensor_batch(&i_s_rows),
        i_t: image_to_tensor_batch(&i_t_rows),
        t_t: (n_syn > 0).then(|| image_to_tensor_batch(&t_t_rows)),
        t_b: (n_syn > 0).then(|| image_to_tensor_batch(&t_b_rows)),
        guide_s_gt: (n_syn > 0).then(|| image_to_tensor_batch(&gs_rows)),
        guide_t_gt: (n_syn > 0).then(|| image_to_tensor_batch(&gt_rows)),
        texts_tgt,
        texts_src,
        n_syn,
        n_real,
    })
}

/// All-ones guide used when background filtering is ablated off.
pub(crate) fn ones_guide(b: usize, h: usize, w: usize) -> Tensor<Elem> {
    Tensor::constant(ArrayD::from_elem(IxDyn(&[b, 1, h, w]), 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_corpus, CorpusKind, GenConfig};

    fn gen_config(kind: CorpusKind, count: usize, seed: u64) -> GenConfig {
        GenConfig {
            kind,
            count,
            seed,
            image_w: 48,
            image_h: 16,
            n_backgrounds: 4,
            word_len: (3, 4),
            ..Default::default()
        }
    }

    fn train_config() -> TrainConfig {
        TrainConfig {
            batch_size: 6,
            real_per_batch: 2,
            model: crate::networks::ModelConfig {
                base_channels: 4,
                image_w: 48,
                image_h: 16,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn hybrid_batch_has_requested_composition() {
        let sd = tempfile::tempdir().unwrap();
        let rd = tempfile::tempdir().unwrap();
        build_corpus(&gen_config(CorpusKind::Synthetic, 5, 1), sd.path()).unwrap();
        build_corpus(&gen_config(CorpusKind::Real, 3, 2), rd.path()).unwrap();
        let syn = SynthDataset::open(sd.path(), false).unwrap();
        let real = RealDataset::open(rd.path()).unwrap();
        let regs = Registries::open(&syn.manifest.config).unwrap();
        let config = train_config();
        let b = build_hybrid_batch(&syn, Some(&real), &regs, &config, 0).unwrap();
        assert_eq!(b.n_syn, 4);
        assert_eq!(b.n_real, 2);
        assert_eq!(b.i_s.shape(), &[6, 3, 16, 48]);
        assert_eq!(b.i_t.shape(), &[6, 3, 16, 48]);
        assert_eq!(b.t_t.as_ref().unwrap().shape(), &[4, 3, 16, 48]);
        assert_eq!(b.guide_s_gt.as_ref().unwrap().shape(), &[4, 1, 16, 48]);
        // real rows: target text equals the transcript
        assert_eq!(b.texts_tgt[4], b.texts_src[4]);
        // synthetic rows: differs by construction
        assert_ne!(b.texts_tgt[0], b.texts_src[0]);
    }

    #[test]
    fn pure_synthetic_batch_when_real_per_batch_zero() {
        let sd = tempfile::tempdir().unwrap();
        build_corpus(&gen_config(CorpusKind::Synthetic, 4, 3), sd.path()).unwrap();
        let syn = SynthDataset::open(sd.path(), false).unwrap();
        let regs = Registries::open(&syn.manifest.config).unwrap();
        let mut config = train_config();
        config.real_per_batch = 0;
        let b = build_hybrid_batch(&syn, None, &regs, &config, 7).unwrap();
        assert_eq!(b.n_syn, 6);
        assert_eq!(b.n_real, 0);
    }

    #[test]
    fn missing_real_dataset_is_an_error_when_requested() {
        let sd = tempfile::tempdir().unwrap();
        build_corpus(&gen_config(CorpusKind::Synthetic, 4, 3), sd.path()).unwrap();
        let syn = SynthDataset::open(sd.path(), false).unwrap();
        let regs = Registries::open(&syn.manifest.config).unwrap();
        let config = train_config();
        assert!(build_hybrid_batch(&syn, None, &regs, &config, 0).is_err());
    }

    #[test]
    fn streams_wrap_with_reshuffle_and_are_deterministic() {
        // two epochs over 5 elements: both cover all indices, orders differ
        let e0: Vec<usize> = (0..5).map(|p| stream_index(9, "synthetic", 5, p)).collect();
        let e1: Vec<usize> = (5..10).map(|p| stream_index(9, "synthetic", 5, p)).collect();
        let mut s0 = e0.clone();
        let mut s1 = e1.clone();
        s0.sort();
        s1.sort();
        assert_eq!(s0, vec![0, 1, 2, 3, 4]);
        assert_eq!(s1, vec![0, 1, 2, 3, 4]);
        assert_ne!(e0, e1, "epochs should reshuffle");
        // deterministic
        let again: Vec<usize> = (0..5).map(|p| stream_index(9, "synthetic", 5, p)).collect();
        assert_eq!(e0, again);
    }
}
