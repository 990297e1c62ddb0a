//! Recognizer pre-training on generator output.
//!
//! The schedule warms up on canonical renders only (easy attention
//! alignment), then mixes styled source images and ground-truth edited
//! images so the frozen recognizer copes with both clean and styled text.
//! The acceptance gate measures word accuracy on held-out clean canonical
//! renders; styled accuracy is reported alongside as a diagnostic.

use rand::Rng;

use crate::datagen::SynthDataset;
use crate::error::{Error, Result};
use crate::losses::recognition_loss;
use crate::networks::{image_to_tensor_batch, ModelConfig, Recognizer};
use crate::nn::{Adam, Graph, ParamStore};
use crate::util::{derive_rng, derive_rng_indexed, Image};
use crate::Elem;

use super::RecPretrainConfig;

pub struct RecPretrainOutcome {
    pub store: ParamStore<Elem>,
    /// Word accuracy (%) on held-out clean canonical renders (the gate).
    pub accuracy: f64,
    /// Word accuracy (%) on held-out styled source images (diagnostic).
    pub styled_accuracy: f64,
    pub adam_t: u64,
}

/// Word accuracy (%) of greedy decodes over (image, text) pairs.
pub fn recognizer_word_accuracy(
    rec: &Recognizer,
    store: &ParamStore<Elem>,
    pairs: &[(Image, String)],
) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for chunk in pairs.chunks(32) {
        let images: Vec<Image> = chunk.iter().map(|(i, _)| i.clone()).collect();
        let g = Graph::new(store, false);
        let decoded = rec.greedy_decode(&g, &image_to_tensor_batch::<Elem>(&images))?;
        for (d, (_, t)) in decoded.iter().zip(chunk) {
            if d.to_lowercase() == t.to_lowercase() {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / pairs.len() as f64)
}

fn clip_global_norm(grads: &mut [(crate::nn::ParamId, ndarray::ArrayD<Elem>)], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .map(|(_, g)| g.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let scale = (max_norm / total) as Elem;
        for (_, g) in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
}

/// Trains a fresh recognizer on the corpus; returns the parameter store and
/// the held-out accuracies. Training draws (image, text) pairs from the
/// first (1 - holdout) fraction; the gate uses canonical renders of the
/// held-out tail.
pub fn pretrain_recognizer(
    model: &ModelConfig,
    config: &RecPretrainConfig,
    syn: &SynthDataset,
    seed: u64,
) -> Result<RecPretrainOutcome> {
    if syn.is_empty() {
        return Err(Error::data(None, "cannot pretrain recognizer on an empty corpus"));
    }
    let n_holdout = ((syn.len() as f64 * config.holdout_fraction).ceil() as usize)
        .clamp(1, syn.len().saturating_sub(1).max(1));
    let n_train = syn.len() - n_holdout;
    if n_train == 0 {
        return Err(Error::data(None, "corpus too small for a holdout split"));
    }

    let mut store = ParamStore::<Elem>::new();
    let mut rng = derive_rng(seed, &["init", "recognizer"]);
    let rec = Recognizer::new(&mut store, model, &mut rng);
    let mut adam = Adam::new(config.lr, 0.9, 0.999);

    let mut holdout_clean: Vec<(Image, String)> = Vec::with_capacity(n_holdout);
    let mut holdout_styled: Vec<(Image, String)> = Vec::with_capacity(n_holdout);
    for i in n_train..syn.len() {
        let s = syn.get(i)?;
        holdout_clean.push((s.i_t, s.tgt_text.clone()));
        holdout_styled.push((s.i_s, s.src_text));
    }

    // canonical-only warmup, then the styled mixture
    let warmup = config.iters / 4;
    let mut accuracy = f64::NAN;
    let mut styled_accuracy = 0.0;
    for iter in 0..config.iters {
        let mut rng = derive_rng_indexed(seed, &["rec-batch"], iter);
        let mut images: Vec<Image> = Vec::with_capacity(config.batch_size);
        let mut texts: Vec<String> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let s = syn.get(rng.gen_range(0..n_train))?;
            let variant = if iter < warmup { 1 } else { rng.gen_range(0..4u8) };
            match variant {
                0 | 3 => {
                    images.push(s.i_s);
                    texts.push(s.src_text);
                }
                1 => {
                    images.push(s.i_t);
                    texts.push(s.tgt_text.clone());
                }
                _ => {
                    images.push(s.t_t);
                    texts.push(s.tgt_text);
                }
            }
        }
        let g = Graph::new(&store, true);
        let batch = image_to_tensor_batch::<Elem>(&images);
        let logits = rec.forward(&g, &batch, Some(&texts))?.logits;
        let loss = recognition_loss(&logits, &texts, &rec.vocab, model.max_text_len)?;
        let loss_val = loss.item() as f64;
        if !loss_val.is_finite() {
            return Err(Error::Numeric {
                iteration: iter,
                message: "recognizer pre-training loss is not finite".into(),
                snapshot: format!("ce={loss_val}"),
            });
        }
        loss.backward();
        let mut grads = g.grads();
        drop(g);
        clip_global_norm(&mut grads, 5.0);
        adam.step(&mut store, &grads);

        // periodic gate check with early exit once comfortably cleared
        let check_every = 500u64;
        if iter >= 1000 && (iter % check_every == 0 || iter + 1 == config.iters) {
            accuracy = recognizer_word_accuracy(&rec, &store, &holdout_clean)?;
            styled_accuracy = recognizer_word_accuracy(&rec, &store, &holdout_styled)?;
            eprintln!(
                "recognizer iter {iter}: ce {loss_val:.4}, holdout clean {accuracy:.1}%, styled {styled_accuracy:.1}%"
            );
            if accuracy >= 98.0 && styled_accuracy >= 85.0 {
                break;
            }
        } else if iter % 250 == 0 {
            eprintln!("recognizer iter {iter}: ce {loss_val:.4}");
        }
    }
    if accuracy.is_nan() {
        accuracy = recognizer_word_accuracy(&rec, &store, &holdout_clean)?;
        styled_accuracy = recognizer_word_accuracy(&rec, &store, &holdout_styled)?;
    }
    Ok(RecPretrainOutcome {
        store,
        accuracy,
        styled_accuracy,
        adam_t: adam.t,
    })
}
