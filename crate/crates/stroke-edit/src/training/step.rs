//! One optimization step and the full training loop.
//!
//! Per iteration: (a) a discriminator update on the synthetic rows only
//! (real rows have no ground truth to discriminate against), then (b) a
//! generator update where each sample contributes the loss terms its kind
//! supports. The stroke-level blend enters the training losses only where
//! the placement config says so (background branch by default).

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::autograd::Tensor;
use crate::datagen::{RealDataset, Registries, SynthDataset};
use crate::error::{Error, Result};
use crate::geometry::AugmentParams;
use crate::losses::{
    background_loss, dice_loss, edited_loss, gan_discriminator_loss, recognition_loss,
    total_generator_loss, vgg_loss, GeneratorTerms, LossReport, SampleKind,
};
use crate::networks::{perceptual_features, slm_blend, tensor_to_image, tensor_to_mask};
use crate::nn::Graph;
use crate::util::{derive_rng, mask_to_image, tile_images, Image};
use crate::Elem;

use super::batch::{build_hybrid_batch, ones_guide, Batch};
use super::{
    load_recognizer_checkpoint, pretrain_recognizer, save_checkpoint,
    save_recognizer_checkpoint, TrainConfig, TrainState,
};

#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub iteration: u64,
    pub synthetic: Option<LossReport>,
    pub real: Option<LossReport>,
    /// Batch-level generator objective (kind totals weighted by their share
    /// of the batch).
    pub total: f64,
}

/// Images for one debug-grid row set, produced on demand.
pub struct GridData {
    pub rows: Vec<Image>,
    pub columns: usize,
}

fn finite_or_snapshot(
    value: f64,
    what: &str,
    iteration: u64,
    terms: &[(&str, f64)],
    grad_norms: &[(String, f64)],
) -> Result<()> {
    if value.is_finite() {
        return Ok(());
    }
    let mut snapshot = String::from("terms:");
    for (name, v) in terms {
        snapshot.push_str(&format!(" {name}={v:.6e}"));
    }
    snapshot.push_str("\nlargest grad norms:");
    for (name, n) in grad_norms.iter().take(8) {
        snapshot.push_str(&format!(" {name}={n:.3e}"));
    }
    Err(Error::Numeric {
        iteration,
        message: format!("{what} is not finite"),
        snapshot,
    })
}

/// Runs one optimization step; returns the loss report and, when
/// `want_grid` is set, images for the debug grid (first synthetic rows:
/// i_s, guide_s, o_s, i_t, guide_t, o_t).
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    want_grid: bool,
) -> Result<(StepReport, Option<GridData>)> {
    let config = state.config.clone();
    let flags = config.ablation;
    let iter = state.iteration;
    let (s, b) = (batch.n_syn, batch.len());
    let r = batch.n_real;
    let (h, w) = (batch.i_s.shape()[2], batch.i_s.shape()[3]);

    // ---- generator forward -------------------------------------------------
    let g_gen = Graph::new(&state.gen_store, true);
    let brm_out = state.brm.forward(&g_gen, &batch.i_s);

    // filtering guide: GT masks for synthetic rows, severed predictions for
    // real rows (they have no labels); all-ones when filtering is ablated
    let guide_for_filter = if !flags.use_background_filter {
        ones_guide(b, h, w)
    } else {
        let mut parts: Vec<Tensor<Elem>> = Vec::new();
        if s > 0 {
            parts.push(batch.guide_s_gt.clone().expect("synthetic rows have masks"));
        }
        if r > 0 {
            parts.push(brm_out.guide_s.narrow(0, s, b).detach());
        }
        Tensor::concat(0, &parts)
    };

    let augment: Option<Vec<AugmentParams>> = flags.use_style_augment.then(|| {
        let mut rng = derive_rng(config.seed, &["augment", &iter.to_string()]);
        (0..b).map(|_| AugmentParams::sample(&mut rng)).collect()
    });

    let tmm_out = state.tmm.forward(
        &g_gen,
        &batch.i_s,
        &batch.i_t,
        &brm_out,
        &guide_for_filter,
        flags.block_gradient,
        augment.as_deref(),
    )?;

    let o_s_full = if flags.use_slm && config.slm_placement.train_brm {
        slm_blend(&brm_out.o_hat_s, &brm_out.guide_s, &batch.i_s)
    } else {
        brm_out.o_hat_s.clone()
    };
    let o_t_full = if flags.use_slm && config.slm_placement.train_tmm {
        slm_blend(&tmm_out.o_hat_t, &tmm_out.guide_t, &o_s_full)
    } else {
        tmm_out.o_hat_t.clone()
    };

    // ---- discriminator step (synthetic rows only) --------------------------
    let (mut d_b_val, mut d_t_val) = (0.0, 0.0);
    if s > 0 {
        let i_s_syn = batch.i_s.narrow(0, 0, s);
        let i_t_syn = batch.i_t.narrow(0, 0, s);
        let t_b = batch.t_b.clone().expect("synthetic rows");
        let t_t = batch.t_t.clone().expect("synthetic rows");
        let o_s_det = o_s_full.narrow(0, 0, s).detach();
        let o_t_det = o_t_full.narrow(0, 0, s).detach();

        let g_d = Graph::new(&state.disc_store, true);
        let lb = gan_discriminator_loss(
            &state.d_b.forward(&g_d, &t_b, &i_s_syn),
            &state.d_b.forward(&g_d, &o_s_det, &i_s_syn),
        );
        let lt = gan_discriminator_loss(
            &state.d_t.forward(&g_d, &t_t, &i_t_syn),
            &state.d_t.forward(&g_d, &o_t_det, &i_t_syn),
        );
        d_b_val = lb.item() as f64;
        d_t_val = lt.item() as f64;
        let d_total = lb.add(&lt);
        finite_or_snapshot(
            d_total.item() as f64,
            "discriminator loss",
            iter,
            &[("d_b", d_b_val), ("d_t", d_t_val)],
            &[],
        )?;
        d_total.backward();
        let grads = g_d.grads();
        drop(g_d);
        state.adam_disc.step(&mut state.disc_store, &grads);
    }

    // ---- generator losses ---------------------------------------------------
    let g_d_frozen = Graph::new(&state.disc_store, false);
    let g_rec = Graph::new(&state.rec_store, false);

    let mut syn_report = None;
    let mut real_report = None;
    let mut batch_total = Tensor::<Elem>::scalar(0.0);
    let mut term_log: Vec<(&str, f64)> = Vec::new();

    if s > 0 {
        let i_s_syn = batch.i_s.narrow(0, 0, s);
        let i_t_syn = batch.i_t.narrow(0, 0, s);
        let o_s_syn = o_s_full.narrow(0, 0, s);
        let o_t_syn = o_t_full.narrow(0, 0, s);
        let t_b = batch.t_b.clone().expect("synthetic rows");
        let t_t = batch.t_t.clone().expect("synthetic rows");

        let fake_b = state.d_b.forward(&g_d_frozen, &o_s_syn, &i_s_syn);
        let (l_b_s, _adv_b, _l2_b) = background_loss(&o_s_syn, &t_b, &fake_b, &config.weights);
        let fake_t = state.d_t.forward(&g_d_frozen, &o_t_syn, &i_t_syn);
        let (l_t_t, _adv_t, _l2_t) = edited_loss(&o_t_syn, &t_t, &fake_t, &config.weights);

        let l_b_guide = dice_loss(
            &brm_out.guide_s.narrow(0, 0, s),
            batch.guide_s_gt.as_ref().expect("masks"),
        );
        let l_t_guide = dice_loss(
            &tmm_out.guide_t.narrow(0, 0, s),
            batch.guide_t_gt.as_ref().expect("masks"),
        );

        let gen_feats = perceptual_features(&state.rec, &g_rec, &o_t_syn);
        let gt_feats = perceptual_features(&state.rec, &g_rec, &t_t);
        let (l_vgg, per_v, style_v) = vgg_loss(&gen_feats, &gt_feats, &config.weights);

        let texts: Vec<String> = batch.texts_tgt[..s].to_vec();
        let l_rec = if flags.use_recognizer {
            let logits = state
                .rec
                .forward(&g_rec, &o_t_syn, Some(&texts))?
                .logits;
            recognition_loss(&logits, &texts, &state.rec.vocab, config.model.max_text_len)?
        } else {
            Tensor::scalar(0.0)
        };

        let report = LossReport {
            kind: "synthetic".into(),
            l_b_s: l_b_s.item() as f64,
            l_b_guide: l_b_guide.item() as f64,
            l_t_t: l_t_t.item() as f64,
            l_t_guide: l_t_guide.item() as f64,
            l_rec: l_rec.item() as f64,
            l_per: per_v,
            l_style: style_v,
            total: 0.0,
            d_b: d_b_val,
            d_t: d_t_val,
        };
        let total = total_generator_loss(
            &GeneratorTerms {
                l_b_s: Some(l_b_s),
                l_t_t: Some(l_t_t),
                l_b_guide: Some(l_b_guide),
                l_t_guide: Some(l_t_guide),
                l_vgg: Some(l_vgg),
                l_rec: Some(l_rec),
            },
            &config.weights,
            SampleKind::Synthetic,
        )?;
        let mut report = report;
        // report totals are the f64 recombination of the reported terms so
        // the bookkeeping identity holds beyond f32 resolution
        report.total = report.recombined_total(&config.weights);
        term_log.push(("syn_total", report.total));
        syn_report = Some(report);
        batch_total = batch_total.add(&total.scale(s as f64 / b as f64));
    }

    if r > 0 {
        let i_s_real = batch.i_s.narrow(0, s, b);
        let o_t_real = o_t_full.narrow(0, s, b);
        let gen_feats = perceptual_features(&state.rec, &g_rec, &o_t_real);
        let gt_feats = perceptual_features(&state.rec, &g_rec, &i_s_real);
        let (l_vgg, per_v, style_v) = vgg_loss(&gen_feats, &gt_feats, &config.weights);
        let texts: Vec<String> = batch.texts_tgt[s..].to_vec();
        let l_rec = if flags.use_recognizer {
            let logits = state
                .rec
                .forward(&g_rec, &o_t_real, Some(&texts))?
                .logits;
            recognition_loss(&logits, &texts, &state.rec.vocab, config.model.max_text_len)?
        } else {
            Tensor::scalar(0.0)
        };
        let l_rec_val = l_rec.item() as f64;
        let total = total_generator_loss(
            &GeneratorTerms {
                l_b_s: None,
                l_t_t: None,
                l_b_guide: None,
                l_t_guide: None,
                l_vgg: Some(l_vgg),
                l_rec: Some(l_rec),
            },
            &config.weights,
            SampleKind::Real,
        )?;
        let mut rep = LossReport {
            kind: "real".into(),
            l_rec: l_rec_val,
            l_per: per_v,
            l_style: style_v,
            ..Default::default()
        };
        rep.total = rep.recombined_total(&config.weights);
        term_log.push(("real_total", rep.total));
        real_report = Some(rep);
        batch_total = batch_total.add(&total.scale(r as f64 / b as f64));
    }

    let total_val = syn_report.as_ref().map_or(0.0, |rep| rep.total * s as f64 / b as f64)
        + real_report.as_ref().map_or(0.0, |rep| rep.total * r as f64 / b as f64);
    batch_total.backward();
    let grads = g_gen.grads();
    let grad_norms: Vec<(String, f64)> = {
        let mut v: Vec<(String, f64)> = grads
            .iter()
            .map(|(id, g)| {
                let n = g.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
                (state.gen_store.slot(*id).name.clone(), n)
            })
            .collect();
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        v
    };
    finite_or_snapshot(
        total_val + grad_norms.first().map(|(_, n)| *n).unwrap_or(0.0),
        "generator loss/gradient",
        iter,
        &term_log,
        &grad_norms,
    )?;

    let grid = want_grid.then(|| {
        let rows = s.clamp(1, 4).min(b);
        let mut images = Vec::new();
        for row in 0..rows {
            images.push(tensor_to_image(&batch.i_s, row));
            images.push(mask_to_image(&tensor_to_mask(&brm_out.guide_s, row)));
            images.push(tensor_to_image(&o_s_full, row));
            images.push(tensor_to_image(&batch.i_t, row));
            images.push(mask_to_image(&tensor_to_mask(&tmm_out.guide_t, row)));
            images.push(tensor_to_image(&o_t_full, row));
        }
        GridData {
            rows: images,
            columns: 6,
        }
    });

    drop(g_d_frozen);
    drop(g_rec);
    drop(brm_out);
    drop(tmm_out);
    drop(o_s_full);
    drop(o_t_full);
    state.adam_gen.step(&mut state.gen_store, &grads);
    state.iteration += 1;

    Ok((
        StepReport {
            iteration: iter,
            synthetic: syn_report,
            real: real_report,
            total: total_val,
        },
        grid,
    ))
}

pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub recognizer_checkpoint: Option<PathBuf>,
    pub iterations_run: u64,
}

/// Executes the training loop with periodic checkpoints, JSONL loss logs
/// and sample grids. Resumable: pass an editor checkpoint to continue, and
/// the run reproduces the uninterrupted loss curve bitwise on one device.
pub fn run_training(
    config: TrainConfig,
    syn_dir: &Path,
    real_dir: Option<&Path>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunArtifacts> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let syn = SynthDataset::open(syn_dir, config.strict_load)?;
    let real = match real_dir {
        Some(d) => Some(RealDataset::open(d)?),
        None => None,
    };
    let gen_cfg = &syn.manifest.config;
    if gen_cfg.image_w != config.model.image_w || gen_cfg.image_h != config.model.image_h {
        return Err(Error::Config(format!(
            "dataset images are {}x{} but the model expects {}x{}",
            gen_cfg.image_w, gen_cfg.image_h, config.model.image_w, config.model.image_h
        )));
    }
    let regs = Registries::open(gen_cfg)?;

    let mut rec_ckpt_path = None;
    let mut state = match resume {
        Some(p) => {
            let mut state = super::load_checkpoint(p)?;
            if state.config.model != config.model {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different model configuration".into(),
                ));
            }
            // adopt the caller's schedule (total iterations, intervals);
            // seeds and batch shape must match for bitwise reproducibility
            state.config = config.clone();
            state
        }
        None => {
            let mut state = TrainState::new(config.clone())?;
            // frozen recognizer: load if given, reuse a previous pretrain
            // artifact, otherwise pretrain on this corpus now
            let default_path = out_dir.join("recognizer.ckpt");
            let source = config.rec.ckpt.clone().or_else(|| {
                default_path.is_file().then(|| default_path.clone())
            });
            match source {
                Some(p) => {
                    let acc =
                        load_recognizer_checkpoint(&p, &config.model, &mut state.rec_store)?;
                    eprintln!(
                        "loaded recognizer from {} (gate accuracy {acc:.1}%)",
                        p.display()
                    );
                    state.recognizer_accuracy = Some(acc);
                    rec_ckpt_path = Some(p);
                }
                None => {
                    eprintln!("pre-training recognizer on {}", syn_dir.display());
                    let outcome =
                        pretrain_recognizer(&config.model, &config.rec, &syn, config.seed)?;
                    eprintln!(
                        "recognizer pre-training done: {:.1}% word accuracy on held-out clean renders",
                        outcome.accuracy
                    );
                    save_recognizer_checkpoint(
                        &outcome.store,
                        &config.model,
                        outcome.accuracy,
                        outcome.adam_t,
                        &default_path,
                    )?;
                    // move the trained parameters into the state
                    for (id, slot) in outcome.store.slots() {
                        let _ = id;
                        let target = state
                            .rec_store
                            .slots()
                            .find(|(_, s)| s.name == slot.name)
                            .map(|(i, _)| i)
                            .expect("identical recognizer architecture");
                        state.rec_store.set_value(target, (*slot.value).clone());
                    }
                    state.recognizer_accuracy = Some(outcome.accuracy);
                    rec_ckpt_path = Some(default_path);
                }
            }
            state
        }
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let started = std::time::Instant::now();
    let start_iter = state.iteration;
    while state.iteration < config.total_iters {
        let iter = state.iteration;
        let batch = build_hybrid_batch(&syn, real.as_ref(), &regs, &config, iter)?;
        let want_grid = config.grid_interval > 0 && iter % config.grid_interval == 0;
        let (report, grid) = train_step(&mut state, &batch, want_grid)?;

        if config.log_interval > 0 && iter % config.log_interval == 0 {
            for part in [&report.synthetic, &report.real].into_iter().flatten() {
                let mut line = serde_json::to_value(part).expect("report json");
                line["iter"] = serde_json::json!(iter);
                writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            }
            let elapsed = started.elapsed().as_secs_f64();
            let done = (iter - start_iter + 1) as f64;
            eprintln!(
                "iter {iter}/{}: total {:.4} ({:.2} s/iter)",
                config.total_iters,
                report.total,
                elapsed / done
            );
        }
        if let Some(grid) = grid {
            let path = out_dir.join(format!("grid_{iter:07}.png"));
            crate::util::save_rgb_png(&path, &tile_images(&grid.rows, grid.columns))?;
        }
        if config.checkpoint_interval > 0
            && state.iteration % config.checkpoint_interval == 0
            && state.iteration < config.total_iters
        {
            save_checkpoint(&state, &out_dir.join(format!("ckpt_{:07}.ckpt", state.iteration)))?;
        }
    }

    let final_path = out_dir.join("final.ckpt");
    save_checkpoint(&state, &final_path)?;
    Ok(RunArtifacts {
        final_checkpoint: final_path,
        log_path,
        recognizer_checkpoint: rec_ckpt_path,
        iterations_run: state.iteration - start_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{build_corpus, CorpusKind, GenConfig, RealDataset, SynthDataset};
    use crate::networks::ModelConfig;
    use crate::training::{AblationFlags, RecPretrainConfig, TrainConfig};

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

    fn tiny_train_config() -> TrainConfig {
        TrainConfig {
            total_iters: 4,
            batch_size: 3,
            real_per_batch: 1,
            lr: 1e-3,
            seed: 5,
            model: ModelConfig {
                base_channels: 4,
                image_w: 48,
                image_h: 16,
                k: 4,
                rec_hidden: 12,
                rec_embed: 8,
                rec_attn: 10,
                ..Default::default()
            },
            rec: RecPretrainConfig {
                iters: 2,
                batch_size: 4,
                ..Default::default()
            },
            log_interval: 0,
            checkpoint_interval: 2,
            grid_interval: 0,
            ..Default::default()
        }
    }

    struct Fixture {
        _syn_dir: tempfile::TempDir,
        _real_dir: tempfile::TempDir,
        syn: SynthDataset,
        real: RealDataset,
        regs: Registries,
    }

    fn fixture() -> Fixture {
        let syn_dir = tempfile::tempdir().unwrap();
        let real_dir = tempfile::tempdir().unwrap();
        build_corpus(&gen_config(CorpusKind::Synthetic, 5, 31), syn_dir.path()).unwrap();
        build_corpus(&gen_config(CorpusKind::Real, 4, 32), real_dir.path()).unwrap();
        let syn = SynthDataset::open(syn_dir.path(), false).unwrap();
        let real = RealDataset::open(real_dir.path()).unwrap();
        let regs = Registries::open(&syn.manifest.config).unwrap();
        Fixture {
            _syn_dir: syn_dir,
            _real_dir: real_dir,
            syn,
            real,
            regs,
        }
    }

    #[test]
    fn step_report_totals_match_weighted_terms() {
        let f = fixture();
        let config = tiny_train_config();
        let mut state = TrainState::new(config.clone()).unwrap();
        let batch = build_hybrid_batch(&f.syn, Some(&f.real), &f.regs, &config, 0).unwrap();
        let (report, _) = train_step(&mut state, &batch, false).unwrap();
        let syn = report.synthetic.expect("synthetic rows present");
        assert!(
            (syn.total - syn.recombined_total(&config.weights)).abs() < 1e-6,
            "synthetic total {} vs recombined {}",
            syn.total,
            syn.recombined_total(&config.weights)
        );
        let real = report.real.expect("real rows present");
        assert!((real.total - real.recombined_total(&config.weights)).abs() < 1e-6);
        // batch total is the share-weighted sum of the kind totals
        let expect = syn.total * 2.0 / 3.0 + real.total / 3.0;
        assert!((report.total - expect).abs() < 1e-5);
    }

    #[test]
    fn real_only_batch_never_touches_guides_or_discriminators() {
        let f = fixture();
        let mut config = tiny_train_config();
        config.batch_size = 2;
        config.real_per_batch = 2;
        let mut state = TrainState::new(config.clone()).unwrap();
        let disc_before: Vec<_> = state
            .disc_store
            .slots()
            .map(|(_, s)| (*s.value).clone())
            .collect();
        let guide_head_ids = [
            state.brm.guide_head_weight(),
            state.tmm.guide_head_weight(),
        ];
        let guides_before: Vec<_> = guide_head_ids
            .iter()
            .map(|id| (*state.gen_store.value(*id)).clone())
            .collect();
        let batch = build_hybrid_batch(&f.syn, Some(&f.real), &f.regs, &config, 0).unwrap();
        assert_eq!(batch.n_syn, 0);
        let (report, _) = train_step(&mut state, &batch, false).unwrap();
        assert!(report.synthetic.is_none());
        assert_eq!(state.adam_disc.t, 0, "discriminators must not update");
        for ((_, slot), before) in state.disc_store.slots().zip(&disc_before) {
            assert_eq!(&*slot.value, before, "discriminator {} moved", slot.name);
        }
        for (id, before) in guide_head_ids.iter().zip(&guides_before) {
            assert_eq!(
                state.gen_store.value(*id),
                before,
                "guide head weights must receive zero gradient on real-only batches"
            );
        }
    }

    #[test]
    fn ablation_flags_do_not_change_checkpoint_format() {
        let f = fixture();
        let mut config = tiny_train_config();
        config.ablation = AblationFlags {
            use_slm: false,
            use_recognizer: false,
            use_background_filter: false,
            use_style_augment: false,
            block_gradient: false,
        };
        let mut state = TrainState::new(config.clone()).unwrap();
        let batch = build_hybrid_batch(&f.syn, Some(&f.real), &f.regs, &config, 0).unwrap();
        let (_report, _) = train_step(&mut state, &batch, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ablated.ckpt");
        save_checkpoint(&state, &path).unwrap();
        let loaded = super::super::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.iteration, 1);
        assert_eq!(loaded.config.ablation, config.ablation);
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_bitwise() {
        let f = fixture();
        let config = tiny_train_config();

        let out_a = tempfile::tempdir().unwrap();
        run_training(
            config.clone(),
            f.syn.root(),
            Some(f.real.root()),
            out_a.path(),
            None,
        )
        .unwrap();

        let out_b = tempfile::tempdir().unwrap();
        let mut half = config.clone();
        half.total_iters = 2;
        run_training(
            half,
            f.syn.root(),
            Some(f.real.root()),
            out_b.path(),
            None,
        )
        .unwrap();
        let out_b2 = tempfile::tempdir().unwrap();
        run_training(
            config,
            f.syn.root(),
            Some(f.real.root()),
            out_b2.path(),
            Some(&out_b.path().join("final.ckpt")),
        )
        .unwrap();

        let a = std::fs::read(out_a.path().join("final.ckpt")).unwrap();
        let b = std::fs::read(out_b2.path().join("final.ckpt")).unwrap();
        assert_eq!(a, b, "resumed run must match the uninterrupted run bitwise");
    }
}
