//! Command-line surface: corpus generation, recognizer pre-training, the
//! training loop, evaluation and single-image editing.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
//! All randomness flows from `--seed`; repeated invocations with identical
//! arguments produce identical artifacts (checkpoint wall-clock metadata
//! lives in `.meta.json` sidecars).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::datagen::{build_corpus, CorpusKind, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalArgs, EvalMode};
use crate::networks::{edit_image, SlmPlacement};
use crate::nn::Graph;
use crate::training::{
    load_checkpoint, pretrain_recognizer, run_training, save_recognizer_checkpoint, TrainConfig,
};
use crate::util::{load_rgb_png, mask_to_image, resize_image, save_rgb_png, tile_images};
use crate::Elem;

#[derive(Parser)]
#[command(
    name = "stroke-edit",
    about = "Stroke-level scene text editing: data generation, training, evaluation, inference",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired corpus (or an unpaired stand-in corpus).
    Gen(GenArgs),
    /// Pre-train the recognizer on a synthetic corpus and save it.
    PretrainRec(PretrainArgs),
    /// Run (or resume) editor training.
    Train(TrainArgs),
    /// Evaluate a checkpoint over a corpus and write a JSON report.
    Eval(EvalCmdArgs),
    /// Edit one image: replace its text with the target word.
    Edit(EditArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Synthetic,
    Real,
}

#[derive(Args)]
struct GenArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of samples.
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Master seed for styles, texts and backgrounds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corpus kind: synthetic pairs or unpaired "real" stand-ins.
    #[arg(long, value_enum, default_value_t = KindArg::Synthetic)]
    kind: KindArg,
    /// Image width in pixels (must be divisible by 8 for training).
    #[arg(long, default_value_t = 256)]
    width: usize,
    /// Image height in pixels.
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Optional generator config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Font directory (default: $STROKE_EDIT_CACHE/fonts, then assets/fonts).
    #[arg(long)]
    fonts: Option<PathBuf>,
}

#[derive(Args)]
struct PretrainArgs {
    /// Synthetic corpus to train on.
    #[arg(long)]
    syn: PathBuf,
    /// Output recognizer checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Training config JSON (model + rec sections are used).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training config JSON (unknown keys rejected).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic corpus directory.
    #[arg(long)]
    syn: PathBuf,
    /// Unpaired corpus directory (needed when real_per_batch > 0).
    #[arg(long)]
    real: Option<PathBuf>,
    /// Output directory for checkpoints, logs and grids.
    #[arg(long)]
    out: PathBuf,
    /// Resume from an editor checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Ablation overrides, e.g. use_slm=off,use_style_augment=off.
    #[arg(long)]
    ablate: Option<String>,
    /// Use the full-scale preset (300k iterations, 256x64, batch 14+2).
    #[arg(long, default_value_t = false)]
    paper_scale: bool,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Total-iterations override.
    #[arg(long)]
    iters: Option<u64>,
    /// Real samples per batch override (0..=4 reproduces the mixture study).
    #[arg(long)]
    real_per_batch: Option<usize>,
    /// Apply the stroke-level blend to the background branch during
    /// training (on/off overrides the config placement).
    #[arg(long)]
    slm_train_brm: Option<bool>,
    /// Apply the stroke-level blend to the modification branch during
    /// training.
    #[arg(long)]
    slm_train_tmm: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Paired,
    Unpaired,
}

#[derive(Args)]
struct EvalCmdArgs {
    /// Editor checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus directory to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// paired: synthetic corpus with ground truth; unpaired: transcripts only.
    #[arg(long, value_enum, default_value_t = ModeArg::Paired)]
    mode: ModeArg,
    /// Output JSON report path.
    #[arg(long)]
    out: PathBuf,
    /// Write qualitative PNG grids into this directory.
    #[arg(long)]
    grids: Option<PathBuf>,
    /// Unpaired mode: file with one target word per line (cycled).
    #[arg(long)]
    targets: Option<PathBuf>,
    /// Threshold guidance maps at 0.5 before blending.
    #[arg(long, default_value_t = false)]
    binarize_guide: bool,
    /// Evaluate at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Seed for derived target words.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EditArgs {
    /// Editor checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// Input image (resized to the model resolution by stretching).
    #[arg(long)]
    image: PathBuf,
    /// Target word to write into the image.
    #[arg(long)]
    text: String,
    /// Output PNG for the edited image.
    #[arg(long)]
    out: PathBuf,
    /// Also write an 8-panel debug grid (inputs, guides, intermediates).
    #[arg(long)]
    debug_grid: Option<PathBuf>,
    /// Threshold guidance maps at 0.5 before blending.
    #[arg(long, default_value_t = false)]
    binarize_guide: bool,
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_slice::<GenConfig>(&bytes)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => GenConfig::default(),
    };
    config.count = args.count;
    config.seed = args.seed;
    config.image_w = args.width;
    config.image_h = args.height;
    config.kind = match args.kind {
        KindArg::Synthetic => CorpusKind::Synthetic,
        KindArg::Real => CorpusKind::Real,
    };
    if args.fonts.is_some() {
        config.fonts_dir = args.fonts.clone();
    }
    let manifest = build_corpus(&config, &args.out)?;
    println!(
        "wrote {} {} samples to {} (manifest hash {})",
        manifest.samples.len(),
        match config.kind {
            CorpusKind::Synthetic => "synthetic",
            CorpusKind::Real => "real",
        },
        args.out.display(),
        &manifest.config_hash[..16],
    );
    Ok(())
}

fn cmd_pretrain_rec(args: PretrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => TrainConfig::from_json_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let syn = crate::datagen::SynthDataset::open(&args.syn, false)?;
    sync_model_to_corpus(&mut config, &syn);
    let outcome = pretrain_recognizer(&config.model, &config.rec, &syn, config.seed)?;
    save_recognizer_checkpoint(
        &outcome.store,
        &config.model,
        outcome.accuracy,
        outcome.adam_t,
        &args.out,
    )?;
    println!(
        "recognizer saved to {} (held-out clean-render accuracy {:.1}%)",
        args.out.display(),
        outcome.accuracy
    );
    Ok(())
}

/// Adopt the corpus image size and vocabulary so CLI runs cannot silently
/// mismatch the data they read.
fn sync_model_to_corpus(config: &mut TrainConfig, syn: &crate::datagen::SynthDataset) {
    let gen = &syn.manifest.config;
    config.model.image_w = gen.image_w;
    config.model.image_h = gen.image_h;
    config.model.vocab = gen.vocab.clone();
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = if args.paper_scale {
        TrainConfig::paper_scale()
    } else {
        match &args.config {
            Some(p) => TrainConfig::from_json_file(p)?,
            None => TrainConfig::default(),
        }
    };
    if args.paper_scale {
        if let Some(p) = &args.config {
            let file = TrainConfig::from_json_file(p)?;
            // config file provides everything except the preset scale knobs
            config = TrainConfig {
                total_iters: config.total_iters,
                model: config.model.clone(),
                ..file
            };
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(iters) = args.iters {
        config.total_iters = iters;
    }
    if let Some(r) = args.real_per_batch {
        config.real_per_batch = r;
    }
    if let Some(spec) = &args.ablate {
        config.ablation.apply_overrides(spec)?;
    }
    if let Some(v) = args.slm_train_brm {
        config.slm_placement.train_brm = v;
    }
    if let Some(v) = args.slm_train_tmm {
        config.slm_placement.train_tmm = v;
    }
    let syn = crate::datagen::SynthDataset::open(&args.syn, false)?;
    sync_model_to_corpus(&mut config, &syn);
    drop(syn);
    let artifacts = run_training(
        config,
        &args.syn,
        args.real.as_deref(),
        &args.out,
        args.resume.as_deref(),
    )?;
    println!(
        "training finished: {} iterations, checkpoint at {}",
        artifacts.iterations_run,
        artifacts.final_checkpoint.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalCmdArgs) -> Result<()> {
    let targets = match &args.targets {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let words: Vec<String> = text
                .lines()
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect();
            if words.is_empty() {
                return Err(Error::Config(format!(
                    "targets file {} contains no words",
                    path.display()
                )));
            }
            Some(words)
        }
        None => None,
    };
    let report = evaluate(&EvalArgs {
        checkpoint: args.ckpt.clone(),
        data_dir: args.data.clone(),
        mode: match args.mode {
            ModeArg::Paired => EvalMode::Paired,
            ModeArg::Unpaired => EvalMode::Unpaired,
        },
        out_path: Some(args.out.clone()),
        grids_dir: args.grids.clone(),
        targets,
        binarize_guide: args.binarize_guide,
        limit: args.limit,
        seed: args.seed,
    })?;
    println!(
        "eval over {} images: mse {:.4}, psnr {:.2} dB, ssim {:.4}, fid {:.3}, seq_acc {:.1}% -> {}",
        report.n_images,
        report.mse,
        report.psnr,
        report.ssim,
        report.fid,
        report.seq_acc,
        args.out.display()
    );
    Ok(())
}

fn cmd_edit(args: EditArgs) -> Result<()> {
    let state = load_checkpoint(&args.ckpt)?;
    let model = &state.config.model;
    // the editor only knows the characters it was trained on
    let vocab = crate::vocab::Vocab::new(&model.vocab);
    for ch in args.text.chars() {
        vocab.index_of(ch)?;
    }
    let raw = load_rgb_png(&args.image)?;
    let i_s = if raw.shape()[1] != model.image_h || raw.shape()[2] != model.image_w {
        resize_image(&raw, model.image_h, model.image_w)
    } else {
        raw
    };
    // canonical rendering needs the generator registries; reconstruct them
    // from the model config defaults
    let gen_config = GenConfig {
        image_w: model.image_w,
        image_h: model.image_h,
        vocab: model.vocab.clone(),
        ..Default::default()
    };
    let regs = crate::datagen::Registries::open(&gen_config)?;
    let slm = if state.config.ablation.use_slm {
        state.config.slm_placement
    } else {
        SlmPlacement::disabled()
    };
    let g = Graph::new(&state.gen_store, false);
    let bundle = edit_image::<Elem>(
        &i_s,
        &args.text,
        &state.brm,
        &state.tmm,
        &g,
        &regs,
        &gen_config,
        slm,
        args.binarize_guide,
    )?;
    save_rgb_png(&args.out, &bundle.o_t)?;
    if let Some(grid_path) = &args.debug_grid {
        // panel order mirrors the qualitative figures: source, its guide,
        // erased background, filtered style / canonical target, target
        // guide, fused edit, final composite
        let panels = vec![
            i_s.clone(),
            mask_to_image(&bundle.guide_s),
            bundle.o_s.clone(),
            bundle.filtered_style.clone(),
            bundle.i_t.clone(),
            mask_to_image(&bundle.guide_t),
            bundle.o_hat_t.clone(),
            bundle.o_t.clone(),
        ];
        save_rgb_png(grid_path, &tile_images(&panels, 4))?;
    }
    println!("edited image written to {}", args.out.display());
    Ok(())
}

/// CLI entry point; maps errors to exit codes.
pub fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::PretrainRec(args) => cmd_pretrain_rec(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Edit(args) => cmd_edit(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
