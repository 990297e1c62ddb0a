//! Synthetic paired-corpus generation and the on-disk dataset format.
//!
//! A synthetic sample bundles a styled source image `i_s`, a canonical
//! target-text render `i_t`, the ground-truth edited image `t_t` (target
//! text in the source style over the same background), the text-free
//! background `t_b`, and binary stroke masks for both texts. By
//! construction, pixels outside the stroke masks are bit-identical across
//! `i_s`, `t_t` and `t_b`. "Real" corpora are unpaired stand-ins: styled
//! renders with photometric jitter and only a transcript label.

mod backgrounds;
mod corpus;
mod fonts;
mod render;

pub use backgrounds::BackgroundRegistry;
pub use corpus::{
    build_corpus, load_dataset, CorpusManifest, Dataset, RealDataset, SampleEntry, SynthDataset,
};
pub use fonts::{resolve_fonts_dir, FontRegistry};
pub use render::{photometric_jitter, render_canonical, render_pair, render_real, Registries};

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::util::{Image, Mask};

/// Longest text either renderer or recognizer accepts.
pub const MAX_TEXT_LEN: usize = 25;

/// All style parameters of one rendered sample. Two samples rendered from
/// the same spec with different texts differ only inside their glyph
/// regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub font_id: usize,
    pub text_color: [f32; 3],
    pub glyph_height_px: u32,
    pub rotation_deg: f64,
    pub curve_amplitude: f64,
    pub perspective_coeffs: [f64; 4],
    pub background_id: usize,
    pub background_crop: (usize, usize, usize, usize),
    pub seed: u64,
}

/// Bounded ranges the style parameters are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleRanges {
    pub rotation_deg: (f64, f64),
    pub curve_amplitude: (f64, f64),
    pub perspective: (f64, f64),
    pub glyph_height_frac: (f64, f64),
}

impl Default for StyleRanges {
    fn default() -> Self {
        StyleRanges {
            rotation_deg: (-10.0, 10.0),
            curve_amplitude: (0.0, 0.15),
            perspective: (-0.06, 0.06),
            glyph_height_frac: (0.55, 0.72),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    Synthetic,
    Real,
}

/// Generator configuration; the manifest embeds an echo of it plus its hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub kind: CorpusKind,
    pub count: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub seed: u64,
    pub background_seed: u64,
    pub n_backgrounds: usize,
    /// None resolves via `$STROKE_EDIT_CACHE/fonts` then `assets/fonts`.
    pub fonts_dir: Option<PathBuf>,
    pub vocab: String,
    pub word_len: (usize, usize),
    pub canonical_font: String,
    pub style: StyleRanges,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            kind: CorpusKind::Synthetic,
            count: 16,
            image_w: 256,
            image_h: 64,
            seed: 0,
            background_seed: 7777,
            n_backgrounds: 120,
            fonts_dir: None,
            vocab: "abcdefghijklmnopqrstuvwxyz".into(),
            word_len: (3, 8),
            canonical_font: "DejaVuSansMono.ttf".into(),
            style: StyleRanges::default(),
        }
    }
}

impl GenConfig {
    pub fn vocab_chars(&self) -> Vec<char> {
        self.vocab.chars().collect()
    }
}

/// A fully labeled synthetic training pair.
#[derive(Clone, Debug)]
pub struct SynthSample {
    pub i_s: Image,
    pub i_t: Image,
    pub t_t: Image,
    pub t_b: Image,
    pub t_guide_s: Mask,
    pub t_guide_t: Mask,
    pub src_text: String,
    pub tgt_text: String,
}

/// An unpaired image with a transcript only.
#[derive(Clone, Debug)]
pub struct RealSample {
    pub i_s: Image,
    pub transcript: String,
}

/// Uniform random word over the vocabulary.
pub fn sample_word(vocab: &[char], len_range: (usize, usize), rng: &mut ChaCha12Rng) -> String {
    let len = rng.gen_range(len_range.0..=len_range.1);
    (0..len).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect()
}

/// Random word different from `avoid`.
pub fn sample_word_different(
    vocab: &[char],
    len_range: (usize, usize),
    avoid: &str,
    rng: &mut ChaCha12Rng,
) -> String {
    loop {
        let w = sample_word(vocab, len_range, rng);
        if w != avoid {
            return w;
        }
    }
}

/// Draws a style from the configured ranges, with a text color kept at a
/// minimum luminance contrast against the chosen background crop.
pub fn sample_style(
    config: &GenConfig,
    regs: &Registries,
    rng: &mut ChaCha12Rng,
) -> crate::error::Result<StyleSpec> {
    let font_id = rng.gen_range(0..regs.fonts.len());
    let background_id = rng.gen_range(0..regs.backgrounds.len());
    let background_crop = regs.backgrounds.sample_crop(rng);
    let bg_lum = regs.backgrounds.crop_luminance(background_id, background_crop)?;
    let mut text_color = [0.0f32; 3];
    let mut found = false;
    for _ in 0..16 {
        let c = [
            rng.gen_range(0.0..1.0f32),
            rng.gen_range(0.0..1.0f32),
            rng.gen_range(0.0..1.0f32),
        ];
        let lum = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        if (lum - bg_lum).abs() >= 0.3 {
            text_color = c;
            found = true;
            break;
        }
    }
    if !found {
        text_color = if bg_lum > 0.5 { [0.02, 0.02, 0.05] } else { [0.97, 0.97, 0.93] };
    }
    let r = &config.style;
    Ok(StyleSpec {
        font_id,
        text_color,
        glyph_height_px: ((config.image_h as f64)
            * rng.gen_range(r.glyph_height_frac.0..=r.glyph_height_frac.1))
            .round() as u32,
        rotation_deg: rng.gen_range(r.rotation_deg.0..=r.rotation_deg.1),
        curve_amplitude: rng.gen_range(r.curve_amplitude.0..=r.curve_amplitude.1),
        perspective_coeffs: [
            rng.gen_range(r.perspective.0..=r.perspective.1),
            rng.gen_range(r.perspective.0..=r.perspective.1),
            rng.gen_range(r.perspective.0..=r.perspective.1),
            rng.gen_range(r.perspective.0..=r.perspective.1),
        ],
        background_id,
        background_crop,
        seed: rng.gen(),
    })
}
