//! Corpus building and loading: `<root>/manifest.json` plus one directory
//! per sample holding the PNGs (masks single-channel {0, 255}).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{
    derive_rng_indexed, load_mask_png, load_rgb_png, save_mask_png, save_rgb_png, sha256_hex,
};

use super::render::{render_pair, render_real, Registries};
use super::{sample_style, sample_word, sample_word_different, CorpusKind, GenConfig, RealSample, StyleSpec, SynthSample};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SampleEntry {
    Synthetic {
        id: String,
        src_text: String,
        tgt_text: String,
        style: StyleSpec,
    },
    Real {
        id: String,
        transcript: String,
    },
}

impl SampleEntry {
    pub fn id(&self) -> &str {
        match self {
            SampleEntry::Synthetic { id, .. } => id,
            SampleEntry::Real { id, .. } => id,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub kind: CorpusKind,
    pub config: GenConfig,
    pub config_hash: String,
    pub samples: Vec<SampleEntry>,
}

impl CorpusManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Data {
            sample: None,
            message: format!("corrupt manifest {}: {e}", path.display()),
        })
    }
}

fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

/// Generates `config.count` samples under `out_dir` and writes the
/// manifest. Per-sample RNG streams derive from (seed, index), so parallel
/// and serial runs produce identical corpora, and re-running with the same
/// config reproduces byte-identical manifests.
pub fn build_corpus(config: &GenConfig, out_dir: &Path) -> Result<CorpusManifest> {
    let regs = Registries::open(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let vocab = config.vocab_chars();
    if vocab.is_empty() {
        return Err(Error::Config("empty vocabulary".into()));
    }

    let entries: Vec<SampleEntry> = (0..config.count)
        .into_par_iter()
        .map(|i| -> Result<SampleEntry> {
            let mut rng = derive_rng_indexed(config.seed, &["sample"], i as u64);
            let id = sample_id(i);
            let dir = out_dir.join(&id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let style = sample_style(config, &regs, &mut rng)?;
            match config.kind {
                CorpusKind::Synthetic => {
                    let src = sample_word(&vocab, config.word_len, &mut rng);
                    let tgt = sample_word_different(&vocab, config.word_len, &src, &mut rng);
                    let s = render_pair(&src, &tgt, &style, &regs, config)?;
                    save_rgb_png(&dir.join("i_s.png"), &s.i_s)?;
                    save_rgb_png(&dir.join("i_t.png"), &s.i_t)?;
                    save_rgb_png(&dir.join("t_t.png"), &s.t_t)?;
                    save_rgb_png(&dir.join("t_b.png"), &s.t_b)?;
                    save_mask_png(&dir.join("mask_s.png"), &s.t_guide_s)?;
                    save_mask_png(&dir.join("mask_t.png"), &s.t_guide_t)?;
                    let meta = serde_json::json!({
                        "src_text": src,
                        "tgt_text": tgt,
                        "style": style,
                    });
                    fs::write(
                        dir.join("meta.json"),
                        serde_json::to_string_pretty(&meta).expect("meta json"),
                    )
                    .map_err(|e| Error::io(dir.join("meta.json"), e))?;
                    Ok(SampleEntry::Synthetic {
                        id,
                        src_text: src,
                        tgt_text: tgt,
                        style,
                    })
                }
                CorpusKind::Real => {
                    let text = sample_word(&vocab, config.word_len, &mut rng);
                    let s = render_real(&text, &style, &regs, config, &mut rng)?;
                    save_rgb_png(&dir.join("i_s.png"), &s.i_s)?;
                    Ok(SampleEntry::Real {
                        id,
                        transcript: text,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let config_json = serde_json::to_string(config).expect("config json");
    let manifest = CorpusManifest {
        format_version: MANIFEST_VERSION,
        kind: config.kind,
        config: config.clone(),
        config_hash: sha256_hex(config_json.as_bytes()),
        samples: entries,
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )
    .map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Lazily loading handle over a synthetic corpus; samples decode on access.
pub struct SynthDataset {
    root: PathBuf,
    pub manifest: CorpusManifest,
    strict: bool,
}

/// Lazily loading handle over an unpaired corpus.
pub struct RealDataset {
    root: PathBuf,
    pub manifest: CorpusManifest,
}

pub enum Dataset {
    Synthetic(SynthDataset),
    Real(RealDataset),
}

/// Opens a dataset directory, checking that its kind matches `kind`.
/// `strict` enables per-sample invariant validation on load.
pub fn load_dataset(dir: &Path, kind: CorpusKind, strict: bool) -> Result<Dataset> {
    let manifest = CorpusManifest::load(dir)?;
    if manifest.kind != kind {
        return Err(Error::Data {
            sample: None,
            message: format!(
                "dataset at {} has kind {:?}, expected {kind:?}",
                dir.display(),
                manifest.kind
            ),
        });
    }
    Ok(match kind {
        CorpusKind::Synthetic => Dataset::Synthetic(SynthDataset {
            root: dir.to_path_buf(),
            manifest,
            strict,
        }),
        CorpusKind::Real => Dataset::Real(RealDataset {
            root: dir.to_path_buf(),
            manifest,
        }),
    })
}

fn expect_dims(
    what: &str,
    id: &str,
    got: &[usize],
    expected: &[usize],
) -> Result<()> {
    if got != expected {
        return Err(Error::Data {
            sample: Some(id.to_string()),
            message: format!("{what}: dimension mismatch, expected {expected:?}, got {got:?}"),
        });
    }
    Ok(())
}

impl SynthDataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn open(dir: &Path, strict: bool) -> Result<Self> {
        match load_dataset(dir, CorpusKind::Synthetic, strict)? {
            Dataset::Synthetic(d) => Ok(d),
            _ => unreachable!(),
        }
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn entry(&self, index: usize) -> &SampleEntry {
        &self.manifest.samples[index]
    }

    pub fn get(&self, index: usize) -> Result<SynthSample> {
        let entry = self.manifest.samples.get(index).ok_or_else(|| Error::Data {
            sample: None,
            message: format!("sample index {index} out of range"),
        })?;
        let (id, src_text, tgt_text) = match entry {
            SampleEntry::Synthetic {
                id,
                src_text,
                tgt_text,
                ..
            } => (id.clone(), src_text.clone(), tgt_text.clone()),
            SampleEntry::Real { id, .. } => {
                return Err(Error::Data {
                    sample: Some(id.clone()),
                    message: "real entry in synthetic dataset".into(),
                })
            }
        };
        let dir = self.root.join(&id);
        let i_s = load_rgb_png(&dir.join("i_s.png"))?;
        let i_t = load_rgb_png(&dir.join("i_t.png"))?;
        let t_t = load_rgb_png(&dir.join("t_t.png"))?;
        let t_b = load_rgb_png(&dir.join("t_b.png"))?;
        let t_guide_s = load_mask_png(&dir.join("mask_s.png"))?;
        let t_guide_t = load_mask_png(&dir.join("mask_t.png"))?;
        let sample = SynthSample {
            i_s,
            i_t,
            t_t,
            t_b,
            t_guide_s,
            t_guide_t,
            src_text,
            tgt_text,
        };
        if self.strict {
            self.validate(&id, &sample)?;
        }
        Ok(sample)
    }

    fn validate(&self, id: &str, s: &SynthSample) -> Result<()> {
        let (h, w) = (self.manifest.config.image_h, self.manifest.config.image_w);
        expect_dims("i_s", id, s.i_s.shape(), &[3, h, w])?;
        expect_dims("i_t", id, s.i_t.shape(), &[3, h, w])?;
        expect_dims("t_t", id, s.t_t.shape(), &[3, h, w])?;
        expect_dims("t_b", id, s.t_b.shape(), &[3, h, w])?;
        expect_dims("mask_s", id, s.t_guide_s.shape(), &[h, w])?;
        expect_dims("mask_t", id, s.t_guide_t.shape(), &[h, w])?;
        for (name, mask) in [("mask_s", &s.t_guide_s), ("mask_t", &s.t_guide_t)] {
            if mask.iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::Data {
                    sample: Some(id.to_string()),
                    message: format!("{name} is not binary"),
                });
            }
        }
        // off-stroke pixels must match the background exactly (8-bit PNG
        // quantization applied identically on both sides)
        for y in 0..h {
            for x in 0..w {
                if s.t_guide_s[[y, x]] == 0.0 {
                    for c in 0..3 {
                        if s.i_s[[c, y, x]] != s.t_b[[c, y, x]] {
                            return Err(Error::Data {
                                sample: Some(id.to_string()),
                                message: format!("i_s differs from t_b off-mask at ({y}, {x})"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl RealDataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn open(dir: &Path) -> Result<Self> {
        match load_dataset(dir, CorpusKind::Real, false)? {
            Dataset::Real(d) => Ok(d),
            _ => unreachable!(),
        }
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> Result<RealSample> {
        let entry = self.manifest.samples.get(index).ok_or_else(|| Error::Data {
            sample: None,
            message: format!("sample index {index} out of range"),
        })?;
        let (id, transcript) = match entry {
            SampleEntry::Real { id, transcript } => (id.clone(), transcript.clone()),
            SampleEntry::Synthetic { id, .. } => {
                return Err(Error::Data {
                    sample: Some(id.clone()),
                    message: "synthetic entry in real dataset".into(),
                })
            }
        };
        let i_s = load_rgb_png(&self.root.join(&id).join("i_s.png"))?;
        if transcript.is_empty() {
            return Err(Error::Data {
                sample: Some(id),
                message: "empty transcript".into(),
            });
        }
        Ok(RealSample { i_s, transcript })
    }
}
