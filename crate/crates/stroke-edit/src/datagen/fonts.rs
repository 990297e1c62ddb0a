//! Font registry and glyph rasterization.
//!
//! Fonts are loaded from a directory of TTFs in sorted filename order, so a
//! font id is stable for a given directory. Rasterization produces an
//! anti-aliased alpha canvas per text line, with per-glyph baseline offsets
//! implementing the curve transform.

use std::path::{Path, PathBuf};

use ab_glyph::{point, Font, FontArc, PxScale, ScaleFont};
use ndarray::Array2;

use crate::error::{Error, Result};

pub struct FontRegistry {
    fonts: Vec<FontArc>,
    names: Vec<String>,
    dir: PathBuf,
}

impl FontRegistry {
    /// Loads every `*.ttf` in `dir`, sorted by filename.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .map(|e| e.eq_ignore_ascii_case("ttf"))
                    .unwrap_or(false)
            })
            .collect();
        paths.sort();
        let mut fonts = Vec::new();
        let mut names = Vec::new();
        for p in paths {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let font = FontArc::try_from_vec(bytes).map_err(|e| Error::Data {
                sample: None,
                message: format!("{}: {e}", p.display()),
            })?;
            fonts.push(font);
            names.push(
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
        }
        if fonts.is_empty() {
            return Err(Error::Data {
                sample: None,
                message: format!("no .ttf fonts found in {}", dir.display()),
            });
        }
        Ok(FontRegistry {
            fonts,
            names,
            dir: dir.to_path_buf(),
        })
    }

    /// Keeps only fonts that map every character of `charset`; font ids
    /// re-index the filtered set.
    pub fn filter_supporting(self, charset: &str) -> Result<Self> {
        let mut fonts = Vec::new();
        let mut names = Vec::new();
        for (font, name) in self.fonts.into_iter().zip(self.names) {
            if charset.chars().all(|ch| font.glyph_id(ch).0 != 0) {
                fonts.push(font);
                names.push(name);
            }
        }
        if fonts.is_empty() {
            return Err(Error::Data {
                sample: None,
                message: format!(
                    "no font in {} covers the vocabulary {charset:?}",
                    self.dir.display()
                ),
            });
        }
        Ok(FontRegistry {
            fonts,
            names,
            dir: self.dir,
        })
    }

    pub fn len(&self) -> usize {
        self.fonts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fonts.is_empty()
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn font(&self, id: usize) -> Result<&FontArc> {
        self.fonts.get(id).ok_or(Error::Registry {
            kind: "font",
            id,
            len: self.fonts.len(),
        })
    }

    /// True if the font maps every character of `text` to a real glyph.
    pub fn check_support(&self, id: usize, text: &str) -> Result<()> {
        let font = self.font(id)?;
        for ch in text.chars() {
            if font.glyph_id(ch).0 == 0 {
                return Err(Error::UnsupportedChar {
                    ch,
                    code: ch as u32,
                    context: format!("font {}", self.names[id]),
                });
            }
        }
        Ok(())
    }

    /// Rasterizes `text` at `glyph_height_px` with an optional sinusoidal
    /// baseline displacement (`curve_amplitude` as a fraction of the glyph
    /// height). Returns an alpha canvas in [0, 1].
    pub fn rasterize(
        &self,
        id: usize,
        text: &str,
        glyph_height_px: f32,
        curve_amplitude: f32,
    ) -> Result<Array2<f32>> {
        self.check_support(id, text)?;
        let font = self.font(id)?;
        let scaled = font.as_scaled(PxScale::from(glyph_height_px));
        let ascent = scaled.ascent();
        let descent = scaled.descent(); // negative
        let line_height = ascent - descent;
        let amp = curve_amplitude * glyph_height_px;

        // first pass: advances and total width
        let chars: Vec<char> = text.chars().collect();
        let mut advances = Vec::with_capacity(chars.len());
        let mut total = 0.0f32;
        let mut prev = None;
        for &ch in &chars {
            let gid = scaled.glyph_id(ch);
            let mut adv = scaled.h_advance(gid);
            if let Some(p) = prev {
                adv += scaled.kern(p, gid);
            }
            advances.push(adv);
            total += adv;
            prev = Some(gid);
        }

        let pad = (glyph_height_px * 0.15).ceil() + amp.abs().ceil();
        let width = (total.ceil() + 2.0 * pad) as usize;
        let height = (line_height.ceil() + 2.0 * pad) as usize;
        let mut canvas = Array2::<f32>::zeros((height.max(1), width.max(1)));

        let mut pen_x = pad;
        for (i, &ch) in chars.iter().enumerate() {
            let gid = scaled.glyph_id(ch);
            // curve: arch displacement by glyph centre position
            let t = if total > 0.0 {
                (pen_x + advances[i] * 0.5 - pad) / total
            } else {
                0.5
            };
            let dy = -amp * (std::f32::consts::PI * t).sin();
            let glyph = gid.with_scale_and_position(
                PxScale::from(glyph_height_px),
                point(pen_x, pad + ascent + dy),
            );
            if let Some(outlined) = scaled.outline_glyph(glyph) {
                let bounds = outlined.px_bounds();
                outlined.draw(|gx, gy, cov| {
                    let x = bounds.min.x as i32 + gx as i32;
                    let y = bounds.min.y as i32 + gy as i32;
                    if x >= 0 && y >= 0 && (y as usize) < canvas.nrows() && (x as usize) < canvas.ncols() {
                        let slot = &mut canvas[[y as usize, x as usize]];
                        *slot = slot.max(cov.clamp(0.0, 1.0));
                    }
                });
            }
            pen_x += advances[i];
        }
        Ok(canvas)
    }
}

/// Resolution order for the font directory: explicit argument, then
/// `$STROKE_EDIT_CACHE/fonts`, then `./assets/fonts`, then the fonts bundled
/// with the source tree.
pub fn resolve_fonts_dir(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(cache) = std::env::var("STROKE_EDIT_CACHE") {
        let p = Path::new(&cache).join("fonts");
        if p.is_dir() {
            return p;
        }
    }
    let local = Path::new("assets/fonts");
    if local.is_dir() {
        return local.to_path_buf();
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/fonts")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> FontRegistry {
        FontRegistry::load_dir(&resolve_fonts_dir(None)).unwrap()
    }

    #[test]
    fn registry_loads_at_least_ten_fonts() {
        let reg = registry();
        assert!(reg.len() >= 10, "only {} fonts", reg.len());
        assert!(reg.id_by_name("DejaVuSansMono.ttf").is_some());
    }

    #[test]
    fn unknown_font_id_is_a_registry_error() {
        let reg = registry();
        let err = reg.rasterize(9999, "abc", 20.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::Registry { kind: "font", .. }));
    }

    #[test]
    fn missing_glyph_names_the_codepoint() {
        let reg = registry();
        let err = reg.rasterize(0, "a\u{0E01}b", 20.0, 0.0).unwrap_err();
        match err {
            Error::UnsupportedChar { ch, .. } => assert_eq!(ch, '\u{0E01}'),
            other => panic!("expected UnsupportedChar, got {other}"),
        }
    }

    #[test]
    fn rasterized_text_has_ink() {
        let reg = registry();
        let canvas = reg.rasterize(0, "hello", 24.0, 0.0).unwrap();
        let ink: f32 = canvas.iter().sum();
        assert!(ink > 50.0, "too little ink: {ink}");
        for v in canvas.iter() {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn longer_words_have_more_mask_pixels_in_monospace() {
        let reg = registry();
        let mono = reg.id_by_name("DejaVuSansMono.ttf").unwrap();
        let a = reg.rasterize(mono, "cat", 20.0, 0.0).unwrap();
        let b = reg.rasterize(mono, "elephant", 20.0, 0.0).unwrap();
        let count = |c: &Array2<f32>| c.iter().filter(|v| **v >= 0.5).count();
        assert!(count(&b) > count(&a));
    }

    #[test]
    fn curve_widens_the_vertical_ink_span() {
        let reg = registry();
        let flat = reg.rasterize(0, "ooooo", 20.0, 0.0).unwrap();
        let curved = reg.rasterize(0, "ooooo", 20.0, 0.4).unwrap();
        let span = |c: &Array2<f32>| {
            let rows: Vec<usize> = c
                .rows()
                .into_iter()
                .enumerate()
                .filter(|(_, r)| r.iter().any(|v| *v >= 0.5))
                .map(|(i, _)| i)
                .collect();
            rows.last().unwrap() - rows.first().unwrap()
        };
        assert!(
            span(&curved) > span(&flat),
            "baseline displacement should widen the ink span"
        );
    }
}
