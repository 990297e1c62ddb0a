//! Pair rendering: glyph canvas -> rotation + perspective placement ->
//! alpha compositing over a shared background.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::util::{Image, Mask};

use super::{BackgroundRegistry, FontRegistry, GenConfig, RealSample, StyleSpec, SynthSample, MAX_TEXT_LEN};

pub struct Registries {
    pub fonts: FontRegistry,
    pub backgrounds: BackgroundRegistry,
    pub canonical_font_id: usize,
}

impl Registries {
    pub fn open(config: &GenConfig) -> Result<Self> {
        let fonts_dir = super::resolve_fonts_dir(config.fonts_dir.as_deref());
        // only fonts covering the whole vocabulary participate; ids index
        // the filtered registry in sorted-filename order
        let fonts = FontRegistry::load_dir(&fonts_dir)?.filter_supporting(&config.vocab)?;
        let canonical_font_id = fonts.id_by_name(&config.canonical_font).ok_or_else(|| {
            Error::Config(format!(
                "canonical font {:?} not found in {} (or it lacks vocabulary glyphs)",
                config.canonical_font,
                fonts_dir.display()
            ))
        })?;
        let backgrounds = BackgroundRegistry::generate(config.n_backgrounds, config.background_seed)?;
        Ok(Registries {
            fonts,
            backgrounds,
            canonical_font_id,
        })
    }
}

/// Homography fit from 4 point correspondences (from -> to), as a 3x3
/// row-major matrix. Standard DLT with the bottom-right entry pinned to 1.
fn homography(from: &[[f64; 2]; 4], to: &[[f64; 2]; 4]) -> Result<[f64; 9]> {
    let mut a = DMatrix::<f64>::zeros(8, 8);
    let mut b = DVector::<f64>::zeros(8);
    for i in 0..4 {
        let (x, y) = (from[i][0], from[i][1]);
        let (u, v) = (to[i][0], to[i][1]);
        a[(2 * i, 0)] = x;
        a[(2 * i, 1)] = y;
        a[(2 * i, 2)] = 1.0;
        a[(2 * i, 6)] = -u * x;
        a[(2 * i, 7)] = -u * y;
        b[2 * i] = u;
        a[(2 * i + 1, 3)] = x;
        a[(2 * i + 1, 4)] = y;
        a[(2 * i + 1, 5)] = 1.0;
        a[(2 * i + 1, 6)] = -v * x;
        a[(2 * i + 1, 7)] = -v * y;
        b[2 * i + 1] = v;
    }
    let h = a.lu().solve(&b).ok_or_else(|| Error::Singular {
        context: "perspective placement".into(),
        message: "degenerate corner configuration".into(),
    })?;
    Ok([h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0])
}

/// Where the glyph canvas corners land in the image, after uniform scaling
/// to fit, rotation about the centre, and radial perspective displacement.
fn placed_corners(
    canvas_w: f64,
    canvas_h: f64,
    style: &StyleSpec,
    img_w: f64,
    img_h: f64,
) -> [[f64; 2]; 4] {
    let scale = (0.94 * img_w / canvas_w).min(0.9 * img_h / canvas_h).min(1.0);
    let (cx, cy) = (img_w / 2.0, img_h / 2.0);
    let (hw, hh) = (canvas_w * scale / 2.0, canvas_h * scale / 2.0);
    let theta = style.rotation_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let base = [[-hw, -hh], [hw, -hh], [hw, hh], [-hw, hh]];
    let mut out = [[0.0f64; 2]; 4];
    for (i, p) in base.iter().enumerate() {
        let rx = c * p[0] - s * p[1];
        let ry = s * p[0] + c * p[1];
        let k = 1.0 + style.perspective_coeffs[i];
        out[i] = [cx + k * rx, cy + k * ry];
    }
    out
}

/// Samples the canvas through the inverse homography; returns an alpha map
/// over the image frame.
fn warp_alpha(
    canvas: &Array2<f32>,
    corners: &[[f64; 2]; 4],
    img_w: usize,
    img_h: usize,
) -> Result<Array2<f32>> {
    let (ch, cw) = canvas.dim();
    let canvas_corners = [
        [0.0, 0.0],
        [cw as f64 - 1.0, 0.0],
        [cw as f64 - 1.0, ch as f64 - 1.0],
        [0.0, ch as f64 - 1.0],
    ];
    let h_inv = homography(corners, &canvas_corners)?;
    let mut out = Array2::<f32>::zeros((img_h, img_w));
    for y in 0..img_h {
        for x in 0..img_w {
            let (px, py) = (x as f64, y as f64);
            let w = h_inv[6] * px + h_inv[7] * py + h_inv[8];
            if w.abs() < 1e-12 {
                continue;
            }
            let qx = (h_inv[0] * px + h_inv[1] * py + h_inv[2]) / w;
            let qy = (h_inv[3] * px + h_inv[4] * py + h_inv[5]) / w;
            if qx < 0.0 || qy < 0.0 || qx > (cw - 1) as f64 || qy > (ch - 1) as f64 {
                continue;
            }
            let (x0, y0) = (qx.floor() as usize, qy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(cw - 1), (y0 + 1).min(ch - 1));
            let (fx, fy) = ((qx - x0 as f64) as f32, (qy - y0 as f64) as f32);
            let top = canvas[[y0, x0]] * (1.0 - fx) + canvas[[y0, x1]] * fx;
            let bot = canvas[[y1, x0]] * (1.0 - fx) + canvas[[y1, x1]] * fx;
            out[[y, x]] = top * (1.0 - fy) + bot * fy;
        }
    }
    Ok(out)
}

fn validate_text(text: &str) -> Result<()> {
    if text.is_empty() {
        return Err(Error::Data {
            sample: None,
            message: "text must be non-empty".into(),
        });
    }
    let n = text.chars().count();
    if n > MAX_TEXT_LEN {
        return Err(Error::Data {
            sample: None,
            message: format!("text length {n} exceeds the maximum of {MAX_TEXT_LEN}"),
        });
    }
    Ok(())
}

/// Styled stroke alpha for `text` in the image frame, plus the binarized
/// mask. The composited alpha is truncated below the 0.5 threshold so
/// off-mask pixels inherit the background bit-exactly while on-mask strokes
/// keep their anti-aliased profile.
fn styled_alpha(
    text: &str,
    style: &StyleSpec,
    regs: &Registries,
    img_w: usize,
    img_h: usize,
) -> Result<(Array2<f32>, Mask)> {
    let canvas = regs.fonts.rasterize(
        style.font_id,
        text,
        style.glyph_height_px as f32,
        style.curve_amplitude as f32,
    )?;
    let corners = placed_corners(
        canvas.ncols() as f64,
        canvas.nrows() as f64,
        style,
        img_w as f64,
        img_h as f64,
    );
    let alpha = warp_alpha(&canvas, &corners, img_w, img_h)?;
    let mask = alpha.mapv(|a| if a >= 0.5 { 1.0f32 } else { 0.0 });
    let alpha_eff = alpha.mapv(|a| if a >= 0.5 { a } else { 0.0 });
    Ok((alpha_eff, mask))
}

fn composite(bg: &Image, alpha: &Array2<f32>, color: [f32; 3]) -> Image {
    let (h, w) = alpha.dim();
    Array3::from_shape_fn((3, h, w), |(c, y, x)| {
        let a = alpha[[y, x]];
        a * color[c] + (1.0 - a) * bg[[c, y, x]]
    })
}

/// Renders a labeled pair: source and target text in the same style over
/// the same background. Deterministic given (texts, style).
pub fn render_pair(
    src_text: &str,
    tgt_text: &str,
    style: &StyleSpec,
    regs: &Registries,
    config: &GenConfig,
) -> Result<SynthSample> {
    validate_text(src_text)?;
    validate_text(tgt_text)?;
    let (w, h) = (config.image_w, config.image_h);
    let bg = regs
        .backgrounds
        .crop_resized(style.background_id, style.background_crop, h, w)?;
    let (alpha_s, mask_s) = styled_alpha(src_text, style, regs, w, h)?;
    let (alpha_t, mask_t) = styled_alpha(tgt_text, style, regs, w, h)?;
    let i_s = composite(&bg, &alpha_s, style.text_color);
    let t_t = composite(&bg, &alpha_t, style.text_color);
    let i_t = render_canonical(tgt_text, regs, config)?;
    Ok(SynthSample {
        i_s,
        i_t,
        t_t,
        t_b: bg,
        t_guide_s: mask_s,
        t_guide_t: mask_t,
        src_text: src_text.to_string(),
        tgt_text: tgt_text.to_string(),
    })
}

/// The standard target-text image: canonical font, mid-gray background,
/// black ink, centred, no spatial transform.
pub fn render_canonical(text: &str, regs: &Registries, config: &GenConfig) -> Result<Image> {
    validate_text(text)?;
    let (w, h) = (config.image_w, config.image_h);
    let style = StyleSpec {
        font_id: regs.canonical_font_id,
        text_color: [0.0, 0.0, 0.0],
        glyph_height_px: ((h as f64) * 0.62).round() as u32,
        rotation_deg: 0.0,
        curve_amplitude: 0.0,
        perspective_coeffs: [0.0; 4],
        background_id: 0,
        background_crop: (0, 0, 1, 1),
        seed: 0,
    };
    let (alpha, _mask) = styled_alpha(text, &style, regs, w, h)?;
    let bg = Array3::from_elem((3, h, w), 0.5f32);
    Ok(composite(&bg, &alpha, style.text_color))
}

/// Brightness / contrast / gamma jitter plus light Gaussian noise; applied
/// to the unpaired "real" stand-in corpus to open a small domain gap.
pub fn photometric_jitter(img: &Image, rng: &mut ChaCha12Rng) -> Image {
    let brightness = rng.gen_range(-0.08..0.08f32);
    let contrast = rng.gen_range(0.85..1.15f32);
    let gamma = rng.gen_range(0.8..1.25f32);
    let sigma = rng.gen_range(0.0..0.02f32);
    let mut out = img.mapv(|v| {
        let g = v.max(0.0).powf(gamma);
        ((g - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0)
    });
    if sigma > 0.0 {
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0f32, sigma).unwrap();
        out.mapv_inplace(|v| (v + noise.sample(rng)).clamp(0.0, 1.0));
    }
    out
}

/// One unpaired sample: styled render of `text` with photometric jitter.
pub fn render_real(
    text: &str,
    style: &StyleSpec,
    regs: &Registries,
    config: &GenConfig,
    rng: &mut ChaCha12Rng,
) -> Result<RealSample> {
    validate_text(text)?;
    let (w, h) = (config.image_w, config.image_h);
    let bg = regs
        .backgrounds
        .crop_resized(style.background_id, style.background_crop, h, w)?;
    let (alpha, _mask) = styled_alpha(text, style, regs, w, h)?;
    let i_s = photometric_jitter(&composite(&bg, &alpha, style.text_color), rng);
    Ok(RealSample {
        i_s,
        transcript: text.to_string(),
    })
}
