//! Procedurally generated background texture registry.
//!
//! Self-contained stand-in for a photographic background corpus: gradients,
//! value noise, stripes and vignettes, all derived deterministically from a
//! seed so corpora regenerate bit-identically.

use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::util::{derive_rng_indexed, resize_image, Image};

pub const TEXTURE_H: usize = 128;
pub const TEXTURE_W: usize = 256;

pub struct BackgroundRegistry {
    textures: Vec<Image>,
    seed: u64,
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn random_color(rng: &mut ChaCha12Rng) -> [f32; 3] {
    [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
}

fn value_noise(h: usize, w: usize, cells: usize, rng: &mut ChaCha12Rng) -> ndarray::Array2<f32> {
    let gh = cells + 1;
    let gw = 2 * cells + 1;
    let grid = ndarray::Array2::<f32>::from_shape_fn((gh, gw), |_| rng.gen_range(0.0..1.0));
    ndarray::Array2::from_shape_fn((h, w), |(y, x)| {
        let fy = y as f32 / h as f32 * (gh - 1) as f32;
        let fx = x as f32 / w as f32 * (gw - 1) as f32;
        let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
        let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
        // smoothstep for softer blobs
        let (ty, tx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
        let top = lerp(grid[[y0, x0]], grid[[y0, x1]], tx);
        let bot = lerp(grid[[y1, x0]], grid[[y1, x1]], tx);
        lerp(top, bot, ty)
    })
}

fn generate_texture(index: usize, seed: u64) -> Image {
    let mut rng = derive_rng_indexed(seed, &["background"], index as u64);
    let (h, w) = (TEXTURE_H, TEXTURE_W);
    let c0 = random_color(&mut rng);
    let c1 = random_color(&mut rng);
    match index % 5 {
        // linear gradient at a random angle
        0 => {
            let theta = rng.gen_range(0.0..std::f32::consts::TAU);
            let (s, c) = theta.sin_cos();
            Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
                let t = ((x as f32 / w as f32 - 0.5) * c + (y as f32 / h as f32 - 0.5) * s) + 0.5;
                lerp(c0[ch], c1[ch], t.clamp(0.0, 1.0))
            })
        }
        // radial gradient
        1 => {
            let (cy, cx) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
            Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
                let dy = y as f32 / h as f32 - cy;
                let dx = x as f32 / w as f32 - cx;
                let t = (dx * dx + dy * dy).sqrt() * 1.6;
                lerp(c0[ch], c1[ch], t.clamp(0.0, 1.0))
            })
        }
        // two-octave value noise between two colors
        2 => {
            let coarse = value_noise(h, w, 3, &mut rng);
            let fine = value_noise(h, w, 9, &mut rng);
            Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
                let t = 0.7 * coarse[[y, x]] + 0.3 * fine[[y, x]];
                lerp(c0[ch], c1[ch], t)
            })
        }
        // soft stripes
        3 => {
            let freq = rng.gen_range(2.0..9.0);
            let vertical = rng.gen_bool(0.5);
            let phase = rng.gen_range(0.0..std::f32::consts::TAU);
            Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
                let u = if vertical { x as f32 / w as f32 } else { y as f32 / h as f32 };
                let t = 0.5 + 0.5 * (u * freq * std::f32::consts::TAU + phase).sin();
                lerp(c0[ch], c1[ch], t * t * (3.0 - 2.0 * t))
            })
        }
        // near-flat with vignette
        _ => {
            let strength = rng.gen_range(0.1..0.4);
            Array3::from_shape_fn((3, h, w), |(ch, y, x)| {
                let dy = y as f32 / h as f32 - 0.5;
                let dx = x as f32 / w as f32 - 0.5;
                let v = 1.0 - strength * (dx * dx + dy * dy) * 4.0;
                (c0[ch] * v).clamp(0.0, 1.0)
            })
        }
    }
}

impl BackgroundRegistry {
    pub fn generate(count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::Data {
                sample: None,
                message: "background registry must not be empty".into(),
            });
        }
        use rayon::prelude::*;
        let textures: Vec<Image> = (0..count)
            .into_par_iter()
            .map(|i| generate_texture(i, seed))
            .collect();
        Ok(BackgroundRegistry { textures, seed })
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Random crop rectangle covering 40-100% of the texture.
    pub fn sample_crop(&self, rng: &mut ChaCha12Rng) -> (usize, usize, usize, usize) {
        let cw = rng.gen_range(TEXTURE_W * 2 / 5..=TEXTURE_W);
        let ch = rng.gen_range(TEXTURE_H * 2 / 5..=TEXTURE_H);
        let x = rng.gen_range(0..=TEXTURE_W - cw);
        let y = rng.gen_range(0..=TEXTURE_H - ch);
        (x, y, cw, ch)
    }

    /// Crops texture `id` at `(x, y, w, h)` and resizes to `(out_h, out_w)`.
    pub fn crop_resized(
        &self,
        id: usize,
        crop: (usize, usize, usize, usize),
        out_h: usize,
        out_w: usize,
    ) -> Result<Image> {
        let tex = self.textures.get(id).ok_or(Error::Registry {
            kind: "background",
            id,
            len: self.textures.len(),
        })?;
        let (x, y, w, h) = crop;
        if x + w > TEXTURE_W || y + h > TEXTURE_H || w == 0 || h == 0 {
            return Err(Error::Data {
                sample: None,
                message: format!("background crop ({x}, {y}, {w}, {h}) out of bounds"),
            });
        }
        let view = tex.slice(ndarray::s![.., y..y + h, x..x + w]).to_owned();
        Ok(resize_image(&view, out_h, out_w))
    }

    /// Mean luminance of a crop, for text-color contrast checks.
    pub fn crop_luminance(&self, id: usize, crop: (usize, usize, usize, usize)) -> Result<f32> {
        let img = self.crop_resized(id, crop, 8, 16)?;
        let mut acc = 0.0f32;
        for y in 0..8 {
            for x in 0..16 {
                acc += 0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]];
            }
        }
        Ok(acc / 128.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = BackgroundRegistry::generate(8, 3).unwrap();
        let b = BackgroundRegistry::generate(8, 3).unwrap();
        for (ta, tb) in a.textures.iter().zip(&b.textures) {
            assert_eq!(ta, tb);
        }
        let c = BackgroundRegistry::generate(8, 4).unwrap();
        assert_ne!(a.textures[0], c.textures[0]);
    }

    #[test]
    fn crops_stay_in_range() {
        let reg = BackgroundRegistry::generate(5, 1).unwrap();
        let mut rng = crate::util::derive_rng(1, &["crop-test"]);
        for _ in 0..50 {
            let crop = reg.sample_crop(&mut rng);
            let img = reg.crop_resized(0, crop, 32, 64).unwrap();
            assert_eq!(img.shape(), &[3, 32, 64]);
            for v in img.iter() {
                assert!(*v >= 0.0 && *v <= 1.0);
            }
        }
    }

    #[test]
    fn empty_registry_rejected() {
        assert!(BackgroundRegistry::generate(0, 1).is_err());
    }

    #[test]
    fn bad_crop_rejected() {
        let reg = BackgroundRegistry::generate(2, 1).unwrap();
        assert!(reg.crop_resized(0, (250, 0, 20, 20), 16, 32).is_err());
        assert!(reg.crop_resized(7, (0, 0, 20, 20), 16, 32).is_err());
    }
}
