//! Synthetic LDCT degradation: random displacement, elastic deformation, Gaussian noise.
//!
//! Every step draws from an explicit generator, so a fixed seed reproduces the
//! output bit for bit. Batch synthesis seeds each image with `seed ^ index`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub type SynthRng = ChaCha8Rng;

/// Generator for image `index` of a batch seeded with `seed`.
pub fn image_rng(seed: u64, index: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub shift_min: usize,
    pub shift_max: usize,
    /// Elastic control factor, scales the smoothed displacement field.
    pub alpha: f64,
    /// Std of the Gaussian used to smooth the random field, in pixels.
    pub smooth_sigma: f64,
    /// Std of the additive noise, in intensity units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            shift_min: 2,
            shift_max: 5,
            alpha: 25.0,
            smooth_sigma: 8.0,
            noise_sigma: 40.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shift_min == 0 || self.shift_min > self.shift_max {
            return Err(Error::Config(format!(
                "need 0 < shift_min <= shift_max, got {}..{}",
                self.shift_min, self.shift_max
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.smooth_sigma > 0.0 && self.smooth_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "smooth_sigma must be > 0, got {}",
                self.smooth_sigma
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Integer translation `(dy, dx)`: `out[r][c] = in[r - dy][c - dx]` with edge replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shift {
    pub dy: i32,
    pub dx: i32,
}

pub fn apply_shift(img: &GrayImage, shift: Shift) -> GrayImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    GrayImage::from_fn(img.width(), img.height(), |r, c| {
        let sr = (r as i64 - shift.dy as i64).clamp(0, h - 1) as usize;
        let sc = (c as i64 - shift.dx as i64).clamp(0, w - 1) as usize;
        img.get(sr, sc)
    })
}

/// Shifts along exactly one axis by a magnitude drawn from `[shift_min, shift_max]`.
pub fn random_shift(img: &GrayImage, rng: &mut impl Rng, cfg: &SynthConfig) -> Result<(GrayImage, Shift)> {
    cfg.validate()?;
    if img.width() <= cfg.shift_max || img.height() <= cfg.shift_max {
        return Err(Error::Dimension(format!(
            "{}x{} image too small for shifts up to {} px",
            img.width(),
            img.height(),
            cfg.shift_max
        )));
    }
    let vertical = rng.random_bool(0.5);
    let magnitude = rng.random_range(cfg.shift_min..=cfg.shift_max) as i32;
    let signed = if rng.random_bool(0.5) { magnitude } else { -magnitude };
    let shift = if vertical {
        Shift { dy: signed, dx: 0 }
    } else {
        Shift { dy: 0, dx: signed }
    };
    Ok((apply_shift(img, shift), shift))
}

/// Per-pixel displacement in pixels; the output pixel `(r, c)` samples the input at
/// `(r + dy, c + dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl DisplacementField {
    pub fn constant(width: usize, height: usize, dy: f64, dx: f64) -> Self {
        Self {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
    }

    /// Random elastic field: uniform(-1, 1) noise per axis (all `dx` draws first, then
    /// all `dy`, row-major), smoothed by a Gaussian of std `smooth_sigma`, scaled by `alpha`.
    pub fn random(width: usize, height: usize, rng: &mut impl Rng, cfg: &SynthConfig) -> Self {
        let n = width * height;
        let raw_dx: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw_dy: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let kernel = gaussian_kernel(cfg.smooth_sigma);
        let scale = |v: Vec<f64>| -> Vec<f64> {
            smooth_separable(&v, width, height, &kernel)
                .into_iter()
                .map(|x| cfg.alpha * x)
                .collect()
        };
        Self {
            width,
            height,
            dx: scale(raw_dx),
            dy: scale(raw_dy),
        }
    }

    /// Mean Euclidean displacement length.
    pub fn mean_magnitude(&self) -> f64 {
        let sum: f64 = self
            .dx
            .iter()
            .zip(&self.dy)
            .map(|(x, y)| (x * x + y * y).sqrt())
            .sum();
        sum / self.dx.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.dx.iter().chain(&self.dy).all(|v| v.is_finite())
    }
}

/// Normalized Gaussian taps truncated at `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

fn smooth_separable(values: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as i64;
    let (w, h) = (width as i64, height as i64);
    let mut rows = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                let cc = (c as i64 + k as i64 - radius).clamp(0, w - 1) as usize;
                acc += tap * values[r * width + cc];
            }
            rows[r * width + c] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for (k, tap) in kernel.iter().enumerate() {
                let rr = (r as i64 + k as i64 - radius).clamp(0, h - 1) as usize;
                acc += tap * rows[rr * width + c];
            }
            out[r * width + c] = acc;
        }
    }
    out
}

/// Resamples `img` through `field` with bilinear interpolation and edge clamping.
pub fn warp(img: &GrayImage, field: &DisplacementField) -> Result<GrayImage> {
    if field.width != img.width() || field.height != img.height() {
        return Err(Error::Dimension(format!(
            "field {}x{} does not match image {}x{}",
            field.width,
            field.height,
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    Ok(GrayImage::from_fn(w, h, |r, c| {
        let i = r * w + c;
        let y = (r as f64 + field.dy[i]).clamp(0.0, max_y);
        let x = (c as f64 + field.dx[i]).clamp(0.0, max_x);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let p = |rr: usize, cc: usize| img.get(rr, cc) as f64;
        let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
        let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
        to_pixel(top * (1.0 - fy) + bottom * fy)
    }))
}

#[inline]
fn to_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn elastic_deform(img: &GrayImage, rng: &mut impl Rng, cfg: &SynthConfig) -> Result<GrayImage> {
    cfg.validate()?;
    let field = DisplacementField::random(img.width(), img.height(), rng, cfg);
    warp(img, &field)
}

/// `out = clip(round(in + n), 0, 255)` with i.i.d. `n ~ N(0, noise_sigma^2)`.
pub fn add_gaussian_noise(img: &GrayImage, rng: &mut impl Rng, cfg: &SynthConfig) -> Result<GrayImage> {
    cfg.validate()?;
    if cfg.noise_sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let data = img
        .data()
        .iter()
        .map(|&v| to_pixel(v as f64 + normal.sample(rng)))
        .collect();
    GrayImage::new(img.width(), img.height(), data)
}

/// Shift, then elastic deformation, then noise. Returns the applied shift.
pub fn synthesize_ldct(ndct: &GrayImage, rng: &mut impl Rng, cfg: &SynthConfig) -> Result<(GrayImage, Shift)> {
    let (shifted, shift) = random_shift(ndct, rng, cfg)?;
    let deformed = elastic_deform(&shifted, rng, cfg)?;
    let noisy = add_gaussian_noise(&deformed, rng, cfg)?;
    Ok((noisy, shift))
}

/// Degrades every image with its own generator `image_rng(cfg.seed, index)`.
/// Output order matches input order for any worker pool.
pub fn synthesize_batch(images: &[GrayImage], cfg: &SynthConfig) -> Result<Vec<(GrayImage, Shift)>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = image_rng(cfg.seed, i as u64);
            synthesize_ldct(img, &mut rng, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |r, c| ((r * 37 + c * 11 + (r * c) % 23) % 256) as u8)
    }

    #[test]
    fn shift_magnitudes_in_range() {
        let img = textured(16, 16);
        let cfg = SynthConfig::default();
        let mut rng = image_rng(7, 0);
        for _ in 0..500 {
            let (_, s) = random_shift(&img, &mut rng, &cfg).unwrap();
            assert!(s.dy == 0 || s.dx == 0);
            let m = (s.dy.abs() + s.dx.abs()) as usize;
            assert!((2..=5).contains(&m), "{s:?}");
        }
    }

    #[test]
    fn shift_definition_with_edge_replication() {
        let img = textured(10, 6);
        let out = apply_shift(&img, Shift { dy: 0, dx: 3 });
        for r in 0..6 {
            for c in 0..10 {
                let expect = if c >= 3 { img.get(r, c - 3) } else { img.get(r, 0) };
                assert_eq!(out.get(r, c), expect);
            }
        }
    }

    #[test]
    fn shift_rejects_small_images() {
        let img = textured(5, 20);
        let err = random_shift(&img, &mut image_rng(0, 0), &SynthConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn zero_alpha_is_identity() {
        let img = textured(20, 12);
        let cfg = SynthConfig { alpha: 0.0, ..Default::default() };
        let out = elastic_deform(&img, &mut image_rng(1, 0), &cfg).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_field_is_translation() {
        let img = textured(12, 9);
        let out = warp(&img, &DisplacementField::constant(12, 9, 0.0, 2.0)).unwrap();
        for r in 0..9 {
            for c in 0..12 {
                assert_eq!(out.get(r, c), img.get(r, (c + 2).min(11)));
            }
        }
    }

    #[test]
    fn field_statistics_match_independent_recomputation() {
        let cfg = SynthConfig::default();
        let (w, h) = (24usize, 17usize);
        let field = DisplacementField::random(w, h, &mut image_rng(99, 3), &cfg);
        assert!(field.is_finite());

        // oracle: same draws, direct 2-D convolution with a product kernel
        let mut rng = image_rng(99, 3);
        let n = w * h;
        let raw_x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw_y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let radius = (4.0 * cfg.smooth_sigma).ceil() as i64;
        let g = |i: i64| (-(i * i) as f64 / (2.0 * cfg.smooth_sigma.powi(2))).exp();
        let norm: f64 = (-radius..=radius).map(g).sum();
        let conv = |raw: &[f64], r: usize, c: usize| {
            let mut acc = 0.0;
            for i in -radius..=radius {
                for j in -radius..=radius {
                    let rr = (r as i64 + i).clamp(0, h as i64 - 1) as usize;
                    let cc = (c as i64 + j).clamp(0, w as i64 - 1) as usize;
                    acc += g(i) * g(j) * raw[rr * w + cc];
                }
            }
            cfg.alpha * acc / (norm * norm)
        };
        let mut total = 0.0;
        for r in 0..h {
            for c in 0..w {
                let (x, y) = (conv(&raw_x, r, c), conv(&raw_y, r, c));
                total += (x * x + y * y).sqrt();
            }
        }
        let oracle = total / n as f64;
        assert!((field.mean_magnitude() - oracle).abs() < 1e-9, "{} vs {oracle}", field.mean_magnitude());
    }

    #[test]
    fn zero_sigma_noise_is_identity() {
        let img = textured(8, 8);
        let cfg = SynthConfig { noise_sigma: 0.0, ..Default::default() };
        assert_eq!(add_gaussian_noise(&img, &mut image_rng(0, 0), &cfg).unwrap(), img);
    }

    #[test]
    fn black_image_noise_is_clipped_upwards() {
        let img = GrayImage::filled(64, 64, 0);
        let out = add_gaussian_noise(&img, &mut image_rng(5, 0), &SynthConfig::default()).unwrap();
        let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / 4096.0;
        assert!(mean > 0.0);
    }

    #[test]
    fn pure_shift_when_other_steps_disabled() {
        let img = textured(20, 20);
        let cfg = SynthConfig {
            shift_min: 2,
            shift_max: 2,
            alpha: 0.0,
            noise_sigma: 0.0,
            ..Default::default()
        };
        let (out, shift) = synthesize_ldct(&img, &mut image_rng(11, 0), &cfg).unwrap();
        assert_eq!(shift.dy.abs() + shift.dx.abs(), 2);
        assert_eq!(out, apply_shift(&img, shift));
    }

    #[test]
    fn default_pipeline_changes_textured_image_deterministically() {
        let img = textured(32, 32);
        let cfg = SynthConfig::default();
        let a = synthesize_ldct(&img, &mut image_rng(3, 0), &cfg).unwrap();
        let b = synthesize_ldct(&img, &mut image_rng(3, 0), &cfg).unwrap();
        assert_eq!(a, b);
        let hamming = a.0.data().iter().zip(img.data()).filter(|(x, y)| x != y).count();
        assert!(hamming > 0);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig { shift_min: 0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { shift_min: 6, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { smooth_sigma: 0.0, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { noise_sigma: -0.1, ..Default::default() }.validate().is_err());
    }
}
