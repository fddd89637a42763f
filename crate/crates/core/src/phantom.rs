//! Deterministic synthetic slices for demos and fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::GrayImage;

/// A body-like slice: dark background, an elliptical body with low-frequency texture and
/// a few brighter or darker inner structures. Same `seed`, same image.
pub fn phantom(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let (cy, cx) = (h / 2.0, w / 2.0);
    let body = (0.44 * h, 0.46 * w);
    let organs: Vec<(f64, f64, f64, f64, f64)> = (0..5)
        .map(|_| {
            let oy = cy + rng.random_range(-0.2..0.2) * h;
            let ox = cx + rng.random_range(-0.2..0.2) * w;
            let ry = rng.random_range(0.06..0.14) * h;
            let rx = rng.random_range(0.06..0.14) * w;
            (oy, ox, ry, rx, rng.random_range(80.0..235.0))
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let period = rng.random_range(14.0..40.0);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let k = std::f64::consts::TAU / period;
            (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(4.0..9.0))
        })
        .collect();
    let inside = |y: f64, x: f64, oy: f64, ox: f64, ry: f64, rx: f64| ((y - oy) / ry).powi(2) + ((x - ox) / rx).powi(2) <= 1.0;

    GrayImage::from_fn(width, height, |r, c| {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        if !inside(y, x, cy, cx, body.0, body.1) {
            return 12;
        }
        let mut v = 150.0;
        for &(oy, ox, ry, rx, level) in &organs {
            if inside(y, x, oy, ox, ry, rx) {
                v = level;
            }
        }
        v += waves.iter().map(|&(ky, kx, ph, amp)| amp * (ky * y + kx * x + ph).sin()).sum::<f64>();
        v.round().clamp(0.0, 255.0) as u8
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_varied() {
        let a = phantom(64, 48, 3);
        assert_eq!((a.width(), a.height()), (64, 48));
        assert_eq!(a, phantom(64, 48, 3));
        assert_ne!(a, phantom(64, 48, 4));
        assert_eq!(a.get(0, 0), 12);
        let distinct: std::collections::BTreeSet<u8> = a.data().iter().copied().collect();
        assert!(distinct.len() > 20);
    }
}
