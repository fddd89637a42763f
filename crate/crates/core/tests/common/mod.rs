#![allow(dead_code)]

use std::path::Path;

use ptsp::phantom::phantom;
use ptsp::synthesize::{elastic_deform, image_rng, SynthConfig};
use ptsp::{save_pgm, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `block`x`block` tiles, each filled with one of three mid-segment intensities of the
/// default scheme plus a little in-segment jitter.
pub fn block_texture(width: usize, height: usize, block: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bw = width.div_ceil(block);
    let bh = height.div_ceil(block);
    let levels: Vec<u8> = (0..bw * bh).map(|_| [32u8, 96, 192][rng.random_range(0..3)]).collect();
    let jitter: Vec<u8> = (0..width * height).map(|_| rng.random_range(0..20)).collect();
    GrayImage::from_fn(width, height, |r, c| levels[(r / block) * bw + c / block] - 10 + jitter[r * width + c])
}

pub fn random_image(width: usize, height: usize, rng: &mut impl Rng) -> GrayImage {
    GrayImage::from_fn(width, height, |_, _| rng.random())
}

/// Per-pixel similarity: level by linear scan, absolute level difference, weight lookup,
/// plain running sum divided by the pixel count.
pub fn oracle_similarity(a: &[u8], b: &[u8], points: &[u32], weights: &[f64]) -> f64 {
    let level = |v: u8| {
        let mut l = 0;
        while !(u32::from(v) >= points[l] && u32::from(v) < points[l + 1]) {
            l += 1;
        }
        l as i64
    };
    let mut total = 0.0;
    for i in 0..a.len() {
        let d = (level(a[i]) - level(b[i])).unsigned_abs() as usize;
        total += weights[d];
    }
    total / a.len() as f64
}

/// A random valid scheme with 2..=6 segments and strictly decreasing weights.
pub fn random_scheme(rng: &mut impl Rng) -> (Vec<u32>, Vec<f64>) {
    let n = rng.random_range(2..=6);
    let mut inner: Vec<u32> = Vec::new();
    while inner.len() < n - 1 {
        let t = rng.random_range(1..256);
        if !inner.contains(&t) {
            inner.push(t);
        }
    }
    inner.sort_unstable();
    let mut points = vec![0];
    points.extend(inner);
    points.push(256);
    let mut mids: Vec<f64> = (0..n - 2).map(|_| rng.random_range(0.01..0.99)).collect();
    mids.sort_by(|a, b| b.partial_cmp(a).unwrap());
    mids.dedup();
    let mut weights = vec![1.0];
    weights.extend(mids);
    weights.push(0.0);
    if weights.len() != n {
        return random_scheme(rng);
    }
    (points, weights)
}

/// `dir/clean` phantoms and `dir/ncct` mildly warped copies, `count` slices of `size`².
pub fn write_dataset(dir: &Path, count: u64, size: usize) {
    let warp = SynthConfig {
        alpha: 3.0,
        ..SynthConfig::default()
    };
    for sub in ["clean", "ncct"] {
        std::fs::create_dir_all(dir.join(sub)).unwrap();
    }
    for i in 0..count {
        let clean = phantom(size, size, 100 + i);
        let ncct = elastic_deform(&clean, &mut image_rng(1000, i), &warp).unwrap();
        save_pgm(&clean, dir.join("clean").join(format!("slice{i:03}.pgm"))).unwrap();
        save_pgm(&ncct, dir.join("ncct").join(format!("slice{i:03}.pgm"))).unwrap();
    }
}
