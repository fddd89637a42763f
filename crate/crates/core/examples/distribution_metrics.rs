// Fréchet distance and polynomial MMD² between pooled features of clean, lightly noised
// and heavily noised phantom sets.

use ptsp::metrics::{FeatureSet, MetricsReport, PoolExtractor};
use ptsp::phantom::phantom;
use ptsp::synthesize::{add_gaussian_noise, image_rng, SynthConfig};
use ptsp::GrayImage;

fn noised(images: &[GrayImage], sigma: f64) -> ptsp::Result<Vec<GrayImage>> {
    let cfg = SynthConfig {
        noise_sigma: sigma,
        ..SynthConfig::default()
    };
    images
        .iter()
        .enumerate()
        .map(|(i, img)| add_gaussian_noise(img, &mut image_rng(77, i as u64), &cfg))
        .collect()
}

pub fn run_example() -> ptsp::Result<()> {
    let clean: Vec<GrayImage> = (0..12).map(|i| phantom(64, 64, i)).collect();
    let ext = PoolExtractor::default();
    let reference = FeatureSet::extract(&clean, &ext)?;
    for sigma in [0.0, 10.0, 60.0] {
        let other = FeatureSet::extract(&noised(&clean, sigma)?, &ext)?;
        println!("sigma {sigma:>4}: {}", MetricsReport::compare(&reference, &other, false)?);
    }
    Ok(())
}

fn main() -> ptsp::Result<()> {
    run_example()
}
