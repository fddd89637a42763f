// Degrade a phantom slice into a synthetic LDCT image and report what each step did.
//
// cargo run --example synthesize_ldct -- [OUT_DIR]

use std::path::PathBuf;

use ptsp::phantom::phantom;
use ptsp::similarity::rmse;
use ptsp::synthesize::{add_gaussian_noise, elastic_deform, image_rng, random_shift, synthesize_ldct, DisplacementField, SynthConfig};
use ptsp::{save_pgm, GrayImage};

fn differing(a: &GrayImage, b: &GrayImage) -> usize {
    a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count()
}

fn run(out: Option<PathBuf>) -> ptsp::Result<()> {
    let cfg = SynthConfig {
        seed: 11,
        ..SynthConfig::default()
    };
    let clean = phantom(128, 128, 5);

    let mut rng = image_rng(cfg.seed, 0);
    let (shifted, shift) = random_shift(&clean, &mut rng, &cfg)?;
    let deformed = elastic_deform(&shifted, &mut rng, &cfg)?;
    let noisy = add_gaussian_noise(&deformed, &mut rng, &cfg)?;
    println!("shift (dy, dx) = ({}, {})", shift.dy, shift.dx);
    println!("after shift:   {} pixels differ, rmse {:.2}", differing(&clean, &shifted), rmse(&clean, &shifted)?);
    println!("after elastic: {} pixels differ, rmse {:.2}", differing(&clean, &deformed), rmse(&clean, &deformed)?);
    println!("after noise:   {} pixels differ, rmse {:.2}", differing(&clean, &noisy), rmse(&clean, &noisy)?);

    let field = DisplacementField::random(128, 128, &mut image_rng(cfg.seed, 1), &cfg);
    println!("a fresh elastic field moves pixels by {:.3} px on average", field.mean_magnitude());

    let (again, _) = synthesize_ldct(&clean, &mut image_rng(cfg.seed, 0), &cfg)?;
    assert_eq!(again, noisy, "one call reproduces the three steps");

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| ptsp::Error::Config(format!("{}: {e}", dir.display())))?;
        save_pgm(&clean, dir.join("clean.pgm"))?;
        save_pgm(&noisy, dir.join("ldct.pgm"))?;
        println!("wrote clean.pgm and ldct.pgm to {}", dir.display());
    }
    Ok(())
}

pub fn run_example() -> ptsp::Result<()> {
    run(None)
}

fn main() -> ptsp::Result<()> {
    run(std::env::args().nth(1).map(PathBuf::from))
}
