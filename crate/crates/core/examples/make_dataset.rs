// Write a small directory dataset for trying the command line:
// `OUT/clean/*.pgm` (NDCT stand-ins) and `OUT/ncct/*.pgm` (mildly warped copies).
//
// cargo run --example make_dataset -- OUT [count] [size]

use std::fs;
use std::path::{Path, PathBuf};

use ptsp::phantom::phantom;
use ptsp::synthesize::{elastic_deform, image_rng, SynthConfig};
use ptsp::{save_pgm, Error};

fn run(out: &Path, count: u64, size: usize) -> ptsp::Result<()> {
    let warp = SynthConfig {
        alpha: 3.0,
        ..SynthConfig::default()
    };
    for sub in ["clean", "ncct"] {
        let dir = out.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    }
    for i in 0..count {
        let clean = phantom(size, size, 100 + i);
        let ncct = elastic_deform(&clean, &mut image_rng(1000, i), &warp)?;
        save_pgm(&clean, out.join("clean").join(format!("slice{i:03}.pgm")))?;
        save_pgm(&ncct, out.join("ncct").join(format!("slice{i:03}.pgm")))?;
    }
    println!("wrote {count} slices of {size}x{size} under {}", out.display());
    Ok(())
}

pub fn run_example() -> ptsp::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| Error::Config(e.to_string()))?;
    run(dir.path(), 2, 96)
}

fn main() -> ptsp::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "dataset".into()));
    let count = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let size = args.next().and_then(|s| s.parse().ok()).unwrap_or(160);
    run(&out, count, size)
}
