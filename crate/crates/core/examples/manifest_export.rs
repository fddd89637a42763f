// Purify two slices, persist the manifest, read it back and export the patch files.
//
// cargo run --example manifest_export -- [OUT_DIR]

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ptsp::patchset::{export_patches, read_manifest, write_manifest, DatasetManifest, ManifestRecord};
use ptsp::phantom::phantom;
use ptsp::purify::{purify, ImageTriple, PurifyConfig};
use ptsp::synthesize::{image_rng, synthesize_ldct, SynthConfig};

fn run(out: &Path) -> ptsp::Result<()> {
    let cfg = PurifyConfig::default();
    let mut images = HashMap::new();
    let mut manifest = DatasetManifest::new(cfg.scheme.fingerprint());
    for (i, id) in ["slice_b", "slice_a"].into_iter().enumerate() {
        let ndct = phantom(128, 160, 40 + i as u64);
        let (ldct, _) = synthesize_ldct(&ndct, &mut image_rng(9, i as u64), &SynthConfig::default())?;
        let triple = ImageTriple::new(ldct, ndct.clone(), ndct)?;
        let kept = purify(&triple, &cfg)?;
        manifest.extend(kept.triplets.iter().map(|t| ManifestRecord::from_triplet(id, t, cfg.mode)));
        images.insert(id.to_string(), triple);
    }

    let path = out.join("manifest.jsonl");
    std::fs::create_dir_all(out).map_err(|e| ptsp::Error::Config(format!("{}: {e}", out.display())))?;
    write_manifest(&manifest, &path)?;
    let back = read_manifest(&path)?;
    assert_eq!(back, manifest);
    println!("{} records, first two lines of {}:", back.len(), path.display());
    for line in manifest.to_text().lines().take(2) {
        println!("  {line}");
    }

    let files = export_patches(&back, &images, out.join("patches"))?;
    println!("exported {} patch files, e.g. {}", files.len(), files[0].file_name().unwrap().to_string_lossy());
    Ok(())
}

pub fn run_example() -> ptsp::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| ptsp::Error::Config(e.to_string()))?;
    run(dir.path())
}

fn main() -> ptsp::Result<()> {
    match std::env::args().nth(1) {
        Some(d) => run(&PathBuf::from(d)),
        None => run_example(),
    }
}
