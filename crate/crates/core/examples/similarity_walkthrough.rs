// Step through discretization, difference map, similarity mask and mask similarity
// for a pair of small patches.

use ptsp::similarity::{difference_map, discretize, mask_similarity, patch_similarity, rmse, similarity_mask};
use ptsp::{DiscretizationScheme, GrayImage};

fn show(name: &str, width: usize, cells: impl Iterator<Item = String>) {
    println!("{name}:");
    let cells: Vec<String> = cells.collect();
    for row in cells.chunks(width) {
        println!("  {}", row.join(" "));
    }
}

pub fn run_example() -> ptsp::Result<()> {
    let scheme = DiscretizationScheme::standard();
    println!("scheme {scheme}");

    let a = GrayImage::new(4, 2, vec![10, 70, 130, 250, 63, 64, 127, 128])?;
    let b = GrayImage::new(4, 2, vec![20, 140, 130, 30, 60, 70, 120, 200])?;
    let (da, db) = (discretize(&a, &scheme), discretize(&b, &scheme));
    show("levels a", 4, da.levels.iter().map(|v| v.to_string()));
    show("levels b", 4, db.levels.iter().map(|v| v.to_string()));

    let diff = difference_map(&da, &db)?;
    show("difference", 4, diff.values.iter().map(|v| v.to_string()));
    let mask = similarity_mask(&diff, &scheme)?;
    show("mask", 4, mask.values.iter().map(|v| format!("{v:.1}")));

    let s = mask_similarity(&mask);
    println!("mask similarity {s:.4} (chain: {:.4})", patch_similarity(&a, &b, &scheme)?);
    println!("rmse {:.3}", rmse(&a, &b)?);

    let two_level = DiscretizationScheme::new(vec![0, 128, 256], vec![1.0, 0.0])?;
    println!("two-level agreement {:.4}", patch_similarity(&a, &b, &two_level)?);
    Ok(())
}

fn main() -> ptsp::Result<()> {
    run_example()
}
