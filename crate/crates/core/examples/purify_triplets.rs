// Select patch triplets from one synthetic slice with the PTSP, PSP and RMSE modes.

use ptsp::phantom::phantom;
use ptsp::purify::{purify, ImageTriple, PurifyConfig, PurifyMode};
use ptsp::synthesize::{apply_shift, image_rng, synthesize_ldct, Shift, SynthConfig};

pub fn run_example() -> ptsp::Result<()> {
    let ndct = phantom(192, 192, 21);
    let (ldct, shift) = synthesize_ldct(&ndct, &mut image_rng(3, 0), &SynthConfig::default())?;
    // guidance image displaced by two pixels against the NDCT
    let ncct = apply_shift(&ndct, Shift { dy: 2, dx: 0 });
    println!("LDCT shift ({}, {})", shift.dy, shift.dx);
    let triple = ImageTriple::new(ldct, ndct, ncct)?;

    for mode in [PurifyMode::Ptsp, PurifyMode::Psp, PurifyMode::Rmse] {
        let cfg = PurifyConfig {
            mode,
            ..PurifyConfig::default()
        };
        let out = purify(&triple, &cfg)?;
        println!("{mode:>4}: {} of {} locations kept ({:.0}%)", out.triplets.len(), out.enumerated, 100.0 * out.accept_rate());
        if let Some(t) = out.triplets.first() {
            println!(
                "      first at ({}, {}): sim_ln {:.3}, sim_lg {}, ncct offset ({}, {})",
                t.loc.top,
                t.loc.left,
                t.sim_ln,
                t.sim_lg.map_or("-".into(), |v| format!("{v:.3}")),
                t.ncct_offset.dy,
                t.ncct_offset.dx
            );
        }
    }

    let strict = PurifyConfig {
        threshold: 0.95,
        ..PurifyConfig::default()
    };
    println!("ptsp at s = 0.95 keeps {}", purify(&triple, &strict)?.triplets.len());
    Ok(())
}

fn main() -> ptsp::Result<()> {
    run_example()
}
