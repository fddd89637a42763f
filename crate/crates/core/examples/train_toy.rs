// Train the guided toy denoiser on synthetic 8x8 triplets and print the loss curve summary.
//
// cargo run --example train_toy -- [steps] [seed]

use std::time::Instant;

use ptsp::toytrain::{synthetic_triplets, train_toy, ToyDims, TrainConfig};

fn run(steps: usize, seed: u64) -> ptsp::Result<()> {
    let data = synthetic_triplets(512, 8, seed)?;
    let cfg = TrainConfig {
        steps,
        seed,
        ..TrainConfig::default()
    };
    let t = Instant::now();
    let out = train_toy(&data, ToyDims::default(), &cfg)?;
    for p in out.curve.iter().step_by((steps / 10).max(1)) {
        println!("step {:5}  lr {:.2e}  loss {:.5}", p.step, p.lr, p.loss);
    }
    println!(
        "initial {:.5} -> final {:.5} ({:.1}% of initial) in {:.2?}",
        out.initial_loss,
        out.final_loss,
        100.0 * out.final_loss / out.initial_loss,
        t.elapsed()
    );
    Ok(())
}

pub fn run_example() -> ptsp::Result<()> {
    run(100, 7)
}

fn main() -> ptsp::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(7);
    run(steps, seed)
}
