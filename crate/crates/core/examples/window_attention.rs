// Guided window cross-attention on a small feature map, then a gradient check of one
// window block.

use ptsp::attention::{attend_feature_map, build_bias, grad_check, relative_position_index, AttentionBlock, AttentionMode, AttentionParams, FeatureMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> ptsp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = 4;
    let params = AttentionParams::random(m, 6, 6, AttentionMode::CrossAttention, &mut rng);
    let idx = relative_position_index(m);
    println!("window {m}: {} bias entries, token 0 -> token 1 uses entry {}", params.bias_table.len(), idx[1]);
    let bias = build_bias(&params)?;
    println!("bias matrix {}x{}", bias.rows(), bias.cols());

    let ldct = FeatureMap::random(8, 8, 6, &mut rng);
    let ncct = FeatureMap::random(8, 8, 6, &mut rng);
    let out = attend_feature_map(&params, &ldct, Some(&ncct))?;
    println!("attended {}x{}x{} feature map, first value {:.5}", out.height, out.width, out.channels, out.data[0]);

    for mode in [AttentionMode::SelfAttention, AttentionMode::CrossAttention] {
        let mut block = AttentionBlock::random(2, 3, 4, mode, 7);
        let report = grad_check(&mut block, 1e-5, 1e-5);
        print!("{mode:?}: {report}");
    }
    Ok(())
}

fn main() -> ptsp::Result<()> {
    run_example()
}
