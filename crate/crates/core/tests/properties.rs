mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ptsp::attention::{
    attention_forward, window_attention, window_partition, window_reverse, AttentionMode, AttentionParams, FeatureMap,
    Matrix,
};
use ptsp::metrics::{frechet_distance, matrix_sqrt_psd, poly_mmd2, FeatureSet, PolyKernel};
use ptsp::purify::{purify, search_best_ncct, ImageTriple, Offset, PurifyConfig, PurifyMode};
use ptsp::similarity::{discretize, patch_similarity};
use ptsp::synthesize::{add_gaussian_noise, elastic_deform, image_rng, synthesize_ldct, SynthConfig};
use ptsp::toytrain::{adamw_step, charbonnier, AdamHyper, AdamState};
use ptsp::{DiscretizationScheme, GrayImage, PatchLoc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn image(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    proptest::collection::vec(any::<u8>(), w * h).prop_map(move |d| GrayImage::new(w, h, d).unwrap())
}

fn scheme() -> impl Strategy<Value = DiscretizationScheme> {
    any::<u64>().prop_map(|seed| {
        let (p, w) = common::random_scheme(&mut ChaCha8Rng::seed_from_u64(seed));
        DiscretizationScheme::new(p, w).unwrap()
    })
}

fn rng_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::random(rows, cols, 2.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn similarity_matches_oracle_for_any_scheme(a in image(8, 8), b in image(8, 8), s in scheme()) {
        let got = patch_similarity(&a, &b, &s).unwrap();
        let want = common::oracle_similarity(a.data(), b.data(), s.points(), s.weights());
        prop_assert!((got - want).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!(discretize(&a, &s).levels.iter().all(|&l| (l as usize) < s.levels()));
    }

    #[test]
    fn two_levels_count_agreement(a in image(8, 8), b in image(8, 8), t in 1u32..256) {
        let s = DiscretizationScheme::new(vec![0, t, 256], vec![1.0, 0.0]).unwrap();
        let agree = a.data().iter().zip(b.data()).filter(|(x, y)| (u32::from(**x) < t) == (u32::from(**y) < t)).count();
        prop_assert_eq!(patch_similarity(&a, &b, &s).unwrap(), agree as f64 / 64.0);
    }

    #[test]
    fn search_is_exhaustive_argmax(probe in image(8, 8), target in image(24, 24), top in 0usize..17, left in 0usize..17, r in 0usize..6) {
        let cfg = PurifyConfig { patch: 8, stride: 8, radius: r, ..PurifyConfig::default() };
        let center = PatchLoc::new(top, left, 8);
        let (off, sim) = search_best_ncct(&probe, &target, center, &cfg).unwrap();
        let mut best: Option<(f64, Offset)> = None;
        let r = r as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let (t, l) = (top as i64 + dy, left as i64 + dx);
                if t < 0 || l < 0 || t + 8 > 24 || l + 8 > 24 {
                    continue;
                }
                let cand = target.crop(PatchLoc::new(t as usize, l as usize, 8)).unwrap();
                let s = common::oracle_similarity(probe.data(), cand.data(), cfg.scheme.points(), cfg.scheme.weights());
                let o = Offset::new(dy as i32, dx as i32);
                let better = match best {
                    None => true,
                    Some((bs, bo)) => s > bs || (s == bs && (o.manhattan(), o.dy, o.dx) < (bo.manhattan(), bo.dy, bo.dx)),
                };
                if better {
                    best = Some((s, o));
                }
            }
        }
        let (bs, bo) = best.unwrap();
        prop_assert_eq!(off, bo);
        prop_assert!((sim - bs).abs() <= 1e-12);
    }

    #[test]
    fn raising_threshold_never_accepts_more(seed in any::<u64>(), lo in 0.3f64..0.9, d in 0.0f64..0.09) {
        let clean = common::block_texture(96, 96, 4, seed);
        let noisy = add_gaussian_noise(&clean, &mut image_rng(seed, 1), &SynthConfig { noise_sigma: 15.0, ..SynthConfig::default() }).unwrap();
        let triple = ImageTriple::new(noisy, clean.clone(), clean).unwrap();
        let count = |s: f64| {
            let cfg = PurifyConfig { threshold: s, patch: 16, stride: 8, radius: 2, ..PurifyConfig::default() };
            purify(&triple, &cfg).unwrap().triplets
        };
        let (low, high) = (count(lo), count(lo + d));
        prop_assert!(high.len() <= low.len());
        for t in &high {
            prop_assert!(t.sim_ln >= lo + d && t.sim_lg.unwrap() >= lo + d);
            prop_assert!(t.ldct.width() == 16 && t.ndct.width() == 16 && t.ncct.width() == 16);
        }
    }

    #[test]
    fn psp_accepts_a_superset_of_ptsp(seed in any::<u64>()) {
        let clean = common::block_texture(96, 96, 4, seed);
        let ncct = elastic_deform(&clean, &mut image_rng(seed, 2), &SynthConfig { alpha: 40.0, smooth_sigma: 3.0, ..SynthConfig::default() }).unwrap();
        let triple = ImageTriple::new(clean.clone(), clean, ncct).unwrap();
        let run = |mode| purify(&triple, &PurifyConfig { patch: 16, stride: 8, radius: 1, mode, ..PurifyConfig::default() }).unwrap();
        let ptsp = run(PurifyMode::Ptsp);
        let psp = run(PurifyMode::Psp);
        prop_assert!(psp.triplets.iter().all(|t| t.sim_lg.is_none()));
        for t in &ptsp.triplets {
            prop_assert!(psp.triplets.iter().any(|u| u.loc == t.loc));
        }
    }

    #[test]
    fn synthesis_is_seeded_and_identity_at_zero(img in image(24, 20), seed in any::<u64>()) {
        let cfg = SynthConfig::default();
        let a = synthesize_ldct(&img, &mut image_rng(seed, 3), &cfg).unwrap();
        let b = synthesize_ldct(&img, &mut image_rng(seed, 3), &cfg).unwrap();
        prop_assert_eq!(a, b);
        let off = SynthConfig { alpha: 0.0, noise_sigma: 0.0, ..cfg };
        prop_assert_eq!(&elastic_deform(&img, &mut image_rng(seed, 0), &off).unwrap(), &img);
        prop_assert_eq!(&add_gaussian_noise(&img, &mut image_rng(seed, 0), &off).unwrap(), &img);
    }

    #[test]
    fn crop_is_pure(img in image(16, 16), top in 0usize..9, left in 0usize..9) {
        let loc = PatchLoc::new(top, left, 8);
        prop_assert_eq!(img.crop(loc).unwrap(), img.crop(loc).unwrap());
    }

    #[test]
    fn softmax_ignores_row_shifts(seed in any::<u64>(), row in 0usize..4, c in -50.0f64..50.0) {
        let q = rng_matrix(4, 3, seed);
        let k = rng_matrix(4, 3, seed ^ 1);
        let v = rng_matrix(4, 3, seed ^ 2);
        let b = rng_matrix(4, 4, seed ^ 3);
        let mut shifted = b.clone();
        for j in 0..4 {
            shifted.set(row, j, b.get(row, j) + c);
        }
        let (o1, a1) = attention_forward(&q, &k, &v, &b).unwrap();
        let (o2, a2) = attention_forward(&q, &k, &v, &shifted).unwrap();
        prop_assert!(a1.max_abs_diff(&a2) <= 1e-12);
        prop_assert!(o1.max_abs_diff(&o2) <= 1e-12);
        prop_assert!(a1.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn self_attention_is_permutation_equivariant(seed in any::<u64>(), perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = AttentionParams::random(2, 3, 4, AttentionMode::SelfAttention, &mut rng);
        params.bias_table.iter_mut().for_each(|b| *b = 0.0);
        let x = Matrix::random(4, 3, 1.0, &mut rng);
        let px = Matrix::from_fn(4, 3, |i, j| x.get(perm[i], j));
        let (out, _) = window_attention(&params, &x, None).unwrap();
        let (pout, _) = window_attention(&params, &px, None).unwrap();
        let expect = Matrix::from_fn(4, 4, |i, j| out.get(perm[i], j));
        prop_assert!(pout.max_abs_diff(&expect) <= 1e-12);
    }

    #[test]
    fn window_partition_round_trips(seed in any::<u64>(), m in 1usize..4, hw in 1usize..4, ww in 1usize..4, c in 1usize..4) {
        let f = FeatureMap::random(hw * m, ww * m, c, &mut ChaCha8Rng::seed_from_u64(seed));
        let w = window_partition(&f, m).unwrap();
        prop_assert_eq!(w.windows.len() * m * m, f.height * f.width);
        prop_assert_eq!(window_reverse(&w, f.height, f.width).unwrap(), f);
    }

    #[test]
    fn charbonnier_properties(a in proptest::collection::vec(-2.0f64..2.0, 1..40), shift in -1.0f64..1.0) {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assert_eq!(charbonnier(&a, &b, 1e-3).unwrap(), charbonnier(&b, &a, 1e-3).unwrap());
        prop_assert!(charbonnier(&a, &b, 1e-3).unwrap() >= 0.0);
        let same = charbonnier(&a, &a, 1e-3).unwrap();
        prop_assert!((same - 1e-3).abs() <= 1e-18, "{}", same);
    }

    #[test]
    fn adamw_zero_gradient_is_identity(p in proptest::collection::vec(-5.0f64..5.0, 1..20), steps in 1usize..5) {
        let mut params = p.clone();
        let mut state = AdamState::new(p.len());
        let hp = AdamHyper { weight_decay: 0.0, ..AdamHyper::default() };
        for step in 1..=steps {
            adamw_step(&mut params, &vec![0.0; p.len()], &mut state, &hp, step, |i| i.to_string()).unwrap();
        }
        prop_assert_eq!(params, p);
    }

    #[test]
    fn metric_symmetry_and_sqrt(seed in any::<u64>(), n in 2usize..10, f in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| Matrix::random(1, f, 1.0, rng).data().to_vec()).collect()
        };
        let x = FeatureSet::new(rows(&mut rng), "t").unwrap();
        let y = FeatureSet::new(rows(&mut rng), "t").unwrap();
        let k = PolyKernel::default();
        let xy = poly_mmd2(&x, &y, k, false).unwrap();
        prop_assert!((xy - poly_mmd2(&y, &x, k, false).unwrap()).abs() <= 1e-12);
        prop_assert!(poly_mmd2(&x, &x, k, false).unwrap().abs() <= 1e-12);

        let a = DMatrix::from_fn(f, f, |_, _| Matrix::random(1, 1, 1.0, &mut rng).get(0, 0));
        let b = DMatrix::from_fn(f, f, |_, _| Matrix::random(1, 1, 1.0, &mut rng).get(0, 0));
        let (s1, s2) = (&a * a.transpose(), &b * b.transpose());
        let (m1, m2) = (DVector::from_element(f, 0.3), DVector::from_element(f, -0.1));
        let d12 = frechet_distance(&m1, &s1, &m2, &s2).unwrap();
        let d21 = frechet_distance(&m2, &s2, &m1, &s1).unwrap();
        prop_assert!((d12 - d21).abs() <= 1e-8 * d12.max(1.0));
        prop_assert!(frechet_distance(&m1, &s1, &m1, &s1).unwrap() <= 1e-8);

        let root = matrix_sqrt_psd(&s1).unwrap();
        prop_assert!((&root - root.transpose()).abs().max() <= 1e-12);
        prop_assert!((&root * &root - &s1).norm() <= 1e-8 * s1.norm().max(1e-300));
        prop_assert!(root.clone().symmetric_eigen().eigenvalues.iter().all(|&e| e >= -1e-10));
    }
}
