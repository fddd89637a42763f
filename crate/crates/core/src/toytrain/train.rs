use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, PatchLoc};
use crate::patchset::{DatasetManifest, TripletSource};
use crate::purify::Offset;
use crate::synthesize::{apply_shift, image_rng, synthesize_ldct, Shift, SynthConfig};

use super::model::{ToyDenoiser, ToyDims};
use super::optim::{adamw_step, multistep_lr, AdamHyper, AdamState};

/// One co-located triplet with intensities scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub ldct: Vec<f64>,
    pub ndct: Vec<f64>,
    pub ncct: Vec<f64>,
}

fn normalize(img: &GrayImage) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v) / 255.0).collect()
}

impl TrainSample {
    pub fn from_patches(ldct: &GrayImage, ndct: &GrayImage, ncct: &GrayImage) -> Result<Self> {
        if !ldct.same_dims(ndct) || !ldct.same_dims(ncct) {
            return Err(Error::Dimension("triplet patches differ in size".into()));
        }
        Ok(Self {
            ldct: normalize(ldct),
            ndct: normalize(ndct),
            ncct: normalize(ncct),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// `None` decays at 50% and 75% of `steps`.
    pub milestones: Option<Vec<usize>>,
    pub gamma: f64,
    pub epsilon_charb: f64,
    /// Weight of the feature-space term; no feature hook is attached during training.
    pub lambda: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 1e-4,
            batch: 32,
            milestones: None,
            gamma: 0.5,
            epsilon_charb: 1e-3,
            lambda: 1.0,
            steps: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a finite non-negative number, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.epsilon_charb > 0.0) {
            return bad(format!("epsilon_charb must be > 0, got {}", self.epsilon_charb));
        }
        if let Some(ms) = &self.milestones {
            if ms.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("milestones must be strictly increasing, got {ms:?}"));
            }
        }
        Ok(())
    }

    pub fn resolved_milestones(&self) -> Vec<usize> {
        self.milestones
            .clone()
            .unwrap_or_else(|| vec![self.steps / 2, self.steps * 3 / 4])
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyDenoiser,
    pub curve: Vec<CurvePoint>,
    /// Monitor loss before the first update.
    pub initial_loss: f64,
    /// Monitor loss after the last update.
    pub final_loss: f64,
}

/// Smooth `patch`x`patch` clean patches (random level and gradient). NDCT is the clean
/// patch, NCCT the clean patch moved by at most one pixel, LDCT the output of
/// [`synthesize_ldct`] with default degradation settings. Sample `i` uses `image_rng(seed, i)`.
pub fn synthetic_triplets(count: usize, patch: usize, seed: u64) -> Result<Vec<TrainSample>> {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    (0..count)
        .map(|i| {
            let mut rng = image_rng(seed, i as u64);
            let base = rng.random_range(60.0..196.0);
            let gy = rng.random_range(-6.0..6.0);
            let gx = rng.random_range(-6.0..6.0);
            let clean = GrayImage::from_fn(patch, patch, |r, c| {
                (base + gy * r as f64 + gx * c as f64).round().clamp(0.0, 255.0) as u8
            });
            let ncct = apply_shift(
                &clean,
                Shift {
                    dy: rng.random_range(-1..=1),
                    dx: rng.random_range(-1..=1),
                },
            );
            let (ldct, _) = synthesize_ldct(&clean, &mut rng, &cfg)?;
            TrainSample::from_patches(&ldct, &clean, &ncct)
        })
        .collect()
}

/// Cuts every manifest triplet into non-overlapping `patch`x`patch` tiles (NDCT and NCCT
/// taken at their recorded offsets). Records are visited in manifest order.
pub fn manifest_samples(manifest: &DatasetManifest, source: &dyn TripletSource, patch: usize) -> Result<Vec<TrainSample>> {
    if patch == 0 {
        return Err(Error::Config("tile size must be positive".into()));
    }
    let mut out = Vec::new();
    let mut cached: Option<(String, crate::purify::ImageTriple)> = None;
    for rec in manifest.records() {
        if cached.as_ref().is_none_or(|(id, _)| id != &rec.image_id) {
            cached = Some((rec.image_id.clone(), source.load(&rec.image_id)?));
        }
        let triple = &cached.as_ref().unwrap().1;
        let loc = rec.loc();
        if patch > loc.size {
            return Err(Error::Dimension(format!("tile size {patch} exceeds manifest patch size {}", loc.size)));
        }
        let at = |off: Offset, r: usize, c: usize| -> Result<PatchLoc> {
            let top = (loc.top + r) as i64 + i64::from(off.dy);
            let left = (loc.left + c) as i64 + i64::from(off.dx);
            if top < 0 || left < 0 {
                return Err(Error::Dimension(format!(
                    "record {} ({}, {}) points outside the image",
                    rec.image_id, rec.top, rec.left
                )));
            }
            Ok(PatchLoc::new(top as usize, left as usize, patch))
        };
        for r in (0..=loc.size - patch).step_by(patch) {
            for c in (0..=loc.size - patch).step_by(patch) {
                let l = triple.ldct.crop(at(Offset::default(), r, c)?)?;
                let n = triple.ndct.crop(at(rec.ndct_offset(), r, c)?)?;
                let g = triple.ncct.crop(at(rec.ncct_offset(), r, c)?)?;
                out.push(TrainSample::from_patches(&l, &n, &g)?);
            }
        }
    }
    Ok(out)
}

/// AdamW on the Charbonnier loss. Each epoch visits the samples in a seeded permutation;
/// a batch's samples are accumulated in index order. The curve records, per step, the
/// mean loss on a fixed monitor set (the first `batch` samples) before that step's update.
pub fn train_toy(samples: &[TrainSample], dims: ToyDims, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset("no training triplets".into()));
    }
    if samples.len() < cfg.batch {
        return Err(Error::EmptyDataset(format!(
            "{} training triplets, need at least batch = {}",
            samples.len(),
            cfg.batch
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ToyDenoiser::new(dims, &mut rng)?;
    let mut flat = model.flatten();
    let mut state = AdamState::new(flat.len());
    let milestones = cfg.resolved_milestones();
    let monitor: Vec<&TrainSample> = samples[..cfg.batch].iter().collect();
    let eps = cfg.epsilon_charb;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    let initial_loss = model.batch_loss(&monitor, eps)?;
    let mut monitor_loss = initial_loss;

    for step in 1..=cfg.steps {
        if cursor + cfg.batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mut idx = order[cursor..cursor + cfg.batch].to_vec();
        cursor += cfg.batch;
        idx.sort_unstable();
        let batch: Vec<&TrainSample> = idx.iter().map(|&i| &samples[i]).collect();

        let lr = multistep_lr(cfg.lr, &milestones, cfg.gamma, step - 1);
        curve.push(CurvePoint { step, lr, loss: monitor_loss });

        let (_, grads) = model.batch_loss_and_grad(&batch, eps)?;
        let g = grads.flatten();
        adamw_step(&mut flat, &g, &mut state, &cfg.hyper(lr), step, |i| model.param_label(i))?;
        model.unflatten(&flat)?;
        monitor_loss = model.batch_loss(&monitor, eps)?;
        if !monitor_loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at step {step}")));
        }
    }

    Ok(TrainOutcome {
        model,
        curve,
        initial_loss,
        final_loss: monitor_loss,
    })
}

/// `step,lr,loss` with shortest round-trip float formatting.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for p in curve {
        out.push_str(&format!("{},{:?},{:?}\n", p.step, p.lr, p.loss));
    }
    out
}
