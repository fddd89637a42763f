//! Triplet selection over co-registered LDCT / NDCT / NCCT images.
//!
//! A location passes when the LDCT/NDCT mask similarity reaches the threshold and the
//! best NCCT patch in a `(2r+1)^2` neighborhood also reaches it. The pair-only mode
//! skips the NCCT gate; the RMSE mode is the unthresholded nearest-NDCT baseline.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, PatchLoc};
use crate::patchset::{enumerate_locs, EdgePolicy};
use crate::similarity::{discretize, patch_similarity, window_rmse, window_similarity, DiscretizationScheme, DiscretizedPatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PurifyMode {
    /// LDCT/NDCT gate followed by the NCCT neighborhood gate.
    Ptsp,
    /// LDCT/NDCT gate only.
    Psp,
    /// Lowest-RMSE NDCT patch in the neighborhood, no threshold.
    Rmse,
}

impl fmt::Display for PurifyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PurifyMode::Ptsp => "ptsp",
            PurifyMode::Psp => "psp",
            PurifyMode::Rmse => "rmse",
        })
    }
}

impl FromStr for PurifyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ptsp" => Ok(PurifyMode::Ptsp),
            "psp" => Ok(PurifyMode::Psp),
            "rmse" | "rmse-topk" => Ok(PurifyMode::Rmse),
            other => Err(Error::Config(format!("unknown purify mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurifyConfig {
    pub scheme: DiscretizationScheme,
    /// Acceptance threshold `s`, compared inclusively.
    pub threshold: f64,
    pub patch: usize,
    pub stride: usize,
    /// Neighborhood radius in pixels for the NCCT (or RMSE baseline) search.
    pub radius: usize,
    pub mode: PurifyMode,
    pub edges: EdgePolicy,
}

impl Default for PurifyConfig {
    fn default() -> Self {
        Self {
            scheme: DiscretizationScheme::standard(),
            threshold: 0.85,
            patch: 64,
            stride: 32,
            radius: 8,
            mode: PurifyMode::Ptsp,
            edges: EdgePolicy::Drop,
        }
    }
}

impl PurifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.patch == 0 || self.stride == 0 || self.stride > self.patch {
            return Err(Error::Config(format!(
                "need 1 <= stride <= patch, got stride {} and patch {}",
                self.stride, self.patch
            )));
        }
        Ok(())
    }
}

/// Displacement of a matched patch relative to the nominal location.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Offset {
    pub dy: i32,
    pub dx: i32,
}

impl Offset {
    pub fn new(dy: i32, dx: i32) -> Self {
        Self { dy, dx }
    }

    pub fn manhattan(&self) -> u32 {
        self.dy.unsigned_abs() + self.dx.unsigned_abs()
    }

    /// Applies the offset to `loc`. The caller guarantees the result is non-negative.
    pub fn shift(&self, loc: PatchLoc) -> PatchLoc {
        PatchLoc::new(
            (loc.top as i64 + self.dy as i64) as usize,
            (loc.left as i64 + self.dx as i64) as usize,
            loc.size,
        )
    }
}

/// The three co-registered full images of one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTriple {
    pub ldct: GrayImage,
    pub ndct: GrayImage,
    pub ncct: GrayImage,
}

impl ImageTriple {
    pub fn new(ldct: GrayImage, ndct: GrayImage, ncct: GrayImage) -> Result<Self> {
        if !ldct.same_dims(&ndct) || !ldct.same_dims(&ncct) {
            return Err(Error::Dimension(format!(
                "triple dimensions differ: ldct {}x{}, ndct {}x{}, ncct {}x{}",
                ldct.width(),
                ldct.height(),
                ndct.width(),
                ndct.height(),
                ncct.width(),
                ncct.height()
            )));
        }
        Ok(Self { ldct, ndct, ncct })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriplet {
    pub loc: PatchLoc,
    pub ldct: GrayImage,
    pub ndct: GrayImage,
    pub ncct: GrayImage,
    pub ncct_offset: Offset,
    /// Non-zero only for the RMSE baseline, which moves the NDCT patch instead.
    pub ndct_offset: Offset,
    pub sim_ln: f64,
    /// Absent in pair-only mode.
    pub sim_lg: Option<f64>,
    /// Set only by the RMSE baseline.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectStage {
    Ndct,
    Ncct,
}

impl fmt::Display for RejectStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectStage::Ndct => "ndct",
            RejectStage::Ncct => "ncct",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Selection {
    Accepted(PatchTriplet),
    Rejected {
        stage: RejectStage,
        sim_ln: f64,
        sim_lg: Option<f64>,
    },
}

impl Selection {
    pub fn accepted(self) -> Option<PatchTriplet> {
        match self {
            Selection::Accepted(t) => Some(t),
            Selection::Rejected { .. } => None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Selection::Accepted(_))
    }
}

#[inline]
fn better(sim: f64, off: Offset, best_sim: f64, best: Offset) -> bool {
    sim > best_sim
        || (sim == best_sim && (off.manhattan(), off.dy, off.dx) < (best.manhattan(), best.dy, best.dx))
}

/// Valid candidate offsets along one axis once clamped to the image.
fn axis_range(start: usize, size: usize, extent: usize, radius: usize) -> (i32, i32) {
    let lo = -(start.min(radius) as i32);
    let hi = (extent - size - start).min(radius) as i32;
    (lo, hi)
}

fn check_fits(loc: PatchLoc, img_w: usize, img_h: usize) -> Result<()> {
    if loc.size == 0 || !loc.fits(img_w, img_h) {
        return Err(Error::Bounds {
            top: loc.top,
            left: loc.left,
            size: loc.size,
            width: img_w,
            height: img_h,
        });
    }
    Ok(())
}

/// Exhaustive search over every offset within `radius` of `loc` (candidates beyond the
/// border are clamped, which amounts to skipping them). Highest similarity wins; ties go
/// to the smallest `|dy| + |dx|`, then to the lexicographically smallest `(dy, dx)`.
fn search_levels(
    probe: &DiscretizedPatch,
    probe_loc: PatchLoc,
    target: &DiscretizedPatch,
    loc: PatchLoc,
    radius: usize,
    weights: &[f64],
) -> (Offset, f64) {
    let (ylo, yhi) = axis_range(loc.top, loc.size, target.height, radius);
    let (xlo, xhi) = axis_range(loc.left, loc.size, target.width, radius);
    let mut best = Offset::default();
    let mut best_sim = f64::NEG_INFINITY;
    for dy in ylo..=yhi {
        for dx in xlo..=xhi {
            let off = Offset::new(dy, dx);
            let cand = off.shift(loc);
            let sim = window_similarity(probe, probe_loc, target, cand.top, cand.left, weights);
            if better(sim, off, best_sim, best) {
                best = off;
                best_sim = sim;
            }
        }
    }
    (best, best_sim)
}

/// Finds the NCCT patch around `center` most similar to `ldct_patch`.
pub fn search_best_ncct(
    ldct_patch: &GrayImage,
    ncct_img: &GrayImage,
    center: PatchLoc,
    cfg: &PurifyConfig,
) -> Result<(Offset, f64)> {
    if ldct_patch.width() != center.size || ldct_patch.height() != center.size {
        return Err(Error::Dimension(format!(
            "probe patch {}x{} does not match location size {}",
            ldct_patch.width(),
            ldct_patch.height(),
            center.size
        )));
    }
    check_fits(center, ncct_img.width(), ncct_img.height())?;
    let probe = discretize(ldct_patch, &cfg.scheme);
    let target = discretize(ncct_img, &cfg.scheme);
    let probe_loc = PatchLoc::new(0, 0, center.size);
    Ok(search_levels(&probe, probe_loc, &target, center, cfg.radius, cfg.scheme.weights()))
}

/// Two-stage gate at one location. The NCCT search runs only after the NDCT gate passes.
/// In pair-only mode the second stage is skipped. The RMSE baseline is handled by
/// [`purify`], not here.
pub fn select_triplet(
    ldct: &GrayImage,
    ndct: &GrayImage,
    ncct: &GrayImage,
    loc: PatchLoc,
    cfg: &PurifyConfig,
) -> Result<Selection> {
    check_fits(loc, ldct.width(), ldct.height())?;
    check_fits(loc, ndct.width(), ndct.height())?;
    let ldct_patch = ldct.crop(loc)?;
    let ndct_patch = ndct.crop(loc)?;
    let sim_ln = patch_similarity(&ldct_patch, &ndct_patch, &cfg.scheme)?;
    if sim_ln < cfg.threshold {
        return Ok(Selection::Rejected {
            stage: RejectStage::Ndct,
            sim_ln,
            sim_lg: None,
        });
    }
    if cfg.mode == PurifyMode::Psp {
        check_fits(loc, ncct.width(), ncct.height())?;
        return Ok(Selection::Accepted(PatchTriplet {
            loc,
            ldct: ldct_patch,
            ndct: ndct_patch,
            ncct: ncct.crop(loc)?,
            ncct_offset: Offset::default(),
            ndct_offset: Offset::default(),
            sim_ln,
            sim_lg: None,
            rmse: None,
        }));
    }
    let (offset, sim_lg) = search_best_ncct(&ldct_patch, ncct, loc, cfg)?;
    if sim_lg < cfg.threshold {
        return Ok(Selection::Rejected {
            stage: RejectStage::Ncct,
            sim_ln,
            sim_lg: Some(sim_lg),
        });
    }
    Ok(Selection::Accepted(PatchTriplet {
        loc,
        ldct: ldct_patch,
        ndct: ndct_patch,
        ncct: ncct.crop(offset.shift(loc))?,
        ncct_offset: offset,
        ndct_offset: Offset::default(),
        sim_ln,
        sim_lg: Some(sim_lg),
        rmse: None,
    }))
}

/// Result of purifying one image triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifyOutcome {
    pub enumerated: usize,
    /// Accepted triplets in row-major location order.
    pub triplets: Vec<PatchTriplet>,
}

impl PurifyOutcome {
    pub fn accept_rate(&self) -> f64 {
        if self.enumerated == 0 {
            0.0
        } else {
            self.triplets.len() as f64 / self.enumerated as f64
        }
    }
}

struct Prepared<'a> {
    triple: &'a ImageTriple,
    ldct: DiscretizedPatch,
    ndct: DiscretizedPatch,
    ncct: DiscretizedPatch,
}

impl Prepared<'_> {
    fn evaluate(&self, loc: PatchLoc, cfg: &PurifyConfig) -> Result<Option<PatchTriplet>> {
        let weights = cfg.scheme.weights();
        let t = self.triple;
        if cfg.mode == PurifyMode::Rmse {
            let (ylo, yhi) = axis_range(loc.top, loc.size, t.ndct.height(), cfg.radius);
            let (xlo, xhi) = axis_range(loc.left, loc.size, t.ndct.width(), cfg.radius);
            let mut best = Offset::default();
            let mut best_err = f64::INFINITY;
            for dy in ylo..=yhi {
                for dx in xlo..=xhi {
                    let off = Offset::new(dy, dx);
                    let cand = off.shift(loc);
                    let err = window_rmse(&t.ldct, loc, &t.ndct, cand.top, cand.left);
                    // lower is better; reuse the similarity tie-break on the negated error
                    if better(-err, off, -best_err, best) {
                        best = off;
                        best_err = err;
                    }
                }
            }
            let nd = best.shift(loc);
            return Ok(Some(PatchTriplet {
                loc,
                ldct: t.ldct.crop(loc)?,
                ndct: t.ndct.crop(nd)?,
                ncct: t.ncct.crop(loc)?,
                ncct_offset: Offset::default(),
                ndct_offset: best,
                sim_ln: window_similarity(&self.ldct, loc, &self.ndct, nd.top, nd.left, weights),
                sim_lg: Some(window_similarity(&self.ldct, loc, &self.ncct, loc.top, loc.left, weights)),
                rmse: Some(best_err),
            }));
        }

        let sim_ln = window_similarity(&self.ldct, loc, &self.ndct, loc.top, loc.left, weights);
        if sim_ln < cfg.threshold {
            return Ok(None);
        }
        let (ncct_offset, sim_lg) = if cfg.mode == PurifyMode::Psp {
            (Offset::default(), None)
        } else {
            let (off, sim) = search_levels(&self.ldct, loc, &self.ncct, loc, cfg.radius, weights);
            if sim < cfg.threshold {
                return Ok(None);
            }
            (off, Some(sim))
        };
        Ok(Some(PatchTriplet {
            loc,
            ldct: t.ldct.crop(loc)?,
            ndct: t.ndct.crop(loc)?,
            ncct: t.ncct.crop(ncct_offset.shift(loc))?,
            ncct_offset,
            ndct_offset: Offset::default(),
            sim_ln,
            sim_lg,
            rmse: None,
        }))
    }
}

/// Runs the configured mode at every enumerated location. Work fans out over the
/// current rayon pool; the result is ordered by `(top, left)` regardless of workers.
pub fn purify(triple: &ImageTriple, cfg: &PurifyConfig) -> Result<PurifyOutcome> {
    cfg.validate()?;
    let (w, h) = (triple.ldct.width(), triple.ldct.height());
    if !triple.ldct.same_dims(&triple.ndct) || !triple.ldct.same_dims(&triple.ncct) {
        return Err(Error::Dimension("triple images must share dimensions".into()));
    }
    let locs = enumerate_locs(h, w, cfg.patch, cfg.stride, cfg.edges)?;
    let prepared = Prepared {
        triple,
        ldct: discretize(&triple.ldct, &cfg.scheme),
        ndct: discretize(&triple.ndct, &cfg.scheme),
        ncct: discretize(&triple.ncct, &cfg.scheme),
    };
    let results = locs
        .par_iter()
        .map(|&loc| prepared.evaluate(loc, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(PurifyOutcome {
        enumerated: locs.len(),
        triplets: results.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesize::{apply_shift, Shift};

    fn textured(w: usize, h: usize, salt: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |r, c| (((r + salt) * 53 + c * 29 + (r * c + salt) % 41) % 256) as u8)
    }

    fn small_cfg(p: usize, r: usize) -> PurifyConfig {
        PurifyConfig {
            patch: p,
            stride: p / 2,
            radius: r,
            ..Default::default()
        }
    }

    #[test]
    fn finds_planted_copy() {
        let ncct = textured(40, 40, 3);
        let center = PatchLoc::new(12, 14, 8);
        let planted = Offset::new(3, -2);
        let probe = ncct.crop(planted.shift(center)).unwrap();
        let (off, sim) = search_best_ncct(&probe, &ncct, center, &small_cfg(8, 4)).unwrap();
        assert_eq!(off, planted);
        assert_eq!(sim, 1.0);
    }

    #[test]
    fn constant_target_ties_to_origin() {
        let ncct = GrayImage::filled(30, 30, 100);
        let probe = textured(8, 8, 0);
        let (off, _) = search_best_ncct(&probe, &ncct, PatchLoc::new(10, 10, 8), &small_cfg(8, 4)).unwrap();
        assert_eq!(off, Offset::default());
    }

    #[test]
    fn zero_radius_is_center_similarity() {
        let ldct = textured(32, 32, 1);
        let ncct = textured(32, 32, 9);
        let loc = PatchLoc::new(8, 8, 8);
        let probe = ldct.crop(loc).unwrap();
        let cfg = small_cfg(8, 0);
        let (off, sim) = search_best_ncct(&probe, &ncct, loc, &cfg).unwrap();
        assert_eq!(off, Offset::default());
        assert_eq!(sim, patch_similarity(&probe, &ncct.crop(loc).unwrap(), &cfg.scheme).unwrap());
    }

    #[test]
    fn search_matches_exhaustive_oracle() {
        let ldct = textured(48, 48, 4);
        let ncct = apply_shift(&textured(48, 48, 4), Shift { dy: 2, dx: 1 });
        let cfg = small_cfg(16, 5);
        for loc in [PatchLoc::new(0, 0, 16), PatchLoc::new(16, 20, 16), PatchLoc::new(32, 32, 16)] {
            let probe = ldct.crop(loc).unwrap();
            let (off, sim) = search_best_ncct(&probe, &ncct, loc, &cfg).unwrap();
            // oracle: crop every clamped candidate and score it with the allocation path
            let mut best: Option<(f64, u32, i32, i32)> = None;
            for dy in -5i32..=5 {
                for dx in -5i32..=5 {
                    let t = (loc.top as i32 + dy).clamp(0, 32) as usize;
                    let l = (loc.left as i32 + dx).clamp(0, 32) as usize;
                    let (edy, edx) = (t as i32 - loc.top as i32, l as i32 - loc.left as i32);
                    let s = patch_similarity(&probe, &ncct.crop(PatchLoc::new(t, l, 16)).unwrap(), &cfg.scheme).unwrap();
                    let key = (s, edy.unsigned_abs() + edx.unsigned_abs(), edy, edx);
                    best = match best {
                        None => Some(key),
                        Some(b) if key.0 > b.0 || (key.0 == b.0 && (key.1, key.2, key.3) < (b.1, b.2, b.3)) => Some(key),
                        keep => keep,
                    };
                }
            }
            let b = best.unwrap();
            assert_eq!((sim, off.dy, off.dx), (b.0, b.2, b.3));
        }
    }

    #[test]
    fn center_outside_is_bounds_error() {
        let ncct = textured(16, 16, 0);
        let probe = textured(8, 8, 0);
        let err = search_best_ncct(&probe, &ncct, PatchLoc::new(10, 0, 8), &small_cfg(8, 2)).unwrap_err();
        assert!(matches!(err, Error::Bounds { .. }));
    }

    #[test]
    fn ndct_rejection_skips_ncct_search() {
        let ldct = textured(16, 16, 0);
        let ndct = GrayImage::from_fn(16, 16, |r, c| 255 - ldct.get(r, c));
        // an NCCT image too small for the location would make the search fail
        let ncct = GrayImage::filled(4, 4, 0);
        let sel = select_triplet(&ldct, &ndct, &ncct, PatchLoc::new(0, 0, 8), &small_cfg(8, 2)).unwrap();
        assert!(matches!(sel, Selection::Rejected { stage: RejectStage::Ndct, sim_lg: None, .. }));
    }

    #[test]
    fn gate_thresholds() {
        let ldct = textured(24, 24, 2);
        let loc = PatchLoc::new(8, 8, 8);
        let cfg = small_cfg(8, 2);
        let sel = select_triplet(&ldct, &ldct, &ldct, loc, &cfg).unwrap();
        let t = sel.accepted().unwrap();
        assert_eq!((t.sim_ln, t.sim_lg), (1.0, Some(1.0)));

        // NCCT unrelated to LDCT: first gate passes, second fails
        let ncct = GrayImage::from_fn(24, 24, |r, c| 255 - ldct.get(r, c));
        let sel = select_triplet(&ldct, &ldct, &ncct, loc, &cfg).unwrap();
        assert!(matches!(sel, Selection::Rejected { stage: RejectStage::Ncct, .. }));

        // pair-only mode ignores the NCCT image
        let psp = PurifyConfig { mode: PurifyMode::Psp, ..cfg.clone() };
        assert!(select_triplet(&ldct, &ldct, &ncct, loc, &psp).unwrap().is_accepted());
    }

    #[test]
    fn inclusive_threshold() {
        // 64 pixels, 8 differ by one level: similarity = (56 + 8*0.7)/64 = 0.9625
        let a = GrayImage::filled(8, 8, 10);
        let b = GrayImage::from_fn(8, 8, |r, _| if r == 0 { 100 } else { 10 });
        let sim = patch_similarity(&a, &b, &DiscretizationScheme::standard()).unwrap();
        let cfg = PurifyConfig { threshold: sim, ..small_cfg(8, 0) };
        assert!(select_triplet(&a, &b, &a, PatchLoc::new(0, 0, 8), &cfg).unwrap().is_accepted());
    }

    #[test]
    fn purify_agrees_with_select_triplet() {
        let ldct = textured(48, 40, 0);
        let ndct = apply_shift(&ldct, Shift { dy: 1, dx: 0 });
        let ncct = apply_shift(&ldct, Shift { dy: 0, dx: -2 });
        let triple = ImageTriple::new(ldct.clone(), ndct.clone(), ncct.clone()).unwrap();
        for mode in [PurifyMode::Ptsp, PurifyMode::Psp] {
            let cfg = PurifyConfig { threshold: 0.5, mode, ..small_cfg(16, 3) };
            let out = purify(&triple, &cfg).unwrap();
            let locs = enumerate_locs(40, 48, 16, 8, EdgePolicy::Drop).unwrap();
            assert_eq!(out.enumerated, locs.len());
            let expected: Vec<_> = locs
                .iter()
                .filter_map(|&l| select_triplet(&ldct, &ndct, &ncct, l, &cfg).unwrap().accepted())
                .collect();
            assert_eq!(out.triplets, expected);
        }
    }

    #[test]
    fn rmse_baseline_recovers_shift() {
        let ldct = textured(48, 48, 5);
        let ndct = apply_shift(&ldct, Shift { dy: -2, dx: 3 });
        let triple = ImageTriple::new(ldct.clone(), ndct, ldct).unwrap();
        let cfg = PurifyConfig { mode: PurifyMode::Rmse, ..small_cfg(16, 4) };
        let out = purify(&triple, &cfg).unwrap();
        assert_eq!(out.triplets.len(), out.enumerated);
        // interior patches see the true displacement with zero error
        let interior = out.triplets.iter().find(|t| t.loc == PatchLoc::new(16, 16, 16)).unwrap();
        assert_eq!(interior.ndct_offset, Offset::new(-2, 3));
        assert_eq!(interior.rmse, Some(0.0));
        assert_eq!(interior.ndct, interior.ldct);
    }

    #[test]
    fn mismatched_triple_is_rejected() {
        assert!(ImageTriple::new(textured(8, 8, 0), textured(8, 9, 0), textured(8, 8, 0)).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("psp".parse::<PurifyMode>().unwrap(), PurifyMode::Psp);
        assert_eq!("rmse".parse::<PurifyMode>().unwrap(), PurifyMode::Rmse);
        assert!("foo".parse::<PurifyMode>().is_err());
    }
}
