//! Patch discretization, difference maps, weighted similarity masks and the
//! mask-similarity score used to purify training patches. RMSE is kept as the
//! baseline score.

use std::fmt;

use crate::error::{Error, Result};
use crate::image::{GrayImage, PatchLoc};

/// Separation points `0 = T_0 < ... < T_n = 256` splitting the 8-bit range into `n`
/// segments, and agreement weights `1 = w_0 > ... > w_{n-1} = 0` indexed by level distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationScheme {
    points: Vec<u32>,
    weights: Vec<f64>,
    lut: Box<[u8; 256]>,
}

impl DiscretizationScheme {
    pub fn new(points: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Config(format!(
                "need at least two segments (three separation points), got {points:?}"
            )));
        }
        if points[0] != 0 || *points.last().unwrap() != 256 {
            return Err(Error::Config(format!(
                "separation points must start at 0 and end at 256, got {points:?}"
            )));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "separation points must be strictly increasing, got {points:?}"
            )));
        }
        let n = points.len() - 1;
        if weights.len() != n {
            return Err(Error::Config(format!(
                "{n} segments need {n} weights, got {}",
                weights.len()
            )));
        }
        if weights[0] != 1.0 || weights[n - 1] != 0.0 {
            return Err(Error::Config(format!(
                "weights must start at 1 and end at 0, got {weights:?}"
            )));
        }
        if weights.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::Config(format!(
                "weights must be strictly decreasing, got {weights:?}"
            )));
        }
        let mut lut = Box::new([0u8; 256]);
        for (level, seg) in points.windows(2).enumerate() {
            for v in seg[0]..seg[1] {
                lut[v as usize] = level as u8;
            }
        }
        Ok(Self { points, weights, lut })
    }

    /// Three segments `{0, 64, 128, 256}` with weights `{1, 0.7, 0}`.
    pub fn standard() -> Self {
        Self::new(vec![0, 64, 128, 256], vec![1.0, 0.7, 0.0]).expect("valid default scheme")
    }

    /// Equal-width segments with linearly decreasing weights.
    pub fn linear(n: usize) -> Result<Self> {
        if !(1..=256).contains(&n) {
            return Err(Error::Config(format!("segment count must be in 1..=256, got {n}")));
        }
        if n == 1 {
            return Err(Error::Config("a single segment cannot carry weights 1 and 0".into()));
        }
        let points = (0..=n).map(|i| (i * 256 / n) as u32).collect();
        let weights = (0..n).map(|i| 1.0 - i as f64 / (n - 1) as f64).collect();
        Self::new(points, weights)
    }

    /// Parses comma-separated lists such as `"0,64,128,256"` and `"1,0.7,0"`.
    pub fn parse(points: &str, weights: &str) -> Result<Self> {
        let pts = points
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::Config(format!("invalid separation point '{}'", t.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        let ws = weights
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid weight '{}'", t.trim())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(pts, ws)
    }

    /// Inverse of the [`fmt::Display`] form `points=...;weights=...`.
    pub fn from_fingerprint(s: &str) -> Result<Self> {
        let (p, w) = s
            .split_once(';')
            .and_then(|(p, w)| Some((p.strip_prefix("points=")?, w.strip_prefix("weights=")?)))
            .ok_or_else(|| Error::Config(format!("malformed scheme fingerprint '{s}'")))?;
        Self::parse(p, w)
    }

    pub fn fingerprint(&self) -> String {
        self.to_string()
    }

    pub fn points(&self) -> &[u32] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of segments `n`.
    pub fn levels(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn level_of(&self, pixel: u8) -> u8 {
        self.lut[pixel as usize]
    }
}

impl fmt::Display for DiscretizationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: Vec<String>| v.join(",");
        write!(
            f,
            "points={};weights={}",
            join(self.points.iter().map(|p| p.to_string()).collect()),
            join(self.weights.iter().map(|w| w.to_string()).collect())
        )
    }
}

/// Per-pixel segment index of a patch (or a whole image).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscretizedPatch {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<u8>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifferenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Level `i - 1` for pixels in `[T_{i-1}, T_i)`.
pub fn discretize(patch: &GrayImage, scheme: &DiscretizationScheme) -> DiscretizedPatch {
    DiscretizedPatch {
        width: patch.width(),
        height: patch.height(),
        levels: patch.data().iter().map(|&v| scheme.level_of(v)).collect(),
        n: scheme.levels(),
    }
}

/// `|a(x) - b(x)|` per pixel.
pub fn difference_map(a: &DiscretizedPatch, b: &DiscretizedPatch) -> Result<DifferenceMap> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Dimension(format!(
            "difference of {}x{} and {}x{} patches",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.n != b.n {
        return Err(Error::SchemeMismatch(format!(
            "patches discretized with {} and {} levels",
            a.n, b.n
        )));
    }
    Ok(DifferenceMap {
        width: a.width,
        height: a.height,
        values: a.levels.iter().zip(&b.levels).map(|(x, y)| x.abs_diff(*y)).collect(),
        n: a.n,
    })
}

/// Replaces every difference level `j` by the weight `w_j`.
pub fn similarity_mask(diff: &DifferenceMap, scheme: &DiscretizationScheme) -> Result<SimilarityMask> {
    let weights = scheme.weights();
    let values = diff
        .values
        .iter()
        .map(|&d| {
            weights.get(d as usize).copied().ok_or_else(|| {
                Error::SchemeMismatch(format!(
                    "difference level {d} outside a {}-level scheme",
                    weights.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMask {
        width: diff.width,
        height: diff.height,
        values,
    })
}

/// Sum of mask values over the pixel count. Zero-weight pixels contribute nothing,
/// so this is the sum of the non-zero entries divided by `p^2`.
pub fn mask_similarity(mask: &SimilarityMask) -> f64 {
    let mut sum = 0.0;
    for v in &mask.values {
        sum += v;
    }
    sum / mask.values.len() as f64
}

/// Full discretize → difference → mask → score chain for two equally sized patches.
pub fn patch_similarity(a: &GrayImage, b: &GrayImage, scheme: &DiscretizationScheme) -> Result<f64> {
    let diff = difference_map(&discretize(a, scheme), &discretize(b, scheme))?;
    Ok(mask_similarity(&similarity_mask(&diff, scheme)?))
}

/// Mask similarity between two windows of pre-discretized images, without allocating.
/// Accumulates in the same row-major order as [`mask_similarity`], so the result is
/// bit-identical to [`patch_similarity`] on the cropped patches.
///
/// Both windows must lie inside their images; callers check bounds.
pub fn window_similarity(
    a: &DiscretizedPatch,
    a_loc: PatchLoc,
    b: &DiscretizedPatch,
    b_top: usize,
    b_left: usize,
    weights: &[f64],
) -> f64 {
    let p = a_loc.size;
    let mut sum = 0.0;
    for r in 0..p {
        let ra = (a_loc.top + r) * a.width + a_loc.left;
        let rb = (b_top + r) * b.width + b_left;
        let row_a = &a.levels[ra..ra + p];
        let row_b = &b.levels[rb..rb + p];
        for (x, y) in row_a.iter().zip(row_b) {
            sum += weights[x.abs_diff(*y) as usize];
        }
    }
    sum / (p * p) as f64
}

/// Root mean squared intensity difference.
pub fn rmse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Dimension(format!(
            "rmse of {}x{} and {}x{} images",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((sq / a.data().len() as f64).sqrt())
}

/// RMSE between two windows of full images; same accumulation order as [`rmse`].
pub(crate) fn window_rmse(a: &GrayImage, a_loc: PatchLoc, b: &GrayImage, b_top: usize, b_left: usize) -> f64 {
    let p = a_loc.size;
    let mut sq = 0.0;
    for r in 0..p {
        let row_a = &a.row(a_loc.top + r)[a_loc.left..a_loc.left + p];
        let row_b = &b.row(b_top + r)[b_left..b_left + p];
        for (&x, &y) in row_a.iter().zip(row_b) {
            let d = x as f64 - y as f64;
            sq += d * d;
        }
    }
    (sq / (p * p) as f64).sqrt()
}
