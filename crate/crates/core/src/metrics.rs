//! Distribution distances between feature sets: the Fréchet distance between fitted
//! Gaussians and a polynomial-kernel MMD².

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{load_pgm, GrayImage};
use crate::patchset::pgm_stems;

/// Maps an image to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    /// Stable identifier recorded with every feature set.
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn extract(&self, img: &GrayImage) -> Result<Vec<f64>>;
}

/// Average of each cell of a `grid`x`grid` partition, scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolExtractor {
    pub grid: usize,
}

impl Default for PoolExtractor {
    fn default() -> Self {
        Self { grid: 8 }
    }
}

impl FeatureExtractor for PoolExtractor {
    fn name(&self) -> String {
        format!("pool{}", self.grid)
    }

    fn dim(&self) -> usize {
        self.grid * self.grid
    }

    fn extract(&self, img: &GrayImage) -> Result<Vec<f64>> {
        let g = self.grid;
        let (h, w) = (img.height(), img.width());
        if h < g || w < g {
            return Err(Error::Dimension(format!("{w}x{h} image is smaller than the {g}x{g} pooling grid")));
        }
        let mut out = Vec::with_capacity(g * g);
        for gr in 0..g {
            let (r0, r1) = (gr * h / g, (gr + 1) * h / g);
            for gc in 0..g {
                let (c0, c1) = (gc * w / g, (gc + 1) * w / g);
                let mut sum = 0u64;
                for r in r0..r1 {
                    sum += img.row(r)[c0..c1].iter().map(|&v| u64::from(v)).sum::<u64>();
                }
                out.push(sum as f64 / ((r1 - r0) * (c1 - c0)) as f64 / 255.0);
            }
        }
        Ok(out)
    }
}

/// Resolves an extractor name such as `pool8`.
pub fn extractor_by_name(name: &str) -> Result<PoolExtractor> {
    name.strip_prefix("pool")
        .and_then(|g| g.parse().ok())
        .filter(|&g: &usize| g > 0)
        .map(|grid| PoolExtractor { grid })
        .ok_or_else(|| Error::Config(format!("unknown extractor '{name}' (expected poolN, e.g. pool8)")))
}

/// `count` x `dim` feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub features: DMatrix<f64>,
    pub extractor: String,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, extractor: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("feature rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let n = rows.len();
        Ok(Self {
            features: DMatrix::from_fn(n, dim, |i, j| rows[i][j]),
            extractor: extractor.into(),
        })
    }

    pub fn extract(images: &[GrayImage], extractor: &dyn FeatureExtractor) -> Result<Self> {
        let rows = images.par_iter().map(|img| extractor.extract(img)).collect::<Result<Vec<_>>>()?;
        Self::new(rows, extractor.name())
    }

    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Sample mean and covariance with divisor `N - 1`.
pub fn mean_cov(fs: &FeatureSet) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = fs.count();
    if n < 2 {
        return Err(Error::EmptyDataset(format!("covariance needs at least 2 samples, got {n}")));
    }
    let x = &fs.features;
    let mu = DVector::from_fn(fs.dim(), |j, _| x.column(j).sum() / n as f64);
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    let mut sigma = centered.transpose() * &centered / (n - 1) as f64;
    symmetrize(&mut sigma);
    Ok((mu, sigma))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Principal square root of a symmetric positive semi-definite matrix via its
/// eigendecomposition. Eigenvalues in `[-1e-10, 0)` are treated as zero.
pub fn matrix_sqrt_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !sigma.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", sigma.nrows(), sigma.ncols())));
    }
    let scale = sigma.abs().max().max(1.0);
    let skew = asymmetry(sigma);
    if skew > 1e-9 * scale {
        return Err(Error::Numeric(format!("matrix is not symmetric (max |a_ij - a_ji| = {skew:.3e})")));
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-10 * scale {
            return Err(Error::Numeric(format!("matrix is not positive semi-definite (eigenvalue {v:.3e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `|mu1 - mu2|^2 + tr(s1 + s2 - 2 sqrt(s1^1/2 s2 s1^1/2))`, clamped at zero.
pub fn frechet_distance(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let f = mu1.len();
    if mu2.len() != f || s1.shape() != (f, f) || s2.shape() != (f, f) {
        return Err(Error::Dimension(format!(
            "mismatched statistics: mu {} / {}, sigma {:?} / {:?}",
            f,
            mu2.len(),
            s1.shape(),
            s2.shape()
        )));
    }
    let r1 = matrix_sqrt_psd(s1)?;
    let mut inner = &r1 * s2 * &r1;
    symmetrize(&mut inner);
    let cross = matrix_sqrt_psd(&inner)?;
    let d = (mu1 - mu2).norm_squared() + s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(d.max(0.0))
}

/// `k(a, b) = (scale * a.b + coef)^degree`; `scale = None` means `1 / F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyKernel {
    pub degree: i32,
    pub coef: f64,
    pub scale: Option<f64>,
}

impl Default for PolyKernel {
    fn default() -> Self {
        Self {
            degree: 3,
            coef: 1.0,
            scale: None,
        }
    }
}

/// Polynomial-kernel MMD². The biased estimator averages over all pairs; the unbiased
/// one drops the diagonals of the within-set kernel matrices.
pub fn poly_mmd2(x: &FeatureSet, y: &FeatureSet, kernel: PolyKernel, unbiased: bool) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Dimension(format!("feature dims differ: {} vs {}", x.dim(), y.dim())));
    }
    let (m, n) = (x.count(), y.count());
    let need = if unbiased { 2 } else { 1 };
    if m < need || n < need {
        return Err(Error::EmptyDataset(format!("MMD needs at least {need} samples per set, got {m} and {n}")));
    }
    let scale = kernel.scale.unwrap_or(1.0 / x.dim().max(1) as f64);
    let k = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a * b.transpose()).map(|v| (scale * v + kernel.coef).powi(kernel.degree));
    let kxx = k(&x.features, &x.features);
    let kyy = k(&y.features, &y.features);
    let kxy = k(&x.features, &y.features);
    let (m, n) = (m as f64, n as f64);
    let within = |kk: &DMatrix<f64>, c: f64| {
        if unbiased {
            (kk.sum() - kk.trace()) / (c * (c - 1.0))
        } else {
            kk.sum() / (c * c)
        }
    };
    Ok(within(&kxx, m) + within(&kyy, n) - 2.0 * kxy.sum() / (m * n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frechet: f64,
    pub mmd2: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub extractor: String,
}

impl MetricsReport {
    pub fn compare(a: &FeatureSet, b: &FeatureSet, unbiased: bool) -> Result<Self> {
        let (mu_a, s_a) = mean_cov(a)?;
        let (mu_b, s_b) = mean_cov(b)?;
        Ok(Self {
            frechet: frechet_distance(&mu_a, &s_a, &mu_b, &s_b)?,
            mmd2: poly_mmd2(a, b, PolyKernel::default(), unbiased)?,
            n_a: a.count(),
            n_b: b.count(),
            extractor: a.extractor.clone(),
        })
    }

    /// `metric,value,n_a,n_b,extractor`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,n_a,n_b,extractor\n");
        for (name, v) in [("frechet", self.frechet), ("mmd2", self.mmd2)] {
            s.push_str(&format!("{name},{v:?},{},{},{}\n", self.n_a, self.n_b, self.extractor));
        }
        s
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "frechet {:.6e}  mmd2 {:.6e}  (n_a {}, n_b {}, {})",
            self.frechet, self.mmd2, self.n_a, self.n_b, self.extractor
        )
    }
}

/// Loads every `*.pgm` of a directory in sorted file-name order.
pub fn load_dir(dir: &Path) -> Result<Vec<GrayImage>> {
    pgm_stems(dir)?
        .par_iter()
        .map(|stem| load_pgm(dir.join(format!("{stem}.pgm"))))
        .collect()
}

/// Compares the PGM images of two directories.
pub fn evaluate(dir_a: &Path, dir_b: &Path, extractor: &dyn FeatureExtractor, unbiased: bool) -> Result<MetricsReport> {
    let load = |dir: &Path| -> Result<FeatureSet> {
        let images = load_dir(dir)?;
        if images.len() < 2 {
            return Err(Error::EmptyDataset(format!(
                "{} holds {} PGM images, need at least 2",
                dir.display(),
                images.len()
            )));
        }
        FeatureSet::extract(&images, extractor)
    };
    MetricsReport::compare(&load(dir_a)?, &load(dir_b)?, unbiased)
}
