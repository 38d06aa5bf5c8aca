use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factor and log-determinant of one Gaussian block.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockCache {
    /// Lower-triangular factor, row-major.
    chol: Vec<f64>,
    log_det: f64,
}

/// Row-major lower Cholesky factor of `a - shift * I`, or `None` if that
/// matrix is not positive-definite.
fn cholesky_shifted(a: &[f64], d: usize, shift: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            if i == j {
                sum -= shift;
            }
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// A multivariate normal block (mean, row-major covariance) with a lazily
/// rebuilt density cache. `cache == None` means dirty.
#[derive(Debug, Clone)]
pub struct GaussianBlock {
    mean: Vec<f64>,
    cov: Vec<f64>,
    cache: Option<BlockCache>,
}

impl PartialEq for GaussianBlock {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl GaussianBlock {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::DimensionMismatch {
                what: "covariance entries",
                expected: d * d,
                actual: cov.len(),
            });
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian block"));
        }
        Ok(Self {
            mean,
            cov,
            cache: None,
        })
    }

    pub fn isotropic(mean: Vec<f64>, std_devs: &[f64]) -> Result<Self> {
        let d = mean.len();
        if std_devs.len() != d {
            return Err(Error::DimensionMismatch {
                what: "initial std devs",
                expected: d,
                actual: std_devs.len(),
            });
        }
        let mut cov = vec![0.0; d * d];
        for (i, s) in std_devs.iter().enumerate() {
            cov[i * d + i] = s * s;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance entries.
    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, &self.cov)
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    fn compute_cache(&self) -> Option<BlockCache> {
        let d = self.dim();
        let chol = cholesky_shifted(&self.cov, d, 0.0)?;
        let log_det = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum::<f64>();
        log_det.is_finite().then_some(BlockCache { chol, log_det })
    }

    /// Rebuilds the cache if dirty. Returns `false` if the covariance is not
    /// positive-definite.
    pub(crate) fn refresh(&mut self) -> bool {
        if self.cache.is_none() {
            self.cache = self.compute_cache();
        }
        self.cache.is_some()
    }

    /// Log-density at `z`, or `None` if the covariance cannot be factored.
    pub fn log_density(&self, z: &[f64]) -> Option<f64> {
        match &self.cache {
            Some(c) => Some(self.eval(c, z)),
            None => self.compute_cache().map(|c| self.eval(&c, z)),
        }
    }

    fn eval(&self, cache: &BlockCache, z: &[f64]) -> f64 {
        let d = self.dim();
        let l = &cache.chol;
        // Forward substitution L u = z - mu; the quadratic form is |u|^2.
        let mut u = [0.0f64; 16];
        let mut heap;
        let u: &mut [f64] = if d <= 16 {
            &mut u[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        let mut q = 0.0;
        for i in 0..d {
            let mut s = z[i] - self.mean[i];
            for k in 0..i {
                s -= l[i * d + k] * u[k];
            }
            u[i] = s / l[i * d + i];
            q += u[i] * u[i];
        }
        -0.5 * (d as f64 * LN_2PI + cache.log_det + q)
    }

    /// Mahalanobis-squared distance of `z` from the block mean.
    pub fn mahalanobis_sq(&self, z: &[f64]) -> Option<f64> {
        let c = match &self.cache {
            Some(c) => c.clone(),
            None => self.compute_cache()?,
        };
        let ld = self.eval(&c, z);
        Some(-2.0 * ld - self.dim() as f64 * LN_2PI - c.log_det)
    }

    /// Incremental mean/covariance step with learning rate `omega`:
    /// `mu' = mu + omega (z - mu)`,
    /// `C' = C - dd^T + omega ((z - mu')(z - mu')^T - C)` with `d = mu' - mu`.
    pub(crate) fn absorb(&mut self, z: &[f64], omega: f64, floor: f64) {
        let d = self.dim();
        let mut delta = vec![0.0; d];
        for i in 0..d {
            delta[i] = omega * (z[i] - self.mean[i]);
            self.mean[i] += delta[i];
        }
        for r in 0..d {
            let er = z[r] - self.mean[r];
            for c in 0..d {
                let ec = z[c] - self.mean[c];
                let idx = r * d + c;
                self.cov[idx] =
                    self.cov[idx] - delta[r] * delta[c] + omega * (er * ec - self.cov[idx]);
            }
        }
        self.symmetrize();
        self.cache = None;
        self.regularize(floor);
        if self.cache.is_none() {
            self.cache = self.compute_cache();
        }
    }

    fn symmetrize(&mut self) {
        let d = self.dim();
        for r in 0..d {
            for c in (r + 1)..d {
                let m = 0.5 * (self.cov[r * d + c] + self.cov[c * d + r]);
                self.cov[r * d + c] = m;
                self.cov[c * d + r] = m;
            }
        }
    }

    /// Adds diagonal jitter so the smallest eigenvalue is at least `floor`.
    pub(crate) fn regularize(&mut self, floor: f64) {
        // lambda_min >= floor exactly when C - floor I is positive
        // semi-definite; a successful factorization skips the eigen solve.
        if cholesky_shifted(&self.cov, self.dim(), floor).is_some() {
            return;
        }
        let lmin = self.min_eigenvalue();
        if lmin < floor {
            let jitter = floor - lmin;
            let d = self.dim();
            for i in 0..d {
                self.cov[i * d + i] += jitter;
            }
            self.cache = None;
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(self.cov_matrix());
        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// One mixture component: independent input (X) and output (Y) Gaussian
/// blocks, accumulated posterior mass and a collision credit accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub(crate) x: GaussianBlock,
    pub(crate) y: GaussianBlock,
    pub(crate) mass: f64,
    pub(crate) created_at: u64,
    pub(crate) collision_value: f64,
}

impl MixtureComponent {
    pub fn new(x: GaussianBlock, y: GaussianBlock, mass: f64, created_at: u64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "component mass must be positive, got {mass}"
            )));
        }
        Ok(Self {
            x,
            y,
            mass,
            created_at,
            collision_value: 0.0,
        })
    }

    pub fn input(&self) -> &GaussianBlock {
        &self.x
    }

    pub fn output(&self) -> &GaussianBlock {
        &self.y
    }

    pub fn mu_x(&self) -> &[f64] {
        self.x.mean()
    }

    pub fn mu_y(&self) -> &[f64] {
        self.y.mean()
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn created_at(&self) -> u64 {
        self.created_at
    }

    pub fn collision_value(&self) -> f64 {
        self.collision_value
    }

    pub(crate) fn refresh(&mut self) -> bool {
        let a = self.x.refresh();
        let b = self.y.refresh();
        a && b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_at_mean_of_standard_normal() {
        let b = GaussianBlock::isotropic(vec![0.5, -1.0], &[1.0, 1.0]).unwrap();
        let ld = b.log_density(&[0.5, -1.0]).unwrap();
        assert!((ld + LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn cached_and_uncached_agree() {
        let mut b =
            GaussianBlock::new(vec![1.0, 2.0, 3.0], vec![2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.7])
                .unwrap();
        let z = [0.3, 2.5, 2.0];
        let cold = b.log_density(&z).unwrap();
        assert!(b.refresh());
        let warm = b.log_density(&z).unwrap();
        assert!((cold - warm).abs() < 1e-14);
    }

    #[test]
    fn regularize_lifts_smallest_eigenvalue() {
        let mut b = GaussianBlock::new(vec![0.0, 0.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        b.regularize(1e-6);
        assert!(b.min_eigenvalue() >= 1e-6 - 1e-15);
        assert!(b.refresh());
    }

    #[test]
    fn indefinite_block_has_no_density() {
        let b = GaussianBlock::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(b.log_density(&[0.0, 0.0]).is_none());
    }
}
