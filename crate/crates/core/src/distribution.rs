//! The Gaussian search distribution `N(m, sigma^2 C)`, its sampling, the
//! ranking weights, and the transforms into the local (Fisher-whitened)
//! coordinate system that every adaptation rule works in.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Eigenvalues below this fraction of the largest one are raised to it.
pub const EIGEN_FLOOR: f64 = 1e-20;
/// Eigenvalues more negative than this fraction of the largest one mean the
/// matrix is not positive definite; smaller negative values are round-off.
const NEGATIVE_TOLERANCE: f64 = 1e-12;

/// Eigendecomposition of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub(crate) struct SpdEigen {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
    pub clamped: bool,
}

impl SpdEigen {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidArgument(format!(
                "expected a square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degeneracy("matrix has non-finite entries".into()));
        }
        let sym = symmetrize(matrix);
        let eig = SymmetricEigen::new(sym);
        let max = eig.eigenvalues.max();
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::Degeneracy(format!(
                "largest eigenvalue is {max}, matrix is not positive definite"
            )));
        }
        let min = eig.eigenvalues.min();
        if min < -NEGATIVE_TOLERANCE * max {
            return Err(Error::Degeneracy(format!(
                "eigenvalue {min:e} < 0, matrix is not positive definite"
            )));
        }
        let floor = EIGEN_FLOOR * max;
        let mut clamped = false;
        let values = eig.eigenvalues.map(|v| {
            if v < floor {
                clamped = true;
                floor
            } else {
                v
            }
        });
        if clamped {
            log::warn!("covariance eigenvalues clamped at {floor:e} (min was {min:e})");
        }
        Ok(Self {
            vectors: eig.eigenvectors,
            values,
            clamped,
        })
    }

    /// `Q f(L) Q^T`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * f(self.values[j])
        });
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn log_det(&self) -> f64 {
        self.values.iter().map(|v| v.ln()).sum()
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a symmetric positive definite matrix.
pub fn matrix_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(SpdEigen::new(c)?.apply(f64::sqrt))
}

/// Row-major `vec`: `(A11, ..., A1d, A21, ..., Add)`.
pub fn vec_row_major(a: &DMatrix<f64>) -> DVector<f64> {
    let (r, c) = a.shape();
    DVector::from_iterator(r * c, (0..r).flat_map(|i| (0..c).map(move |j| a[(i, j)])))
}

/// Inverse of [`vec_row_major`] for a `d x d` matrix.
pub fn unvec_row_major(v: &DVector<f64>, d: usize) -> Result<DMatrix<f64>> {
    check_dim(d * d, v.len())?;
    Ok(DMatrix::from_row_slice(d, d, v.as_slice()))
}

/// Mean, step-size and shape covariance of the search distribution with
/// cached `C^{1/2}` and `C^{-1/2}` from a single eigendecomposition.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    inv_sqrt_cov: DMatrix<f64>,
    log_det_cov: f64,
    clamped: bool,
}

impl GaussianParams {
    pub fn new(mean: DVector<f64>, sigma: f64, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Degeneracy(format!("step-size must be positive, got {sigma}")));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degeneracy("mean vector has non-finite entries".into()));
        }
        let eig = SpdEigen::new(&cov)?;
        Ok(Self::from_eigen(mean, sigma, symmetrize(&cov), &eig))
    }

    fn from_eigen(mean: DVector<f64>, sigma: f64, cov: DMatrix<f64>, eig: &SpdEigen) -> Self {
        Self {
            mean,
            sigma,
            cov,
            sqrt_cov: eig.apply(f64::sqrt),
            inv_sqrt_cov: eig.apply(|v| 1.0 / v.sqrt()),
            log_det_cov: eig.log_det(),
            clamped: eig.clamped,
        }
    }

    /// `N(mean, sigma^2 I)`.
    pub fn isotropic(mean: DVector<f64>, sigma: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, sigma, DMatrix::identity(d, d))
    }

    /// Splits a full covariance `Sigma` into `sigma = det(Sigma)^{1/(2d)}` and
    /// the unit-determinant shape `C = Sigma / sigma^2`.
    pub fn from_covariance(mean: DVector<f64>, full: &DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), full.nrows())?;
        let d = mean.len() as f64;
        let eig = SpdEigen::new(full)?;
        let sigma = (eig.log_det() / (2.0 * d)).exp();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Degeneracy(format!("det(Sigma) gives step-size {sigma}")));
        }
        let s2 = sigma * sigma;
        let shape = SpdEigen {
            vectors: eig.vectors,
            values: eig.values / s2,
            clamped: eig.clamped,
        };
        Ok(Self::from_eigen(mean, sigma, symmetrize(full) / s2, &shape))
    }

    /// Same distribution shape and mean with a different step-size.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Degeneracy(format!("step-size must be positive, got {sigma}")));
        }
        Ok(Self { sigma, ..self.clone() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
    pub fn sqrt_cov(&self) -> &DMatrix<f64> {
        &self.sqrt_cov
    }
    pub fn inv_sqrt_cov(&self) -> &DMatrix<f64> {
        &self.inv_sqrt_cov
    }
    /// `ln det C`.
    pub fn log_det_cov(&self) -> f64 {
        self.log_det_cov
    }
    /// Whether eigenvalue clamping was needed when building the caches.
    pub fn eigen_clamped(&self) -> bool {
        self.clamped
    }

    /// `Sigma = sigma^2 C`.
    pub fn full_cov(&self) -> DMatrix<f64> {
        &self.cov * (self.sigma * self.sigma)
    }

    /// `Sigma^{-1/2}`.
    pub fn inv_sqrt_full_cov(&self) -> DMatrix<f64> {
        &self.inv_sqrt_cov / self.sigma
    }
}

/// `lambda` draws `x_i = m + sigma * sqrt(C) z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPopulation {
    pub z: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
}

impl SampledPopulation {
    /// Builds the population from given standard-normal draws.
    pub fn from_z(params: &GaussianParams, z: Vec<DVector<f64>>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "population needs at least 2 solutions, got {}",
                z.len()
            )));
        }
        for zi in &z {
            check_dim(params.dim(), zi.len())?;
        }
        let y: Vec<_> = z.iter().map(|zi| params.sqrt_cov() * zi).collect();
        let x = y.iter().map(|yi| params.mean() + yi * params.sigma()).collect();
        Ok(Self { z, y, x })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

pub fn sample_population<R: Rng + ?Sized>(
    params: &GaussianParams,
    lambda: usize,
    rng: &mut R,
) -> Result<SampledPopulation> {
    if lambda < 2 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 2, got {lambda}")));
    }
    let d = params.dim();
    let z = (0..lambda)
        .map(|_| DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal))))
        .collect();
    SampledPopulation::from_z(params, z)
}

/// Positive log-linear weights for the `mu = lambda / 2` best solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct RecombinationWeights {
    pub w: Vec<f64>,
    pub mu_w: f64,
}

impl RecombinationWeights {
    pub fn mu(&self) -> usize {
        self.w.len()
    }
}

pub fn compute_weights(lambda: usize) -> Result<RecombinationWeights> {
    if lambda < 2 {
        return Err(Error::InvalidArgument(format!("lambda must be >= 2, got {lambda}")));
    }
    let mu = lambda / 2;
    let base = ((lambda as f64 + 1.0) / 2.0).ln();
    let raw: Vec<f64> = (1..=mu).map(|i| base - (i as f64).ln()).collect();
    let total: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let mu_w = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    Ok(RecombinationWeights { w, mu_w })
}

/// `Sigma^{-1/2} delta_m`.
pub fn whiten_mean_direction(params: &GaussianParams, delta_m: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(params.dim(), delta_m.len())?;
    Ok(params.inv_sqrt_cov() * delta_m / params.sigma())
}

/// `vec(Sigma^{-1/2} dSigma Sigma^{-1/2}) / sqrt(2)`, row-major.
///
/// The squared norm of the result is `Tr((Sigma^{-1} dSigma)^2) / 2`, the
/// Fisher metric of a Gaussian restricted to its covariance.
pub fn whiten_cov_direction(params: &GaussianParams, delta_sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_dim(params.dim(), delta_sigma.nrows())?;
    check_dim(params.dim(), delta_sigma.ncols())?;
    let s = params.inv_sqrt_full_cov();
    let whitened = &s * delta_sigma * &s;
    Ok(vec_row_major(&whitened) * std::f64::consts::FRAC_1_SQRT_2)
}

/// Approximation of `E||N(0, I_d)||`.
pub fn expected_chi_norm(d: usize) -> f64 {
    let d = d as f64;
    d.sqrt() * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn weights_small_lambdas() {
        let w2 = compute_weights(2).unwrap();
        assert_eq!(w2.w, vec![1.0]);
        assert_eq!(w2.mu_w, 1.0);

        // ln(2.5) - ln 1 and ln(2.5) - ln 2, normalized.
        let a = 2.5f64.ln();
        let b = 2.5f64.ln() - 2f64.ln();
        let w4 = compute_weights(4).unwrap();
        assert_relative_eq!(w4.w[0], a / (a + b), epsilon = 1e-15);
        assert_relative_eq!(w4.w[1], b / (a + b), epsilon = 1e-15);
        assert!((w4.w[0] - 0.8042).abs() < 1e-4);
        assert!((w4.w[1] - 0.1958).abs() < 1e-4);

        let w10 = compute_weights(10).unwrap();
        assert_eq!(w10.mu(), 5);
        assert!((w10.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w10.w.windows(2).all(|p| p[0] > p[1]));
    }

    #[test]
    fn weights_reject_tiny_lambda() {
        assert!(matches!(compute_weights(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(compute_weights(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn identity_sampling_returns_z() {
        let p = GaussianParams::isotropic(DVector::zeros(3), 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = sample_population(&p, 5, &mut rng).unwrap();
        for (x, z) in pop.x.iter().zip(&pop.z) {
            assert_eq!(x, z);
        }
        assert!(sample_population(&p, 1, &mut rng).is_err());
    }

    #[test]
    fn diagonal_sqrt_sampling() {
        let m = DVector::from_vec(vec![1.0, -1.0]);
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        let p = GaussianParams::new(m.clone(), 2.0, c).unwrap();
        let z = vec![DVector::from_vec(vec![1.0, 1.0]); 2];
        let pop = SampledPopulation::from_z(&p, z).unwrap();
        assert_relative_eq!(pop.y[0], DVector::from_vec(vec![2.0, 1.0]), epsilon = 1e-14);
        assert_relative_eq!(pop.x[0], m + DVector::from_vec(vec![4.0, 2.0]), epsilon = 1e-14);
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let c = random_spd(4, 3);
        let p = GaussianParams::new(DVector::from_element(4, 0.5), 0.7, c).unwrap();
        let a = sample_population(&p, 8, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = sample_population(&p, 8, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_covariance_matches() {
        let d = 5;
        let c = random_spd(d, 11);
        let p = GaussianParams::new(DVector::from_element(d, 2.0), 1.5, c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let pop = sample_population(&p, n, &mut rng).unwrap();
        let mean = pop.x.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
        let mut emp = DMatrix::zeros(d, d);
        for x in &pop.x {
            let c = x - &mean;
            emp += &c * c.transpose();
        }
        emp /= (n - 1) as f64;
        assert!(rel_frob(&emp, &p.full_cov()) < 0.05);
    }

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert_relative_eq!(matrix_sqrt(&i).unwrap(), i, epsilon = 1e-14);
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let s = matrix_sqrt(&c).unwrap();
        assert_relative_eq!(
            s,
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])),
            epsilon = 1e-14
        );
        let c = random_spd(6, 42);
        let s = matrix_sqrt(&c).unwrap();
        assert!(rel_frob(&(&s * &s), &c) < 1e-9);
        assert!((&s - s.transpose()).amax() <= 1e-12 * s.amax());
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(matrix_sqrt(&c), Err(Error::Degeneracy(_))));
        assert!(matches!(matrix_sqrt(&DMatrix::zeros(2, 2)), Err(Error::Degeneracy(_))));
    }

    #[test]
    fn tiny_eigenvalues_are_clamped() {
        let c = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-30]));
        let p = GaussianParams::new(DVector::zeros(2), 1.0, c).unwrap();
        assert!(p.eigen_clamped());
        assert!(p.sqrt_cov()[(1, 1)] > 0.0);
    }

    #[test]
    fn whiten_mean_examples() {
        let p = GaussianParams::isotropic(DVector::zeros(2), 1.0).unwrap();
        let v = DVector::from_vec(vec![0.3, -2.0]);
        assert_eq!(whiten_mean_direction(&p, &v).unwrap(), v);
        let p = GaussianParams::isotropic(DVector::zeros(2), 2.0).unwrap();
        let out = whiten_mean_direction(&p, &DVector::from_vec(vec![2.0, 0.0])).unwrap();
        assert_relative_eq!(out, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn whiten_mean_quadratic_form() {
        let d = 5;
        let p = GaussianParams::new(DVector::zeros(d), 0.8, random_spd(d, 8)).unwrap();
        let delta = DVector::from_fn(d, |i, _| i as f64 - 1.7);
        let out = whiten_mean_direction(&p, &delta).unwrap();
        let inv = p.full_cov().try_inverse().unwrap();
        let q = (delta.transpose() * inv * &delta)[(0, 0)];
        assert_relative_eq!(out.norm_squared(), q, max_relative = 1e-9);
    }

    #[test]
    fn whiten_cov_examples() {
        let d = 2;
        let p = GaussianParams::isotropic(DVector::zeros(d), 1.0).unwrap();
        let out = whiten_cov_direction(&p, &DMatrix::identity(d, d)).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(out, DVector::from_vec(vec![h, 0.0, 0.0, h]), epsilon = 1e-15);
        assert_relative_eq!(out.norm(), 1.0, epsilon = 1e-15);

        let p4 = GaussianParams::isotropic(DVector::zeros(d), 2.0).unwrap();
        let out4 = whiten_cov_direction(&p4, &(DMatrix::identity(d, d) * 4.0)).unwrap();
        assert_relative_eq!(out4, out, epsilon = 1e-14);
    }

    #[test]
    fn whiten_cov_trace_form() {
        let d = 4;
        let p = GaussianParams::new(DVector::zeros(d), 1.3, random_spd(d, 21)).unwrap();
        let a = random_spd(d, 22) - DMatrix::identity(d, d) * 2.0;
        let out = whiten_cov_direction(&p, &a).unwrap();
        let inv = p.full_cov().try_inverse().unwrap();
        let m = &inv * &a;
        let expected = 0.5 * (&m * &m).trace();
        assert_relative_eq!(out.norm_squared(), expected, max_relative = 1e-9);
    }

    #[test]
    fn vec_is_row_major() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_row_major(&a).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvec_row_major(&vec_row_major(&a), 2).unwrap(), a);
    }

    #[test]
    fn chi_norm_values() {
        assert_relative_eq!(expected_chi_norm(1), 0.75 + 1.0 / 21.0, epsilon = 1e-15);
        assert!((expected_chi_norm(1) - 0.7976).abs() < 1e-4);
        assert!((expected_chi_norm(10) - 3.0847).abs() < 1e-4);
        for d in [100usize, 1000, 10_000] {
            let ratio = expected_chi_norm(d) / (d as f64).sqrt();
            assert!((1.0 - ratio).abs() <= 1.0 / (4.0 * d as f64) + 1e-12);
        }
    }

    #[test]
    fn covariance_split_has_unit_determinant() {
        let d = 3;
        let full = random_spd(d, 4) * 7.0;
        let p = GaussianParams::from_covariance(DVector::zeros(d), &full).unwrap();
        assert!(p.log_det_cov().abs() < 1e-9);
        assert!(rel_frob(&p.full_cov(), &full) < 1e-12);
        let full = DMatrix::identity(2, 2) * 4.0;
        let p = GaussianParams::from_covariance(DVector::zeros(2), &full).unwrap();
        assert_relative_eq!(p.sigma(), 2.0, epsilon = 1e-14);
        assert_relative_eq!(p.cov().clone(), DMatrix::identity(2, 2), epsilon = 1e-14);
    }
}
