//! Covariance estimation and affine-invariant Riemannian geometry on SPD matrices.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;

use crate::error::{FaarError, Result};

pub const DEFAULT_SHRINKAGE: f64 = 0.1;
/// Eigenvalue floor applied before taking logarithms.
pub const EIGEN_FLOOR: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;

/// Symmetric positive-definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validates symmetry (to 1e-10, relative to the largest entry) and a
    /// strictly positive spectrum.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(FaarError::NotSpd(format!("{}×{} is not a non-empty square matrix", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(FaarError::NonFinite("SPD matrix".into()));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(FaarError::NotSpd("matrix is not symmetric".into()));
        }
        let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
        if !(min > 0.0) {
            return Err(FaarError::NotSpd(format!("smallest eigenvalue {min:e}")));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Shrinkage covariance `(1−α)·XcXcᵀ/(T−1) + α·(tr/c)·I` of a
/// `[channels × samples]` epoch. Not checked for definiteness.
pub fn covariance(epoch: ArrayView2<'_, f64>, alpha: f64) -> Result<DMatrix<f64>> {
    let (c, t) = epoch.dim();
    if c == 0 || t < 2 {
        return Err(FaarError::TooShort { need: 2, got: t });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FaarError::BadConfig(format!("shrinkage {alpha} outside [0, 1]")));
    }
    if epoch.iter().any(|v| !v.is_finite()) {
        return Err(FaarError::NonFinite("epoch".into()));
    }
    let mut xc = DMatrix::zeros(c, t);
    for (i, row) in epoch.outer_iter().enumerate() {
        let mean = row.sum() / t as f64;
        for (j, v) in row.iter().enumerate() {
            xc[(i, j)] = v - mean;
        }
    }
    let sample = (&xc * xc.transpose()) / (t - 1) as f64;
    let mu = sample.trace() / c as f64;
    let mut cov = sample * (1.0 - alpha);
    for i in 0..c {
        cov[(i, i)] += alpha * mu;
    }
    Ok(symmetrize(cov))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `V·diag(f(λ))·Vᵀ` for a symmetric matrix.
fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    symmetrize(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn logm(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(EIGEN_FLOOR).ln())
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, f64::exp)
}

pub fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

pub fn invsqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| 1.0 / l.max(EIGEN_FLOOR).sqrt())
}

#[derive(Debug, Clone)]
pub struct RiemannianMean {
    pub mean: SpdMatrix,
    pub iterations: usize,
    /// False when `max_iter` was reached first; `mean` is then the last iterate.
    pub converged: bool,
}

/// Affine-invariant Fréchet mean by the fixed-point iteration
/// `M ← M^½ exp(mean log(M^-½ Cᵢ M^-½)) M^½`, started at the arithmetic mean.
pub fn riemannian_mean(mats: &[SpdMatrix], tol: f64, max_iter: usize) -> Result<RiemannianMean> {
    let Some(first) = mats.first() else {
        return Err(FaarError::EmptyInput("no matrices to average".into()));
    };
    let n = first.dim();
    if mats.iter().any(|m| m.dim() != n) {
        return Err(FaarError::ShapeMismatch("matrices differ in size".into()));
    }
    let mut m = mats.iter().fold(DMatrix::zeros(n, n), |acc, c| acc + c.matrix()) / mats.len() as f64;
    for it in 1..=max_iter {
        let half = sqrtm(&m);
        let ihalf = invsqrtm(&m);
        let t = mats.iter().fold(DMatrix::zeros(n, n), |acc, c| acc + logm(&(&ihalf * c.matrix() * &ihalf)))
            / mats.len() as f64;
        let norm = t.norm();
        m = symmetrize(&half * expm(&t) * &half);
        if norm < tol {
            return Ok(RiemannianMean { mean: SpdMatrix::new(m)?, iterations: it, converged: true });
        }
    }
    Ok(RiemannianMean { mean: SpdMatrix::new(m)?, iterations: max_iter, converged: false })
}

/// Upper triangle of a symmetric matrix, row-major, off-diagonals scaled by √2.
pub fn upper_vectorize(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows();
    let mut v = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            v.push(if i == j { s[(i, j)] } else { std::f64::consts::SQRT_2 * s[(i, j)] });
        }
    }
    v
}

/// Tangent space at a reference point; caches `M^-½`.
#[derive(Debug, Clone)]
pub struct TangentSpace {
    reference: SpdMatrix,
    isqrt: DMatrix<f64>,
}

impl TangentSpace {
    pub fn new(reference: SpdMatrix) -> Self {
        let isqrt = invsqrtm(reference.matrix());
        Self { reference, isqrt }
    }

    pub fn reference(&self) -> &SpdMatrix {
        &self.reference
    }

    pub fn dim(&self) -> usize {
        let n = self.reference.dim();
        n * (n + 1) / 2
    }

    pub fn project(&self, c: &SpdMatrix) -> Result<Vec<f64>> {
        if c.dim() != self.reference.dim() {
            return Err(FaarError::ShapeMismatch(format!(
                "matrix is {0}×{0}, reference {1}×{1}",
                c.dim(),
                self.reference.dim()
            )));
        }
        Ok(upper_vectorize(&logm(&(&self.isqrt * c.matrix() * &self.isqrt))))
    }
}

/// `vec(log(M^-½ C M^-½))`; its Euclidean norm is the geodesic distance.
pub fn tangent_project(c: &SpdMatrix, m: &SpdMatrix) -> Result<Vec<f64>> {
    TangentSpace::new(m.clone()).project(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::PortableRng;
    use ndarray::Array2;

    fn random_spd(rng: &mut PortableRng, n: usize) -> SpdMatrix {
        let a = DMatrix::from_fn(n, n, |_, _| rng.normal());
        SpdMatrix::new(symmetrize(&a * a.transpose() + DMatrix::identity(n, n) * 0.5)).unwrap()
    }

    #[test]
    fn covariance_matches_direct_formula() {
        let mut rng = PortableRng::new(3);
        let x = Array2::from_shape_fn((4, 50), |_| rng.normal());
        let c = covariance(x.view(), 0.1).unwrap();
        let mean: Vec<f64> = (0..4).map(|i| x.row(i).sum() / 50.0).collect();
        let mut s = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                s[i][j] = (0..50).map(|t| (x[[i, t]] - mean[i]) * (x[[j, t]] - mean[j])).sum::<f64>() / 49.0;
            }
        }
        let tr = (0..4).map(|i| s[i][i]).sum::<f64>() / 4.0;
        for i in 0..4 {
            for j in 0..4 {
                let want = 0.9 * s[i][j] + if i == j { 0.1 * tr } else { 0.0 };
                assert!((c[(i, j)] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shrinkage_rescues_rank_one_epochs() {
        let x = Array2::from_shape_fn((3, 40), |(c, t)| (c + 1) as f64 * (t as f64 * 0.3).sin());
        assert!(SpdMatrix::new(covariance(x.view(), 0.0).unwrap()).is_err());
        assert!(SpdMatrix::new(covariance(x.view(), 0.1).unwrap()).is_ok());
    }

    #[test]
    fn white_noise_covariance_is_isotropic() {
        let mut rng = PortableRng::new(5);
        let t = 20_000;
        let x = Array2::from_shape_fn((3, t), |_| 2.0 * rng.normal());
        let c = covariance(x.view(), 0.0).unwrap();
        // var(ŝ²) = 2σ⁴/(T−1); off-diagonal se = σ²/√T
        let se_diag = (2.0 * 16.0 / (t - 1) as f64).sqrt();
        let se_off = 4.0 / (t as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let (want, se) = if i == j { (4.0, se_diag) } else { (0.0, se_off) };
                assert!((c[(i, j)] - want).abs() < 3.0 * se, "({i},{j}) {}", c[(i, j)]);
            }
        }
    }

    #[test]
    fn mean_of_identical_and_commuting_matrices() {
        let mut rng = PortableRng::new(7);
        let c = random_spd(&mut rng, 4);
        let m = riemannian_mean(&[c.clone()], 1e-10, 50).unwrap();
        assert!((m.mean.matrix() - c.matrix()).amax() < 1e-9);
        let m = riemannian_mean(&[c.clone(), c.clone()], 1e-10, 50).unwrap();
        assert!((m.mean.matrix() - c.matrix()).amax() < 1e-9);

        let a = [1.0, 4.0, 0.25];
        let b = [9.0, 1.0, 4.0];
        let da = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&a))).unwrap();
        let db = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&b))).unwrap();
        let m = riemannian_mean(&[da, db], 1e-12, 100).unwrap();
        assert!(m.converged);
        for i in 0..3 {
            assert!((m.mean.matrix()[(i, i)] - (a[i] * b[i]).sqrt()).abs() < 1e-8);
        }
    }

    #[test]
    fn projection_at_reference_is_zero() {
        let mut rng = PortableRng::new(11);
        let c = random_spd(&mut rng, 5);
        assert!(tangent_project(&c, &c).unwrap().iter().all(|v| v.abs() < 1e-10));
        assert_eq!(tangent_project(&c, &c).unwrap().len(), 15);
    }

    #[test]
    fn not_spd_is_detected() {
        assert!(SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
    }
}
