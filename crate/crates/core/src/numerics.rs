//! Dense symmetric-matrix primitives and seeded sampling.
//!
//! Everything here works on `nalgebra` dense storage. The random number
//! generator is fixed to xoshiro256++ (`rand_xoshiro` 0.7) seeded through
//! SplitMix64, so simulations replicate bit-for-bit across machines.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot threshold used by [`cholesky`].
pub const PD_TOLERANCE: f64 = 1e-12;

/// An `n x p` data matrix, one observation per row.
pub type DataMatrix = DMatrix<f64>;

/// Dense symmetric matrix. Symmetry is checked on construction and the
/// stored entries are exactly symmetric afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, empty, non-finite or visibly
    /// asymmetric input. Round-off asymmetry (below `1e-8` relative to the
    /// largest entry) is removed by averaging the two triangles.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch("matrix must be at least 1x1".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(1.0);
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                    return Err(Error::Domain(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let mut m = m;
        for i in 0..p {
            for j in (i + 1)..p {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = avg;
                m[(j, i)] = avg;
            }
        }
        Ok(SymMatrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds a matrix from row vectors.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("rows must all have length equal to the row count".into()));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| self.0.row(i).iter().copied().collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.to_rows()
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: DMatrix<f64>,
}

impl CholeskyFactor {
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// Solves `S X = B` by forward and back substitution.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let p = self.dim();
        if b.nrows() != p || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side is {}x{}, expected {p} rows and at least one column",
                b.nrows(),
                b.ncols()
            )));
        }
        let mut x = b.clone();
        for c in 0..x.ncols() {
            // L y = b
            for i in 0..p {
                let mut v = x[(i, c)];
                for k in 0..i {
                    v -= self.l[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = v / self.l[(i, i)];
            }
            // Lᵀ x = y
            for i in (0..p).rev() {
                let mut v = x[(i, c)];
                for k in (i + 1)..p {
                    v -= self.l[(k, i)] * x[(k, c)];
                }
                x[(i, c)] = v / self.l[(i, i)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let p = self.dim();
        self.solve(&DMatrix::identity(p, p))
            .expect("identity has matching shape")
    }
}

/// Cholesky factorization with a relative pivot threshold of
/// [`PD_TOLERANCE`] times the largest diagonal entry.
pub fn cholesky(s: &SymMatrix) -> Result<CholeskyFactor> {
    let a = s.as_matrix();
    let p = a.nrows();
    let max_diag = (0..p).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
    let tol = PD_TOLERANCE * max_diag.max(0.0);
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..p {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(CholeskyFactor { l })
}

pub fn logdet_pd(s: &SymMatrix) -> Result<f64> {
    Ok(cholesky(s)?.logdet())
}

pub fn solve_pd(s: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cholesky(s)?.solve(b)
}

/// Seeded xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: Xoshiro256PlusPlus,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent state for replicate `index`: seeded with `seed + index`.
    pub fn for_replicate(base_seed: u64, index: u64) -> Self {
        RngState::new(base_seed.wrapping_add(index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = rand::Rng::random(&mut self.inner);
        lo + (hi - lo) * u
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draws `n` rows from `N(0, sigma)`. Normals are consumed row-major.
pub fn mvn_sample(sigma: &SymMatrix, n: usize, rng: &mut RngState) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let chol = cholesky(sigma)?;
    let p = sigma.dim();
    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.standard_normal();
        }
    }
    Ok(z * chol.l().transpose())
}

/// Column means of `x`.
pub fn column_means(x: &DataMatrix) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Covariance of the rows of `x` about `center`, divided by `divisor`.
pub fn scatter_about(x: &DataMatrix, center: &DVector<f64>, divisor: f64) -> Result<SymMatrix> {
    if center.len() != x.ncols() {
        return Err(Error::DimensionMismatch("center length must equal column count".into()));
    }
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-center[j]);
    }
    let s = c.tr_mul(&c) / divisor;
    SymMatrix::new(s)
}

/// Sample covariance with divisor `n - 1`.
pub fn sample_covariance(x: &DataMatrix) -> Result<SymMatrix> {
    if x.nrows() < 2 {
        return Err(Error::Domain("need at least two observations".into()));
    }
    scatter_about(x, &column_means(x), (x.nrows() - 1) as f64)
}

/// Pearson product-moment correlation of the columns of `x`.
///
/// Zero-variance columns are rejected with [`Error::ConstantColumn`].
pub fn sample_correlation(x: &DataMatrix) -> Result<SymMatrix> {
    let s = sample_covariance(x)?;
    covariance_to_correlation(&s)
}

/// `D^{-1/2} S D^{-1/2}` with the diagonal forced to exactly one.
pub fn covariance_to_correlation(s: &SymMatrix) -> Result<SymMatrix> {
    let p = s.dim();
    let sd: Vec<f64> = (0..p).map(|i| s.get(i, i).sqrt()).collect();
    if let Some(column) = sd.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ConstantColumn { column });
    }
    let r = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (s.get(i, j) / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    SymMatrix::new(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn random_pd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = RngState::new(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.standard_normal());
        SymMatrix::new(&a * a.transpose() + DMatrix::identity(dim, dim) * 0.5).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let c = cholesky(&SymMatrix::identity(3)).unwrap();
        assert_eq!(c.l(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let s = SymMatrix::new(dmatrix![4.0, 2.0; 2.0, 5.0]).unwrap();
        let c = cholesky(&s).unwrap();
        assert_eq!(c.l(), &dmatrix![2.0, 0.0; 1.0, 2.0]);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let s = SymMatrix::new(dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap();
        assert!(matches!(cholesky(&s), Err(Error::NotPositiveDefinite { pivot: 1, .. })));
    }

    #[test]
    fn cholesky_rejects_singular() {
        let s = SymMatrix::new(dmatrix![1.0, 1.0; 1.0, 1.0]).unwrap();
        assert!(cholesky(&s).is_err());
    }

    #[test]
    fn reconstruction_error_is_small() {
        for seed in 0..20 {
            let s = random_pd(1 + (seed as usize % 7), seed);
            let c = cholesky(&s).unwrap();
            let err = (c.l() * c.l().transpose() - s.as_matrix()).amax();
            assert!(err <= 1e-9 * s.as_matrix().amax());
        }
    }

    #[test]
    fn logdet_examples() {
        assert_eq!(logdet_pd(&SymMatrix::identity(5)).unwrap(), 0.0);
        let v = logdet_pd(&SymMatrix::from_diagonal(&[2.0, 3.0])).unwrap();
        assert!((v - 6f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn logdet_matches_eigenvalues() {
        let s = random_pd(4, 11);
        let eig = nalgebra::SymmetricEigen::new(s.as_matrix().clone());
        let oracle: f64 = eig.eigenvalues.iter().map(|v| v.ln()).sum();
        assert!((logdet_pd(&s).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn solve_examples() {
        let b = dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0];
        assert_eq!(solve_pd(&SymMatrix::identity(3), &b).unwrap(), b);
        let x = solve_pd(&SymMatrix::from_diagonal(&[2.0, 4.0]), &DMatrix::identity(2, 2)).unwrap();
        assert!((x - dmatrix![0.5, 0.0; 0.0, 0.25]).amax() < 1e-15);
    }

    #[test]
    fn solve_matches_explicit_inverse() {
        let s = random_pd(5, 3);
        // LU-based inverse, independent of the Cholesky path
        let inv = s.as_matrix().clone().try_inverse().unwrap();
        let x = solve_pd(&s, &DMatrix::identity(5, 5)).unwrap();
        assert!((x - &inv).amax() <= 1e-8 * inv.amax());
        let self_solve = solve_pd(&s, s.as_matrix()).unwrap();
        assert!((self_solve - DMatrix::<f64>::identity(5, 5)).amax() < 1e-8);
    }

    #[test]
    fn solve_rejects_bad_rhs() {
        let s = SymMatrix::identity(2);
        assert!(solve_pd(&s, &DMatrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn mvn_law_of_large_numbers() {
        let mut rng = RngState::new(42);
        let x = mvn_sample(&SymMatrix::identity(2), 100_000, &mut rng).unwrap();
        let s = sample_covariance(&x).unwrap();
        assert!((s.as_matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 0.05);
    }

    #[test]
    fn mvn_is_deterministic() {
        let sigma = random_pd(3, 5);
        let a = mvn_sample(&sigma, 50, &mut RngState::new(9)).unwrap();
        let b = mvn_sample(&sigma, 50, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        let one = mvn_sample(&sigma, 1, &mut RngState::new(9)).unwrap();
        assert_eq!(one.shape(), (1, 3));
        assert!(mvn_sample(&sigma, 0, &mut RngState::new(9)).is_err());
    }

    #[test]
    fn constant_column_is_reported() {
        let x = dmatrix![1.0, 2.0, 3.0; 2.0, 2.0, 1.0; 3.0, 2.0, 0.5];
        assert_eq!(sample_correlation(&x), Err(Error::ConstantColumn { column: 1 }));
    }

    #[test]
    fn asymmetric_input_rejected() {
        assert!(SymMatrix::new(dmatrix![1.0, 0.5; 0.2, 1.0]).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }
}
