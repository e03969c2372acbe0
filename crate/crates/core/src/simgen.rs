//! Ground-truth model generators and Gaussian data sampling.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorParams, Structure};
use crate::numerics::{cholesky, DataMatrix, RngState, SymMatrix};

const MAX_ATTEMPTS: usize = 100;

/// Off-diagonal range that `AᵀA` is mapped onto before scaling.
pub const PHI_OFFDIAG_RANGE: (f64, f64) = (0.6, 0.8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub d: usize,
    pub children_per_factor: usize,
    pub lambda_range: (f64, f64),
    pub phi_scale: f64,
    pub n: usize,
    pub seed: u64,
    pub ucc_violation_fraction: f64,
    /// Main-to-extra split of explained variance for two-parent variables.
    pub extra_parent_ratio: f64,
}

impl Default for SimSpec {
    /// Low-dimensional setting: 3 factors with 5 children each, n = 1000.
    fn default() -> Self {
        SimSpec {
            d: 3,
            children_per_factor: 5,
            lambda_range: (0.6, 0.8),
            phi_scale: 0.25,
            n: 1000,
            seed: 0,
            ucc_violation_fraction: 0.0,
            extra_parent_ratio: 5.0,
        }
    }
}

/// High-dimensional presets with p = 1.5 n and d = 0.1 n.
pub const HIGHDIM_PRESETS: [usize; 3] = [250, 500, 1000];

impl SimSpec {
    pub fn p(&self) -> usize {
        self.d * self.children_per_factor
    }

    /// Preset for sample size `n`: p = 1.5 n, d = 0.1 n, 15 children per
    /// factor.
    pub fn highdim(n: usize) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(10) {
            return Err(Error::InvalidSpec(format!("high-dimensional preset needs n divisible by 10, got {n}")));
        }
        Ok(SimSpec {
            d: n / 10,
            children_per_factor: 15,
            n,
            ..SimSpec::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.lambda_range;
        if self.d == 0 || self.children_per_factor == 0 || self.n == 0 {
            return Err(Error::InvalidSpec("d, children_per_factor and n must be positive".into()));
        }
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidSpec(format!("lambda range ({lo}, {hi}) is not ordered")));
        }
        if !(0.0..=1.0).contains(&self.phi_scale) {
            return Err(Error::InvalidSpec(format!("phi_scale = {} outside [0, 1]", self.phi_scale)));
        }
        if !(0.0..=1.0).contains(&self.ucc_violation_fraction) {
            return Err(Error::InvalidSpec(format!(
                "ucc_violation_fraction = {} outside [0, 1]",
                self.ucc_violation_fraction
            )));
        }
        if !(self.extra_parent_ratio > 0.0) {
            return Err(Error::InvalidSpec("extra_parent_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Number of factors that lose their unique children.
    pub fn n_violating(&self) -> usize {
        // the small offset keeps e.g. 0.75 * 4 from rounding up to 4
        ((self.ucc_violation_fraction * self.d as f64) - 1e-9).ceil().max(0.0) as usize
    }
}

/// Factor correlation matrix with unit diagonal. The off-diagonals of `AᵀA`,
/// `A ~ U(0,1)^{d×d}`, are mapped affinely onto [0.6, 0.8] and multiplied by
/// `scale`; draws failing the Cholesky check are repeated.
pub fn gen_phi(d: usize, scale: f64, rng: &mut RngState) -> Result<SymMatrix> {
    if d == 0 {
        return Err(Error::InvalidSpec("d must be positive".into()));
    }
    if d == 1 || scale == 0.0 {
        return Ok(SymMatrix::identity(d));
    }
    let (lo_target, hi_target) = PHI_OFFDIAG_RANGE;
    for _ in 0..MAX_ATTEMPTS {
        let a = DMatrix::from_row_iterator(d, d, (0..d * d).map(|_| rng.uniform(0.0, 1.0)));
        let m = a.tr_mul(&a);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..d {
            for j in (i + 1)..d {
                lo = lo.min(m[(i, j)]);
                hi = hi.max(m[(i, j)]);
            }
        }
        let phi = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                1.0
            } else if hi > lo {
                scale * (lo_target + (hi_target - lo_target) * (m[(i, j)] - lo) / (hi - lo))
            } else {
                scale * 0.5 * (lo_target + hi_target)
            }
        });
        let phi = SymMatrix::new(phi)?;
        if cholesky(&phi).is_ok() {
            return Ok(phi);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no positive definite Φ after {MAX_ATTEMPTS} draws (d = {d}, scale = {scale})"
    )))
}

/// Independent-cluster model: variable `i` loads on factor
/// `i / children_per_factor` with a loading drawn from `lambda_range`, Φ from
/// [`gen_phi`], and Ω chosen for unit implied variances. Φ is drawn first.
pub fn gen_independent_cluster(spec: &SimSpec, rng: &mut RngState) -> Result<FactorParams> {
    spec.validate()?;
    let (d, c) = (spec.d, spec.children_per_factor);
    let p = spec.p();
    let phi = gen_phi(d, spec.phi_scale, rng)?;
    let (lo, hi) = spec.lambda_range;
    let mut lambda = DMatrix::zeros(p, d);
    for i in 0..p {
        lambda[(i, i / c)] = rng.uniform(lo, hi);
    }
    let omega = unit_variance_omega(&lambda, &phi)?;
    FactorParams::new(lambda, phi, omega)
}

fn unit_variance_omega(lambda: &DMatrix<f64>, phi: &SymMatrix) -> Result<DVector<f64>> {
    let common = lambda * phi.as_matrix() * lambda.transpose();
    let mut omega = DVector::zeros(lambda.nrows());
    for i in 0..lambda.nrows() {
        let h = common[(i, i)];
        if h >= 1.0 {
            return Err(Error::InvalidVariance { row: i, communality: h });
        }
        omega[i] = 1.0 - h;
    }
    Ok(omega)
}

/// Independent-cluster model with Φ = I in which `⌈fraction · d⌉` randomly
/// chosen factors lose all unique children: every child of a chosen factor
/// also loads on one extra factor, drawn uniformly from the others and
/// shared by all of that factor's children.
///
/// Each variable's explained variance R² is drawn from the squared
/// `lambda_range`; single-parent loadings are `√R²`, two-parent variables
/// split R² as `ratio : 1` between main and extra parent.
pub fn gen_ucc_violation(spec: &SimSpec, rng: &mut RngState) -> Result<FactorParams> {
    spec.validate()?;
    let (d, c) = (spec.d, spec.children_per_factor);
    let k = spec.n_violating();
    if k > 0 && d < 2 {
        return Err(Error::InvalidSpec("UCC violations need at least two factors".into()));
    }
    let p = spec.p();
    let mut chosen: Vec<usize> = rand::seq::index::sample(rng, d, k).into_vec();
    chosen.sort_unstable();
    let mut extra = vec![None; d];
    for &f in &chosen {
        let r = rng.random_range(0..d - 1);
        extra[f] = Some(if r >= f { r + 1 } else { r });
    }

    let (lo, hi) = spec.lambda_range;
    let main_share = spec.extra_parent_ratio / (spec.extra_parent_ratio + 1.0);
    let mut lambda = DMatrix::zeros(p, d);
    let mut omega = DVector::zeros(p);
    for i in 0..p {
        let main = i / c;
        let r2 = rng.uniform(lo * lo, hi * hi);
        match extra[main] {
            None => lambda[(i, main)] = r2.sqrt(),
            Some(e) => {
                lambda[(i, main)] = (main_share * r2).sqrt();
                lambda[(i, e)] = ((1.0 - main_share) * r2).sqrt();
            }
        }
        omega[i] = 1.0 - r2;
    }
    if let Some(i) = (0..p).find(|&i| !(omega[i] > 0.0)) {
        return Err(Error::InvalidVariance { row: i, communality: 1.0 - omega[i] });
    }
    FactorParams::new(lambda, SymMatrix::identity(d), omega)
}

/// Bernoulli(α) bipartite support. Rows without a parent are redrawn
/// individually; a draw leaving some factor childless is repeated whole.
pub fn gen_random_bipartite(p: usize, d: usize, alpha: f64, rng: &mut RngState) -> Result<Structure> {
    if p == 0 || d == 0 {
        return Err(Error::InvalidSpec("p and d must be positive".into()));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidSpec(format!("alpha = {alpha} must lie in (0, 1]")));
    }
    'outer: for _ in 0..MAX_ATTEMPTS {
        let mut support = BTreeSet::new();
        for i in 0..p {
            let mut row = Vec::new();
            for _ in 0..MAX_ATTEMPTS {
                row = (0..d).filter(|_| rng.random_bool(alpha)).collect();
                if !row.is_empty() {
                    break;
                }
            }
            if row.is_empty() {
                continue 'outer;
            }
            support.extend(row.into_iter().map(|k| (i, k)));
        }
        if let Ok(s) = Structure::new(p, d, support) {
            return Ok(s);
        }
    }
    Err(Error::GenerationFailure(format!(
        "no bipartite support without empty rows and columns after {MAX_ATTEMPTS} attempts"
    )))
}

/// Draws `n` observations of `X = Λ L + ε` with `L ~ N(0, Φ)` and
/// `ε ~ N(0, Ω)`. For each row the `d` factor normals are drawn before the
/// `p` error normals.
pub fn sample_dataset(theta: &FactorParams, n: usize, rng: &mut RngState) -> Result<DataMatrix> {
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let (p, d) = (theta.p(), theta.d());
    let chol = cholesky(theta.phi())?;
    let sd: Vec<f64> = theta.omega().iter().map(|w| w.sqrt()).collect();
    let mut factors = DMatrix::zeros(n, d);
    let mut noise = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(d);
    for r in 0..n {
        for k in 0..d {
            z[k] = rng.standard_normal();
        }
        let f = chol.l() * &z;
        factors.row_mut(r).copy_from(&f.transpose());
        for i in 0..p {
            noise[(r, i)] = sd[i] * rng.standard_normal();
        }
    }
    Ok(factors * theta.lambda().transpose() + noise)
}
