//! Constrained Gaussian maximum likelihood for a fixed loading pattern.
//!
//! The fit runs expectation-maximization over the latent factors. Each
//! M-step solves every row of Λ over its parent set only, so entries
//! outside the support stay exactly zero. Φ comes out of the M-step with a
//! free diagonal; it is then rescaled to unit diagonal and the columns of Λ
//! absorb the scale, which leaves Σ(θ) and the likelihood unchanged.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactorParams, Structure};
use crate::numerics::{cholesky, column_means, scatter_about, CholeskyFactor, DataMatrix, RngState, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Absolute change in log-likelihood that counts as converged.
    pub loglik_tolerance: f64,
    pub omega_floor: f64,
    /// Number of initializations; the first is unperturbed.
    pub restarts: usize,
    /// Seed for the perturbed restarts.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 2000,
            loglik_tolerance: 1e-8,
            omega_floor: 1e-6,
            restarts: 3,
            seed: 0,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.restarts == 0 {
            return Err(Error::Domain("max_iterations and restarts must be positive".into()));
        }
        if !(self.loglik_tolerance > 0.0) || !(self.omega_floor > 0.0) {
            return Err(Error::Domain("tolerance and omega floor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWarning {
    /// The sample covariance is singular or indefinite (typically n < p).
    NonPdSample,
    /// The iteration limit was reached before the tolerance.
    NoConvergence,
}

/// Fitted parameters. Rows of Λ outside the structure's support are exactly
/// zero; a variable without parents has a zero row and `ω_i = s_ii`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub lambda: DMatrix<f64>,
    pub phi: SymMatrix,
    pub omega: DVector<f64>,
    pub loglik: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub n_free_params: usize,
    pub warnings: Vec<FitWarning>,
    /// Log-likelihood after each iteration of the kept run, starting with
    /// the initial value.
    pub loglik_trace: Vec<f64>,
}

/// Serializable summary of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda: Vec<Vec<f64>>,
    pub phi: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub loglik: f64,
    pub bic: f64,
    pub converged: bool,
    pub n_iterations: usize,
    pub n_free_params: usize,
    pub warnings: Vec<FitWarning>,
}

impl FitResult {
    pub fn implied_covariance(&self) -> SymMatrix {
        implied(&self.lambda, &self.phi, &self.omega)
    }

    /// The fitted parameters as a validated model. Fails when the
    /// structure had empty rows.
    pub fn params(&self) -> Result<FactorParams> {
        FactorParams::new(self.lambda.clone(), self.phi.clone(), self.omega.clone())
    }

    pub fn report(&self, n: usize) -> FitReport {
        FitReport {
            lambda: (0..self.lambda.nrows())
                .map(|i| self.lambda.row(i).iter().copied().collect())
                .collect(),
            phi: self.phi.to_rows(),
            omega: self.omega.iter().copied().collect(),
            loglik: self.loglik,
            bic: bic(self, n),
            converged: self.converged,
            n_iterations: self.n_iterations,
            n_free_params: self.n_free_params,
            warnings: self.warnings.clone(),
        }
    }
}

fn implied(lambda: &DMatrix<f64>, phi: &SymMatrix, omega: &DVector<f64>) -> SymMatrix {
    let mut s = lambda * phi.as_matrix() * lambda.transpose();
    for i in 0..omega.len() {
        s[(i, i)] += omega[i];
    }
    SymMatrix::new(s).expect("implied covariance is symmetric")
}

fn loglik_from_factor(chol: &CholeskyFactor, s: &SymMatrix, n: usize) -> f64 {
    let p = s.dim();
    let inv = chol.inverse();
    let trace: f64 = s.as_matrix().component_mul(&inv).sum();
    -0.5 * n as f64 * (p as f64 * (2.0 * PI).ln() + chol.logdet() + trace)
}

/// ℓ = −(n/2) [p log 2π + log det Σ + tr(S Σ⁻¹)].
pub fn gaussian_loglik(sigma_model: &SymMatrix, s_sample: &SymMatrix, n: usize) -> Result<f64> {
    if sigma_model.dim() != s_sample.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model is {0}x{0}, sample is {1}x{1}",
            sigma_model.dim(),
            s_sample.dim()
        )));
    }
    Ok(loglik_from_factor(&cholesky(sigma_model)?, s_sample, n))
}

/// `|support| + d(d-1)/2 + p`: loadings, factor correlations, uniquenesses.
pub fn count_free_params(s: &Structure) -> usize {
    s.len() + s.d() * (s.d() - 1) / 2 + s.p()
}

/// BIC = −2ℓ + k log n; lower is better.
pub fn bic(fit: &FitResult, n: usize) -> f64 {
    -2.0 * fit.loglik + fit.n_free_params as f64 * (n as f64).ln()
}

struct EmState {
    lambda: DMatrix<f64>,
    phi: DMatrix<f64>,
    omega: DVector<f64>,
}

impl EmState {
    fn sigma(&self) -> SymMatrix {
        let mut s = &self.lambda * &self.phi * self.lambda.transpose();
        for i in 0..self.omega.len() {
            s[(i, i)] += self.omega[i];
        }
        SymMatrix::new(s).expect("symmetric")
    }
}

/// One EM update given the Cholesky factor of the current Σ.
fn em_step(state: &mut EmState, chol: &CholeskyFactor, s: &SymMatrix, parents: &[Vec<usize>], floor: f64) -> Result<()> {
    let sm = s.as_matrix();
    let lphi = &state.lambda * &state.phi;
    // G = Σ⁻¹ Λ Φ, so the regression of factors on data is Gᵀ
    let g = chol.solve(&lphi)?;
    let sg = sm * &g;
    let cxf = sg.clone();
    let mut cff = g.transpose() * &sg + &state.phi - g.transpose() * &lphi;
    cff = (&cff + cff.transpose()) * 0.5;

    let d = state.phi.nrows();
    let mut lambda = DMatrix::zeros(state.lambda.nrows(), d);
    let mut omega = DVector::zeros(state.omega.len());
    for (i, pset) in parents.iter().enumerate() {
        if pset.is_empty() {
            omega[i] = sm[(i, i)].max(floor);
            continue;
        }
        let k = pset.len();
        if k == 1 {
            let j = pset[0];
            let c = cff[(j, j)];
            if !(c > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: c });
            }
            let r = cxf[(i, j)];
            let coef = r / c;
            lambda[(i, j)] = coef;
            omega[i] = (sm[(i, i)] - coef * r).max(floor);
            continue;
        }
        let c_sub = DMatrix::from_fn(k, k, |a, b| cff[(pset[a], pset[b])]);
        let r_sub = DMatrix::from_fn(k, 1, |a, _| cxf[(i, pset[a])]);
        let coef = cholesky(&SymMatrix::new(c_sub.clone())?)?.solve(&r_sub)?;
        for a in 0..k {
            lambda[(i, pset[a])] = coef[(a, 0)];
        }
        let cross = (coef.transpose() * &r_sub)[(0, 0)];
        let quad = (coef.transpose() * &c_sub * &coef)[(0, 0)];
        omega[i] = (sm[(i, i)] - 2.0 * cross + quad).max(floor);
    }

    let scale: Vec<f64> = (0..d).map(|k| cff[(k, k)].sqrt()).collect();
    if scale.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: 0.0 });
    }
    for (k, &sk) in scale.iter().enumerate() {
        lambda.column_mut(k).scale_mut(sk);
    }
    let mut phi = DMatrix::from_fn(d, d, |a, b| cff[(a, b)] / (scale[a] * scale[b]));
    for k in 0..d {
        phi[(k, k)] = 1.0;
    }
    *state = EmState { lambda, phi, omega };
    Ok(())
}

struct RunOutcome {
    state: EmState,
    loglik: f64,
    trace: Vec<f64>,
    converged: bool,
}

fn em_map(state: &EmState, chol: &CholeskyFactor, s: &SymMatrix, parents: &[Vec<usize>], floor: f64) -> Result<EmState> {
    let mut next = EmState {
        lambda: state.lambda.clone(),
        phi: state.phi.clone(),
        omega: state.omega.clone(),
    };
    em_step(&mut next, chol, s, parents, floor)?;
    Ok(next)
}

/// `a + t (b - a)`-style combination `c0 a + c1 b + c2 c` applied to every
/// parameter block. Zero patterns and the unit diagonal of Φ are preserved
/// because the coefficients sum to one.
fn combine(a: &EmState, b: &EmState, c: &EmState, w: [f64; 3]) -> EmState {
    EmState {
        lambda: &a.lambda * w[0] + &b.lambda * w[1] + &c.lambda * w[2],
        phi: &a.phi * w[0] + &b.phi * w[1] + &c.phi * w[2],
        omega: &a.omega * w[0] + &b.omega * w[1] + &c.omega * w[2],
    }
}

fn sq_norm_diff(a: &EmState, b: &EmState) -> f64 {
    (&a.lambda - &b.lambda).norm_squared() + (&a.phi - &b.phi).norm_squared() + (&a.omega - &b.omega).norm_squared()
}

/// Squared distance of the second difference `x2 - 2 x1 + x0`.
fn sq_norm_second(x0: &EmState, x1: &EmState, x2: &EmState) -> f64 {
    (&x2.lambda - &x1.lambda * 2.0 + &x0.lambda).norm_squared()
        + (&x2.phi - &x1.phi * 2.0 + &x0.phi).norm_squared()
        + (&x2.omega - &x1.omega * 2.0 + &x0.omega).norm_squared()
}

/// EM accelerated by squared extrapolation (SQUAREM). Every cycle takes two
/// EM updates, extrapolates along their differences and applies one more
/// update to the extrapolated point. The extrapolated result is kept only
/// when it is admissible and its likelihood is at least that of the two
/// plain updates, so the recorded log-likelihood never decreases.
fn run_em(state: EmState, s: &SymMatrix, n: usize, parents: &[Vec<usize>], opts: &FitOptions) -> Result<RunOutcome> {
    let floor = opts.omega_floor;
    let mut x0 = state;
    let mut chol0 = cholesky(&x0.sigma())?;
    let mut ll = loglik_from_factor(&chol0, s, n);
    let mut trace = vec![ll];
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let x1 = em_map(&x0, &chol0, s, parents, floor)?;
        let chol1 = cholesky(&x1.sigma())?;
        let x2 = em_map(&x1, &chol1, s, parents, floor)?;
        let chol2 = cholesky(&x2.sigma())?;
        let ll2 = loglik_from_factor(&chol2, s, n);

        let r2 = sq_norm_diff(&x1, &x0);
        let v2 = sq_norm_second(&x0, &x1, &x2);
        let mut accepted = (x2, chol2, ll2);
        if v2 > 0.0 {
            let alpha = -(r2 / v2).sqrt();
            if alpha < -1.0 {
                // x0 - 2α r + α² v with r = x1 - x0, v = x2 - 2x1 + x0
                let w = [1.0 + 2.0 * alpha + alpha * alpha, -2.0 * alpha - 2.0 * alpha * alpha, alpha * alpha];
                let mut xp = combine(&x0, &x1, &accepted.0, w);
                xp.omega.iter_mut().for_each(|v| *v = v.max(floor));
                let candidate = cholesky(&SymMatrix::new(xp.phi.clone())?)
                    .and_then(|_| cholesky(&xp.sigma()))
                    .and_then(|cp| em_map(&xp, &cp, s, parents, floor))
                    .and_then(|x3| {
                        let c3 = cholesky(&x3.sigma())?;
                        let l3 = loglik_from_factor(&c3, s, n);
                        Ok((x3, c3, l3))
                    });
                if let Ok(c) = candidate {
                    if c.2 >= accepted.2 && c.2.is_finite() {
                        accepted = c;
                    }
                }
            }
        }
        let (x, chol, next) = accepted;
        if next < ll {
            // only rounding can lower the likelihood of an EM update; stop at the previous point
            converged = ll - next < opts.loglik_tolerance;
            break;
        }
        trace.push(next);
        let delta = next - ll;
        ll = next;
        x0 = x;
        chol0 = chol;
        if delta.abs() < opts.loglik_tolerance {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome { state: x0, loglik: ll, trace, converged })
}

/// Flips column signs so that each factor's reference loading is
/// non-negative. The reference is the smallest-index unique child, or the
/// smallest-index child when the factor has no unique child.
pub fn canonicalize_signs(lambda: &mut DMatrix<f64>, phi: &mut SymMatrix, structure: &Structure) {
    let parents = structure.parent_sets();
    let mut p = phi.as_matrix().clone();
    for (k, children) in structure.child_sets().iter().enumerate() {
        let reference = children
            .iter()
            .copied()
            .find(|&i| parents[i].len() == 1)
            .or_else(|| children.first().copied());
        if let Some(r) = reference {
            if lambda[(r, k)] < 0.0 {
                lambda.column_mut(k).neg_mut();
                p.column_mut(k).neg_mut();
                p.row_mut(k).neg_mut();
            }
        }
    }
    *phi = SymMatrix::new(p).expect("sign flips keep symmetry");
}

/// Fits the factor model with loading pattern `s` to the sample covariance.
pub fn fit_mle(s_sample: &SymMatrix, n: usize, s: &Structure, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    let p = s_sample.dim();
    if s.p() != p {
        return Err(Error::DimensionMismatch(format!("structure has p = {}, sample has p = {p}", s.p())));
    }
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if let Some(i) = (0..p).find(|&i| !(s_sample.get(i, i) > 0.0)) {
        return Err(Error::Domain(format!("sample variance {i} is not positive")));
    }
    let mut warnings = Vec::new();
    if cholesky(s_sample).is_err() {
        log::warn!("sample covariance is not positive definite; fitting proceeds on the model covariance");
        warnings.push(FitWarning::NonPdSample);
    }

    let parents = s.parent_sets();
    let d = s.d();
    let sd: Vec<f64> = (0..p).map(|i| s_sample.get(i, i).sqrt()).collect();
    let mut rng = RngState::new(opts.seed);
    let mut best: Option<RunOutcome> = None;
    let mut last_err = None;
    for restart in 0..opts.restarts {
        let mut lambda = DMatrix::zeros(p, d);
        for &(i, k) in s.support() {
            let jitter = if restart == 0 { 0.0 } else { rng.uniform(-0.1, 0.1) };
            lambda[(i, k)] = (0.5 + jitter) * sd[i];
        }
        let omega = DVector::from_fn(p, |i, _| 0.5 * s_sample.get(i, i));
        let init = EmState { lambda, phi: DMatrix::identity(d, d), omega };
        match run_em(init, s_sample, n, &parents, opts) {
            Ok(out) => {
                if best.as_ref().is_none_or(|b| out.loglik > b.loglik) {
                    best = Some(out);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let best = match best {
        Some(b) => b,
        None => return Err(last_err.expect("at least one restart ran")),
    };
    if !best.converged {
        warnings.push(FitWarning::NoConvergence);
    }

    let mut lambda = best.state.lambda;
    let mut phi = SymMatrix::new(best.state.phi)?;
    canonicalize_signs(&mut lambda, &mut phi, s);
    Ok(FitResult {
        lambda,
        phi,
        omega: best.state.omega,
        loglik: best.loglik,
        n_iterations: best.trace.len() - 1,
        converged: best.converged,
        n_free_params: count_free_params(s),
        warnings,
        loglik_trace: best.trace,
    })
}

/// Sum over `k` folds of the held-out Gaussian log-likelihood.
///
/// Rows are shuffled with `rng` and split into contiguous folds of nearly
/// equal size. Each fold's model is fitted to the remaining rows' covariance
/// (centered at their mean, divisor = row count); the held-out rows are
/// scored about the same training mean.
pub fn kfold_test_loglik(data: &DataMatrix, s: &Structure, k: usize, opts: &FitOptions, rng: &mut RngState) -> Result<f64> {
    let n = data.nrows();
    if k < 2 || n < k {
        return Err(Error::Domain(format!("need 2 <= K <= n, got K = {k}, n = {n}")));
    }
    if data.ncols() != s.p() {
        return Err(Error::DimensionMismatch(format!("data has {} columns, structure has p = {}", data.ncols(), s.p())));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let folds: Vec<Vec<usize>> = (0..k).map(|f| order[f * n / k..(f + 1) * n / k].to_vec()).collect();

    let parts: Vec<Result<f64>> = folds
        .par_iter()
        .map(|test| {
            let mut in_test = vec![false; n];
            for &i in test {
                in_test[i] = true;
            }
            let train_rows: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            let train = data.select_rows(&train_rows);
            let held = data.select_rows(test);
            let center = column_means(&train);
            let s_train = scatter_about(&train, &center, train.nrows() as f64)?;
            let s_test = scatter_about(&held, &center, held.nrows() as f64)?;
            let fit = fit_mle(&s_train, train.nrows(), s, opts)?;
            gaussian_loglik(&fit.implied_covariance(), &s_test, held.nrows())
        })
        .collect();
    parts.into_iter().sum()
}
