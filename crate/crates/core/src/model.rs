//! Factor-model parameters, implied moments and structural checks.
//!
//! A factor model is `X = Λ L + ε` with `L ~ N(0, Φ)`, `ε ~ N(0, diag(Ω))`.
//! Φ is kept in the unit-diagonal parameterization throughout the crate.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, SymMatrix};

/// Tolerance on `diag(Φ) = 1`.
const UNIT_DIAG_TOL: f64 = 1e-9;

/// Relative singular-value cutoff for numeric rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// The parameter triple (Λ, Φ, Ω).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct FactorParams {
    lambda: DMatrix<f64>,
    phi: SymMatrix,
    omega: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    lambda: Vec<Vec<f64>>,
    phi: Vec<Vec<f64>>,
    omega: Vec<f64>,
}

impl TryFrom<RawParams> for FactorParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let p = raw.lambda.len();
        let d = raw.lambda.first().map_or(0, Vec::len);
        if raw.lambda.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidModel("lambda rows have unequal lengths".into()));
        }
        let lambda = DMatrix::from_fn(p, d, |i, j| raw.lambda[i][j]);
        let phi = SymMatrix::from_rows(&raw.phi)?;
        FactorParams::new(lambda, phi, DVector::from_vec(raw.omega))
    }
}

impl From<FactorParams> for RawParams {
    fn from(t: FactorParams) -> Self {
        RawParams {
            lambda: (0..t.p())
                .map(|i| t.lambda.row(i).iter().copied().collect())
                .collect(),
            phi: t.phi.to_rows(),
            omega: t.omega.iter().copied().collect(),
        }
    }
}

impl FactorParams {
    /// Validates shapes, a unit-diagonal positive definite Φ, positive Ω and
    /// the absence of all-zero rows or columns in Λ.
    pub fn new(lambda: DMatrix<f64>, phi: SymMatrix, omega: DVector<f64>) -> Result<Self> {
        let (p, d) = lambda.shape();
        if p == 0 || d == 0 {
            return Err(Error::InvalidModel("lambda must be at least 1x1".into()));
        }
        if phi.dim() != d {
            return Err(Error::DimensionMismatch(format!("phi is {0}x{0}, lambda has {d} columns", phi.dim())));
        }
        if omega.len() != p {
            return Err(Error::DimensionMismatch(format!("omega has {} entries, lambda has {p} rows", omega.len())));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("lambda has non-finite entries".into()));
        }
        if let Some(k) = (0..d).find(|&k| (phi.get(k, k) - 1.0).abs() > UNIT_DIAG_TOL) {
            return Err(Error::InvalidModel(format!("phi[{k}][{k}] = {} is not 1", phi.get(k, k))));
        }
        cholesky(&phi).map_err(|_| Error::InvalidModel("phi is not positive definite".into()))?;
        if let Some(i) = omega.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidModel(format!("omega[{i}] = {} is not positive", omega[i])));
        }
        if let Some(i) = (0..p).find(|&i| lambda.row(i).iter().all(|v| *v == 0.0)) {
            return Err(Error::InvalidModel(format!("lambda row {i} is all zero")));
        }
        if let Some(k) = (0..d).find(|&k| lambda.column(k).iter().all(|v| *v == 0.0)) {
            return Err(Error::InvalidModel(format!("lambda column {k} is all zero")));
        }
        Ok(FactorParams { lambda, phi, omega })
    }

    pub fn lambda(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    pub fn phi(&self) -> &SymMatrix {
        &self.phi
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn p(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn d(&self) -> usize {
        self.lambda.ncols()
    }

    /// Support of Λ (its nonzero entries).
    pub fn structure(&self) -> Structure {
        let support = (0..self.p())
            .flat_map(|i| (0..self.d()).map(move |k| (i, k)))
            .filter(|&(i, k)| self.lambda[(i, k)] != 0.0)
            .collect();
        Structure::new(self.p(), self.d(), support).expect("validated params have non-empty columns")
    }

    /// Rows of Λ divided by the implied standard deviations.
    pub fn standardized_lambda(&self) -> DMatrix<f64> {
        let sigma = implied_covariance(self);
        let mut l = self.lambda.clone();
        for i in 0..self.p() {
            let s = sigma.get(i, i).sqrt();
            l.row_mut(i).scale_mut(1.0 / s);
        }
        l
    }
}

/// The pair (d, support of Λ) with 0-based `(row, column)` indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawStructure", into = "RawStructure")]
pub struct Structure {
    p: usize,
    d: usize,
    support: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RawStructure {
    p: usize,
    d: usize,
    support: Vec<[usize; 2]>,
}

impl TryFrom<RawStructure> for Structure {
    type Error = Error;

    fn try_from(raw: RawStructure) -> Result<Self> {
        Structure::new(raw.p, raw.d, raw.support.into_iter().map(|[i, k]| (i, k)).collect())
    }
}

impl From<Structure> for RawStructure {
    fn from(s: Structure) -> Self {
        RawStructure {
            p: s.p,
            d: s.d,
            support: s.support.into_iter().map(|(i, k)| [i, k]).collect(),
        }
    }
}

impl Structure {
    /// Rows may be empty; every column must have at least one child.
    pub fn new(p: usize, d: usize, support: BTreeSet<(usize, usize)>) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::InvalidModel("structure needs p >= 1 and d >= 1".into()));
        }
        if let Some(&(i, k)) = support.iter().find(|&&(i, k)| i >= p || k >= d) {
            return Err(Error::InvalidModel(format!("support entry ({i}, {k}) outside {p}x{d}")));
        }
        let mut seen = vec![false; d];
        for &(_, k) in &support {
            seen[k] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidModel(format!("factor {k} has no children")));
        }
        Ok(Structure { p, d, support })
    }

    /// `d` blocks of `children` consecutive variables, one parent each.
    pub fn independent_cluster(d: usize, children: usize) -> Self {
        let support = (0..d * children).map(|i| (i, i / children)).collect();
        Structure::new(d * children, d, support).expect("block structure is valid")
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.support.contains(&(row, col))
    }

    /// Parent sets Π_i, indexed by row.
    pub fn parent_sets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.p];
        for &(i, k) in &self.support {
            out[i].push(k);
        }
        out
    }

    /// Child sets ch(L_k), indexed by column.
    pub fn child_sets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.d];
        for &(i, k) in &self.support {
            out[k].push(i);
        }
        out
    }

    /// Rows with no parent (pure-noise variables).
    pub fn empty_rows(&self) -> Vec<usize> {
        self.parent_sets()
            .iter()
            .enumerate()
            .filter(|(_, ps)| ps.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Sorted list of child sets. Two structures are equal up to column
    /// permutation iff their keys are equal.
    pub fn canonical_key(&self) -> Vec<Vec<usize>> {
        let mut cols = self.child_sets();
        cols.sort();
        cols
    }

    /// Reorders columns: new column `j` is old column `order[j]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let mut inv = vec![usize::MAX; self.d];
        if order.len() != self.d {
            return Err(Error::DimensionMismatch("permutation length must equal d".into()));
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= self.d || inv[old] != usize::MAX {
                return Err(Error::Domain("not a permutation".into()));
            }
            inv[old] = new;
        }
        let support = self.support.iter().map(|&(i, k)| (i, inv[k])).collect();
        Structure::new(self.p, self.d, support)
    }
}

/// Pairs `i < j` that share a parent (`e0`) and those that do not (`e0c`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgePartition {
    pub e0: Vec<(usize, usize)>,
    pub e0c: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdabilityReport {
    pub thresholdable: bool,
    /// min over `e0` of |ρ|, or 1 when `e0` is empty.
    pub min_shared: f64,
    /// max over `e0c` of |ρ|, or 0 when `e0c` is empty.
    pub max_unshared: f64,
    pub gap: f64,
    pub tau0: f64,
    /// Set when `e0` or `e0c` is empty.
    pub degenerate: bool,
}

/// Σ(θ) = Λ Φ Λᵀ + diag(Ω).
pub fn implied_covariance(theta: &FactorParams) -> SymMatrix {
    let l = theta.lambda();
    let mut s = l * theta.phi().as_matrix() * l.transpose();
    for i in 0..theta.p() {
        s[(i, i)] += theta.omega()[i];
    }
    SymMatrix::new(s).expect("implied covariance is symmetric")
}

/// Correlation matrix implied by θ, with the diagonal set to exactly 1.
pub fn implied_correlation(theta: &FactorParams) -> SymMatrix {
    let s = implied_covariance(theta);
    let p = s.dim();
    let r = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            s.get(i, j) / (s.get(i, i) * s.get(j, j)).sqrt()
        }
    });
    SymMatrix::new(r).expect("implied correlation is symmetric")
}

fn sorted_intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

pub fn edge_partition(s: &Structure) -> EdgePartition {
    let parents = s.parent_sets();
    let mut e0 = Vec::new();
    let mut e0c = Vec::new();
    for i in 0..s.p() {
        for j in (i + 1)..s.p() {
            if sorted_intersects(&parents[i], &parents[j]) {
                e0.push((i, j));
            } else {
                e0c.push((i, j));
            }
        }
    }
    EdgePartition { e0, e0c }
}

fn report_from(min_shared: f64, max_unshared: f64, degenerate: bool) -> ThresholdabilityReport {
    ThresholdabilityReport {
        thresholdable: max_unshared < min_shared,
        min_shared,
        max_unshared,
        gap: (min_shared - max_unshared) / 2.0,
        tau0: (min_shared + max_unshared) / 2.0,
        degenerate,
    }
}

/// Checks whether some τ separates parent-sharing pairs from the rest,
/// using the implied correlations directly.
pub fn thresholdability(theta: &FactorParams) -> ThresholdabilityReport {
    let rho = implied_correlation(theta);
    let part = edge_partition(&theta.structure());
    let min_shared = part
        .e0
        .iter()
        .map(|&(i, j)| rho.get(i, j).abs())
        .fold(1.0, f64::min);
    let max_unshared = part
        .e0c
        .iter()
        .map(|&(i, j)| rho.get(i, j).abs())
        .fold(0.0, f64::max);
    report_from(min_shared, max_unshared, part.e0.is_empty() || part.e0c.is_empty())
}

/// `Σ_{a∈rows_i, b∈rows_j} l[i,a] Φ[a,b] l[j,b]` restricted to index sets.
fn block_form(l: &DMatrix<f64>, phi: &SymMatrix, i: usize, a: &[usize], j: usize, b: &[usize]) -> f64 {
    let mut acc = 0.0;
    for &x in a {
        for &y in b {
            acc += l[(i, x)] * phi.get(x, y) * l[(j, y)];
        }
    }
    acc
}

/// Thresholdability evaluated through the parent-set decomposition of each
/// correlation: for a sharing pair with A = Π_i∖Π_j, B = Π_j∖Π_i,
/// C = Π_i∩Π_j the correlation is
/// `λ̃_iA Φ_AB λ̃_jBᵀ + λ̃_iC Φ_CB λ̃_jBᵀ + λ̃_iA Φ_AC λ̃_jCᵀ + λ̃_iC Φ_CC λ̃_jCᵀ`,
/// and for a non-sharing pair it is `λ̃_kE Φ_EF λ̃_lFᵀ` with E = Π_k, F = Π_l.
pub fn general_sufficient_check(theta: &FactorParams) -> bool {
    let l = theta.standardized_lambda();
    let phi = theta.phi();
    let parents = theta.structure().parent_sets();
    let mut min_shared = f64::INFINITY;
    let mut max_unshared = f64::NEG_INFINITY;
    for i in 0..theta.p() {
        for j in (i + 1)..theta.p() {
            let (pi, pj) = (&parents[i], &parents[j]);
            let c: Vec<usize> = pi.iter().copied().filter(|k| pj.contains(k)).collect();
            if c.is_empty() {
                let v = block_form(&l, phi, i, pi, j, pj).abs();
                max_unshared = max_unshared.max(v);
            } else {
                let a: Vec<usize> = pi.iter().copied().filter(|k| !pj.contains(k)).collect();
                let b: Vec<usize> = pj.iter().copied().filter(|k| !pi.contains(k)).collect();
                let v = block_form(&l, phi, i, &a, j, &b)
                    + block_form(&l, phi, i, &c, j, &b)
                    + block_form(&l, phi, i, &a, j, &c)
                    + block_form(&l, phi, i, &c, j, &c);
                min_shared = min_shared.min(v.abs());
            }
        }
    }
    // empty sides take the boundary values used by `thresholdability`
    let min_shared = if min_shared.is_finite() { min_shared } else { 1.0 };
    let max_unshared = if max_unshared.is_finite() { max_unshared } else { 0.0 };
    max_unshared < min_shared
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueChildren {
    /// U_k per factor.
    pub sets: Vec<Vec<usize>>,
    pub ucc_holds: bool,
}

impl UniqueChildren {
    /// Factors whose unique-child set is empty.
    pub fn violating_factors(&self) -> Vec<usize> {
        self.sets
            .iter()
            .enumerate()
            .filter(|(_, u)| u.is_empty())
            .map(|(k, _)| k)
            .collect()
    }
}

/// U_k = children of factor k that have no other parent.
pub fn unique_children(s: &Structure) -> UniqueChildren {
    let parents = s.parent_sets();
    let sets: Vec<Vec<usize>> = s
        .child_sets()
        .into_iter()
        .map(|ch| ch.into_iter().filter(|&i| parents[i].len() == 1).collect())
        .collect();
    let ucc_holds = sets.iter().all(|u| !u.is_empty());
    UniqueChildren { sets, ucc_holds }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationalReport {
    /// Every column has at least d - 1 zeros.
    pub condition1: bool,
    /// rank(Λ^[j]) = d - 1 for every column j.
    pub condition2: bool,
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().copied().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * largest).count()
}

/// Local rotational-uniqueness conditions on a numeric loading matrix.
/// Λ^[j] collects the rows whose j-th entry is exactly zero, with column j
/// removed.
pub fn rotational_uniqueness_check(lambda: &DMatrix<f64>) -> RotationalReport {
    let (p, d) = lambda.shape();
    let zero_rows: Vec<Vec<usize>> = (0..d)
        .map(|j| (0..p).filter(|&i| lambda[(i, j)] == 0.0).collect())
        .collect();
    let condition1 = zero_rows.iter().all(|rows| rows.len() + 1 >= d);
    let condition2 = (0..d).all(|j| {
        let cols: Vec<usize> = (0..d).filter(|&c| c != j).collect();
        let sub = DMatrix::from_fn(zero_rows[j].len(), cols.len(), |r, c| lambda[(zero_rows[j][r], cols[c])]);
        numeric_rank(&sub) == d - 1
    });
    RotationalReport { condition1, condition2 }
}

/// Unclamped η = C p(p-1)(n-2) ((4-γ²)/(4+γ²))^(n-4).
pub fn consistency_bound_raw(n: u64, p: u64, gamma: f64, c_const: f64) -> Result<f64> {
    if n < 5 {
        return Err(Error::Domain(format!("n = {n} must be at least 5")));
    }
    if !(0.0..=2.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} must lie in [0, 2]")));
    }
    if !(c_const > 0.0) || !c_const.is_finite() {
        return Err(Error::Domain(format!("C = {c_const} must be positive")));
    }
    let g2 = gamma * gamma;
    let ratio = (4.0 - g2) / (4.0 + g2);
    let pairs = p as f64 * (p as f64 - 1.0);
    // powi would overflow the exponent type for huge n
    let decay = if ratio == 0.0 { 0.0 } else { ((n - 4) as f64 * ratio.ln()).exp() };
    Ok(c_const * pairs * (n - 2) as f64 * decay)
}

/// Upper bound on P(Ê(τ₀) ≠ E₀), clamped to [0, 1].
pub fn consistency_bound(n: u64, p: u64, gamma: f64, c_const: f64) -> Result<f64> {
    Ok(consistency_bound_raw(n, p, gamma, c_const)?.clamp(0.0, 1.0))
}

/// Lower bound 1 - d exp(-α p (1-α)^d) on the probability that a random
/// bipartite support with edge probability α satisfies the unique child
/// condition, clamped to [0, 1].
pub fn ucc_probability_bound(p: u64, d: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if p == 0 || d == 0 {
        return Err(Error::Domain("p and d must be positive".into()));
    }
    let expo = -alpha * p as f64 * (1.0 - alpha).powf(d as f64);
    Ok((1.0 - d as f64 * expo.exp()).clamp(0.0, 1.0))
}
