#![allow(dead_code)]

use std::collections::BTreeSet;

use ct_factor::graph::ThresholdedGraph;
use ct_factor::model::{FactorParams, Structure};
use ct_factor::numerics::{RngState, SymMatrix};
use nalgebra::{DMatrix, DVector};

/// Random support with no empty rows or columns.
pub fn random_structure(p: usize, d: usize, density: f64, rng: &mut RngState) -> Structure {
    assert!(p >= d);
    loop {
        let mut support = BTreeSet::new();
        for i in 0..p {
            for k in 0..d {
                if rng.uniform(0.0, 1.0) < density {
                    support.insert((i, k));
                }
            }
        }
        // every column gets one guaranteed child, every row one guaranteed parent
        for k in 0..d {
            support.insert((k, k));
        }
        for i in d..p {
            if !(0..d).any(|k| support.contains(&(i, k))) {
                let k = (rng.uniform(0.0, d as f64) as usize).min(d - 1);
                support.insert((i, k));
            }
        }
        if let Ok(s) = Structure::new(p, d, support) {
            return s;
        }
    }
}

/// Random correlation matrix `D^{-1/2} A Aᵀ D^{-1/2}` with a ridge.
pub fn random_correlation(d: usize, rng: &mut RngState) -> SymMatrix {
    let a = DMatrix::from_fn(d, d, |_, _| rng.uniform(-1.0, 1.0));
    let m = &a * a.transpose() + DMatrix::identity(d, d) * 0.2;
    let s = DMatrix::from_fn(d, d, |i, j| m[(i, j)] / (m[(i, i)] * m[(j, j)]).sqrt());
    let mut s = (&s + s.transpose()) * 0.5;
    for i in 0..d {
        s[(i, i)] = 1.0;
    }
    SymMatrix::new(s).unwrap()
}

/// Valid θ on the given support with loadings of random sign and
/// magnitude in [0.3, 0.9].
pub fn random_theta_on(s: &Structure, rng: &mut RngState) -> FactorParams {
    let (p, d) = (s.p(), s.d());
    let mut lambda = DMatrix::zeros(p, d);
    for &(i, k) in s.support() {
        let mag = rng.uniform(0.3, 0.9);
        lambda[(i, k)] = if rng.uniform(0.0, 1.0) < 0.5 { -mag } else { mag };
    }
    let phi = random_correlation(d, rng);
    let omega = DVector::from_fn(p, |_, _| rng.uniform(0.1, 1.0));
    FactorParams::new(lambda, phi, omega).unwrap()
}

pub fn random_theta(p: usize, d: usize, rng: &mut RngState) -> FactorParams {
    let density = rng.uniform(0.1, 0.5);
    let s = random_structure(p, d, density, rng);
    random_theta_on(&s, rng)
}

/// Independent-cluster θ with constant loading and a chosen factor correlation.
pub fn cluster_theta(d: usize, children: usize, loading: f64, phi_off: f64) -> FactorParams {
    let s = Structure::independent_cluster(d, children);
    let p = s.p();
    let mut lambda = DMatrix::zeros(p, d);
    for &(i, k) in s.support() {
        lambda[(i, k)] = loading;
    }
    let phi = DMatrix::from_fn(d, d, |a, b| if a == b { 1.0 } else { phi_off });
    let omega = DVector::from_element(p, 1.0 - loading * loading);
    FactorParams::new(lambda, SymMatrix::new(phi).unwrap(), omega).unwrap()
}

pub fn random_graph(p: usize, density: f64, rng: &mut RngState) -> ThresholdedGraph {
    let mut edges = Vec::new();
    for i in 0..p {
        for j in (i + 1)..p {
            if rng.uniform(0.0, 1.0) < density {
                edges.push((i, j));
            }
        }
    }
    ThresholdedGraph::from_edges(p, edges).unwrap()
}

/// Random graph with expected mean degree `deg`, edges drawn by pair sampling.
pub fn sparse_random_graph(p: usize, deg: f64, rng: &mut RngState) -> ThresholdedGraph {
    let m = (deg * p as f64 / 2.0) as usize;
    let mut edges = BTreeSet::new();
    while edges.len() < m {
        let i = (rng.uniform(0.0, p as f64) as usize).min(p - 1);
        let j = (rng.uniform(0.0, p as f64) as usize).min(p - 1);
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    ThresholdedGraph::from_edges(p, edges).unwrap()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic p-value of the two-sample KS statistic (Kolmogorov series).
pub fn ks_pvalue(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// θ whose factor correlations are a random correlation matrix shrunk
/// toward I by `shrink`.
pub fn shrunk_theta_on(s: &Structure, shrink: f64, rng: &mut RngState) -> FactorParams {
    let t = random_theta_on(s, rng);
    let d = s.d();
    let phi = DMatrix::from_fn(d, d, |a, b| if a == b { 1.0 } else { shrink * t.phi().get(a, b) });
    FactorParams::new(t.lambda().clone(), SymMatrix::new(phi).unwrap(), t.omega().clone()).unwrap()
}
