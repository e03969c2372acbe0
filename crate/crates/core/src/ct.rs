//! The correlation-thresholding sweep.
//!
//! For every threshold the correlation graph is built, its independent
//! maximal cliques become a candidate loading pattern, and patterns that
//! coincide up to column order are merged. Distinct candidates are then
//! optionally fitted and one is selected.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{bic, fit_mle, FitOptions, FitResult};
use crate::graph::{build_graph, independent_maximal_cliques, structure_from_cliques};
use crate::metrics::hamming_distance;
use crate::model::Structure;
use crate::numerics::SymMatrix;

/// 40 equidistant thresholds `k / 39`, `k = 0..=39`.
pub fn default_thresholds() -> Vec<f64> {
    (0..40).map(|k| k as f64 / 39.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Bic,
    MinHdOracle,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtConfig {
    pub thresholds: Vec<f64>,
    pub selection: Selection,
    pub fit_options: FitOptions,
    /// Ground truth; required for [`Selection::MinHdOracle`].
    pub truth: Option<Structure>,
}

impl Default for CtConfig {
    fn default() -> Self {
        CtConfig {
            thresholds: default_thresholds(),
            selection: Selection::Bic,
            fit_options: FitOptions::default(),
            truth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Thresholds that produced this structure, ascending.
    pub tau_values: Vec<f64>,
    pub structure: Structure,
    pub fit: Option<FitResult>,
    pub bic: Option<f64>,
    pub fit_error: Option<String>,
    /// Hamming distance to the truth, when one was supplied.
    pub hd_to_truth: Option<usize>,
}

impl Candidate {
    /// Every variable is its own factor.
    pub fn is_trivial(&self) -> bool {
        self.structure.d() == self.structure.p() && self.structure.len() == self.structure.p()
    }
}

/// Outcome of one threshold in the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub tau: f64,
    pub n_edges: usize,
    pub n_cliques: usize,
    /// Index into [`CtResult::candidates`]; `None` when the graph had no
    /// independent maximal clique.
    pub candidate: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub sweep_secs: f64,
    pub fit_secs: f64,
    pub select_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtResult {
    pub candidates: Vec<Candidate>,
    pub selected_index: Option<usize>,
    /// Number of distinct candidate structures (each is fitted once under
    /// BIC selection).
    pub models_evaluated: usize,
    pub thresholds: Vec<ThresholdRecord>,
    pub warnings: Vec<String>,
    pub timing: PhaseTiming,
}

impl CtResult {
    pub fn selected(&self) -> Option<&Candidate> {
        self.selected_index.map(|k| &self.candidates[k])
    }
}

/// Merges structures equal up to column permutation, keeping first
/// appearance order. Returns each distinct structure with its count.
pub fn dedupe_structures(list: &[Structure]) -> Result<Vec<(Structure, usize)>> {
    let mut out: Vec<(Structure, usize)> = Vec::new();
    let mut index: HashMap<Vec<Vec<usize>>, usize> = HashMap::new();
    for s in list {
        if let Some((first, _)) = out.first() {
            if first.p() != s.p() {
                return Err(Error::DimensionMismatch("structures must share p".into()));
            }
        }
        match index.get(&s.canonical_key()) {
            Some(&k) => out[k].1 += 1,
            None => {
                index.insert(s.canonical_key(), out.len());
                out.push((s.clone(), 1));
            }
        }
    }
    Ok(out)
}

fn validate(r: &SymMatrix, n: usize, cfg: &CtConfig) -> Result<()> {
    if cfg.thresholds.is_empty() {
        return Err(Error::Domain("at least one threshold is required".into()));
    }
    if let Some(t) = cfg.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain(format!("threshold {t} outside [0, 1]")));
    }
    if cfg.selection == Selection::MinHdOracle && cfg.truth.is_none() {
        return Err(Error::MissingTruth);
    }
    if let Some(t) = &cfg.truth {
        if t.p() != r.dim() {
            return Err(Error::DimensionMismatch(format!("truth has p = {}, data has p = {}", t.p(), r.dim())));
        }
    }
    if cfg.selection == Selection::Bic && n == 0 {
        return Err(Error::Domain("n must be positive for BIC selection".into()));
    }
    cfg.fit_options.validate()
}

/// Runs the sweep over `cfg.thresholds` (processed in ascending order).
pub fn ct_run(r: &SymMatrix, n: usize, cfg: &CtConfig) -> Result<CtResult> {
    validate(r, n, cfg)?;
    let p = r.dim();
    let mut warnings = Vec::new();
    let mut taus = cfg.thresholds.clone();
    taus.sort_by(f64::total_cmp);

    let start = Instant::now();
    let sweep: Vec<Result<(usize, usize, Option<Structure>)>> = taus
        .par_iter()
        .map(|&tau| {
            let g = build_graph(r, tau)?;
            let cs = independent_maximal_cliques(&g);
            let s = if cs.is_empty() { None } else { Some(structure_from_cliques(&cs, p)?) };
            Ok((g.edge_count(), cs.len(), s))
        })
        .collect();

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut index: HashMap<Vec<Vec<usize>>, usize> = HashMap::new();
    let mut records = Vec::with_capacity(taus.len());
    for (&tau, outcome) in taus.iter().zip(sweep) {
        let (n_edges, n_cliques, structure) = outcome?;
        let candidate = structure.map(|s| {
            let key = s.canonical_key();
            *index.entry(key).or_insert_with(|| {
                candidates.push(Candidate {
                    tau_values: Vec::new(),
                    structure: s,
                    fit: None,
                    bic: None,
                    fit_error: None,
                    hd_to_truth: None,
                });
                candidates.len() - 1
            })
        });
        match candidate {
            Some(k) => candidates[k].tau_values.push(tau),
            None => {
                log::info!("threshold {tau}: no independent maximal clique, no candidate");
                warnings.push(format!("threshold {tau} produced no independent maximal clique"));
            }
        }
        records.push(ThresholdRecord { tau, n_edges, n_cliques, candidate });
    }
    let sweep_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    if cfg.selection == Selection::Bic {
        if n < p {
            log::warn!("n = {n} < p = {p}: sample covariance is singular, likelihood comparisons are fragile");
            warnings.push(format!("n = {n} is below p = {p}; BIC selection on a singular sample covariance"));
        }
        let fits: Vec<Result<FitResult>> = candidates
            .par_iter()
            .map(|c| fit_mle(r, n, &c.structure, &cfg.fit_options))
            .collect();
        for (c, fit) in candidates.iter_mut().zip(fits) {
            match fit {
                Ok(f) => {
                    c.bic = Some(bic(&f, n));
                    c.fit = Some(f);
                }
                Err(e) => c.fit_error = Some(e.to_string()),
            }
        }
    }
    let fit_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    if let Some(truth) = &cfg.truth {
        for c in &mut candidates {
            c.hd_to_truth = Some(hamming_distance(&c.structure, truth)?);
        }
    }
    let selected_index = match cfg.selection {
        Selection::Bic => candidates
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.bic.filter(|b| b.is_finite()).map(|b| (k, b)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k),
        Selection::MinHdOracle => candidates
            .iter()
            .enumerate()
            .filter_map(|(k, c)| c.hd_to_truth.map(|h| (k, h)))
            .min_by_key(|&(_, h)| h)
            .map(|(k, _)| k),
        Selection::None => None,
    };
    let select_secs = start.elapsed().as_secs_f64();

    Ok(CtResult {
        models_evaluated: candidates.len(),
        candidates,
        selected_index,
        thresholds: records,
        warnings,
        timing: PhaseTiming { sweep_secs, fit_secs, select_secs },
    })
}
