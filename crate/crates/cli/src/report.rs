use ct_factor::ct::{CtResult, PhaseTiming, ThresholdRecord};
use ct_factor::metrics::MetricReport;
use ct_factor::model::Structure;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct CandidateReport {
    pub tau_values: Vec<f64>,
    pub d: usize,
    pub structure: Structure,
    pub bic: Option<f64>,
    pub loglik: Option<f64>,
    pub converged: Option<bool>,
    pub n_iterations: Option<usize>,
    pub n_free_params: usize,
    pub fit_error: Option<String>,
    pub hd_to_truth: Option<usize>,
    /// Variables loading on no factor.
    pub empty_rows: Vec<usize>,
    /// Every variable is its own factor.
    pub trivial: bool,
}

#[derive(Debug, Serialize)]
pub struct CtReport {
    pub p: usize,
    pub n: usize,
    pub selection: String,
    pub candidates: Vec<CandidateReport>,
    pub selected_index: Option<usize>,
    pub models_evaluated: usize,
    pub thresholds: Vec<ThresholdRecord>,
    pub warnings: Vec<String>,
    pub timing: PhaseTiming,
    /// Selected structure scored against `--truth`.
    pub selected_metrics: Option<MetricReport>,
    /// Summed held-out log-likelihood of the selected structure.
    pub cv_test_loglik: Option<f64>,
}

impl CtReport {
    pub fn new(res: &CtResult, p: usize, n: usize, selection: &str) -> Self {
        let candidates = res
            .candidates
            .iter()
            .map(|c| CandidateReport {
                tau_values: c.tau_values.clone(),
                d: c.structure.d(),
                structure: c.structure.clone(),
                bic: c.bic,
                loglik: c.fit.as_ref().map(|f| f.loglik),
                converged: c.fit.as_ref().map(|f| f.converged),
                n_iterations: c.fit.as_ref().map(|f| f.n_iterations),
                n_free_params: ct_factor::estimate::count_free_params(&c.structure),
                fit_error: c.fit_error.clone(),
                hd_to_truth: c.hd_to_truth,
                empty_rows: c.structure.empty_rows(),
                trivial: c.is_trivial(),
            })
            .collect();
        CtReport {
            p,
            n,
            selection: selection.to_string(),
            candidates,
            selected_index: res.selected_index,
            models_evaluated: res.models_evaluated,
            thresholds: res.thresholds.clone(),
            warnings: res.warnings.clone(),
            timing: res.timing,
            selected_metrics: None,
            cv_test_loglik: None,
        }
    }
}
