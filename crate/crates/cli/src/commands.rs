use std::fs;
use std::time::Instant;

use ct_factor::ct::{ct_run, default_thresholds, CtConfig, Selection};
use ct_factor::estimate::{kfold_test_loglik, FitOptions};
use ct_factor::graph::{build_graph, independent_maximal_cliques, CliqueSet};
use ct_factor::metrics::{evaluate, MetricReport};
use ct_factor::model::*;
use ct_factor::numerics::RngState;
use ct_factor::simgen::{gen_independent_cluster, gen_ucc_violation, sample_dataset, SimSpec};
use serde::Serialize;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::io::*;
use crate::report::CtReport;

pub fn selection_of(mode: SelectMode) -> Selection {
    match mode {
        SelectMode::Bic => Selection::Bic,
        SelectMode::MinHd => Selection::MinHdOracle,
        SelectMode::None => Selection::None,
    }
}

pub fn selection_name(mode: SelectMode) -> &'static str {
    match mode {
        SelectMode::Bic => "bic",
        SelectMode::MinHd => "min-hd",
        SelectMode::None => "none",
    }
}

/// `m` equidistant points on [0, 1].
pub fn equidistant(m: u32) -> Vec<f64> {
    if m == 40 {
        return default_thresholds();
    }
    if m == 1 {
        return vec![0.0];
    }
    (0..m).map(|k| k as f64 / (m - 1) as f64).collect()
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let input = load_input(&args.input)?;
    let truth: Option<Structure> = args.truth.as_ref().map(|p| read_json(p)).transpose()?;
    if args.select == SelectMode::MinHd && truth.is_none() {
        return Err(ct_factor::Error::MissingTruth.into());
    }
    let fit_options = FitOptions {
        max_iterations: args.max_iterations,
        loglik_tolerance: args.tolerance,
        restarts: args.restarts,
        seed: args.seed,
        ..FitOptions::default()
    };
    let cfg = CtConfig {
        thresholds: args.thresholds.clone().unwrap_or_else(|| equidistant(args.n_thresholds)),
        selection: selection_of(args.select),
        fit_options: fit_options.clone(),
        truth: truth.clone(),
    };
    let res = ct_run(&input.corr, input.n, &cfg)?;
    let mut report = CtReport::new(&res, input.corr.dim(), input.n, selection_name(args.select));

    if let (Some(t), Some(sel)) = (&truth, res.selected()) {
        report.selected_metrics = Some(evaluate(&sel.structure, t)?);
    }
    if let Some(k) = args.cv_folds {
        let data = input
            .data
            .as_ref()
            .ok_or_else(|| CliError::Input("--cv-folds needs --data".into()))?;
        let sel = res
            .selected()
            .ok_or_else(|| CliError::Input("--cv-folds needs a selected structure".into()))?;
        let mut rng = RngState::new(args.seed);
        report.cv_test_loglik = Some(kfold_test_loglik(data, &sel.structure, k, &fit_options, &mut rng)?);
    }
    emit_json(&report, args.out.as_ref())
}

#[derive(Debug, Serialize)]
pub struct ModelSummary {
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub thresholdable: bool,
    pub gap: f64,
    pub tau0: f64,
    pub ucc_holds: bool,
    pub violating_factors: Vec<usize>,
    pub violating_fraction: f64,
}

pub fn summarize(theta: &FactorParams, n: usize, seed: u64) -> ModelSummary {
    let t = thresholdability(theta);
    let u = unique_children(&theta.structure());
    let violating = u.violating_factors();
    ModelSummary {
        p: theta.p(),
        d: theta.d(),
        n,
        seed,
        thresholdable: t.thresholdable,
        gap: t.gap,
        tau0: t.tau0,
        ucc_holds: u.ucc_holds,
        violating_fraction: violating.len() as f64 / theta.d() as f64,
        violating_factors: violating,
    }
}

pub fn parse_preset(name: &str) -> CliResult<SimSpec> {
    let n = name
        .strip_prefix("highdim-")
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| CliError::Input(format!("unknown preset '{name}', expected highdim-<n>")))?;
    Ok(SimSpec::highdim(n)?)
}

/// Model generator chosen by the violation fraction.
pub fn generate(spec: &SimSpec, rng: &mut RngState) -> ct_factor::Result<FactorParams> {
    if spec.ucc_violation_fraction > 0.0 {
        gen_ucc_violation(spec, rng)
    } else {
        gen_independent_cluster(spec, rng)
    }
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut spec = match &args.preset {
        Some(name) => parse_preset(name)?,
        None => SimSpec { d: args.d, children_per_factor: args.children, n: args.n, ..SimSpec::default() },
    };
    spec.lambda_range = (args.lambda_lo, args.lambda_hi);
    spec.phi_scale = args.phi_scale;
    spec.seed = args.seed;
    spec.ucc_violation_fraction = args.ucc_violation;
    if spec.ucc_violation_fraction > 0.0 && spec.phi_scale != 0.0 {
        log::warn!("--ucc-violation uses Φ = I; --phi-scale is ignored");
    }
    spec.validate()?;
    let mut rng = RngState::new(args.seed);
    let theta = generate(&spec, &mut rng)?;
    let data = sample_dataset(&theta, spec.n, &mut rng)?;

    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::write(&args.out_dir, e))?;
    emit_json(&theta, Some(&args.out_dir.join("model.json")))?;
    emit_json(&theta.structure(), Some(&args.out_dir.join("truth.json")))?;
    let header = (1..=theta.p()).map(|i| format!("x{i}")).collect();
    let table = Table { header: Some(header), data };
    write_text(&args.out_dir.join("data.csv"), &format_csv(&table))?;
    emit_json(&summarize(&theta, spec.n, args.seed), None)
}

#[derive(Debug, Serialize)]
pub struct CliqueTiming {
    pub build_secs: f64,
    pub search_secs: f64,
}

#[derive(Debug, Serialize)]
pub struct CliqueReport {
    pub p: usize,
    pub tau: f64,
    pub n_edges: usize,
    pub n_cliques: usize,
    pub cliques: CliqueSet,
    /// Variables in no independent maximal clique.
    pub uncovered: Vec<usize>,
    pub timing: CliqueTiming,
}

pub fn cliques(args: &CliquesArgs) -> CliResult<()> {
    let input = load_input(&args.input)?;
    let start = Instant::now();
    let g = build_graph(&input.corr, args.tau)?;
    let build_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let cs = independent_maximal_cliques(&g);
    let search_secs = start.elapsed().as_secs_f64();
    let mut covered = vec![false; g.p()];
    for c in &cs.cliques {
        for &v in c {
            covered[v] = true;
        }
    }
    let report = CliqueReport {
        p: g.p(),
        tau: args.tau,
        n_edges: g.edge_count(),
        n_cliques: cs.len(),
        uncovered: (0..g.p()).filter(|&v| !covered[v]).collect(),
        cliques: cs,
        timing: CliqueTiming { build_secs, search_secs },
    };
    emit_json(&report, args.out.as_ref())
}

#[derive(Debug, Serialize)]
pub struct UccReport {
    pub sets: Vec<Vec<usize>>,
    pub ucc_holds: bool,
    pub violating_factors: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct BoundPoint {
    pub n: u64,
    pub eta: f64,
}

#[derive(Debug, Serialize)]
pub struct BoundReport {
    pub gamma: f64,
    pub c: f64,
    /// Empty when the model is not thresholdable (no positive gap).
    pub curve: Vec<BoundPoint>,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub p: usize,
    pub d: usize,
    pub thresholdability: ThresholdabilityReport,
    pub block_condition: bool,
    pub unique_children: UccReport,
    pub rotational: RotationalReport,
    pub edge_recovery_bound: BoundReport,
}

pub fn check(args: &CheckArgs) -> CliResult<()> {
    let theta: FactorParams = read_json(&args.model)?;
    let t = thresholdability(&theta);
    let u = unique_children(&theta.structure());
    let gamma = t.gap.clamp(0.0, 2.0);
    let curve = if t.thresholdable && t.gap > 0.0 {
        args.n_grid
            .iter()
            .map(|&n| Ok(BoundPoint { n, eta: consistency_bound(n, theta.p() as u64, gamma, args.c)? }))
            .collect::<CliResult<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let report = CheckReport {
        p: theta.p(),
        d: theta.d(),
        block_condition: general_sufficient_check(&theta),
        unique_children: UccReport { violating_factors: u.violating_factors(), sets: u.sets, ucc_holds: u.ucc_holds },
        rotational: rotational_uniqueness_check(theta.lambda()),
        edge_recovery_bound: BoundReport { gamma, c: args.c, curve },
        thresholdability: t,
    };
    emit_json(&report, args.out.as_ref())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> CliResult<()> {
    let est: Structure = read_json(&args.estimate)?;
    let truth: Structure = read_json(&args.truth)?;
    let report: MetricReport = evaluate(&est, &truth)?;
    emit_json(&report, args.out.as_ref())
}
