use std::fs;
use std::time::Instant;

use ct_factor::ct::{ct_run, CtConfig};
use ct_factor::metrics::evaluate;
use ct_factor::numerics::{sample_correlation, RngState};
use ct_factor::simgen::SimSpec;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{BenchArgs, BenchKind, SelectMode, Violation};
use crate::commands::{generate, selection_name, selection_of};
use crate::error::{CliError, CliResult};
use crate::io::{emit_json, write_text};

struct Condition {
    label: String,
    spec: SimSpec,
}

fn conditions(args: &BenchArgs) -> CliResult<Vec<Condition>> {
    let mut out = Vec::new();
    match args.kind {
        BenchKind::Low => {
            for &scale in &args.phi_scale {
                let spec = SimSpec { phi_scale: scale, ..SimSpec::default() };
                spec.validate()?;
                out.push(Condition { label: format!("low-phi{scale}"), spec });
            }
        }
        BenchKind::High => {
            for &n in &args.preset {
                let base = SimSpec::highdim(n)?;
                if matches!(args.condition, Violation::Thresh | Violation::Both) {
                    let spec = SimSpec { phi_scale: 0.75, ..base.clone() };
                    out.push(Condition { label: format!("highdim-{n}-thresh"), spec });
                }
                if matches!(args.condition, Violation::Ucc | Violation::Both) {
                    let spec = SimSpec { phi_scale: 0.0, ucc_violation_fraction: 0.75, ..base.clone() };
                    out.push(Condition { label: format!("highdim-{n}-ucc"), spec });
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Replicate {
    condition: usize,
    index: u64,
    seed: u64,
    outcome: Result<Outcome, String>,
    wall_secs: f64,
}

#[derive(Debug, Clone)]
struct Outcome {
    f1: f64,
    hd: usize,
    d_hat: usize,
    d_true: usize,
    models_evaluated: usize,
}

fn run_one(spec: &SimSpec, mode: SelectMode, seed: u64) -> Result<Outcome, String> {
    let mut rng = RngState::new(seed);
    let theta = generate(spec, &mut rng).map_err(|e| e.to_string())?;
    let x = ct_factor::simgen::sample_dataset(&theta, spec.n, &mut rng).map_err(|e| e.to_string())?;
    let r = sample_correlation(&x).map_err(|e| e.to_string())?;
    let truth = theta.structure();
    let cfg = CtConfig { selection: selection_of(mode), truth: Some(truth.clone()), ..CtConfig::default() };
    let res = ct_run(&r, spec.n, &cfg).map_err(|e| e.to_string())?;
    let sel = res.selected().ok_or("no structure was selected")?;
    let m = evaluate(&sel.structure, &truth).map_err(|e| e.to_string())?;
    Ok(Outcome { f1: m.f1, hd: m.hd, d_hat: m.d_hat, d_true: m.d_true, models_evaluated: res.models_evaluated })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

fn summary(xs: &[f64]) -> Option<Summary> {
    if xs.is_empty() {
        return None;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(Summary { mean, sd })
}

#[derive(Debug, Serialize)]
pub struct ConditionAggregate {
    pub condition: String,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub phi_scale: f64,
    pub ucc_violation_fraction: f64,
    pub replicates: u64,
    pub failures: usize,
    pub f1: Option<Summary>,
    pub hd: Option<Summary>,
    pub d_hat: Option<Summary>,
    pub relative_d_error: Option<Summary>,
    /// Share of replicates with d̂ = d.
    pub d_correct_fraction: Option<f64>,
    pub models_evaluated: Option<Summary>,
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub kind: String,
    pub selection: String,
    pub seed: u64,
    pub conditions: Vec<ConditionAggregate>,
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let mode = args.mode.unwrap_or(match args.kind {
        BenchKind::Low => SelectMode::Bic,
        BenchKind::High => SelectMode::MinHd,
    });
    if mode == SelectMode::None {
        return Err(CliError::Input("bench needs a selection rule (bic or min-hd)".into()));
    }
    let conds = conditions(args)?;
    let jobs: Vec<(usize, u64)> = (0..conds.len()).flat_map(|c| (0..args.reps).map(move |r| (c, r))).collect();
    let mut reps: Vec<Replicate> = jobs
        .par_iter()
        .map(|&(c, index)| {
            // one seed per replicate, distinct across conditions
            let seed = args.seed.wrapping_add(c as u64 * args.reps + index);
            log::info!("{} replicate {index} (seed {seed})", conds[c].label);
            let start = Instant::now();
            let outcome = run_one(&conds[c].spec, mode, seed);
            if let Err(e) = &outcome {
                log::warn!("{} replicate {index} failed: {e}", conds[c].label);
            }
            Replicate { condition: c, index, seed, outcome, wall_secs: start.elapsed().as_secs_f64() }
        })
        .collect();
    reps.sort_by_key(|r| (r.condition, r.index));

    let mut csv = String::from("condition,replicate,seed,f1,hd,d_hat,d_true,models_evaluated,wall_secs,error\n");
    for r in &reps {
        let label = &conds[r.condition].label;
        match &r.outcome {
            Ok(o) => csv.push_str(&format!(
                "{label},{},{},{},{},{},{},{},{},\n",
                r.index, r.seed, o.f1, o.hd, o.d_hat, o.d_true, o.models_evaluated, r.wall_secs
            )),
            Err(e) => csv.push_str(&format!(
                "{label},{},{},,,,,,{},\"{}\"\n",
                r.index,
                r.seed,
                r.wall_secs,
                e.replace('"', "'")
            )),
        }
    }

    let conditions = conds
        .iter()
        .enumerate()
        .map(|(c, cond)| {
            let ok: Vec<&Outcome> = reps.iter().filter(|r| r.condition == c).filter_map(|r| r.outcome.as_ref().ok()).collect();
            let col = |f: &dyn Fn(&Outcome) -> f64| summary(&ok.iter().map(|o| f(o)).collect::<Vec<_>>());
            ConditionAggregate {
                condition: cond.label.clone(),
                n: cond.spec.n,
                p: cond.spec.p(),
                d: cond.spec.d,
                phi_scale: cond.spec.phi_scale,
                ucc_violation_fraction: cond.spec.ucc_violation_fraction,
                replicates: args.reps,
                failures: args.reps as usize - ok.len(),
                f1: col(&|o| o.f1),
                hd: col(&|o| o.hd as f64),
                d_hat: col(&|o| o.d_hat as f64),
                relative_d_error: col(&|o| (o.d_hat as f64 - o.d_true as f64).abs() / o.d_true as f64),
                d_correct_fraction: (!ok.is_empty())
                    .then(|| ok.iter().filter(|o| o.d_hat == o.d_true).count() as f64 / ok.len() as f64),
                models_evaluated: col(&|o| o.models_evaluated as f64),
            }
        })
        .collect();
    let aggregate = Aggregate {
        kind: match args.kind {
            BenchKind::Low => "low".into(),
            BenchKind::High => "high".into(),
        },
        selection: selection_name(mode).into(),
        seed: args.seed,
        conditions,
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::write(&args.out_dir, e))?;
    write_text(&args.out_dir.join("replicates.csv"), &csv)?;
    emit_json(&aggregate, Some(&args.out_dir.join("aggregate.json")))?;
    emit_json(&aggregate, None)
}
