//! The experiments behind each subcommand. Every command writes its
//! artifacts into `cfg.out_dir` and returns the in-memory result.

use std::fs;
use std::path::Path;

use anyhow::Context;

use seaice_core::driver::{contraction_study, integrate, param_continuation, stability_experiment, ContinuationReport, ContractionStudy, IntegrateResult, RunPlan, StabilityReport, TimeLimits};
use seaice_core::{CgSettings, RegParams};

use crate::config::RunConfig;
use crate::diagnostics::{format_real, write_diagnostics};
use crate::snapshot::{atomic_write, write_snapshot};

fn out_dir(cfg: &RunConfig) -> anyhow::Result<&Path> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    atomic_write(path, &w.into_inner()?)?;
    Ok(())
}

/// `run`: initial and final snapshots, `diagnostics.csv` and
/// `violations.csv`.
pub fn run(cfg: &RunConfig) -> anyhow::Result<IntegrateResult> {
    let dir = out_dir(cfg)?;
    let s0 = cfg.initial_state()?;
    write_snapshot(&s0, &dir.join("initial.json"))?;
    let res = integrate(&s0, cfg.t_end, &cfg.run_plan(), &cfg.phys_params(), &cfg.reg_params())?;
    write_snapshot(res.final_state(), &dir.join("final.json"))?;
    write_diagnostics(&res.diagnostics, &dir.join("diagnostics.csv"))?;
    let rows: Vec<Vec<String>> = res.violations.iter().map(|v| vec![format_real(v.t), v.quantity.to_string(), format_real(v.value), format_real(v.bound)]).collect();
    write_csv(&dir.join("violations.csv"), &["t", "quantity", "value", "bound"], &rows)?;
    Ok(res)
}

/// `picard-study`: contraction ratios while halving the slab length.
pub fn picard_study(cfg: &RunConfig) -> anyhow::Result<ContractionStudy> {
    let dir = out_dir(cfg)?;
    let s0 = cfg.initial_state()?;
    let pp = cfg.phys_params();
    let spec = &cfg.studies.picard;
    let t0 = spec.t_slab.unwrap_or_else(|| TimeLimits::for_state(&s0, &pp).min().min(cfg.t_end.max(cfg.dt_cap)));
    let cg = CgSettings { tol_rel: cfg.cg_tol, max_iter: cfg.cg_max_iter };
    let study = contraction_study(&s0, t0, cfg.dt_cap, spec.picard_tol, spec.picard_max, spec.halvings, true, &pp, &cfg.reg_params(), cg)?;
    let mut rows = Vec::new();
    for p in &study.probes {
        for (k, d) in p.distances.iter().enumerate() {
            let ratio = if k == 0 { f64::NAN } else { p.ratios[k - 1] };
            rows.push(vec![format_real(p.t_slab), format_real(p.dt), k.to_string(), format_real(*d), format_real(ratio)]);
        }
    }
    write_csv(&dir.join("picard_study.csv"), &["t_slab", "dt", "iteration", "distance", "ratio"], &rows)?;
    Ok(study)
}

/// The halving schedule `factor^j (mu, lambda, iota, nu)`, `j = 0..entries`.
pub fn continuation_schedule(cfg: &RunConfig) -> Vec<RegParams> {
    let spec = &cfg.studies.continuation;
    let base = cfg.reg_params().with_relaxation(spec.base);
    (0..spec.entries).map(|j| base.scaled_relaxation(spec.factor.powi(j as i32))).collect()
}

pub fn continuation_plan(cfg: &RunConfig) -> RunPlan {
    let spec = &cfg.studies.continuation;
    RunPlan { picard_tol: spec.picard_tol, picard_max: spec.picard_max, cg: CgSettings { tol_rel: cfg.cg_tol, max_iter: Some(spec.cg_max_iter) }, ..cfg.run_plan() }
}

/// `continuation-study`: consecutive differences along the schedule.
pub fn continuation_study(cfg: &RunConfig) -> anyhow::Result<ContinuationReport> {
    let dir = out_dir(cfg)?;
    let s0 = cfg.initial_state()?;
    let schedule = continuation_schedule(cfg);
    let rep = param_continuation(&s0, cfg.studies.continuation.t_end, &schedule, &cfg.phys_params(), &continuation_plan(cfg))?;
    let rows: Vec<Vec<String>> = rep
        .diffs
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let r = &schedule[k];
            vec![k.to_string(), format_real(r.mu), format_real(r.lambda), format_real(r.iota), format_real(r.nu), format_real(*d)]
        })
        .collect();
    write_csv(&dir.join("continuation.csv"), &["k", "mu", "lambda", "iota", "nu", "d_k"], &rows)?;
    Ok(rep)
}

/// `stability-study`: one perturbed run per configured `delta`.
pub fn stability_study(cfg: &RunConfig) -> anyhow::Result<Vec<StabilityReport>> {
    let dir = out_dir(cfg)?;
    let s0 = cfg.initial_state()?;
    let pp = cfg.phys_params();
    let spec = &cfg.studies.stability;
    let t = spec.t_end.unwrap_or_else(|| TimeLimits::for_state(&s0, &pp).min());
    let plan = RunPlan { picard_tol: spec.picard_tol, picard_max: spec.picard_max, ..cfg.run_plan() };
    let reports = spec.deltas.iter().map(|&d| stability_experiment(&s0, d, t, &plan, &pp, &cfg.reg_params())).collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<String>> = reports.iter().map(|r| vec![format_real(r.delta), format_real(r.numerator), format_real(r.denominator), format_real(r.ratio)]).collect();
    write_csv(&dir.join("stability.csv"), &["delta", "numerator", "denominator", "ratio"], &rows)?;
    Ok(reports)
}
