//! Randomized invariant suite behind `seaice check-invariants`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seaice_core::driver::{integrate, MonitorMode, MonitorPolicy, RunPlan, State, TimeLimits};
use seaice_core::grid::{div, norm_hk_sq, sym_grad, derivative_density};
use seaice_core::momentum::MomentumOperator;
use seaice_core::rheology::{monotone_lower_bound, monotonicity_gap};
use seaice_core::thermo::src_h_point;
use seaice_core::transport::{cfl_dt, step_h};
use seaice_core::{CflPolicy, Grid, GrowthFn, PhysParams, RegParams, ScalarField, VectorField};

use crate::config::{random_smooth, rescale};
use crate::snapshot;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_field(g: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::from_vec(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("length matches")
}

fn random_vector(g: Grid, rng: &mut ChaCha8Rng) -> VectorField {
    VectorField::new(random_field(g, rng), random_field(g, rng))
}

/// Relative defect of `∫|∇⁴u|² = ½∫|∇³D|² − ∫|∇³ div u|²` for one field.
pub fn h4_identity_defect(u: &VectorField) -> f64 {
    let lhs = derivative_density(u, 4).integral();
    let rhs = 0.5 * derivative_density(&sym_grad(u), 3).integral() - derivative_density(&div(u), 3).integral();
    (lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE)
}

/// Relative defect of `⟨∂x f, g⟩ = −⟨f, ∂x g⟩` (and the `y` analogue).
pub fn sbp_defect(f: &ScalarField, g: &ScalarField) -> f64 {
    let scale = (f.inner(f) * g.inner(g)).sqrt() / f.grid().dx().min(f.grid().dy());
    let dx = (f.ddx().inner(g) + f.inner(&g.ddx())).abs();
    let dy = (f.ddy().inner(g) + f.inner(&g.ddy())).abs();
    dx.max(dy) / scale
}

fn suite_calculus(rng: &mut ChaCha8Rng) -> SuiteResult {
    let g = Grid::unit(32).expect("valid grid");
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (f, h) = (random_field(g, rng), random_field(g, rng));
        worst = worst.max(sbp_defect(&f, &h));
        worst = worst.max(h4_identity_defect(&random_vector(g, rng)));
    }
    SuiteResult { name: "calculus identities", passed: worst <= 1e-12, detail: format!("max relative defect {worst:.2e}") }
}

fn suite_monotonicity(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut fails = 0;
    let mut worst_rel = 0.0f64;
    for k in 0..20_000 {
        let eps = [1e-3, 1e-1, 1.0][k % 3];
        let p = rng.random_range(0.15..10.0);
        let g1: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let g2: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let gap = monotonicity_gap(p, p, &g1, &g2, eps).expect("positive inputs");
        // measured against the size of the subtracted terms, not the value,
        // which cancels in the plastic regime
        let mag = p * g1.iter().chain(&g2).map(|v| v * v).sum::<f64>().sqrt();
        let rel = (gap.lhs - gap.bound).abs() / mag.max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.max(rel);
        let floor = monotone_lower_bound(p, &g1, &g2, eps);
        if gap.lhs < -1e-14 * mag || rel > 1e-12 || gap.lhs < floor - 1e-12 * mag {
            fails += 1;
        }
    }
    SuiteResult { name: "stress monotonicity", passed: fails == 0, detail: format!("{fails} failures, max identity defect {worst_rel:.2e}") }
}

fn suite_source_bound(rng: &mut ChaCha8Rng) -> SuiteResult {
    let f = GrowthFn::tanh(1.0, 1.0, 1.0);
    let bound = f.source_bound();
    let mut fails = 0;
    for _ in 0..20_000 {
        let (h, a) = (rng.random_range(0.0..10.0), rng.random_range(0.0..=1.0));
        let (omega, nu) = (rng.random_range(1e-3..1.0), rng.random_range(0.0..1.0));
        if src_h_point(h, a, omega, nu, &f).abs() > bound {
            fails += 1;
        }
    }
    SuiteResult { name: "thickness source bound", passed: fails == 0, detail: format!("{fails} violations of |S_h| <= {bound}") }
}

fn suite_operator(rng: &mut ChaCha8Rng) -> SuiteResult {
    let g = Grid::unit(16).expect("valid grid");
    let pos = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| ScalarField::from_vec(g, (0..g.len()).map(|_| rng.random_range(lo..hi)).collect()).expect("length matches");
    let op = MomentumOperator::new(pos(rng, 100.0, 300.0), pos(rng, 0.1, 10.0), pos(rng, 0.1, 10.0), 0.01, 0.01, 1e-4).expect("valid operator");
    let mut worst = 0.0f64;
    let mut positive = true;
    for _ in 0..20 {
        let (v, w) = (random_vector(g, rng), random_vector(g, rng));
        let (a, b) = (op.apply(&v).inner(&w), v.inner(&op.apply(&w)));
        worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
        positive &= op.apply(&v).inner(&v) > 0.0 && op.apply_viscous(&v).inner(&v) >= 0.0;
    }
    SuiteResult { name: "momentum operator symmetry", passed: worst <= 1e-12 && positive, detail: format!("max symmetry defect {worst:.2e}, positive = {positive}") }
}

fn suite_transport(rng: &mut ChaCha8Rng) -> SuiteResult {
    let g = Grid::unit(32).expect("valid grid");
    let h = rescale(&random_smooth(g, 4, rng), 0.5, 1.5);
    let u = VectorField::new(rescale(&random_smooth(g, 3, rng), -0.5, 0.5), rescale(&random_smooth(g, 3, rng), -0.5, 0.5));
    let dt = cfl_dt(&u, g, CflPolicy::default());
    let z = ScalarField::zeros(g);
    let mut cur = h.clone();
    let mut worst = 0.0f64;
    let mut bounded = true;
    for _ in 0..50 {
        let next = step_h(&cur, &u, &z, dt).expect("CFL respected");
        worst = worst.max((next.integral() - cur.integral()).abs() / cur.integral());
        bounded &= next.min() > 0.0;
        cur = next;
    }
    SuiteResult { name: "transport conservation", passed: worst <= 1e-13 && bounded, detail: format!("max relative mass change per step {worst:.2e}") }
}

fn suite_snapshot(rng: &mut ChaCha8Rng) -> SuiteResult {
    let g = Grid::new(12, 9, 1.0, 0.75).expect("valid grid");
    let s = State::new(random_vector(g, rng), random_field(g, rng), random_field(g, rng), rng.random_range(0.0..1.0)).expect("finite");
    let outcome = (|| -> anyhow::Result<bool> {
        let dir = tempfile::tempdir()?;
        let p = dir.path().join("snap.json");
        snapshot::write_snapshot(&s, &p)?;
        let back = snapshot::read_snapshot(&p)?;
        let bits = |st: &State| [&st.u.x, &st.u.y, &st.h, &st.a].iter().flat_map(|f| f.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        Ok(bits(&s) == bits(&back) && s.t.to_bits() == back.t.to_bits())
    })();
    match outcome {
        Ok(ok) => SuiteResult { name: "snapshot round trip", passed: ok, detail: if ok { "bitwise equal".into() } else { "fields differ".into() } },
        Err(e) => SuiteResult { name: "snapshot round trip", passed: false, detail: e.to_string() },
    }
}

fn suite_bounds(rng: &mut ChaCha8Rng) -> SuiteResult {
    let g = Grid::unit(16).expect("valid grid");
    let pp = PhysParams::default();
    let rp = RegParams::default();
    let s0 = State::new(
        VectorField::new(rescale(&random_smooth(g, 3, rng), -0.05, 0.05), rescale(&random_smooth(g, 3, rng), -0.05, 0.05)),
        rescale(&random_smooth(g, 3, rng), 0.6, 1.4),
        rescale(&random_smooth(g, 3, rng), 0.0, 1.0),
        0.0,
    )
    .expect("finite");
    let t = TimeLimits::for_state(&s0, &pp).min();
    let plan = RunPlan { monitor: MonitorPolicy { tol: 1e-6, mode: MonitorMode::Record }, ..Default::default() };
    match integrate(&s0, t, &plan, &pp, &rp) {
        Ok(r) => {
            let energy_ok = r.diagnostics.iter().all(|d| d.energy >= 0.0 && norm_hk_sq(&r.final_state().u, 0) >= 0.0);
            SuiteResult { name: "pointwise and mass bounds", passed: r.violations.is_empty() && energy_ok, detail: format!("{} violations over T = {t:.4}", r.violations.len()) }
        }
        Err(e) => SuiteResult { name: "pointwise and mass bounds", passed: false, detail: e.to_string() },
    }
}

/// Runs every suite with generators seeded from `seed`.
pub fn run_suite(seed: u64) -> Vec<SuiteResult> {
    let suites: [fn(&mut ChaCha8Rng) -> SuiteResult; 7] = [suite_calculus, suite_monotonicity, suite_source_bound, suite_operator, suite_transport, suite_snapshot, suite_bounds];
    suites.iter().enumerate().map(|(k, s)| s(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64)))).collect()
}

pub fn format_table(results: &[SuiteResult]) -> String {
    let w = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in results {
        out.push_str(&format!("{:<w$}  {}  {}\n", r.name, if r.passed { "PASS" } else { "FAIL" }, r.detail));
    }
    out
}
