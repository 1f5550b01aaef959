//! Picard fixed-point map on time slabs, slab chaining and the studies built
//! on top of it.
//!
//! Within a slab the time grid is uniform: all steps have length `dt` except
//! possibly a shorter final one when the slab ends at the requested horizon.
//! Time levels are `t_start + k dt`, so chaining runs at slab boundaries
//! reproduces the same arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{derivative_density, div, norm_hk, norm_hk_sq, norm_lp, sym_grad, Grid, Lp, ScalarField, VectorField};
use crate::momentum::{momentum_step, CgSettings, LinearSolveReport};
use crate::rheology::{PhysParams, RegParams};
use crate::thermo::{chi_a, src_a, src_h};
use crate::transport::{cfl_dt, step_a, step_h, CflPolicy};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: VectorField,
    pub h: ScalarField,
    pub a: ScalarField,
    pub t: f64,
}

impl State {
    pub fn new(u: VectorField, h: ScalarField, a: ScalarField, t: f64) -> Result<Self> {
        if u.grid() != h.grid() || h.grid() != a.grid() {
            return Err(Error::GridMismatch);
        }
        let s = Self { u, h, a, t };
        if !(s.u.is_finite() && s.h.is_finite() && s.a.is_finite() && t.is_finite()) {
            return Err(Error::NonFinite("state"));
        }
        Ok(s)
    }

    pub fn grid(&self) -> Grid {
        self.h.grid()
    }

    pub fn mass(&self) -> f64 {
        self.h.integral()
    }
}

/// One Picard slab: length, step, stopping tolerance and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabPlan {
    pub t_slab: f64,
    pub dt: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl SlabPlan {
    pub fn new(t_slab: f64, dt: f64, picard_tol: f64, picard_max: usize) -> Result<Self> {
        let p = Self { t_slab, dt, picard_tol, picard_max };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_slab.is_finite() && self.dt <= self.t_slab * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter { name: "dt", reason: format!("need 0 < dt <= T_slab, got dt = {}, T_slab = {}", self.dt, self.t_slab) });
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::InvalidParameter { name: "picard_tol", reason: format!("must be positive, got {}", self.picard_tol) });
        }
        if self.picard_max == 0 {
            return Err(Error::InvalidParameter { name: "picard_max", reason: "must be at least 1".into() });
        }
        Ok(())
    }

    /// Step lengths covering the slab.
    pub fn step_sizes(&self) -> Vec<f64> {
        let ratio = self.t_slab / self.dt;
        let n = libm::ceil(ratio * (1.0 - 1e-10)).max(1.0) as usize;
        let mut steps = vec![self.dt; n];
        let last = self.t_slab - (n - 1) as f64 * self.dt;
        if libm::fabs(last - self.dt) > 1e-9 * self.dt {
            steps[n - 1] = last;
        }
        steps
    }

    /// Time levels `t0, t0 + dt, ...` including both ends.
    pub fn times(&self, t0: f64) -> Vec<f64> {
        time_levels(t0, self.dt, &self.step_sizes())
    }
}

fn time_levels(t0: f64, dt: f64, steps: &[f64]) -> Vec<f64> {
    let n = steps.len();
    let mut out: Vec<f64> = (0..n).map(|k| t0 + k as f64 * dt).collect();
    out.push(out[n - 1] + steps[n - 1]);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeLimits {
    pub t_h: f64,
    pub t_mass: f64,
}

impl TimeLimits {
    pub fn min(&self) -> f64 {
        self.t_h.min(self.t_mass)
    }

    pub fn for_state(s: &State, pp: &PhysParams) -> Self {
        small_time_limits(s.h.min().max(0.0), s.h.max(), pp.growth.f_lo(), pp.growth.f_hi(), s.mass(), s.grid().area())
    }
}

/// Horizons on which thickness stays in `[h̲/4, 4h̄]` and the total mass
/// within a factor two of its initial value. `+∞` when the growth function
/// vanishes identically.
pub fn small_time_limits(h_lo: f64, h_hi: f64, f_lo: f64, f_hi: f64, mass_in: f64, area: f64) -> TimeLimits {
    let f = libm::fabs(f_hi) + libm::fabs(f_lo);
    if f == 0.0 {
        return TimeLimits { t_h: f64::INFINITY, t_mass: f64::INFINITY };
    }
    let t_h = if h_lo > 0.0 { h_lo / (6.0 * f) } else { h_hi / (3.0 * f) };
    TimeLimits { t_h, t_mass: mass_in / (6.0 * f * area) }
}

/// Trajectories produced by one application of the map.
#[derive(Debug, Clone)]
pub struct MapOutput {
    pub u: Vec<VectorField>,
    pub h: Vec<ScalarField>,
    pub a: Vec<ScalarField>,
    pub solves: Vec<LinearSolveReport>,
}

/// The map `u° ↦ u_m`: transport `h`, `A` with the frozen velocity `u°`,
/// then run the lagged momentum steps. `u_o` holds `u°` at every time level
/// of the slab (`u_o[0]` is ignored by the momentum steps).
pub fn apply_map(u_o: &[VectorField], state0: &State, plan: &SlabPlan, pp: &PhysParams, rp: &RegParams, cg: CgSettings) -> Result<MapOutput> {
    plan.validate()?;
    let min_h = state0.h.min();
    if !(min_h > 0.0) {
        return Err(Error::DegenerateMass { min_h });
    }
    let lim = TimeLimits::for_state(state0, pp).min();
    if plan.t_slab > lim * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!("slab length {} exceeds the small-time limit {lim}", plan.t_slab)));
    }
    let steps = plan.step_sizes();
    if u_o.len() != steps.len() + 1 {
        return Err(Error::Precondition(format!("frozen velocity has {} levels, slab needs {}", u_o.len(), steps.len() + 1)));
    }

    let mut h = Vec::with_capacity(u_o.len());
    let mut a = Vec::with_capacity(u_o.len());
    h.push(state0.h.clone());
    a.push(state0.a.clone());
    for (n, &dt) in steps.iter().enumerate() {
        let sh = src_h(&h[n], &a[n], rp.omega, rp.nu, &pp.growth);
        let sa = src_a(&h[n], &a[n], rp.omega, rp.nu, &pp.growth, pp.h0, &sh)?;
        let chi = chi_a(&a[n], rp.omega);
        let hn = step_h(&h[n], &u_o[n], &sh, dt)?;
        let an = step_a(&a[n], &u_o[n], &sa, &chi, dt)?;
        h.push(hn);
        a.push(an);
    }

    let mut u = Vec::with_capacity(u_o.len());
    let mut solves = Vec::with_capacity(steps.len());
    u.push(state0.u.clone());
    for (n, &dt) in steps.iter().enumerate() {
        let (un, rep) = momentum_step(&u[n], &u_o[n + 1], &h[n + 1], &a[n + 1], pp, rp, dt, cg)?;
        u.push(un);
        solves.push(rep);
    }
    Ok(MapOutput { u, h, a, solves })
}

/// Discrete `L∞(L²) ∩ L²(H²)` distance between two velocity trajectories:
/// the sup over time levels of the `L²` norm plus the square root of the
/// trapezoidal time integral of the squared `H²` norm.
pub fn trajectory_distance(v: &[VectorField], w: &[VectorField], times: &[f64]) -> f64 {
    assert!(v.len() == w.len() && v.len() == times.len());
    let mut sup = 0.0f64;
    let mut prev = None;
    let mut integral = 0.0;
    for (k, (a, b)) in v.iter().zip(w).enumerate() {
        let d = a - b;
        sup = sup.max(norm_lp(&d, Lp::L2));
        let h2 = norm_hk_sq(&d, 2);
        if let Some(p) = prev {
            integral += 0.5 * (times[k] - times[k - 1]) * (p + h2);
        }
        prev = Some(h2);
    }
    sup + libm::sqrt(integral)
}

/// Totals over the linear solves of a slab.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveSummary {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
}

impl SolveSummary {
    fn add(&mut self, reps: &[LinearSolveReport]) {
        for r in reps {
            self.solves += 1;
            self.total_iterations += r.iterations;
            self.max_iterations = self.max_iterations.max(r.iterations);
            self.max_residual = self.max_residual.max(r.residual);
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Converged states at every time level of the slab.
    pub states: Vec<State>,
    /// `d(u^{k+1}, u^k)` for every iteration.
    pub distances: Vec<f64>,
    /// `distances[k] / distances[k-1]`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub solves: SolveSummary,
}

impl PicardOutcome {
    pub fn iterations(&self) -> usize {
        self.distances.len()
    }

    pub fn last_ratio(&self) -> Option<f64> {
        self.ratios.last().copied()
    }
}

/// Iterates `u^{k+1} = 𝔐(u^k)` from the constant-in-time extension of
/// `u_in` until the distance between successive iterates drops below
/// `picard_tol`. Three consecutive ratios above one abort with
/// [`Error::NonContraction`].
pub fn picard_solve(state0: &State, plan: &SlabPlan, pp: &PhysParams, rp: &RegParams, cg: CgSettings) -> Result<PicardOutcome> {
    picard_iterate(state0, plan, pp, rp, cg, true)
}

fn picard_iterate(state0: &State, plan: &SlabPlan, pp: &PhysParams, rp: &RegParams, cg: CgSettings, strict: bool) -> Result<PicardOutcome> {
    let times = plan.times(state0.t);
    let mut iterate = vec![state0.u.clone(); times.len()];
    let mut distances = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut solves = SolveSummary::default();
    for _ in 0..plan.picard_max {
        let out = apply_map(&iterate, state0, plan, pp, rp, cg)?;
        solves.add(&out.solves);
        let d = trajectory_distance(&out.u, &iterate, &times);
        if !d.is_finite() {
            return Err(Error::NonFinite("Picard distance"));
        }
        if let Some(&prev) = distances.last() {
            ratios.push(if prev > 0.0 { d / prev } else { f64::INFINITY });
        }
        distances.push(d);
        let n = ratios.len();
        if strict && n >= 3 && ratios[n - 3..].iter().all(|&r| r > 1.0) {
            return Err(Error::NonContraction { ratios: [ratios[n - 3], ratios[n - 2], ratios[n - 1]] });
        }
        let done = d < plan.picard_tol;
        if done || distances.len() == plan.picard_max {
            if !done && strict {
                return Err(Error::PicardNotConverged { iterations: plan.picard_max, distance: d });
            }
            let states = out.u.into_iter().zip(out.h).zip(out.a).zip(&times).map(|(((u, h), a), &t)| State { u, h, a, t }).collect();
            return Ok(PicardOutcome { states, distances, ratios, converged: done, solves });
        }
        iterate = out.u;
    }
    unreachable!("picard_max >= 1 is validated")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MonitorMode {
    /// Collect violations and keep integrating.
    Record,
    /// Stop with [`Error::BoundViolation`] at the first violation.
    FailFast,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorPolicy {
    pub tol: f64,
    pub mode: MonitorMode,
}

impl Default for MonitorPolicy {
    fn default() -> Self {
        Self { tol: 1e-6, mode: MonitorMode::Record }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub t: f64,
    pub quantity: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl Violation {
    pub fn describe(&self) -> String {
        format!("{} = {:e} outside bound {:e}", self.quantity, self.value, self.bound)
    }
}

/// Pointwise and mass bounds guaranteed by the small-time conditions,
/// measured against the initial data of a run.
#[derive(Debug, Clone, Copy)]
struct Monitor {
    t0: f64,
    limits: TimeLimits,
    h_lo: f64,
    h_hi: f64,
    mass0: f64,
    policy: MonitorPolicy,
}

impl Monitor {
    fn new(s: &State, pp: &PhysParams, policy: MonitorPolicy) -> Self {
        Self { t0: s.t, limits: TimeLimits::for_state(s, pp), h_lo: s.h.min(), h_hi: s.h.max(), mass0: s.mass(), policy }
    }

    fn check(&self, s: &State, out: &mut Vec<Violation>) -> Result<()> {
        let elapsed = s.t - self.t0;
        let slack = 1e-12 * (1.0 + libm::fabs(self.t0));
        let tol = self.policy.tol;
        let mut found = Vec::new();
        if elapsed <= self.limits.t_h + slack {
            let (a_min, a_max, h_min, h_max) = (s.a.min(), s.a.max(), s.h.min(), s.h.max());
            if a_min < -tol {
                found.push(Violation { t: s.t, quantity: "A_min", value: a_min, bound: -tol });
            }
            if a_max > 1.0 + tol {
                found.push(Violation { t: s.t, quantity: "A_max", value: a_max, bound: 1.0 + tol });
            }
            if h_min < self.h_lo / 4.0 - tol {
                found.push(Violation { t: s.t, quantity: "h_min", value: h_min, bound: self.h_lo / 4.0 - tol });
            }
            if h_max > 4.0 * self.h_hi + tol {
                found.push(Violation { t: s.t, quantity: "h_max", value: h_max, bound: 4.0 * self.h_hi + tol });
            }
        }
        if elapsed <= self.limits.t_mass + slack {
            let m = s.mass();
            if m < 0.5 * self.mass0 {
                found.push(Violation { t: s.t, quantity: "mass_low", value: m, bound: 0.5 * self.mass0 });
            }
            if m > 2.0 * self.mass0 {
                found.push(Violation { t: s.t, quantity: "mass_high", value: m, bound: 2.0 * self.mass0 });
            }
        }
        if self.policy.mode == MonitorMode::FailFast {
            if let Some(v) = found.first() {
                return Err(Error::BoundViolation { t: v.t, what: v.describe() });
            }
        }
        out.extend(found);
        Ok(())
    }
}

/// Running `𝓔` and `𝔈` along a trajectory.
#[derive(Debug, Clone)]
pub struct EnergyAccumulator {
    eps: f64,
    sup_h3: f64,
    int_h4: f64,
    int_weighted: f64,
    last: Option<(f64, f64, f64)>,
}

impl EnergyAccumulator {
    pub fn new(eps: f64) -> Self {
        Self { eps, sup_h3: 0.0, int_h4: 0.0, int_weighted: 0.0, last: None }
    }

    /// Adds the next state (times must be nondecreasing) and returns the
    /// running `(𝓔, 𝔈)`.
    pub fn push(&mut self, s: &State) -> (f64, f64) {
        let h3 = norm_hk_sq(&s.u, 3) + norm_hk_sq(&s.h, 3) + norm_hk_sq(&s.a, 3);
        self.sup_h3 = self.sup_h3.max(h3);
        let h4 = norm_hk_sq(&s.u, 4);
        let w = weighted_integrand(&s.u, self.eps);
        if let Some((t, p4, pw)) = self.last {
            let dt = s.t - t;
            self.int_h4 += 0.5 * dt * (p4 + h4);
            self.int_weighted += 0.5 * dt * (pw + w);
        }
        self.last = Some((s.t, h4, w));
        self.values()
    }

    pub fn values(&self) -> (f64, f64) {
        (self.sup_h3 + self.int_h4, self.sup_h3 + self.int_weighted)
    }
}

/// `∫ |∇³D|²/(|D|²+ε²)^{3/2} + |∇³ div u|²/((div u)²+ε²)^{3/2}` with
/// `D = ∇u + ∇uᵀ`.
pub fn weighted_integrand(u: &VectorField, eps: f64) -> f64 {
    let d = sym_grad(u);
    let q = div(u);
    let e2 = eps * eps;
    let w_d = d.frobenius_sq().map(|v| libm::pow(v + e2, -1.5));
    let w_q = q.map(|v| libm::pow(v * v + e2, -1.5));
    let n_d = derivative_density(&d, 3);
    let n_q = derivative_density(&q, 3);
    (&(&n_d * &w_d) + &(&n_q * &w_q)).integral()
}

/// `𝓔 = sup_t ‖(u,h,A)‖²_{H³} + ∫ ‖u‖²_{H⁴} dt` (trapezoid in time).
pub fn energy_e(trajectory: &[State]) -> f64 {
    let mut acc = EnergyAccumulator::new(1.0);
    trajectory.iter().for_each(|s| {
        acc.push(s);
    });
    acc.values().0
}

/// `𝔈`, the ε-weighted counterpart of [`energy_e`].
pub fn energy_frak_e(trajectory: &[State], eps: f64) -> f64 {
    let mut acc = EnergyAccumulator::new(eps);
    trajectory.iter().for_each(|s| {
        acc.push(s);
    });
    acc.values().1
}

/// Computable constant `C` with `𝔈 ≤ C 𝓔`. Pointwise the weights are at most
/// `ε⁻³`, `|∇³D|² ≤ 4|∇⁴u|²` and `|∇³ div u|² ≤ 2|∇⁴u|²`.
pub fn frak_e_constant(eps: f64) -> f64 {
    (6.0 / (eps * eps * eps)).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagRecord {
    pub t: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub mass: f64,
    pub u_h3: f64,
    pub h_h3: f64,
    pub a_h3: f64,
    pub energy: f64,
    pub frak_energy: f64,
    /// Last contraction ratio of the slab the record belongs to (`NaN` at
    /// the initial time or when the slab converged in one iteration).
    pub picard_ratio: f64,
    pub picard_iterations: usize,
    pub cg_iterations: usize,
    pub cg_residual: f64,
    /// `exp(∫ ‖div u‖_∞)` from the start of the current slab.
    pub div_growth: f64,
}

impl DiagRecord {
    pub const COLUMNS: [&'static str; 16] = [
        "t", "h_min", "h_max", "a_min", "a_max", "mass", "u_h3", "h_h3", "a_h3", "energy", "frak_energy", "picard_ratio", "picard_iterations", "cg_iterations", "cg_residual", "div_growth",
    ];

    pub fn values(&self) -> [f64; 16] {
        [
            self.t,
            self.h_min,
            self.h_max,
            self.a_min,
            self.a_max,
            self.mass,
            self.u_h3,
            self.h_h3,
            self.a_h3,
            self.energy,
            self.frak_energy,
            self.picard_ratio,
            self.picard_iterations as f64,
            self.cg_iterations as f64,
            self.cg_residual,
            self.div_growth,
        ]
    }

    fn of(s: &State, energies: (f64, f64)) -> Self {
        Self {
            t: s.t,
            h_min: s.h.min(),
            h_max: s.h.max(),
            a_min: s.a.min(),
            a_max: s.a.max(),
            mass: s.mass(),
            u_h3: norm_hk(&s.u, 3),
            h_h3: norm_hk(&s.h, 3),
            a_h3: norm_hk(&s.a, 3),
            energy: energies.0,
            frak_energy: energies.1,
            picard_ratio: f64::NAN,
            picard_iterations: 0,
            cg_iterations: 0,
            cg_residual: 0.0,
            div_growth: 1.0,
        }
    }
}

/// Settings shared by all slabs of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub dt_cap: f64,
    /// Upper bound on slab length on top of the small-time limits.
    pub slab_cap: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub cfl: CflPolicy,
    pub cg: CgSettings,
    pub monitor: MonitorPolicy,
    /// How often a slab may be halved after a failed Picard solve.
    pub max_bisections: usize,
}

impl Default for RunPlan {
    fn default() -> Self {
        Self {
            dt_cap: 0.005,
            slab_cap: f64::INFINITY,
            picard_tol: 1e-8,
            picard_max: 50,
            cfl: CflPolicy::default(),
            cg: CgSettings::default(),
            monitor: MonitorPolicy::default(),
            max_bisections: 8,
        }
    }
}

impl RunPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_cap > 0.0 && self.dt_cap.is_finite()) {
            return Err(Error::InvalidParameter { name: "dt_cap", reason: format!("must be positive and finite, got {}", self.dt_cap) });
        }
        if !(self.slab_cap > 0.0) {
            return Err(Error::InvalidParameter { name: "slab_cap", reason: format!("must be positive, got {}", self.slab_cap) });
        }
        if !(self.monitor.tol >= 0.0) {
            return Err(Error::InvalidParameter { name: "monitor.tol", reason: format!("must be >= 0, got {}", self.monitor.tol) });
        }
        SlabPlan { t_slab: 1.0, dt: 1.0, picard_tol: self.picard_tol, picard_max: self.picard_max }.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlabSummary {
    pub t_start: f64,
    pub t_slab: f64,
    pub dt: f64,
    pub steps: usize,
    pub bisections: usize,
    pub ratios: Vec<f64>,
    pub distances: Vec<f64>,
    pub solves: SolveSummary,
    /// `exp(∫ ‖div u‖_∞)` over the slab; the pointwise bounds are derived
    /// under the assumption that it stays at most 2.
    pub div_growth: f64,
}

#[derive(Debug, Clone)]
pub struct IntegrateResult {
    pub states: Vec<State>,
    pub diagnostics: Vec<DiagRecord>,
    pub violations: Vec<Violation>,
    pub slabs: Vec<SlabSummary>,
}

impl IntegrateResult {
    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory is never empty")
    }
}

fn is_retryable(e: &Error) -> bool {
    matches!(e, Error::NonContraction { .. } | Error::PicardNotConverged { .. } | Error::CflViolation { .. } | Error::SolverNotConverged { .. })
}

/// Chooses the plan of the next slab: `dt = min(dt_cap, CFL step)`, and a
/// length of `min(T_h, T_mass, slab_cap)` rounded down to whole steps, or
/// the remaining time if that is shorter.
fn next_slab(state: &State, t_end: f64, plan: &RunPlan, pp: &PhysParams) -> SlabPlan {
    let remaining = t_end - state.t;
    let dt = plan.dt_cap.min(cfl_dt(&state.u, state.grid(), plan.cfl));
    let limit = TimeLimits::for_state(state, pp).min().min(plan.slab_cap);
    let (t_slab, dt) = if remaining <= limit {
        (remaining, dt.min(remaining))
    } else if limit >= dt {
        (libm::floor(limit / dt) * dt, dt)
    } else {
        (limit, limit)
    };
    SlabPlan { t_slab, dt, picard_tol: plan.picard_tol, picard_max: plan.picard_max }
}

/// Integrates from `state0` to `state0.t + t_total` by chaining Picard
/// slabs. A slab whose Picard solve fails (non-contraction, no
/// convergence, CFL or solver failure) is halved up to
/// `plan.max_bisections` times.
pub fn integrate(state0: &State, t_total: f64, plan: &RunPlan, pp: &PhysParams, rp: &RegParams) -> Result<IntegrateResult> {
    if !(t_total >= 0.0 && t_total.is_finite()) {
        return Err(Error::Precondition(format!("horizon must be finite and >= 0, got {t_total}")));
    }
    plan.validate()?;
    pp.validate()?;
    rp.validate()?;
    let min_h = state0.h.min();
    if !(min_h > 0.0) {
        return Err(Error::DegenerateMass { min_h });
    }

    let t_end = state0.t + t_total;
    let monitor = Monitor::new(state0, pp, plan.monitor);
    let mut energy = EnergyAccumulator::new(rp.eps);
    let mut violations = Vec::new();
    monitor.check(state0, &mut violations)?;
    let mut diagnostics = vec![DiagRecord::of(state0, energy.push(state0))];
    let mut states = vec![state0.clone()];
    let mut slabs = Vec::new();

    // Stop once the remaining time is at rounding level.
    let eps_t = 1e-12 * (1.0 + libm::fabs(t_end));
    while t_end - states.last().unwrap().t > eps_t {
        let current = states.last().unwrap().clone();
        let mut sp = next_slab(&current, t_end, plan, pp);
        let mut bisections = 0;
        let outcome = loop {
            match picard_solve(&current, &sp, pp, rp, plan.cg) {
                Ok(o) => break o,
                Err(e) if is_retryable(&e) && bisections < plan.max_bisections => {
                    bisections += 1;
                    let n = sp.step_sizes().len();
                    sp = if n > 1 { SlabPlan { t_slab: (n / 2) as f64 * sp.dt, ..sp } } else { SlabPlan { t_slab: sp.t_slab / 2.0, dt: sp.t_slab / 2.0, ..sp } };
                }
                Err(e) => return Err(e),
            }
        };

        let mut growth_int = 0.0;
        let last_ratio = outcome.last_ratio().unwrap_or(f64::NAN);
        let steps = sp.step_sizes();
        for (k, s) in outcome.states.iter().enumerate().skip(1) {
            growth_int += steps[k - 1] * norm_lp(&div(&outcome.states[k - 1].u), Lp::Inf);
            monitor.check(s, &mut violations)?;
            let mut rec = DiagRecord::of(s, energy.push(s));
            rec.picard_ratio = last_ratio;
            rec.picard_iterations = outcome.iterations();
            rec.cg_iterations = outcome.solves.max_iterations;
            rec.cg_residual = outcome.solves.max_residual;
            rec.div_growth = libm::exp(growth_int);
            diagnostics.push(rec);
        }
        slabs.push(SlabSummary {
            t_start: current.t,
            t_slab: sp.t_slab,
            dt: sp.dt,
            steps: steps.len(),
            bisections,
            ratios: outcome.ratios.clone(),
            distances: outcome.distances.clone(),
            solves: outcome.solves,
            div_growth: libm::exp(growth_int),
        });
        states.extend(outcome.states.into_iter().skip(1));
    }
    Ok(IntegrateResult { states, diagnostics, violations, slabs })
}

fn check_same_times(a: &[State], b: &[State]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| libm::fabs(x.t - y.t) > 1e-9 * (1.0 + libm::fabs(x.t))) {
        return Err(Error::Precondition("runs have different time grids; lower dt_cap so the CFL bound does not bind".into()));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ContinuationReport {
    pub schedule: Vec<RegParams>,
    /// `d_k = sup_t (‖u_k − u_{k+1}‖ + ‖h_k − h_{k+1}‖ + ‖A_k − A_{k+1}‖)`
    /// in `L²`, one entry per consecutive pair.
    pub diffs: Vec<f64>,
    pub final_states: Vec<State>,
}

/// Runs [`integrate`] for each entry of a monotone relaxation schedule and
/// measures the differences between consecutive runs.
pub fn param_continuation(state0: &State, t_total: f64, schedule: &[RegParams], pp: &PhysParams, plan: &RunPlan) -> Result<ContinuationReport> {
    let first = schedule.first().ok_or_else(|| Error::Precondition("empty continuation schedule".into()))?;
    for w in schedule.windows(2) {
        if w[1].eps != first.eps || w[1].omega != first.omega {
            return Err(Error::Precondition("eps and omega must be fixed along the schedule".into()));
        }
        if w[0].relaxation().iter().zip(w[1].relaxation()).any(|(a, b)| *a < b) {
            return Err(Error::Precondition("schedule must be componentwise nonincreasing in (mu, lambda, iota, nu)".into()));
        }
    }
    let mut diffs = Vec::new();
    let mut final_states = Vec::new();
    let mut prev: Option<Vec<State>> = None;
    for rp in schedule {
        let run = integrate(state0, t_total, plan, pp, rp)?.states;
        if let Some(p) = &prev {
            check_same_times(p, &run)?;
            let d = p.iter().zip(&run).map(|(x, y)| norm_lp(&(&x.u - &y.u), Lp::L2) + norm_lp(&(&x.h - &y.h), Lp::L2) + norm_lp(&(&x.a - &y.a), Lp::L2)).fold(0.0, f64::max);
            diffs.push(d);
        }
        final_states.push(run.last().unwrap().clone());
        prev = Some(run);
    }
    Ok(ContinuationReport { schedule: schedule.to_vec(), diffs, final_states })
}

/// Smooth perturbation directions for the stability experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub u: VectorField,
    pub h: ScalarField,
    pub a: ScalarField,
}

impl Perturbation {
    /// A fixed unit-amplitude trigonometric profile.
    pub fn standard(g: Grid) -> Self {
        use core::f64::consts::PI;
        let (kx, ky) = (2.0 * PI / g.lx(), 2.0 * PI / g.ly());
        Self {
            u: VectorField::from_fn(g, |x, y| [libm::cos(ky * y), libm::sin(kx * x)]),
            h: ScalarField::from_fn(g, |x, y| libm::sin(kx * x + ky * y)),
            a: ScalarField::from_fn(g, |x, y| libm::cos(kx * x) * libm::sin(ky * y)),
        }
    }

    pub fn zero(g: Grid) -> Self {
        Self { u: VectorField::zeros(g), h: ScalarField::zeros(g), a: ScalarField::zeros(g) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    pub delta: f64,
    /// `sup_t(‖δh,δA‖²_{L⁴} + ‖δu‖²_{L²}) + ∫‖δu‖²_{H²}`.
    pub numerator: f64,
    /// `‖δh_in,δA_in‖²_{L⁴} + ‖δu_in‖²_{L²}`.
    pub denominator: f64,
    /// `numerator / denominator`; exactly zero when the runs coincide.
    pub ratio: f64,
}

/// Perturbs the data by `delta` times the standard profile and compares the
/// perturbed run against the unperturbed one.
pub fn stability_experiment(state0: &State, delta: f64, t_total: f64, plan: &RunPlan, pp: &PhysParams, rp: &RegParams) -> Result<StabilityReport> {
    stability_with_profile(state0, &Perturbation::standard(state0.grid()), delta, t_total, plan, pp, rp)
}

/// `‖δh,δA‖_{L⁴}` is read as `‖δh‖_{L⁴} + ‖δA‖_{L⁴}`. The perturbed
/// compactness is clipped to `[0, 1]`; the actual initial differences enter
/// the denominator.
pub fn stability_with_profile(state0: &State, profile: &Perturbation, delta: f64, t_total: f64, plan: &RunPlan, pp: &PhysParams, rp: &RegParams) -> Result<StabilityReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Precondition(format!("perturbation size must be positive, got {delta}")));
    }
    let h_lo = state0.h.min();
    let mut h = state0.h.clone();
    h.axpy(delta, &profile.h);
    if h.min() < 0.5 * h_lo {
        return Err(Error::Precondition(format!("perturbed thickness {} drops below half the minimum {h_lo}", h.min())));
    }
    let a = state0.a.zip_map(&profile.a, |a, p| (a + delta * p).clamp(0.0, 1.0));
    let mut u = state0.u.clone();
    u.axpy(delta, &profile.u);
    let perturbed = State::new(u, h, a, state0.t)?;

    let base = integrate(state0, t_total, plan, pp, rp)?.states;
    let pert = integrate(&perturbed, t_total, plan, pp, rp)?.states;
    check_same_times(&base, &pert)?;

    let l4_pair = |x: &State, y: &State| norm_lp(&(&x.h - &y.h), Lp::L4) + norm_lp(&(&x.a - &y.a), Lp::L4);
    let denominator = {
        let s = l4_pair(&base[0], &pert[0]);
        s * s + libm::pow(norm_lp(&(&base[0].u - &pert[0].u), Lp::L2), 2.0)
    };
    let mut sup = 0.0f64;
    let mut integral = 0.0;
    let mut prev: Option<f64> = None;
    for (k, (x, y)) in base.iter().zip(&pert).enumerate() {
        let du = &x.u - &y.u;
        let s = l4_pair(x, y);
        let l2 = norm_lp(&du, Lp::L2);
        sup = sup.max(s * s + l2 * l2);
        let h2 = norm_hk_sq(&du, 2);
        if let Some(p) = prev {
            integral += 0.5 * (x.t - base[k - 1].t) * (p + h2);
        }
        prev = Some(h2);
    }
    let numerator = sup + integral;
    let ratio = if numerator == 0.0 {
        0.0
    } else if denominator > 0.0 {
        numerator / denominator
    } else {
        return Err(Error::Precondition("perturbation vanished after clipping but the runs differ".into()));
    };
    Ok(StabilityReport { delta, numerator, denominator, ratio })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionProbe {
    pub t_slab: f64,
    pub dt: f64,
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Set when the Picard iteration itself failed (for example a CFL
    /// violation by a diverging iterate).
    pub error: Option<String>,
}

impl ContractionProbe {
    /// True when three consecutive ratios are at most `bound`.
    pub fn contracts(&self, bound: f64) -> bool {
        self.error.is_none() && self.ratios.windows(3).any(|w| w.iter().all(|&r| r <= bound))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionStudy {
    pub probes: Vec<ContractionProbe>,
    /// First (longest) slab on which three consecutive ratios are ≤ 1/2.
    pub located: Option<f64>,
}

/// Halves the slab length starting from `t_slab0` until the Picard ratios
/// show contraction by 1/2, running `picard_max` iterations (or until the
/// distance drops below `picard_tol`) on each candidate. With
/// `exhaustive` every halving is probed even after a slab is located.
pub fn contraction_study(
    state0: &State,
    t_slab0: f64,
    dt: f64,
    picard_tol: f64,
    picard_max: usize,
    halvings: usize,
    exhaustive: bool,
    pp: &PhysParams,
    rp: &RegParams,
    cg: CgSettings,
) -> Result<ContractionStudy> {
    let mut probes = Vec::new();
    let mut located = None;
    let mut t_slab = t_slab0;
    for _ in 0..=halvings {
        let plan = SlabPlan::new(t_slab, dt.min(t_slab), picard_tol, picard_max)?;
        let probe = match picard_iterate(state0, &plan, pp, rp, cg, false) {
            Ok(o) => ContractionProbe { t_slab, dt: plan.dt, distances: o.distances, ratios: o.ratios, error: None },
            Err(e) if is_retryable(&e) => ContractionProbe { t_slab, dt: plan.dt, distances: Vec::new(), ratios: Vec::new(), error: Some(format!("{e}")) },
            Err(e) => return Err(e),
        };
        if located.is_none() && probe.contracts(0.5) {
            located = Some(t_slab);
        }
        probes.push(probe);
        if located.is_some() && !exhaustive {
            break;
        }
        t_slab *= 0.5;
    }
    Ok(ContractionStudy { probes, located })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum::momentum_residual;
    use crate::thermo::GrowthFn;
    use core::f64::consts::PI;

    fn standard_state(n: usize) -> State {
        let g = Grid::unit(n).unwrap();
        let s = |x: f64, y: f64| libm::sin(2.0 * PI * x) * libm::sin(2.0 * PI * y);
        State::new(
            VectorField::from_fn(g, |x, y| [0.05 * libm::sin(2.0 * PI * y), 0.05 * libm::sin(2.0 * PI * x)]),
            ScalarField::from_fn(g, |x, y| 1.0 + 0.3 * s(x, y)),
            ScalarField::from_fn(g, |x, y| 0.5 + 0.3 * s(x, y)),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn small_time_limit_examples() {
        let l = small_time_limits(0.6, 1.4, -1.0, 1.0, 1.0, 1.0);
        assert!((l.t_h - 0.05).abs() < 1e-15);
        assert!((l.t_mass - 1.0 / 12.0).abs() < 1e-15);
        let z = small_time_limits(0.6, 1.4, 0.0, 0.0, 1.0, 1.0);
        assert!(z.t_h.is_infinite() && z.t_mass.is_infinite());
        let d = small_time_limits(0.0, 1.2, -1.0, 1.0, 1.0, 1.0);
        assert!((d.t_h - 0.2).abs() < 1e-15);
    }

    #[test]
    fn step_sizes_cover_the_slab() {
        let p = SlabPlan::new(0.05, 0.005, 1e-8, 10).unwrap();
        assert_eq!(p.step_sizes(), vec![0.005; 10]);
        let q = SlabPlan::new(0.012, 0.005, 1e-8, 10).unwrap();
        let s = q.step_sizes();
        assert_eq!(s.len(), 3);
        assert!((s.iter().sum::<f64>() - 0.012).abs() < 1e-15);
        assert!(SlabPlan::new(0.001, 0.005, 1e-8, 10).is_err());
        assert!(SlabPlan::new(0.01, 0.005, 0.0, 10).is_err());
    }

    #[test]
    fn zero_dynamics_converge_in_one_iteration() {
        let g = Grid::unit(8).unwrap();
        let pp = PhysParams { growth: GrowthFn::constant(0.0), drag_air: 0.0, drag_water: 0.0, current: [0.0; 2], ..Default::default() };
        let s0 = State::new(VectorField::zeros(g), ScalarField::constant(g, 1.0), ScalarField::constant(g, 0.5), 0.0).unwrap();
        let plan = SlabPlan::new(0.02, 0.005, 1e-10, 5).unwrap();
        let o = picard_solve(&s0, &plan, &pp, &RegParams::default(), CgSettings::default()).unwrap();
        assert_eq!(o.iterations(), 1);
        assert_eq!(o.distances[0], 0.0);
        for s in &o.states {
            assert_eq!(norm_lp(&s.u, Lp::Inf), 0.0);
        }
    }

    #[test]
    fn single_step_slab_moves_velocity_by_order_dt() {
        let s0 = standard_state(16);
        let (pp, rp) = (PhysParams::default(), RegParams::default());
        let mut prev = f64::INFINITY;
        for dt in [4e-3, 2e-3, 1e-3] {
            let plan = SlabPlan::new(dt, dt, 1e-9, 30).unwrap();
            let o = picard_solve(&s0, &plan, &pp, &rp, CgSettings::default()).unwrap();
            let change = norm_lp(&(&o.states[1].u - &s0.u), Lp::L2);
            assert!(change < prev * 0.6, "{change} vs {prev}");
            prev = change;
        }
    }

    /// Classical RK4 with step refinement until two consecutive answers
    /// agree, for the spatially homogeneous source system.
    fn ode_oracle(h0: f64, a0: f64, t: f64, rp: &RegParams, pp: &PhysParams) -> (f64, f64) {
        let f0 = pp.growth.eval(0.0);
        let rhs = |h: f64, a: f64| {
            let sh = crate::thermo::src_h_point(h, a, rp.omega, rp.nu, &pp.growth);
            let (op, melt) = crate::thermo::src_a_parts(h, a, rp.omega, rp.nu, f0, pp.h0, sh);
            (sh, op + melt)
        };
        let solve = |n: usize| {
            let dt = t / n as f64;
            let (mut h, mut a) = (h0, a0);
            for _ in 0..n {
                let k1 = rhs(h, a);
                let k2 = rhs(h + 0.5 * dt * k1.0, a + 0.5 * dt * k1.1);
                let k3 = rhs(h + 0.5 * dt * k2.0, a + 0.5 * dt * k2.1);
                let k4 = rhs(h + dt * k3.0, a + dt * k3.1);
                h += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
                a += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            }
            (h, a)
        };
        let mut n = 16;
        let mut last = solve(n);
        loop {
            n *= 2;
            let next = solve(n);
            if (next.0 - last.0).abs() < 1e-14 && (next.1 - last.1).abs() < 1e-14 {
                return next;
            }
            last = next;
        }
    }

    #[test]
    fn frozen_rest_reduces_to_source_odes() {
        let g = Grid::unit(8).unwrap();
        let (pp, rp) = (PhysParams::default(), RegParams::default());
        let s0 = State::new(VectorField::zeros(g), ScalarField::constant(g, 0.8), ScalarField::constant(g, 0.6), 0.0).unwrap();
        let t = 0.04;
        let oracle = ode_oracle(0.8, 0.6, t, &rp, &pp);
        let mut errs = Vec::new();
        for n in [8usize, 16, 32] {
            let plan = SlabPlan::new(t, t / n as f64, 1e-8, 1).unwrap();
            let out = apply_map(&vec![VectorField::zeros(g); n + 1], &s0, &plan, &pp, &rp, CgSettings::default()).unwrap();
            let (h, a) = (out.h.last().unwrap(), out.a.last().unwrap());
            assert!(h.max() - h.min() < 1e-14 && a.max() - a.min() < 1e-14);
            errs.push((h.values()[0] - oracle.0).abs() + (a.values()[0] - oracle.1).abs());
        }
        // forward Euler: first order
        assert!(errs[0] < 1e-3);
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((0.8..1.3).contains(&order), "{errs:?}");
        }
    }

    #[test]
    fn slab_exceeding_small_time_limit_is_rejected() {
        let s0 = standard_state(8);
        let pp = PhysParams::default();
        let lim = TimeLimits::for_state(&s0, &pp).min();
        let plan = SlabPlan::new(2.0 * lim, lim / 4.0, 1e-8, 3).unwrap();
        let n = plan.step_sizes().len();
        let r = apply_map(&vec![s0.u.clone(); n + 1], &s0, &plan, &pp, &RegParams::default(), CgSettings::default());
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn picard_fixed_point_satisfies_the_momentum_equation() {
        let s0 = standard_state(16);
        let (pp, rp) = (PhysParams::default(), RegParams::default());
        let tol = 1e-9;
        let plan = SlabPlan::new(0.02, 0.005, tol, 40).unwrap();
        let o = picard_solve(&s0, &plan, &pp, &rp, CgSettings::default()).unwrap();
        assert!(o.converged);
        let steps = plan.step_sizes();
        for n in 0..steps.len() {
            let (a, b) = (&o.states[n], &o.states[n + 1]);
            let r = momentum_residual(&b.u, &a.u, &b.h, &b.a, &pp, &rp, steps[n]);
            assert!(norm_lp(&r, Lp::L2) <= 10.0 * tol, "step {n}: {}", norm_lp(&r, Lp::L2));
        }
    }

    #[test]
    fn integrate_zero_horizon() {
        let s0 = standard_state(8);
        let r = integrate(&s0, 0.0, &RunPlan::default(), &PhysParams::default(), &RegParams::default()).unwrap();
        assert_eq!(r.states.len(), 1);
        assert_eq!(r.diagnostics.len(), 1);
        assert_eq!(r.states[0], s0);
    }

    #[test]
    fn integrate_is_deterministic_and_markovian() {
        let s0 = standard_state(16);
        let (pp, rp) = (PhysParams::default(), RegParams::default());
        let plan = RunPlan { slab_cap: 0.02, ..Default::default() };
        let full = integrate(&s0, 0.05, &plan, &pp, &rp).unwrap();
        let again = integrate(&s0, 0.05, &plan, &pp, &rp).unwrap();
        let bits = |r: &IntegrateResult| r.diagnostics.iter().flat_map(|d| d.values().map(f64::to_bits)).collect::<Vec<_>>();
        assert_eq!(bits(&full), bits(&again));
        assert!(full.slabs.len() >= 2);

        let t1 = full.slabs[1].t_start;
        let first = integrate(&s0, t1, &plan, &pp, &rp).unwrap();
        let mid = first.final_state().clone();
        let second = integrate(&mid, 0.05 - t1, &plan, &pp, &rp).unwrap();
        assert_eq!(second.final_state(), full.final_state());
    }

    #[test]
    fn integrate_respects_bounds_and_records_diagnostics() {
        let s0 = standard_state(16);
        let pp = PhysParams::default();
        let plan = RunPlan { monitor: MonitorPolicy { tol: 1e-6, mode: MonitorMode::FailFast }, ..Default::default() };
        let t = TimeLimits::for_state(&s0, &pp).min();
        let r = integrate(&s0, t, &plan, &pp, &RegParams::default()).unwrap();
        assert!(r.violations.is_empty());
        assert_eq!(r.diagnostics.len(), r.states.len());
        assert!((r.final_state().t - t).abs() < 1e-12);
        for d in &r.diagnostics {
            assert!(d.mass > 0.0 && d.u_h3 >= 0.0 && d.energy >= 0.0);
            assert!(d.frak_energy <= frak_e_constant(0.1) * d.energy * (1.0 + 1e-12));
        }
    }

    #[test]
    fn energy_of_single_mode_matches_closed_form() {
        let n = 16;
        let g = Grid::unit(n).unwrap();
        let u = VectorField::from_fn(g, |x, _| [libm::sin(2.0 * PI * x), 0.0]);
        let z = ScalarField::zeros(g);
        let traj: Vec<State> = (0..=4).map(|k| State::new(u.clone(), z.clone(), z.clone(), k as f64 * 0.25).unwrap()).collect();
        let dx = 1.0 / n as f64;
        let s = libm::sin(2.0 * PI * dx) / dx;
        let h = |k: i32| (0..=k).map(|m| 0.5 * s.powi(2 * m)).sum::<f64>();
        let expected = h(3) + h(4);
        let e = energy_e(&traj);
        assert!((e - expected).abs() < 1e-10 * expected, "{e} vs {expected}");
        assert_eq!(energy_e(&[State::new(VectorField::zeros(g), z.clone(), z.clone(), 0.0).unwrap()]), 0.0);
        let fe = energy_frak_e(&traj, 0.5);
        assert!(fe <= frak_e_constant(0.5) * e);
    }

    #[test]
    fn identical_schedule_gives_zero_differences() {
        let s0 = standard_state(8);
        let rp = RegParams::default();
        let rep = param_continuation(&s0, 0.01, &[rp, rp, rp], &PhysParams::default(), &RunPlan::default()).unwrap();
        assert_eq!(rep.diffs, vec![0.0, 0.0]);
        let bad = param_continuation(&s0, 0.01, &[rp, rp.scaled_relaxation(2.0)], &PhysParams::default(), &RunPlan::default());
        assert!(bad.is_err());
    }

    #[test]
    fn stability_twin_and_degenerate_delta() {
        let s0 = standard_state(8);
        let (pp, rp, plan) = (PhysParams::default(), RegParams::default(), RunPlan::default());
        let twin = stability_with_profile(&s0, &Perturbation::zero(s0.grid()), 1.0, 0.01, &plan, &pp, &rp).unwrap();
        assert_eq!(twin.ratio, 0.0);
        assert!(stability_experiment(&s0, 0.0, 0.01, &plan, &pp, &rp).is_err());
    }
}
