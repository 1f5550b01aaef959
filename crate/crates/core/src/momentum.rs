//! Semi-implicit momentum step with lagged plastic viscosities.
//!
//! The regularized plastic stress is written as `S_ε = a D + b (div u) 𝕀₂`
//! with `a = p/√(|D|²+ε²)`, `b = p/√((div u)²+ε²)`. The coefficients are
//! frozen at the Picard input velocity `u°` while `D` and `div u` are taken
//! implicitly, which gives the linear operator
//!
//! ```text
//! L v = (ρ h / dt) v + ι Δ² v − div((a + μ) D v) − ∇((b + λ) div v)
//! ```
//!
//! Every piece is built from the skew-adjoint centered differences (and the
//! symmetric compact Laplacian), so `L` is self-adjoint and, with a positive
//! mass coefficient, positive definite in the grid inner product.

use crate::error::{Error, Result};
use crate::grid::{biharmonic, div, grad, grad_vector, sym_grad, ScalarField, TensorField, VectorField};
use crate::rheology::{pressure, stress_divergence, stress_newtonian, stress_vp, vp_coefficients, PhysParams, RegParams};
use crate::thermo::total_forcing;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSolveReport {
    pub iterations: usize,
    /// Final relative residual `‖rhs − L x‖ / ‖rhs‖` (recursive estimate).
    pub residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgSettings {
    pub tol_rel: f64,
    /// Defaults to `10 √(nx ny)` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for CgSettings {
    fn default() -> Self {
        Self { tol_rel: 1e-12, max_iter: None }
    }
}

impl CgSettings {
    pub fn max_iter_for(&self, n_cells: usize) -> usize {
        self.max_iter.unwrap_or_else(|| libm::ceil(10.0 * libm::sqrt(n_cells as f64)) as usize)
    }
}

#[derive(Debug, Clone)]
pub struct MomentumOperator {
    mass: ScalarField,
    a: ScalarField,
    b: ScalarField,
    mu: f64,
    lambda: f64,
    iota: f64,
    shear: ScalarField,
    bulk: ScalarField,
}

impl MomentumOperator {
    /// `mass` is the coefficient `ρ h / dt`; `a`, `b` the lagged plastic
    /// viscosities.
    pub fn new(mass: ScalarField, a: ScalarField, b: ScalarField, mu: f64, lambda: f64, iota: f64) -> Result<Self> {
        let min_mass = mass.min();
        if !(min_mass > 0.0) {
            return Err(Error::DegenerateMass { min_h: min_mass });
        }
        if !(a.min() >= 0.0 && b.min() >= 0.0 && mu >= 0.0 && lambda >= 0.0 && iota >= 0.0) {
            return Err(Error::Precondition("viscosity coefficients must be nonnegative".into()));
        }
        let shear = a.map(|v| v + mu);
        let bulk = b.map(|v| v + lambda);
        Ok(Self { mass, a, b, mu, lambda, iota, shear, bulk })
    }

    /// Operator linearized about `u_o`, for ice thickness `h` and pressure `p`.
    pub fn lagged(h: &ScalarField, p: &ScalarField, u_o: &VectorField, pp: &PhysParams, rp: &RegParams, dt: f64) -> Result<Self> {
        let min_h = h.min();
        if !(min_h > 0.0) {
            return Err(Error::DegenerateMass { min_h });
        }
        if !(dt > 0.0) {
            return Err(Error::Precondition(alloc::format!("dt must be positive, got {dt}")));
        }
        let (a, b) = vp_coefficients(p, &sym_grad(u_o), &div(u_o), rp.eps);
        Self::new(h.scale(pp.rho_ice / dt), a, b, rp.mu, rp.lambda, rp.iota)
    }

    pub fn mass(&self) -> &ScalarField {
        &self.mass
    }
    pub fn a(&self) -> &ScalarField {
        &self.a
    }
    pub fn b(&self) -> &ScalarField {
        &self.b
    }
    pub fn newtonian(&self) -> (f64, f64) {
        (self.mu, self.lambda)
    }
    pub fn iota(&self) -> f64 {
        self.iota
    }

    /// Everything but the mass term.
    pub fn apply_viscous(&self, v: &VectorField) -> VectorField {
        let d = sym_grad(v);
        let q = &self.bulk * &div(v);
        let mut out = -&stress_divergence(&d.scale_by(&self.shear));
        out.axpy(-1.0, &grad(&q));
        if self.iota != 0.0 {
            out.axpy(self.iota, &biharmonic(v));
        }
        out
    }

    pub fn apply(&self, v: &VectorField) -> VectorField {
        let mut out = self.apply_viscous(v);
        out.axpy(1.0, &v.scale_by(&self.mass));
        out
    }

    /// Exact diagonal of the assembled operator, per component.
    pub fn diagonal(&self) -> VectorField {
        let g = self.mass.grid();
        let (nx, ny) = (g.nx(), g.ny());
        let (dx2, dy2) = (g.dx() * g.dx(), g.dy() * g.dy());
        let bi = {
            let c = 2.0 / dx2 + 2.0 / dy2;
            self.iota * (c * c + 2.0 / (dx2 * dx2) + 2.0 / (dy2 * dy2))
        };
        let (c, d) = (self.shear.values(), self.bulk.values());
        let mut out = VectorField::zeros(g);
        for j in 0..ny {
            let n = (j + 1) % ny;
            let s = (j + ny - 1) % ny;
            for i in 0..nx {
                let e = (i + 1) % nx;
                let w = (i + nx - 1) % nx;
                let k = g.index(i, j);
                let (ce, cw, cn, cs) = (c[g.index(e, j)], c[g.index(w, j)], c[g.index(i, n)], c[g.index(i, s)]);
                let (de, dw, dn, ds) = (d[g.index(e, j)], d[g.index(w, j)], d[g.index(i, n)], d[g.index(i, s)]);
                let base = self.mass.values()[k] + bi;
                out.x.values_mut()[k] = base + (ce + cw) / (2.0 * dx2) + (cn + cs) / (4.0 * dy2) + (de + dw) / (4.0 * dx2);
                out.y.values_mut()[k] = base + (ce + cw) / (4.0 * dx2) + (cn + cs) / (2.0 * dy2) + (dn + ds) / (4.0 * dy2);
            }
        }
        out
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn cg_solve(op: &MomentumOperator, rhs: &VectorField, settings: CgSettings) -> Result<(VectorField, LinearSolveReport)> {
    cg_solve_from(op, rhs, &VectorField::zeros(rhs.grid()), settings)
}

/// Jacobi-preconditioned conjugate gradients from the guess `x0`; stops when
/// `‖rhs − L x‖ ≤ tol_rel ‖rhs‖`.
pub fn cg_solve_from(op: &MomentumOperator, rhs: &VectorField, x0: &VectorField, settings: CgSettings) -> Result<(VectorField, LinearSolveReport)> {
    if !(settings.tol_rel > 0.0) {
        return Err(Error::Precondition(alloc::format!("tol_rel must be positive, got {}", settings.tol_rel)));
    }
    let rhs_norm = libm::sqrt(rhs.inner(rhs));
    if rhs_norm == 0.0 {
        return Ok((VectorField::zeros(rhs.grid()), LinearSolveReport { iterations: 0, residual: 0.0, converged: true }));
    }
    let max_iter = settings.max_iter_for(rhs.grid().len());
    let inv_diag = op.diagonal();
    let inv_diag = VectorField::new(inv_diag.x.map(|v| 1.0 / v), inv_diag.y.map(|v| 1.0 / v));
    let target = settings.tol_rel * rhs_norm;

    let mut x = x0.clone();
    let mut r = rhs - &op.apply(&x);
    let mut r_norm = libm::sqrt(r.inner(&r));
    if r_norm <= target {
        return Ok((x, LinearSolveReport { iterations: 0, residual: r_norm / rhs_norm, converged: true }));
    }
    let mut z = VectorField::new(&r.x * &inv_diag.x, &r.y * &inv_diag.y);
    let mut p = z.clone();
    let mut rz = r.inner(&z);
    for it in 1..=max_iter {
        let q = op.apply(&p);
        let pq = p.inner(&q);
        if !(pq > 0.0) {
            return Err(Error::Precondition(alloc::format!("operator not positive definite (p·Lp = {pq:e})")));
        }
        let alpha = rz / pq;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &q);
        r_norm = libm::sqrt(r.inner(&r));
        if r_norm <= target {
            return Ok((x, LinearSolveReport { iterations: it, residual: r_norm / rhs_norm, converged: true }));
        }
        z = VectorField::new(&r.x * &inv_diag.x, &r.y * &inv_diag.y);
        let rz_new = r.inner(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = {
            let mut np = z.clone();
            np.axpy(beta, &p);
            np
        };
    }
    Err(Error::SolverNotConverged { iterations: max_iter, residual: r_norm / rhs_norm })
}

/// The explicit part of the momentum step: everything on the right-hand
/// side except the mass term `(ρ h/dt) u_prev`.
fn explicit_forces(u_o: &VectorField, h: &ScalarField, p: &ScalarField, op: &MomentumOperator, pp: &PhysParams, rp: &RegParams) -> VectorField {
    let d_o = sym_grad(u_o);
    let div_o = div(u_o);
    // S_ε(p, ∇u°) − a D u° − b div u° 𝕀₂; identically zero up to rounding
    // because a and b are the coefficients of S_ε at u°.
    let s = stress_vp(p, &grad_vector(u_o), &div_o, rp.eps);
    let lagged = {
        let mut t = d_o.scale_by(op.a());
        let bq = op.b() * &div_o;
        t.xx = &t.xx + &bq;
        t.yy = &t.yy + &bq;
        t
    };
    let mut f = stress_divergence(&(&s - &lagged));
    f.axpy(-pp.rho_ice, &u_o.advected_by(u_o).scale_by(h));
    f.axpy(-1.0, &grad(p));
    f.axpy(1.0, &total_forcing(u_o, h, pp));
    f
}

/// One step of the linearized momentum equation.
///
/// Solves `L(u°) u = (ρ h/dt) u_prev − ρ h (u°·∇)u° − ∇p + 𝓕(u°) + correction`
/// where `h`, `A` (hence `p`) are the transported fields at the new time
/// level and `u°` the Picard input velocity at the same level. At a Picard
/// fixed point `u = u°` this is a backward-Euler step of the full momentum
/// equation. The input velocity is used as the initial CG guess.
pub fn momentum_step(
    u_prev: &VectorField,
    u_o: &VectorField,
    h: &ScalarField,
    a: &ScalarField,
    pp: &PhysParams,
    rp: &RegParams,
    dt: f64,
    cg: CgSettings,
) -> Result<(VectorField, LinearSolveReport)> {
    let p = pressure(h, a, pp);
    let op = MomentumOperator::lagged(h, &p, u_o, pp, rp, dt)?;
    let mut rhs = u_prev.scale_by(op.mass());
    rhs.axpy(1.0, &explicit_forces(u_o, h, &p, &op, pp, rp));
    if !rhs.is_finite() {
        return Err(Error::NonFinite("momentum right-hand side"));
    }
    cg_solve_from(&op, &rhs, u_o, cg)
}

/// Residual of the fully nonlinear backward-Euler momentum equation
///
/// ```text
/// ρh (u − u_prev)/dt + ρh (u·∇)u + ∇p − div S_ε(p, ∇u) − div S_{μ,λ}(u) + ι Δ²u − 𝓕(u)
/// ```
///
/// scaled by `dt / (ρ h)` so that it is measured in velocity units.
pub fn momentum_residual(u: &VectorField, u_prev: &VectorField, h: &ScalarField, a: &ScalarField, pp: &PhysParams, rp: &RegParams, dt: f64) -> VectorField {
    let p = pressure(h, a, pp);
    let gu = grad_vector(u);
    let divu = div(u);
    let stress: TensorField = &stress_vp(&p, &gu, &divu, rp.eps) + &stress_newtonian(&gu, &divu, rp.mu, rp.lambda);
    let m = h.scale(pp.rho_ice);
    let mut r = (u - u_prev).scale_by(&m).scale(1.0 / dt);
    r.axpy(1.0, &u.advected_by(u).scale_by(&m));
    r.axpy(1.0, &grad(&p));
    r.axpy(-1.0, &stress_divergence(&stress));
    if rp.iota != 0.0 {
        r.axpy(rp.iota, &biharmonic(u));
    }
    r.axpy(-1.0, &total_forcing(u, h, pp));
    let w = m.map(|m| dt / m);
    r.scale_by(&w)
}
