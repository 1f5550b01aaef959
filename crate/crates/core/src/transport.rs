//! Donor-cell upwind steps for the thickness and compactness equations.
//!
//! Face velocities are arithmetic means of the neighbouring cell values.
//! The divergence of the face velocities,
//! `(u_{i+½} − u_{i−½}) / dx = (u_{i+1} − u_{i−1}) / (2 dx)`,
//! coincides with the centered cell divergence, so the compactness reaction
//! `A div u χ` uses the same divergence the flux sees. Where `χ = 1` the
//! reaction cancels the compression part of the flux and the update is a
//! convex combination of neighbours.
//!
//! Sources and reactions are forward Euler at the start-of-step state.
//! Nothing is clamped; bound violations are left for the driver to report.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField, VectorField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflPolicy {
    cfl_number: f64,
}

impl CflPolicy {
    pub fn new(cfl_number: f64) -> Result<Self> {
        if !(cfl_number > 0.0 && cfl_number <= 1.0) {
            return Err(Error::InvalidParameter { name: "cfl_number", reason: alloc::format!("must lie in (0, 1], got {cfl_number}") });
        }
        Ok(Self { cfl_number })
    }

    pub fn cfl_number(&self) -> f64 {
        self.cfl_number
    }
}

impl Default for CflPolicy {
    fn default() -> Self {
        Self { cfl_number: 0.4 }
    }
}

/// `max|u_x|/dx + max|u_y|/dy`; zero for a resting field.
pub fn courant_rate(u: &VectorField) -> f64 {
    let g = u.grid();
    let mx = u.x.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let my = u.y.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    mx / g.dx() + my / g.dy()
}

/// `cfl_number / (max|u_x|/dx + max|u_y|/dy)`; `+∞` when `u ≡ 0`, in which
/// case the caller's cap applies.
pub fn cfl_dt(u: &VectorField, grid: Grid, pol: CflPolicy) -> f64 {
    debug_assert_eq!(u.grid(), grid);
    let rate = courant_rate(u);
    if rate == 0.0 {
        f64::INFINITY
    } else {
        pol.cfl_number / rate
    }
}

fn check_cfl(u: &VectorField, dt: f64) -> Result<()> {
    let rate = courant_rate(u);
    // Courant number one is the positivity limit of the donor-cell update.
    if !(dt > 0.0) || dt * rate > 1.0 + 1e-12 {
        return Err(Error::CflViolation { dt, limit: if rate > 0.0 { 1.0 / rate } else { f64::INFINITY } });
    }
    Ok(())
}

/// Upwind flux divergence `div(q u)` and, alongside it, the face-velocity
/// divergence of `u`.
fn upwind_divergence(q: &ScalarField, u: &VectorField) -> (Vec<f64>, Vec<f64>) {
    let g = q.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let (idx, idy) = (1.0 / g.dx(), 1.0 / g.dy());
    let qv = q.values();
    let (ux, uy) = (u.x.values(), u.y.values());
    let mut flux_div = vec![0.0; g.len()];
    let mut vel_div = vec![0.0; g.len()];

    // x faces: face k sits between cells (i, j) and (i+1, j)
    let mut face_flux = vec![0.0; nx];
    let mut face_vel = vec![0.0; nx];
    for j in 0..ny {
        let r = j * nx;
        for i in 0..nx {
            let e = if i + 1 == nx { 0 } else { i + 1 };
            let uf = 0.5 * (ux[r + i] + ux[r + e]);
            face_vel[i] = uf;
            face_flux[i] = if uf > 0.0 { uf * qv[r + i] } else { uf * qv[r + e] };
        }
        for i in 0..nx {
            let w = if i == 0 { nx - 1 } else { i - 1 };
            flux_div[r + i] = (face_flux[i] - face_flux[w]) * idx;
            vel_div[r + i] = (face_vel[i] - face_vel[w]) * idx;
        }
    }

    // y faces: face between (i, j) and (i, j+1)
    let mut face_flux = vec![0.0; g.len()];
    let mut face_vel = vec![0.0; g.len()];
    for j in 0..ny {
        let n = if j + 1 == ny { 0 } else { j + 1 };
        for i in 0..nx {
            let (c, t) = (j * nx + i, n * nx + i);
            let vf = 0.5 * (uy[c] + uy[t]);
            face_vel[c] = vf;
            face_flux[c] = if vf > 0.0 { vf * qv[c] } else { vf * qv[t] };
        }
    }
    for j in 0..ny {
        let s = if j == 0 { ny - 1 } else { j - 1 };
        for i in 0..nx {
            let (c, b) = (j * nx + i, s * nx + i);
            flux_div[c] += (face_flux[c] - face_flux[b]) * idy;
            vel_div[c] += (face_vel[c] - face_vel[b]) * idy;
        }
    }
    (flux_div, vel_div)
}

/// One step of `∂t h + div(h u) = src`.
pub fn step_h(h: &ScalarField, u: &VectorField, src: &ScalarField, dt: f64) -> Result<ScalarField> {
    check_cfl(u, dt)?;
    let (fd, _) = upwind_divergence(h, u);
    let mut out = h.clone();
    for ((o, f), s) in out.values_mut().iter_mut().zip(&fd).zip(src.values()) {
        *o += dt * (s - f);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("thickness step"));
    }
    Ok(out)
}

/// One step of `∂t A + div(A u) = src + A div u · χ`.
pub fn step_a(a: &ScalarField, u: &VectorField, src: &ScalarField, chi: &ScalarField, dt: f64) -> Result<ScalarField> {
    check_cfl(u, dt)?;
    let (fd, vd) = upwind_divergence(a, u);
    let mut out = a.clone();
    let (av, sv, cv) = (a.values(), src.values(), chi.values());
    for (k, o) in out.values_mut().iter_mut().enumerate() {
        *o += dt * (sv[k] + av[k] * vd[k] * cv[k] - fd[k]);
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("compactness step"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::div;
    use core::f64::consts::PI;

    #[test]
    fn cfl_examples() {
        let g = Grid::new(10, 10, 1.0, 1.0).unwrap();
        assert_eq!(cfl_dt(&VectorField::zeros(g), g, CflPolicy::default()), f64::INFINITY);
        let u = VectorField::from_fn(g, |x, _| [(2.0 * PI * x).sin().signum(), 0.0]);
        assert!((cfl_dt(&u, g, CflPolicy::default()) - 0.04).abs() < 1e-15);
        let g2 = Grid::new(20, 10, 1.0, 1.0).unwrap();
        let u2 = VectorField::from_fn(g2, |x, _| [(2.0 * PI * x).sin().signum(), 0.0]);
        assert!((cfl_dt(&u2, g2, CflPolicy::default()) - 0.02).abs() < 1e-15);
        assert!(CflPolicy::new(0.0).is_err() && CflPolicy::new(1.5).is_err());
    }

    #[test]
    fn rest_leaves_fields_unchanged() {
        let g = Grid::unit(8).unwrap();
        let h = ScalarField::from_fn(g, |x, y| 1.0 + x * y);
        let z = ScalarField::zeros(g);
        let u = VectorField::zeros(g);
        assert_eq!(step_h(&h, &u, &z, 0.1).unwrap(), h);
        assert_eq!(step_a(&h, &u, &z, &ScalarField::constant(g, 0.3), 0.1).unwrap(), h);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = Grid::unit(8).unwrap();
        let u = VectorField::constant(g, [1.0, 1.0]);
        let h = ScalarField::constant(g, 1.0);
        let z = ScalarField::zeros(g);
        assert!(matches!(step_h(&h, &u, &z, 0.1), Err(Error::CflViolation { .. })));
        assert!(step_h(&h, &u, &z, 0.05).is_ok());
    }

    #[test]
    fn face_divergence_equals_centered_divergence() {
        let g = Grid::new(9, 7, 1.0, 1.3).unwrap();
        let u = VectorField::from_fn(g, |x, y| [(2.0 * PI * x).sin() * y, (2.0 * PI * y / 1.3).cos() + x]);
        let (_, vd) = upwind_divergence(&ScalarField::constant(g, 1.0), &u);
        let c = div(&u);
        for (a, b) in vd.iter().zip(c.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_compactness_is_preserved_under_compression() {
        let g = Grid::unit(64).unwrap();
        // converging flow: div u < 0 around x = 0.5
        let u = VectorField::from_fn(g, |x, y| [-0.3 * (2.0 * PI * x).sin(), -0.2 * (2.0 * PI * y).sin()]);
        let a = ScalarField::constant(g, 1.0);
        let chi = crate::thermo::chi_a(&a, 0.1);
        let dt = cfl_dt(&u, g, CflPolicy::default());
        let mut cur = a;
        for _ in 0..20 {
            cur = step_a(&cur, &u, &ScalarField::zeros(g), &chi, dt).unwrap();
            assert!(cur.max() - 1.0 <= 1e-8);
        }
    }
}
