//! Ice pressure and stress laws.
//!
//! `|·|` on matrices is the Frobenius norm throughout; with it the
//! monotonicity identity of the regularized stress holds verbatim.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TensorField, VectorField};
use crate::thermo::GrowthFn;

/// Regularization parameters.
///
/// `eps` smooths the plastic stress, `omega` the compactness indicator and the
/// negative part in the compactness source. `mu`, `lambda` (Newtonian
/// viscosities), `iota` (biharmonic damping) and `nu` (source smoothing) are
/// the relaxation parameters; setting all four to zero selects the
/// ε/ω-regularized target system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegParams {
    pub eps: f64,
    pub omega: f64,
    pub mu: f64,
    pub lambda: f64,
    pub iota: f64,
    pub nu: f64,
}

impl RegParams {
    pub fn validate(&self) -> Result<()> {
        positive("eps", self.eps)?;
        positive("omega", self.omega)?;
        for (name, v) in [("mu", self.mu), ("lambda", self.lambda), ("iota", self.iota), ("nu", self.nu)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter { name, reason: alloc::format!("must be finite and >= 0, got {v}") });
            }
        }
        Ok(())
    }

    /// The relaxation parameters `(mu, lambda, iota, nu)`.
    pub fn relaxation(&self) -> [f64; 4] {
        [self.mu, self.lambda, self.iota, self.nu]
    }

    pub fn with_relaxation(&self, [mu, lambda, iota, nu]: [f64; 4]) -> Self {
        Self { mu, lambda, iota, nu, ..*self }
    }

    /// Relaxation parameters scaled by `factor`; `eps` and `omega` unchanged.
    pub fn scaled_relaxation(&self, factor: f64) -> Self {
        self.with_relaxation(self.relaxation().map(|v| v * factor))
    }
}

impl Default for RegParams {
    fn default() -> Self {
        Self { eps: 0.1, omega: 0.1, mu: 0.01, lambda: 0.01, iota: 1e-4, nu: 0.01 }
    }
}

/// Physical constants of the model. Angles are in radians.
#[derive(Debug, Clone, Copy)]
pub struct PhysParams {
    pub rho_ice: f64,
    pub rho_air: f64,
    pub rho_water: f64,
    /// Pressure scale `c_p`.
    pub c_p: f64,
    /// Compactness exponent `c_a`.
    pub c_a: f64,
    /// Air drag coefficient.
    pub drag_air: f64,
    /// Water drag coefficient.
    pub drag_water: f64,
    /// Geostrophic wind.
    pub wind: [f64; 2],
    /// Ocean current.
    pub current: [f64; 2],
    /// Air turning angle.
    pub phi: f64,
    /// Water turning angle.
    pub theta: f64,
    /// Coriolis parameter.
    pub coriolis: f64,
    /// Demarcation thickness between thin and thick ice.
    pub h0: f64,
    pub growth: GrowthFn,
}

impl PhysParams {
    pub fn validate(&self) -> Result<()> {
        positive("rho_ice", self.rho_ice)?;
        positive("c_p", self.c_p)?;
        positive("h0", self.h0)?;
        let rest = [
            ("rho_air", self.rho_air),
            ("rho_water", self.rho_water),
            ("c_a", self.c_a),
            ("drag_air", self.drag_air),
            ("drag_water", self.drag_water),
            ("phi", self.phi),
            ("theta", self.theta),
            ("coriolis", self.coriolis),
            ("wind.x", self.wind[0]),
            ("wind.y", self.wind[1]),
            ("current.x", self.current[0]),
            ("current.y", self.current[1]),
        ];
        for (name, v) in rest {
            if !v.is_finite() {
                return Err(Error::InvalidParameter { name, reason: alloc::format!("must be finite, got {v}") });
            }
        }
        Ok(())
    }
}

impl Default for PhysParams {
    /// Nondimensional reference setup on the unit torus.
    fn default() -> Self {
        let deg = core::f64::consts::PI / 180.0;
        Self {
            rho_ice: 1.0,
            rho_air: 1.0,
            rho_water: 1.0,
            c_p: 1.0,
            c_a: 1.0,
            drag_air: 0.02,
            drag_water: 0.05,
            wind: [0.5, 0.2],
            current: [0.1, 0.0],
            phi: 25.0 * deg,
            theta: 25.0 * deg,
            coriolis: 1.0,
            h0: 0.5,
            growth: GrowthFn::tanh(1.0, 1.0, 1.0),
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: alloc::format!("must be finite and > 0, got {v}") })
    }
}

/// `p = c_p h exp(c_a A)`
pub fn pressure(h: &ScalarField, a: &ScalarField, pp: &PhysParams) -> ScalarField {
    h.zip_map(a, |h, a| pp.c_p * h * libm::exp(pp.c_a * a))
}

/// Pointwise coefficients of the regularized plastic law for a given
/// strain `D = ∇u + ∇uᵀ`:
/// `a = p / √(|D|² + ε²)`, `b = p / √((div u)² + ε²)`, so that
/// `S_ε = a D + b (div u) 𝕀₂`.
pub fn vp_coefficients(p: &ScalarField, d: &TensorField, divu: &ScalarField, eps: f64) -> (ScalarField, ScalarField) {
    let dd = d.frobenius_sq();
    let a = p.zip_map(&dd, |p, dd| p / libm::sqrt(dd + eps * eps));
    let b = p.zip_map(divu, |p, q| p / libm::sqrt(q * q + eps * eps));
    (a, b)
}

/// Regularized viscous-plastic stress
/// `S_ε = p D / √(|D|²+ε²) + p (div u) 𝕀₂ / √((div u)²+ε²)` with
/// `D = ∇u + ∇uᵀ` built from the supplied velocity gradient.
pub fn stress_vp(p: &ScalarField, grad_u: &TensorField, divu: &ScalarField, eps: f64) -> TensorField {
    debug_assert!(eps > 0.0);
    let d = grad_u + &grad_u.transpose();
    let (a, b) = vp_coefficients(p, &d, divu, eps);
    let bq = &b * divu;
    let mut s = d.scale_by(&a);
    s.xx = &s.xx + &bq;
    s.yy = &s.yy + &bq;
    s
}

/// Newtonian relaxation stress `μ (∇u + ∇uᵀ) + λ (div u) 𝕀₂`.
pub fn stress_newtonian(grad_u: &TensorField, divu: &ScalarField, mu: f64, lambda: f64) -> TensorField {
    let d = grad_u + &grad_u.transpose();
    let mut s = d.scale(mu);
    let bq = divu.scale(lambda);
    s.xx = &s.xx + &bq;
    s.yy = &s.yy + &bq;
    s
}

/// Row-wise divergence `(div S)_i = Σ_j ∂_j S_ij`, centered.
pub fn stress_divergence(s: &TensorField) -> VectorField {
    VectorField::new(&s.xx.ddx() + &s.xy.ddy(), &s.yx.ddx() + &s.yy.ddy())
}

fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a|²|b|² − (a·b)²` as the sum of squared 2×2 minors, which never
/// cancels.
fn lagrange<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        for j in i + 1..N {
            let m = a[i] * b[j] - a[j] * b[i];
            acc += m * m;
        }
    }
    acc
}

/// `s1 s2 − G1·G2 ≥ 0` without subtracting nearly equal numbers.
fn gram_gap<const N: usize>(g1: &[f64; N], g2: &[f64; N], s1: f64, s2: f64, eps: f64) -> f64 {
    let c = dot(g1, g2);
    if c <= 0.0 {
        return s1 * s2 - c;
    }
    let e2 = eps * eps;
    (lagrange(g1, g2) + e2 * (dot(g1, g1) + dot(g2, g2)) + e2 * e2) / (s1 * s2 + c)
}

/// One term of the regularized plastic law, `p G / √(|G|² + ε²)`, for a
/// strain `G` given either as the four entries of `∇u + ∇uᵀ` or as the
/// single scalar `div u`.
pub fn vp_term<const N: usize>(p: f64, g: &[f64; N], eps: f64) -> [f64; N] {
    let s = libm::sqrt(dot(g, g) + eps * eps);
    g.map(|v| p * v / s)
}

/// The pieces of the two-point monotonicity identity of [`vp_term`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityGap {
    /// `(T(p1,G1) − T(p2,G2)) : (G1 − G2)` evaluated directly.
    pub lhs: f64,
    /// The symmetric numerator
    /// `(p1 s1 + p2 s2)(s1 + s2)|δG|² − ((G1+G2)·δG)((p1 G1 + p2 G2)·δG)`,
    /// where `s_k = √(|G_k|² + ε²)`.
    pub m: f64,
    /// Pressure-difference part `δp/2 (G1/s1 + G2/s2) · δG`; zero when `p1 = p2`.
    pub delta_p_term: f64,
    /// `lhs` rebuilt from the symmetric form:
    /// `delta_p_term + M / (2 s1 s2 (s1 + s2))`.
    pub bound: f64,
}

/// Evaluates both sides of the monotonicity identity for two strain states.
pub fn monotonicity_gap<const N: usize>(p1: f64, p2: f64, g1: &[f64; N], g2: &[f64; N], eps: f64) -> Result<MonotonicityGap> {
    positive("p1", p1)?;
    positive("p2", p2)?;
    positive("eps", eps)?;
    let t1 = vp_term(p1, g1, eps);
    let t2 = vp_term(p2, g2, eps);
    let mut dg = [0.0; N];
    let mut sum = [0.0; N];
    for k in 0..N {
        dg[k] = g1[k] - g2[k];
        sum[k] = g1[k] + g2[k];
    }
    let lhs: f64 = (0..N).map(|k| (t1[k] - t2[k]) * dg[k]).sum();
    let s1 = libm::sqrt(dot(g1, g1) + eps * eps);
    let s2 = libm::sqrt(dot(g2, g2) + eps * eps);
    let dg2 = dot(&dg, &dg);
    // The δp part of the numerator vanishes because s1² − s2² = (G1+G2)·δG,
    // leaving the mean pressure times a sum of nonnegative terms.
    let m = 0.5 * (p1 + p2) * (2.0 * (eps * eps + gram_gap(g1, g2, s1, s2, eps)) * dg2 + lagrange(&sum, &dg));
    let unit_sum: f64 = (0..N).map(|k| (g1[k] / s1 + g2[k] / s2) * dg[k]).sum();
    let delta_p_term = 0.5 * (p1 - p2) * unit_sum;
    let bound = delta_p_term + 0.5 * m / (s1 * s2 * (s1 + s2));
    Ok(MonotonicityGap { lhs, m, delta_p_term, bound })
}

/// Strong-monotonicity floor for equal pressures:
/// `p ε² |G1 − G2|² / (s1 s2 (s1 + s2))`.
pub fn monotone_lower_bound<const N: usize>(p: f64, g1: &[f64; N], g2: &[f64; N], eps: f64) -> f64 {
    let s1 = libm::sqrt(dot(g1, g1) + eps * eps);
    let s2 = libm::sqrt(dot(g2, g2) + eps * eps);
    let dg2: f64 = g1.iter().zip(g2).map(|(a, b)| (a - b) * (a - b)).sum();
    p * eps * eps * dg2 / (s1 * s2 * (s1 + s2))
}
