//! Thermodynamic growth, smoothed indicators, sources and momentum forcing.
//!
//! Two system variants share these helpers. The relaxed system uses
//! `ν > 0` (smoothed thickness indicator, `2h⁺ + ν` denominators); the
//! target system uses `ν = 0`, where the sharp indicator `χ_{h>0}` and the
//! unregularized `2h` denominator apply.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};
use crate::rheology::PhysParams;

/// Evaluation rule of the growth function `f`.
#[derive(Debug, Clone, Copy)]
pub enum GrowthRule {
    /// `alpha · tanh(beta · (gamma − x))`
    Tanh { alpha: f64, beta: f64, gamma: f64 },
    Constant(f64),
    Custom(fn(f64) -> f64),
}

impl GrowthRule {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            GrowthRule::Tanh { alpha, beta, gamma } => alpha * libm::tanh(beta * (gamma - x)),
            GrowthRule::Constant(c) => c,
            GrowthRule::Custom(f) => f(x),
        }
    }
}

/// Growth function with declared bounds `f_lo ≤ f ≤ f_hi` and a bound
/// `m_f` on `|f'| + |f''| + |f'''|`.
#[derive(Debug, Clone, Copy)]
pub struct GrowthFn {
    rule: GrowthRule,
    f_lo: f64,
    f_hi: f64,
    m_f: f64,
}

impl GrowthFn {
    /// Number of sample points used by [`GrowthFn::check`].
    pub const SAMPLES: usize = 1000;

    /// The default family `alpha · tanh(beta · (gamma − x))`, with bounds
    /// `±|alpha|` and `M_f = |alpha| (beta + beta² + 2 beta³)`.
    pub fn tanh(alpha: f64, beta: f64, gamma: f64) -> Self {
        let b = beta.abs();
        Self {
            rule: GrowthRule::Tanh { alpha, beta, gamma },
            f_lo: -alpha.abs(),
            f_hi: alpha.abs(),
            m_f: alpha.abs() * (b + b * b + 2.0 * b * b * b),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self { rule: GrowthRule::Constant(c), f_lo: c, f_hi: c, m_f: f64::MIN_POSITIVE }
    }

    /// A user rule with declared bounds, checked on `[0, sample_max]`.
    pub fn new(rule: GrowthRule, f_lo: f64, f_hi: f64, m_f: f64, sample_max: f64) -> Result<Self> {
        if !(f_lo <= f_hi && m_f > 0.0 && f_lo.is_finite() && f_hi.is_finite() && m_f.is_finite()) {
            return Err(Error::GrowthBounds(alloc::format!("need f_lo <= f_hi and M_f > 0, got [{f_lo}, {f_hi}], M_f = {m_f}")));
        }
        let f = Self { rule, f_lo, f_hi, m_f };
        f.check(sample_max)?;
        Ok(f)
    }

    pub fn rule(&self) -> GrowthRule {
        self.rule
    }
    pub fn f_lo(&self) -> f64 {
        self.f_lo
    }
    pub fn f_hi(&self) -> f64 {
        self.f_hi
    }
    pub fn m_f(&self) -> f64 {
        self.m_f
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.rule.eval(x)
    }

    /// `3 (|f_hi| + |f_lo|)`, the a priori bound on the thickness source.
    pub fn source_bound(&self) -> f64 {
        3.0 * (self.f_hi.abs() + self.f_lo.abs())
    }

    /// Samples `f` and a centered difference of `f` at
    /// [`GrowthFn::SAMPLES`] points of `[0, sample_max]` against the declared
    /// bounds.
    pub fn check(&self, sample_max: f64) -> Result<()> {
        if !(sample_max > 0.0 && sample_max.is_finite()) {
            return Err(Error::GrowthBounds(alloc::format!("sample range must be positive, got {sample_max}")));
        }
        let step = 1e-6 * sample_max.max(1.0);
        let tol = 1e-12 * (1.0 + self.f_lo.abs().max(self.f_hi.abs()));
        for k in 0..Self::SAMPLES {
            let x = sample_max * k as f64 / (Self::SAMPLES - 1) as f64;
            let v = self.eval(x);
            if !(v >= self.f_lo - tol && v <= self.f_hi + tol) {
                return Err(Error::GrowthBounds(alloc::format!("f({x}) = {v} outside [{}, {}]", self.f_lo, self.f_hi)));
            }
            let slope = (self.eval(x + step) - self.eval(x - step)) / (2.0 * step);
            if slope.abs() > self.m_f * (1.0 + 1e-6) + 1e-9 {
                return Err(Error::GrowthBounds(alloc::format!("|f'({x})| ≈ {} exceeds M_f = {}", slope.abs(), self.m_f)));
            }
        }
        Ok(())
    }
}

#[inline]
pub fn pos(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// `ψ⁺` pointwise.
pub fn pos_part(s: &ScalarField) -> ScalarField {
    s.map(pos)
}

/// `(√(s² + ω²) − s) / 2`, a smooth approximation of `s⁻ = max(−s, 0)`.
/// Evaluated in a cancellation-free form for `s > 0`.
#[inline]
pub fn smoothed_neg(s: f64, omega: f64) -> f64 {
    let r = libm::sqrt(s * s + omega * omega);
    if s > 0.0 {
        0.5 * omega * omega / (r + s)
    } else {
        0.5 * (r - s)
    }
}

/// `χ_A^ω = 1 − (1−A)⁺ / ((1−A)⁺ + ω)`. With `ω = 0` this is the sharp
/// indicator of `{A ≥ 1}`.
#[inline]
pub fn chi_a_point(a: f64, omega: f64) -> f64 {
    let q = pos(1.0 - a);
    if q == 0.0 {
        1.0
    } else {
        1.0 - q / (q + omega)
    }
}

/// `χ_h^ν = h⁺ / (h⁺ + ν)`. With `ν = 0` this is the sharp indicator of
/// `{h > 0}`.
#[inline]
pub fn chi_h_point(h: f64, nu: f64) -> f64 {
    let q = pos(h);
    if q == 0.0 {
        0.0
    } else {
        q / (q + nu)
    }
}

pub fn chi_a(a: &ScalarField, omega: f64) -> ScalarField {
    a.map(|a| chi_a_point(a, omega))
}

pub fn chi_h(h: &ScalarField, nu: f64) -> ScalarField {
    h.map(|h| chi_h_point(h, nu))
}

#[inline]
pub fn src_h_point(h: f64, a: f64, omega: f64, nu: f64, f: &GrowthFn) -> f64 {
    let chi = chi_h_point(h, nu);
    if chi == 0.0 {
        return 0.0;
    }
    (f.eval(pos(h) / (pos(a) + omega)) * a + (1.0 - a) * f.eval(0.0)) * chi
}

/// Thickness source `[f(h⁺/(A⁺+ω)) A + (1−A) f(0)] · χ_h^ν` (sharp `χ_{h>0}`
/// when `ν = 0`).
pub fn src_h(h: &ScalarField, a: &ScalarField, omega: f64, nu: f64, f: &GrowthFn) -> ScalarField {
    h.zip_map(a, |h, a| src_h_point(h, a, omega, nu, f))
}

/// The two signed parts of the compactness source: the nonnegative
/// opening term `(f(0))⁺/(h0+ν) (1−A)` (for `A ≤ 1`) and the nonpositive
/// melt term `−A/(2h⁺+ν) · smoothed_neg(S, ω)` (for `A, h ≥ 0`).
#[inline]
pub fn src_a_parts(h: f64, a: f64, omega: f64, nu: f64, f0: f64, h0: f64, sh: f64) -> (f64, f64) {
    let opening = pos(f0) / (h0 + nu) * (1.0 - a);
    let denom = if nu > 0.0 { 2.0 * pos(h) + nu } else { 2.0 * h };
    (opening, -a / denom * smoothed_neg(sh, omega))
}

/// Compactness source
/// `(f(0))⁺/(h0+ν) (1−A) − A/(2h⁺+ν) · (√(S²+ω²) − S)/2` with `S = sh`, the
/// precomputed thickness source. For `ν = 0` the denominator is `2h` and the
/// thickness must be strictly positive.
pub fn src_a(h: &ScalarField, a: &ScalarField, omega: f64, nu: f64, f: &GrowthFn, h0: f64, sh: &ScalarField) -> Result<ScalarField> {
    if nu == 0.0 {
        let min_h = h.min();
        if !(min_h > 0.0) {
            return Err(Error::DegenerateThickness { min_h });
        }
    }
    let f0 = f.eval(0.0);
    let mut out = ScalarField::zeros(h.grid());
    for (k, o) in out.values_mut().iter_mut().enumerate() {
        let (op, melt) = src_a_parts(h.values()[k], a.values()[k], omega, nu, f0, h0, sh.values()[k]);
        *o = op + melt;
    }
    Ok(out)
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = libm::sincos(angle);
    // v cos + v^⊥ sin, with v^⊥ = (−v2, v1)
    [v[0] * c - v[1] * s, v[1] * c + v[0] * s]
}

/// Air stress `ρ_a C_a |U_g| (U_g cos φ + U_g^⊥ sin φ)`; constant in space.
pub fn wind_stress(pp: &PhysParams) -> [f64; 2] {
    let k = pp.rho_air * pp.drag_air * libm::hypot(pp.wind[0], pp.wind[1]);
    rotate(pp.wind, pp.phi).map(|v| k * v)
}

/// Water stress `ρ_w C_w |U_w − u| [(U_w − u) cos θ + (U_w − u)^⊥ sin θ]`.
pub fn water_stress(u: &VectorField, pp: &PhysParams) -> VectorField {
    let g = u.grid();
    let mut out = VectorField::zeros(g);
    let k = pp.rho_water * pp.drag_water;
    let (s, c) = libm::sincos(pp.theta);
    for i in 0..g.len() {
        let rx = pp.current[0] - u.x.values()[i];
        let ry = pp.current[1] - u.y.values()[i];
        let m = k * libm::hypot(rx, ry);
        out.x.values_mut()[i] = m * (rx * c - ry * s);
        out.y.values_mut()[i] = m * (ry * c + rx * s);
    }
    out
}

/// Momentum forcing `−ρ_ice h η u^⊥ + τ_a + τ_w`.
pub fn total_forcing(u: &VectorField, h: &ScalarField, pp: &PhysParams) -> VectorField {
    let tau_a = wind_stress(pp);
    let mut f = water_stress(u, pp);
    let g = u.grid();
    for i in 0..g.len() {
        let m = pp.rho_ice * h.values()[i] * pp.coriolis;
        let (ux, uy) = (u.x.values()[i], u.y.values()[i]);
        // −m η u^⊥ = −m η (−u_y, u_x)
        f.x.values_mut()[i] += m * uy + tau_a[0];
        f.y.values_mut()[i] += -m * ux + tau_a[1];
    }
    f
}
