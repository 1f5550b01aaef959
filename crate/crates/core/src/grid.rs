//! Uniform periodic grid, cell-centered fields and centered-difference calculus.
//!
//! All first derivatives use the second-order centered stencil
//! `(v[i+1] - v[i-1]) / (2 dx)` with periodic wrap. This operator is
//! skew-adjoint with respect to the grid inner product `dx dy Σ a b`, which
//! gives exact summation by parts:
//!
//! ```text
//! <grad s, v> + <s, div v> = 0
//! ```
//!
//! and, because the x and y differences commute,
//! `Σ|∇u|² = ½ Σ|∇u + ∇uᵀ|² − Σ (div u)²` for every periodic `u`.
//!
//! Values are stored row-major: cell `(i, j)` lives at `j * nx + i`, with
//! `i` the x index and cell center `((i + ½) dx, (j + ½) dy)`.
//!
//! Operations that combine two fields panic if their grids differ.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid {
    /// Smallest admissible cell count per direction; the widest stencil
    /// (the biharmonic) reaches two cells on each side.
    pub const MIN_CELLS: usize = 4;

    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < Self::MIN_CELLS || ny < Self::MIN_CELLS {
            return Err(Error::InvalidGrid(alloc::format!(
                "need nx, ny >= {}, got {nx} x {ny}",
                Self::MIN_CELLS
            )));
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidGrid(alloc::format!(
                "domain lengths must be positive and finite, got {lx} x {ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    /// Square `n x n` grid on the unit torus.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn lx(&self) -> f64 {
        self.lx
    }
    pub fn ly(&self) -> f64 {
        self.ly
    }
    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let (x, y) = grid.center(i, j);
                values.push(f(x, y));
            }
        }
        Self { grid, values }
    }

    pub fn from_vec(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(alloc::format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "field grids differ");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: f64, x: &Self) {
        assert_eq!(self.grid, x.grid, "field grids differ");
        for (s, &v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copy with every cell moved by `(di, dj)` cells (periodic).
    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        let (nx, ny) = (self.grid.nx as isize, self.grid.ny as isize);
        let mut out = Self::zeros(self.grid);
        for j in 0..ny {
            for i in 0..nx {
                let ti = (i + di).rem_euclid(nx) as usize;
                let tj = (j + dj).rem_euclid(ny) as usize;
                out.values[self.grid.index(ti, tj)] = self.values[self.grid.index(i as usize, j as usize)];
            }
        }
        out
    }

    /// Centered x-difference.
    pub fn ddx(&self) -> Self {
        let g = self.grid;
        let inv = 0.5 / g.dx();
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            let row = &self.values[j * g.nx..(j + 1) * g.nx];
            let dst = &mut out[j * g.nx..(j + 1) * g.nx];
            for i in 0..g.nx {
                let e = row[if i + 1 == g.nx { 0 } else { i + 1 }];
                let w = row[if i == 0 { g.nx - 1 } else { i - 1 }];
                dst[i] = (e - w) * inv;
            }
        }
        Self { grid: g, values: out }
    }

    /// Centered y-difference.
    pub fn ddy(&self) -> Self {
        let g = self.grid;
        let inv = 0.5 / g.dy();
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            let n = if j + 1 == g.ny { 0 } else { j + 1 };
            let s = if j == 0 { g.ny - 1 } else { j - 1 };
            for i in 0..g.nx {
                out[j * g.nx + i] = (self.values[n * g.nx + i] - self.values[s * g.nx + i]) * inv;
            }
        }
        Self { grid: g, values: out }
    }

    /// Compact five-point Laplacian.
    pub fn laplacian(&self) -> Self {
        let g = self.grid;
        let (ix2, iy2) = (1.0 / (g.dx() * g.dx()), 1.0 / (g.dy() * g.dy()));
        let mut out = vec![0.0; g.len()];
        for j in 0..g.ny {
            let n = if j + 1 == g.ny { 0 } else { j + 1 };
            let s = if j == 0 { g.ny - 1 } else { j - 1 };
            for i in 0..g.nx {
                let e = if i + 1 == g.nx { 0 } else { i + 1 };
                let w = if i == 0 { g.nx - 1 } else { i - 1 };
                let c = self.values[j * g.nx + i];
                out[j * g.nx + i] = (self.values[j * g.nx + e] + self.values[j * g.nx + w] - 2.0 * c) * ix2
                    + (self.values[n * g.nx + i] + self.values[s * g.nx + i] - 2.0 * c) * iy2;
            }
        }
        Self { grid: g, values: out }
    }

    /// `dx dy Σ v`, summed in storage order.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    /// Grid inner product `dx dy Σ a b`.
    pub fn inner(&self, other: &Self) -> f64 {
        assert_eq!(self.grid, other.grid, "field grids differ");
        self.grid.cell_area() * self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>()
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

/// Pointwise product.
impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: Self) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Self {
        assert_eq!(x.grid, y.grid, "component grids differ");
        Self { x, y }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::new(ScalarField::zeros(grid), ScalarField::zeros(grid))
    }

    pub fn constant(grid: Grid, c: [f64; 2]) -> Self {
        Self::new(ScalarField::constant(grid, c[0]), ScalarField::constant(grid, c[1]))
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        Self::new(ScalarField::from_fn(grid, |x, y| f(x, y)[0]), ScalarField::from_fn(grid, |x, y| f(x, y)[1]))
    }

    pub fn grid(&self) -> Grid {
        self.x.grid
    }

    /// Rotation by +90°: `(v1, v2)^⊥ = (−v2, v1)`.
    pub fn perp(&self) -> Self {
        Self::new(-&self.y, self.x.clone())
    }

    pub fn scale(&self, a: f64) -> Self {
        Self::new(self.x.scale(a), self.y.scale(a))
    }

    /// Both components multiplied pointwise by `s`.
    pub fn scale_by(&self, s: &ScalarField) -> Self {
        Self::new(&self.x * s, &self.y * s)
    }

    pub fn axpy(&mut self, a: f64, v: &Self) {
        self.x.axpy(a, &v.x);
        self.y.axpy(a, &v.y);
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.x.inner(&other.x) + self.y.inner(&other.y)
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        self.x.zip_map(&self.y, libm::hypot)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn shifted(&self, di: isize, dj: isize) -> Self {
        Self::new(self.x.shifted(di, dj), self.y.shifted(di, dj))
    }

    /// Advective derivative `(w · ∇) self`, centered.
    pub fn advected_by(&self, w: &VectorField) -> Self {
        let adv = |c: &ScalarField| &(&w.x * &c.ddx()) + &(&w.y * &c.ddy());
        Self::new(adv(&self.x), adv(&self.y))
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: Self) -> VectorField {
        VectorField::new(&self.x + &rhs.x, &self.y + &rhs.y)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: Self) -> VectorField {
        VectorField::new(&self.x - &rhs.x, &self.y - &rhs.y)
    }
}

impl Neg for &VectorField {
    type Output = VectorField;
    fn neg(self) -> VectorField {
        VectorField::new(-&self.x, -&self.y)
    }
}

/// 2×2 tensor field; `xy` is row x, column y.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub xx: ScalarField,
    pub xy: ScalarField,
    pub yx: ScalarField,
    pub yy: ScalarField,
}

impl TensorField {
    pub fn new(xx: ScalarField, xy: ScalarField, yx: ScalarField, yy: ScalarField) -> Self {
        let g = xx.grid;
        assert!(xy.grid == g && yx.grid == g && yy.grid == g, "component grids differ");
        Self { xx, xy, yx, yy }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::diagonal(&ScalarField::zeros(grid))
    }

    /// `s · 𝕀₂`
    pub fn diagonal(s: &ScalarField) -> Self {
        let z = ScalarField::zeros(s.grid);
        Self::new(s.clone(), z.clone(), z, s.clone())
    }

    pub fn grid(&self) -> Grid {
        self.xx.grid
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.xx.clone(), self.yx.clone(), self.xy.clone(), self.yy.clone())
    }

    pub fn trace(&self) -> ScalarField {
        &self.xx + &self.yy
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map_components(|c| c.scale(a))
    }

    pub fn scale_by(&self, s: &ScalarField) -> Self {
        self.map_components(|c| c * s)
    }

    /// Pointwise squared Frobenius norm.
    pub fn frobenius_sq(&self) -> ScalarField {
        let mut out = &self.xx * &self.xx;
        for c in [&self.xy, &self.yx, &self.yy] {
            for (o, v) in out.values_mut().iter_mut().zip(c.values()) {
                *o += v * v;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yx.is_finite() && self.yy.is_finite()
    }

    /// Pointwise `A : B` (full contraction) summed with the grid measure.
    pub fn inner(&self, other: &Self) -> f64 {
        self.xx.inner(&other.xx) + self.xy.inner(&other.xy) + self.yx.inner(&other.yx) + self.yy.inner(&other.yy)
    }
}

impl Add for &TensorField {
    type Output = TensorField;
    fn add(self, rhs: Self) -> TensorField {
        TensorField::new(&self.xx + &rhs.xx, &self.xy + &rhs.xy, &self.yx + &rhs.yx, &self.yy + &rhs.yy)
    }
}

impl Sub for &TensorField {
    type Output = TensorField;
    fn sub(self, rhs: Self) -> TensorField {
        TensorField::new(&self.xx - &rhs.xx, &self.xy - &rhs.xy, &self.yx - &rhs.yx, &self.yy - &rhs.yy)
    }
}

/// Anything made of scalar components on one grid.
pub trait Field: Sized {
    fn grid(&self) -> Grid;
    fn components(&self) -> Vec<&ScalarField>;
    fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self;
}

impl Field for ScalarField {
    fn grid(&self) -> Grid {
        self.grid
    }
    fn components(&self) -> Vec<&ScalarField> {
        vec![self]
    }
    fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        f(self)
    }
}

impl Field for VectorField {
    fn grid(&self) -> Grid {
        self.x.grid
    }
    fn components(&self) -> Vec<&ScalarField> {
        vec![&self.x, &self.y]
    }
    fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self::new(f(&self.x), f(&self.y))
    }
}

impl Field for TensorField {
    fn grid(&self) -> Grid {
        self.xx.grid
    }
    fn components(&self) -> Vec<&ScalarField> {
        vec![&self.xx, &self.xy, &self.yx, &self.yy]
    }
    fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self::new(f(&self.xx), f(&self.xy), f(&self.yx), f(&self.yy))
    }
}

pub fn grad(s: &ScalarField) -> VectorField {
    VectorField::new(s.ddx(), s.ddy())
}

pub fn div(v: &VectorField) -> ScalarField {
    &v.x.ddx() + &v.y.ddy()
}

/// `∇v` with `(∇v)_ij = ∂_j v_i`: row x holds `(∂x v_x, ∂y v_x)`.
pub fn grad_vector(v: &VectorField) -> TensorField {
    TensorField::new(v.x.ddx(), v.x.ddy(), v.y.ddx(), v.y.ddy())
}

/// `∇v + ∇vᵀ`, exactly symmetric.
pub fn sym_grad(v: &VectorField) -> TensorField {
    let g = grad_vector(v);
    let off = &g.xy + &g.yx;
    TensorField::new(g.xx.scale(2.0), off.clone(), off, g.yy.scale(2.0))
}

pub fn laplacian<F: Field>(f: &F) -> F {
    f.map_components(ScalarField::laplacian)
}

/// `Δ²`, the compact Laplacian applied twice.
pub fn biharmonic(v: &VectorField) -> VectorField {
    laplacian(&laplacian(v))
}

pub fn integral(s: &ScalarField) -> f64 {
    s.integral()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lp {
    L1,
    L2,
    L4,
    Inf,
}

/// Discrete Lebesgue norm; for vector and tensor fields the pointwise
/// Euclidean (Frobenius) magnitude is used.
pub fn norm_lp<F: Field>(f: &F, p: Lp) -> f64 {
    let comps = f.components();
    let g = f.grid();
    let mag_sq = |k: usize| comps.iter().map(|c| c.values[k] * c.values[k]).sum::<f64>();
    match p {
        Lp::Inf => (0..g.len()).map(|k| libm::sqrt(mag_sq(k))).fold(0.0, f64::max),
        Lp::L1 => g.cell_area() * (0..g.len()).map(|k| libm::sqrt(mag_sq(k))).sum::<f64>(),
        Lp::L2 => libm::sqrt(g.cell_area() * (0..g.len()).map(mag_sq).sum::<f64>()),
        Lp::L4 => libm::sqrt(libm::sqrt(g.cell_area() * (0..g.len()).map(|k| mag_sq(k) * mag_sq(k)).sum::<f64>())),
    }
}

const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// Largest derivative order supported by the Sobolev machinery.
pub const MAX_SOBOLEV_ORDER: usize = 4;

/// Pointwise `|∇^m f|²`, the squared Frobenius norm of the `m`-th
/// derivative tensor summed over components.
///
/// `∇^m` is the tensor of all ordered `m`-fold centered differences. The
/// differences commute, so this equals `Σ_{a+b=m} C(m,a) (Dx^a Dy^b f)²`.
pub fn derivative_density<F: Field>(f: &F, m: usize) -> ScalarField {
    assert!(m <= MAX_SOBOLEV_ORDER, "derivative order {m} > {MAX_SOBOLEV_ORDER}");
    let mut out = ScalarField::zeros(f.grid());
    for c in f.components() {
        let mut dy_pow = c.clone();
        for b in 0..=m {
            if b > 0 {
                dy_pow = dy_pow.ddy();
            }
            let mut d = dy_pow.clone();
            for _ in 0..(m - b) {
                d = d.ddx();
            }
            let w = BINOMIAL[m][b];
            for (o, v) in out.values.iter_mut().zip(&d.values) {
                *o += w * v * v;
            }
        }
    }
    out
}

/// Discrete `H^k` norm:
///
/// ```text
/// ‖f‖²_{H^k} = Σ_{m=0}^{k} dx dy Σ_cells |∇^m f|²
/// ```
///
/// with `∇^m` built from repeated centered first differences (all mixed
/// orders, see [`derivative_density`]).
pub fn norm_hk<F: Field>(f: &F, k: usize) -> f64 {
    libm::sqrt(seminorm_sum_sq(f, k))
}

/// `‖f‖²_{H^k}` without the square root.
pub fn norm_hk_sq<F: Field>(f: &F, k: usize) -> f64 {
    seminorm_sum_sq(f, k)
}

fn seminorm_sum_sq<F: Field>(f: &F, k: usize) -> f64 {
    assert!(k <= MAX_SOBOLEV_ORDER, "H^{k} unsupported (k <= {MAX_SOBOLEV_ORDER})");
    (0..=k).map(|m| derivative_density(f, m).integral()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_vec(g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn rejects_tiny_grids() {
        assert!(Grid::new(3, 8, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 8, 0.0, 1.0).is_err());
        assert!(Grid::new(4, 4, 1.0, 2.0).is_ok());
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let g = Grid::new(8, 6, 2.0, 1.5).unwrap();
        let c = ScalarField::constant(g, 3.25);
        let gr = grad(&c);
        assert!(gr.x.values().iter().chain(gr.y.values()).all(|&v| v == 0.0));
        assert!(div(&VectorField::constant(g, [1.0, -2.0])).values().iter().all(|&v| v == 0.0));
        assert!(c.laplacian().values().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn grad_of_sine_matches_analytic_bound() {
        let g = Grid::new(64, 8, 1.0, 1.0).unwrap();
        let s = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let exact = ScalarField::from_fn(g, |x, _| 2.0 * PI * (2.0 * PI * x).cos());
        let err = max_abs_diff(&grad(&s).x, &exact);
        let bound = (2.0 * PI).powi(3) * g.dx() * g.dx() / 6.0;
        assert!(err <= bound, "err {err} > {bound}");
    }

    #[test]
    fn div_grad_of_sine() {
        let g = Grid::unit(64).unwrap();
        let s = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let d = div(&grad(&s));
        let exact = s.scale(-(2.0 * PI).powi(2));
        // wide stencil: symbol sin²(2k dx)/dx²
        let err = max_abs_diff(&d, &exact);
        assert!(err < (2.0 * PI).powi(4) * g.dx() * g.dx() * 4.0 / 12.0 * 1.01, "{err}");
    }

    #[test]
    fn sym_grad_shear() {
        let g = Grid::unit(64).unwrap();
        let u = VectorField::from_fn(g, |_, y| [(2.0 * PI * y).sin(), 0.0]);
        let d = sym_grad(&u);
        assert_eq!(d.xy, d.yx);
        let exact = ScalarField::from_fn(g, |_, y| 2.0 * PI * (2.0 * PI * y).cos());
        assert!(max_abs_diff(&d.xy, &exact) < (2.0 * PI).powi(3) * g.dy() * g.dy() / 6.0);
        assert!(d.xx.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplacian_and_biharmonic_of_sine() {
        let g = Grid::unit(64).unwrap();
        let s = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let k2 = (2.0 * PI).powi(2);
        let lap = s.laplacian();
        assert!(max_abs_diff(&lap, &s.scale(-k2)) < k2 * k2 * g.dx() * g.dx() / 12.0 * 1.01);
        let v = VectorField::new(s.clone(), ScalarField::zeros(g));
        let bi = biharmonic(&v);
        let rel = max_abs_diff(&bi.x, &s.scale(k2 * k2)) / (k2 * k2);
        assert!(rel < 5e-3, "{rel}");
        assert_eq!(bi, laplacian(&laplacian(&v)));
    }

    #[test]
    fn integrals_and_norms() {
        let g = Grid::unit(16).unwrap();
        assert!((ScalarField::constant(g, 2.5).integral() - 2.5).abs() < 1e-14);
        let z = ScalarField::zeros(g);
        for p in [Lp::L1, Lp::L2, Lp::L4, Lp::Inf] {
            assert_eq!(norm_lp(&z, p), 0.0);
        }
        let c = ScalarField::constant(g, -2.0);
        assert!((norm_lp(&c, Lp::L4) - 2.0).abs() < 1e-14);
        assert_eq!(norm_lp(&c, Lp::Inf), 2.0);
    }

    #[test]
    fn h1_norm_of_sine() {
        let g = Grid::unit(128).unwrap();
        let s = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin());
        let exact = 0.5 + 2.0 * PI * PI;
        let got = norm_hk_sq(&s, 1);
        assert!((got - exact).abs() < 2.0 * (2.0 * PI).powi(4) * g.dx() * g.dx(), "{got} vs {exact}");
    }

    #[test]
    fn derivative_density_matches_ordered_tuples() {
        // Brute force over ordered index tuples.
        let g = Grid::new(6, 5, 1.0, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(g, &mut rng);
        for m in 0..=4 {
            let mut level = vec![f.clone()];
            for _ in 0..m {
                level = level.iter().flat_map(|d| [d.ddx(), d.ddy()]).collect();
            }
            let mut brute = ScalarField::zeros(g);
            for d in &level {
                brute = &brute + &(d * d);
            }
            let fast = derivative_density(&f, m);
            let scale = brute.max().max(1.0);
            assert!(max_abs_diff(&brute, &fast) < 1e-10 * scale, "m = {m}");
        }
    }

    #[test]
    fn shift_wraps() {
        let g = Grid::new(4, 5, 1.0, 1.0).unwrap();
        let f = ScalarField::from_vec(g, (0..20).map(f64::from).collect()).unwrap();
        let s = f.shifted(1, -1);
        assert_eq!(s.get(1, 4), f.get(0, 0));
        assert_eq!(s.get(0, 0), f.get(3, 1));
        assert_eq!(f.shifted(4, 5), f);
    }

    #[test]
    fn summation_by_parts_on_random_fields() {
        let g = Grid::new(12, 10, 1.3, 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let s = random_field(g, &mut rng);
            let v = VectorField::new(random_field(g, &mut rng), random_field(g, &mut rng));
            let lhs = grad(&s).inner(&v);
            let rhs = s.inner(&div(&v));
            assert!((lhs + rhs).abs() < 1e-12 * (lhs.abs() + rhs.abs() + 1.0));
        }
    }
}
