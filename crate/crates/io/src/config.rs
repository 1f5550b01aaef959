//! Run configuration: JSON schema, defaults, validation and initial data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use seaice_core::driver::{MonitorMode, MonitorPolicy, RunPlan, State};
use seaice_core::{CflPolicy, CgSettings, Grid, GrowthFn, PhysParams, RegParams, ScalarField, VectorField};

use crate::snapshot;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { nx: 32, ny: 32, lx: 1.0, ly: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GrowthSpec {
    /// `alpha tanh(beta (gamma − x))`
    Tanh { alpha: f64, beta: f64, gamma: f64 },
    Constant { value: f64 },
}

impl Default for GrowthSpec {
    fn default() -> Self {
        GrowthSpec::Tanh { alpha: 1.0, beta: 1.0, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSpec {
    pub rho_ice: f64,
    pub rho_air: f64,
    pub rho_water: f64,
    pub c_p: f64,
    pub c_a: f64,
    pub drag_air: f64,
    pub drag_water: f64,
    pub wind: [f64; 2],
    pub current: [f64; 2],
    /// Air turning angle in degrees.
    pub phi_deg: f64,
    /// Water turning angle in degrees.
    pub theta_deg: f64,
    pub coriolis: f64,
    pub h0: f64,
    pub growth: GrowthSpec,
}

impl Default for PhysicsSpec {
    fn default() -> Self {
        let p = PhysParams::default();
        Self {
            rho_ice: p.rho_ice,
            rho_air: p.rho_air,
            rho_water: p.rho_water,
            c_p: p.c_p,
            c_a: p.c_a,
            drag_air: p.drag_air,
            drag_water: p.drag_water,
            wind: p.wind,
            current: p.current,
            phi_deg: 25.0,
            theta_deg: 25.0,
            coriolis: p.coriolis,
            h0: p.h0,
            growth: GrowthSpec::default(),
        }
    }
}

impl PhysicsSpec {
    pub fn to_params(&self) -> PhysParams {
        let growth = match self.growth {
            GrowthSpec::Tanh { alpha, beta, gamma } => GrowthFn::tanh(alpha, beta, gamma),
            GrowthSpec::Constant { value } => GrowthFn::constant(value),
        };
        PhysParams {
            rho_ice: self.rho_ice,
            rho_air: self.rho_air,
            rho_water: self.rho_water,
            c_p: self.c_p,
            c_a: self.c_a,
            drag_air: self.drag_air,
            drag_water: self.drag_water,
            wind: self.wind,
            current: self.current,
            phi: self.phi_deg.to_radians(),
            theta: self.theta_deg.to_radians(),
            coriolis: self.coriolis,
            h0: self.h0,
            growth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegSpec {
    pub eps: f64,
    pub omega: f64,
    pub mu: f64,
    pub lambda: f64,
    pub iota: f64,
    pub nu: f64,
}

impl Default for RegSpec {
    fn default() -> Self {
        let r = RegParams::default();
        Self { eps: r.eps, omega: r.omega, mu: r.mu, lambda: r.lambda, iota: r.iota, nu: r.nu }
    }
}

impl RegSpec {
    pub fn to_params(&self) -> RegParams {
        RegParams { eps: self.eps, omega: self.omega, mu: self.mu, lambda: self.lambda, iota: self.iota, nu: self.nu }
    }
}

/// Named families of initial data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        u: [f64; 2],
        h: f64,
        a: f64,
    },
    /// `h = h0 + h1 s`, `A = clip(a0 + a1 s, 0, 1)` with
    /// `s = sin(2πx/lx) sin(2πy/ly)`, and
    /// `u = u0 (sin(2πy/ly), sin(2πx/lx))`.
    SingleMode {
        h0: f64,
        h1: f64,
        a0: f64,
        a1: f64,
        u0: f64,
    },
    /// Band-limited random fields with wavenumbers up to `modes`, rescaled
    /// to fill `h_range` and `a_range` exactly; each velocity component has
    /// maximum modulus `u_amp`.
    RandomSmooth {
        h_range: [f64; 2],
        a_range: [f64; 2],
        u_amp: f64,
        modes: usize,
    },
    /// A snapshot written by `run`; relative paths resolve against the
    /// config file's directory.
    Snapshot {
        path: PathBuf,
    },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::SingleMode { h0: 1.0, h1: 0.3, a0: 0.5, a1: 0.3, u0: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardStudySpec {
    /// Initial slab length; `None` uses the small-time limit of the data.
    pub t_slab: Option<f64>,
    pub halvings: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for PicardStudySpec {
    fn default() -> Self {
        Self { t_slab: None, halvings: 5, picard_tol: 1e-12, picard_max: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSpec {
    /// `(mu, lambda, iota, nu)` of the first entry.
    pub base: [f64; 4],
    pub entries: usize,
    pub factor: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub cg_max_iter: usize,
}

impl Default for ContinuationSpec {
    fn default() -> Self {
        Self { base: [0.1, 0.1, 0.01, 0.1], entries: 5, factor: 0.5, t_end: 0.02, picard_tol: 1e-10, picard_max: 300, cg_max_iter: 5000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySpec {
    pub deltas: Vec<f64>,
    /// Horizon; `None` uses the small-time limit of the data.
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for StabilitySpec {
    fn default() -> Self {
        Self { deltas: vec![1e-2, 1e-3, 1e-4], t_end: None, picard_tol: 1e-11, picard_max: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StudySpec {
    pub picard: PicardStudySpec,
    pub continuation: ContinuationSpec,
    pub stability: StabilitySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub physics: PhysicsSpec,
    pub regularization: RegSpec,
    pub initial: InitialSpec,
    /// Integration horizon.
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt_cap: f64,
    pub cfl: f64,
    /// Extra cap on slab length on top of the small-time limits.
    pub slab_cap: Option<f64>,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub max_bisections: usize,
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    pub monitor_tol: f64,
    /// Fail fast on monitor violations instead of recording them.
    pub strict: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub studies: StudySpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            physics: PhysicsSpec::default(),
            regularization: RegSpec::default(),
            initial: InitialSpec::default(),
            t_end: 0.05,
            dt_cap: 0.005,
            cfl: 0.4,
            slab_cap: None,
            picard_tol: 1e-8,
            picard_max: 100,
            max_bisections: 8,
            cg_tol: 1e-12,
            cg_max_iter: None,
            monitor_tol: 1e-6,
            strict: false,
            out_dir: PathBuf::from("out"),
            seed: 0,
            studies: StudySpec::default(),
        }
    }
}

/// Command-line overrides, applied after the file in the fixed order
/// `out_dir`, `seed`, `nx`, `T`, `strict`.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Sets both `nx` and `ny`.
    pub nx: Option<usize>,
    pub t_end: Option<f64>,
    pub strict: bool,
}

/// Reads, parses and validates a config. Relative snapshot paths are made
/// absolute against the config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        ConfigError::Parse { source, .. } => ConfigError::Parse { path: path.to_path_buf(), source },
        other => other,
    })?;
    if let InitialSpec::Snapshot { path: snap } = &mut cfg.initial {
        if snap.is_relative() {
            *snap = path.parent().unwrap_or(Path::new(".")).join(&*snap);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses JSON text without validating.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: PathBuf::from("<text>"), source })
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(n) = o.nx {
            self.grid.nx = n;
            self.grid.ny = n;
        }
        if let Some(t) = o.t_end {
            self.t_end = t;
        }
        if o.strict {
            self.strict = true;
        }
    }

    pub fn grid(&self) -> Result<Grid, ConfigError> {
        Grid::new(self.grid.nx, self.grid.ny, self.grid.lx, self.grid.ly).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn phys_params(&self) -> PhysParams {
        self.physics.to_params()
    }

    pub fn reg_params(&self) -> RegParams {
        self.regularization.to_params()
    }

    pub fn run_plan(&self) -> RunPlan {
        RunPlan {
            dt_cap: self.dt_cap,
            slab_cap: self.slab_cap.unwrap_or(f64::INFINITY),
            picard_tol: self.picard_tol,
            picard_max: self.picard_max,
            cfl: CflPolicy::new(self.cfl).unwrap_or_default(),
            cg: CgSettings { tol_rel: self.cg_tol, max_iter: self.cg_max_iter },
            monitor: MonitorPolicy { tol: self.monitor_tol, mode: if self.strict { MonitorMode::FailFast } else { MonitorMode::Record } },
            max_bisections: self.max_bisections,
        }
    }

    /// Checks every field; the message names the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid()?;
        self.phys_params().validate().map_err(|e| invalid("physics", e.to_string()))?;
        self.reg_params().validate().map_err(|e| invalid("regularization", e.to_string()))?;
        if let GrowthSpec::Tanh { beta, .. } = self.physics.growth {
            if !beta.is_finite() {
                return Err(invalid("physics.growth.beta", "must be finite"));
            }
        }
        let checks: [(&str, f64, bool); 6] = [
            ("T", self.t_end, self.t_end >= 0.0 && self.t_end.is_finite()),
            ("dt_cap", self.dt_cap, self.dt_cap > 0.0 && self.dt_cap.is_finite()),
            ("cfl", self.cfl, self.cfl > 0.0 && self.cfl <= 1.0),
            ("picard_tol", self.picard_tol, self.picard_tol > 0.0),
            ("cg_tol", self.cg_tol, self.cg_tol > 0.0 && self.cg_tol < 1.0),
            ("monitor_tol", self.monitor_tol, self.monitor_tol >= 0.0),
        ];
        for (field, v, ok) in checks {
            if !ok {
                return Err(invalid(field, format!("value {v} out of range")));
            }
        }
        if let Some(c) = self.slab_cap {
            if !(c > 0.0) {
                return Err(invalid("slab_cap", format!("must be positive, got {c}")));
            }
        }
        if self.picard_max == 0 {
            return Err(invalid("picard_max", "must be at least 1"));
        }
        self.validate_initial()?;
        self.validate_studies()
    }

    fn validate_initial(&self) -> Result<(), ConfigError> {
        let h_pos = |field: &str, lo: f64| {
            if lo > 0.0 && lo.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("thickness lower bound must be > 0 (0 < h_lo <= h_in), got {lo}")))
            }
        };
        let a_unit = |field: &str, lo: f64, hi: f64| {
            if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
                Ok(())
            } else {
                Err(invalid(field, format!("compactness must lie in [0, 1] (0 <= A_in <= 1), got [{lo}, {hi}]")))
            }
        };
        match &self.initial {
            InitialSpec::Constant { u, h, a } => {
                h_pos("initial.h", *h)?;
                a_unit("initial.a", *a, *a)?;
                if !(u[0].is_finite() && u[1].is_finite()) {
                    return Err(invalid("initial.u", "must be finite"));
                }
            }
            InitialSpec::SingleMode { h0, h1, a0, a1, u0 } => {
                h_pos("initial.h0", h0 - h1.abs())?;
                a_unit("initial.a0", *a0, *a0)?;
                if !(a1.is_finite() && u0.is_finite()) {
                    return Err(invalid("initial", "amplitudes must be finite"));
                }
            }
            InitialSpec::RandomSmooth { h_range, a_range, u_amp, modes } => {
                if !(h_range[0] <= h_range[1]) {
                    return Err(invalid("initial.h_range", format!("need lo <= hi, got {h_range:?}")));
                }
                h_pos("initial.h_range", h_range[0])?;
                a_unit("initial.a_range", a_range[0], a_range[1])?;
                if !(u_amp.is_finite() && *u_amp >= 0.0) {
                    return Err(invalid("initial.u_amp", format!("must be finite and >= 0, got {u_amp}")));
                }
                if *modes == 0 {
                    return Err(invalid("initial.modes", "must be at least 1"));
                }
            }
            InitialSpec::Snapshot { path } => {
                if !path.exists() {
                    return Err(invalid("initial.path", format!("snapshot {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    fn validate_studies(&self) -> Result<(), ConfigError> {
        let s = &self.studies;
        if s.picard.picard_max < 2 || !(s.picard.picard_tol > 0.0) {
            return Err(invalid("studies.picard", "need picard_max >= 2 and picard_tol > 0"));
        }
        if s.continuation.entries < 2 || !(s.continuation.factor > 0.0 && s.continuation.factor <= 1.0) {
            return Err(invalid("studies.continuation", "need entries >= 2 and factor in (0, 1]"));
        }
        if s.continuation.base.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("studies.continuation.base", "relaxation parameters must be >= 0"));
        }
        if s.stability.deltas.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("studies.stability.deltas", "perturbation sizes must be > 0"));
        }
        Ok(())
    }

    /// Builds the initial state. Random families draw from `seed`.
    pub fn initial_state(&self) -> anyhow::Result<State> {
        let g = self.grid()?;
        let (kx, ky) = (2.0 * PI / g.lx(), 2.0 * PI / g.ly());
        let state = match &self.initial {
            InitialSpec::Constant { u, h, a } => State::new(VectorField::constant(g, *u), ScalarField::constant(g, *h), ScalarField::constant(g, *a), 0.0)?,
            InitialSpec::SingleMode { h0, h1, a0, a1, u0 } => {
                let s = move |x: f64, y: f64| (kx * x).sin() * (ky * y).sin();
                State::new(
                    VectorField::from_fn(g, |x, y| [u0 * (ky * y).sin(), u0 * (kx * x).sin()]),
                    ScalarField::from_fn(g, |x, y| h0 + h1 * s(x, y)),
                    ScalarField::from_fn(g, |x, y| (a0 + a1 * s(x, y)).clamp(0.0, 1.0)),
                    0.0,
                )?
            }
            InitialSpec::RandomSmooth { h_range, a_range, u_amp, modes } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let h = rescale(&random_smooth(g, *modes, &mut rng), h_range[0], h_range[1]);
                let a = rescale(&random_smooth(g, *modes, &mut rng), a_range[0], a_range[1]);
                let ux = normalize(&random_smooth(g, *modes, &mut rng), *u_amp);
                let uy = normalize(&random_smooth(g, *modes, &mut rng), *u_amp);
                State::new(VectorField::new(ux, uy), h, a, 0.0)?
            }
            InitialSpec::Snapshot { path } => {
                let s = snapshot::read_snapshot(path)?;
                if s.grid() != g {
                    anyhow::bail!("snapshot grid {:?} differs from the configured grid {:?}", s.grid(), g);
                }
                s
            }
        };
        Ok(state)
    }
}

/// Sum of Fourier modes with `|kx|, |ky| <= modes`, random phases and
/// amplitudes decaying like `1/(1 + |k|²)`.
pub fn random_smooth(g: Grid, modes: usize, rng: &mut ChaCha8Rng) -> ScalarField {
    let m = modes as i64;
    let mut terms = Vec::new();
    for i in -m..=m {
        for j in 0..=m {
            if j == 0 && i <= 0 {
                continue;
            }
            let amp: f64 = rng.random_range(-1.0..1.0) / (1.0 + (i * i + j * j) as f64);
            let phase: f64 = rng.random_range(0.0..2.0 * PI);
            terms.push((i as f64, j as f64, amp, phase));
        }
    }
    let (lx, ly) = (g.lx(), g.ly());
    ScalarField::from_fn(g, |x, y| terms.iter().map(|&(i, j, a, p)| a * (2.0 * PI * (i * x / lx + j * y / ly) + p).cos()).sum())
}

/// Affine map of `f` onto `[lo, hi]` (constant `lo` if `f` is constant).
pub fn rescale(f: &ScalarField, lo: f64, hi: f64) -> ScalarField {
    let (mn, mx) = (f.min(), f.max());
    if mx - mn <= 0.0 {
        return ScalarField::constant(f.grid(), lo);
    }
    f.map(|v| (lo + (hi - lo) * (v - mn) / (mx - mn)).clamp(lo, hi))
}

fn normalize(f: &ScalarField, amp: f64) -> ScalarField {
    let m = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        f.clone()
    } else {
        f.scale(amp / m)
    }
}
