//! Time stepping of the mild form on the torus, Picard iterates on frozen
//! noise, the ball-localized solution, and the constant-field counterexample.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corrkernel::{truncate, KernelSpec};
use crate::error::{domain, Error, Result};
use crate::fft::TorusFft;
use crate::noisegen::{fill_white, Colorer, Lattice};
use crate::rng::StreamKey;

/// Random lane feeding the space-time white noise.
pub const LANE_NOISE: u16 = 0;
/// Random lane feeding the Brownian motion of the counterexample.
pub const LANE_SDE: u16 = 2;

pub const BLOW_UP: f64 = 1e12;

/// Default ceiling on kernel-site products per localized pass.
pub const DEFAULT_PAIR_CAP: f64 = 2e10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Linear { slope: f64 },
    Affine { slope: f64, intercept: f64 },
    /// Piecewise linear through the samples, constant outside them.
    LipschitzTable { grid: Vec<f64>, values: Vec<f64> },
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        if let SigmaSpec::LipschitzTable { grid, values } = self {
            if grid.len() < 2 || grid.len() != values.len() {
                return domain("sigma table needs at least two samples and matching lengths");
            }
            if grid.windows(2).any(|w| !(w[1] > w[0])) {
                return domain("sigma table grid must be strictly increasing");
            }
            if values.iter().chain(grid).any(|v| !v.is_finite()) {
                return domain("sigma table entries must be finite");
            }
        }
        let l = self.lip();
        if !(l > 0.0 && l.is_finite()) {
            return domain(format!("sigma must have a positive finite Lipschitz constant, got {l}"));
        }
        Ok(())
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            SigmaSpec::Linear { slope } => slope * u,
            SigmaSpec::Affine { slope, intercept } => slope * u + intercept,
            SigmaSpec::LipschitzTable { grid, values } => {
                let n = grid.len();
                if u <= grid[0] {
                    return values[0];
                }
                if u >= grid[n - 1] {
                    return values[n - 1];
                }
                let i = grid.partition_point(|&g| g <= u) - 1;
                let t = (u - grid[i]) / (grid[i + 1] - grid[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            SigmaSpec::Linear { slope } | SigmaSpec::Affine { slope, .. } => slope.abs(),
            SigmaSpec::LipschitzTable { grid, values } => grid
                .windows(2)
                .zip(values.windows(2))
                .map(|(g, v)| ((v[1] - v[0]) / (g[1] - g[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn sigma0(&self) -> f64 {
        self.eval(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// `base + slope · x_1` with `x_1 ∈ [0, extent)`: not translation
    /// invariant, for negative controls.
    Ramp { base: f64, slope: f64 },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Constant { value: 1.0 }
    }
}

impl InitialData {
    pub fn field(&self, lattice: &Lattice) -> Vec<f64> {
        match *self {
            InitialData::Constant { value } => vec![value; lattice.sites()],
            InitialData::Ramp { base, slope } => (0..lattice.sites())
                .map(|i| base + slope * lattice.coords(i)[0] as f64 * lattice.dx())
                .collect(),
        }
    }

    pub fn sup(&self, lattice: &Lattice) -> f64 {
        self.field(lattice).iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Localization {
    /// Ball radius factor: the stochastic term at `(t, x)` sees `B_{m√t}(x)`.
    pub m: f64,
    /// Optional kernel truncation radius.
    #[serde(default)]
    pub r: Option<f64>,
}

fn default_scheme() -> String {
    "exponential_euler".into()
}

fn default_snapshots() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub kernel: KernelSpec,
    pub sigma: SigmaSpec,
    pub lattice: Lattice,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub u0: InitialData,
    #[serde(default = "default_scheme")]
    pub scheme: String,
    #[serde(default)]
    pub localization: Option<Localization>,
    /// Evenly spaced snapshots ending at `t_end`.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
}

impl SimConfig {
    pub fn new(kernel: KernelSpec, sigma: SigmaSpec, lattice: Lattice, dt: f64, t_end: f64) -> Self {
        Self {
            kernel,
            sigma,
            lattice,
            dt,
            t_end,
            u0: InitialData::default(),
            scheme: default_scheme(),
            localization: None,
            snapshots: 1,
        }
    }

    pub fn steps(&self) -> Result<usize> {
        step_count(self.dt, self.t_end)
    }

    /// Non-fatal remarks, such as kernel parameters outside the admissible range.
    pub fn warnings(&self) -> Vec<String> {
        self.kernel.findings()
    }

    /// `dt / dx²`; the spectral heat step is stable for any value.
    pub fn diffusion_number(&self) -> f64 {
        self.dt / self.lattice.dx().powi(2)
    }
}

/// Number of steps of size `dt` reaching `t_end` exactly.
pub fn step_count(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return domain(format!("dt must be positive, got {dt}"));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return domain(format!("t_end must be positive, got {t_end}"));
    }
    let j = (t_end / dt).round();
    if j < 1.0 || (j * dt - t_end).abs() > 1e-9 * t_end {
        return domain(format!("t_end = {t_end} is not a multiple of dt = {dt}"));
    }
    Ok(j as usize)
}

/// Exact flow `e^{τΔ/2}` of the lattice Laplacian on the torus, through its
/// Fourier multiplier. The symbol `(2/dx²) Σ (1 - cos κ dx)` equals `|κ|²`
/// up to `O(dx²)` and keeps the kernel positive and local.
#[derive(Clone, Debug)]
pub struct HeatSemigroup {
    lattice: Lattice,
    fft: TorusFft,
    /// Half the symbol per Fourier mode.
    half_k2: Vec<f64>,
}

impl HeatSemigroup {
    pub fn new(lattice: Lattice) -> Self {
        let dx = lattice.dx();
        let w = 2.0 * std::f64::consts::PI / lattice.n() as f64;
        let half_k2 = (0..lattice.sites())
            .map(|i| lattice.offset(i).iter().map(|&c| (1.0 - (c as f64 * w).cos()) / (dx * dx)).sum::<f64>())
            .collect();
        Self { fft: lattice.fft(), lattice, half_k2 }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn multiplier(&self, tau: f64) -> Vec<f64> {
        self.half_k2.iter().map(|k| (-k * tau).exp()).collect()
    }

    pub fn apply_multiplier(&self, field: &mut [f64], mult: &[f64]) {
        let mut c: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.fft.forward(&mut c);
        for (v, m) in c.iter_mut().zip(mult) {
            *v *= m;
        }
        self.fft.inverse(&mut c);
        for (f, v) in field.iter_mut().zip(&c) {
            *f = v.re;
        }
    }

    pub fn apply(&self, field: &mut [f64], tau: f64) {
        let m = self.multiplier(tau);
        self.apply_multiplier(field, &m);
    }

    /// Lattice kernel `K_τ` with `P_τ f(x) = Σ_y K_τ(x - y) f(y)`.
    pub fn kernel(&self, tau: f64) -> Vec<f64> {
        let c: Vec<Complex64> = self.multiplier(tau).into_iter().map(|m| Complex64::new(m, 0.0)).collect();
        self.fft.inverse_real(c)
    }
}

/// `u ← P_dt[u + σ(u) δη]`; `noise = None` runs the heat flow alone.
pub fn step_exponential_euler<S: Fn(f64) -> f64>(
    state: &mut [f64],
    noise: Option<&[f64]>,
    sigma: S,
    heat: &HeatSemigroup,
    mult: &[f64],
) {
    if let Some(eta) = noise {
        for (u, e) in state.iter_mut().zip(eta) {
            *u += sigma(*u) * e;
        }
    }
    heat.apply_multiplier(state, mult);
}

fn check_finite(field: &[f64], time: f64, step: usize) -> Result<()> {
    for (site, &v) in field.iter().enumerate() {
        if !v.is_finite() || v.abs() > BLOW_UP {
            return Err(Error::BlowUp { time, step, site, magnitude: v.abs() });
        }
    }
    Ok(())
}

/// Fields at snapshot times with the stream that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub seed: u64,
    pub replica: u64,
    pub scheme: String,
    pub lattice: Lattice,
    pub dt: f64,
}

impl Trajectory {
    pub fn final_field(&self) -> &[f64] {
        self.fields.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Everything but the fields.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "times": self.times,
            "seed": self.seed,
            "replica": self.replica,
            "scheme": self.scheme,
            "lattice": self.lattice,
            "dt": self.dt,
        })
    }
}

/// A time-stepping scheme selectable by name.
pub trait TimeScheme: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn run(&self, sim: &Simulator, seed: u64, replica: u64) -> Result<Trajectory>;
}

#[derive(Debug)]
pub struct ExponentialEuler;

impl TimeScheme for ExponentialEuler {
    fn name(&self) -> &'static str {
        "exponential_euler"
    }

    fn run(&self, sim: &Simulator, seed: u64, replica: u64) -> Result<Trajectory> {
        let j_total = sim.steps;
        let mut u = sim.cfg.u0.field(&sim.cfg.lattice);
        let mut eta = vec![0.0; u.len()];
        let mut out = sim.empty_trajectory(seed, replica, self.name());
        let marks = sim.snapshot_steps();
        for j in 0..j_total {
            sim.noise_into(seed, replica, j, &mut eta)?;
            step_exponential_euler(&mut u, Some(&eta), |x| sim.cfg.sigma.eval(x), &sim.heat, &sim.step_mult);
            check_finite(&u, (j + 1) as f64 * sim.cfg.dt, j + 1)?;
            if marks.contains(&(j + 1)) {
                out.times.push((j + 1) as f64 * sim.cfg.dt);
                out.fields.push(u.clone());
            }
        }
        Ok(out)
    }
}

/// Picard iteration on the whole path until it stops moving.
#[derive(Debug)]
pub struct PicardFixedTime;

impl TimeScheme for PicardFixedTime {
    fn name(&self) -> &'static str {
        "picard_fixed_time"
    }

    fn run(&self, sim: &Simulator, seed: u64, replica: u64) -> Result<Trajectory> {
        let mut path = sim.constant_path();
        for _ in 0..=sim.steps {
            let next = sim.picard_pass(seed, replica, &path)?;
            let delta = sup_gap(&path, &next);
            path = next;
            if delta == 0.0 {
                break;
            }
        }
        let mut out = sim.empty_trajectory(seed, replica, self.name());
        for j in sim.snapshot_steps() {
            out.times.push(j as f64 * sim.cfg.dt);
            out.fields.push(path[j].clone());
        }
        Ok(out)
    }
}

fn sup_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default)]
pub struct SchemeRegistry {
    schemes: BTreeMap<String, Arc<dyn TimeScheme>>,
}

impl SchemeRegistry {
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(ExponentialEuler));
        r.register(Arc::new(PicardFixedTime));
        r
    }

    pub fn register(&mut self, scheme: Arc<dyn TimeScheme>) {
        self.schemes.insert(scheme.name().to_string(), scheme);
    }

    pub fn names(&self) -> Vec<&str> {
        self.schemes.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn TimeScheme>> {
        self.schemes.get(name).cloned().ok_or_else(|| {
            Error::Config(format!("unknown scheme {name:?}; known: {}", self.names().join(", ")))
        })
    }
}

/// Picard diagnostics on one frozen noise realization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PicardReport {
    /// Field at the final time for iterates `0..=n`.
    pub iterates: Vec<Vec<f64>>,
    /// `Δ_n = sup |u_{n+1} - u_n|` over all times and sites.
    pub deltas: Vec<f64>,
}

impl PicardReport {
    /// Mean of `Δ_{n+1}/Δ_n` over `n ∈ [lo, hi]`, skipping exact zeros.
    pub fn mean_ratio(&self, lo: usize, hi: usize) -> Option<f64> {
        let r: Vec<f64> = (lo..=hi)
            .filter(|&n| n + 1 < self.deltas.len() && self.deltas[n] > 0.0)
            .map(|n| self.deltas[n + 1] / self.deltas[n])
            .collect();
        if r.is_empty() {
            None
        } else {
            Some(r.iter().sum::<f64>() / r.len() as f64)
        }
    }
}

/// Prepared configuration: sampled kernel, heat multipliers and scheme.
#[derive(Debug)]
pub struct Simulator {
    cfg: SimConfig,
    steps: usize,
    colorer: Colorer,
    heat: HeatSemigroup,
    step_mult: Vec<f64>,
    scheme: Arc<dyn TimeScheme>,
    pair_cap: f64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        Self::with_registry(cfg, &SchemeRegistry::builtin())
    }

    pub fn with_registry(cfg: SimConfig, registry: &SchemeRegistry) -> Result<Self> {
        let steps = cfg.steps()?;
        cfg.sigma.validate()?;
        if cfg.kernel.dimension() != cfg.lattice.dimension() {
            return domain("kernel and lattice dimensions differ");
        }
        if cfg.snapshots == 0 || cfg.snapshots > steps {
            return domain(format!("snapshots must lie in 1..={steps}"));
        }
        let kernel = match cfg.localization.and_then(|l| l.r) {
            Some(r) => truncate(&cfg.kernel, r)?,
            None => cfg.kernel.clone(),
        };
        let colorer = Colorer::from_spec(&kernel, cfg.lattice)?;
        let heat = HeatSemigroup::new(cfg.lattice);
        let step_mult = heat.multiplier(cfg.dt);
        let scheme = registry.get(&cfg.scheme)?;
        Ok(Self { cfg, steps, colorer, heat, step_mult, scheme, pair_cap: DEFAULT_PAIR_CAP })
    }

    pub fn with_pair_cap(mut self, cap: f64) -> Self {
        self.pair_cap = cap;
        self
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn colorer(&self) -> &Colorer {
        &self.colorer
    }

    pub fn heat(&self) -> &HeatSemigroup {
        &self.heat
    }

    fn snapshot_steps(&self) -> Vec<usize> {
        let s = self.cfg.snapshots;
        (1..=s).map(|k| (k * self.steps) / s).collect()
    }

    fn empty_trajectory(&self, seed: u64, replica: u64, scheme: &str) -> Trajectory {
        Trajectory {
            times: Vec::new(),
            fields: Vec::new(),
            seed,
            replica,
            scheme: scheme.to_string(),
            lattice: self.cfg.lattice,
            dt: self.cfg.dt,
        }
    }

    /// Colored increment of step `j` (covering `[j dt, (j+1) dt)`).
    pub fn noise(&self, seed: u64, replica: u64, step: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cfg.lattice.sites()];
        self.noise_into(seed, replica, step, &mut out)?;
        Ok(out)
    }

    fn noise_into(&self, seed: u64, replica: u64, step: usize, out: &mut [f64]) -> Result<()> {
        let key = StreamKey::new(seed, replica).at_step(step as u64).lane(LANE_NOISE);
        fill_white(&self.cfg.lattice, self.cfg.dt, key, out);
        let c = self.colorer.color(out)?;
        out.copy_from_slice(&c);
        Ok(())
    }

    /// Runs the configured scheme.
    pub fn simulate(&self, seed: u64, replica: u64) -> Result<Trajectory> {
        self.scheme.run(self, seed, replica)
    }

    fn constant_path(&self) -> Vec<Vec<f64>> {
        let u0 = self.cfg.u0.field(&self.cfg.lattice);
        vec![u0; self.steps + 1]
    }

    /// One Picard map on the whole path: `v_{j+1} = P_dt[v_j + σ(u_j) η_j]`, `v_0 = u_0`.
    fn picard_pass(&self, seed: u64, replica: u64, path: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut v = self.cfg.u0.field(&self.cfg.lattice);
        let mut out = Vec::with_capacity(self.steps + 1);
        out.push(v.clone());
        let mut eta = vec![0.0; v.len()];
        for j in 0..self.steps {
            self.noise_into(seed, replica, j, &mut eta)?;
            for ((x, e), u) in v.iter_mut().zip(&eta).zip(&path[j]) {
                *x += self.cfg.sigma.eval(*u) * e;
            }
            self.heat.apply_multiplier(&mut v, &self.step_mult);
            check_finite(&v, (j + 1) as f64 * self.cfg.dt, j + 1)?;
            out.push(v.clone());
        }
        Ok(out)
    }

    /// Iterates `u_0 ≡ u0, u_1, …, u_n` at `t_end` and their sup-norm gaps.
    pub fn picard_iterates(&self, seed: u64, replica: u64, n_iters: usize) -> Result<PicardReport> {
        let mut path = self.constant_path();
        let mut iterates = vec![path[self.steps].clone()];
        let mut deltas = Vec::with_capacity(n_iters);
        for _ in 0..n_iters {
            let next = self.picard_pass(seed, replica, &path)?;
            deltas.push(sup_gap(&path, &next));
            iterates.push(next[self.steps].clone());
            path = next;
        }
        Ok(PicardReport { iterates, deltas })
    }

    fn localization(&self) -> Result<Localization> {
        self.cfg
            .localization
            .ok_or_else(|| Error::Config("localized runs need a localization section".into()))
    }

    /// Lattice offsets within `radius` (minimum image), as index shifts per site.
    fn ball(&self, radius: f64) -> Vec<Vec<i64>> {
        let l = &self.cfg.lattice;
        (0..l.sites())
            .filter(|&i| l.radius(i) <= radius * (1.0 + 1e-12))
            .map(|i| l.offset(i))
            .collect()
    }

    /// Path of the ball-localized mild form. `source` gives the field fed to
    /// σ at step `i`; `None` makes the recursion self-consistent.
    fn localized_path(&self, seed: u64, replica: u64, m: f64, source: Option<&[Vec<f64>]>) -> Result<Vec<Vec<f64>>> {
        let l = &self.cfg.lattice;
        let s = l.sites();
        let dt = self.cfg.dt;
        let j_total = self.steps;
        let max_ball = self.ball(m * (self.cfg.t_end).sqrt()).len() as f64;
        let cost = 0.5 * (j_total * j_total) as f64 * s as f64 * max_ball;
        if cost > self.pair_cap {
            return Err(Error::CostGuard(format!(
                "localized pass needs about {cost:.3e} kernel-site products, cap is {:.3e}",
                self.pair_cap
            )));
        }
        let kernels: Vec<Vec<f64>> = (0..=j_total).map(|k| self.heat.kernel(k as f64 * dt)).collect();
        let coords: Vec<Vec<i64>> = (0..s).map(|i| l.coords(i).into_iter().map(|c| c as i64).collect()).collect();
        let u0 = self.cfg.u0.field(l);
        let mut path: Vec<Vec<f64>> = Vec::with_capacity(j_total + 1);
        let mut drives: Vec<Vec<f64>> = Vec::with_capacity(j_total);
        path.push(u0.clone());
        let mut eta = vec![0.0; s];
        let mut shifted = vec![0i64; l.dimension().get()];
        for j in 1..=j_total {
            let i = j - 1;
            self.noise_into(seed, replica, i, &mut eta)?;
            let src = match source {
                Some(p) => &p[i],
                None => &path[i],
            };
            drives.push(src.iter().zip(&eta).map(|(u, e)| self.cfg.sigma.eval(*u) * e).collect());
            let mut u = u0.clone();
            self.heat.apply(&mut u, j as f64 * dt);
            let ball = self.ball(m * (j as f64 * dt).sqrt());
            for (x, ux) in u.iter_mut().enumerate() {
                let mut acc = 0.0;
                for off in &ball {
                    for (a, c) in shifted.iter_mut().enumerate() {
                        *c = coords[x][a] - off[a];
                    }
                    let y = l.index(&shifted);
                    let kidx = l.index(off);
                    for (ii, g) in drives.iter().enumerate() {
                        acc += kernels[j - ii][kidx] * g[y];
                    }
                }
                *ux += acc;
            }
            check_finite(&u, j as f64 * dt, j)?;
            path.push(u);
        }
        Ok(path)
    }

    /// `u^(m,h)` (or `u^(m,h_r)` when the localization names a truncation).
    pub fn simulate_localized(&self, seed: u64, replica: u64) -> Result<Trajectory> {
        let loc = self.localization()?;
        let path = self.localized_path(seed, replica, loc.m, None)?;
        let mut out = self.empty_trajectory(seed, replica, "localized");
        for j in self.snapshot_steps() {
            out.times.push(j as f64 * self.cfg.dt);
            out.fields.push(path[j].clone());
        }
        Ok(out)
    }

    /// `u_n^(m,h_r)` at `t_end`; `n = 0` is the initial field.
    pub fn picard_localized(&self, seed: u64, replica: u64, n: usize) -> Result<Vec<f64>> {
        let loc = self.localization()?;
        let mut path = self.constant_path();
        for _ in 0..n {
            path = self.localized_path(seed, replica, loc.m, Some(&path))?;
        }
        Ok(path.pop().expect("path holds t_end"))
    }

    /// Separation beyond which `u_n^(m,h_r)` values draw on disjoint white-noise cells.
    pub fn independence_radius(&self, n: usize) -> Result<f64> {
        let loc = self.localization()?;
        let r = loc
            .r
            .or_else(|| self.cfg.kernel.support_radius())
            .ok_or_else(|| Error::Config("independence needs a truncation radius".into()))?;
        Ok(2.0 * n as f64 * (r + loc.m * self.cfg.t_end.sqrt()))
    }
}

/// Euler–Maruyama for `dX = λσ(X) dW`, `X_0 = 1`, reported on `t_grid`.
pub fn counterexample_sde(lambda: f64, sigma: &SigmaSpec, t_grid: &[f64], max_substep: f64, key: StreamKey) -> Result<Vec<f64>> {
    if !(lambda > 0.0) {
        return domain(format!("λ must be positive, got {lambda}"));
    }
    if !(max_substep > 0.0) {
        return domain("substep must be positive");
    }
    if t_grid.iter().any(|t| !(*t >= 0.0)) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("time grid must be nonnegative and strictly increasing");
    }
    let mut rng = key.lane(LANE_SDE).rng();
    let mut x = 1.0f64;
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut step = 0usize;
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let k = (span / max_substep).ceil() as usize;
            let h = span / k as f64;
            let sd = h.sqrt();
            for _ in 0..k {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += lambda * sigma.eval(x) * sd * z;
                step += 1;
                if !x.is_finite() || x.abs() > BLOW_UP {
                    return Err(Error::BlowUp { time: t + h, step, site: 0, magnitude: x.abs() });
                }
            }
        }
        t = target;
        out.push(x);
    }
    Ok(out)
}

/// The spatially constant field `u(t, ·) = X_t`.
pub fn counterexample_field(lattice: &Lattice, x: f64) -> Vec<f64> {
    vec![x; lattice.sites()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::Dimension;
    use rayon::prelude::*;

    fn bump_cfg(n: usize, dx: f64, dt: f64, t_end: f64, sigma: SigmaSpec) -> SimConfig {
        let lattice = Lattice::new(Dimension::ONE, n, dx).unwrap();
        let kernel = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        SimConfig::new(kernel, sigma, lattice, dt, t_end)
    }

    #[test]
    fn sigma_forms() {
        let t = SigmaSpec::LipschitzTable { grid: vec![0.0, 1.0, 3.0], values: vec![0.0, 2.0, 1.0] };
        t.validate().unwrap();
        assert_eq!(t.lip(), 2.0);
        assert_eq!(t.eval(0.5), 1.0);
        assert_eq!(t.eval(5.0), 1.0);
        assert_eq!(t.sigma0(), 0.0);
        let a = SigmaSpec::Affine { slope: -0.5, intercept: 1.0 };
        assert_eq!((a.lip(), a.sigma0()), (0.5, 1.0));
        assert!(SigmaSpec::Linear { slope: 0.0 }.validate().is_err());
        let toml_like = serde_json::json!({"form": "affine", "slope": 1.0, "intercept": 0.5});
        let s: SigmaSpec = serde_json::from_value(toml_like).unwrap();
        assert_eq!(s, SigmaSpec::Affine { slope: 1.0, intercept: 0.5 });
    }

    #[test]
    fn heat_flow_fixes_constants_and_mass() {
        let l = Lattice::new(Dimension::TWO, 16, 0.5).unwrap();
        let heat = HeatSemigroup::new(l);
        let mult = heat.multiplier(0.1);
        let mut u = vec![1.0; l.sites()];
        for _ in 0..20 {
            step_exponential_euler(&mut u, None, |_| 0.0, &heat, &mult);
        }
        assert!(u.iter().all(|&v| v == 1.0));
        let mut spike = vec![0.0; l.sites()];
        spike[37] = 1.0 / l.cell_volume();
        let mass0: f64 = spike.iter().sum();
        for _ in 0..20 {
            step_exponential_euler(&mut spike, None, |_| 0.0, &heat, &mult);
        }
        let mass: f64 = spike.iter().sum();
        assert!((mass - mass0).abs() < 1e-12 * mass0);
    }

    #[test]
    fn heat_kernel_semigroup_and_continuum_limit() {
        let l = Lattice::new(Dimension::ONE, 256, 0.05).unwrap();
        let heat = HeatSemigroup::new(l);
        let k = heat.kernel(0.2);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.iter().all(|&v| v > -1e-15));
        // Per unit length the lattice kernel approaches p_t, to O(dx²).
        let p = crate::kernels::heat_kernel_radial(0.2, 0.5, Dimension::ONE).unwrap();
        assert!((k[10] / l.dx() - p).abs() < 5e-3 * p);
        let far = 120;
        assert!(k[far].abs() < 1e-15);
        let mut a = k.clone();
        heat.apply(&mut a, 0.3);
        let b = heat.kernel(0.5);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = bump_cfg(64, 0.25, 0.01, 0.1, SigmaSpec::Linear { slope: 1.0 });
        let sim = Simulator::new(cfg).unwrap();
        let a = sim.simulate(42, 3).unwrap();
        let b = sim.simulate(42, 3).unwrap();
        assert_eq!(a, b);
        let c = sim.simulate(42, 4).unwrap();
        assert_ne!(a.final_field(), c.final_field());
    }

    #[test]
    fn anderson_mean_stays_one() {
        let cfg = bump_cfg(64, 0.25, 0.01, 0.5, SigmaSpec::Linear { slope: 1.0 });
        let sim = Simulator::new(cfg).unwrap();
        let m = 10_000u64;
        let vals: Vec<f64> = (0..m).into_par_iter().map(|r| sim.simulate(1, r).unwrap().final_field()[7]).collect();
        let mean = vals.iter().sum::<f64>() / m as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn picard_limit_matches_euler() {
        let cfg = bump_cfg(32, 0.25, 0.02, 0.2, SigmaSpec::Affine { slope: 0.8, intercept: 0.3 });
        let sim = Simulator::new(cfg.clone()).unwrap();
        let rep = sim.picard_iterates(5, 0, 14).unwrap();
        assert!(rep.iterates[0].iter().all(|&v| v == 1.0));
        assert!(rep.mean_ratio(3, 8).unwrap() < 1.0);
        let euler = sim.simulate(5, 0).unwrap();
        let last = rep.iterates.last().unwrap();
        for (a, b) in last.iter().zip(euler.final_field()) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut pc = cfg;
        pc.scheme = "picard_fixed_time".into();
        let p = Simulator::new(pc).unwrap().simulate(5, 0).unwrap();
        for (a, b) in p.final_field().iter().zip(euler.final_field()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unknown_scheme_rejected() {
        let mut cfg = bump_cfg(16, 0.5, 0.1, 0.2, SigmaSpec::Linear { slope: 1.0 });
        cfg.scheme = "crank_nicolson".into();
        assert!(matches!(Simulator::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn huge_ball_reproduces_full_solution() {
        let mut cfg = bump_cfg(32, 0.5, 0.05, 0.25, SigmaSpec::Linear { slope: 1.0 });
        // Covers the torus from the first step on.
        let m = cfg.lattice.extent() / cfg.dt.sqrt();
        cfg.localization = Some(Localization { m, r: None });
        let sim = Simulator::new(cfg).unwrap();
        let full = sim.simulate(8, 2).unwrap();
        let loc = sim.simulate_localized(8, 2).unwrap();
        for (a, b) in full.final_field().iter().zip(loc.final_field()) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn cost_guard_refuses_large_localized_runs() {
        let mut cfg = bump_cfg(64, 0.25, 0.01, 0.5, SigmaSpec::Linear { slope: 1.0 });
        cfg.localization = Some(Localization { m: 2.0, r: None });
        let sim = Simulator::new(cfg).unwrap().with_pair_cap(1e3);
        assert!(matches!(sim.simulate_localized(0, 0), Err(Error::CostGuard(_))));
    }

    #[test]
    fn localized_picard_zero_is_one_and_gap_shrinks() {
        let mut cfg = bump_cfg(32, 0.5, 0.05, 0.25, SigmaSpec::Linear { slope: 1.0 });
        cfg.localization = Some(Localization { m: 2.0, r: Some(1.0) });
        let sim = Simulator::new(cfg).unwrap();
        assert!(sim.picard_localized(1, 0, 0).unwrap().iter().all(|&v| v == 1.0));
        let limit = sim.simulate_localized(1, 0).unwrap().final_field().to_vec();
        let gaps: Vec<f64> = (1..=4)
            .map(|n| {
                let u = sim.picard_localized(1, 0, n).unwrap();
                u.iter().zip(&limit).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn blow_up_detected() {
        let mut cfg = bump_cfg(16, 0.5, 0.1, 2.0, SigmaSpec::Linear { slope: 1e7 });
        cfg.u0 = InitialData::Constant { value: 1.0 };
        let sim = Simulator::new(cfg).unwrap();
        assert!(matches!(sim.simulate(0, 0), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn counterexample_vacuous_and_variance() {
        let key = StreamKey::new(3, 0);
        let flat = SigmaSpec::Affine { slope: 1.0, intercept: -1.0 };
        let x = counterexample_sde(1.0, &flat, &[0.5, 1.0], 1e-3, key).unwrap();
        assert_eq!(x, vec![1.0, 1.0]);
        let lin = SigmaSpec::Linear { slope: 1.0 };
        let m = 100_000u64;
        let xs: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|r| counterexample_sde(1.0, &lin, &[1.0], 1e-3, StreamKey::new(11, r)).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / m as f64;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = dev.iter().sum::<f64>() / (m - 1) as f64;
        let var_se = (dev.iter().map(|d| (d - var).powi(2)).sum::<f64>() / (m as f64 * (m - 1) as f64)).sqrt();
        let exact = std::f64::consts::E - 1.0;
        assert!((var - exact).abs() < 3.0 * var_se, "{var} ± {var_se}");
        let l = Lattice::new(Dimension::ONE, 8, 1.0).unwrap();
        assert!(counterexample_field(&l, 2.5).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = bump_cfg(64, 0.25, 0.01, 0.1, SigmaSpec::Linear { slope: 1.0 });
        cfg.localization = Some(Localization { m: 2.0, r: Some(1.5) });
        cfg.u0 = InitialData::Ramp { base: 1.0, slope: 0.1 };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.diffusion_number() > 0.0);
        let mut bad = cfg;
        bad.t_end = 0.105;
        assert!(bad.steps().is_err());
    }
}
