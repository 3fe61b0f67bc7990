//! Spatial occupation averages, replica variances, decay fits and
//! stationarity diagnostics.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::gauges::closed_form_rate;
use crate::noisegen::Lattice;
use crate::rng::StreamKey;
use crate::solver::{counterexample_sde, InitialData, SigmaSpec, SimConfig, Simulator, Trajectory};
use crate::stats::{self, LineFit};

pub const MAX_FACTORS: usize = 4;
pub const MIN_REPLICAS: usize = 100;
pub const MIN_STATIONARITY_REPLICAS: usize = 1000;
/// Lane for i.i.d. oracle fields.
const LANE_IID: u16 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum GSpec {
    Identity,
    /// `clamp(u, lo, hi)`.
    ClippedLinear { lo: f64, hi: f64 },
    /// Piecewise linear through the samples, constant outside them.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl GSpec {
    fn as_sigma(&self) -> Option<SigmaSpec> {
        match self {
            GSpec::Tabulated { grid, values } => Some(SigmaSpec::LipschitzTable { grid: grid.clone(), values: values.clone() }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GSpec::Identity => Ok(()),
            GSpec::ClippedLinear { lo, hi } => {
                if lo < hi {
                    Ok(())
                } else {
                    domain(format!("clipped g needs lo < hi, got [{lo}, {hi}]"))
                }
            }
            GSpec::Tabulated { .. } => self.as_sigma().expect("tabulated").validate(),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match self {
            GSpec::Identity => u,
            GSpec::ClippedLinear { lo, hi } => u.clamp(*lo, *hi),
            GSpec::Tabulated { grid, values } => {
                SigmaSpec::LipschitzTable { grid: grid.clone(), values: values.clone() }.eval(u)
            }
        }
    }

    pub fn lip(&self) -> f64 {
        match self {
            GSpec::Identity | GSpec::ClippedLinear { .. } => 1.0,
            GSpec::Tabulated { .. } => self.as_sigma().expect("tabulated").lip(),
        }
    }
}

fn default_normalize() -> bool {
    false
}

/// `∏_j g_j(u(x + ζ^j))` averaged over the window `[0, N]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSpec {
    pub g: Vec<GSpec>,
    /// Lattice vectors, one per factor.
    pub shifts: Vec<Vec<i64>>,
    /// Window side in physical units.
    pub window: f64,
    /// Replace each `g` by `(g - g(0)) / Lip(g)`.
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

impl ObservableSpec {
    pub fn identity(window: f64, d: usize) -> Self {
        Self { g: vec![GSpec::Identity], shifts: vec![vec![0; d]], window, normalize: false }
    }

    pub fn with_window(&self, window: f64) -> Self {
        Self { window, ..self.clone() }
    }

    pub fn k(&self) -> usize {
        self.g.len()
    }

    /// Every offending field, empty when usable on `lattice`.
    pub fn findings(&self, lattice: &Lattice) -> Vec<String> {
        let mut out = Vec::new();
        let d = lattice.dimension().get();
        if self.g.is_empty() || self.g.len() > MAX_FACTORS {
            out.push(format!("observable.g: need 1..={MAX_FACTORS} factors, got {}", self.g.len()));
        }
        if self.shifts.len() != self.g.len() {
            out.push(format!("observable.shifts: need one shift per factor ({}), got {}", self.g.len(), self.shifts.len()));
        }
        for (j, g) in self.g.iter().enumerate() {
            if let Err(e) = g.validate() {
                out.push(format!("observable.g[{j}]: {e}"));
            }
        }
        for (j, z) in self.shifts.iter().enumerate() {
            if z.len() != d {
                out.push(format!("observable.shifts[{j}]: expected {d} components"));
                continue;
            }
            let len = z.iter().map(|&c| (c as f64 * lattice.dx()).powi(2)).sum::<f64>().sqrt();
            if len > lattice.extent() / 4.0 {
                out.push(format!("observable.shifts[{j}]: |ζ| = {len} exceeds extent/4 = {}", lattice.extent() / 4.0));
            }
        }
        if !(self.window > 0.0) || self.window > lattice.extent() / 2.0 {
            out.push(format!(
                "observable.window: N = {} must lie in (0, extent/2 = {}]",
                self.window,
                lattice.extent() / 2.0
            ));
        }
        out
    }

    fn factor(&self, j: usize, u: f64) -> f64 {
        let g = &self.g[j];
        if self.normalize {
            (g.eval(u) - g.eval(0.0)) / g.lip()
        } else {
            g.eval(u)
        }
    }

    fn cells(&self, lattice: &Lattice) -> usize {
        ((self.window / lattice.dx()).round() as usize).max(1)
    }
}

/// Window average anchored at the lattice origin.
pub fn occupation_average(field: &[f64], lattice: &Lattice, obs: &ObservableSpec) -> Result<f64> {
    let anchor = vec![0; lattice.dimension().get()];
    occupation_average_at(field, lattice, obs, &anchor)
}

/// Window average over `anchor + [0, N]^d`.
pub fn occupation_average_at(field: &[f64], lattice: &Lattice, obs: &ObservableSpec, anchor: &[i64]) -> Result<f64> {
    let f = obs.findings(lattice);
    if !f.is_empty() {
        return domain(f.join("; "));
    }
    if field.len() != lattice.sites() {
        return domain("field does not match the lattice");
    }
    let d = lattice.dimension().get();
    let w = obs.cells(lattice);
    let count = w.pow(d as u32);
    let mut coord = vec![0i64; d];
    let mut shifted = vec![0i64; d];
    let mut acc = 0.0;
    for c in 0..count {
        let mut rest = c;
        for a in (0..d).rev() {
            coord[a] = anchor[a] + (rest % w) as i64;
            rest /= w;
        }
        let mut prod = 1.0;
        for (j, z) in obs.shifts.iter().enumerate() {
            for a in 0..d {
                shifted[a] = coord[a] + z[a];
            }
            prod *= obs.factor(j, field[lattice.index(&shifted)]);
        }
        acc += prod;
    }
    Ok(acc / count as f64)
}

/// A source of replica fields at fixed times, selectable by name.
pub trait FieldEnsemble: Send + Sync {
    fn name(&self) -> &'static str;
    fn lattice(&self) -> Lattice;
    fn times(&self) -> Vec<f64>;
    /// One field per entry of `times()`.
    fn sample(&self, seed: u64, replica: u64) -> Result<Vec<Vec<f64>>>;
}

pub struct SheEnsemble {
    sim: Simulator,
}

impl SheEnsemble {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        Ok(Self { sim: Simulator::new(cfg)? })
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }
}

fn snapshot_times(cfg: &SimConfig) -> Result<Vec<f64>> {
    let steps = cfg.steps()?;
    let s = cfg.snapshots;
    Ok((1..=s).map(|k| ((k * steps) / s) as f64 * cfg.dt).collect())
}

impl FieldEnsemble for SheEnsemble {
    fn name(&self) -> &'static str {
        "she"
    }

    fn lattice(&self) -> Lattice {
        self.sim.config().lattice
    }

    fn times(&self) -> Vec<f64> {
        snapshot_times(self.sim.config()).expect("validated")
    }

    fn sample(&self, seed: u64, replica: u64) -> Result<Vec<Vec<f64>>> {
        Ok(self.sim.simulate(seed, replica)?.fields)
    }
}

/// Independent standard normal cells: the central-limit oracle.
pub struct WhiteEnsemble {
    lattice: Lattice,
    times: Vec<f64>,
}

impl WhiteEnsemble {
    pub fn new(lattice: Lattice, times: Vec<f64>) -> Self {
        Self { lattice, times }
    }
}

impl FieldEnsemble for WhiteEnsemble {
    fn name(&self) -> &'static str {
        "white"
    }

    fn lattice(&self) -> Lattice {
        self.lattice
    }

    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn sample(&self, seed: u64, replica: u64) -> Result<Vec<Vec<f64>>> {
        Ok((0..self.times.len())
            .map(|k| {
                let mut rng = StreamKey::new(seed, replica).at_step(k as u64).lane(LANE_IID).rng();
                (0..self.lattice.sites()).map(|_| StandardNormal.sample(&mut rng)).collect()
            })
            .collect())
    }
}

/// Spatially constant fields `u(t, x) = X_t`.
pub struct CounterexampleEnsemble {
    lattice: Lattice,
    times: Vec<f64>,
    lambda: f64,
    sigma: SigmaSpec,
    substep: f64,
}

impl CounterexampleEnsemble {
    pub fn new(lattice: Lattice, times: Vec<f64>, lambda: f64, sigma: SigmaSpec, substep: f64) -> Result<Self> {
        sigma.validate()?;
        if !(lambda > 0.0) {
            return domain(format!("λ must be positive, got {lambda}"));
        }
        Ok(Self { lattice, times, lambda, sigma, substep })
    }
}

impl FieldEnsemble for CounterexampleEnsemble {
    fn name(&self) -> &'static str {
        "counterexample"
    }

    fn lattice(&self) -> Lattice {
        self.lattice
    }

    fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    fn sample(&self, seed: u64, replica: u64) -> Result<Vec<Vec<f64>>> {
        let xs = counterexample_sde(self.lambda, &self.sigma, &self.times, self.substep, StreamKey::new(seed, replica))?;
        Ok(xs.into_iter().map(|x| vec![x; self.lattice.sites()]).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleOptions {
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "default_substep")]
    pub substep: f64,
    /// Slope of the non-stationary initial ramp.
    #[serde(default = "default_ramp")]
    pub ramp_slope: f64,
}

fn one() -> f64 {
    1.0
}

fn default_substep() -> f64 {
    1e-3
}

fn default_ramp() -> f64 {
    0.1
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { lambda: 1.0, substep: default_substep(), ramp_slope: default_ramp() }
    }
}

pub type EnsembleBuilder = fn(&SimConfig, &EnsembleOptions) -> Result<Arc<dyn FieldEnsemble>>;

#[derive(Clone, Default)]
pub struct EnsembleRegistry {
    builders: BTreeMap<String, EnsembleBuilder>,
}

impl EnsembleRegistry {
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register("she", |cfg, _| Ok(Arc::new(SheEnsemble::new(cfg.clone())?)));
        r.register("white", |cfg, _| Ok(Arc::new(WhiteEnsemble::new(cfg.lattice, snapshot_times(cfg)?))));
        r.register("counterexample", |cfg, o| {
            Ok(Arc::new(CounterexampleEnsemble::new(cfg.lattice, snapshot_times(cfg)?, o.lambda, cfg.sigma.clone(), o.substep)?))
        });
        r.register("ramp", |cfg, o| {
            let mut c = cfg.clone();
            let base = match cfg.u0 {
                InitialData::Constant { value } => value,
                InitialData::Ramp { base, .. } => base,
            };
            c.u0 = InitialData::Ramp { base, slope: o.ramp_slope };
            Ok(Arc::new(SheEnsemble::new(c)?))
        });
        r
    }

    pub fn register(&mut self, name: &str, builder: EnsembleBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, cfg: &SimConfig, opts: &EnsembleOptions) -> Result<Arc<dyn FieldEnsemble>> {
        let b = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!("unknown ensemble {name:?}; known: {}", self.names().join(", ")))
        })?;
        b(cfg, opts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceRow {
    pub t: f64,
    pub n: f64,
    pub variance: f64,
    pub se: f64,
    pub replicas: usize,
    pub mean: f64,
    pub mean_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceReport {
    pub ensemble: String,
    pub rows: Vec<VarianceRow>,
}

impl VarianceReport {
    pub fn times(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.rows.iter().map(|r| r.t).collect();
        t.dedup();
        t
    }

    pub fn at_time(&self, t: f64) -> Vec<&VarianceRow> {
        self.rows.iter().filter(|r| r.t == t).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,N,variance,se,replicas")?;
        for r in &self.rows {
            writeln!(w, "{:e},{:e},{:e},{:e},{}", r.t, r.n, r.variance, r.se, r.replicas)?;
        }
        Ok(())
    }

    /// Rows plus one decay fit per time (fits that cannot be formed are omitted).
    pub fn summary(&self) -> serde_json::Value {
        let fits: Vec<serde_json::Value> = self
            .times()
            .into_iter()
            .filter_map(|t| decay_fit_at(self, t).ok().map(|f| serde_json::json!({"t": t, "fit": f})))
            .collect();
        serde_json::json!({"ensemble": self.ensemble, "rows": self.rows, "fits": fits})
    }
}

/// Occupation-average variance across replicas, coupled across windows.
pub fn ensemble_variance(
    ensemble: &dyn FieldEnsemble,
    obs: &ObservableSpec,
    windows: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<VarianceReport> {
    if replicas < MIN_REPLICAS {
        return Err(Error::InsufficientSamples { needed: MIN_REPLICAS, got: replicas });
    }
    let lattice = ensemble.lattice();
    for &n in windows {
        let f = obs.with_window(n).findings(&lattice);
        if !f.is_empty() {
            return domain(f.join("; "));
        }
    }
    let times = ensemble.times();
    let per: Vec<Vec<f64>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let fields = ensemble.sample(seed, r)?;
            let mut out = Vec::with_capacity(times.len() * windows.len());
            for f in &fields {
                for &n in windows {
                    out.push(occupation_average(f, &lattice, &obs.with_window(n))?);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        for (ni, &n) in windows.iter().enumerate() {
            let col: Vec<f64> = per.iter().map(|v| v[ti * windows.len() + ni]).collect();
            let (variance, se) = stats::variance_jackknife(&col)?;
            let (mean, mean_se) = stats::mean_se(&col);
            rows.push(VarianceRow { t, n, variance, se, replicas, mean, mean_se });
        }
    }
    Ok(VarianceReport { ensemble: ensemble.name().to_string(), rows })
}

fn log_data(rows: &[&VarianceRow]) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    let mut ns: Vec<f64> = rows.iter().map(|r| r.n).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    if ns.len() < 4 {
        return domain(format!("decay fit needs at least 4 distinct N, got {}", ns.len()));
    }
    if rows.iter().any(|r| !(r.variance > 0.0 && r.variance.is_finite())) {
        return domain("decay fit needs strictly positive variances");
    }
    let y = rows.iter().map(|r| r.variance.ln()).collect();
    let w = if rows.iter().all(|r| r.se > 0.0) {
        Some(rows.iter().map(|r| (r.variance / r.se).powi(2)).collect())
    } else {
        None
    };
    Ok((rows.iter().map(|r| r.n.ln()).collect(), y, w))
}

/// Weighted fit of `log variance` on `log N`.
pub fn decay_fit(rows: &[&VarianceRow]) -> Result<LineFit> {
    let (x, y, w) = log_data(rows)?;
    stats::weighted_line(&x, &y, w.as_deref())
}

pub fn decay_fit_at(report: &VarianceReport, t: f64) -> Result<LineFit> {
    decay_fit(&report.at_time(t))
}

/// Fit of `log variance` on `log closed_form_rate(N)`; slope near 1 is a rate match.
pub fn rate_match_fit(rows: &[&VarianceRow], d: usize, beta: f64) -> Result<LineFit> {
    let (_, y, w) = log_data(rows)?;
    let x = rows.iter().map(|r| closed_form_rate(r.n, d, beta).map(f64::ln)).collect::<Result<Vec<_>>>()?;
    stats::weighted_line(&x, &y, w.as_deref())
}

/// Variances against `c · bound(N)`, `c` calibrated at the smallest window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Envelope {
    pub constant: f64,
    pub n: Vec<f64>,
    pub variance: Vec<f64>,
    pub scaled_bound: Vec<f64>,
    pub all_below: bool,
}

pub fn calibrate_envelope(rows: &[&VarianceRow], bound: impl Fn(f64) -> Result<f64>) -> Result<Envelope> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| a.n.total_cmp(&b.n));
    let first = rows.first().ok_or_else(|| Error::Domain("no rows to calibrate".into()))?;
    let b0 = bound(first.n)?;
    if !(b0 > 0.0 && b0.is_finite()) {
        return domain(format!("bound at N = {} is not a positive number: {b0}", first.n));
    }
    let constant = first.variance / b0;
    let scaled = rows.iter().map(|r| Ok(constant * bound(r.n)?)).collect::<Result<Vec<f64>>>()?;
    let all_below = rows.iter().zip(&scaled).all(|(r, s)| r.variance <= *s * (1.0 + 1e-12));
    Ok(Envelope {
        constant,
        n: rows.iter().map(|r| r.n).collect(),
        variance: rows.iter().map(|r| r.variance).collect(),
        scaled_bound: scaled,
        all_below,
    })
}

/// Largest standardized paired discrepancy between one-point moments and
/// nearest-neighbour products at the origin and at each lag.
pub fn stationarity_test(fields: &[Vec<f64>], lattice: &Lattice, lags: &[Vec<i64>]) -> Result<f64> {
    if fields.len() < MIN_STATIONARITY_REPLICAS {
        return Err(Error::InsufficientSamples { needed: MIN_STATIONARITY_REPLICAS, got: fields.len() });
    }
    let d = lattice.dimension().get();
    if lags.iter().any(|l| l.len() != d) {
        return domain(format!("lags must have {d} components"));
    }
    let origin = vec![0i64; d];
    let mut step = vec![0i64; d];
    step[0] = 1;
    let add = |a: &[i64], b: &[i64]| -> Vec<i64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
    let x0 = lattice.index(&origin);
    let x1 = lattice.index(&step);
    let mut worst: f64 = 0.0;
    for lag in lags {
        let y0 = lattice.index(lag);
        let y1 = lattice.index(&add(lag, &step));
        let stats_for = |f: &dyn Fn(&[f64]) -> f64| -> f64 {
            let diffs: Vec<f64> = fields.iter().map(|u| f(u)).collect();
            let (m, se) = stats::mean_se(&diffs);
            if m == 0.0 {
                0.0
            } else if se == 0.0 {
                f64::INFINITY
            } else {
                (m / se).abs()
            }
        };
        worst = worst
            .max(stats_for(&|u| u[x0] - u[y0]))
            .max(stats_for(&|u| u[x0] * u[x0] - u[y0] * u[y0]))
            .max(stats_for(&|u| u[x0] * u[x1] - u[y0] * u[y1]));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NBetaEstimate {
    pub value: f64,
    /// The `k`-th moment estimator is unreliable for `k > 4`.
    pub unstable: bool,
}

/// `max_{t ≤ T} max_x e^{-βt} (mean_r |u_r(t, x)|^k)^{1/k}` over an ensemble.
pub fn empirical_nbeta(ensemble: &[Trajectory], beta: f64, k: f64, t_max: f64) -> Result<NBetaEstimate> {
    if ensemble.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if !(k >= 1.0) || !(beta >= 0.0) {
        return domain(format!("need k ≥ 1 and β ≥ 0, got k = {k}, β = {beta}"));
    }
    let times = &ensemble[0].times;
    if ensemble.iter().any(|t| &t.times != times) {
        return domain("trajectories carry different snapshot times");
    }
    let reach = times.iter().copied().filter(|&t| t <= t_max * (1.0 + 1e-12)).fold(f64::NEG_INFINITY, f64::max);
    let dt = ensemble[0].dt;
    if !(reach >= t_max - dt * (1.0 + 1e-9)) {
        return domain(format!("snapshots stop at {reach}, short of T = {t_max}"));
    }
    let m = ensemble.len() as f64;
    let mut best: f64 = 0.0;
    for (ti, &t) in times.iter().enumerate() {
        if t > t_max * (1.0 + 1e-12) {
            continue;
        }
        let sites = ensemble[0].fields[ti].len();
        for x in 0..sites {
            let mom = ensemble.iter().map(|tr| tr.fields[ti][x].abs().powf(k)).sum::<f64>() / m;
            best = best.max((-beta * t).exp() * mom.powf(1.0 / k));
        }
    }
    Ok(NBetaEstimate { value: best, unstable: k > 4.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrkernel::KernelSpec;
    use crate::kernels::Dimension;
    use proptest::prelude::*;

    fn lat(n: usize, dx: f64) -> Lattice {
        Lattice::new(Dimension::ONE, n, dx).unwrap()
    }

    fn she_cfg(n: usize, dx: f64, dt: f64, t_end: f64) -> SimConfig {
        let kernel = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        SimConfig::new(kernel, SigmaSpec::Linear { slope: 1.0 }, lat(n, dx), dt, t_end)
    }

    #[test]
    fn constant_and_product_averages() {
        let l = lat(64, 0.5);
        let c = vec![2.5; 64];
        assert_eq!(occupation_average(&c, &l, &ObservableSpec::identity(8.0, 1)).unwrap(), 2.5);
        let u: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let obs = ObservableSpec { g: vec![GSpec::Identity; 2], shifts: vec![vec![0], vec![0]], window: 8.0, normalize: false };
        let sq = u[..16].iter().map(|v| v * v).sum::<f64>() / 16.0;
        assert!((occupation_average(&u, &l, &obs).unwrap() - sq).abs() < 1e-15);
    }

    #[test]
    fn shift_of_zeta_is_translated_window() {
        let l = lat(64, 0.5);
        let u: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).cos() + 0.1 * i as f64).collect();
        let g = GSpec::ClippedLinear { lo: -0.5, hi: 1.5 };
        let shifted = ObservableSpec { g: vec![g.clone()], shifts: vec![vec![5]], window: 10.0, normalize: false };
        let plain = ObservableSpec { g: vec![g], shifts: vec![vec![0]], window: 10.0, normalize: false };
        let a = occupation_average(&u, &l, &shifted).unwrap();
        let b = occupation_average_at(&u, &l, &plain, &[5]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn geometry_is_checked() {
        let l = lat(64, 0.5);
        let u = vec![0.0; 64];
        assert!(occupation_average(&u, &l, &ObservableSpec::identity(17.0, 1)).is_err());
        let far = ObservableSpec { g: vec![GSpec::Identity], shifts: vec![vec![20]], window: 4.0, normalize: false };
        assert!(occupation_average(&u, &l, &far).is_err());
        let many = ObservableSpec { g: vec![GSpec::Identity; 5], shifts: vec![vec![0]; 5], window: 4.0, normalize: false };
        assert!(!many.findings(&l).is_empty());
    }

    #[test]
    fn normalization_scales_variance_exactly() {
        let g = GSpec::Tabulated { grid: vec![-1.0, 0.0, 2.0], values: vec![1.0, 3.0, 6.0] };
        let lip = g.lip();
        assert_eq!(lip, 2.0);
        let l = lat(32, 0.5);
        let raw = ObservableSpec { g: vec![g.clone()], shifts: vec![vec![0]], window: 4.0, normalize: false };
        let norm = ObservableSpec { normalize: true, ..raw.clone() };
        let ens = WhiteEnsemble::new(l, vec![1.0]);
        let a: Vec<f64> = (0..200).map(|r| occupation_average(&ens.sample(1, r).unwrap()[0], &l, &raw).unwrap()).collect();
        let b: Vec<f64> = (0..200).map(|r| occupation_average(&ens.sample(1, r).unwrap()[0], &l, &norm).unwrap()).collect();
        let (va, vb) = (stats::variance(&a), stats::variance(&b));
        assert!((va - lip * lip * vb).abs() < 1e-12 * va);
    }

    #[test]
    fn iid_cells_decay_like_inverse_volume() {
        let l = lat(512, 1.0);
        let ens = WhiteEnsemble::new(l, vec![1.0]);
        let windows = [8.0, 16.0, 32.0, 64.0, 128.0];
        let rep = ensemble_variance(&ens, &ObservableSpec::identity(8.0, 1), &windows, 2000, 9).unwrap();
        for r in &rep.rows {
            assert!((r.variance * r.n - 1.0).abs() < 4.0 * r.se * r.n, "{r:?}");
        }
        let fit = decay_fit_at(&rep, 1.0).unwrap();
        assert!(fit.ci_contains(-1.0), "{fit:?}");
    }

    #[test]
    fn exact_power_law_fit() {
        let rows: Vec<VarianceRow> = [2.0, 4.0, 8.0, 16.0, 32.0]
            .iter()
            .map(|&n| VarianceRow { t: 1.0, n, variance: 1.0 / n, se: 0.0, replicas: 100, mean: 0.0, mean_se: 0.0 })
            .collect();
        let refs: Vec<&VarianceRow> = rows.iter().collect();
        let f = decay_fit(&refs).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12 && f.ci.1 - f.ci.0 < 1e-10);
        assert!(decay_fit(&refs[..3]).is_err());
        let mut zero = rows.clone();
        zero[2].variance = 0.0;
        assert!(decay_fit(&zero.iter().collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn counterexample_variance_is_flat() {
        let cfg = she_cfg(256, 0.5, 0.01, 0.5);
        let ens = EnsembleRegistry::builtin().build("counterexample", &cfg, &EnsembleOptions::default()).unwrap();
        let rep = ensemble_variance(ens.as_ref(), &ObservableSpec::identity(4.0, 1), &[4.0, 8.0, 16.0, 32.0], 400, 2).unwrap();
        let v0 = rep.rows[0].variance;
        assert!(rep.rows.iter().all(|r| (r.variance - v0).abs() < 1e-12 * v0));
        let fit = decay_fit_at(&rep, 0.5).unwrap();
        assert!(fit.ci_contains(0.0));
    }

    #[test]
    fn replicas_below_minimum_rejected() {
        let ens = WhiteEnsemble::new(lat(32, 1.0), vec![1.0]);
        let e = ensemble_variance(&ens, &ObservableSpec::identity(4.0, 1), &[4.0], 50, 0);
        assert!(matches!(e, Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn stationarity_on_constant_fields_is_zero() {
        let l = lat(16, 1.0);
        let fields: Vec<Vec<f64>> = (0..1000).map(|r| vec![r as f64 * 0.01; 16]).collect();
        assert_eq!(stationarity_test(&fields, &l, &[vec![3], vec![7]]).unwrap(), 0.0);
        assert!(stationarity_test(&fields[..10], &l, &[vec![3]]).is_err());
    }

    #[test]
    fn stationarity_detects_a_trend() {
        let l = lat(16, 1.0);
        let ens = WhiteEnsemble::new(l, vec![1.0]);
        let fields: Vec<Vec<f64>> = (0..1000)
            .map(|r| ens.sample(4, r).unwrap().remove(0).into_iter().enumerate().map(|(i, v)| v + 0.1 * i as f64).collect())
            .collect();
        assert!(stationarity_test(&fields, &l, &[vec![8]]).unwrap() > 4.0);
        let clean: Vec<Vec<f64>> = (0..1000).map(|r| ens.sample(4, r).unwrap().remove(0)).collect();
        assert!(stationarity_test(&clean, &l, &[vec![3], vec![8]]).unwrap() < 4.0);
    }

    #[test]
    fn nbeta_constant_field() {
        let l = lat(8, 1.0);
        let tr = Trajectory {
            times: vec![0.0, 0.5, 1.0],
            fields: vec![vec![1.0; 8]; 3],
            seed: 0,
            replica: 0,
            scheme: "constant".into(),
            lattice: l,
            dt: 0.5,
        };
        let e = empirical_nbeta(std::slice::from_ref(&tr), 2.0, 2.0, 1.0).unwrap();
        assert_eq!(e.value, 1.0);
        assert!(!e.unstable);
        assert!(empirical_nbeta(std::slice::from_ref(&tr), 2.0, 6.0, 1.0).unwrap().unstable);
        assert!(empirical_nbeta(std::slice::from_ref(&tr), 2.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn nbeta_grows_with_horizon() {
        let mut cfg = she_cfg(32, 0.5, 0.01, 0.4);
        cfg.snapshots = 8;
        let sim = Simulator::new(cfg).unwrap();
        let ens: Vec<Trajectory> = (0..64).map(|r| sim.simulate(3, r).unwrap()).collect();
        let vals: Vec<f64> = [0.1, 0.2, 0.3, 0.4].iter().map(|&t| empirical_nbeta(&ens, 0.5, 2.0, t).unwrap().value).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]), "{vals:?}");
    }

    #[test]
    fn envelope_calibrates_at_smallest_window() {
        let rows: Vec<VarianceRow> = [2.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&n| VarianceRow { t: 1.0, n, variance: 3.0 / n, se: 0.1, replicas: 100, mean: 0.0, mean_se: 0.0 })
            .collect();
        let refs: Vec<&VarianceRow> = rows.iter().collect();
        let env = calibrate_envelope(&refs, |n| Ok(1.0 / n.sqrt())).unwrap();
        assert!(env.all_below);
        assert!((env.constant - 1.5 * 2f64.sqrt()).abs() < 1e-12);
        let tight = calibrate_envelope(&refs, |n| Ok(1.0 / (n * n))).unwrap();
        assert!(!tight.all_below);
    }

    #[test]
    fn report_csv_header() {
        let ens = WhiteEnsemble::new(lat(64, 1.0), vec![1.0]);
        let rep = ensemble_variance(&ens, &ObservableSpec::identity(4.0, 1), &[2.0, 4.0, 8.0, 16.0], 100, 0).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,N,variance,se,replicas\n"));
        assert_eq!(s.lines().count(), 5);
        assert!(rep.summary()["fits"].as_array().unwrap().len() == 1);
    }

    #[test]
    fn unknown_ensemble_rejected() {
        let cfg = she_cfg(32, 0.5, 0.01, 0.1);
        assert!(EnsembleRegistry::builtin().build("brownian_sheet", &cfg, &EnsembleOptions::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn variance_ignores_replica_order(vals in proptest::collection::vec(-5.0f64..5.0, 4..64), k in 0usize..64) {
            let mut perm = vals.clone();
            let k = k % perm.len();
            perm.rotate_left(k);
            let a = stats::variance_jackknife(&vals).unwrap();
            let b = stats::variance_jackknife(&perm).unwrap();
            prop_assert!((a.0 - b.0).abs() <= 1e-10 * a.0.abs().max(1.0));
        }

        #[test]
        fn constant_fields_average_to_themselves(c in -10.0f64..10.0, w in 1usize..16) {
            let l = lat(32, 1.0);
            let u = vec![c; 32];
            let v = occupation_average(&u, &l, &ObservableSpec::identity(w as f64, 1)).unwrap();
            prop_assert!((v - c).abs() < 1e-12 * c.abs().max(1.0));
        }
    }
}
