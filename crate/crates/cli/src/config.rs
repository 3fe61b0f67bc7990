//! Experiment configuration: TOML sections mirroring the library types.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use she_ergo::corrkernel::{check_membership, FamilyRegistry, KernelRecord, KernelSpec};
use she_ergo::ergostats::{EnsembleOptions, EnsembleRegistry, GSpec, ObservableSpec, MIN_REPLICAS};
use she_ergo::noisegen::Lattice;
use she_ergo::solver::{step_count, InitialData, SchemeRegistry, SigmaSpec, SimConfig};
use she_ergo::Dimension;

use crate::experiments::ExperimentRegistry;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub kernel: Option<KernelRecord>,
    pub sigma: Option<SigmaSpec>,
    pub lattice: Option<LatticeSection>,
    pub time: Option<TimeSection>,
    pub replica: Option<ReplicaSection>,
    pub observable: Option<ObservableSection>,
    pub localization: Option<LocalizationSection>,
    pub noise: Option<NoiseSection>,
    pub counterexample: Option<CounterexampleSection>,
    pub report: Option<ReportSection>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    pub n: usize,
    pub dx: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub snapshots: Option<usize>,
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub u0: Option<InitialData>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaSection {
    pub count: usize,
    #[serde(default)]
    pub ensemble: Option<String>,
    #[serde(default)]
    pub options: Option<EnsembleOptions>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableSection {
    #[serde(default = "identity_list")]
    pub g: Vec<GSpec>,
    #[serde(default)]
    pub shifts: Option<Vec<Vec<i64>>>,
    pub windows: Vec<f64>,
    #[serde(default)]
    pub normalize: bool,
    /// Fitted slope must not exceed this.
    #[serde(default)]
    pub max_slope: Option<f64>,
}

fn identity_list() -> Vec<GSpec> {
    vec![GSpec::Identity]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationSection {
    #[serde(default = "default_ms")]
    pub ms: Vec<f64>,
    #[serde(default = "default_rs")]
    pub rs: Vec<f64>,
    #[serde(default = "default_ns")]
    pub picard_iterations: Vec<usize>,
    /// Ball factor and truncation radius for the Picard table.
    #[serde(default = "two")]
    pub m: f64,
    #[serde(default = "one")]
    pub r: f64,
}

fn default_ms() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0]
}

fn default_rs() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}

fn default_ns() -> Vec<usize> {
    vec![1, 2, 3, 4]
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "default_samples")]
    pub samples: u64,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_samples() -> u64 {
    100_000
}

fn default_blocks() -> usize {
    100
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSection {
    #[serde(default = "one")]
    pub lambda: f64,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_substep")]
    pub substep: f64,
    #[serde(default = "default_paths")]
    pub paths: u64,
}

fn default_substep() -> f64 {
    1e-4
}

fn default_paths() -> u64 {
    100_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_ts")]
    pub ts: Vec<f64>,
    #[serde(default = "default_as")]
    pub a: Vec<f64>,
    #[serde(default = "default_windows")]
    pub windows: Vec<f64>,
    #[serde(default = "default_ps")]
    pub membership_p: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub dalang_lambdas: Vec<f64>,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            ts: default_ts(),
            a: default_as(),
            windows: default_windows(),
            membership_p: default_ps(),
            dalang_lambdas: default_lambdas(),
        }
    }
}

fn default_ts() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]
}

fn default_as() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]
}

fn default_windows() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0, 128.0]
}

fn default_ps() -> Vec<f64> {
    vec![1.5, 2.0, 4.0]
}

fn default_lambdas() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn kernel(&self) -> anyhow::Result<KernelSpec> {
        let rec = self.kernel.as_ref().ok_or_else(|| anyhow::anyhow!("kernel: section missing"))?;
        Ok(rec.build(&FamilyRegistry::builtin())?)
    }

    pub fn lattice(&self) -> anyhow::Result<Lattice> {
        let l = self.lattice.ok_or_else(|| anyhow::anyhow!("lattice: section missing"))?;
        Ok(Lattice::new(Dimension::new(l.d)?, l.n, l.dx)?)
    }

    pub fn sim_config(&self) -> anyhow::Result<SimConfig> {
        let time = self.time.as_ref().ok_or_else(|| anyhow::anyhow!("time: section missing"))?;
        let sigma = self.sigma.clone().ok_or_else(|| anyhow::anyhow!("sigma: section missing"))?;
        let mut cfg = SimConfig::new(self.kernel()?, sigma, self.lattice()?, time.dt, time.t_end);
        if let Some(s) = time.snapshots {
            cfg.snapshots = s;
        }
        if let Some(s) = &time.scheme {
            cfg.scheme = s.clone();
        }
        if let Some(u0) = &time.u0 {
            cfg.u0 = u0.clone();
        }
        Ok(cfg)
    }

    pub fn observable(&self, d: usize) -> anyhow::Result<ObservableSpec> {
        let o = self.observable.as_ref().ok_or_else(|| anyhow::anyhow!("observable: section missing"))?;
        let shifts = o.shifts.clone().unwrap_or_else(|| vec![vec![0; d]; o.g.len()]);
        let window = o.windows.first().copied().unwrap_or(1.0);
        Ok(ObservableSpec { g: o.g.clone(), shifts, window, normalize: o.normalize })
    }

    pub fn ensemble_options(&self) -> EnsembleOptions {
        self.replica.as_ref().and_then(|r| r.options.clone()).unwrap_or_default()
    }

    /// Every problem found without running anything.
    pub fn findings(&self, experiments: &ExperimentRegistry) -> Vec<String> {
        let mut out = Vec::new();
        if self.seed.is_none() {
            out.push("seed: missing; a 64-bit integer seed is required".to_string());
        }
        let experiment = match &self.experiment {
            None => {
                out.push(format!("experiment: missing; one of {}", experiments.names().join(", ")));
                return out;
            }
            Some(name) => match experiments.get(name) {
                Some(e) => e,
                None => {
                    out.push(format!("experiment: unknown {name:?}; one of {}", experiments.names().join(", ")));
                    return out;
                }
            },
        };
        for s in experiment.sections() {
            if !self.has_section(s) {
                out.push(format!("{s}: section required by {}", experiment.name()));
            }
        }

        let lattice = match self.lattice {
            Some(_) => match self.lattice() {
                Ok(l) => Some(l),
                Err(e) => {
                    out.push(format!("lattice: {e}"));
                    None
                }
            },
            None => None,
        };
        let kernel = match &self.kernel {
            Some(_) => match self.kernel() {
                Ok(k) => {
                    for f in k.findings() {
                        out.push(format!("kernel: {f}"));
                    }
                    Some(k)
                }
                Err(e) => {
                    out.push(format!("kernel: {e}"));
                    None
                }
            },
            None => None,
        };
        if let (Some(k), Some(l)) = (&kernel, &lattice) {
            if k.dimension() != l.dimension() {
                out.push(format!("kernel.d = {} differs from lattice.d = {}", k.dimension().get(), l.dimension().get()));
            }
        }
        if let Some(k) = &kernel {
            if k.findings().is_empty() && experiment.needs_membership() {
                let ps = self.report.as_ref().map(|r| r.membership_p.clone()).unwrap_or_else(default_ps);
                let member = ps.iter().any(|&p| check_membership(k, p).map(|m| m.in_f || m.in_g).unwrap_or(false));
                if !member {
                    out.push(format!("kernel: not a member of F_p or G_p for any p in {ps:?}"));
                }
            }
        }
        if let Some(s) = &self.sigma {
            if let Err(e) = s.validate() {
                out.push(format!("sigma: {e}"));
            }
        }
        if let Some(t) = &self.time {
            match step_count(t.dt, t.t_end) {
                Ok(steps) => {
                    if let Some(s) = t.snapshots {
                        if s == 0 || s > steps {
                            out.push(format!("time.snapshots: must lie in 1..={steps}"));
                        }
                    }
                }
                Err(e) => out.push(format!("time: {e}")),
            }
            if let Some(s) = &t.scheme {
                if let Err(e) = SchemeRegistry::builtin().get(s) {
                    out.push(format!("time.scheme: {e}"));
                }
            }
        }
        if let Some(r) = &self.replica {
            if r.count < MIN_REPLICAS {
                out.push(format!("replica.count: {} is below the minimum of {MIN_REPLICAS}", r.count));
            }
            if let Some(e) = &r.ensemble {
                let reg = EnsembleRegistry::builtin();
                if !reg.names().contains(&e.as_str()) {
                    out.push(format!("replica.ensemble: unknown {e:?}; one of {}", reg.names().join(", ")));
                }
            }
        }
        if let (Some(o), Some(l)) = (&self.observable, &lattice) {
            let d = l.dimension().get();
            match self.observable(d) {
                Ok(obs) => {
                    let mut distinct = o.windows.clone();
                    distinct.sort_by(f64::total_cmp);
                    distinct.dedup();
                    if distinct.len() < 4 {
                        out.push(format!("observable.windows: need at least 4 distinct sizes, got {}", distinct.len()));
                    }
                    for &w in &o.windows {
                        for f in obs.with_window(w).findings(l) {
                            if !out.contains(&f) {
                                out.push(f);
                            }
                        }
                    }
                }
                Err(e) => out.push(format!("observable: {e}")),
            }
        }
        if let Some(loc) = &self.localization {
            if loc.ms.iter().chain(&loc.rs).chain([&loc.m, &loc.r]).any(|v| !(*v > 0.0)) {
                out.push("localization: ball factors and radii must be positive".to_string());
            }
        }
        if let Some(c) = &self.counterexample {
            if !(c.lambda > 0.0) {
                out.push(format!("counterexample.lambda: must be positive, got {}", c.lambda));
            }
            if c.t_grid.len() < 3 || c.t_grid.iter().any(|t| !(*t > 0.0)) || c.t_grid.windows(2).any(|w| !(w[1] > w[0])) {
                out.push("counterexample.t_grid: need at least 3 increasing positive times".to_string());
            }
            if c.paths < 1000 {
                out.push(format!("counterexample.paths: {} is below the minimum of 1000", c.paths));
            }
        }
        out.extend(experiment.findings(self));
        out
    }

    fn has_section(&self, s: &str) -> bool {
        match s {
            "kernel" => self.kernel.is_some(),
            "sigma" => self.sigma.is_some(),
            "lattice" => self.lattice.is_some(),
            "time" => self.time.is_some(),
            "replica" => self.replica.is_some(),
            "observable" => self.observable.is_some(),
            "localization" => self.localization.is_some(),
            "noise" => self.noise.is_some(),
            "counterexample" => self.counterexample.is_some(),
            "report" => self.report.is_some(),
            _ => false,
        }
    }
}
