//! The five canonical experiments behind a common trait, selected by name.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context as _;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use she_ergo::corrkernel::{check_membership, dalang_integral, norm_complement};
use she_ergo::ergostats::{
    calibrate_envelope, decay_fit, ensemble_variance, CounterexampleEnsemble, EnsembleRegistry, VarianceReport,
};
use she_ergo::gauges::{Gauges, MomentRequest, ReportRequest};
use she_ergo::noisegen::{Colorer, CovarianceAccumulator};
use she_ergo::rng::StreamKey;
use she_ergo::solver::{counterexample_sde, Localization, SimConfig, Simulator};
use she_ergo::stats;

use crate::config::{ExperimentConfig, ReportSection};

/// One pass/fail criterion reported in the summary.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub criterion: String,
    pub value: Value,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, criterion: &str, value: Value, pass: bool) -> Self {
        Self { name: name.into(), criterion: criterion.into(), value, pass }
    }
}

pub struct RunContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub config_sha256: String,
    pub out: PathBuf,
    pub quiet: bool,
    files: Mutex<Vec<String>>,
}

impl<'a> RunContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, seed: u64, config_sha256: String, out: PathBuf, quiet: bool) -> Self {
        Self { cfg, seed, config_sha256, out, quiet, files: Mutex::new(Vec::new()) }
    }

    pub fn progress(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    /// Creates `name` in the output directory and records it for the summary.
    pub fn write(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        body(&mut w)?;
        w.flush()?;
        self.files.lock().expect("file list").push(name.to_string());
        Ok(())
    }

    /// JSON artifact stamped with the config hash and seed.
    pub fn write_json(&self, name: &str, mut value: Value) -> anyhow::Result<()> {
        if let Value::Object(m) = &mut value {
            m.insert("config_sha256".into(), json!(self.config_sha256));
            m.insert("seed".into(), json!(self.seed));
        }
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, &value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn files(&self) -> Vec<String> {
        self.files.lock().expect("file list").clone()
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn sections(&self) -> &'static [&'static str];
    fn needs_membership(&self) -> bool {
        true
    }
    /// Extra experiment-specific findings.
    fn findings(&self, _cfg: &ExperimentConfig) -> Vec<String> {
        Vec::new()
    }
    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>>;
}

#[derive(Clone, Default)]
pub struct ExperimentRegistry {
    experiments: BTreeMap<String, Arc<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn builtin() -> Self {
        let mut r = Self::default();
        r.register(Arc::new(KernelReport));
        r.register(Arc::new(NoiseCheck));
        r.register(Arc::new(ErgodicitySweep));
        r.register(Arc::new(LocalizationStudy));
        r.register(Arc::new(Counterexample));
        r
    }

    pub fn register(&mut self, e: Arc<dyn Experiment>) {
        self.experiments.insert(e.name().to_string(), e);
    }

    pub fn names(&self) -> Vec<&str> {
        self.experiments.keys().map(String::as_str).collect()
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Experiment>> {
        self.experiments.get(name).cloned()
    }
}

fn sci(v: f64) -> String {
    format!("{v:e}")
}

struct KernelReport;

impl Experiment for KernelReport {
    fn name(&self) -> &'static str {
        "kernel-report"
    }

    fn sections(&self) -> &'static [&'static str] {
        &["kernel"]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>> {
        let spec = ctx.cfg.kernel()?;
        let d = spec.dimension().get();
        let rs = ctx.cfg.report.clone().unwrap_or_else(ReportSection::default);
        ctx.progress("building correlation table and gauges");
        let gauges = Gauges::new(&spec)?;
        let moments = ctx.cfg.sigma.as_ref().map(|s| MomentRequest {
            ks: vec![2.0, 4.0],
            ts: vec![0.5, 1.0],
            eps: 0.5,
            u0_sup: 1.0,
            sigma0: s.sigma0().abs(),
            lip: s.lip(),
        });
        let req = ReportRequest {
            ts: rs.ts.clone(),
            as_: rs.a.clone(),
            windows: rs.windows.clone(),
            shifts: vec![vec![0.0; d]],
            moments,
        };
        let report = gauges.report(&req)?;
        ctx.write("gauges.csv", |w| Ok(report.write_csv(w)?))?;
        ctx.write_json("gauges.json", serde_json::to_value(&report)?)?;

        ctx.progress("membership sweeps");
        let members = rs.membership_p.iter().map(|&p| check_membership(&spec, p)).collect::<Result<Vec<_>, _>>()?;
        ctx.write("membership.csv", |w| {
            writeln!(w, "p,q,f_integral,g_integral,in_f,in_g")?;
            for m in &members {
                writeln!(w, "{},{},{},{},{},{}", sci(m.p), sci(m.q), sci(m.f_integral.value()), sci(m.g_integral.value()), m.in_f, m.in_g)?;
            }
            Ok(())
        })?;
        let dalang: Vec<(f64, f64)> = rs
            .dalang_lambdas
            .iter()
            .map(|&l| dalang_integral(&spec, l).map(|v| (l, v.value())))
            .collect::<Result<_, _>>()?;
        ctx.write("dalang.csv", |w| {
            writeln!(w, "lambda,value")?;
            for (l, v) in &dalang {
                writeln!(w, "{},{}", sci(*l), sci(*v))?;
            }
            Ok(())
        })?;
        let finite = dalang.iter().all(|(_, v)| v.is_finite());
        let member = members.iter().any(|m| m.in_f || m.in_g);
        Ok(vec![
            Check::new("dalang_finite", "Dalang integral finite at every listed λ", json!(dalang), finite),
            Check::new("membership", "h in F_p or G_p for some listed p", json!(members.iter().map(|m| (m.p, m.in_f, m.in_g)).collect::<Vec<_>>()), member),
        ])
    }
}

struct NoiseCheck;

impl Experiment for NoiseCheck {
    fn name(&self) -> &'static str {
        "noise-check"
    }

    fn sections(&self) -> &'static [&'static str] {
        &["kernel", "lattice", "time", "noise"]
    }

    fn needs_membership(&self) -> bool {
        false
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>> {
        let spec = ctx.cfg.kernel()?;
        let lattice = ctx.cfg.lattice()?;
        let dt = ctx.cfg.time.as_ref().expect("validated").dt;
        let noise = ctx.cfg.noise.clone().expect("validated");
        let colorer = Colorer::from_spec(&spec, lattice)?;
        let exact: Vec<f64> = colorer.correlation().iter().map(|f| dt * f).collect();
        ctx.progress(&format!("drawing {} colored increments", noise.samples));
        let chunks = 16u64;
        let accs: Vec<CovarianceAccumulator> = (0..chunks)
            .into_par_iter()
            .map(|c| -> anyhow::Result<CovarianceAccumulator> {
                let mut acc = CovarianceAccumulator::new(lattice, noise.blocks);
                let (lo, hi) = (c * noise.samples / chunks, (c + 1) * noise.samples / chunks);
                for i in lo..hi {
                    acc.push(&colorer.increment(dt, StreamKey::new(ctx.seed, i))?)?;
                }
                Ok(acc)
            })
            .collect::<anyhow::Result<_>>()?;
        let mut acc = accs[0].clone();
        for a in &accs[1..] {
            acc.merge(a)?;
        }
        let est = acc.finish()?;
        let d = lattice.dimension().get();
        let mut misses = 0usize;
        let mut worst: f64 = 0.0;
        ctx.write("covariance.csv", |w| {
            let lag_cols: Vec<String> = (0..d).map(|a| format!("lag_{a}")).collect();
            writeln!(w, "{},radius,exact,estimate,se,z", lag_cols.join(","))?;
            for i in 0..lattice.sites() {
                let off = lattice.offset(i);
                let z = (est.values[i] - exact[i]) / est.std_errors[i];
                worst = worst.max(z.abs());
                if z.abs() > 3.0 {
                    misses += 1;
                }
                let lag: Vec<String> = off.iter().map(|c| c.to_string()).collect();
                writeln!(w, "{},{},{},{},{},{}", lag.join(","), sci(lattice.radius(i)), sci(exact[i]), sci(est.values[i]), sci(est.std_errors[i]), sci(z))?;
            }
            Ok(())
        })?;
        Ok(vec![Check::new(
            "covariance_within_3se",
            "empirical covariance within 3 jackknife SEs of dt·f_Δ at every lag",
            json!({"misses": misses, "lags": lattice.sites(), "max_abs_z": worst}),
            misses == 0,
        )])
    }
}

fn write_variance(ctx: &RunContext, name: &str, rep: &VarianceReport) -> anyhow::Result<()> {
    ctx.write(name, |w| Ok(rep.write_csv(w)?))
}

struct ErgodicitySweep;

impl Experiment for ErgodicitySweep {
    fn name(&self) -> &'static str {
        "ergodicity-sweep"
    }

    fn sections(&self) -> &'static [&'static str] {
        &["kernel", "sigma", "lattice", "time", "replica", "observable"]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>> {
        let sim = ctx.cfg.sim_config()?;
        let replica = ctx.cfg.replica.clone().expect("validated");
        let name = replica.ensemble.clone().unwrap_or_else(|| "she".into());
        let ens = EnsembleRegistry::builtin().build(&name, &sim, &ctx.cfg.ensemble_options())?;
        let d = sim.lattice.dimension().get();
        let obs = ctx.cfg.observable(d)?;
        let section = ctx.cfg.observable.clone().expect("validated");
        ctx.progress(&format!("{} replicas of the {name} ensemble", replica.count));
        let rep = ensemble_variance(ens.as_ref(), &obs, &section.windows, replica.count, ctx.seed)?;
        write_variance(ctx, "variance.csv", &rep)?;

        let mut checks = Vec::new();
        let mut fits = Vec::new();
        let flat = name == "counterexample";
        let gauges = if flat { None } else { Some(Gauges::new(&sim.kernel)?) };
        let shifts: Vec<Vec<f64>> = obs.shifts.iter().map(|z| z.iter().map(|&c| c as f64 * sim.lattice.dx()).collect()).collect();
        let mut bound_rows = Vec::new();
        for t in rep.times() {
            let rows = rep.at_time(t);
            let fit = decay_fit(&rows)?;
            fits.push(json!({"t": t, "fit": fit}));
            if flat {
                checks.push(flat_check(&rows, &fit));
                continue;
            }
            checks.push(Check::new(
                &format!("decay_t{t}"),
                "fitted log-log slope negative with 95% CI excluding 0",
                json!(fit),
                fit.ci.1 < 0.0,
            ));
            if let Some(max) = section.max_slope {
                checks.push(Check::new(&format!("slope_t{t}"), &format!("fitted slope ≤ {max}"), json!(fit.slope), fit.slope <= max));
            }
            let g = gauges.as_ref().expect("gauges");
            let env = calibrate_envelope(&rows, |n| g.poincare_bound(n, &shifts).map(|b| b.value))?;
            for ((n, v), s) in env.n.iter().zip(&env.variance).zip(&env.scaled_bound) {
                bound_rows.push((t, *n, *v, *s));
            }
            checks.push(Check::new(
                &format!("bound_t{t}"),
                "variances below the Poincaré bound curve scaled at the smallest window",
                json!(env),
                env.all_below,
            ));
        }
        if !bound_rows.is_empty() {
            ctx.write("bounds.csv", |w| {
                writeln!(w, "t,N,variance,scaled_bound")?;
                for (t, n, v, s) in &bound_rows {
                    writeln!(w, "{},{},{},{}", sci(*t), sci(*n), sci(*v), sci(*s))?;
                }
                Ok(())
            })?;
        }
        ctx.write_json("variance.json", json!({"ensemble": name, "rows": rep.rows, "fits": fits}))?;
        Ok(checks)
    }
}

fn flat_check(rows: &[&she_ergo::ergostats::VarianceRow], fit: &stats::LineFit) -> Check {
    let vmax = rows.iter().map(|r| r.variance).fold(0.0, f64::max);
    let vmin = rows.iter().map(|r| r.variance).fold(f64::INFINITY, f64::min);
    let variation = vmax / vmin - 1.0;
    Check::new(
        "variance_flat",
        "slope CI contains 0 and level varies by less than 20% across N",
        json!({"fit": fit, "variation": variation}),
        fit.ci_contains(0.0) && variation < 0.2,
    )
}

/// `sup_x` of the replica L² gap with its delta-method SE.
fn sup_l2_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for x in 0..a[0].len() {
        let sq: Vec<f64> = a.iter().zip(b).map(|(u, v)| (u[x] - v[x]).powi(2)).collect();
        let (m, se) = stats::mean_se(&sq);
        let g = m.sqrt();
        if g > best.0 {
            best = (g, if g > 0.0 { se / (2.0 * g) } else { 0.0 });
        }
    }
    best
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

struct LocalizationStudy;

impl Experiment for LocalizationStudy {
    fn name(&self) -> &'static str {
        "localization-study"
    }

    fn sections(&self) -> &'static [&'static str] {
        &["kernel", "sigma", "lattice", "time", "replica", "localization"]
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>> {
        let base = ctx.cfg.sim_config()?;
        let loc = ctx.cfg.localization.clone().expect("validated");
        let replicas = ctx.cfg.replica.as_ref().expect("validated").count as u64;
        let with = |m: f64, r: Option<f64>| -> anyhow::Result<Simulator> {
            let mut c: SimConfig = base.clone();
            c.localization = Some(Localization { m, r });
            Ok(Simulator::new(c)?)
        };
        let full = Simulator::new(base.clone())?;
        let balls = loc.ms.iter().map(|&m| with(m, None)).collect::<anyhow::Result<Vec<_>>>()?;
        let truncs = loc.rs.iter().map(|&r| with(1.0, Some(r))).collect::<anyhow::Result<Vec<_>>>()?;
        let picard = with(loc.m, Some(loc.r))?;
        let seed = ctx.seed;
        ctx.progress(&format!("{replicas} coupled replicas"));
        type Row = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);
        let runs: Vec<Row> = (0..replicas)
            .into_par_iter()
            .map(|r| -> anyhow::Result<Row> {
                let u = full.simulate(seed, r)?.final_field().to_vec();
                let b = balls.iter().map(|s| Ok(s.simulate_localized(seed, r)?.final_field().to_vec())).collect::<anyhow::Result<_>>()?;
                let t = truncs.iter().map(|s| Ok(s.simulate(seed, r)?.final_field().to_vec())).collect::<anyhow::Result<_>>()?;
                let limit = picard.simulate_localized(seed, r)?.final_field().to_vec();
                let it = loc.picard_iterations.iter().map(|&n| Ok(picard.picard_localized(seed, r, n)?)).collect::<anyhow::Result<_>>()?;
                Ok((u, b, t, limit, it))
            })
            .collect::<anyhow::Result<_>>()?;
        let us: Vec<Vec<f64>> = runs.iter().map(|r| r.0.clone()).collect();
        let column = |k: usize, pick: fn(&Row) -> &Vec<Vec<f64>>| -> Vec<Vec<f64>> { runs.iter().map(|r| pick(r)[k].clone()).collect() };

        let m_gaps: Vec<(f64, f64)> = (0..loc.ms.len()).map(|k| sup_l2_gap(&us, &column(k, |r| &r.1))).collect();
        ctx.write("localization_m.csv", |w| {
            writeln!(w, "m,gap,se")?;
            for (m, (g, s)) in loc.ms.iter().zip(&m_gaps) {
                writeln!(w, "{},{},{}", sci(*m), sci(*g), sci(*s))?;
            }
            Ok(())
        })?;
        let r_gaps: Vec<(f64, f64)> = (0..loc.rs.len()).map(|k| sup_l2_gap(&us, &column(k, |r| &r.2))).collect();
        let tails = loc.rs.iter().map(|&r| norm_complement(&base.kernel, 2.0, r).map(|e| e.value())).collect::<Result<Vec<_>, _>>()?;
        ctx.write("truncation_r.csv", |w| {
            writeln!(w, "r,gap,se,tail_l2")?;
            for ((r, (g, s)), t) in loc.rs.iter().zip(&r_gaps).zip(&tails) {
                writeln!(w, "{},{},{},{}", sci(*r), sci(*g), sci(*s), sci(*t))?;
            }
            Ok(())
        })?;
        let limits: Vec<Vec<f64>> = runs.iter().map(|r| r.3.clone()).collect();
        let n_gaps: Vec<(f64, f64)> = (0..loc.picard_iterations.len()).map(|k| sup_l2_gap(&limits, &column(k, |r| &r.4))).collect();
        ctx.write("picard_n.csv", |w| {
            writeln!(w, "n,gap,se")?;
            for (n, (g, s)) in loc.picard_iterations.iter().zip(&n_gaps) {
                writeln!(w, "{n},{},{}", sci(*g), sci(*s))?;
            }
            Ok(())
        })?;
        let mg: Vec<f64> = m_gaps.iter().map(|g| g.0).collect();
        let rg: Vec<f64> = r_gaps.iter().map(|g| g.0).collect();
        let ng: Vec<f64> = n_gaps.iter().map(|g| g.0).collect();
        Ok(vec![
            Check::new("ball_gap_decreasing", "sup_x ‖u - u^(m,h)‖₂ strictly decreasing in m", json!(mg), strictly_decreasing(&mg)),
            Check::new("truncation_gap_decreasing", "sup_x ‖u^(h) - u^(h_r)‖₂ strictly decreasing in r", json!(rg), strictly_decreasing(&rg)),
            Check::new("picard_gap_decreasing", "sup_x ‖u_n^(m,h_r) - u^(m,h_r)‖₂ strictly decreasing in n", json!(ng), strictly_decreasing(&ng)),
        ])
    }
}

struct Counterexample;

impl Experiment for Counterexample {
    fn name(&self) -> &'static str {
        "counterexample"
    }

    fn sections(&self) -> &'static [&'static str] {
        &["sigma", "lattice", "time", "replica", "observable", "counterexample"]
    }

    fn needs_membership(&self) -> bool {
        false
    }

    fn run(&self, ctx: &RunContext) -> anyhow::Result<Vec<Check>> {
        let sigma = ctx.cfg.sigma.clone().expect("validated");
        let lattice = ctx.cfg.lattice()?;
        let time = ctx.cfg.time.clone().expect("validated");
        let ce = ctx.cfg.counterexample.clone().expect("validated");
        let replicas = ctx.cfg.replica.as_ref().expect("validated").count;
        let d = lattice.dimension().get();
        let obs = ctx.cfg.observable(d)?;
        let windows = ctx.cfg.observable.as_ref().expect("validated").windows.clone();

        let ens = CounterexampleEnsemble::new(lattice, vec![time.t_end], ce.lambda, sigma.clone(), ce.substep)?;
        let rep = ensemble_variance(&ens, &obs, &windows, replicas, ctx.seed)?;
        write_variance(ctx, "flat_variance.csv", &rep)?;
        let rows = rep.at_time(time.t_end);
        let fit = decay_fit(&rows)?;
        let flat = flat_check(&rows, &fit);

        ctx.progress(&format!("{} SDE paths", ce.paths));
        let paths: Vec<Vec<f64>> = (0..ce.paths)
            .into_par_iter()
            .map(|r| counterexample_sde(ce.lambda, &sigma, &ce.t_grid, ce.substep, StreamKey::new(ctx.seed, r)))
            .collect::<Result<_, _>>()?;
        let mut vars = Vec::new();
        ctx.write("sde_variance.csv", |w| {
            writeln!(w, "t,variance,se,variance_over_t")?;
            for (k, t) in ce.t_grid.iter().enumerate() {
                let col: Vec<f64> = paths.iter().map(|p| p[k]).collect();
                let (v, se) = stats::variance_jackknife(&col)?;
                vars.push(v);
                writeln!(w, "{},{},{},{}", sci(*t), sci(v), sci(se), sci(v / t))?;
            }
            Ok(())
        })?;
        let slope = stats::weighted_line(&ce.t_grid, &vars, None)?.slope;
        let target = ce.lambda.powi(2) * sigma.eval(1.0).powi(2);
        let rel = if target > 0.0 { (slope / target - 1.0).abs() } else { slope.abs() };
        ctx.write_json("counterexample.json", json!({"slope": slope, "target": target, "flat": flat}))?;
        Ok(vec![
            flat,
            Check::new(
                "small_t_slope",
                "slope of Var(X_t) in t within 5% of λ²σ(1)²",
                json!({"slope": slope, "target": target, "relative_error": rel}),
                rel < 0.05,
            ),
        ])
    }
}

/// Writes `summary.json` and returns whether every check passed.
pub fn write_summary(ctx: &RunContext, experiment: &str, config_path: &Path, checks: &[Check]) -> anyhow::Result<bool> {
    let passed = checks.iter().all(|c| c.pass);
    let mut files = ctx.files();
    files.sort();
    let summary = json!({
        "experiment": experiment,
        "config": config_path.display().to_string(),
        "config_sha256": ctx.config_sha256,
        "seed": ctx.seed,
        "passed": passed,
        "checks": checks,
        "files": files,
    });
    let path = ctx.out.join("summary.json");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(passed)
}
