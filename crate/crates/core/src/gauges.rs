//! Gauge functions `γ_d`, `τ_d`, the constant `c_d`, the Poincaré bounds on
//! the variance of spatial averages, and moment bounds.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::corrkernel::{bdg_constant, norm_complement, CorrelationTable, KernelSpec, TableOptions};
use crate::error::{domain, Result};
use crate::extended::Extended;
use crate::kernels::{omega_unchecked, potential_density_radial, Dimension};
use crate::optim;
use crate::quad::{self, Tolerance};

const GRID_POINTS: usize = 512;
const GRID_LO: f64 = 1e-8;
/// Crossing search in `γ_d` goes no lower than this.
const S_FLOOR: f64 = 1e-200;

/// `c_d = max_{m ≥ 1} m^{d-2} e^{-m²/2}`.
pub fn c_d(d: usize) -> Result<f64> {
    if d < 1 {
        return domain("c_d needs d ≥ 1");
    }
    if d <= 3 {
        return Ok((-0.5f64).exp());
    }
    let x = d as f64 - 2.0;
    Ok(x.powf(0.5 * d as f64 - 1.0) * (1.0 - 0.5 * d as f64).exp())
}

/// `(A, ν) = (β/(d+β), (2-α)/(d-α))`.
pub fn exponents(d: usize, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let df = d as f64;
    if d < 1 || !(alpha > 0.0 && alpha < df.min(2.0)) {
        return domain(format!("alpha must lie in (0, min(d,2)), got alpha = {alpha}, d = {d}"));
    }
    if !(beta > 0.0) {
        return domain(format!("beta must be positive, got {beta}"));
    }
    Ok((beta / (df + beta), (2.0 - alpha) / (df - alpha)))
}

/// `((log N)^{3/2} / N)^{dβ/(d+β)}`.
pub fn closed_form_rate(n: f64, d: usize, beta: f64) -> Result<f64> {
    if !(n > 1.0) {
        return domain(format!("window size must exceed 1, got {n}"));
    }
    if !(beta > 0.0) || d < 1 {
        return domain("closed-form rate needs β > 0 and d ≥ 1");
    }
    let df = d as f64;
    Ok((n.ln().powf(1.5) / n).powf(df * beta / (df + beta)))
}

/// Poincaré bound and its ingredients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoincareBound {
    pub value: f64,
    pub m_opt: f64,
    pub tau_term: f64,
    pub gamma_term: f64,
    /// The same bound written as an infimum over `a ∈ (0, c_d)`.
    pub a_form: f64,
    pub a_opt: f64,
}

/// Evaluator for the gauges of one kernel; holds the correlation table and
/// the cumulative integral `I(s) = ∫_0^s f̄ ω_d`.
#[derive(Debug)]
pub struct Gauges {
    table: CorrelationTable,
    d: Dimension,
    log_s: Vec<f64>,
    log_i: Vec<f64>,
    /// `f̄ ω_d ≈ c r^κ` below the grid.
    head_coef: f64,
    head_exp: f64,
    tail_at_one: f64,
}

impl Gauges {
    pub fn new(spec: &KernelSpec) -> Result<Self> {
        let opts = if spec.dimension().get() == 1 {
            TableOptions::default()
        } else {
            TableOptions::coarse()
        };
        Self::with_table(CorrelationTable::build(spec, opts)?)
    }

    pub fn with_table(table: CorrelationTable) -> Result<Self> {
        let d = table.spec().dimension();
        let (lo, hi) = (GRID_LO.ln(), 0.0f64);
        let n = GRID_POINTS;
        let ys: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect();
        let mut g = Vec::with_capacity(n);
        for &y in &ys {
            let s = y.exp();
            g.push(table.fbar_interpolated(s)? * omega_unchecked(s, d) * s);
        }
        // g holds the integrand in log variables, f̄ ω_d s.
        let s0 = GRID_LO;
        let s1 = ys[1].exp();
        let w0 = g[0] / s0;
        let w1 = g[1] / s1;
        let head_exp = if w0 > 0.0 && w1 > 0.0 { (w1 / w0).ln() / (s1 / s0).ln() } else { 0.0 };
        let head_coef = w0 / s0.powf(head_exp);
        let head = if w0 == 0.0 {
            0.0
        } else if head_exp > -1.0 {
            w0 * s0 / (head_exp + 1.0)
        } else {
            f64::INFINITY
        };
        let mut acc = head;
        let mut cum = Vec::with_capacity(n);
        cum.push(acc);
        for k in 1..n {
            acc += 0.5 * (ys[k] - ys[k - 1]) * (g[k] + g[k - 1]);
            cum.push(acc);
        }
        Ok(Self {
            tail_at_one: acc,
            log_s: ys,
            log_i: cum.iter().map(|v| v.ln()).collect(),
            table,
            d,
            head_coef,
            head_exp,
        })
    }

    pub fn table(&self) -> &CorrelationTable {
        &self.table
    }

    pub fn spec(&self) -> &KernelSpec {
        self.table.spec()
    }

    /// `∫_0^s f̄(r) ω_d(r) dr` for `s ∈ (0, 1]`.
    pub fn cumulative(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return self.tail_at_one;
        }
        if s < GRID_LO {
            let k = self.head_exp;
            return self.head_coef * s.powf(k + 1.0) / (k + 1.0);
        }
        let y = s.ln();
        let n = self.log_s.len();
        let i = self.log_s.partition_point(|&v| v <= y).clamp(1, n - 1);
        let (y0, y1) = (self.log_s[i - 1], self.log_s[i]);
        let (a, b) = (self.log_i[i - 1], self.log_i[i]);
        if a.is_finite() && b.is_finite() {
            (a + (b - a) * (y - y0) / (y1 - y0)).exp()
        } else {
            0.0
        }
    }

    fn v1(&self, s: f64) -> f64 {
        potential_density_radial(1.0, s, self.d).unwrap_or(f64::INFINITY)
    }

    /// `γ_d(t) = sup_{s ∈ (0,1)} min(t v̄_1(s), ∫_0^s f̄ ω_d)`.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return domain(format!("γ_d needs t > 0, got {t}"));
        }
        // The first argument decreases in s and the second increases, so the
        // supremum sits at their crossing.
        let phi = |s: f64| t * self.v1(s) - self.cumulative(s);
        if phi(1.0) >= 0.0 {
            return Ok(self.tail_at_one.min(t * self.v1(1.0)));
        }
        let (mut lo, mut hi) = (GRID_LO, 1.0f64);
        while phi(lo) < 0.0 {
            hi = lo;
            lo *= 1e-4;
            if lo < S_FLOOR {
                return Ok(0.0);
            }
        }
        for _ in 0..200 {
            if hi / lo - 1.0 < 1e-12 {
                break;
            }
            let mid = (lo * hi).sqrt();
            if phi(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(self.cumulative(lo).max(t * self.v1(hi)).min(t * self.v1(lo)))
    }

    /// `∫_0^1 f̄ ω_d`, the ceiling of `γ_d`.
    pub fn gamma_ceiling(&self) -> f64 {
        self.tail_at_one
    }

    fn l2_tail(&self, r: f64) -> f64 {
        norm_complement(self.spec(), 2.0, r).map(|e| e.value()).unwrap_or(f64::INFINITY).powi(2)
    }

    /// `τ_d(a) = inf_{r > 1} [a r^d + ‖h‖²_{L²(B_r^c)}]`.
    pub fn tau(&self, a: f64) -> Result<f64> {
        self.tau_with_radius(a).map(|(v, _)| v)
    }

    /// `τ_d(a)` and the minimizing radius.
    pub fn tau_with_radius(&self, a: f64) -> Result<(f64, f64)> {
        if !(a >= 0.0) {
            return domain(format!("τ_d needs a ≥ 0, got {a}"));
        }
        if a == 0.0 {
            return Ok((0.0, f64::INFINITY));
        }
        let d = self.d.as_f64();
        let at_one = a + self.l2_tail(1.0);
        // Beyond r_hi the first term alone exceeds the value at r = 1.
        let log_hi = ((at_one / a).ln() / d).max(1e-9);
        let obj = |lr: f64| a * (d * lr).exp() + self.l2_tail(lr.exp());
        let (lr, v) = optim::minimize(obj, 0.0, log_hi, 1e-9);
        if at_one <= v {
            Ok((at_one, 1.0))
        } else {
            Ok((v, lr.exp()))
        }
    }

    /// Infimum over `m ≥ 1` of
    /// `τ_d((m^{3d} + max|ζ|^d)/N^d) + √γ_d(m^{d-2} e^{-m²/2})`, together
    /// with the same infimum taken over `a ∈ (0, c_d)` with `m^{3d}`
    /// replaced by `log(1/a)^{3d/2}`.
    pub fn poincare_bound(&self, n: f64, shifts: &[Vec<f64>]) -> Result<PoincareBound> {
        if !(n > 1.0) {
            return domain(format!("window size must exceed 1, got {n}"));
        }
        let d = self.d.as_f64();
        let zmax = shifts
            .iter()
            .map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max)
            .powf(d);
        let nd = n.powf(d);
        let terms = |m: f64| -> (f64, f64) {
            let tau = self.tau((m.powf(3.0 * d) + zmax) / nd).unwrap_or(f64::INFINITY);
            let a = m.powf(d - 2.0) * (-0.5 * m * m).exp();
            let g = if a > 0.0 { self.gamma(a).unwrap_or(f64::INFINITY).sqrt() } else { 0.0 };
            (tau, g)
        };
        let (m_opt, value) = optim::minimize(
            |m| {
                let (a, b) = terms(m);
                a + b
            },
            1.0,
            40.0,
            1e-7,
        );
        let (tau_term, gamma_term) = terms(m_opt);
        let cd = c_d(self.d.get())?;
        let a_terms = |la: f64| -> f64 {
            let a = la.exp();
            let l = (1.0 / a).ln().abs();
            let tau = self.tau((l.powf(1.5 * d) + zmax) / nd).unwrap_or(f64::INFINITY);
            tau + self.gamma(a).unwrap_or(f64::INFINITY).sqrt()
        };
        let (la, a_form) = optim::minimize(a_terms, -800.0, cd.ln() - 1e-12, 1e-9);
        Ok(PoincareBound {
            value,
            m_opt,
            tau_term,
            gamma_term,
            a_form,
            a_opt: la.exp(),
        })
    }

    /// `Λ_h(δ)` through the cached table.
    pub fn lambda_h(&self, delta: f64) -> Result<Extended> {
        self.table.lambda(delta)
    }

    /// `[u0/ε + σ0/(εL)]^k exp(k t Λ_h(2(1-ε)²/(z_k L)²))`.
    #[allow(clippy::too_many_arguments)]
    pub fn moment_bound(&self, k: f64, t: f64, eps: f64, u0_sup: f64, sigma0: f64, lip: f64) -> Result<Extended> {
        if !(lip > 0.0) {
            return domain(format!("Lipschitz constant must be positive, got {lip}"));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return domain(format!("ε must lie in (0, 1), got {eps}"));
        }
        if !(t >= 0.0) {
            return domain(format!("t must be nonnegative, got {t}"));
        }
        let z = bdg_constant(k)?;
        let delta = 2.0 * (1.0 - eps).powi(2) / (z * lip).powi(2);
        let base = (u0_sup / eps + sigma0 / (eps * lip)).powf(k);
        Ok(match self.lambda_h(delta)? {
            Extended::Finite(l) => Extended::Finite(base * (k * t * l).exp()),
            Extended::Infinite(r) => Extended::infinite(format!("Λ_h is infinite: {r}")),
        })
    }

    /// `k Λ_h(2/(z_k L)²)`.
    pub fn lyapunov_bound(&self, k: f64, lip: f64) -> Result<Extended> {
        if !(lip > 0.0) {
            return domain(format!("Lipschitz constant must be positive, got {lip}"));
        }
        let z = bdg_constant(k)?;
        Ok(self.lambda_h(2.0 / (z * lip).powi(2))?.scale(k))
    }

    /// Least-squares slope of `log γ_d(t)` against `log t`.
    pub fn fit_gamma_exponent(&self, ts: &[f64]) -> Result<(f64, f64)> {
        let pts: Vec<(f64, f64)> = ts
            .iter()
            .map(|&t| Ok((t.ln(), self.gamma(t)?.ln())))
            .collect::<Result<_>>()?;
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let b = sxy / sxx;
        Ok(((my - b * mx).exp(), b))
    }

    pub fn report(&self, req: &ReportRequest) -> Result<GaugeReport> {
        let mut gamma_values = BTreeMap::new();
        for &t in &req.ts {
            gamma_values.insert(Key(t), self.gamma(t)?);
        }
        let mut tau_values = BTreeMap::new();
        for &a in &req.as_ {
            tau_values.insert(Key(a), self.tau(a)?);
        }
        let mut poincare = BTreeMap::new();
        for &n in &req.windows {
            poincare.insert(Key(n), self.poincare_bound(n, &req.shifts)?);
        }
        let mut moment_bounds = Vec::new();
        if let Some(m) = &req.moments {
            for &k in &m.ks {
                for &t in &m.ts {
                    let v = self.moment_bound(k, t, m.eps, m.u0_sup, m.sigma0, m.lip)?;
                    moment_bounds.push(MomentEntry { k, t, value: v });
                }
            }
        }
        let exponents = self
            .spec()
            .family()
            .power_exponents()
            .map(|(a, b)| exponents(self.d.get(), a, b))
            .transpose()?;
        Ok(GaugeReport {
            d: self.d.get(),
            c_d: c_d(self.d.get())?,
            exponents,
            gamma_values,
            tau_values,
            poincare,
            moment_bounds,
        })
    }
}

/// Inputs of [`Gauges::report`].
#[derive(Clone, Debug, Default)]
pub struct ReportRequest {
    pub ts: Vec<f64>,
    pub as_: Vec<f64>,
    pub windows: Vec<f64>,
    pub shifts: Vec<Vec<f64>>,
    pub moments: Option<MomentRequest>,
}

#[derive(Clone, Debug)]
pub struct MomentRequest {
    pub ks: Vec<f64>,
    pub ts: Vec<f64>,
    pub eps: f64,
    pub u0_sup: f64,
    pub sigma0: f64,
    pub lip: f64,
}

/// Totally ordered `f64` map key.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Key(pub f64);

impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl Serialize for Key {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&format_args!("{:e}", self.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentEntry {
    pub k: f64,
    pub t: f64,
    pub value: Extended,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeReport {
    pub d: usize,
    pub c_d: f64,
    pub exponents: Option<(f64, f64)>,
    pub gamma_values: BTreeMap<Key, f64>,
    pub tau_values: BTreeMap<Key, f64>,
    pub poincare: BTreeMap<Key, PoincareBound>,
    pub moment_bounds: Vec<MomentEntry>,
}

impl GaugeReport {
    /// Long format: `quantity,arg1,arg2,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "quantity,arg1,arg2,value")?;
        writeln!(w, "c_d,{},,{:e}", self.d, self.c_d)?;
        if let Some((a, nu)) = self.exponents {
            writeln!(w, "exponent_A,,,{a:e}")?;
            writeln!(w, "exponent_nu,,,{nu:e}")?;
        }
        for (t, v) in &self.gamma_values {
            writeln!(w, "gamma,{:e},,{v:e}", t.0)?;
        }
        for (a, v) in &self.tau_values {
            writeln!(w, "tau,{:e},,{v:e}", a.0)?;
        }
        for (n, b) in &self.poincare {
            writeln!(w, "poincare,{:e},,{:e}", n.0, b.value)?;
            writeln!(w, "poincare_a_form,{:e},,{:e}", n.0, b.a_form)?;
        }
        for m in &self.moment_bounds {
            writeln!(w, "moment_bound,{:e},{:e},{:e}", m.k, m.t, m.value.value())?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn gamma_d(spec: &KernelSpec, t: f64) -> Result<f64> {
    Gauges::new(spec)?.gamma(t)
}

pub fn tau_d(spec: &KernelSpec, a: f64) -> Result<f64> {
    Gauges::new(spec)?.tau(a)
}

pub fn poincare_bound(spec: &KernelSpec, n: f64, shifts: &[Vec<f64>]) -> Result<PoincareBound> {
    Gauges::new(spec)?.poincare_bound(n, shifts)
}

pub fn moment_bound(spec: &KernelSpec, k: f64, t: f64, eps: f64, u0_sup: f64, sigma0: f64, lip: f64) -> Result<Extended> {
    Gauges::new(spec)?.moment_bound(k, t, eps, u0_sup, sigma0, lip)
}

pub fn lyapunov_bound(spec: &KernelSpec, k: f64, lip: f64) -> Result<Extended> {
    Gauges::new(spec)?.lyapunov_bound(k, lip)
}

/// `∫_0^s f̄ ω_d` by direct adaptive quadrature, for cross-checking the grid.
pub fn cumulative_direct(g: &Gauges, s: f64) -> Result<Extended> {
    let d = g.d;
    let f = |r: f64| g.table.fbar_interpolated(r).unwrap_or(f64::NAN) * omega_unchecked(r, d);
    Ok(quad::integrate_to_zero(f, s, Tolerance::rel(1e-8)).value)
}
