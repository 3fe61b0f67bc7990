//! Tabulated `f` and `|h| * |h̃|`, and the functionals built on them:
//! the Dalang integral, `Λ_h`, `f̄` and `K(h)`.

use std::io::Write;
use std::sync::OnceLock;

use rayon::prelude::*;

use super::{f_convolution_radial, pd_tail_bound, KernelSpec};
use crate::error::{domain, Error, Result};
use crate::extended::Extended;
use crate::kernels::potential_density_radial;
use crate::quad::{self, kronrod_nodes, Tolerance};

/// Exponents `p` tried when bounding the tail of `f̄`.
pub const FBAR_EXPONENTS: [f64; 7] = [1.05, 1.1, 1.2, 1.25, 1.5, 2.0, 3.0];

const LAMBDA_LO: f64 = 1e-6;
const LAMBDA_HI: f64 = 1e6;
const LAMBDA_FLOOR: f64 = 1e-10;
const LAMBDA_RTOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableOptions {
    pub r_min: f64,
    pub r_max: f64,
    pub panels_per_decade: f64,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            r_min: 1e-9,
            r_max: 1e6,
            panels_per_decade: 6.0,
        }
    }
}

impl TableOptions {
    /// Coarser grid for the expensive higher-dimensional convolutions.
    pub fn coarse() -> Self {
        Self {
            r_min: 1e-9,
            r_max: 1e5,
            panels_per_decade: 2.0,
        }
    }
}

/// `f` and `|h| * |h̃|` on the Kronrod nodes of geometric panels.
#[derive(Debug)]
pub struct CorrelationTable {
    pub radii: Vec<f64>,
    pub f_values: Vec<f64>,
    pub f_abs_values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Quadrature weights in `r` attached to each radius.
    pub weights: Vec<f64>,
    spec: KernelSpec,
    /// Local power exponents of `f_abs` below the first and beyond the last node.
    head_exponent: f64,
    tail_exponent: f64,
    /// Beyond the last panel `f_abs` vanishes identically.
    compact: bool,
    ball_edge: usize,
    tail_cache: OnceLock<f64>,
}

fn log_slope(r0: f64, f0: f64, r1: f64, f1: f64) -> f64 {
    if f0 > 0.0 && f1 > 0.0 {
        (f1 / f0).ln() / (r1 / r0).ln()
    } else {
        0.0
    }
}

impl CorrelationTable {
    pub fn build(spec: &KernelSpec, opts: TableOptions) -> Result<Self> {
        if !(opts.r_min > 0.0 && opts.r_max > opts.r_min && opts.panels_per_decade > 0.0) {
            return domain(format!("invalid table options {opts:?}"));
        }
        let mut r_max = opts.r_max.max(8.0 * spec.structural_radius());
        let compact = spec.support_radius().is_some();
        if let Some(sr) = spec.support_radius() {
            r_max = 2.0 * sr;
        }
        let decades = (r_max / opts.r_min).log10();
        let n = (decades * opts.panels_per_decade).ceil().max(1.0) as usize;
        let mut edges: Vec<f64> = (0..=n)
            .map(|k| opts.r_min * (r_max / opts.r_min).powf(k as f64 / n as f64))
            .collect();
        edges[n] = r_max;
        for b in spec.breakpoints() {
            edges.extend([b, 2.0 * b]);
        }
        edges.push(1.0);
        edges.retain(|&e| e >= opts.r_min && e <= r_max);
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * b.abs());
        let mut radii = Vec::with_capacity(21 * edges.len());
        let mut weights = Vec::with_capacity(21 * edges.len());
        let mut ball_edge = 0;
        for w in edges.windows(2) {
            let mut nodes = kronrod_nodes(w[0], w[1]);
            nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (x, wt) in nodes {
                radii.push(x);
                weights.push(wt);
            }
            if w[1] <= 1.0 {
                ball_edge = radii.len();
            }
        }
        let values: Vec<_> = radii
            .par_iter()
            .map(|&r| f_convolution_radial(spec, r))
            .collect::<Result<Vec<_>>>()?;
        let f_values: Vec<f64> = values.iter().map(|v| v.f).collect();
        let f_abs_values: Vec<f64> = values.iter().map(|v| v.f_abs).collect();
        let errors: Vec<f64> = values.iter().map(|v| v.error).collect();
        let m = radii.len();
        // Widely separated nodes keep the slope estimates away from the
        // curvature inside a single panel.
        let head_exponent = log_slope(radii[0], f_abs_values[0], radii[20.min(m - 1)], f_abs_values[20.min(m - 1)]);
        let j = m.saturating_sub(21);
        let tail_exponent = log_slope(radii[j], f_abs_values[j], radii[m - 1], f_abs_values[m - 1]);
        Ok(Self {
            radii,
            f_values,
            f_abs_values,
            errors,
            weights,
            spec: spec.clone(),
            head_exponent,
            tail_exponent,
            compact,
            ball_edge,
            tail_cache: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "radius,f,f_abs,error")?;
        for i in 0..self.radii.len() {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e}",
                self.radii[i], self.f_values[i], self.f_abs_values[i], self.errors[i]
            )?;
        }
        Ok(())
    }

    fn sphere(&self) -> f64 {
        self.spec.dimension().sphere_area()
    }

    /// `∫_0^{r_0} S r^{d-1} g(r) f_abs(r) dr` with `f_abs` extrapolated as a power.
    fn head<G: Fn(f64) -> f64>(&self, g: G) -> Extended {
        let (r0, f0) = (self.radii[0], self.f_abs_values[0]);
        if f0 == 0.0 {
            return Extended::Finite(0.0);
        }
        let dm1 = self.spec.dimension().as_f64() - 1.0;
        let k = self.head_exponent;
        let s = self.sphere();
        let integrand = |r: f64| s * r.powf(dm1) * g(r) * f0 * (r / r0).powf(k);
        quad::integrate_to_zero(integrand, r0, Tolerance::rel(1e-9)).value
    }

    fn tail<G: Fn(f64) -> f64>(&self, g: G) -> Extended {
        let m = self.radii.len() - 1;
        let (rn, fnv) = (self.radii[m], self.f_abs_values[m]);
        if self.compact || fnv == 0.0 {
            return Extended::Finite(0.0);
        }
        let dm1 = self.spec.dimension().as_f64() - 1.0;
        let k = self.tail_exponent;
        let s = self.sphere();
        let integrand = |r: f64| s * r.powf(dm1) * g(r) * fnv * (r / rn).powf(k);
        quad::integrate_to_infinity(integrand, rn, Tolerance::rel(1e-9)).value
    }

    /// `∫ v_λ(x) (|h| * |h̃|)(x) dx`.
    pub fn dalang(&self, lambda: f64) -> Result<Extended> {
        if !(lambda > 0.0) {
            return domain(format!("λ must be positive, got {lambda}"));
        }
        let d = self.spec.dimension();
        let v = |r: f64| potential_density_radial(lambda, r, d).unwrap_or(f64::NAN);
        let s = self.sphere();
        let dm1 = d.as_f64() - 1.0;
        let body: f64 = self
            .radii
            .iter()
            .zip(&self.weights)
            .zip(&self.f_abs_values)
            .map(|((&r, &w), &f)| if f == 0.0 { 0.0 } else { w * s * r.powf(dm1) * v(r) * f })
            .sum();
        let head = self.head(v);
        if let Extended::Infinite(reason) = head {
            return Ok(Extended::infinite(format!("Dalang integral diverges at the origin: {reason}")));
        }
        let total = head.add(Extended::Finite(body)).add(self.tail(v));
        match total {
            Extended::Finite(x) if !x.is_finite() => Err(Error::Quadrature {
                what: "Dalang integral".into(),
                value: x,
                residual: f64::NAN,
            }),
            t => Ok(t),
        }
    }

    /// `Λ_h(δ) = inf{λ > 0 : dalang(λ) < δ}`.
    pub fn lambda(&self, delta: f64) -> Result<Extended> {
        if !(delta > 0.0) {
            return domain(format!("δ must be positive, got {delta}"));
        }
        let below = |lambda: f64| -> Result<bool> { Ok(self.dalang(lambda)?.value() < delta) };
        if !below(LAMBDA_HI)? {
            return Ok(Extended::infinite(format!(
                "the Dalang integral stays at or above {delta} for every λ ≤ {LAMBDA_HI}"
            )));
        }
        let mut hi = LAMBDA_HI;
        let mut lo = LAMBDA_LO;
        while below(lo)? {
            hi = lo;
            lo *= 0.1;
            if lo < LAMBDA_FLOOR {
                return Ok(Extended::Finite(0.0));
            }
        }
        while hi / lo - 1.0 > LAMBDA_RTOL {
            let mid = (lo * hi).sqrt();
            if below(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Extended::Finite(hi))
    }

    /// Radius beyond which the tail bound replaces the tabulated values.
    pub fn fbar_cutoff(&self) -> f64 {
        8.0 * self.spec.structural_radius()
    }

    /// `f_abs` between nodes by log-log interpolation, and outside the grid by
    /// the same power laws used for the head and tail integrals.
    pub fn f_abs_at(&self, r: f64) -> Result<f64> {
        let n = self.radii.len();
        if r < self.radii[0] {
            return Ok(self.f_abs_values[0] * (r / self.radii[0]).powf(self.head_exponent));
        }
        if r > self.radii[n - 1] {
            if self.compact {
                return Ok(0.0);
            }
            return Ok(self.f_abs_values[n - 1] * (r / self.radii[n - 1]).powf(self.tail_exponent));
        }
        let i = self.radii.partition_point(|&x| x <= r);
        if i == 0 {
            return Ok(self.f_abs_values[0]);
        }
        if i == n {
            return Ok(self.f_abs_values[n - 1]);
        }
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        let (f0, f1) = (self.f_abs_values[i - 1], self.f_abs_values[i]);
        if f0 > 0.0 && f1 > 0.0 {
            let t = (r / r0).ln() / (r1 / r0).ln();
            Ok(f0 * (f1 / f0).powf(t))
        } else {
            let t = (r - r0) / (r1 - r0);
            Ok(f0 + t * (f1 - f0))
        }
    }

    /// Bound on `sup_{|x| > c} f_abs` with `c = max(r, cutoff)`, minimized over
    /// the exponents in [`FBAR_EXPONENTS`] and inner radii up to `c/2`.
    fn tail_bound(&self, r: f64) -> Result<f64> {
        let c = r.max(self.fbar_cutoff());
        let compute = || -> Result<f64> {
            let top = 0.5 * c;
            let mut rhos: Vec<f64> = (0..12).map(|k| top * 0.5f64.powi(k)).collect();
            rhos.push(0.5 * r);
            let mut best = f64::INFINITY;
            for &p in &FBAR_EXPONENTS {
                for &rho in &rhos {
                    if rho <= 0.0 {
                        continue;
                    }
                    let v = pd_tail_bound(&self.spec, p, rho)?.value();
                    if v < best {
                        best = v;
                    }
                }
            }
            Ok(best)
        };
        if r <= self.fbar_cutoff() {
            if let Some(v) = self.tail_cache.get() {
                return Ok(*v);
            }
            let v = compute()?;
            let _ = self.tail_cache.set(v);
            Ok(v)
        } else {
            compute()
        }
    }

    /// `f̄(r) = sup_{|x| > r} (|h| * |h̃|)(x)`.
    pub fn fbar(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return domain(format!("f̄ needs r > 0, got {r}"));
        }
        let at_r = f_convolution_radial(&self.spec, r)?.f_abs;
        self.fbar_with(r, at_r)
    }

    /// [`Self::fbar`] with `f_abs(r)` interpolated from the table instead of
    /// recomputed; for evaluating `f̄` on many radii.
    pub fn fbar_interpolated(&self, r: f64) -> Result<f64> {
        if !(r > 0.0) {
            return domain(format!("f̄ needs r > 0, got {r}"));
        }
        let at_r = self.f_abs_at(r)?;
        self.fbar_with(r, at_r)
    }

    fn fbar_with(&self, r: f64, at_r: f64) -> Result<f64> {
        if self.compact && r >= *self.radii.last().expect("nonempty") {
            return Ok(0.0);
        }
        let cutoff = self.fbar_cutoff();
        let mut sup = at_r;
        let start = self.radii.partition_point(|&x| x <= r);
        for i in start..self.radii.len() {
            if self.radii[i] > cutoff {
                break;
            }
            sup = sup.max(self.f_abs_values[i]);
        }
        Ok(sup.max(self.tail_bound(r)?))
    }

    /// `∫_{B_1} (|h| * |h̃|)`.
    pub fn ball_integral(&self) -> Result<Extended> {
        let s = self.sphere();
        let dm1 = self.spec.dimension().as_f64() - 1.0;
        let mut body = 0.0;
        for i in 0..self.ball_edge {
            body += self.weights[i] * s * self.radii[i].powf(dm1) * self.f_abs_values[i];
        }
        // Panel edges include 1 whenever it lies inside the grid, and past the
        // grid f_abs is zero for compact kernels.
        Ok(self.head(|_| 1.0).add(Extended::Finite(body)))
    }

    /// `K(h) = 1 + ∫_{B_1} (|h| * |h̃|) + f̄(1)`.
    pub fn k_of_h(&self) -> Result<Extended> {
        Ok(Extended::Finite(1.0)
            .add(self.ball_integral()?)
            .add(Extended::Finite(self.fbar(1.0)?)))
    }
}

fn default_table(spec: &KernelSpec) -> Result<CorrelationTable> {
    let opts = if spec.dimension().get() == 1 {
        TableOptions::default()
    } else {
        TableOptions::coarse()
    };
    CorrelationTable::build(spec, opts)
}

/// `∫ v_λ (|h| * |h̃|)`; divergence of the convolution itself counts as
/// divergence of the integral.
pub fn dalang_integral(spec: &KernelSpec, lambda: f64) -> Result<Extended> {
    if !(lambda > 0.0) {
        return domain(format!("λ must be positive, got {lambda}"));
    }
    match default_table(spec) {
        Ok(t) => t.dalang(lambda),
        Err(Error::Divergent(reason)) => Ok(Extended::infinite(format!("|h| * |h̃| diverges: {reason}"))),
        Err(e) => Err(e),
    }
}

pub fn lambda_h(spec: &KernelSpec, delta: f64) -> Result<Extended> {
    if !(delta > 0.0) {
        return domain(format!("δ must be positive, got {delta}"));
    }
    default_table(spec)?.lambda(delta)
}

pub fn fbar(spec: &KernelSpec, r: f64) -> Result<f64> {
    default_table(spec)?.fbar(r)
}

pub fn k_of_h(spec: &KernelSpec) -> Result<Extended> {
    default_table(spec)?.k_of_h()
}
