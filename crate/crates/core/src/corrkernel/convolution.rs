//! `f = h * h̃` and `|h| * |h̃|` by quadrature.
//!
//! In one dimension the integral `∫ h(y) h(y - x) dy` is split at the two
//! singular points and at every breakpoint of either factor. In higher
//! dimensions the integrand is symmetric under `y ↦ x - y`, so twice the
//! integral over the half-space `{|y| < |y - x|}` suffices; there the only
//! singular point is the origin and polar coordinates about it reduce the
//! problem to a two-dimensional integral over `(θ, ρ)`.

use super::KernelSpec;
use crate::error::{Error, Result};
use crate::kernels::Dimension;
use crate::quad::{self, Tolerance};

/// `f(x)` and `(|h| * |h̃|)(x)` with a combined error estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvolutionValue {
    pub f: f64,
    pub f_abs: f64,
    pub error: f64,
}

/// Convolutions at a point `x` of `R^d`.
pub fn f_convolution(spec: &KernelSpec, x: &[f64]) -> Result<ConvolutionValue> {
    if x.len() != spec.dimension().get() {
        return Err(Error::Domain(format!(
            "point has dimension {}, kernel has {}",
            x.len(),
            spec.dimension().get()
        )));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    f_convolution_radial(spec, r)
}

/// Convolutions at radius `r`; both are radial because `h` is.
pub fn f_convolution_radial(spec: &KernelSpec, r: f64) -> Result<ConvolutionValue> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("radius must be nonnegative, got {r}")));
    }
    if let Some(sr) = spec.support_radius() {
        if r >= 2.0 * sr {
            return Ok(ConvolutionValue { f: 0.0, f_abs: 0.0, error: 0.0 });
        }
    }
    if r == 0.0 {
        let n2 = super::norm_complement(spec, 2.0, 0.0)?.value();
        let v = n2 * n2;
        return Ok(ConvolutionValue { f: v, f_abs: v, error: 0.0 });
    }
    let signed = !spec.nonnegative();
    let (f, ef) = match spec.dimension().get() {
        1 => line(spec, r, false)?,
        d => polar(spec, r, d, false)?,
    };
    let (f_abs, ea) = if signed {
        match spec.dimension().get() {
            1 => line(spec, r, true)?,
            d => polar(spec, r, d, true)?,
        }
    } else {
        (f, ef)
    };
    Ok(ConvolutionValue {
        f,
        f_abs: f_abs.max(f.abs()),
        error: ef + ea,
    })
}

fn tolerance() -> Tolerance {
    Tolerance {
        abs: 1e-300,
        rel: 1e-11,
        max_intervals: 600,
    }
}

fn check(what: &str, value: f64, error: f64) -> Result<()> {
    if !value.is_finite() || error > 1e-6 * value.abs().max(1e-300) && error > 1e-14 {
        return Err(Error::Quadrature {
            what: what.to_string(),
            value,
            residual: error,
        });
    }
    Ok(())
}

fn sweep_value(s: quad::SweepResult, what: &str) -> Result<(f64, f64)> {
    match s.value {
        crate::extended::Extended::Finite(v) => Ok((v, s.error)),
        crate::extended::Extended::Infinite(reason) => Err(Error::Divergent(format!("{what}: {reason}"))),
    }
}

/// One-dimensional `∫ h(|y|) h(|y - r|) dy` for `r > 0`.
fn line(spec: &KernelSpec, r: f64, absolute: bool) -> Result<(f64, f64)> {
    let h = |s: f64| {
        let v = spec.at_radius(s);
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let tol = tolerance();
    let mut pts = vec![0.0, r, -r, 2.0 * r];
    if spec.support_radius().is_none() {
        let sr = spec.structural_radius();
        pts.extend([r + sr, -sr]);
    }
    for b in spec.breakpoints() {
        pts.extend([b, -b, r + b, r - b]);
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * b.abs().max(1.0));
    let singular = spec.singular();
    let mut value = 0.0;
    let mut error = 0.0;
    // Each segment is integrated in a coordinate measured from a singular
    // point when one of its ends is 0 or r, so that the vanishing factor is
    // computed without cancellation.
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let a_sing = singular && (a == 0.0 || a == r);
        let b_sing = singular && (b == 0.0 || b == r);
        let pair_from = |anchor: f64, s: f64, sign: f64| {
            // y = anchor + sign·s
            let y = anchor + sign * s;
            let (dy, dyx) = if anchor == 0.0 {
                (s, (y - r).abs())
            } else {
                (y.abs(), s)
            };
            h(dy) * h(dyx)
        };
        if !a_sing && !b_sing {
            let q = quad::integrate(|y| h(y.abs()) * h((y - r).abs()), a, b, tol);
            value += q.value;
            error += q.error;
            continue;
        }
        let m = 0.5 * (a + b);
        if a_sing {
            let s = quad::integrate_to_zero(|s| pair_from(a, s, 1.0), m - a, tol);
            let (v, e) = sweep_value(s, "convolution near a singular point")?;
            value += v;
            error += e;
        } else {
            let q = quad::integrate(|y| h(y.abs()) * h((y - r).abs()), a, m, tol);
            value += q.value;
            error += q.error;
        }
        if b_sing {
            let s = quad::integrate_to_zero(|s| pair_from(b, s, -1.0), b - m, tol);
            let (v, e) = sweep_value(s, "convolution near a singular point")?;
            value += v;
            error += e;
        } else {
            let q = quad::integrate(|y| h(y.abs()) * h((y - r).abs()), m, b, tol);
            value += q.value;
            error += q.error;
        }
    }
    let lo = pts[0];
    let hi = *pts.last().expect("nonempty");
    if spec.support_radius().is_none() {
        let right = quad::integrate_to_infinity(|y| h(y) * h(y - r), hi, tol);
        let (v, e) = sweep_value(right, "convolution tail")?;
        value += v;
        error += e;
        let left = quad::integrate_to_infinity(|s| h(s) * h(s + r), -lo, tol);
        let (v, e) = sweep_value(left, "convolution tail")?;
        value += v;
        error += e;
    }
    check("one-dimensional convolution", value, error)?;
    Ok((value, error))
}

/// `2 ∫_0^π W(θ) ∫_0^{ρ_max(θ)} ρ^{d-1} h(ρ) h(D) dρ dθ` with
/// `D² = ρ² + r² - 2ρr cos θ` and `W(θ) = S_{d-2} sin^{d-2} θ`.
fn polar(spec: &KernelSpec, r: f64, d: usize, absolute: bool) -> Result<(f64, f64)> {
    let h = |s: f64| {
        let v = spec.at_radius(s);
        if absolute {
            v.abs()
        } else {
            v
        }
    };
    let dm1 = d as f64 - 1.0;
    let wconst = Dimension::new(d - 1)?.sphere_area();
    let bps = spec.breakpoints();
    let support = spec.support_radius();
    let singular = spec.singular();
    let inner_tol = tolerance();
    let mut failure: Option<Error> = None;
    let mut inner = |theta: f64| -> f64 {
        let (sin, cos) = theta.sin_cos();
        let rho_max = if cos > 1e-300 { r / (2.0 * cos) } else { f64::INFINITY };
        let rho_max = match support {
            Some(sr) => rho_max.min(sr),
            None => rho_max,
        };
        let g = |rho: f64| {
            if rho <= 0.0 {
                return 0.0;
            }
            let dd = (rho * rho + r * r - 2.0 * rho * r * cos).max(0.0).sqrt();
            let a = h(rho);
            if a == 0.0 {
                return 0.0;
            }
            rho.powf(dm1) * a * h(dd)
        };
        let mut pts = vec![0.0];
        for &b in &bps {
            pts.push(b);
            let disc = b * b - r * r * sin * sin;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                pts.push(r * cos - sq);
                pts.push(r * cos + sq);
            }
        }
        if !rho_max.is_finite() {
            pts.push(r + spec.structural_radius());
        }
        // Keeps the singular sweep inside the region where h(D) ≈ h(r).
        pts.push(0.5 * r.min(rho_max));
        pts.retain(|&p| p >= 0.0 && p < rho_max);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if rho_max.is_finite() {
            pts.push(rho_max);
        }
        let mut total = 0.0;
        let mut start = 0;
        if singular {
            let first = if pts.len() > 1 { pts[1] } else { r.min(1.0) };
            match quad::integrate_to_zero(g, first, inner_tol).value {
                crate::extended::Extended::Finite(v) => total += v,
                crate::extended::Extended::Infinite(reason) => {
                    failure.get_or_insert(Error::Divergent(format!("convolution diverges: {reason}")));
                    return f64::NAN;
                }
            }
            start = 1;
            if pts.len() == 1 {
                pts.push(first);
            }
        }
        total += quad::integrate_piecewise(g, &pts[start..], inner_tol).value;
        if !rho_max.is_finite() {
            let last = *pts.last().expect("nonempty");
            let from = if last > 0.0 { last } else { r.max(spec.structural_radius()) };
            if last == 0.0 {
                total += quad::integrate(g, 0.0, from, inner_tol).value;
            }
            match quad::integrate_to_infinity(g, from, inner_tol).value {
                crate::extended::Extended::Finite(v) => total += v,
                crate::extended::Extended::Infinite(reason) => {
                    failure.get_or_insert(Error::Divergent(format!("convolution tail diverges: {reason}")));
                    return f64::NAN;
                }
            }
        }
        total * wconst * sin.powf(d as f64 - 2.0)
    };
    let mut thetas = vec![0.0, std::f64::consts::FRAC_PI_2, std::f64::consts::PI];
    for &b in &bps {
        if b < r {
            let a = (b / r).asin();
            thetas.extend([a, std::f64::consts::PI - a]);
        }
        if 2.0 * b > r {
            thetas.push((r / (2.0 * b)).acos());
        }
    }
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    let outer_tol = Tolerance {
        abs: 1e-300,
        rel: 1e-10,
        max_intervals: 400,
    };
    let q = quad::integrate_piecewise(&mut inner, &thetas, outer_tol);
    if let Some(e) = failure {
        return Err(e);
    }
    let value = 2.0 * q.value;
    let error = 2.0 * q.error;
    check("polar convolution", value, error)?;
    Ok((value, error))
}
