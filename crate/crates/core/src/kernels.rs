//! Heat kernel and λ-potential calculus on `R^d`.

use crate::error::{domain, Result};
use crate::quad::{self, Tolerance};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_ur};
use std::f64::consts::{E, PI};

/// Spatial dimension `d ≥ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub const ONE: Dimension = Dimension(1);
    pub const TWO: Dimension = Dimension(2);
    pub const THREE: Dimension = Dimension(3);

    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return domain("dimension must be at least 1");
        }
        Ok(Dimension(d))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }

    /// Surface area `S_{d-1}` of the unit sphere in `R^d`.
    pub fn sphere_area(self) -> f64 {
        let h = 0.5 * self.as_f64();
        2.0 * PI.powf(h) / gamma(h)
    }
}

impl TryFrom<usize> for Dimension {
    type Error = String;
    fn try_from(d: usize) -> std::result::Result<Self, String> {
        Dimension::new(d).map_err(|e| e.to_string())
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dimension_of(x: &[f64]) -> Result<Dimension> {
    Dimension::new(x.len())
}

/// `p_t(x) = (2πt)^{-d/2} exp(-|x|²/(2t))`.
pub fn heat_kernel(t: f64, x: &[f64]) -> Result<f64> {
    heat_kernel_radial(t, norm(x), dimension_of(x)?)
}

pub fn heat_kernel_radial(t: f64, r: f64, d: Dimension) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("heat kernel needs t > 0, got {t}"));
    }
    Ok((2.0 * PI * t).powf(-0.5 * d.as_f64()) * (-r * r / (2.0 * t)).exp())
}

/// `log_+(z) = log(max(z, e))`.
pub fn log_plus(z: f64) -> f64 {
    z.max(E).ln()
}

/// The modulus `ω_d`: 1 in one dimension, `r log_+(1/r)` in two, `r` above.
pub fn omega_d(r: f64, d: Dimension) -> Result<f64> {
    if !(r > 0.0) {
        return domain(format!("omega_d needs r > 0, got {r}"));
    }
    Ok(omega_unchecked(r, d))
}

pub(crate) fn omega_unchecked(r: f64, d: Dimension) -> f64 {
    match d.get() {
        1 => 1.0,
        2 => r * log_plus(1.0 / r),
        _ => r,
    }
}

/// `v_λ(x) = ∫_0^∞ e^{-λt} p_t(x) dt`, `+∞` at the origin when `d ≥ 2`.
pub fn potential_density(lambda: f64, x: &[f64]) -> Result<f64> {
    potential_density_radial(lambda, norm(x), dimension_of(x)?)
}

pub fn potential_density_radial(lambda: f64, r: f64, d: Dimension) -> Result<f64> {
    if !(lambda > 0.0) {
        return domain(format!("potential density needs λ > 0, got {lambda}"));
    }
    if !(r >= 0.0) {
        return domain(format!("radius must be nonnegative, got {r}"));
    }
    let k = (2.0 * lambda).sqrt();
    match d.get() {
        1 => Ok((-k * r).exp() / k),
        _ if r == 0.0 => Ok(f64::INFINITY),
        3 => Ok((-k * r).exp() / (2.0 * PI * r)),
        _ => potential_density_quadrature(lambda, r, d),
    }
}

/// Quadrature route for `v_λ`, valid in every dimension.
///
/// Substitutes `u = 1/t` and then `u = e^y`, which leaves an integrand with
/// doubly exponential decay at both ends; the range is split at `u = 1`.
pub fn potential_density_quadrature(lambda: f64, r: f64, d: Dimension) -> Result<f64> {
    if !(lambda > 0.0) {
        return domain(format!("potential density needs λ > 0, got {lambda}"));
    }
    if r == 0.0 && d.get() >= 2 {
        return Ok(f64::INFINITY);
    }
    let h = 0.5 * d.as_f64();
    let log_norm = -h * (2.0 * PI).ln();
    let integrand = |y: f64| {
        let u = y.exp();
        (log_norm - lambda / u - 0.5 * r * r * u + (h - 1.0) * y).exp()
    };
    // Beyond these limits the exponent is below -740.
    let y_lo = (lambda / 745.0).ln().min(-1.0);
    let y_hi = if r > 0.0 { (1490.0 / (r * r)).ln().max(1.0) } else { 745.0 };
    let tol = Tolerance::rel(1e-12);
    let total = quad::integrate_piecewise(integrand, &[y_lo, 0.0, y_hi], tol);
    Ok(total.value)
}

/// `r^{-d+1} ω_d(r)` on `(0, 1)`.
pub fn potential_asymptote(r: f64, d: Dimension) -> Result<f64> {
    if !(r > 0.0 && r < 1.0) {
        return domain(format!("potential asymptote needs r in (0,1), got {r}"));
    }
    Ok(r.powf(1.0 - d.as_f64()) * omega_unchecked(r, d))
}

/// `P(|Z| > ν)` for a standard Gaussian vector `Z` in `R^d`.
pub fn gaussian_tail(nu: f64, d: Dimension) -> Result<f64> {
    if !(nu >= 0.0) {
        return domain(format!("gaussian tail needs ν ≥ 0, got {nu}"));
    }
    if nu == 0.0 {
        return Ok(1.0);
    }
    Ok(gamma_ur(0.5 * d.as_f64(), 0.5 * nu * nu))
}

/// `2 ν^{d-2} e^{-ν²/2} / (2^{d/2} Γ(d/2))`.
pub fn mills_asymptote(nu: f64, d: Dimension) -> Result<f64> {
    if !(nu > 0.0) {
        return domain(format!("mills asymptote needs ν > 0, got {nu}"));
    }
    let h = 0.5 * d.as_f64();
    Ok(2.0 * nu.powf(d.as_f64() - 2.0) * (-0.5 * nu * nu).exp() / (2f64.powf(h) * gamma(h)))
}

/// Radial profiles `(p̄_t(s), v̄_λ(s))`.
pub fn radial_profiles(s: f64, param: f64, d: Dimension) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return domain(format!("radial profile needs s > 0, got {s}"));
    }
    Ok((heat_kernel_radial(param, s, d)?, potential_density_radial(param, s, d)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn radial_mass(d: Dimension, mut f: impl FnMut(f64) -> f64) -> f64 {
        let s = d.sphere_area();
        let dm1 = d.as_f64() - 1.0;
        let tol = Tolerance::rel(1e-12);
        let inner = quad::integrate_to_zero(|r| r.powf(dm1) * f(r), 1.0, tol);
        let outer = quad::integrate_to_infinity(|r| r.powf(dm1) * f(r), 1.0, tol);
        s * (inner.value.value() + outer.value.value())
    }

    #[test]
    fn heat_kernel_at_origin() {
        let v = heat_kernel(1.0, &[0.0]).unwrap();
        assert!((v - (2.0 * PI).powf(-0.5)).abs() < 1e-15);
        assert!(heat_kernel(0.0, &[0.0]).is_err());
    }

    #[test]
    fn heat_kernel_has_unit_mass() {
        for d in 1..=3 {
            let d = Dimension::new(d).unwrap();
            for t in [0.1, 1.0, 7.0] {
                let m = radial_mass(d, |r| heat_kernel_radial(t, r, d).unwrap());
                assert!((m - 1.0).abs() < 1e-10, "d={d:?} t={t} mass={m}");
            }
        }
    }

    #[test]
    fn heat_semigroup_on_fine_grid() {
        let dx = 0.005;
        let n = 4000i64;
        let mut worst: f64 = 0.0;
        for x in [-1.3, -0.2, 0.0, 0.4, 2.1] {
            let mut acc = 0.0;
            for k in -n..=n {
                let y = k as f64 * dx;
                acc += heat_kernel(0.5, &[y]).unwrap() * heat_kernel(0.5, &[x - y]).unwrap();
            }
            worst = worst.max((acc * dx - heat_kernel(1.0, &[x]).unwrap()).abs());
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega_d(0.3, Dimension::ONE).unwrap(), 1.0);
        assert!((omega_d(1.0 / E, Dimension::TWO).unwrap() - 1.0 / E).abs() < 1e-15);
        assert_eq!(omega_d(0.5, Dimension::THREE).unwrap(), 0.5);
        assert!(omega_d(0.0, Dimension::TWO).is_err());
    }

    #[test]
    fn potential_density_examples() {
        let v = potential_density(1.0, &[0.0]).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(potential_density(1.0, &[0.0, 0.0]).unwrap(), f64::INFINITY);
        assert!(potential_density(0.0, &[1.0]).is_err());
        let q = potential_density_quadrature(1.0, 1.0, Dimension::THREE).unwrap();
        let closed = (-(2f64).sqrt()).exp() / (2.0 * PI);
        assert!((q - closed).abs() < 1e-8 * closed);
    }

    #[test]
    fn potential_density_is_a_probability_density_after_scaling() {
        for d in 1..=3 {
            let d = Dimension::new(d).unwrap();
            for lambda in [0.5, 1.0, 4.0] {
                let m = radial_mass(d, |r| potential_density_radial(lambda, r, d).unwrap());
                assert!((lambda * m - 1.0).abs() < 1e-8, "d={d:?} λ={lambda} got {}", lambda * m);
            }
        }
    }

    #[test]
    fn one_dimensional_closed_form_matches_quadrature() {
        for i in 0..20 {
            let r = 0.05 + 0.2 * i as f64;
            let lambda = 0.3 + 0.1 * i as f64;
            let a = potential_density_radial(lambda, r, Dimension::ONE).unwrap();
            let b = potential_density_quadrature(lambda, r, Dimension::ONE).unwrap();
            assert!((a - b).abs() < 1e-8 * a.max(1e-300), "r={r} {a} {b}");
        }
    }

    #[test]
    fn two_dimensional_ratio_to_asymptote_is_bounded() {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..=60 {
            let r = 0.01 * (90.0f64).powf(i as f64 / 60.0);
            let q = potential_density_radial(1.0, r, Dimension::TWO).unwrap()
                / potential_asymptote(r, Dimension::TWO).unwrap();
            lo = lo.min(q);
            hi = hi.max(q);
        }
        assert!(lo > 0.05 && hi < 5.0, "[{lo}, {hi}]");
    }

    #[test]
    fn asymptote_examples() {
        assert_eq!(potential_asymptote(0.5, Dimension::ONE).unwrap(), 1.0);
        assert!((potential_asymptote(0.1, Dimension::THREE).unwrap() - 10.0).abs() < 1e-12);
        assert!(potential_asymptote(1.0, Dimension::ONE).is_err());
    }

    #[test]
    fn gaussian_tail_examples() {
        assert_eq!(gaussian_tail(0.0, Dimension::ONE).unwrap(), 1.0);
        let oracle = statrs::function::erf::erfc(3.0 / 2f64.sqrt());
        assert!((gaussian_tail(3.0, Dimension::ONE).unwrap() - oracle).abs() < 1e-10 * oracle);
        assert!((oracle - 0.0026998).abs() < 1e-7);
        for d in 1..=3 {
            let d = Dimension::new(d).unwrap();
            let q = gaussian_tail(6.0, d).unwrap() / mills_asymptote(6.0, d).unwrap();
            assert!((q - 1.0).abs() < 0.05, "{q}");
        }
    }

    #[test]
    fn radial_profile_examples() {
        let (p, _) = radial_profiles(1e-12, 1.0, Dimension::TWO).unwrap();
        assert!((p - 1.0 / (2.0 * PI)).abs() < 1e-12);
        let (_, v) = radial_profiles(0.5, 1.0, Dimension::THREE).unwrap();
        let direct = potential_density(1.0, &[0.3, 0.4, 0.0]).unwrap();
        assert!((v - direct).abs() < 1e-10);
        let vals: Vec<f64> = (1..=10)
            .map(|i| radial_profiles(0.1 * i as f64, 1.0, Dimension::TWO).unwrap().1)
            .collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    proptest! {
        #[test]
        fn omega_is_monotone(r1 in 1e-6f64..1.0, r2 in 1e-6f64..1.0, d in 1usize..5) {
            let d = Dimension::new(d).unwrap();
            let (a, b) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(omega_d(a, d).unwrap() <= omega_d(b, d).unwrap() + 1e-15);
        }

        #[test]
        fn gaussian_tail_is_a_decreasing_probability(a in 0.0f64..8.0, b in 0.0f64..8.0, d in 1usize..4) {
            let d = Dimension::new(d).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (pa, pb) = (gaussian_tail(lo, d).unwrap(), gaussian_tail(hi, d).unwrap());
            prop_assert!((0.0..=1.0).contains(&pa) && (0.0..=1.0).contains(&pb));
            prop_assert!(pb <= pa);
        }
    }
}
