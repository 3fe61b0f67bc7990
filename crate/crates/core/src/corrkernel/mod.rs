//! The correlation root `h`, the correlation `f = h * h̃`, and the norms and
//! integrals that decide which kernels are admissible.

mod convolution;
mod families;
mod table;

pub use convolution::{f_convolution, f_convolution_radial, ConvolutionValue};
pub use families::{
    CompactBump, FamilyBuilder, FamilyRegistry, Gaussian, KernelFamily, PowerLaw, TabulatedRadial,
};
pub use table::{
    dalang_integral, fbar, k_of_h, lambda_h, CorrelationTable, TableOptions, FBAR_EXPONENTS,
};

use crate::error::{domain, Error, Result};
use crate::extended::Extended;
use crate::kernels::{omega_unchecked, Dimension};
use crate::quad::{self, Tolerance};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::fmt;
use std::sync::Arc;

/// A radial correlation root in dimension `d`, optionally with sign flips
/// and a truncation radius.
#[derive(Clone)]
pub struct KernelSpec {
    family: Arc<dyn KernelFamily>,
    d: Dimension,
    sign_flips: Vec<f64>,
    truncation: Option<f64>,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("family", &self.family.name())
            .field("params", &self.family.params())
            .field("d", &self.d.get())
            .field("sign_flips", &self.sign_flips)
            .field("truncation", &self.truncation)
            .finish()
    }
}

impl PartialEq for KernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.family.name() == other.family.name()
            && self.family.params() == other.family.params()
            && self.d == other.d
            && self.sign_flips == other.sign_flips
            && self.truncation == other.truncation
    }
}

impl KernelSpec {
    /// Builds a spec and rejects out-of-range parameters.
    pub fn new(family: Arc<dyn KernelFamily>, d: Dimension) -> Result<Self> {
        let spec = Self::unvalidated(family, d);
        let findings = spec.findings();
        if !findings.is_empty() {
            return Err(Error::Domain(findings.join("; ")));
        }
        Ok(spec)
    }

    /// Builds a spec without range checks, for probing kernels outside the
    /// admissible class.
    pub fn unvalidated(family: Arc<dyn KernelFamily>, d: Dimension) -> Self {
        KernelSpec {
            family,
            d,
            sign_flips: Vec::new(),
            truncation: None,
        }
    }

    pub fn power_law(alpha: f64, beta: f64, scale: f64, d: Dimension) -> Result<Self> {
        Self::new(Arc::new(PowerLaw { alpha, beta, scale }), d)
    }

    pub fn compact_bump(radius: f64, amplitude: f64, d: Dimension) -> Result<Self> {
        Self::new(Arc::new(CompactBump { radius, amplitude }), d)
    }

    pub fn gaussian(width: f64, d: Dimension) -> Result<Self> {
        Self::new(Arc::new(Gaussian { width, amplitude: 1.0 }), d)
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>, order: u8, d: Dimension) -> Result<Self> {
        Self::new(Arc::new(TabulatedRadial { grid, values, order }), d)
    }

    /// Flips the sign of `h` across each listed radius.
    pub fn with_sign_flips(mut self, mut radii: Vec<f64>) -> Result<Self> {
        radii.sort_by(f64::total_cmp);
        if radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return domain("sign flip radii must be positive and finite");
        }
        radii.dedup();
        self.sign_flips = radii;
        Ok(self)
    }

    pub fn family(&self) -> &dyn KernelFamily {
        self.family.as_ref()
    }

    pub fn dimension(&self) -> Dimension {
        self.d
    }

    pub fn sign_flips(&self) -> &[f64] {
        &self.sign_flips
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    pub fn findings(&self) -> Vec<String> {
        let mut out = self.family.findings(self.d);
        if let Some(r) = self.truncation {
            if !(r > 0.0) {
                out.push(format!("truncation radius {r} must be positive"));
            }
        }
        out
    }

    pub fn singular(&self) -> bool {
        self.family.singular_at_origin()
    }

    /// Whether `h ≥ 0`, so that `f` and `|h| * |h̃|` coincide.
    pub fn nonnegative(&self) -> bool {
        self.sign_flips.is_empty() && self.family.nonnegative()
    }

    /// Radius beyond which `h` vanishes, if any.
    pub fn support_radius(&self) -> Option<f64> {
        match (self.family.support_radius(), self.truncation) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn structural_radius(&self) -> f64 {
        let base = self.family.structural_radius();
        match self.truncation {
            Some(t) => base.min(t).max(f64::MIN_POSITIVE),
            None => base,
        }
    }

    /// Sorted radii where `h` is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.family.breakpoints();
        b.extend(self.sign_flips.iter().copied());
        b.extend(self.truncation);
        let cap = self.support_radius().unwrap_or(f64::INFINITY);
        b.retain(|r| *r > 0.0 && *r <= cap && r.is_finite());
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `h` at radius `r`; the singular families return `+∞` at the origin.
    pub fn at_radius(&self, r: f64) -> f64 {
        if let Some(t) = self.truncation {
            if r > t {
                return 0.0;
            }
        }
        if r == 0.0 && self.singular() {
            return f64::INFINITY;
        }
        let v = self.family.profile(r, self.d);
        let flips = self.sign_flips.partition_point(|&x| x <= r);
        if flips % 2 == 1 {
            -v
        } else {
            v
        }
    }
}

/// Serialized form of a [`KernelSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRecord {
    pub family: String,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sign_flips: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate: Option<f64>,
    #[serde(default)]
    pub params: Map<String, Value>,
}

impl KernelRecord {
    pub fn from_spec(spec: &KernelSpec) -> Self {
        KernelRecord {
            family: spec.family.name().to_string(),
            d: spec.d.get(),
            sign_flips: spec.sign_flips.clone(),
            truncate: spec.truncation,
            params: spec.family.params(),
        }
    }

    /// Builds the spec through `registry`; range problems are left for
    /// [`KernelSpec::findings`].
    pub fn build(&self, registry: &FamilyRegistry) -> Result<KernelSpec> {
        let family = registry.build(&self.family, &self.params)?;
        let mut spec = KernelSpec::unvalidated(family, Dimension::new(self.d)?);
        if !self.sign_flips.is_empty() {
            spec = spec.with_sign_flips(self.sign_flips.clone())?;
        }
        if let Some(r) = self.truncate {
            spec = truncate(&spec, r)?;
        }
        Ok(spec)
    }
}

impl Serialize for KernelSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KernelRecord::from_spec(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = KernelRecord::deserialize(d)?;
        rec.build(&FamilyRegistry::builtin())
            .map_err(serde::de::Error::custom)
    }
}

/// `h(x)` at a point of `R^d`.
pub fn eval_h(spec: &KernelSpec, x: &[f64]) -> Result<f64> {
    if x.len() != spec.d.get() {
        return domain(format!("point has dimension {}, kernel has {}", x.len(), spec.d.get()));
    }
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(spec.at_radius(r))
}

/// `h · 1_{B_r}`.
pub fn truncate(spec: &KernelSpec, r: f64) -> Result<KernelSpec> {
    if !(r > 0.0) {
        return domain(format!("truncation radius must be positive, got {r}"));
    }
    let mut out = spec.clone();
    out.truncation = Some(spec.truncation.map_or(r, |t| t.min(r)));
    Ok(out)
}

pub(crate) fn norm_tolerance() -> Tolerance {
    Tolerance::rel(1e-12)
}

/// `∫_a^b s^{d-1} |h(s)|^p ds` with breakpoints honoured; `a` may be 0.
fn radial_power_integral(spec: &KernelSpec, p: f64, a: f64, b: f64) -> Extended {
    let dm1 = spec.d.as_f64() - 1.0;
    let g = |s: f64| {
        let v = spec.at_radius(s).abs();
        if v == 0.0 {
            0.0
        } else {
            s.powf(dm1) * v.powf(p)
        }
    };
    let tol = norm_tolerance();
    let b = match spec.support_radius() {
        Some(sr) => b.min(sr),
        None => b,
    };
    if !(b > a) {
        return Extended::Finite(0.0);
    }
    let mut points = vec![a];
    points.extend(spec.breakpoints().into_iter().filter(|&x| x > a && x < b));
    if b.is_finite() {
        points.push(b);
    } else {
        // Dyadic tail panels must start where h has begun to decay.
        let sr = spec.structural_radius();
        if sr > a && points.iter().all(|&x| x < sr) {
            points.push(sr);
        }
    }
    let mut total = Extended::Finite(0.0);
    let mut start = 0;
    if a == 0.0 {
        let first = if points.len() > 1 { points[1] } else { spec.structural_radius() };
        let piece = if spec.singular() {
            let sw = quad::integrate_to_zero(g, first, tol);
            match sw.value {
                Extended::Infinite(r) => {
                    return Extended::infinite(format!("h is not in L^{p} near the origin: {r}"))
                }
                v => v,
            }
        } else {
            Extended::Finite(quad::integrate(g, 0.0, first, tol).value)
        };
        total = total.add(piece);
        start = 1;
        if points.len() == 1 {
            points.push(first);
        }
    }
    let finite_part = quad::integrate_piecewise(g, &points[start..], tol);
    total = total.add(Extended::Finite(finite_part.value));
    if !b.is_finite() {
        let last = *points.last().expect("nonempty");
        let from = if last > 0.0 { last } else { spec.structural_radius() };
        if last == 0.0 {
            total = total.add(Extended::Finite(quad::integrate(g, 0.0, from, tol).value));
        }
        let tail = quad::integrate_to_infinity(g, from, tol);
        total = match tail.value {
            Extended::Infinite(r) => {
                return Extended::infinite(format!("h is not in L^{p} at infinity: {r}"))
            }
            v => total.add(v),
        };
    }
    total
}

/// `‖h‖_{L^p(B_r)}`.
pub fn norm_ball(spec: &KernelSpec, p: f64, r: f64) -> Result<Extended> {
    if !(p >= 1.0) {
        return domain(format!("norm exponent must be at least 1, got {p}"));
    }
    if !(r > 0.0) {
        return domain(format!("ball radius must be positive, got {r}"));
    }
    let s = spec.d.sphere_area();
    Ok(radial_power_integral(spec, p, 0.0, r).map(|v| (s * v).powf(1.0 / p)))
}

/// `‖h‖_{L^q(B_r^c)}`; `r = 0` gives the full norm.
pub fn norm_complement(spec: &KernelSpec, q: f64, r: f64) -> Result<Extended> {
    if !(q >= 1.0) {
        return domain(format!("norm exponent must be at least 1, got {q}"));
    }
    if !(r >= 0.0) {
        return domain(format!("radius must be nonnegative, got {r}"));
    }
    let s = spec.d.sphere_area();
    Ok(radial_power_integral(spec, q, r, f64::INFINITY).map(|v| (s * v).powf(1.0 / q)))
}

/// Conjugate exponent `p/(p-1)`.
pub fn conjugate(p: f64) -> f64 {
    p / (p - 1.0)
}

/// `2‖h‖_{L^p(B_r)}‖h‖_{L^q(B_r^c)} + ‖h‖²_{L²(B_r^c)}`, a bound on
/// `sup_{|x|>2r} (|h| * |h̃|)(x)`.
pub fn pd_tail_bound(spec: &KernelSpec, p: f64, r: f64) -> Result<Extended> {
    if !(p > 1.0) {
        return domain(format!("pd_tail_bound needs p > 1, got {p}"));
    }
    if !(r > 0.0) {
        return domain(format!("pd_tail_bound needs r > 0, got {r}"));
    }
    let q = conjugate(p);
    let inner = norm_ball(spec, p, r)?;
    let outer = norm_complement(spec, q, r)?;
    let l2 = norm_complement(spec, 2.0, r)?;
    Ok(inner.mul(outer).scale(2.0).add(l2.clone().mul(l2)))
}

/// Result of the `F_p` / `G_p` membership integrals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub p: f64,
    pub q: f64,
    pub f_integral: Extended,
    pub g_integral: Extended,
    pub in_f: bool,
    pub in_g: bool,
    pub reasons: Vec<String>,
}

/// Evaluates `∫_0^1 w(s) (‖h‖_{L^p(B_s)}‖h‖_{L^q(B_s^c)} + ‖h‖²_{L²(B_s^c)}) ds`
/// with `w(s) = s^{d-1}` (the `F_p` integral) and `w = ω_d` (`G_p`).
pub fn check_membership(spec: &KernelSpec, p: f64) -> Result<Membership> {
    if !(p > 1.0) {
        return domain(format!("membership needs p > 1, got {p}"));
    }
    let q = conjugate(p);
    let d = spec.d;
    let mut reasons = Vec::new();
    let probe = 0.5f64.min(spec.structural_radius());
    for (name, v) in [
        ("L^p near the origin", norm_ball(spec, p, probe)?),
        ("L^q away from the origin", norm_complement(spec, q, probe)?),
        ("L^2 away from the origin", norm_complement(spec, 2.0, probe)?),
    ] {
        if let Extended::Infinite(r) = v {
            reasons.push(format!("h is not in {name}: {r}"));
        }
    }
    if !reasons.is_empty() {
        let inf = Extended::infinite(reasons.join("; "));
        return Ok(Membership {
            p,
            q,
            f_integral: inf.clone(),
            g_integral: inf,
            in_f: false,
            in_g: false,
            reasons,
        });
    }
    let bracket = |s: f64| -> f64 {
        let a = norm_ball(spec, p, s).map(|e| e.value()).unwrap_or(f64::INFINITY);
        let b = norm_complement(spec, q, s).map(|e| e.value()).unwrap_or(f64::INFINITY);
        let c = norm_complement(spec, 2.0, s).map(|e| e.value()).unwrap_or(f64::INFINITY);
        let prod = if a == 0.0 || b == 0.0 { 0.0 } else { a * b };
        prod + c * c
    };
    let dm1 = d.as_f64() - 1.0;
    let tol = Tolerance::rel(1e-8);
    let mut points: Vec<f64> = spec.breakpoints().into_iter().filter(|&b| b < 1.0).collect();
    points.push(1.0);
    let first = points[0];
    let integral = |weight: &dyn Fn(f64) -> f64| -> Extended {
        let g = |s: f64| weight(s) * bracket(s);
        let head = quad::integrate_to_zero(g, first, tol);
        match head.value {
            Extended::Infinite(r) => Extended::Infinite(r),
            v => v.add(Extended::Finite(quad::integrate_piecewise(g, &points, tol).value)),
        }
    };
    let f_integral = integral(&|s: f64| s.powf(dm1));
    let g_integral = integral(&|s: f64| omega_unchecked(s, d));
    let in_g = g_integral.is_finite();
    let in_f = f_integral.is_finite() || in_g;
    if let Extended::Infinite(r) = &f_integral {
        reasons.push(format!("F integral diverges: {r}"));
    }
    if let Extended::Infinite(r) = &g_integral {
        reasons.push(format!("G integral diverges: {r}"));
    }
    Ok(Membership {
        p,
        q,
        f_integral,
        g_integral,
        in_f,
        in_g,
        reasons,
    })
}

/// `z_k`: 1 for `k = 2`, the bound `2√k` above.
pub fn bdg_constant(k: f64) -> Result<f64> {
    if !(k >= 2.0) {
        return domain(format!("BDG constant needs k ≥ 2, got {k}"));
    }
    Ok(if k == 2.0 { 1.0 } else { 2.0 * k.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::erf::erfc;
    use std::f64::consts::PI;

    fn pl(alpha: f64, beta: f64, d: usize) -> KernelSpec {
        KernelSpec::power_law(alpha, beta, 1.0, Dimension::new(d).unwrap()).unwrap()
    }

    #[test]
    fn eval_examples() {
        // α = 1 sits on the boundary for d = 1, so skip validation here.
        let fam = Arc::new(PowerLaw { alpha: 1.0, beta: 2.0, scale: 1.0 });
        let h = KernelSpec::unvalidated(fam, Dimension::ONE);
        assert!((eval_h(&h, &[0.25]).unwrap() - 4.0).abs() < 1e-14);
        assert!((eval_h(&h, &[4.0]).unwrap() - 0.125).abs() < 1e-14);
        assert_eq!(eval_h(&h, &[0.0]).unwrap(), f64::INFINITY);
        let b = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        assert_eq!(eval_h(&b, &[2.0]).unwrap(), 0.0);
        assert!(eval_h(&b, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn sign_flips_alternate() {
        let g = KernelSpec::gaussian(1.0, Dimension::ONE)
            .unwrap()
            .with_sign_flips(vec![0.5, 1.5])
            .unwrap();
        assert!(g.at_radius(0.2) > 0.0);
        assert!(g.at_radius(1.0) < 0.0);
        assert!(g.at_radius(2.0) > 0.0);
        assert!(!g.nonnegative());
    }

    #[test]
    fn serde_round_trip() {
        let spec = truncate(&pl(0.5, 1.0, 2).with_sign_flips(vec![0.3]).unwrap(), 4.0).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn power_law_ball_norm_closed_form() {
        for (d, alpha, p) in [(1usize, 0.5, 1.2), (2, 1.0, 1.1), (3, 1.5, 1.3)] {
            let dim = Dimension::new(d).unwrap();
            let h = pl(alpha, 1.0, d);
            for r in [0.1f64, 0.5, 0.9] {
                let e = d as f64 - p * (d as f64 + alpha) / 2.0;
                let closed = dim.sphere_area() * r.powf(e) / e;
                let got = norm_ball(&h, p, r).unwrap().value().powf(p);
                assert!((got - closed).abs() < 1e-9 * closed, "d={d} r={r}: {got} vs {closed}");
            }
        }
    }

    #[test]
    fn ball_norm_divergence_threshold() {
        let h = pl(0.5, 1.0, 1);
        let crit = 2.0 / 1.5;
        assert!(norm_ball(&h, crit - 0.01, 0.5).unwrap().is_finite());
        assert!(!norm_ball(&h, crit + 0.01, 0.5).unwrap().is_finite());
        assert!(!norm_ball(&h, crit, 0.5).unwrap().is_finite());
    }

    #[test]
    fn complement_norm_threshold() {
        let h = pl(0.5, 1.0, 1);
        let crit = 2.0 / 2.0;
        assert!(norm_complement(&h, crit + 0.05, 1.0).unwrap().is_finite());
        let h3 = pl(0.5, 1.0, 3);
        let crit3 = 6.0 / 4.0;
        assert!(norm_complement(&h3, crit3 + 0.02, 0.5).unwrap().is_finite());
        assert!(!norm_complement(&h3, crit3 - 0.02, 0.5).unwrap().is_finite());
    }

    #[test]
    fn bump_and_gaussian_norms() {
        let b = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        assert!((norm_ball(&b, 2.0, 2.0).unwrap().value() - 2f64.sqrt()).abs() < 1e-12);
        for q in [1.5, 2.0, 7.0] {
            assert_eq!(norm_complement(&b, q, 1.0).unwrap().value(), 0.0);
        }
        for d in 1..=3 {
            let g = KernelSpec::gaussian(1.0, Dimension::new(d).unwrap()).unwrap();
            let closed = PI.powf(0.25 * d as f64);
            let got = norm_complement(&g, 2.0, 0.0).unwrap().value();
            assert!((got - closed).abs() < 1e-8, "d={d}");
        }
    }

    #[test]
    fn gaussian_pd_tail_bound_closed_form() {
        let g = KernelSpec::gaussian(1.0, Dimension::ONE).unwrap();
        // ∫_{|x|<1} e^{-x²} = √π erf(1), ∫_{|x|>1} e^{-x²} = √π erfc(1).
        let inner = (PI.sqrt() * (1.0 - erfc(1.0))).sqrt();
        let outer = (PI.sqrt() * erfc(1.0)).sqrt();
        let closed = 2.0 * inner * outer + outer * outer;
        let got = pd_tail_bound(&g, 2.0, 1.0).unwrap().value();
        assert!((got - closed).abs() < 1e-10, "{got} {closed}");
        let b = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        assert_eq!(pd_tail_bound(&b, 1.5, 1.0).unwrap().value(), 0.0);
    }

    #[test]
    fn membership_examples() {
        for d in 1..=3 {
            let dim = Dimension::new(d).unwrap();
            for spec in [KernelSpec::gaussian(1.0, dim).unwrap(), KernelSpec::compact_bump(1.0, 1.0, dim).unwrap()] {
                let m = check_membership(&spec, 2.0).unwrap();
                assert!(m.in_g && m.in_f, "{m:?}");
            }
        }
        let m = check_membership(&pl(0.5, 1.0, 1), 1.2).unwrap();
        assert!(m.in_g && m.in_f, "{m:?}");
        assert_eq!(m.f_integral, m.g_integral);
        let m2 = check_membership(&pl(1.0, 1.0, 2), 1.2).unwrap();
        assert!(m2.in_g, "{m2:?}");
        let bad = check_membership(&pl(0.5, 1.0, 1), 1.5).unwrap();
        assert!(!bad.in_f && !bad.in_g);
        assert!(!bad.reasons.is_empty());
    }

    #[test]
    fn truncation_examples() {
        let g = KernelSpec::gaussian(1.0, Dimension::ONE).unwrap();
        let t = truncate(&g, 1.5).unwrap();
        assert_eq!(eval_h(&t, &[1.6]).unwrap(), 0.0);
        assert_eq!(norm_complement(&t, 2.0, 1.5).unwrap().value(), 0.0);
        // ‖h − h_r‖² by direct quadrature of the difference.
        let diff = quad::integrate_to_infinity(
            |s| {
                let v = g.at_radius(s) - t.at_radius(s);
                2.0 * v * v
            },
            1.5,
            Tolerance::rel(1e-12),
        );
        let tail = norm_complement(&g, 2.0, 1.5).unwrap().value();
        assert!((diff.value.value().sqrt() - tail).abs() < 1e-10);
        assert_eq!(truncate(&t, 3.0).unwrap().truncation(), Some(1.5));
    }

    #[test]
    fn bdg_examples() {
        assert_eq!(bdg_constant(2.0).unwrap(), 1.0);
        assert_eq!(bdg_constant(4.0).unwrap(), 4.0);
        assert_eq!(bdg_constant(9.0).unwrap(), 6.0);
        assert!(bdg_constant(1.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn membership_g_implies_f(alpha in 0.1f64..1.9, beta in 0.2f64..3.0, p in 1.05f64..1.6, d in 2usize..4) {
            let spec = pl(alpha, beta, d);
            let m = check_membership(&spec, p).unwrap();
            prop_assert!(!m.in_g || m.in_f);
        }

        #[test]
        fn truncation_never_increases_norms(r in 0.2f64..3.0, q in 1.1f64..4.0) {
            let g = KernelSpec::gaussian(0.8, Dimension::TWO).unwrap();
            let t = truncate(&g, r).unwrap();
            let a = norm_complement(&t, q, 0.0).unwrap().value();
            let b = norm_complement(&g, q, 0.0).unwrap().value();
            prop_assert!(a <= b * (1.0 + 1e-12));
        }
    }
}
