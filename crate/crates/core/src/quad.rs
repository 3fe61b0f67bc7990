//! Adaptive Gauss–Kronrod quadrature plus geometric panel sweeps toward
//! singular points and infinity.
//!
//! The panel sweeps integrate over dyadic shells `[s/2, s]` (or `[s, 2s]`)
//! and watch the ratio of consecutive shell contributions. A stable ratio
//! means the integrand behaves like a power of the distance, so the rest of
//! the sweep is a geometric series: it is summed in closed form when the
//! ratio is below one and reported as divergent otherwise.

use crate::extended::Extended;

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208548181180,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Nodes and weights of the 21-point Kronrod rule mapped to `[a, b]`.
pub fn kronrod_nodes(a: f64, b: f64) -> [(f64, f64); 21] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 21];
    for j in 0..10 {
        out[2 * j] = (c - h * XGK[j], h * WGK[j]);
        out[2 * j + 1] = (c + h * XGK[j], h * WGK[j]);
    }
    out[20] = (c, h * WGK[10]);
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-300,
            rel: 1e-11,
            max_intervals: 400,
        }
    }
}

impl Tolerance {
    pub fn rel(rel: f64) -> Self {
        Tolerance {
            rel,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl QuadResult {
    fn zero() -> Self {
        QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        }
    }

    fn absorb(&mut self, other: QuadResult) {
        self.value += other.value;
        self.error += other.error;
        self.evaluations += other.evaluations;
        self.converged &= other.converged;
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[10];
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let result = resk * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut err = ((resk - resg) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

/// Globally adaptive 10/21-point Gauss–Kronrod integration over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tolerance) -> QuadResult {
    if a == b {
        return QuadResult::zero();
    }
    let (v, e) = gk21(&mut f, a, b);
    let mut pieces = vec![Piece { a, b, value: v, error: e }];
    let mut evaluations = 21;
    loop {
        let total: f64 = pieces.iter().map(|p| p.value).sum();
        let err: f64 = pieces.iter().map(|p| p.error).sum();
        if err <= tol.abs.max(tol.rel * total.abs()) || !err.is_finite() && !total.is_finite() {
            return QuadResult {
                value: total,
                error: err,
                evaluations,
                converged: err.is_finite(),
            };
        }
        let (worst, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("nonempty");
        let p = pieces.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        let too_narrow = (p.b - p.a).abs() <= 4.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE);
        if pieces.len() + 2 > tol.max_intervals || too_narrow {
            pieces.push(p);
            let total: f64 = pieces.iter().map(|p| p.value).sum();
            let err: f64 = pieces.iter().map(|p| p.error).sum();
            return QuadResult {
                value: total,
                error: err,
                evaluations,
                converged: false,
            };
        }
        let (v1, e1) = gk21(&mut f, p.a, m);
        let (v2, e2) = gk21(&mut f, m, p.b);
        evaluations += 42;
        pieces.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        pieces.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
}

/// Integrates over consecutive breakpoints, skipping empty segments.
pub fn integrate_piecewise<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tolerance) -> QuadResult {
    let mut out = QuadResult::zero();
    for w in points.windows(2) {
        if w[1] > w[0] {
            out.absorb(integrate(&mut f, w[0], w[1], tol));
        }
    }
    out
}

/// Outcome of a geometric panel sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub value: Extended,
    pub error: f64,
    pub converged: bool,
    /// Estimated local power `κ` with integrand `≈ s^κ` at the far end of
    /// the sweep, when the ratios stabilized.
    pub exponent: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Direction {
    Inward,
    Outward,
}

fn sweep<F: FnMut(f64) -> f64>(mut g: F, start: f64, dir: Direction, tol: Tolerance) -> SweepResult {
    let mut total = 0.0;
    let mut error = 0.0;
    let mut converged = true;
    let mut contributions: Vec<f64> = Vec::new();
    let mut zeros = 0;
    let mut s = start;
    let max_panels = 1000;
    for _ in 0..max_panels {
        let (lo, hi) = match dir {
            Direction::Inward => (0.5 * s, s),
            Direction::Outward => (s, 2.0 * s),
        };
        if !(lo > 0.0) || !hi.is_finite() {
            break;
        }
        let r = integrate(&mut g, lo, hi, tol);
        converged &= r.converged;
        if !r.value.is_finite() {
            return SweepResult {
                value: Extended::infinite("non-finite integrand in panel sweep"),
                error: f64::INFINITY,
                converged: false,
                exponent: None,
            };
        }
        total += r.value;
        error += r.error;
        contributions.push(r.value.abs());
        s = match dir {
            Direction::Inward => lo,
            Direction::Outward => hi,
        };
        if r.value == 0.0 {
            zeros += 1;
            if zeros >= 3 {
                break;
            }
            continue;
        }
        zeros = 0;
        let n = contributions.len();
        if r.value.abs() <= 1e-17 * total.abs() {
            break;
        }
        if n >= 12 {
            let ratio = |k: usize| contributions[k] / contributions[k - 1];
            let rs = [ratio(n - 1), ratio(n - 2), ratio(n - 3), ratio(n - 4)];
            let spread = rs
                .windows(2)
                .map(|w| ((w[0] - w[1]) / w[1]).abs())
                .fold(0.0f64, f64::max);
            if rs.iter().all(|x| x.is_finite() && *x > 0.0) && spread < 1e-4 {
                let rho = rs[0];
                let kappa = match dir {
                    Direction::Inward => -rho.log2() - 1.0,
                    Direction::Outward => rho.log2() - 1.0,
                };
                if rho >= 1.0 - 1e-7 {
                    return SweepResult {
                        value: Extended::infinite(format!(
                            "integrand behaves like s^{kappa:.4} at the {} end",
                            if dir == Direction::Inward { "inner" } else { "outer" }
                        )),
                        error: f64::INFINITY,
                        converged: true,
                        exponent: Some(kappa),
                    };
                }
                let tail = r.value * rho / (1.0 - rho);
                if spread < 1e-9 || tail.abs() <= 1e-7 * total.abs() {
                    total += tail;
                    error += (tail * spread.max(1e-12)).abs();
                    return SweepResult {
                        value: Extended::Finite(total),
                        error,
                        converged,
                        exponent: Some(kappa),
                    };
                }
            }
        }
    }
    let n = contributions.len();
    if n >= 4 {
        let last = contributions[n - 1];
        if last > 1e-12 * total.abs().max(f64::MIN_POSITIVE) && contributions[n - 1] >= contributions[n - 2] {
            return SweepResult {
                value: Extended::infinite("panel contributions do not decay"),
                error: f64::INFINITY,
                converged: false,
                exponent: None,
            };
        }
    }
    if n >= 2 && contributions[n - 1] > 0.0 {
        let rho = contributions[n - 1] / contributions[n - 2];
        if rho < 1.0 {
            let tail = contributions[n - 1] * rho / (1.0 - rho);
            total += tail.copysign(total);
            error += tail.abs();
        }
    }
    SweepResult {
        value: Extended::Finite(total),
        error,
        converged,
        exponent: None,
    }
}

/// `∫_0^span g(s) ds` for `g` possibly singular at `s = 0`.
pub fn integrate_to_zero<F: FnMut(f64) -> f64>(g: F, span: f64, tol: Tolerance) -> SweepResult {
    sweep(g, span, Direction::Inward, tol)
}

/// `∫_a^∞ g(s) ds` for `a > 0`.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(g: F, a: f64, tol: Tolerance) -> SweepResult {
    assert!(a > 0.0, "outward sweep needs a positive start");
    sweep(g, a, Direction::Outward, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_is_exact_on_polynomials() {
        // Degree 31 is the exactness limit of the 21-point Kronrod rule.
        for deg in [0, 5, 19, 31] {
            let r = integrate(|x: f64| x.powi(deg), 0.0, 1.0, Tolerance::default());
            assert!((r.value - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "deg {deg}");
        }
        let sum: f64 = kronrod_nodes(-1.0, 3.0).iter().map(|(_, w)| w).sum();
        assert!((sum - 4.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let r = integrate(|x: f64| x.abs(), -1.0, 2.0, Tolerance::rel(1e-12));
        assert!((r.value - 2.5).abs() < 1e-11);
        assert!(r.converged);
    }

    #[test]
    fn sweep_detects_power_singularities() {
        let r = integrate_to_zero(|s: f64| s.powf(-0.9), 1.0, Tolerance::default());
        assert!((r.value.value() - 10.0).abs() < 1e-7, "{:?}", r);
        let d = integrate_to_zero(|s: f64| 1.0 / s, 1.0, Tolerance::default());
        assert!(!d.value.is_finite());
        let t = integrate_to_infinity(|s: f64| s.powf(-1.05), 1.0, Tolerance::default());
        assert!((t.value.value() - 20.0).abs() < 1e-5, "{:?}", t);
        let e = integrate_to_infinity(|s: f64| (-s).exp(), 1.0, Tolerance::default());
        assert!((e.value.value() - (-1.0f64).exp()).abs() < 1e-14);
        let dv = integrate_to_infinity(|s: f64| s.powf(-0.8), 1.0, Tolerance::default());
        assert!(!dv.value.is_finite());
    }
}
