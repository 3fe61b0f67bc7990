//! One-dimensional minimization.

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub fn golden<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, rtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (hi - lo) <= rtol * (lo.abs() + hi.abs()).max(1e-300) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Golden section backed by a 64-point scan: when the scan finds a value
/// lower than the golden-section result, the search is repeated around the
/// best scan point. Endpoints are candidates too.
pub fn minimize<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, rtol: f64) -> (f64, f64) {
    const GRID: usize = 64;
    let (mut bx, mut bf) = golden(&mut f, lo, hi, rtol);
    let step = (hi - lo) / (GRID - 1) as f64;
    let mut gx = lo;
    let mut gf = f64::INFINITY;
    for i in 0..GRID {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < gf {
            gf = v;
            gx = x;
        }
    }
    if gf < bf {
        let (x, v) = golden(&mut f, (gx - step).max(lo), (gx + step).min(hi), rtol);
        let (x, v) = if v <= gf { (x, v) } else { (gx, gf) };
        bx = x;
        bf = v;
    }
    (bx, bf)
}
