//! Multidimensional complex FFT on the periodic lattice `(Z/nZ)^d`, row-major.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct TorusFft {
    d: usize,
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusFft").field("d", &self.d).field("n", &self.n).finish()
    }
}

impl TorusFft {
    pub fn new(d: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            d,
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.len(), "field size does not match the lattice");
        let n = self.n;
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // The last axis is contiguous: transform all rows in one call.
        plan.process_with_scratch(data, &mut scratch);
        let total = data.len();
        let mut line = vec![Complex64::default(); n];
        for axis in 0..self.d.saturating_sub(1) {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    for (k, slot) in line.iter_mut().enumerate() {
                        *slot = data[base + off + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + off + k * stride] = *v;
                    }
                }
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, &self.forward);
    }

    /// Inverse transform including the `1/n^d` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, &self.inverse);
        let s = 1.0 / data.len() as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }

    /// Circular autocorrelation `Σ_z a(z) a(z + ℓ)` for every lag `ℓ`.
    pub fn autocorrelation(&self, a: &[f64]) -> Vec<f64> {
        let mut c = self.forward_real(a);
        for v in c.iter_mut() {
            *v = Complex64::new(v.norm_sqr(), 0.0);
        }
        self.inverse_real(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(d: usize, n: usize, x: &[Complex64]) -> Vec<Complex64> {
        let total = n.pow(d as u32);
        let coords = |mut i: usize| {
            let mut c = vec![0usize; d];
            for a in (0..d).rev() {
                c[a] = i % n;
                i /= n;
            }
            c
        };
        (0..total)
            .map(|k| {
                let kc = coords(k);
                (0..total)
                    .map(|j| {
                        let jc = coords(j);
                        let phase: f64 = kc.iter().zip(&jc).map(|(a, b)| (a * b) as f64).sum::<f64>();
                        x[j] * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for (d, n) in [(1, 8), (2, 4), (3, 4)] {
            let f = TorusFft::new(d, n);
            let x: Vec<Complex64> = (0..f.len())
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.1).cos()))
                .collect();
            let mut y = x.clone();
            f.forward(&mut y);
            let z = naive_dft(d, n, &x);
            for (a, b) in y.iter().zip(&z) {
                assert!((a - b).norm() < 1e-10);
            }
            f.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn autocorrelation_zero_lag_is_energy() {
        let f = TorusFft::new(2, 8);
        let a: Vec<f64> = (0..64).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let ac = f.autocorrelation(&a);
        let e: f64 = a.iter().map(|v| v * v).sum();
        assert!((ac[0] - e).abs() < 1e-10);
    }
}
