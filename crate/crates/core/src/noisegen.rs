//! Colored noise on a periodic lattice: white cell increments convolved with
//! a sampled correlation root `h`, and the exact lattice covariance
//! `f_Δ = dx^d · (h ⋆ h)`.

use std::io::{Read, Write};

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corrkernel::KernelSpec;
use crate::error::{domain, Error, Result};
use crate::fft::TorusFft;
use crate::kernels::Dimension;
use crate::quad::{self, kronrod_nodes, Tolerance};
use crate::rng::StreamKey;

/// Default ceiling on `n^d`.
pub const DEFAULT_SITE_CAP: usize = 1 << 24;

/// Periodic grid `(dx Z / n dx Z)^d`; sites are cell centers, site 0 at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeRecord", into = "LatticeRecord")]
pub struct Lattice {
    d: Dimension,
    n: usize,
    dx: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeRecord {
    d: usize,
    n: usize,
    dx: f64,
}

impl TryFrom<LatticeRecord> for Lattice {
    type Error = Error;
    fn try_from(r: LatticeRecord) -> Result<Self> {
        Lattice::new(Dimension::new(r.d)?, r.n, r.dx)
    }
}

impl From<Lattice> for LatticeRecord {
    fn from(l: Lattice) -> Self {
        Self { d: l.d.get(), n: l.n, dx: l.dx }
    }
}

impl Lattice {
    pub fn new(d: Dimension, n: usize, dx: f64) -> Result<Self> {
        Self::with_cap(d, n, dx, DEFAULT_SITE_CAP)
    }

    pub fn with_cap(d: Dimension, n: usize, dx: f64, cap: usize) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return domain(format!("sites per axis must be a power of two ≥ 2, got {n}"));
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return domain(format!("spacing must be positive, got {dx}"));
        }
        let sites = n.checked_pow(d.get() as u32).filter(|&s| s <= cap);
        if sites.is_none() {
            return Err(Error::CostGuard(format!("{n}^{} sites exceeds the cap of {cap}", d.get())));
        }
        Ok(Self { d, n, dx })
    }

    pub fn dimension(&self) -> Dimension {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn extent(&self) -> f64 {
        self.n as f64 * self.dx
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.d.get() as u32)
    }

    /// `dx^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dx.powi(self.d.get() as i32)
    }

    pub fn coords(&self, mut index: usize) -> Vec<usize> {
        let d = self.d.get();
        let mut c = vec![0; d];
        for a in (0..d).rev() {
            c[a] = index % self.n;
            index /= self.n;
        }
        c
    }

    /// Row-major index of integer coordinates, wrapped onto the torus.
    pub fn index(&self, coords: &[i64]) -> usize {
        let n = self.n as i64;
        coords.iter().fold(0usize, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    /// Minimum-image integer offset of a site from the origin.
    pub fn offset(&self, index: usize) -> Vec<i64> {
        let n = self.n as i64;
        self.coords(index)
            .into_iter()
            .map(|c| {
                let c = c as i64;
                if c > n / 2 {
                    c - n
                } else {
                    c
                }
            })
            .collect()
    }

    /// Euclidean length of the minimum-image offset.
    pub fn radius(&self, index: usize) -> f64 {
        self.offset(index).iter().map(|&c| (c as f64 * self.dx).powi(2)).sum::<f64>().sqrt()
    }

    pub fn fft(&self) -> TorusFft {
        TorusFft::new(self.d.get(), self.n)
    }
}

/// `∫_0^u ρ^{d-1} h(ρ) dρ`.
fn radial_mass(spec: &KernelSpec, u: f64) -> Result<f64> {
    let dm1 = spec.dimension().as_f64() - 1.0;
    let g = |r: f64| {
        let v = spec.at_radius(r);
        if v == 0.0 {
            0.0
        } else {
            r.powf(dm1) * v
        }
    };
    let tol = Tolerance::rel(1e-12);
    let mut pts: Vec<f64> = spec.breakpoints().into_iter().filter(|&b| b < u).collect();
    pts.push(u);
    let head = quad::integrate_to_zero(g, pts[0], tol);
    let head = head
        .value
        .finite()
        .ok_or_else(|| Error::Divergent(format!("h is not integrable at the origin: {}", head.value)))?;
    Ok(head + quad::integrate_piecewise(g, &pts, tol).value)
}

/// Mean of `h` over the cube `[-a, a]^d`. The cube splits into `2^d d`
/// congruent pyramids with apex at the origin; along each ray the integral
/// is radial, leaving a smooth integral over the pyramid base.
fn origin_cell_average(spec: &KernelSpec, a: f64) -> Result<f64> {
    let d = spec.dimension().get();
    if d == 1 {
        return Ok(radial_mass(spec, a)? / a);
    }
    let nodes = kronrod_nodes(0.0, 1.0);
    let m = d - 1;
    let mut total = 0.0;
    let mut idx = vec![0usize; m];
    loop {
        let mut w = 1.0;
        let mut v2 = 0.0;
        for &i in &idx {
            w *= nodes[i].1;
            v2 += nodes[i].0 * nodes[i].0;
        }
        let s = (1.0 + v2).sqrt();
        total += w * radial_mass(spec, a * s)? / s.powi(d as i32);
        let mut k = 0;
        loop {
            if k == m {
                let volume = (2.0 * a).powi(d as i32);
                return Ok((1u64 << d) as f64 * d as f64 * total / volume);
            }
            idx[k] += 1;
            if idx[k] < nodes.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// `h` at cell centers, using the cell average at the origin for singular kernels.
pub fn sample_h(spec: &KernelSpec, lattice: &Lattice) -> Result<Vec<f64>> {
    if spec.dimension() != lattice.dimension() {
        return domain("kernel and lattice dimensions differ");
    }
    let mut h: Vec<f64> = (0..lattice.sites()).map(|i| spec.at_radius(lattice.radius(i))).collect();
    if spec.singular() {
        h[0] = origin_cell_average(spec, 0.5 * lattice.dx())?;
    }
    if let Some((cell, &value)) = h.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteKernel { cell, value });
    }
    Ok(h)
}

/// Independent `N(0, dt/dx^d)` per cell.
pub fn sample_white(lattice: &Lattice, dt: f64, key: StreamKey) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return domain(format!("time step must be positive, got {dt}"));
    }
    let mut out = vec![0.0; lattice.sites()];
    fill_white(lattice, dt, key, &mut out);
    Ok(out)
}

pub(crate) fn fill_white(lattice: &Lattice, dt: f64, key: StreamKey, out: &mut [f64]) {
    let sd = (dt / lattice.cell_volume()).sqrt();
    let mut rng = key.rng();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = sd * z;
    }
}

/// Precomputed transform of `h` for repeated coloring.
#[derive(Clone, Debug)]
pub struct Colorer {
    lattice: Lattice,
    fft: TorusFft,
    h: Vec<f64>,
    h_hat: Vec<Complex64>,
}

impl Colorer {
    pub fn new(lattice: Lattice, h: Vec<f64>) -> Result<Self> {
        if h.len() != lattice.sites() {
            return domain(format!("h has {} samples, lattice has {} sites", h.len(), lattice.sites()));
        }
        if let Some((cell, &value)) = h.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteKernel { cell, value });
        }
        let fft = lattice.fft();
        let vol = lattice.cell_volume();
        let h_hat = fft.forward_real(&h).into_iter().map(|c| c * vol).collect();
        Ok(Self { lattice, fft, h, h_hat })
    }

    pub fn from_spec(spec: &KernelSpec, lattice: Lattice) -> Result<Self> {
        Self::new(lattice, sample_h(spec, &lattice)?)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn fft(&self) -> &TorusFft {
        &self.fft
    }

    /// `dx^d Σ_y h(x - y) w(y)`.
    pub fn color(&self, white: &[f64]) -> Result<Vec<f64>> {
        if white.len() != self.lattice.sites() {
            return domain("white field does not match the lattice");
        }
        let mut c = self.fft.forward_real(white);
        for (v, k) in c.iter_mut().zip(&self.h_hat) {
            *v *= k;
        }
        Ok(self.fft.inverse_real(c))
    }

    /// One colored increment drawn from `key`.
    pub fn increment(&self, dt: f64, key: StreamKey) -> Result<Vec<f64>> {
        self.color(&sample_white(&self.lattice, dt, key)?)
    }

    pub fn correlation(&self) -> Vec<f64> {
        discrete_correlation_with(&self.fft, &self.h, &self.lattice)
    }
}

/// Colors a white field with a sampled `h`.
pub fn color(white: &[f64], h_lattice: &[f64], lattice: &Lattice) -> Result<Vec<f64>> {
    Colorer::new(*lattice, h_lattice.to_vec())?.color(white)
}

fn discrete_correlation_with(fft: &TorusFft, h: &[f64], lattice: &Lattice) -> Vec<f64> {
    let vol = lattice.cell_volume();
    let ac = fft.autocorrelation(h);
    // Average each lag with its negation so the table is exactly even.
    (0..ac.len())
        .map(|i| {
            let neg: Vec<i64> = lattice.offset(i).iter().map(|c| -c).collect();
            0.5 * vol * (ac[i] + ac[lattice.index(&neg)])
        })
        .collect()
}

/// `f_Δ(ℓ) = dx^d Σ_z h(z + ℓ) h(z)`, the covariance of colored noise per unit time.
pub fn discrete_correlation(h_lattice: &[f64], lattice: &Lattice) -> Result<Vec<f64>> {
    if h_lattice.len() != lattice.sites() {
        return domain("h does not match the lattice");
    }
    Ok(discrete_correlation_with(&lattice.fft(), h_lattice, lattice))
}

/// Translation-averaged covariance per lag, with block-jackknife errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceEstimate {
    pub samples: usize,
    /// Covariance at every lag, indexed like the lattice.
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl CovarianceEstimate {
    pub fn at(&self, lattice: &Lattice, lag: &[i64]) -> (f64, f64) {
        let i = lattice.index(lag);
        (self.values[i], self.std_errors[i])
    }
}

/// Streaming estimator of `Cov(η(x), η(x + ℓ))` for a stationary field.
///
/// Samples are assigned round-robin to `blocks` groups; per group it keeps the
/// sums of the spatial autocorrelation, the spatial mean and its square.
#[derive(Clone, Debug)]
pub struct CovarianceAccumulator {
    lattice: Lattice,
    fft: TorusFft,
    blocks: usize,
    count: Vec<usize>,
    sum_ac: Vec<Vec<f64>>,
    sum_b: Vec<f64>,
    sum_b2: Vec<f64>,
}

pub const MIN_COVARIANCE_SAMPLES: usize = 1000;

impl CovarianceAccumulator {
    pub fn new(lattice: Lattice, blocks: usize) -> Self {
        let blocks = blocks.max(2);
        let s = lattice.sites();
        Self {
            fft: lattice.fft(),
            lattice,
            blocks,
            count: vec![0; blocks],
            sum_ac: vec![vec![0.0; s]; blocks],
            sum_b: vec![0.0; blocks],
            sum_b2: vec![0.0; blocks],
        }
    }

    pub fn samples(&self) -> usize {
        self.count.iter().sum()
    }

    pub fn push(&mut self, field: &[f64]) -> Result<()> {
        if field.len() != self.lattice.sites() {
            return domain("sample does not match the lattice");
        }
        let g = self.samples() % self.blocks;
        let s = field.len() as f64;
        let ac = self.fft.autocorrelation(field);
        for (acc, v) in self.sum_ac[g].iter_mut().zip(&ac) {
            *acc += v / s;
        }
        let b = field.iter().sum::<f64>() / s;
        self.sum_b[g] += b;
        self.sum_b2[g] += b * b;
        self.count[g] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.lattice != self.lattice || other.blocks != self.blocks {
            return domain("cannot merge accumulators of different shape");
        }
        for g in 0..self.blocks {
            self.count[g] += other.count[g];
            self.sum_b[g] += other.sum_b[g];
            self.sum_b2[g] += other.sum_b2[g];
            for (a, b) in self.sum_ac[g].iter_mut().zip(&other.sum_ac[g]) {
                *a += b;
            }
        }
        Ok(())
    }

    /// `mean(ac) − (M m_b² − mean(b²)) / (M − 1)` from the given sums.
    fn estimate(m: f64, ac: &[f64], b: f64, b2: f64) -> Vec<f64> {
        let mb = b / m;
        let mb2 = b2 / m;
        let mean_sq = (m * mb * mb - mb2) / (m - 1.0);
        ac.iter().map(|a| a / m - mean_sq).collect()
    }

    pub fn finish(&self) -> Result<CovarianceEstimate> {
        let total = self.samples();
        if total < MIN_COVARIANCE_SAMPLES {
            return Err(Error::InsufficientSamples { needed: MIN_COVARIANCE_SAMPLES, got: total });
        }
        let s = self.lattice.sites();
        let mut ac = vec![0.0; s];
        for blk in &self.sum_ac {
            for (a, v) in ac.iter_mut().zip(blk) {
                *a += v;
            }
        }
        let b: f64 = self.sum_b.iter().sum();
        let b2: f64 = self.sum_b2.iter().sum();
        let m = total as f64;
        let values = Self::estimate(m, &ac, b, b2);
        let groups: Vec<usize> = (0..self.blocks).filter(|&g| self.count[g] > 0).collect();
        let gn = groups.len() as f64;
        let mut loo = Vec::with_capacity(groups.len());
        for &g in &groups {
            let mg = m - self.count[g] as f64;
            let acg: Vec<f64> = ac.iter().zip(&self.sum_ac[g]).map(|(a, x)| a - x).collect();
            loo.push(Self::estimate(mg, &acg, b - self.sum_b[g], b2 - self.sum_b2[g]));
        }
        let std_errors = (0..s)
            .map(|i| {
                let mean = loo.iter().map(|v| v[i]).sum::<f64>() / gn;
                ((gn - 1.0) / gn * loo.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>()).sqrt()
            })
            .collect();
        Ok(CovarianceEstimate { samples: total, values, std_errors })
    }
}

/// Covariance estimate of a finished sample set.
pub fn empirical_covariance(samples: &[Vec<f64>], lattice: &Lattice) -> Result<CovarianceEstimate> {
    let mut acc = CovarianceAccumulator::new(*lattice, 100);
    for s in samples {
        acc.push(s)?;
    }
    acc.finish()
}

/// Flat dump: `d`, `n` as little-endian u64, `dx`, `dt` as f64, then the
/// row-major field as f64.
pub fn write_field<W: Write>(mut w: W, lattice: &Lattice, dt: f64, values: &[f64]) -> Result<()> {
    if values.len() != lattice.sites() {
        return domain("field does not match the lattice");
    }
    w.write_all(&(lattice.dimension().get() as u64).to_le_bytes())?;
    w.write_all(&(lattice.n() as u64).to_le_bytes())?;
    w.write_all(&lattice.dx().to_le_bytes())?;
    w.write_all(&dt.to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<(Lattice, f64, Vec<f64>)> {
    let mut b = [0u8; 8];
    let mut next = |r: &mut R| -> Result<[u8; 8]> {
        r.read_exact(&mut b)?;
        Ok(b)
    };
    let d = u64::from_le_bytes(next(&mut r)?) as usize;
    let n = u64::from_le_bytes(next(&mut r)?) as usize;
    let dx = f64::from_le_bytes(next(&mut r)?);
    let dt = f64::from_le_bytes(next(&mut r)?);
    let lattice = Lattice::new(Dimension::new(d)?, n, dx)?;
    let mut values = Vec::with_capacity(lattice.sites());
    for _ in 0..lattice.sites() {
        values.push(f64::from_le_bytes(next(&mut r)?));
    }
    Ok((lattice, dt, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrkernel::{f_convolution_radial, norm_complement, truncate};
    use proptest::prelude::*;

    fn lat(d: usize, n: usize, dx: f64) -> Lattice {
        Lattice::new(Dimension::new(d).unwrap(), n, dx).unwrap()
    }

    #[test]
    fn lattice_validation() {
        assert!(Lattice::new(Dimension::ONE, 48, 1.0).is_err());
        assert!(Lattice::new(Dimension::ONE, 64, 0.0).is_err());
        assert!(matches!(
            Lattice::with_cap(Dimension::THREE, 64, 1.0, 1000),
            Err(Error::CostGuard(_))
        ));
        let l = lat(2, 8, 0.5);
        assert_eq!(l.extent(), 4.0);
        assert_eq!(l.offset(l.index(&[-1, 3])), vec![-1, 3]);
        assert!((l.radius(l.index(&[3, 4])) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn white_variance_and_independence() {
        let l = lat(1, 16, 0.5);
        let dt = 0.01;
        let m = 100_000;
        let mut s0 = 0.0;
        let mut s00 = 0.0;
        let mut s01 = 0.0;
        let mut sx = 0.0;
        for i in 0..m {
            let w = sample_white(&l, dt, StreamKey::new(1, i)).unwrap();
            let u = sample_white(&l, dt, StreamKey::new(1, i).lane(1)).unwrap();
            s0 += w[0];
            s00 += w[0] * w[0];
            s01 += w[0] * w[1];
            sx += w[3] * u[3];
        }
        let mf = m as f64;
        let var = dt / l.cell_volume();
        // Standard errors of a sample variance and of a product mean.
        let se_var = var * (2.0 / mf).sqrt();
        let se_prod = var / mf.sqrt();
        assert!((s00 / mf - var).abs() < 3.0 * se_var);
        assert!((s01 / mf).abs() < 3.0 * se_prod);
        assert!((sx / mf).abs() < 3.0 * se_prod);
        assert!((s0 / mf).abs() < 3.0 * (var / mf).sqrt());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let l = lat(2, 8, 0.25);
        let mut h = vec![0.0; l.sites()];
        h[0] = 1.0 / l.cell_volume();
        let w = sample_white(&l, 0.1, StreamKey::new(3, 0)).unwrap();
        let c = color(&w, &h, &l).unwrap();
        for (a, b) in w.iter().zip(&c) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_kernel_named() {
        let l = lat(1, 8, 1.0);
        let mut h = vec![1.0; 8];
        h[5] = f64::NAN;
        match Colorer::new(l, h) {
            Err(Error::NonFiniteKernel { cell, .. }) => assert_eq!(cell, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn correlation_symmetry_and_zero_lag() {
        let l = lat(2, 16, 0.3);
        let spec = KernelSpec::gaussian(0.7, Dimension::TWO).unwrap().with_sign_flips(vec![0.9]).unwrap();
        let h = sample_h(&spec, &l).unwrap();
        let f = discrete_correlation(&h, &l).unwrap();
        for i in 0..l.sites() {
            let neg: Vec<i64> = l.offset(i).iter().map(|c| -c).collect();
            assert_eq!(f[i], f[l.index(&neg)]);
        }
        let e: f64 = h.iter().map(|v| v * v).sum::<f64>() * l.cell_volume();
        assert!((f[0] - e).abs() < 1e-12 * e);
        // Nonnegative spectrum: f_Δ is an autocorrelation.
        let spec_hat = l.fft().forward_real(&f);
        let scale = spec_hat.iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(spec_hat.iter().all(|c| c.re > -1e-12 * scale && c.im.abs() < 1e-9 * scale));
    }

    #[test]
    fn lattice_correlation_approaches_continuum() {
        // Triangle 2 - |x| sampled with spacing dx; the error is first order
        // in dx at the kink-free lags, so halving dx should roughly halve it.
        let spec = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        let mut errs = Vec::new();
        for (n, dx) in [(64, 0.1), (128, 0.05), (256, 0.025)] {
            let l = lat(1, n, dx);
            let f = discrete_correlation(&sample_h(&spec, &l).unwrap(), &l).unwrap();
            let mut worst: f64 = 0.0;
            for lag in [2i64, 6, 10] {
                let k = lag * (n as i64 / 64);
                let x = k as f64 * dx;
                let exact = f_convolution_radial(&spec, x).unwrap().f;
                worst = worst.max((f[l.index(&[k])] - exact).abs());
            }
            errs.push(worst);
        }
        assert!(errs[2] < errs[0] && errs[2] <= 0.3 * errs[0] + 1e-12, "{errs:?}");
    }

    #[test]
    fn singular_origin_cell_uses_average() {
        let spec = KernelSpec::power_law(0.5, 1.0, 1.0, Dimension::ONE).unwrap();
        let l = lat(1, 64, 0.1);
        let h = sample_h(&spec, &l).unwrap();
        // h(r) = r^{-3/4} on (0, 0.05]: mean = 4 * 0.05^{1/4} / 0.05.
        let exact = 4.0 * 0.05f64.powf(0.25) / 0.05;
        assert!((h[0] - exact).abs() < 1e-9 * exact);
        for d in [2usize, 3] {
            let spec = KernelSpec::power_law(0.5, 1.0, 1.0, Dimension::new(d).unwrap()).unwrap();
            let l = lat(d, 8, 0.1);
            let h = sample_h(&spec, &l).unwrap();
            // Monte Carlo-free check: the average exceeds the value at the
            // cube corner and is finite.
            let corner = spec.at_radius(0.05 * (d as f64).sqrt());
            assert!(h[0].is_finite() && h[0] > corner);
        }
    }

    #[test]
    fn origin_average_of_constant_is_constant() {
        let spec = KernelSpec::compact_bump(10.0, 2.5, Dimension::THREE).unwrap();
        let v = origin_cell_average(&spec, 0.3).unwrap();
        assert!((v - 2.5).abs() < 1e-10, "{v}");
        let g = KernelSpec::gaussian(1.0, Dimension::TWO).unwrap();
        // Cube average of e^{-|x|²/2} over [-a,a]² factorizes into erf terms.
        let a = 0.4f64;
        let one = (std::f64::consts::PI / 2.0).sqrt() * statrs::function::erf::erf(a / 2f64.sqrt()) / a;
        let v = origin_cell_average(&g, a).unwrap();
        assert!((v - one * one).abs() < 1e-10);
    }

    #[test]
    fn truncation_changes_covariance_by_tail() {
        // f - f_r = (h - h_r) ⋆ h + h_r ⋆ (h - h_r), so Cauchy–Schwarz bounds
        // the change by ‖h - h_r‖ (‖h‖ + ‖h_r‖), linear in the L² tail.
        let spec = KernelSpec::gaussian(1.0, Dimension::ONE).unwrap();
        let l = lat(1, 128, 0.1);
        let vol = l.cell_volume();
        let h = sample_h(&spec, &l).unwrap();
        let f = discrete_correlation(&h, &l).unwrap();
        let norm = |v: &[f64]| (vol * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let full = norm_complement(&spec, 2.0, 0.0).unwrap().value();
        for r in [0.5, 1.0, 2.0] {
            let tr = truncate(&spec, r).unwrap();
            let hr = sample_h(&tr, &l).unwrap();
            let ft = discrete_correlation(&hr, &l).unwrap();
            let gap = f.iter().zip(&ft).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let diff: Vec<f64> = h.iter().zip(&hr).map(|(a, b)| a - b).collect();
            let bound = norm(&diff) * (norm(&h) + norm(&hr));
            assert!(gap <= bound * (1.0 + 1e-12), "r={r}: {gap} vs {bound}");
            let tail = norm_complement(&spec, 2.0, r).unwrap().value();
            assert!(gap <= 2.0 * full * tail * 1.1, "r={r}");
        }
    }

    #[test]
    fn too_few_samples() {
        let l = lat(1, 8, 1.0);
        let mut acc = CovarianceAccumulator::new(l, 10);
        for i in 0..10 {
            acc.push(&sample_white(&l, 1.0, StreamKey::new(0, i)).unwrap()).unwrap();
        }
        assert!(matches!(acc.finish(), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn white_covariance_vanishes_off_zero() {
        let l = lat(1, 32, 1.0);
        let mut acc = CovarianceAccumulator::new(l, 50);
        for i in 0..5000 {
            acc.push(&sample_white(&l, 1.0, StreamKey::new(9, i)).unwrap()).unwrap();
        }
        let est = acc.finish().unwrap();
        for lag in 1..16 {
            let (v, se) = est.at(&l, &[lag]);
            assert!(v.abs() < 3.5 * se, "lag {lag}: {v} ± {se}");
        }
        let (v0, se0) = est.at(&l, &[0]);
        assert!((v0 - 1.0).abs() < 3.5 * se0);
    }

    #[test]
    fn colored_covariance_matches_exact() {
        let l = lat(1, 64, 0.25);
        let spec = KernelSpec::compact_bump(1.0, 1.0, Dimension::ONE).unwrap();
        let c = Colorer::from_spec(&spec, l).unwrap();
        let dt = 0.01;
        let f = c.correlation();
        let mut acc = CovarianceAccumulator::new(l, 50);
        for i in 0..20_000 {
            acc.push(&c.increment(dt, StreamKey::new(5, i)).unwrap()).unwrap();
        }
        let est = acc.finish().unwrap();
        let mut misses = 0;
        for i in 0..l.sites() {
            if (est.values[i] - dt * f[i]).abs() > 3.0 * est.std_errors[i] {
                misses += 1;
            }
        }
        // 64 correlated lags at the 3σ level: a couple of exceedances are plausible.
        assert!(misses <= 3, "{misses} lags outside 3 SE");
    }

    #[test]
    fn dump_round_trip() {
        let l = lat(2, 4, 0.5);
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let mut buf = Vec::new();
        write_field(&mut buf, &l, 0.01, &v).unwrap();
        assert_eq!(buf.len(), 32 + 16 * 8);
        let (l2, dt, v2) = read_field(&buf[..]).unwrap();
        assert_eq!((l2, dt, v2), (l, 0.01, v));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn coloring_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let l = lat(1, 32, 0.2);
            let c = Colorer::from_spec(&KernelSpec::gaussian(0.5, Dimension::ONE).unwrap(), l).unwrap();
            let w1 = sample_white(&l, 1.0, StreamKey::new(seed, 0)).unwrap();
            let w2 = sample_white(&l, 1.0, StreamKey::new(seed, 1)).unwrap();
            let mix: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| a * x + b * y).collect();
            let lhs = c.color(&mix).unwrap();
            let (c1, c2) = (c.color(&w1).unwrap(), c.color(&w2).unwrap());
            for i in 0..l.sites() {
                let rhs = a * c1[i] + b * c2[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
            }
        }
    }
}
