//! Radial profiles for the correlation root, registered by name.

use crate::error::{Error, Result};
use crate::kernels::Dimension;
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

/// A radial profile `r ↦ h(r)` for the correlation root.
pub trait KernelFamily: Debug + Send + Sync {
    fn name(&self) -> &'static str;

    /// Profile at radius `r > 0`.
    fn profile(&self, r: f64, d: Dimension) -> f64;

    /// Radii where the profile is not smooth.
    fn breakpoints(&self) -> Vec<f64>;

    /// Characteristic length: support radius, width, or 1.
    fn structural_radius(&self) -> f64;

    fn support_radius(&self) -> Option<f64> {
        None
    }

    fn singular_at_origin(&self) -> bool {
        false
    }

    fn nonnegative(&self) -> bool {
        true
    }

    /// `(α, β)` when the family has power-law behavior at 0 and ∞.
    fn power_exponents(&self) -> Option<(f64, f64)> {
        None
    }

    /// Parameter-range problems in dimension `d`; empty when valid.
    fn findings(&self, d: Dimension) -> Vec<String>;

    fn params(&self) -> Map<String, Value>;
}

pub type FamilyBuilder = fn(&Map<String, Value>) -> Result<Arc<dyn KernelFamily>>;

/// Name → constructor table for kernel families.
#[derive(Clone)]
pub struct FamilyRegistry {
    builders: BTreeMap<String, FamilyBuilder>,
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        FamilyRegistry {
            builders: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register("power_law", PowerLaw::from_params);
        reg.register("compact_bump", CompactBump::from_params);
        reg.register("gaussian", Gaussian::from_params);
        reg.register("tabulated_radial", TabulatedRadial::from_params);
        reg
    }

    pub fn register(&mut self, name: &str, builder: FamilyBuilder) {
        self.builders.insert(name.to_string(), builder);
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, params: &Map<String, Value>) -> Result<Arc<dyn KernelFamily>> {
        let builder = self.builders.get(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown kernel family '{name}' (known: {})",
                self.names().join(", ")
            ))
        })?;
        builder(params)
    }
}

fn num(params: &Map<String, Value>, key: &str, default: Option<f64>) -> Result<f64> {
    match params.get(key) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("kernel parameter '{key}' must be a number"))),
        None => default.ok_or_else(|| Error::Config(format!("kernel parameter '{key}' is required"))),
    }
}

fn num_list(params: &Map<String, Value>, key: &str) -> Result<Vec<f64>> {
    let arr = params
        .get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Config(format!("kernel parameter '{key}' must be an array of numbers")))?;
    arr.iter()
        .map(|v| {
            v.as_f64()
                .ok_or_else(|| Error::Config(format!("kernel parameter '{key}' must be an array of numbers")))
        })
        .collect()
}

fn check_only(params: &Map<String, Value>, allowed: &[&str]) -> Result<()> {
    for k in params.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "unexpected kernel parameter '{k}' (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

/// `c r^{-(d+α)/2}` inside the unit ball, `c r^{-(d+β)/2}` outside.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerLaw {
    pub alpha: f64,
    pub beta: f64,
    pub scale: f64,
}

impl PowerLaw {
    fn from_params(p: &Map<String, Value>) -> Result<Arc<dyn KernelFamily>> {
        check_only(p, &["alpha", "beta", "scale"])?;
        Ok(Arc::new(PowerLaw {
            alpha: num(p, "alpha", None)?,
            beta: num(p, "beta", None)?,
            scale: num(p, "scale", Some(1.0))?,
        }))
    }
}

impl KernelFamily for PowerLaw {
    fn name(&self) -> &'static str {
        "power_law"
    }

    fn profile(&self, r: f64, d: Dimension) -> f64 {
        let e = if r < 1.0 { self.alpha } else { self.beta };
        self.scale * r.powf(-0.5 * (d.as_f64() + e))
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn structural_radius(&self) -> f64 {
        1.0
    }

    fn singular_at_origin(&self) -> bool {
        true
    }

    fn nonnegative(&self) -> bool {
        self.scale >= 0.0
    }

    fn power_exponents(&self) -> Option<(f64, f64)> {
        Some((self.alpha, self.beta))
    }

    fn findings(&self, d: Dimension) -> Vec<String> {
        let mut out = Vec::new();
        let cap = d.as_f64().min(2.0);
        if !(self.alpha > 0.0 && self.alpha < cap) {
            out.push(format!(
                "power_law alpha = {} must lie in (0, min(d, 2)) = (0, {cap})",
                self.alpha
            ));
        }
        if !(self.beta > 0.0) {
            out.push(format!("power_law beta = {} must be positive", self.beta));
        }
        if !(self.scale.is_finite() && self.scale != 0.0) {
            out.push(format!("power_law scale = {} must be finite and nonzero", self.scale));
        }
        out
    }

    fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("alpha".into(), self.alpha.into());
        m.insert("beta".into(), self.beta.into());
        m.insert("scale".into(), self.scale.into());
        m
    }
}

/// `amplitude` on the closed ball of radius `radius`, zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct CompactBump {
    pub radius: f64,
    pub amplitude: f64,
}

impl CompactBump {
    fn from_params(p: &Map<String, Value>) -> Result<Arc<dyn KernelFamily>> {
        check_only(p, &["radius", "amplitude"])?;
        Ok(Arc::new(CompactBump {
            radius: num(p, "radius", None)?,
            amplitude: num(p, "amplitude", Some(1.0))?,
        }))
    }
}

impl KernelFamily for CompactBump {
    fn name(&self) -> &'static str {
        "compact_bump"
    }

    fn profile(&self, r: f64, _d: Dimension) -> f64 {
        if r <= self.radius {
            self.amplitude
        } else {
            0.0
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![self.radius]
    }

    fn structural_radius(&self) -> f64 {
        self.radius
    }

    fn support_radius(&self) -> Option<f64> {
        Some(self.radius)
    }

    fn nonnegative(&self) -> bool {
        self.amplitude >= 0.0
    }

    fn findings(&self, _d: Dimension) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            out.push(format!("compact_bump radius = {} must be positive", self.radius));
        }
        if !(self.amplitude.is_finite() && self.amplitude != 0.0) {
            out.push(format!("compact_bump amplitude = {} must be finite and nonzero", self.amplitude));
        }
        out
    }

    fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("radius".into(), self.radius.into());
        m.insert("amplitude".into(), self.amplitude.into());
        m
    }
}

/// `amplitude · exp(-r²/(2 width²))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian {
    pub width: f64,
    pub amplitude: f64,
}

impl Gaussian {
    fn from_params(p: &Map<String, Value>) -> Result<Arc<dyn KernelFamily>> {
        check_only(p, &["width", "amplitude"])?;
        Ok(Arc::new(Gaussian {
            width: num(p, "width", None)?,
            amplitude: num(p, "amplitude", Some(1.0))?,
        }))
    }
}

impl KernelFamily for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn profile(&self, r: f64, _d: Dimension) -> f64 {
        let z = r / self.width;
        self.amplitude * (-0.5 * z * z).exp()
    }

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    fn structural_radius(&self) -> f64 {
        self.width
    }

    fn nonnegative(&self) -> bool {
        self.amplitude >= 0.0
    }

    fn findings(&self, _d: Dimension) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.width > 0.0 && self.width.is_finite()) {
            out.push(format!("gaussian width = {} must be positive", self.width));
        }
        if !(self.amplitude.is_finite() && self.amplitude != 0.0) {
            out.push(format!("gaussian amplitude = {} must be finite and nonzero", self.amplitude));
        }
        out
    }

    fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("width".into(), self.width.into());
        m.insert("amplitude".into(), self.amplitude.into());
        m
    }
}

/// Radial samples with piecewise constant (0), linear (1) or cubic
/// Hermite (3) interpolation. Constant below the first radius, zero past the
/// last.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedRadial {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub order: u8,
}

impl TabulatedRadial {
    fn from_params(p: &Map<String, Value>) -> Result<Arc<dyn KernelFamily>> {
        check_only(p, &["grid", "values", "order"])?;
        let order = num(p, "order", Some(1.0))?;
        Ok(Arc::new(TabulatedRadial {
            grid: num_list(p, "grid")?,
            values: num_list(p, "values")?,
            order: order as u8,
        }))
    }

    fn slope(&self, i: usize) -> f64 {
        let n = self.grid.len();
        if n < 2 {
            return 0.0;
        }
        let (a, b) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        (self.values[b] - self.values[a]) / (self.grid[b] - self.grid[a])
    }
}

impl KernelFamily for TabulatedRadial {
    fn name(&self) -> &'static str {
        "tabulated_radial"
    }

    fn profile(&self, r: f64, _d: Dimension) -> f64 {
        let g = &self.grid;
        let n = g.len();
        if n == 0 || r > g[n - 1] {
            return 0.0;
        }
        if r <= g[0] {
            return self.values[0];
        }
        if r == g[n - 1] {
            return self.values[n - 1];
        }
        let i = g.partition_point(|&x| x <= r).saturating_sub(1).min(n - 2);
        let (x0, x1) = (g[i], g[i + 1]);
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let w = x1 - x0;
        let s = (r - x0) / w;
        match self.order {
            0 => y0,
            3 => {
                let (m0, m1) = (self.slope(i) * w, self.slope(i + 1) * w);
                let s2 = s * s;
                let s3 = s2 * s;
                (2.0 * s3 - 3.0 * s2 + 1.0) * y0
                    + (s3 - 2.0 * s2 + s) * m0
                    + (-2.0 * s3 + 3.0 * s2) * y1
                    + (s3 - s2) * m1
            }
            _ => y0 + s * (y1 - y0),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.grid.iter().copied().filter(|&r| r > 0.0).collect()
    }

    fn structural_radius(&self) -> f64 {
        self.grid.last().copied().unwrap_or(1.0)
    }

    fn support_radius(&self) -> Option<f64> {
        self.grid.last().copied()
    }

    fn nonnegative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    fn findings(&self, _d: Dimension) -> Vec<String> {
        let mut out = Vec::new();
        if self.grid.len() < 2 {
            out.push("tabulated_radial needs at least two samples".into());
        }
        if self.grid.len() != self.values.len() {
            out.push(format!(
                "tabulated_radial grid has {} entries but values has {}",
                self.grid.len(),
                self.values.len()
            ));
        }
        if self.grid.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            out.push("tabulated_radial grid must be finite and nonnegative".into());
        }
        if !self.grid.windows(2).all(|w| w[1] > w[0]) {
            out.push("tabulated_radial grid must be strictly increasing".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            out.push("tabulated_radial values must be finite".into());
        }
        if ![0, 1, 3].contains(&self.order) {
            out.push(format!("tabulated_radial order {} not in {{0, 1, 3}}", self.order));
        }
        out
    }

    fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("grid".into(), self.grid.clone().into());
        m.insert("values".into(), self.values.clone().into());
        m.insert("order".into(), (self.order as u64).into());
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_round_trips_params() {
        let reg = FamilyRegistry::builtin();
        assert_eq!(reg.names(), ["compact_bump", "gaussian", "power_law", "tabulated_radial"]);
        for fam in [
            Arc::new(PowerLaw { alpha: 0.5, beta: 1.0, scale: 2.0 }) as Arc<dyn KernelFamily>,
            Arc::new(CompactBump { radius: 1.5, amplitude: 1.0 }),
            Arc::new(Gaussian { width: 0.7, amplitude: 1.0 }),
            Arc::new(TabulatedRadial { grid: vec![0.0, 1.0, 2.0], values: vec![1.0, 0.5, 0.0], order: 3 }),
        ] {
            let rebuilt = reg.build(fam.name(), &fam.params()).unwrap();
            assert_eq!(rebuilt.params(), fam.params());
        }
        assert!(reg.build("mexican_hat", &Map::new()).is_err());
    }

    #[test]
    fn tabulated_interpolation_orders() {
        let grid = vec![0.0, 1.0, 2.0, 3.0];
        let values = vec![1.0, 2.0, 4.0, 8.0];
        let d = Dimension::ONE;
        for order in [0u8, 1, 3] {
            let t = TabulatedRadial { grid: grid.clone(), values: values.clone(), order };
            for (r, v) in grid.iter().zip(&values) {
                assert!((t.profile(*r, d) - v).abs() < 1e-12, "order {order} at {r}");
            }
            assert_eq!(t.profile(3.5, d), 0.0);
        }
        let lin = TabulatedRadial { grid, values, order: 1 };
        assert!((lin.profile(1.5, d) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn power_law_range_checks() {
        let bad = PowerLaw { alpha: 1.0, beta: 1.0, scale: 1.0 };
        assert!(!bad.findings(Dimension::ONE).is_empty());
        assert!(bad.findings(Dimension::TWO).is_empty());
        let alpha_two = PowerLaw { alpha: 2.0, beta: 1.0, scale: 1.0 };
        assert!(!alpha_two.findings(Dimension::THREE).is_empty());
    }
}
