//! Real values that may be tagged as divergent.
//!
//! Norms and membership integrals diverge for perfectly legitimate inputs
//! (a kernel outside some `L^p`), so divergence is carried as data instead
//! of an error.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Extended {
    Finite(f64),
    Infinite(String),
}

impl Extended {
    pub fn infinite(reason: impl Into<String>) -> Self {
        Extended::Infinite(reason.into())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    /// The value, with divergence mapped to `f64::INFINITY`.
    pub fn value(&self) -> f64 {
        match self {
            Extended::Finite(v) => *v,
            Extended::Infinite(_) => f64::INFINITY,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::Infinite(_) => None,
        }
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            Extended::Finite(_) => None,
            Extended::Infinite(r) => Some(r),
        }
    }

    pub fn map(self, f: impl FnOnce(f64) -> f64) -> Self {
        match self {
            Extended::Finite(v) => Extended::Finite(f(v)),
            inf => inf,
        }
    }

    pub fn add(self, other: Extended) -> Extended {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            (Extended::Infinite(r), _) | (_, Extended::Infinite(r)) => Extended::Infinite(r),
        }
    }

    /// Product of nonnegative quantities. A zero factor annihilates a
    /// divergent one: the bounds built from these products vanish with
    /// either norm.
    pub fn mul(self, other: Extended) -> Extended {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a * b),
            (Extended::Finite(z), Extended::Infinite(_))
            | (Extended::Infinite(_), Extended::Finite(z))
                if z == 0.0 =>
            {
                Extended::Finite(0.0)
            }
            (Extended::Infinite(r), _) | (_, Extended::Infinite(r)) => Extended::Infinite(r),
        }
    }

    pub fn scale(self, c: f64) -> Extended {
        self.map(|v| c * v)
    }
}

impl From<f64> for Extended {
    fn from(v: f64) -> Self {
        if v.is_finite() {
            Extended::Finite(v)
        } else {
            Extended::Infinite("non-finite value".into())
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::Infinite(r) => write!(f, "inf ({r})"),
        }
    }
}
