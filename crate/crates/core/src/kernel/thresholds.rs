use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Censoring geometry of one step: interior band `[l, u]` and the values
/// `L`, `U` reported when the latent response falls below or above it.
///
/// `l` may be `-inf` (no lower censoring, which forces `L = -inf`) and `u`
/// may be `+inf` (no upper censoring, `U = +inf`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub l: f64,
    pub u: f64,
    #[serde(rename = "L")]
    pub lower: f64,
    #[serde(rename = "U")]
    pub upper: f64,
}

impl Thresholds {
    pub fn new(l: f64, u: f64, lower: f64, upper: f64) -> Result<Self> {
        let t = Self { l, u, lower, upper };
        t.validate()?;
        Ok(t)
    }

    /// Clipping at `[l, u]` with `L = l`, `U = u` (interval censoring).
    pub fn clipped(l: f64, u: f64) -> Result<Self> {
        Self::new(l, u, l, u)
    }

    /// No censoring at all; the model reduces to linear regression.
    pub fn uncensored() -> Self {
        Self {
            l: f64::NEG_INFINITY,
            u: f64::INFINITY,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    /// Binary-valued observation at cut point `c`: `y = L` below, `y = U`
    /// above, with `L = min(0, c)` and `U = max(1, c)`.
    pub fn binary(c: f64) -> Result<Self> {
        Self::new(c, c, c.min(0.0), c.max(1.0))
    }

    pub fn validate(&self) -> Result<()> {
        let Self { l, u, lower, upper } = *self;
        if [l, u, lower, upper].iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("thresholds", "NaN threshold"));
        }
        if l == f64::INFINITY || u == f64::NEG_INFINITY {
            return Err(Error::invalid(
                "thresholds",
                format!("l must be below +inf and u above -inf (got l={l}, u={u})"),
            ));
        }
        if !(lower <= l && l <= u && u <= upper) {
            return Err(Error::invalid(
                "thresholds",
                format!("require L <= l <= u <= U (got L={lower}, l={l}, u={u}, U={upper})"),
            ));
        }
        if !(lower < upper) {
            return Err(Error::invalid(
                "thresholds",
                format!("require L < U (got L={lower}, U={upper})"),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn has_lower(&self) -> bool {
        self.l.is_finite()
    }

    #[inline]
    pub fn has_upper(&self) -> bool {
        self.u.is_finite()
    }

    /// Bound on `|l| + |u|` over the finite thresholds.
    pub fn extent(&self) -> f64 {
        let l = if self.has_lower() { self.l.abs() } else { 0.0 };
        let u = if self.has_upper() { self.u.abs() } else { 0.0 };
        l + u
    }
}

/// Step index to thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdSchedule {
    Constant(Thresholds),
    /// Repeats the listed entries cyclically.
    Periodic(Vec<Thresholds>),
}

impl ThresholdSchedule {
    pub fn at(&self, k: usize) -> &Thresholds {
        match self {
            ThresholdSchedule::Constant(t) => t,
            ThresholdSchedule::Periodic(ts) => &ts[k % ts.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ThresholdSchedule::Constant(t) => t.validate(),
            ThresholdSchedule::Periodic(ts) => {
                if ts.is_empty() {
                    return Err(Error::invalid("thresholds", "empty periodic schedule"));
                }
                ts.iter().try_for_each(Thresholds::validate)
            }
        }
    }
}

impl From<Thresholds> for ThresholdSchedule {
    fn from(t: Thresholds) -> Self {
        ThresholdSchedule::Constant(t)
    }
}
