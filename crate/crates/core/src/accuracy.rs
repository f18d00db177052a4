//! Accuracy curves `a(m) = max(0, b(m))` with `b` continuous, non-decreasing
//! and concave on the part of the domain where it is positive.
//!
//! Three parametric families are supported:
//!
//! * [`CurveKind::SimpleBound`]: `b(m) = a_opt - 2 sqrt(k / m)`
//! * [`CurveKind::FullBound`]: `b(m) = a_opt - (sqrt(2k (2 + ln(m/k))) + 4) / sqrt(m)`
//! * [`CurveKind::PowerLaw`]: `b(m) = 1 - beta / m^alpha - tau`
//!
//! Dataset sizes are continuous non-negative reals throughout.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::roots::{bisect, BISECT_MAX_ITER, BISECT_RTOL};

/// Relative tolerance used for the minimum-viable-dataset root.
const ROOT_RTOL: f64 = 1e-14;

/// Parameters of an accuracy curve, before validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CurveKind {
    #[serde(rename = "simple")]
    SimpleBound { a_opt: f64, k: f64 },
    #[serde(rename = "full")]
    FullBound { a_opt: f64, k: f64 },
    #[serde(rename = "powerlaw")]
    PowerLaw { beta: f64, alpha: f64, tau: f64 },
}

/// Result of inverting the marginal accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InverseSlope {
    /// A dataset size inside the concave domain.
    Finite(f64),
    /// The slope never descends to the requested value (includes any
    /// non-positive target).
    Infinite,
}

impl InverseSlope {
    pub fn finite(self) -> Option<f64> {
        match self {
            InverseSlope::Finite(m) => Some(m),
            InverseSlope::Infinite => None,
        }
    }
}

/// A validated accuracy curve.
///
/// Construction checks the parameters and precomputes the lower end of the
/// concave domain and the minimum viable dataset `m0`; every other operation
/// is a pure function of the stored values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CurveKind", into = "CurveKind")]
pub struct AccuracyModel {
    kind: CurveKind,
    /// Smallest `m` at which `raw` is defined.
    defined_from: f64,
    /// Lower end of the region where `raw` is concave and `slope` decreasing.
    concave_from: f64,
    min_viable: f64,
}

impl TryFrom<CurveKind> for AccuracyModel {
    type Error = Error;

    fn try_from(kind: CurveKind) -> Result<Self> {
        AccuracyModel::new(kind)
    }
}

impl From<AccuracyModel> for CurveKind {
    fn from(model: AccuracyModel) -> Self {
        model.kind
    }
}

fn check_a_opt(a_opt: f64) -> Result<()> {
    if !(a_opt > 0.0 && a_opt <= 1.0) {
        return Err(invalid("a_opt", format!("{a_opt} not in (0, 1]")));
    }
    Ok(())
}

fn check_k(k: f64) -> Result<()> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(invalid("k", format!("{k} must be finite and >= 1")));
    }
    Ok(())
}

impl AccuracyModel {
    pub fn new(kind: CurveKind) -> Result<Self> {
        let defined_from = match kind {
            CurveKind::SimpleBound { a_opt, k } => {
                check_a_opt(a_opt)?;
                check_k(k)?;
                0.0
            }
            CurveKind::FullBound { a_opt, k } => {
                check_a_opt(a_opt)?;
                check_k(k)?;
                // The logarithm under the square root must stay non-negative.
                1f64.max(k * (-2f64).exp())
            }
            CurveKind::PowerLaw { beta, alpha, tau } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(invalid("beta", format!("{beta} must be > 0")));
                }
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(invalid("alpha", format!("{alpha} not in (0, 1]")));
                }
                if !(0.0..1.0).contains(&tau) {
                    return Err(invalid("tau", format!("{tau} not in [0, 1)")));
                }
                0.0
            }
        };

        let mut model = AccuracyModel {
            kind,
            defined_from,
            concave_from: defined_from,
            min_viable: 0.0,
        };
        if let CurveKind::FullBound { a_opt, k } = kind {
            model.concave_from = model.full_bound_inflection(k);
            // Below the inflection point b is convex, so its maximum there sits
            // at an endpoint; both must be negative for a(m) to stay monotone.
            if model.b(model.defined_from) >= 0.0 || model.b(model.concave_from) >= 0.0 {
                return Err(invalid(
                    "k",
                    format!("k = {k} is too large for a_opt = {a_opt}: accuracy is not monotone"),
                ));
            }
        }
        model.min_viable = model.solve_min_viable();
        Ok(model)
    }

    pub fn simple(a_opt: f64, k: f64) -> Result<Self> {
        Self::new(CurveKind::SimpleBound { a_opt, k })
    }

    pub fn full(a_opt: f64, k: f64) -> Result<Self> {
        Self::new(CurveKind::FullBound { a_opt, k })
    }

    pub fn power_law(beta: f64, alpha: f64, tau: f64) -> Result<Self> {
        Self::new(CurveKind::PowerLaw { beta, alpha, tau })
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    /// `lim_{m -> inf} a(m)`.
    pub fn limit(&self) -> f64 {
        match self.kind {
            CurveKind::SimpleBound { a_opt, .. } | CurveKind::FullBound { a_opt, .. } => a_opt,
            CurveKind::PowerLaw { tau, .. } => 1.0 - tau,
        }
    }

    /// Lower end of the concave domain. Zero means the open interval `(0, inf)`.
    pub fn concave_from(&self) -> f64 {
        self.concave_from
    }

    /// Accuracy `a(m) = max(0, b(m))`, clamped to zero below the domain.
    pub fn eval(&self, m: f64) -> f64 {
        if self.check_defined(m).is_err() {
            return 0.0;
        }
        self.b(m).max(0.0)
    }

    /// Right derivative of [`AccuracyModel::eval`]: `b'(m)` where `a > 0`, else 0.
    pub fn eval_slope(&self, m: f64) -> f64 {
        if self.eval(m) > 0.0 {
            self.db(m)
        } else {
            0.0
        }
    }

    /// The unclamped curve `b(m)`; may be negative.
    pub fn raw(&self, m: f64) -> Result<f64> {
        self.check_defined(m)?;
        Ok(self.b(m))
    }

    /// Marginal accuracy `b'(m)`.
    pub fn slope(&self, m: f64) -> Result<f64> {
        let ok = match self.kind {
            CurveKind::FullBound { k, .. } => m >= self.defined_from && self.log_term(m, k) > 0.0,
            _ => m > 0.0,
        };
        if !ok || !m.is_finite() {
            return Err(self.domain_error(m));
        }
        Ok(self.db(m))
    }

    /// Dataset size at which the marginal accuracy equals `s`.
    ///
    /// Searches the concave domain only. A target above the largest slope on
    /// that domain returns its lower end; a non-positive target returns
    /// [`InverseSlope::Infinite`].
    pub fn inverse_slope(&self, s: f64) -> InverseSlope {
        if !(s > 0.0) {
            return InverseSlope::Infinite;
        }
        let floor = self.concave_from;
        if floor > 0.0 && s >= self.db(floor) {
            return InverseSlope::Finite(floor);
        }

        let mut lo = self.min_viable.max(floor).max(f64::MIN_POSITIVE);
        let mut hi = 2.0 * lo;
        while self.db(lo) < s {
            let next = 0.5 * lo;
            if next <= floor {
                lo = floor;
                break;
            }
            lo = next;
        }
        while self.db(hi) > s {
            hi *= 2.0;
            if hi > 1e300 {
                return InverseSlope::Infinite;
            }
        }
        let m = bisect(|m| self.db(m) - s, lo, hi, BISECT_RTOL, BISECT_MAX_ITER);
        InverseSlope::Finite(m)
    }

    /// Minimum viable dataset `m0`: the largest `m` with `a(m) = 0`.
    pub fn min_viable_dataset(&self) -> f64 {
        self.min_viable
    }

    fn solve_min_viable(&self) -> f64 {
        let floor = self.defined_from;
        let mut lo = if floor > 0.0 { floor } else { 1.0 };
        if self.b(lo) >= 0.0 {
            if floor > 0.0 {
                return floor;
            }
            while self.b(lo) >= 0.0 {
                lo *= 0.5;
                if lo < 1e-300 {
                    return 0.0;
                }
            }
        }
        let mut hi = 2.0 * lo;
        while self.b(hi) <= 0.0 {
            hi *= 2.0;
        }
        bisect(|m| self.b(m), lo, hi, ROOT_RTOL, BISECT_MAX_ITER)
    }

    fn check_defined(&self, m: f64) -> Result<()> {
        let ok = if self.defined_from > 0.0 {
            m >= self.defined_from
        } else {
            m > 0.0
        };
        if ok && m.is_finite() {
            Ok(())
        } else {
            Err(self.domain_error(m))
        }
    }

    fn domain_error(&self, m: f64) -> Error {
        let bound = if self.defined_from > 0.0 {
            format!(">= {}", self.defined_from)
        } else {
            "> 0".to_string()
        };
        Error::Domain { m, bound }
    }

    fn log_term(&self, m: f64, k: f64) -> f64 {
        2.0 * k * (2.0 + (m / k).ln())
    }

    /// `b(m)` without domain checks.
    pub(crate) fn b(&self, m: f64) -> f64 {
        match self.kind {
            CurveKind::SimpleBound { a_opt, k } => a_opt - 2.0 * (k / m).sqrt(),
            CurveKind::FullBound { a_opt, k } => {
                let g = self.log_term(m, k).max(0.0).sqrt();
                a_opt - (g + 4.0) / m.sqrt()
            }
            CurveKind::PowerLaw { beta, alpha, tau } => 1.0 - beta / m.powf(alpha) - tau,
        }
    }

    /// `b'(m)` without domain checks.
    pub(crate) fn db(&self, m: f64) -> f64 {
        match self.kind {
            CurveKind::SimpleBound { k, .. } => k.sqrt() * m.powf(-1.5),
            CurveKind::FullBound { k, .. } => {
                let g = self.log_term(m, k).sqrt();
                ((g + 4.0) / 2.0 - k / g) * m.powf(-1.5)
            }
            CurveKind::PowerLaw { beta, alpha, .. } => alpha * beta * m.powf(-alpha - 1.0),
        }
    }

    /// Start of the concave part of the full bound.
    ///
    /// With `g = sqrt(2k(2 + ln(m/k)))`, `m^{5/2} b''(m)` equals
    /// `(k/g)(1/2 + k/g^2) - 3/2 ((g + 4)/2 - k/g)`, which is decreasing in
    /// `m`; its root (if any) is the inflection point.
    fn full_bound_inflection(&self, k: f64) -> f64 {
        let curvature = |m: f64| {
            let g = self.log_term(m, k).sqrt();
            (k / g) * (0.5 + k / (g * g)) - 1.5 * ((g + 4.0) / 2.0 - k / g)
        };
        let lo = self.defined_from;
        let probe = if self.log_term(lo, k) > 0.0 {
            lo
        } else {
            lo * (1.0 + 1e-12)
        };
        if curvature(probe) <= 0.0 {
            return lo;
        }
        let mut hi = 2.0 * probe;
        while curvature(hi) > 0.0 {
            hi *= 2.0;
        }
        // Land on the concave side.
        let root = bisect(curvature, probe, hi, ROOT_RTOL, BISECT_MAX_ITER);
        if curvature(root) > 0.0 {
            root * (1.0 + 1e-12)
        } else {
            root
        }
    }
}
