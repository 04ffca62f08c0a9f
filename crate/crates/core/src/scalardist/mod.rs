//! Univariate even densities: tails, quantiles, convolutions, envelopes and
//! Gaussian scale mixtures.
//!
//! Every density here is even, so it is described by its values on the
//! nonnegative ray. `tail(δ)` is the mass of `[δ, ∞)`.

mod nice;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::numkit::quad::{integrate, quad_line, quad_tail, QuadratureSpec};
use crate::numkit::special::{ln_gamma, normal_pdf, normal_tail, student_pdf, student_tail};
use crate::numkit::NumError;

pub use nice::{check_nice, dominates, DominationReport, NicenessReport};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DistError {
    #[error("tail argument must be nonnegative, got {0}")]
    NegativeDelta(f64),
    #[error("risk level must lie in (0, 1/2], got {0}")]
    EpsOutOfRange(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operand is not a nice density: {0}")]
    NotNice(String),
    #[error("envelope of an empty list")]
    EmptyEnvelope,
    #[error("numerical evaluation failed: {0}")]
    Numeric(#[from] NumError),
}

/// Degrees of freedom, with `Infinite` standing for the Gaussian limit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Nu {
    Finite(f64),
    Infinite,
}

impl Nu {
    /// Student density with this many degrees of freedom and unit scale.
    pub fn density(self) -> Density {
        match self {
            Nu::Finite(nu) => Density::Student { nu, scale: 1.0 },
            Nu::Infinite => Density::Gaussian { sigma: 1.0 },
        }
    }

    pub fn is_valid(self) -> bool {
        match self {
            Nu::Finite(v) => v.is_finite() && v > 0.0,
            Nu::Infinite => true,
        }
    }
}

impl fmt::Display for Nu {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nu::Finite(v) => write!(f, "{v}"),
            Nu::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Nu {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Nu::Finite(v) => s.serialize_f64(*v),
            Nu::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Nu {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_finite() && v > 0.0 => Ok(Nu::Finite(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("degrees of freedom must be positive, got {v}"))),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "Inf") => Ok(Nu::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {t:?}"))),
        }
    }
}

/// Law of the scale `Z` in `√Z·η` with `η` standard Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MixingLaw {
    PointMass {
        t: f64,
    },
    Exponential {
        mean: f64,
    },
    /// `Z = ν/χ²_ν`
    InverseChiSqScaled {
        nu: f64,
    },
}

impl MixingLaw {
    pub fn validate(&self) -> Result<(), DistError> {
        let (name, v) = match *self {
            MixingLaw::PointMass { t } => ("point mass", t),
            MixingLaw::Exponential { mean } => ("exponential mean", mean),
            MixingLaw::InverseChiSqScaled { nu } => ("inverse chi-square dof", nu),
        };
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(DistError::InvalidParameter(format!("{name} must be positive, got {v}")))
        }
    }

    /// Density of `Z` at `t > 0` (`None` for the point mass).
    fn pdf(&self, t: f64) -> Option<f64> {
        match *self {
            MixingLaw::PointMass { .. } => None,
            MixingLaw::Exponential { mean } => Some((-t / mean).exp() / mean),
            MixingLaw::InverseChiSqScaled { nu } => {
                if t <= 0.0 {
                    return Some(0.0);
                }
                let h = 0.5 * nu;
                Some((h * h.ln() - ln_gamma(h) - (h + 1.0) * t.ln() - h / t).exp())
            }
        }
    }

    /// `E g(√Z)`; integrates over `u = √Z`.
    fn expect_sqrt(&self, g: impl Fn(f64) -> f64) -> f64 {
        match *self {
            MixingLaw::PointMass { t } => g(t.sqrt()),
            _ => {
                let spec = QuadratureSpec::fine();
                let f = |u: f64| {
                    if u <= 0.0 {
                        return 0.0;
                    }
                    let p = self.pdf(u * u).unwrap_or(0.0);
                    if p == 0.0 {
                        0.0
                    } else {
                        g(u) * p * 2.0 * u
                    }
                };
                quad_tail(f, 0.0, &spec).unwrap_or(f64::NAN)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    Gaussian {
        sigma: f64,
    },
    Student {
        nu: f64,
        #[serde(default = "unit")]
        scale: f64,
    },
    Laplace {
        lambda: f64,
    },
    ScaleMixture {
        mixing: MixingLaw,
    },
    Convolution {
        left: Box<Density>,
        right: Box<Density>,
    },
    UnionEnvelope {
        members: Vec<Density>,
    },
    /// Values on an ascending grid starting at 0, extended evenly and
    /// linearly interpolated; zero beyond the last grid point.
    Tabulated {
        grid: Vec<f64>,
        values: Vec<f64>,
    },
}

fn unit() -> f64 {
    1.0
}

const GAUSS_KERNEL_SPAN: f64 = 12.0;
const ENVELOPE_STEP: f64 = 1e-5;

impl Density {
    pub fn gaussian(sigma: f64) -> Self {
        Density::Gaussian { sigma }
    }

    pub fn student(nu: f64) -> Self {
        Density::Student { nu, scale: 1.0 }
    }

    pub fn laplace(lambda: f64) -> Self {
        Density::Laplace { lambda }
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self, DistError> {
        let d = Density::Tabulated { grid, values };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(DistError::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Density::Gaussian { sigma } => positive("sigma", *sigma),
            Density::Student { nu, scale } => positive("nu", *nu).and(positive("scale", *scale)),
            Density::Laplace { lambda } => positive("lambda", *lambda),
            Density::ScaleMixture { mixing } => mixing.validate(),
            Density::Convolution { left, right } => left.validate().and(right.validate()),
            Density::UnionEnvelope { members } => {
                if members.is_empty() {
                    return Err(DistError::EmptyEnvelope);
                }
                members.iter().try_for_each(Density::validate)
            }
            Density::Tabulated { grid, values } => {
                let ok = grid.len() >= 2
                    && grid.len() == values.len()
                    && grid[0] == 0.0
                    && grid.windows(2).all(|w| w[1] > w[0])
                    && values.iter().all(|v| v.is_finite() && *v >= 0.0)
                    && values.iter().any(|v| *v > 0.0);
                if ok {
                    Ok(())
                } else {
                    Err(DistError::InvalidParameter(
                        "tabulated density needs an ascending grid from 0 and nonnegative values".into(),
                    ))
                }
            }
        }
    }

    fn tab_mass(grid: &[f64], values: &[f64]) -> f64 {
        2.0 * grid.windows(2).zip(values.windows(2)).map(|(g, v)| 0.5 * (g[1] - g[0]) * (v[0] + v[1])).sum::<f64>()
    }

    fn tab_interp(grid: &[f64], values: &[f64], s: f64) -> f64 {
        let s = s.abs();
        if s > *grid.last().expect("validated") {
            return 0.0;
        }
        let i = grid.partition_point(|&g| g <= s).saturating_sub(1).min(grid.len() - 2);
        let w = (s - grid[i]) / (grid[i + 1] - grid[i]);
        values[i] + w * (values[i + 1] - values[i])
    }

    /// Density value; NaN when a numerical evaluation fails.
    pub fn pdf(&self, s: f64) -> f64 {
        let s = s.abs();
        match self {
            Density::Gaussian { sigma } => normal_pdf(s / sigma) / sigma,
            Density::Student { nu, scale } => student_pdf(*nu, s / scale) / scale,
            Density::Laplace { lambda } => (-s / lambda).exp() / (2.0 * lambda),
            Density::ScaleMixture { mixing } => {
                mixing.expect_sqrt(|u| if u > 0.0 { normal_pdf(s / u) / u } else { 0.0 })
            }
            Density::Convolution { left, right } => Self::kernel_integral(left, right, s, |l, x| l.pdf(x)),
            Density::UnionEnvelope { .. } => {
                let h = ENVELOPE_STEP * 1f64.max(s);
                (self.upper(s - h) - self.upper(s + h)) / (2.0 * h)
            }
            Density::Tabulated { grid, values } => Self::tab_interp(grid, values, s) / Self::tab_mass(grid, values),
        }
    }

    /// `∫ right(r) g(left, x − r) dr`, integrating against whichever operand is
    /// Gaussian when possible.
    fn kernel_integral(left: &Density, right: &Density, x: f64, g: impl Fn(&Density, f64) -> f64) -> f64 {
        let spec = QuadratureSpec::fine();
        let (outer, inner) = match (left, right) {
            (_, Density::Gaussian { .. }) => (right, left),
            (Density::Gaussian { .. }, _) => (left, right),
            _ => (right, left),
        };
        let f = |r: f64| {
            let w = outer.pdf(r);
            if w == 0.0 {
                0.0
            } else {
                w * g(inner, x - r)
            }
        };
        let res = match outer {
            Density::Gaussian { sigma } => {
                let span = GAUSS_KERNEL_SPAN * sigma;
                integrate(f, -span, span, &[0.0, x], &spec)
            }
            _ => quad_line(f, &[0.0, x], &spec),
        };
        res.unwrap_or(f64::NAN)
    }

    /// `P(X ≥ x)` for any real `x`; NaN when a numerical evaluation fails.
    pub fn upper(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 1.0 - self.upper(-x);
        }
        match self {
            Density::Gaussian { sigma } => normal_tail(x / sigma),
            Density::Student { nu, scale } => student_tail(*nu, x / scale),
            Density::Laplace { lambda } => 0.5 * (-x / lambda).exp(),
            Density::ScaleMixture { mixing } => mixing.expect_sqrt(|u| if u > 0.0 { normal_tail(x / u) } else { 0.0 }),
            Density::Convolution { left, right } => Self::kernel_integral(left, right, x, |l, y| l.upper(y)),
            Density::UnionEnvelope { members } => members.iter().map(|m| m.upper(x)).fold(f64::NEG_INFINITY, f64::max),
            Density::Tabulated { grid, values } => {
                let mut acc = 0.0;
                for i in 0..grid.len() - 1 {
                    let (a, b) = (grid[i], grid[i + 1]);
                    if b <= x {
                        continue;
                    }
                    let lo = a.max(x);
                    let fa = Self::tab_interp(grid, values, lo);
                    acc += 0.5 * (b - lo) * (fa + values[i + 1]);
                }
                acc / Self::tab_mass(grid, values)
            }
        }
    }

    /// Tail mass `∫_δ^∞ γ`.
    pub fn tail(&self, delta: f64) -> Result<f64, DistError> {
        if !(delta >= 0.0) {
            return Err(DistError::NegativeDelta(delta));
        }
        let v = self.upper(delta);
        if v.is_finite() {
            Ok(v.clamp(0.0, 0.5))
        } else {
            Err(DistError::Numeric(NumError::NonConvergence(format!("tail at {delta}"))))
        }
    }

    /// Smallest `δ ≥ 0` with `tail(δ) ≤ ε`.
    pub fn quantile(&self, eps: f64) -> Result<f64, DistError> {
        if !(eps > 0.0 && eps <= 0.5) {
            return Err(DistError::EpsOutOfRange(eps));
        }
        if eps == 0.5 {
            return Ok(0.0);
        }
        if let Density::Laplace { lambda } = self {
            return Ok(lambda * (0.5 / eps).ln());
        }
        let mut hi = 1.0;
        while self.tail(hi)? > eps {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(DistError::Numeric(NumError::NonConvergence("quantile bracket".into())));
            }
        }
        let mut lo = 0.0;
        for _ in 0..300 {
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.tail(mid)? <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }
}

/// Density of `X + Y` for independent `X ~ mu`, `Y ~ nu`.
pub fn convolve(mu: &Density, nu: &Density) -> Result<Density, DistError> {
    mu.validate()?;
    nu.validate()?;
    if let (Density::Gaussian { sigma: a }, Density::Gaussian { sigma: b }) = (mu, nu) {
        return Ok(Density::Gaussian { sigma: a.hypot(*b) });
    }
    let gaussian = |d: &Density| matches!(d, Density::Gaussian { .. });
    if !gaussian(mu) && !gaussian(nu) {
        for d in [mu, nu] {
            if matches!(d, Density::Tabulated { .. } | Density::UnionEnvelope { .. }) {
                let grid = nice::default_grid(d)?;
                let rep = check_nice(d, &grid);
                if !rep.is_nice() {
                    return Err(DistError::NotNice(format!("{rep:?}")));
                }
            }
        }
    }
    Ok(Density::Convolution { left: Box::new(mu.clone()), right: Box::new(nu.clone()) })
}

/// Density whose tail is the pointwise maximum of the members' tails.
pub fn union_envelope(list: &[Density]) -> Result<Density, DistError> {
    if list.is_empty() {
        return Err(DistError::EmptyEnvelope);
    }
    let d = Density::UnionEnvelope { members: list.to_vec() };
    d.validate()?;
    Ok(d)
}

/// Marginal of `√Z·η` for the given mixing law.
pub fn mixture_density(m: MixingLaw) -> Result<Density, DistError> {
    m.validate()?;
    Ok(Density::ScaleMixture { mixing: m })
}

/// Exponent `α` with `∫√(q(x−e)q(x+e))dx = exp(−α eᵀe)` for the spherical
/// Gaussian with per-coordinate variance `var`.
pub fn gaussian_affinity_alpha(var: f64) -> Result<f64, DistError> {
    if !(var > 0.0 && var.is_finite()) {
        return Err(DistError::InvalidParameter(format!("variance must be positive, got {var}")));
    }
    Ok(1.0 / (2.0 * var))
}
