use serde::{Deserialize, Serialize};

use super::{PairError, TestVerdict};
use crate::numkit::matrix::dot;
use crate::numkit::quad::{quad_line, QuadratureSpec};
use crate::numkit::NumError;
use crate::scalardist::{Density, DistError};

const REGULARITY_SAMPLES: usize = 4096;
const REGULARITY_TOL: f64 = 1e-9;

/// Odd nondecreasing function applied to the separator statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    /// `level · sign(s)`, with `sign(0) = 0`.
    Step { level: f64 },
    /// `clamp(s, −delta, delta) / lambda`
    Ramp { delta: f64, lambda: f64 },
    /// `slope · s`
    Linear { slope: f64 },
}

impl Potential {
    /// Step potential with level `½ ln((1 − ε*)/ε*)`.
    pub fn step(eps_star: f64) -> Result<Self, PairError> {
        if !(eps_star > 0.0 && eps_star < 0.5) {
            return Err(PairError::InvalidArgument(format!("ε* must lie in (0, 1/2), got {eps_star}")));
        }
        Ok(Potential::Step { level: 0.5 * ((1.0 - eps_star) / eps_star).ln() })
    }

    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            Potential::Step { level } => {
                if s > 0.0 {
                    level
                } else if s < 0.0 {
                    -level
                } else {
                    0.0
                }
            }
            Potential::Ramp { delta, lambda } => s.clamp(-delta, delta) / lambda,
            Potential::Linear { slope } => slope * s,
        }
    }

    /// Points where the potential is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            Potential::Step { .. } => vec![0.0],
            Potential::Ramp { delta, .. } => vec![-delta, delta],
            Potential::Linear { .. } => vec![],
        }
    }
}

/// Check that `η` is odd, nondecreasing and `δ`-regular, i.e. that
/// `e^{−η(δ−s)} + e^{−η(δ+s)}` is nondecreasing on a sampled ray.
pub fn check_regular(eta: &Potential, delta: f64) -> Result<(), PairError> {
    if !(delta > 0.0) {
        return Err(PairError::InvalidArgument(format!("δ must be positive, got {delta}")));
    }
    let top = 20.0 * delta + 20.0;
    let grid: Vec<f64> = (0..REGULARITY_SAMPLES).map(|i| top * i as f64 / (REGULARITY_SAMPLES - 1) as f64).collect();
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if eta.eval(b) < eta.eval(a) - REGULARITY_TOL || eta.eval(-b) > eta.eval(-a) + REGULARITY_TOL {
            return Err(PairError::NotRegular(format!("decreasing between {a} and {b}")));
        }
    }
    for &s in &grid {
        if (eta.eval(s) + eta.eval(-s)).abs() > REGULARITY_TOL * (1.0 + eta.eval(s).abs()) {
            return Err(PairError::NotRegular(format!("not odd at {s}")));
        }
    }
    let h = |s: f64| (-eta.eval(delta - s)).exp() + (-eta.eval(delta + s)).exp();
    for w in grid.windows(2) {
        let (ha, hb) = (h(w[0]), h(w[1]));
        if hb < ha - REGULARITY_TOL * ha.max(1.0) {
            return Err(PairError::NotRegular(format!("H decreases between {} and {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// `∫ e^{−η(δ+s)} γ(s) ds`, which bounds the δ-risk of a δ-regular potential.
pub fn delta_index(eta: &Potential, delta: f64, gamma: &Density) -> Result<f64, PairError> {
    check_regular(eta, delta)?;
    let breaks: Vec<f64> = eta.kinks().iter().map(|k| k - delta).chain([0.0]).collect();
    let spec = QuadratureSpec::fine();
    let integrand = |s: f64| {
        let p = gamma.pdf(s);
        if p == 0.0 {
            0.0
        } else {
            (-eta.eval(delta + s)).exp() * p
        }
    };
    let v = quad_line(integrand, &breaks, &spec).map_err(|e| PairError::Dist(DistError::Numeric(e)))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PairError::Dist(DistError::Numeric(NumError::NonFinite)))
    }
}

/// Euclidean detector `ω ↦ η(hᵀω − c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub h: Vec<f64>,
    pub c: f64,
    pub potential: Potential,
}

impl Detector {
    pub fn eval(&self, omega: &[f64]) -> f64 {
        self.potential.eval(dot(&self.h, omega) - self.c)
    }
}

/// Accept `H1` iff `Σ_k η_k(h_kᵀω_k − c_k) ≥ threshold`.
pub fn detector_decide(detectors: &[Detector], obs: &[Vec<f64>], threshold: f64) -> Result<TestVerdict, PairError> {
    if detectors.len() != obs.len() {
        return Err(PairError::Dimension(format!("{} detectors for {} observations", detectors.len(), obs.len())));
    }
    // Neumaier summation, so equal and opposite step values cancel exactly.
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for (d, w) in detectors.iter().zip(obs) {
        if d.h.len() != w.len() {
            return Err(PairError::Dimension(format!(
                "observation of length {} for a detector of length {}",
                w.len(),
                d.h.len()
            )));
        }
        let v = d.eval(w);
        let t = total + v;
        carry += if total.abs() >= v.abs() { (total - t) + v } else { (v - t) + total };
        total = t;
    }
    Ok(TestVerdict::from_comparison(total + carry, threshold))
}

/// Product of per-detector risks, accumulated in log space.
pub fn detector_risk_bound(risks: &[f64]) -> f64 {
    if risks.iter().any(|r| *r <= 0.0) {
        return 0.0;
    }
    risks.iter().map(|r| r.ln()).sum::<f64>().exp()
}
