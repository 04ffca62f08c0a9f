//! Pairwise tests built on a Euclidean separator and their risk calculus:
//! the single-observation test, majority tests, potential-based detectors
//! and majority-of-means.

mod mm;
mod potential;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomsep::SeparatorCert;
use crate::numkit::matrix::dot;
use crate::scalardist::{Density, DistError};

pub use mm::{block_means, mm_decide, mm_params, MmParams};
pub use potential::{check_regular, delta_index, detector_decide, detector_risk_bound, Detector, Potential};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PairError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("threshold budget violated: α1 + α2 = {sum} > 2δ = {twice_delta}")]
    Budget { sum: f64, twice_delta: f64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("potential is not δ-regular: {0}")]
    NotRegular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    H1,
    H2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub accepted: Hypothesis,
    pub statistic: f64,
    pub threshold: f64,
}

impl TestVerdict {
    /// `H1` when `statistic ≥ threshold`.
    pub fn from_comparison(statistic: f64, threshold: f64) -> Self {
        let accepted = if statistic >= threshold { Hypothesis::H1 } else { Hypothesis::H2 };
        Self { accepted, statistic, threshold }
    }
}

/// Partial risks and their maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBudget {
    pub eps1: f64,
    pub eps2: f64,
    pub eps: f64,
}

impl RiskBudget {
    pub fn new(eps1: f64, eps2: f64) -> Self {
        Self { eps1, eps2, eps: eps1.max(eps2) }
    }
}

/// Accept `H1` iff `h*ᵀω − c* ≥ shift`.
pub fn single_decide(cert: &SeparatorCert, omega: &[f64], shift: f64) -> Result<TestVerdict, PairError> {
    if omega.len() != cert.h_star.len() {
        return Err(PairError::Dimension(format!(
            "observation of length {} for a separator in dimension {}",
            omega.len(),
            cert.h_star.len()
        )));
    }
    Ok(TestVerdict::from_comparison(dot(&cert.h_star, omega) - cert.c_star, shift))
}

/// Partial risks `(P_γ(α1), P_γ(α2))` of the shifted single-observation test.
pub fn single_risk_bounds(gamma: &Density, delta: f64, alpha1: f64, alpha2: f64) -> Result<RiskBudget, PairError> {
    if !(alpha1 >= 0.0 && alpha2 >= 0.0) {
        return Err(PairError::InvalidArgument(format!("thresholds must be nonnegative: {alpha1}, {alpha2}")));
    }
    if alpha1 + alpha2 > 2.0 * delta * (1.0 + 1e-12) {
        return Err(PairError::Budget { sum: alpha1 + alpha2, twice_delta: 2.0 * delta });
    }
    Ok(RiskBudget::new(gamma.tail(alpha1)?, gamma.tail(alpha2)?))
}

/// Accept `H1` iff at least `K/2` of the per-step statistics are nonnegative.
pub fn majority_decide(certs: &[SeparatorCert], obs: &[Vec<f64>]) -> Result<TestVerdict, PairError> {
    if certs.is_empty() || certs.len() != obs.len() {
        return Err(PairError::Dimension(format!("{} separators for {} observations", certs.len(), obs.len())));
    }
    let mut count = 0usize;
    for (c, w) in certs.iter().zip(obs) {
        if single_decide(c, w, 0.0)?.accepted == Hypothesis::H1 {
            count += 1;
        }
    }
    Ok(TestVerdict::from_comparison(count as f64, 0.5 * certs.len() as f64))
}

fn ln_choose(n: usize, k: usize) -> f64 {
    use crate::numkit::special::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `P(Bin(K, ε*) ≥ K/2)`, summed in log space.
pub fn majority_bound_stationary(eps_star: f64, k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if eps_star <= 0.0 {
        return 0.0;
    }
    let first = k.div_ceil(2);
    let (le, lq) = (eps_star.ln(), (-eps_star).ln_1p());
    let terms: Vec<f64> = (first..=k).map(|j| ln_choose(k, j) + j as f64 * le + (k - j) as f64 * lq).collect();
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()).exp().min(1.0)
}

/// Probability of at least `K/2` successes in independent trials with the
/// given success probabilities, by the forward recursion over trials.
pub fn majority_bound_semistationary(eps: &[f64]) -> f64 {
    let k = eps.len();
    let mut p = vec![0.0; k + 1];
    p[0] = 1.0;
    for (t, &e) in eps.iter().enumerate() {
        for j in (0..=t + 1).rev() {
            let stay = if j <= t { (1.0 - e) * p[j] } else { 0.0 };
            let up = if j > 0 { e * p[j - 1] } else { 0.0 };
            p[j] = stay + up;
        }
    }
    p[k.div_ceil(2)..].iter().sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearOptimality {
    /// Sample size sufficient for the majority test.
    pub k_upper: u64,
    /// Sample size necessary for any test.
    pub k_lower: f64,
    pub theta: f64,
}

/// Smallest integer not below `x`, forgiving roundoff just above an integer.
pub(crate) fn ceil_tol(x: f64) -> u64 {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as u64
}

/// Sufficient and necessary observation counts for risk `eps` at half-distance
/// `delta`, given the affinity exponent `alpha`, the slope bound `beta` of the
/// central mass and the range `d_bar` where both hold.
pub fn near_optimality(eps: f64, delta: f64, alpha: f64, beta: f64, d_bar: f64) -> Result<NearOptimality, PairError> {
    if !(eps > 0.0 && eps < 0.2) {
        return Err(PairError::Precondition(format!("need 0 < ε < 1/5, got {eps}")));
    }
    if !(alpha > 0.0 && beta > 0.0 && delta > 0.0 && d_bar > 0.0) {
        return Err(PairError::Precondition("α, β, δ and d̄ must be positive".into()));
    }
    if beta * d_bar > 0.5 {
        return Err(PairError::Precondition(format!("need β·d̄ ≤ 1/2, got {}", beta * d_bar)));
    }
    if delta > d_bar {
        return Err(PairError::Precondition(format!("need δ ≤ d̄, got δ = {delta} > {d_bar}")));
    }
    let k_upper = ceil_tol((1.0 / eps).ln() / (2.0 * beta * beta * delta * delta));
    let k_lower = (0.25 / eps).ln() / (2.0 * alpha * delta * delta);
    Ok(NearOptimality { k_upper, k_lower, theta: k_upper as f64 / k_lower })
}

/// Risk bound `exp(−δ²/2)` of the linear potential on the sub-Gaussian family.
pub fn subgaussian_risk(delta: f64) -> f64 {
    (-0.5 * delta * delta).exp()
}

/// `⌈ln(1/ε) / ln(1/r)⌉` observations for per-observation risk `r`.
pub fn sample_size_for_risk(per_obs_risk: f64, eps: f64) -> Result<u64, PairError> {
    if !(per_obs_risk > 0.0 && per_obs_risk < 1.0) {
        return Err(PairError::InvalidArgument(format!("per-observation risk must lie in (0, 1), got {per_obs_risk}")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(PairError::InvalidArgument(format!("target risk must lie in (0, 1), got {eps}")));
    }
    Ok(ceil_tol(eps.ln() / per_obs_risk.ln()).max(1))
}
