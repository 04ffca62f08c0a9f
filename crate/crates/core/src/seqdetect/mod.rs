//! Sequential detection: calibration of the per-step pairwise tests, the
//! runtime decision rule, performance indexes and color aggregation.

mod calibrate;
mod perf;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geomsep::{feasibility_sup, ConvexSet, GeomError, SignalTemplate};
use crate::linsys::{LinError, ObservationScheme, TrendProblem};
use crate::numkit::matrix::dot;
use crate::numkit::{Matrix, NumError};
use crate::pairtests::{PairError, Potential};
use crate::scalardist::{Density, DistError};

pub use calibrate::{audit, calibrate_scheme1, calibrate_scheme2, AuditReport};
pub use perf::{parity_coloring, perf_index, perf_table, refine_aggregate, refine_trend, PerfCell, PerfIndexTable};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SeqError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("no feasible separation: the required risk bound {required:.3e} is not below 1")]
    NoFeasibleDelta { required: f64 },
    #[error("calibration audit failed: {0}")]
    Audit(String),
    #[error("no aggregation factor in [1, {upper:.6e}] separates every color")]
    NoTheta { upper: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Lin(#[from] LinError),
    #[error(transparent)]
    Pair(#[from] PairError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}

/// Everything calibration needs: the per-step observation maps, the nuisance
/// input set, the signal families and the scalar noise profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionProblem {
    /// `A_k` for steps `1..=K`; `None` marks a step with no usable observation.
    pub maps: Vec<Option<Matrix>>,
    pub nuisance: ConvexSet,
    pub signals: Vec<SignalTemplate>,
    pub gamma: Density,
    /// Upper end of every magnitude search.
    pub r_max: f64,
    /// Candidate shapes `Ĵ_k` per step, 1-based.
    pub candidates: Vec<Vec<usize>>,
}

impl DetectionProblem {
    /// Trend benchmark: step 1 is trivial and `Ĵ_k = {1..2k}` afterwards.
    pub fn from_trend(tp: &TrendProblem) -> Result<Self, SeqError> {
        let d = tp.d();
        let mut maps = vec![None];
        let mut candidates = vec![vec![]];
        for k in 2..=d {
            let step = tp.step(k).ok_or_else(|| SeqError::InvalidArgument(format!("missing step {k}")))?;
            maps.push(Some(step.a.clone()));
            candidates.push((1..=2 * k).collect());
        }
        let signals = (1..=tp.n_shapes()).map(|j| tp.signal(j)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            maps,
            nuisance: ConvexSet::origin(d),
            signals,
            gamma: tp.gamma.clone(),
            r_max: tp.config.r,
            candidates,
        })
    }

    /// General system: every informative time tests every shape.
    pub fn from_scheme(
        scheme: &ObservationScheme,
        horizon: usize,
        nuisance: ConvexSet,
        signals: Vec<SignalTemplate>,
        gamma: Density,
        r_max: f64,
    ) -> Self {
        let all: Vec<usize> = (1..=signals.len()).collect();
        let (maps, candidates) = (1..=horizon)
            .map(|t| match scheme.at_time(t) {
                Some(s) => (Some(s.a.clone()), all.clone()),
                None => (None, vec![]),
            })
            .unzip();
        Self { maps, nuisance, signals, gamma, r_max, candidates }
    }

    pub fn horizon(&self) -> usize {
        self.maps.len()
    }

    pub fn validate(&self) -> Result<(), SeqError> {
        if self.maps.is_empty() {
            return Err(SeqError::InvalidArgument("no steps".into()));
        }
        if self.candidates.len() != self.maps.len() {
            return Err(SeqError::Dimension(format!(
                "{} candidate lists for {} steps",
                self.candidates.len(),
                self.maps.len()
            )));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(SeqError::InvalidArgument(format!("magnitude bound must be positive, got {}", self.r_max)));
        }
        let n = self.signals.len();
        for (k, (map, cand)) in self.maps.iter().zip(&self.candidates).enumerate() {
            if let Some(&j) = cand.iter().find(|&&j| j == 0 || j > n) {
                return Err(SeqError::InvalidArgument(format!("step {}: shape {j} outside 1..={n}", k + 1)));
            }
            if map.is_none() && !cand.is_empty() {
                return Err(SeqError::InvalidArgument(format!("step {} has candidates but no observation", k + 1)));
            }
        }
        Ok(())
    }

    /// `R_j`: largest feasible magnitude of each shape, capped at `r_max`.
    pub fn magnitude_caps(&self) -> Result<Vec<f64>, SeqError> {
        self.signals.iter().map(|s| Ok(feasibility_sup(s, (0.0, self.r_max))?)).collect()
    }
}

/// False-alarm and miss tolerances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Total false-alarm probability over the horizon.
    pub false_alarm: f64,
    /// Miss probability per cell, `ε_kj`.
    pub miss: f64,
    /// Hand budget left unused by inactive shapes on to later steps.
    /// Experimental.
    #[serde(default)]
    pub dynamic_budget: bool,
    /// Fixed `ε_k` for some steps; the remainder of the false-alarm budget
    /// is split uniformly over the tests of the other steps.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub step_budgets: BTreeMap<usize, f64>,
}

impl Tolerances {
    pub fn new(eps: f64) -> Self {
        Self { false_alarm: eps, miss: eps, dynamic_budget: false, step_budgets: BTreeMap::new() }
    }

    pub(crate) fn validate(&self) -> Result<(), SeqError> {
        for (name, v) in [("false-alarm", self.false_alarm), ("miss", self.miss)] {
            if !(v > 0.0 && v < 0.5) {
                return Err(SeqError::InvalidArgument(format!("{name} tolerance must lie in (0, 1/2), got {v}")));
            }
        }
        if let Some((k, v)) = self.step_budgets.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(SeqError::InvalidArgument(format!("budget of step {k} must be positive, got {v}")));
        }
        let fixed: f64 = self.step_budgets.values().sum();
        if fixed > self.false_alarm {
            return Err(SeqError::InvalidArgument(format!(
                "step budgets sum to {fixed}, above the false-alarm tolerance {}",
                self.false_alarm
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Potential-based tests with a risk bound family.
    I,
    /// Shifted affine tests under a common sub-spherical profile.
    II,
}

/// Potential family of the first scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskFamily {
    /// Sign potentials; risk `2√(ε*(1 − ε*))` with `ε* = tail(δ)`.
    Step,
    /// Linear potentials for unit sub-Gaussian noise; risk `exp(−δ²/2)`.
    Linear,
}

impl RiskFamily {
    /// Risk bound `R(δ)`.
    pub fn risk(&self, delta: f64, gamma: &Density) -> Result<f64, SeqError> {
        match self {
            RiskFamily::Step => {
                let e = gamma.tail(delta)?;
                Ok(2.0 * (e * (1.0 - e)).sqrt())
            }
            RiskFamily::Linear => Ok((-0.5 * delta * delta).exp()),
        }
    }

    /// Smallest `δ` with `R(δ) ≤ target`.
    pub fn delta_for_risk(&self, target: f64, gamma: &Density) -> Result<f64, SeqError> {
        if !(target > 0.0 && target < 1.0) {
            return Err(SeqError::NoFeasibleDelta { required: target });
        }
        match self {
            RiskFamily::Step => {
                // 2√(e(1−e)) = r  ⇔  e = (1 − √(1 − r²))/2, written to avoid cancellation.
                let r2 = target * target;
                let e = 0.5 * r2 / (1.0 + (1.0 - r2).sqrt());
                Ok(gamma.quantile(e)?)
            }
            RiskFamily::Linear => Ok((-2.0 * target.ln()).sqrt()),
        }
    }

    pub fn potential(&self, delta: f64, gamma: &Density) -> Result<Potential, SeqError> {
        match self {
            RiskFamily::Step => Ok(Potential::step(gamma.tail(delta)?)?),
            RiskFamily::Linear => Ok(Potential::Linear { slope: delta }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum TestLabel {
    /// One shape `j`, 1-based.
    Shape(usize),
    /// One color class, 0-based.
    Color(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestRule {
    /// Nuisance vote iff `η(hᵀω − c) + α ≥ 0`.
    Potential { potential: Potential, alpha: f64 },
    /// Nuisance vote iff `hᵀω − c ≥ ½(α₂ − α₁)`.
    Shifted { alpha1: f64, alpha2: f64 },
}

/// One pairwise test `nuisance` vs the signal set of `label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTest {
    pub label: TestLabel,
    pub h: Vec<f64>,
    pub c: f64,
    /// Half the distance between the two image sets.
    pub delta: f64,
    pub rule: TestRule,
}

impl PairTest {
    /// `hᵀω − c`
    pub fn affine(&self, omega: &[f64]) -> f64 {
        dot(&self.h, omega) - self.c
    }

    /// Statistic compared against [`PairTest::threshold`].
    pub fn statistic(&self, omega: &[f64]) -> f64 {
        let s = self.affine(omega);
        match self.rule {
            TestRule::Potential { potential, alpha } => potential.eval(s) + alpha,
            TestRule::Shifted { .. } => s,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self.rule {
            TestRule::Potential { .. } => 0.0,
            TestRule::Shifted { alpha1, alpha2 } => 0.5 * (alpha2 - alpha1),
        }
    }

    pub fn votes_nuisance(&self, omega: &[f64]) -> bool {
        self.statistic(omega) >= self.threshold()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepCalibration {
    pub k: usize,
    /// `ε_k`
    pub step_eps: f64,
    /// Per-test false-alarm share used for this step.
    pub base_eps: f64,
    /// `Ĵ_k`
    pub candidates: Vec<usize>,
    /// `ρ_kj` for every shape; equals `R_j` outside `J_k`.
    pub rho: Vec<f64>,
    /// Tests of `J_k` (or of the color classes after aggregation).
    pub tests: Vec<PairTest>,
    /// Uniform aggregation factor, when refined.
    #[serde(default)]
    pub theta: Option<f64>,
    /// Observation dimension.
    pub dim: usize,
}

impl StepCalibration {
    /// `J_k`: shapes with `ρ_kj < R_j`.
    pub fn active(&self, caps: &[f64]) -> Vec<usize> {
        self.rho.iter().zip(caps).enumerate().filter(|(_, (r, cap))| r < cap).map(|(j, _)| j + 1).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scheme: Scheme,
    #[serde(default)]
    pub family: Option<RiskFamily>,
    pub tolerances: Tolerances,
    /// `ε̂`: per-test false-alarm share before any redistribution.
    pub base_eps: f64,
    /// `R_j`
    pub caps: Vec<f64>,
    pub gamma: Density,
    pub steps: Vec<StepCalibration>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Nuisance,
    Signal,
}

/// Verdict of step `k` (1-based) on the observation `ω^k`.
pub fn decide(cal: &Calibration, k: usize, omega: &[f64]) -> Result<Verdict, SeqError> {
    Ok(step_statistics(cal, k, omega)?.0)
}

fn step_statistics(cal: &Calibration, k: usize, omega: &[f64]) -> Result<(Verdict, Vec<f64>), SeqError> {
    let step = k
        .checked_sub(1)
        .and_then(|i| cal.steps.get(i))
        .ok_or_else(|| SeqError::InvalidArgument(format!("step {k} outside 1..={}", cal.steps.len())))?;
    if step.tests.is_empty() {
        return Ok((Verdict::Nuisance, vec![]));
    }
    if omega.len() != step.dim {
        return Err(SeqError::Dimension(format!("step {k} expects {} observations, got {}", step.dim, omega.len())));
    }
    let stats: Vec<f64> = step.tests.iter().map(|t| t.statistic(omega)).collect();
    let nuisance = step.tests.iter().zip(&stats).all(|(t, s)| *s >= t.threshold());
    Ok((if nuisance { Verdict::Nuisance } else { Verdict::Signal }, stats))
}

/// Outcome of running the procedure over the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorRun {
    /// Verdicts of the steps actually taken.
    pub verdicts: Vec<Verdict>,
    /// First step (1-based) with a signal verdict.
    pub first_signal: Option<usize>,
    /// Test statistics per step taken.
    pub statistics: Vec<Vec<f64>>,
}

/// Runs steps `1..` in order and stops at the first signal verdict;
/// `observe(k)` supplies `ω^k` and is not called for steps without tests.
pub fn run<F>(cal: &Calibration, mut observe: F) -> Result<DetectorRun, SeqError>
where
    F: FnMut(usize) -> Result<Vec<f64>, SeqError>,
{
    let mut out = DetectorRun { verdicts: vec![], first_signal: None, statistics: vec![] };
    for (i, step) in cal.steps.iter().enumerate() {
        let k = i + 1;
        let omega = if step.tests.is_empty() { vec![] } else { observe(k)? };
        let (v, stats) = step_statistics(cal, k, &omega)?;
        out.verdicts.push(v);
        out.statistics.push(stats);
        if v == Verdict::Signal {
            out.first_signal = Some(k);
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
