use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LinError, StepMatrices, SystemSpec};
use crate::geomsep::{ConvexSet, SignalTemplate};
use crate::numkit::linalg::{canonical_row_signs, householder_q, inverse, lambda_min, pd_inv_sqrt, psd_sqrt, svd};
use crate::numkit::{min_trace_dominating, Matrix, MinTraceMode};
use crate::scalardist::{convolve, Density, Nu};

const DEGENERATE_CHANNEL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// A single-period bump in the level increment at time `i`.
    Pulse,
    /// A persistent shift of the level increment from time `i` on.
    Step,
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::Pulse => "pulse",
            SignalKind::Step => "step",
        })
    }
}

impl FromStr for SignalKind {
    type Err = LinError;
    fn from_str(s: &str) -> Result<Self, LinError> {
        match s {
            "pulse" => Ok(SignalKind::Pulse),
            "step" => Ok(SignalKind::Step),
            other => Err(LinError::InvalidArgument(format!("unknown signal kind {other:?}"))),
        }
    }
}

/// Random-walk level observed in noise: `y_t = α_t + ζ_t`,
/// `α_t = α_{t−1} + η_t + u_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendConfig {
    pub d: usize,
    pub nu: Nu,
    pub sigma: f64,
    pub kind: SignalKind,
    pub r: f64,
    pub eps: f64,
    #[serde(default)]
    pub omega_mode: MinTraceMode,
}

/// Observation data at time `k ≥ 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendStep {
    pub k: usize,
    /// `F_k`, k × (k−1), orthonormal basis of the zero-mean subspace.
    pub basis: Matrix,
    /// `D_k = F_kᵀ B_k`, response to the level increments.
    pub increment_response: Matrix,
    /// `E_k = F_kᵀ C_k`, response to the measurement noise.
    pub measurement_response: Matrix,
    pub omega: Matrix,
    pub omega_trace: f64,
    pub theta: Matrix,
    pub theta_inv: Matrix,
    /// `A_k = Θ_k^{−1} D_k`
    pub a: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendProblem {
    pub config: TrendConfig,
    /// Marginal law of the whitened noise, Student(ν) ⋆ N(0, σ²).
    pub gamma: Density,
    steps: Vec<TrendStep>,
}

/// Orthonormal basis of the zero-mean subspace of `R^k`, from the Householder
/// QR of `[1 | I]`, with each column's leading entry made positive.
pub fn zero_mean_basis(k: usize) -> Matrix {
    let mut x = Matrix::zeros(k, k + 1);
    for i in 0..k {
        x[(i, 0)] = 1.0;
        x[(i, i + 1)] = 1.0;
    }
    let q = householder_q(&x);
    let mut rows = q.block(0, k, 1, k).transpose();
    canonical_row_signs(&mut rows);
    rows.transpose()
}

/// `B_k`: k × d, row t sums the first t + 1 increments.
fn cumulative(k: usize, d: usize) -> Matrix {
    let mut b = Matrix::zeros(k, d);
    for t in 0..k {
        for s in 0..=t {
            b[(t, s)] = 1.0;
        }
    }
    b
}

/// `C_k = [I_k | 0]`, k × d.
fn leading_identity(k: usize, d: usize) -> Matrix {
    let mut c = Matrix::zeros(k, d);
    for t in 0..k {
        c[(t, t)] = 1.0;
    }
    c
}

pub fn trend_problem(
    d: usize,
    nu: Nu,
    sigma: f64,
    kind: SignalKind,
    r: f64,
    eps: f64,
) -> Result<TrendProblem, LinError> {
    TrendProblem::new(TrendConfig { d, nu, sigma, kind, r, eps, omega_mode: MinTraceMode::default() })
}

impl TrendProblem {
    pub fn new(config: TrendConfig) -> Result<Self, LinError> {
        let TrendConfig { d, nu, sigma, r, eps, omega_mode, .. } = config;
        if d < 2 {
            return Err(LinError::InvalidArgument(format!("horizon must be at least 2, got {d}")));
        }
        if !nu.is_valid() {
            return Err(LinError::InvalidArgument(format!("degrees of freedom must be positive, got {nu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(LinError::InvalidArgument(format!("σ must be positive, got {sigma}")));
        }
        if !(r > 0.0 && r.is_finite()) {
            return Err(LinError::InvalidArgument(format!("magnitude cap must be positive, got {r}")));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(LinError::InvalidArgument(format!("ε must lie in (0, 1/2), got {eps}")));
        }
        let gamma = convolve(&nu.density(), &Density::gaussian(sigma))?;
        let mut steps = Vec::with_capacity(d - 1);
        for k in 2..=d {
            let basis = zero_mean_basis(k);
            let ft = basis.transpose();
            let dk = ft.matmul(&cumulative(k, d));
            let ek = ft.matmul(&leading_identity(k, d));
            let omega = min_trace_dominating(&dk.gram_rows(), &ek.gram_rows(), omega_mode)?;
            let theta = psd_sqrt(&omega)?;
            let lmin = lambda_min(&theta)?;
            if lmin <= 1e-12 {
                return Err(LinError::RankDeficiency { time: k, rank: 0, rows: k - 1 });
            }
            let theta_inv = inverse(&theta)?;
            let a = theta_inv.matmul(&dk);
            let omega_trace = omega.trace();
            steps.push(TrendStep {
                k,
                basis,
                increment_response: dk,
                measurement_response: ek,
                omega,
                omega_trace,
                theta,
                theta_inv,
                a,
            });
        }
        Ok(Self { config, gamma, steps })
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    /// Number of signal shapes, `2d`.
    pub fn n_shapes(&self) -> usize {
        2 * self.config.d
    }

    /// Data for time `k`; `None` for `k = 1`, where everything is masked.
    pub fn step(&self, k: usize) -> Option<&TrendStep> {
        k.checked_sub(2).and_then(|i| self.steps.get(i))
    }

    pub fn steps(&self) -> &[TrendStep] {
        &self.steps
    }

    /// Onset time `i` of shape `j` (1-based): shapes `2i−1` and `2i` start at `i`.
    pub fn onset(j: usize) -> usize {
        j.div_ceil(2)
    }

    /// Unit-magnitude generator of shape `j`; even shapes are the negatives of odd ones.
    pub fn direction(&self, j: usize) -> Result<Vec<f64>, LinError> {
        let d = self.config.d;
        if j == 0 || j > 2 * d {
            return Err(LinError::InvalidArgument(format!("shape {j} outside 1..={}", 2 * d)));
        }
        let i = Self::onset(j) - 1;
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        let mut w = vec![0.0; d];
        match self.config.kind {
            SignalKind::Pulse => w[i] = sign,
            SignalKind::Step => w[i..].iter_mut().for_each(|v| *v = sign),
        }
        Ok(w)
    }

    /// Activation cone `{c·w : c ≥ 1}` of shape `j`.
    pub fn activation(&self, j: usize) -> Result<ConvexSet, LinError> {
        Ok(ConvexSet::RayGenerated { direction: self.direction(j)?, min_scale: 1.0, max_scale: None })
    }

    /// Signals of shape `j` as a magnitude family capped by `|u_t| ≤ R`.
    pub fn signal(&self, j: usize) -> Result<SignalTemplate, LinError> {
        let d = self.config.d;
        let r = self.config.r;
        Ok(SignalTemplate::ray(self.direction(j)?, vec![-r; d], vec![r; d]))
    }

    fn step_or_err(&self, k: usize) -> Result<&TrendStep, LinError> {
        self.step(k).ok_or_else(|| LinError::InvalidArgument(format!("time {k} outside 2..={}", self.config.d)))
    }

    /// `Z_k = Θ_k^{−1} [D_k | E_k]`, acting on `[η; ζ]`.
    pub fn noise_map(&self, k: usize) -> Result<Matrix, LinError> {
        let s = self.step_or_err(k)?;
        Ok(s.theta_inv.matmul(&s.increment_response.hstack(&s.measurement_response)))
    }

    /// `ω^k = A_k u + Θ_k^{−1}(D_k η + E_k ζ)`.
    pub fn observe(&self, k: usize, u: &[f64], eta: &[f64], zeta: &[f64]) -> Result<Vec<f64>, LinError> {
        let d = self.config.d;
        if u.len() != d || eta.len() != d || zeta.len() != d {
            return Err(LinError::Shape(format!("inputs must have length {d}")));
        }
        let s = self.step_or_err(k)?;
        let drive: Vec<f64> = u.iter().zip(eta).map(|(a, b)| a + b).collect();
        let mut z = s.increment_response.matvec(&drive);
        for (zi, ei) in z.iter_mut().zip(s.measurement_response.matvec(zeta)) {
            *zi += ei;
        }
        Ok(s.theta_inv.matvec(&z))
    }

    /// Raw outputs `y_1..y_d` of the level model started at `alpha0`.
    pub fn raw_outputs(&self, alpha0: f64, u: &[f64], eta: &[f64], zeta: &[f64]) -> Vec<f64> {
        let mut level = alpha0;
        (0..self.config.d)
            .map(|t| {
                level += eta[t] + u[t];
                level + zeta[t]
            })
            .collect()
    }

    /// `Θ_k^{−1} F_kᵀ y^k` from raw outputs.
    pub fn observe_raw(&self, k: usize, y: &[f64]) -> Result<Vec<f64>, LinError> {
        let s = self.step_or_err(k)?;
        if y.len() < k {
            return Err(LinError::Shape(format!("need {k} outputs, got {}", y.len())));
        }
        Ok(s.theta_inv.matvec(&s.basis.tmatvec(&y[..k])))
    }

    /// Observation `w^k = (D_k D_kᵀ)^{−1/2} z^k` used by the performance indexes.
    pub fn perf_scheme(&self, k: usize) -> Result<PerfScheme, LinError> {
        let s = self.step_or_err(k)?;
        let root = pd_inv_sqrt(&s.increment_response.gram_rows())?;
        let q = root.matmul(&s.increment_response);
        let sm = root.matmul(&s.measurement_response);
        let sv = svd(&sm)?;
        let top = sv.s.first().copied().unwrap_or(0.0);
        let theta = sv.s.iter().copied().filter(|&v| v > 1e-12 * top.max(1e-300)).fold(f64::INFINITY, f64::min);
        let scaled = theta * self.config.sigma;
        if !(scaled.is_finite() && scaled >= DEGENERATE_CHANNEL) {
            return Err(LinError::DegenerateChannel(if scaled.is_finite() { scaled } else { 0.0 }));
        }
        let gamma = convolve(&self.config.nu.density(), &Density::gaussian(scaled))?;
        Ok(PerfScheme { k, q, s: sm, theta, gamma })
    }
}

/// Whitening by the increment response alone: `Q_k Q_kᵀ = I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfScheme {
    pub k: usize,
    pub q: Matrix,
    pub s: Matrix,
    /// Smallest nonvanishing singular value of `S_k`.
    pub theta: f64,
    /// Student(ν) ⋆ N(0, (θσ)²)
    pub gamma: Density,
}

/// The trend model as a general state-space system with state `α`, input `u`
/// and noise `[η; ζ]` split after the first `d` coordinates.
pub fn trend_system(d: usize) -> SystemSpec {
    let steps = (0..d)
        .map(|t| {
            let mut input_gain = Matrix::zeros(1, d);
            input_gain[(0, t)] = 1.0;
            let mut noise_gain = Matrix::zeros(1, 2 * d);
            noise_gain[(0, t)] = 1.0;
            let mut noise_feedthrough = Matrix::zeros(1, 2 * d);
            noise_feedthrough[(0, d + t)] = 1.0;
            StepMatrices {
                transition: Matrix::identity(1),
                input_gain,
                noise_gain,
                observation: Matrix::identity(1),
                feedthrough: Matrix::zeros(1, d),
                noise_feedthrough,
            }
        })
        .collect();
    SystemSpec { horizon: d, n_x: 1, n_u: d, n_y: 1, n_xi: 2 * d, noise_split: Some(d), steps }
}
