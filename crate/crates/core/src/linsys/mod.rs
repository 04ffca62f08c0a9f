//! Discrete-time linear systems: the initial-condition masking basis, the
//! whitened observation scheme derived from it, and the trend example.

mod trend;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::linalg::{inverse, lambda_min, pd_inv_sqrt, psd_sqrt, svd};
use crate::numkit::{min_trace_dominating, orth_complement_rows, Matrix, MinTraceMode, NumError};
use crate::scalardist::DistError;

pub use trend::{
    trend_problem, trend_system, zero_mean_basis, PerfScheme, SignalKind, TrendConfig, TrendProblem, TrendStep,
};

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LinError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("every output is masked by the initial state; all steps are trivial")]
    DegenerateScheme,
    #[error("noise response at time {time} has rank {rank} < {rows}")]
    RankDeficiency { time: usize, rank: usize, rows: usize },
    #[error("degenerate Gaussian channel: θσ = {0:.3e}")]
    DegenerateChannel(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Matrices of one time step of
/// `x_t = P x_{t−1} + Q u + R ξ`, `y_t = C x_t + D u + S ξ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMatrices {
    /// `P_t`, n_x × n_x
    pub transition: Matrix,
    /// `Q_t`, n_x × n_u
    pub input_gain: Matrix,
    /// `R_t`, n_x × n_ξ
    pub noise_gain: Matrix,
    /// `C_t`, n_y × n_x
    pub observation: Matrix,
    /// `D_t`, n_y × n_u
    pub feedthrough: Matrix,
    /// `S_t`, n_y × n_ξ
    pub noise_feedthrough: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub n_xi: usize,
    /// Noise coordinates below this index form the first component and the
    /// rest the second; required for min-trace whitening.
    #[serde(default)]
    pub noise_split: Option<usize>,
    pub steps: Vec<StepMatrices>,
}

/// Stacked responses of `y^t` to the initial state, the input and the noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Responses {
    pub initial: Matrix,
    pub input: Matrix,
    pub noise: Matrix,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<(), LinError> {
        if self.horizon == 0 {
            return Err(LinError::InvalidArgument("horizon must be positive".into()));
        }
        if self.steps.len() != self.horizon {
            return Err(LinError::Shape(format!("{} step matrices for horizon {}", self.steps.len(), self.horizon)));
        }
        let (nx, nu, ny, nxi) = (self.n_x, self.n_u, self.n_y, self.n_xi);
        for (t, s) in self.steps.iter().enumerate() {
            let checks = [
                ("transition", &s.transition, (nx, nx)),
                ("input_gain", &s.input_gain, (nx, nu)),
                ("noise_gain", &s.noise_gain, (nx, nxi)),
                ("observation", &s.observation, (ny, nx)),
                ("feedthrough", &s.feedthrough, (ny, nu)),
                ("noise_feedthrough", &s.noise_feedthrough, (ny, nxi)),
            ];
            for (name, m, shape) in checks {
                if m.shape() != shape {
                    return Err(LinError::Shape(format!(
                        "{name} at time {} is {:?}, expected {shape:?}",
                        t + 1,
                        m.shape()
                    )));
                }
                if !m.is_finite() {
                    return Err(LinError::Numeric(NumError::NonFinite));
                }
            }
        }
        if let Some(s) = self.noise_split {
            if s == 0 || s >= nxi {
                return Err(LinError::InvalidArgument(format!("noise split {s} must lie in 1..{nxi}")));
            }
        }
        Ok(())
    }

    /// Responses of `y^t` for `t = 1..=horizon`.
    pub fn responses(&self) -> Result<Vec<Responses>, LinError> {
        self.validate()?;
        let mut from_init = Matrix::identity(self.n_x);
        let mut from_input = Matrix::zeros(self.n_x, self.n_u);
        let mut from_noise = Matrix::zeros(self.n_x, self.n_xi);
        let mut out: Vec<Responses> = Vec::with_capacity(self.horizon);
        for s in &self.steps {
            from_init = s.transition.matmul(&from_init);
            from_input = s.transition.matmul(&from_input).add(&s.input_gain);
            from_noise = s.transition.matmul(&from_noise).add(&s.noise_gain);
            let rows = Responses {
                initial: s.observation.matmul(&from_init),
                input: s.observation.matmul(&from_input).add(&s.feedthrough),
                noise: s.observation.matmul(&from_noise).add(&s.noise_feedthrough),
            };
            let next = match out.last() {
                None => rows,
                Some(prev) => Responses {
                    initial: prev.initial.vstack(&rows.initial),
                    input: prev.input.vstack(&rows.input),
                    noise: prev.noise.vstack(&rows.noise),
                },
            };
            out.push(next);
        }
        Ok(out)
    }

    /// Stacked outputs `y^horizon` for a given initial state, input and noise.
    pub fn simulate(&self, x0: &[f64], u: &[f64], xi: &[f64]) -> Result<Vec<f64>, LinError> {
        self.validate()?;
        if x0.len() != self.n_x || u.len() != self.n_u || xi.len() != self.n_xi {
            return Err(LinError::Shape("simulation inputs do not match the system dimensions".into()));
        }
        let mut x = x0.to_vec();
        let mut y = Vec::with_capacity(self.horizon * self.n_y);
        for s in &self.steps {
            let px = s.transition.matvec(&x);
            let qu = s.input_gain.matvec(u);
            let rxi = s.noise_gain.matvec(xi);
            x = (0..self.n_x).map(|i| px[i] + qu[i] + rxi[i]).collect();
            let cx = s.observation.matvec(&x);
            let du = s.feedthrough.matvec(u);
            let sxi = s.noise_feedthrough.matvec(xi);
            y.extend((0..self.n_y).map(|i| cx[i] + du[i] + sxi[i]));
        }
        Ok(y)
    }
}

/// `M_t`: orthonormal rows annihilating every noiseless zero-input output
/// trajectory `y^t`.
pub fn masking_basis(spec: &SystemSpec, t: usize) -> Result<Matrix, LinError> {
    if t == 0 || t > spec.horizon {
        return Err(LinError::InvalidArgument(format!("time {t} outside 1..={}", spec.horizon)));
    }
    let resp = spec.responses()?;
    Ok(orth_complement_rows(&resp[t - 1].initial)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Whitening {
    /// `L_k = (B̄_k B̄_kᵀ)^{−1/2}`, so that `Z_k Z_kᵀ = I`.
    IdentityNoise,
    /// `L_k = Θ_k^{−1}` with `Θ_k² ⪰ D_k D_kᵀ, E_k E_kᵀ` for the two noise components.
    MinTraceTheta {
        #[serde(default)]
        mode: MinTraceMode,
    },
}

/// Data of one informative step `k`, observed at time `κ + k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeStep {
    pub time: usize,
    pub m: usize,
    pub masking: Matrix,
    pub a_bar: Matrix,
    pub b_bar: Matrix,
    pub whitener: Matrix,
    /// `Θ_k` in min-trace mode.
    pub theta: Option<Matrix>,
    pub a: Matrix,
    pub z: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationScheme {
    /// Number of leading times whose outputs are fully masked.
    pub kappa: usize,
    pub steps: Vec<SchemeStep>,
}

impl ObservationScheme {
    /// Step for time `t`, if that time is informative.
    pub fn at_time(&self, t: usize) -> Option<&SchemeStep> {
        t.checked_sub(self.kappa + 1).and_then(|k| self.steps.get(k))
    }

    /// `ω^k = L_k M_t y^t` from the stacked raw outputs `y^t` (or longer).
    pub fn observe(&self, k: usize, y: &[f64]) -> Result<Vec<f64>, LinError> {
        let step =
            self.steps.get(k.wrapping_sub(1)).ok_or_else(|| LinError::InvalidArgument(format!("no step {k}")))?;
        let cols = step.masking.cols();
        if y.len() < cols {
            return Err(LinError::Shape(format!("need {cols} outputs, got {}", y.len())));
        }
        Ok(step.whitener.matvec(&step.masking.matvec(&y[..cols])))
    }
}

fn rank(m: &Matrix) -> Result<usize, LinError> {
    let s = svd(m)?;
    Ok(s.rank(RANK_TOL))
}

pub fn build_observation_scheme(spec: &SystemSpec, whitening: Whitening) -> Result<ObservationScheme, LinError> {
    let resp = spec.responses()?;
    let split = match whitening {
        Whitening::IdentityNoise => None,
        Whitening::MinTraceTheta { .. } => Some(
            spec.noise_split
                .ok_or_else(|| LinError::InvalidArgument("min-trace whitening needs a noise split".into()))?,
        ),
    };
    let mut kappa = None;
    let mut steps = Vec::new();
    for (idx, r) in resp.iter().enumerate() {
        let time = idx + 1;
        let masking = orth_complement_rows(&r.initial)?;
        let m = masking.rows();
        if m == 0 {
            continue;
        }
        kappa.get_or_insert(time - 1);
        let a_bar = masking.matmul(&r.input);
        let b_bar = masking.matmul(&r.noise);
        let rk = rank(&b_bar)?;
        if rk < m {
            return Err(LinError::RankDeficiency { time, rank: rk, rows: m });
        }
        let (whitener, theta) = match (whitening, split) {
            (Whitening::MinTraceTheta { mode }, Some(s)) => {
                let first = b_bar.block(0, m, 0, s);
                let second = b_bar.block(0, m, s, spec.n_xi);
                let omega = min_trace_dominating(&first.gram_rows(), &second.gram_rows(), mode)?;
                let theta = psd_sqrt(&omega)?;
                if lambda_min(&theta)? <= 1e-12 {
                    return Err(LinError::RankDeficiency { time, rank: rk, rows: m });
                }
                (inverse(&theta)?, Some(theta))
            }
            _ => (pd_inv_sqrt(&b_bar.gram_rows())?, None),
        };
        let a = whitener.matmul(&a_bar);
        let z = whitener.matmul(&b_bar);
        steps.push(SchemeStep { time, m, masking, a_bar, b_bar, whitener, theta, a, z });
    }
    let kappa = kappa.ok_or(LinError::DegenerateScheme)?;
    Ok(ObservationScheme { kappa, steps })
}
