//! Problem-spec file: a JSON document with `system`, `noise`, `budgets` and
//! `solver` sections. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sepdetect::geomsep::{ConvexSet, SignalTemplate};
use sepdetect::linsys::{
    build_observation_scheme, ObservationScheme, SignalKind, SystemSpec, TrendConfig, TrendProblem, Whitening,
};
use sepdetect::numkit::{Matrix, MinTraceMode};
use sepdetect::scalardist::{Density, Nu};
use sepdetect::seqdetect::{DetectionProblem, RiskFamily, Tolerances};
use sepdetect::simlab::NoiseModel;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub system: SystemSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub budgets: Budgets,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSection {
    Trend(TrendShorthand),
    Matrices(MatrixSystem),
}

/// The five-field trend experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendShorthand {
    pub d: usize,
    pub nu: Nu,
    pub sigma: f64,
    pub kind: SignalKind,
    #[serde(rename = "R")]
    pub r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSystem {
    pub system: SystemSpec,
    /// Nuisance input set; the origin when absent.
    #[serde(default)]
    pub nuisance: Option<ConvexSet>,
    pub signals: Vec<SignalTemplate>,
    #[serde(default = "identity_whitening")]
    pub whitening: Whitening,
    /// Used by Monte Carlo runs; zero when absent.
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    /// Upper end of every magnitude search.
    #[serde(rename = "R")]
    pub r: f64,
}

fn identity_whitening() -> Whitening {
    Whitening::IdentityNoise
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Common marginal profile of the whitened noise.
    #[serde(default)]
    pub gamma: Option<Density>,
    /// Vector law of the system noise, sampled by `verify`.
    #[serde(default)]
    pub model: Option<NoiseModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Total false-alarm probability over the horizon.
    pub eps: f64,
    /// Miss probability per cell; `eps` when absent.
    #[serde(default)]
    pub miss_eps: Option<f64>,
    #[serde(default)]
    pub dynamic: bool,
    /// Fixed false-alarm budgets of individual steps.
    #[serde(default)]
    pub steps: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default)]
    pub omega_mode: MinTraceMode,
    /// Risk family of the potential-based scheme.
    #[serde(default)]
    pub family: Option<RiskFamily>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// The system a spec describes, ready for calibration and simulation.
#[derive(Clone, Debug)]
pub enum Model {
    Trend(Box<TrendProblem>),
    System { system: SystemSpec, scheme: ObservationScheme, noise: Option<NoiseModel>, initial_state: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct Loaded {
    pub spec: ProblemSpec,
    pub config_hash: String,
    pub model: Model,
    pub problem: DetectionProblem,
    pub tolerances: Tolerances,
}

impl Loaded {
    /// Outputs per time step.
    pub fn n_y(&self) -> usize {
        match &self.model {
            Model::Trend(_) => 1,
            Model::System { system, .. } => system.n_y,
        }
    }

    /// Map from the stacked raw outputs to the whitened observation of each
    /// step; `None` where the step has no observation.
    pub fn observers(&self) -> Vec<Option<Matrix>> {
        match &self.model {
            Model::Trend(tp) => {
                (1..=tp.d()).map(|k| tp.step(k).map(|s| s.theta_inv.matmul(&s.basis.transpose()))).collect()
            }
            Model::System { system, scheme, .. } => {
                (1..=system.horizon).map(|t| scheme.at_time(t).map(|s| s.whitener.matmul(&s.masking))).collect()
            }
        }
    }

    pub fn trend(&self) -> Option<&TrendProblem> {
        match &self.model {
            Model::Trend(tp) => Some(tp),
            Model::System { .. } => None,
        }
    }
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(spec: &ProblemSpec) -> String {
    let canonical = serde_json::to_vec(spec).expect("spec serializes");
    sha256_hex(&canonical)
}

pub fn read_spec(path: &Path) -> Result<ProblemSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn trend_config(t: &TrendShorthand, eps: f64, omega_mode: MinTraceMode) -> TrendConfig {
    TrendConfig { d: t.d, nu: t.nu, sigma: t.sigma, kind: t.kind, r: t.r, eps, omega_mode }
}

impl ProblemSpec {
    pub fn tolerances(&self) -> Tolerances {
        let b = &self.budgets;
        Tolerances {
            false_alarm: b.eps,
            miss: b.miss_eps.unwrap_or(b.eps),
            dynamic_budget: b.dynamic,
            step_budgets: b.steps.clone(),
        }
    }

    /// Builds the system, its observation scheme and the detection problem.
    pub fn load(self) -> Result<Loaded, CliError> {
        let tolerances = self.tolerances();
        let config_hash = config_hash(&self);
        let (model, problem) = match &self.system {
            SystemSection::Trend(t) => {
                if self.noise != NoiseSection::default() {
                    return Err(CliError::Input(
                        "the trend noise is fixed by nu and sigma; drop the noise section".into(),
                    ));
                }
                let tp = TrendProblem::new(trend_config(t, tolerances.false_alarm, self.solver.omega_mode))?;
                let problem = DetectionProblem::from_trend(&tp)?;
                (Model::Trend(Box::new(tp)), problem)
            }
            SystemSection::Matrices(m) => {
                let gamma = self
                    .noise
                    .gamma
                    .clone()
                    .ok_or_else(|| CliError::Input("noise.gamma is required for a matrix system".into()))?;
                let whitening = match m.whitening {
                    Whitening::MinTraceTheta { .. } => Whitening::MinTraceTheta { mode: self.solver.omega_mode },
                    w => w,
                };
                let scheme = build_observation_scheme(&m.system, whitening)?;
                let nuisance = m.nuisance.clone().unwrap_or_else(|| ConvexSet::origin(m.system.n_u));
                let problem =
                    DetectionProblem::from_scheme(&scheme, m.system.horizon, nuisance, m.signals.clone(), gamma, m.r);
                if let Some(noise) = &self.noise.model {
                    noise.validate().map_err(|e| CliError::Input(e.to_string()))?;
                }
                let initial_state = m.initial_state.clone().unwrap_or_else(|| vec![0.0; m.system.n_x]);
                let model =
                    Model::System { system: m.system.clone(), scheme, noise: self.noise.model.clone(), initial_state };
                (model, problem)
            }
        };
        problem.validate()?;
        Ok(Loaded { spec: self, config_hash, model, problem, tolerances })
    }
}

/// `--seed`, then the `SEED` environment variable, then the problem file, then 0.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, spec: &ProblemSpec) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v.trim().parse().map_err(|_| CliError::Input(format!("SEED must be an unsigned integer, got {v:?}")));
    }
    Ok(spec.solver.seed.unwrap_or(0))
}
