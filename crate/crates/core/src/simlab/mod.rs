//! Noise samplers and the Monte Carlo harness for detection risks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linsys::{LinError, ObservationScheme, SystemSpec, TrendProblem};
use crate::numkit::linalg::{lambda_max, psd_sqrt};
use crate::numkit::{Matrix, NumError};
use crate::scalardist::{DistError, MixingLaw, Nu};
use crate::seqdetect::{run, Calibration, PairTest, SeqError};

const UNIT_BOUND_TOL: f64 = 1e-9;
const PLUMBING_TOL: f64 = 1e-9;
const WILSON_Z: f64 = 1.959963984540054;
/// Words of keystream reserved for one step of one replicate.
const STEP_STRIDE: u128 = 1 << 40;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("whitened and raw observations disagree by {0:.3e}")]
    Plumbing(f64),
    #[error(transparent)]
    Numeric(#[from] NumError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Lin(#[from] LinError),
    #[error(transparent)]
    Seq(#[from] SeqError),
}

/// Vector noise laws `√Z·Θ^{1/2}·g` with `g` standard Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseModel {
    /// `N(0, Σ)`
    GaussianVec { cov: Matrix },
    /// `Z = ν/χ²_ν`, `Θ ⪯ I`.
    StudentVec { nu: f64, theta: Matrix },
    /// `Z` exponential with mean `2λ²`, `Θ ⪯ I`.
    LaplaceVec { lambda: f64, theta: Matrix },
    /// Any mixing law, `Θ ⪯ I`.
    MixtureVec { mixing: MixingLaw, theta: Matrix },
}

impl NoiseModel {
    pub fn gaussian_iso(n: usize, sigma: f64) -> Self {
        NoiseModel::GaussianVec { cov: Matrix::identity(n).scale(sigma * sigma) }
    }

    /// Student with `Θ = I`, or the standard Gaussian when `ν` is infinite.
    pub fn student_iso(n: usize, nu: Nu) -> Self {
        match nu {
            Nu::Finite(nu) => NoiseModel::StudentVec { nu, theta: Matrix::identity(n) },
            Nu::Infinite => NoiseModel::gaussian_iso(n, 1.0),
        }
    }

    fn matrix(&self) -> &Matrix {
        match self {
            NoiseModel::GaussianVec { cov } => cov,
            NoiseModel::StudentVec { theta, .. }
            | NoiseModel::LaplaceVec { theta, .. }
            | NoiseModel::MixtureVec { theta, .. } => theta,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix().rows()
    }

    fn mixing(&self) -> Option<MixingLaw> {
        match self {
            NoiseModel::GaussianVec { .. } => None,
            NoiseModel::StudentVec { nu, .. } => Some(MixingLaw::InverseChiSqScaled { nu: *nu }),
            NoiseModel::LaplaceVec { lambda, .. } => Some(MixingLaw::Exponential { mean: 2.0 * lambda * lambda }),
            NoiseModel::MixtureVec { mixing, .. } => Some(mixing.clone()),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let m = self.matrix();
        if m.rows() != m.cols() || m.rows() == 0 {
            return Err(SimError::InvalidModel(format!("matrix parameter is {:?}", m.shape())));
        }
        if !m.is_finite() || !m.is_symmetric(1e-12 * (1.0 + m.max_abs())) {
            return Err(SimError::InvalidModel("matrix parameter must be finite and symmetric".into()));
        }
        if let Some(law) = self.mixing() {
            law.validate().map_err(|e| SimError::InvalidModel(e.to_string()))?;
            let top = lambda_max(m)?;
            if top > 1.0 + UNIT_BOUND_TOL {
                return Err(SimError::InvalidModel(format!("Θ must satisfy Θ ⪯ I, largest eigenvalue {top}")));
            }
        }
        Ok(())
    }

    /// Precomputes the matrix square root.
    pub fn sampler(&self) -> Result<Sampler, SimError> {
        self.validate()?;
        let root = psd_sqrt(self.matrix()).map_err(|e| match e {
            NumError::Indefinite(l) => SimError::InvalidModel(format!("matrix parameter has eigenvalue {l}")),
            other => other.into(),
        })?;
        let scale = match self.mixing() {
            None => ScaleDraw::One,
            Some(MixingLaw::PointMass { t }) => ScaleDraw::Fixed(t),
            Some(MixingLaw::Exponential { mean }) => {
                ScaleDraw::Exponential(Exp::new(1.0 / mean).map_err(|e| SimError::InvalidModel(e.to_string()))?)
            }
            Some(MixingLaw::InverseChiSqScaled { nu }) => {
                ScaleDraw::InverseChiSq(nu, ChiSquared::new(nu).map_err(|e| SimError::InvalidModel(e.to_string()))?)
            }
        };
        Ok(Sampler { root, scale })
    }
}

#[derive(Clone, Debug)]
enum ScaleDraw {
    One,
    Fixed(f64),
    Exponential(Exp<f64>),
    InverseChiSq(f64, ChiSquared<f64>),
}

#[derive(Clone, Debug)]
pub struct Sampler {
    root: Matrix,
    scale: ScaleDraw,
}

impl Sampler {
    pub fn dim(&self) -> usize {
        self.root.rows()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let g: Vec<f64> = (0..self.dim()).map(|_| StandardNormal.sample(rng)).collect();
        let z = match &self.scale {
            ScaleDraw::One => 1.0,
            ScaleDraw::Fixed(t) => *t,
            ScaleDraw::Exponential(e) => e.sample(rng),
            ScaleDraw::InverseChiSq(nu, c) => nu / c.sample(rng),
        };
        let s = z.sqrt();
        self.root.matvec(&g).into_iter().map(|v| s * v).collect()
    }
}

/// `n` independent draws.
pub fn sample<R: Rng + ?Sized>(model: &NoiseModel, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>, SimError> {
    let s = model.sampler()?;
    Ok((0..n).map(|_| s.draw(rng)).collect())
}

/// Independent keystream for `(seed, replicate, step)`, so results do not
/// depend on how replicates are spread over workers.
pub fn stream(seed: u64, replicate: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);
    rng.set_word_pos(u128::from(step) * STEP_STRIDE);
    rng
}

/// Event count with its Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub events: u64,
    pub trials: u64,
    pub frequency: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Proportion {
    pub fn new(events: u64, trials: u64) -> Self {
        let n = trials.max(1) as f64;
        let p = events as f64 / n;
        let z2 = WILSON_Z * WILSON_Z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        Self {
            events,
            trials,
            frequency: p,
            lower: (centre - half).clamp(0.0, p),
            upper: (centre + half).clamp(p, 1.0),
        }
    }

    /// Whether the frequency is at most `p0` plus `k` binomial standard errors at `p0`.
    pub fn within(&self, p0: f64, k: f64) -> bool {
        self.frequency <= p0 + k * (p0 * (1.0 - p0) / self.trials.max(1) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub replicates: u64,
    pub seed: u64,
    /// Initial level of the trend model; masked by construction.
    #[serde(default)]
    pub initial_level: f64,
    /// Worker threads; `None` uses the global pool.
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl McConfig {
    pub fn new(replicates: u64, seed: u64) -> Self {
        Self { replicates, seed, initial_level: 0.0, jobs: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    /// Which members of the noise families were sampled.
    pub sampled: String,
    pub replicates: u64,
    pub seed: u64,
    /// Signal conclusion anywhere on the horizon.
    pub signal: Proportion,
    /// Replicates whose first signal verdict came at step `k`, indexed by `k − 1`.
    pub first_signal_counts: Vec<u64>,
    /// Largest gap between the whitened shortcut and the raw-output pipeline.
    pub max_plumbing_gap: f64,
}

impl McReport {
    /// No signal conclusion by step `k`.
    pub fn miss_by(&self, k: usize) -> Proportion {
        let detected: u64 = self.first_signal_counts.iter().take(k).sum();
        Proportion::new(self.replicates - detected, self.replicates)
    }
}

/// A simulated system producing raw outputs and the per-step observations
/// derived from them.
pub trait RawModel: Sync {
    type Draw;

    /// Which members of the noise families are sampled.
    fn description(&self) -> String;
    fn horizon(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Noise and raw outputs of one replicate under input `u`.
    fn draw(&self, u: &[f64], rng: &mut ChaCha8Rng) -> Result<Self::Draw, SimError>;
    /// `ω^k` computed from raw outputs, and the same observation assembled
    /// directly from the whitened input and noise maps.
    fn observe(&self, k: usize, u: &[f64], draw: &Self::Draw) -> Result<(Vec<f64>, Vec<f64>), SimError>;
}

/// Trend model with Student increments and Gaussian measurement noise.
pub struct TrendModel<'a> {
    pub problem: &'a TrendProblem,
    pub initial_level: f64,
    increment: Sampler,
    measurement: Sampler,
}

impl<'a> TrendModel<'a> {
    pub fn new(problem: &'a TrendProblem, initial_level: f64) -> Result<Self, SimError> {
        let d = problem.d();
        Ok(Self {
            problem,
            initial_level,
            increment: NoiseModel::student_iso(d, problem.config.nu).sampler()?,
            measurement: NoiseModel::gaussian_iso(d, problem.config.sigma).sampler()?,
        })
    }
}

pub struct TrendDraw {
    eta: Vec<f64>,
    zeta: Vec<f64>,
    y: Vec<f64>,
}

impl RawModel for TrendModel<'_> {
    type Draw = TrendDraw;

    fn description(&self) -> String {
        let c = &self.problem.config;
        format!("increments Student(ν={}, Θ=I), measurements N(0, {}²I)", c.nu, c.sigma)
    }

    fn horizon(&self) -> usize {
        self.problem.d()
    }

    fn input_dim(&self) -> usize {
        self.problem.d()
    }

    fn draw(&self, u: &[f64], rng: &mut ChaCha8Rng) -> Result<TrendDraw, SimError> {
        let eta = self.increment.draw(rng);
        let zeta = self.measurement.draw(rng);
        let y = self.problem.raw_outputs(self.initial_level, u, &eta, &zeta);
        Ok(TrendDraw { eta, zeta, y })
    }

    fn observe(&self, k: usize, u: &[f64], draw: &TrendDraw) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        Ok((self.problem.observe_raw(k, &draw.y)?, self.problem.observe(k, u, &draw.eta, &draw.zeta)?))
    }
}

/// General state-space system observed through its masking scheme.
pub struct SystemModel<'a> {
    pub system: &'a SystemSpec,
    pub scheme: &'a ObservationScheme,
    pub initial_state: Vec<f64>,
    noise: Sampler,
    label: String,
}

impl<'a> SystemModel<'a> {
    pub fn new(
        system: &'a SystemSpec,
        scheme: &'a ObservationScheme,
        noise: &NoiseModel,
        initial_state: Vec<f64>,
    ) -> Result<Self, SimError> {
        if noise.dim() != system.n_xi {
            return Err(SimError::InvalidModel(format!(
                "noise of dimension {} for {} noise inputs",
                noise.dim(),
                system.n_xi
            )));
        }
        if initial_state.len() != system.n_x {
            return Err(SimError::InvalidArgument(format!("initial state of length {}", initial_state.len())));
        }
        Ok(Self { system, scheme, initial_state, noise: noise.sampler()?, label: format!("{noise:?}") })
    }
}

pub struct SystemDraw {
    xi: Vec<f64>,
    y: Vec<f64>,
}

impl RawModel for SystemModel<'_> {
    type Draw = SystemDraw;

    fn description(&self) -> String {
        self.label.clone()
    }

    fn horizon(&self) -> usize {
        self.system.horizon
    }

    fn input_dim(&self) -> usize {
        self.system.n_u
    }

    fn draw(&self, u: &[f64], rng: &mut ChaCha8Rng) -> Result<SystemDraw, SimError> {
        let xi = self.noise.draw(rng);
        let y = self.system.simulate(&self.initial_state, u, &xi)?;
        Ok(SystemDraw { xi, y })
    }

    fn observe(&self, k: usize, u: &[f64], draw: &SystemDraw) -> Result<(Vec<f64>, Vec<f64>), SimError> {
        let step =
            self.scheme.at_time(k).ok_or_else(|| SimError::InvalidArgument(format!("time {k} has no observation")))?;
        let raw = step.whitener.matvec(&step.masking.matvec(&draw.y[..step.masking.cols()]));
        let mut shortcut = step.a.matvec(u);
        for (s, v) in shortcut.iter_mut().zip(step.z.matvec(&draw.xi)) {
            *s += v;
        }
        Ok((raw, shortcut))
    }
}

struct Replicate {
    first_signal: Option<usize>,
    gap: f64,
}

/// Largest disagreement of the test statistics, relative to their size.
fn statistic_gap(tests: &[PairTest], raw: &[f64], shortcut: &[f64]) -> f64 {
    tests
        .iter()
        .map(|t| {
            let (a, b) = (t.affine(raw), t.affine(shortcut));
            (a - b).abs() / (1.0 + a.abs().max(b.abs()))
        })
        .fold(0.0, f64::max)
}

fn replicate<M: RawModel>(model: &M, cal: &Calibration, u: &[f64], seed: u64, r: u64) -> Result<Replicate, SimError> {
    let mut rng = stream(seed, r, 0);
    let draw = model.draw(u, &mut rng)?;
    let mut gap: f64 = 0.0;
    let out = run(cal, |k| {
        let (raw, shortcut) = model.observe(k, u, &draw).map_err(|e| SeqError::InvalidArgument(e.to_string()))?;
        gap = gap.max(statistic_gap(&cal.steps[k - 1].tests, &raw, &shortcut));
        Ok(raw)
    })?;
    Ok(Replicate { first_signal: out.first_signal, gap })
}

/// Frequencies of signal conclusions of the calibrated procedure on `model`
/// driven by input `u`, computed from raw outputs.
pub fn estimate_risks_with<M: RawModel>(
    model: &M,
    cal: &Calibration,
    u: &[f64],
    cfg: &McConfig,
) -> Result<McReport, SimError> {
    let horizon = model.horizon();
    if u.len() != model.input_dim() {
        return Err(SimError::InvalidArgument(format!("input has length {}, expected {}", u.len(), model.input_dim())));
    }
    if cfg.replicates < 100 {
        return Err(SimError::InvalidArgument(format!("need at least 100 replicates, got {}", cfg.replicates)));
    }
    if cal.steps.len() != horizon {
        return Err(SimError::InvalidArgument(format!(
            "calibration covers {} steps, horizon is {horizon}",
            cal.steps.len()
        )));
    }
    let work = || -> Result<Vec<Replicate>, SimError> {
        (0..cfg.replicates).into_par_iter().map(|r| replicate(model, cal, u, cfg.seed, r)).collect()
    };
    let reps = match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SimError::InvalidArgument(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut counts = vec![0u64; horizon];
    let mut gap: f64 = 0.0;
    for rep in &reps {
        if let Some(k) = rep.first_signal {
            counts[k - 1] += 1;
        }
        gap = gap.max(rep.gap);
    }
    if gap > PLUMBING_TOL {
        return Err(SimError::Plumbing(gap));
    }
    let signals: u64 = counts.iter().sum();
    Ok(McReport {
        sampled: model.description(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        signal: Proportion::new(signals, cfg.replicates),
        first_signal_counts: counts,
        max_plumbing_gap: gap,
    })
}

/// [`estimate_risks_with`] on the trend model.
pub fn estimate_risks(tp: &TrendProblem, cal: &Calibration, u: &[f64], cfg: &McConfig) -> Result<McReport, SimError> {
    estimate_risks_with(&TrendModel::new(tp, cfg.initial_level)?, cal, u, cfg)
}

#[cfg(test)]
mod tests;
