//! The four subcommands, as library functions returning what they wrote.

use std::io::Write;
use std::path::{Path, PathBuf};

use sepdetect::geomsep::{ConvexSet, SignalTemplate};
use sepdetect::linsys::TrendProblem;
use sepdetect::numkit::MinTraceMode;
use sepdetect::scalardist::Nu;
use sepdetect::seqdetect::{
    audit, calibrate_scheme1, calibrate_scheme2, perf_table, refine_trend, run, Calibration, DetectionProblem,
    PerfIndexTable, RiskFamily, SeqError, TestLabel, TestRule, Tolerances, Verdict,
};
use sepdetect::simlab::{estimate_risks_with, McConfig, RawModel, SystemModel, TrendModel};

use crate::bundle::{
    csv_bytes, json_bytes, read_json, CalibrationBundle, MonteCarloRow, NuCellRow, OutDir, RefineRow, SweepRow,
    ThresholdRow, CALIBRATION_FILE, MONTE_CARLO_FILE, THRESHOLDS_FILE,
};
use crate::spec::{read_spec, trend_config, Loaded, Model, SystemSection, TrendShorthand};
use crate::CliError;

/// Degrees of freedom covered by the figure tables.
pub const FIGURE_NUS: [Nu; 5] = [Nu::Finite(1.0), Nu::Finite(2.0), Nu::Finite(3.0), Nu::Finite(6.0), Nu::Infinite];
pub const SWEEP_SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const SWEEP_EPS: [f64; 3] = [0.001, 0.01, 0.05];
/// Relative excess over `ρ_kj` at which misses are simulated.
pub const MISS_MARGIN: f64 = 1e-4;

fn calibrate_loaded(loaded: &Loaded, scheme: u8) -> Result<Calibration, CliError> {
    let tol = &loaded.tolerances;
    match scheme {
        1 => {
            let family = loaded.spec.solver.family.unwrap_or(RiskFamily::Step);
            Ok(calibrate_scheme1(&loaded.problem, family, tol)?)
        }
        2 => Ok(calibrate_scheme2(&loaded.problem, tol)?),
        s => Err(CliError::Input(format!("scheme must be 1 or 2, got {s}"))),
    }
}

fn below(v: f64, cap: f64) -> Option<f64> {
    (v < cap).then_some(v)
}

pub fn threshold_rows(cal: &Calibration, perf: Option<&PerfIndexTable>) -> Vec<ThresholdRow> {
    let mut rows = vec![];
    for step in &cal.steps {
        for (idx, cap) in cal.caps.iter().enumerate() {
            let j = idx + 1;
            let cell = perf.and_then(|t| t.cell(step.k, j));
            let test = step.tests.iter().find(|t| t.label == TestLabel::Shape(j));
            let (alpha1, alpha2) = match test.map(|t| t.rule) {
                Some(TestRule::Shifted { alpha1, alpha2 }) => (Some(alpha1), Some(alpha2)),
                Some(TestRule::Potential { alpha, .. }) => (Some(alpha), None),
                None => (None, None),
            };
            rows.push(ThresholdRow {
                k: step.k,
                j,
                rho_kj: below(step.rho[idx], *cap),
                rho_star_kj: cell.and_then(|c| c.rho_star),
                index: cell.and_then(|c| c.index),
                alpha1,
                alpha2,
                delta: test.map(|t| t.delta),
            });
        }
    }
    rows
}

pub struct CalibrateOutput {
    pub calibration: PathBuf,
    pub thresholds: PathBuf,
    pub manifest: PathBuf,
    pub active_cells: usize,
}

pub fn calibrate(spec_path: &Path, scheme: u8, out: &Path, seed: u64) -> Result<CalibrateOutput, CliError> {
    let loaded = read_spec(spec_path)?.load()?;
    let cal = calibrate_loaded(&loaded, scheme)?;
    let perf = match loaded.trend() {
        Some(tp) => Some(perf_table(tp, &cal)?),
        None => None,
    };
    let rows = threshold_rows(&cal, perf.as_ref());
    let active_cells = rows.iter().filter(|r| r.rho_kj.is_some()).count();
    let bundle = CalibrationBundle {
        version: crate::VERSION.to_string(),
        config_hash: loaded.config_hash.clone(),
        n_y: loaded.n_y(),
        observers: loaded.observers(),
        calibration: cal,
    };
    let mut dir = OutDir::create(out)?;
    let calibration = dir.write(CALIBRATION_FILE, &json_bytes(&bundle))?;
    let thresholds = dir.write(THRESHOLDS_FILE, &csv_bytes(&rows)?)?;
    let manifest = dir.finish("calibrate", &loaded.config_hash, seed)?;
    Ok(CalibrateOutput { calibration, thresholds, manifest, active_cells })
}

/// Reads one row of `n_y` outputs per time step; blank lines and `#`
/// comments are skipped.
pub fn read_observations(path: &Path, n_y: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows = vec![];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != n_y {
            return Err(CliError::Input(format!(
                "observation row {} has {} values, expected {n_y}",
                line + 1,
                rec.len()
            )));
        }
        let row = rec
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| CliError::Input(format!("observation row {} is not numeric", line + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FinalVerdict {
    pub step: usize,
    pub verdict: Verdict,
}

/// Runs the calibrated procedure on recorded outputs, writing one line per
/// step taken and a final JSON line.
pub fn detect(cal_path: &Path, obs_path: &Path, out: &mut impl Write) -> Result<FinalVerdict, CliError> {
    let bundle: CalibrationBundle = read_json(cal_path)?;
    let horizon = bundle.calibration.steps.len();
    if bundle.observers.len() != horizon {
        return Err(CliError::Input(format!("{} observers for {horizon} steps", bundle.observers.len())));
    }
    let rows = read_observations(obs_path, bundle.n_y)?;
    if rows.len() < horizon {
        return Err(CliError::Input(format!("{} observation rows for a horizon of {horizon}", rows.len())));
    }
    let y: Vec<f64> = rows.concat();
    let result = run(&bundle.calibration, |k| {
        let map = bundle.observers[k - 1]
            .as_ref()
            .ok_or_else(|| SeqError::InvalidArgument(format!("step {k} has tests but no observer")))?;
        if map.cols() > y.len() {
            return Err(SeqError::Dimension(format!("step {k} reads {} outputs", map.cols())));
        }
        Ok(map.matvec(&y[..map.cols()]))
    })?;
    let io = |e| CliError::io(obs_path, e);
    for (i, v) in result.verdicts.iter().enumerate() {
        let k = i + 1;
        let tests = bundle.calibration.steps[i].tests.len();
        let name = match v {
            Verdict::Nuisance => "nuisance",
            Verdict::Signal => "signal",
        };
        writeln!(out, "step {k}: {name} ({tests} tests)").map_err(io)?;
    }
    let last = FinalVerdict {
        step: result.first_signal.unwrap_or(horizon),
        verdict: if result.first_signal.is_some() { Verdict::Signal } else { Verdict::Nuisance },
    };
    writeln!(out, "{}", serde_json::to_string(&last).expect("verdict serializes")).map_err(io)?;
    Ok(last)
}

/// The point of a ray signal at magnitude `rho`; `None` for other shapes.
fn ray_point(signal: &SignalTemplate, rho: f64) -> Option<Vec<f64>> {
    match (&signal.drag, &signal.shape) {
        (drag, ConvexSet::RayGenerated { direction, min_scale, .. }) if drag.is_origin() => {
            Some(direction.iter().map(|v| v * rho * min_scale).collect())
        }
        _ => None,
    }
}

fn monte_carlo_rows<M: RawModel>(
    model: &M,
    problem: &DetectionProblem,
    cal: &Calibration,
    cfg: &McConfig,
    log: &mut impl Write,
) -> Result<Vec<MonteCarloRow>, CliError> {
    let horizon = cal.steps.len();
    let zero = vec![0.0; model.input_dim()];
    let fa = estimate_risks_with(model, cal, &zero, cfg)?;
    let mut rows = vec![MonteCarloRow {
        event: "false_alarm".into(),
        k: horizon,
        j: None,
        magnitude: None,
        events: fa.signal.events,
        trials: fa.signal.trials,
        frequency: fa.signal.frequency,
        lower: fa.signal.lower,
        upper: fa.signal.upper,
        target: cal.tolerances.false_alarm,
        within_3se: fa.signal.within(cal.tolerances.false_alarm, 3.0),
    }];
    for step in &cal.steps {
        for t in &step.tests {
            let TestLabel::Shape(j) = t.label else { continue };
            let rho = (step.rho[j - 1] * (1.0 + MISS_MARGIN)).min(cal.caps[j - 1]);
            let Some(u) = ray_point(&problem.signals[j - 1], rho) else {
                let _ = writeln!(log, "skipping cell ({}, {j}): signal shape is not a ray", step.k);
                continue;
            };
            let rep = estimate_risks_with(model, cal, &u, cfg)?;
            let miss = rep.miss_by(step.k);
            rows.push(MonteCarloRow {
                event: "miss".into(),
                k: step.k,
                j: Some(j),
                magnitude: Some(rho),
                events: miss.events,
                trials: miss.trials,
                frequency: miss.frequency,
                lower: miss.lower,
                upper: miss.upper,
                target: cal.tolerances.miss,
                within_3se: miss.within(cal.tolerances.miss, 3.0),
            });
        }
    }
    Ok(rows)
}

pub struct VerifyOptions {
    pub replicates: u64,
    pub seed: u64,
    pub jobs: Option<usize>,
}

pub fn verify(
    spec_path: &Path,
    cal_path: &Path,
    opts: &VerifyOptions,
    out: &Path,
    log: &mut impl Write,
) -> Result<Vec<MonteCarloRow>, CliError> {
    let loaded = read_spec(spec_path)?.load()?;
    let bundle: CalibrationBundle = read_json(cal_path)?;
    if bundle.config_hash != loaded.config_hash {
        return Err(CliError::Provenance(format!(
            "calibration was made from config {} but the problem file hashes to {}",
            bundle.config_hash, loaded.config_hash
        )));
    }
    let cal = &bundle.calibration;
    audit(&loaded.problem, cal)?.into_result()?;
    let cfg = McConfig { replicates: opts.replicates, seed: opts.seed, initial_level: 0.0, jobs: opts.jobs };
    let rows = match &loaded.model {
        Model::Trend(tp) => monte_carlo_rows(&TrendModel::new(tp, 0.0)?, &loaded.problem, cal, &cfg, log)?,
        Model::System { system, scheme, noise, initial_state } => {
            let noise = noise
                .as_ref()
                .ok_or_else(|| CliError::Input("noise.model is required to simulate a matrix system".into()))?;
            let model = SystemModel::new(system, scheme, noise, initial_state.clone())?;
            monte_carlo_rows(&model, &loaded.problem, cal, &cfg, log)?
        }
    };
    let mut dir = OutDir::create(out)?;
    dir.write(MONTE_CARLO_FILE, &csv_bytes(&rows)?)?;
    dir.finish("verify", &loaded.config_hash, opts.seed)?;
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Thresholds,
    Indexes,
    EpsSigmaSweep,
    RefineCompare,
}

impl Figure {
    pub fn file_name(self) -> &'static str {
        match self {
            Figure::Thresholds => "thresholds_by_nu.csv",
            Figure::Indexes => "indexes_by_nu.csv",
            Figure::EpsSigmaSweep => "eps_sigma_sweep.csv",
            Figure::RefineCompare => "refine_compare.csv",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Figure::Thresholds => "thresholds",
            Figure::Indexes => "indexes",
            Figure::EpsSigmaSweep => "eps-sigma-sweep",
            Figure::RefineCompare => "refine-compare",
        }
    }
}

/// Trend calibration (shifted tests) with its performance table.
pub fn trend_cell_table(
    base: &TrendShorthand,
    eps: f64,
    mode: MinTraceMode,
) -> Result<(TrendProblem, Calibration, PerfIndexTable), CliError> {
    let tp = TrendProblem::new(trend_config(base, eps, mode))?;
    let cal = calibrate_scheme2(&DetectionProblem::from_trend(&tp)?, &Tolerances::new(eps))?;
    let table = perf_table(&tp, &cal)?;
    Ok((tp, cal, table))
}

/// Cells of odd shapes, indexed by onset `i`; even shapes mirror them.
fn onset_cells(
    d: usize,
    table: &PerfIndexTable,
) -> impl Iterator<Item = (usize, usize, Option<f64>, Option<f64>, Option<f64>)> + '_ {
    (1..=d).flat_map(move |k| {
        (1..=d).map(move |i| {
            let c = table.cell(k, 2 * i - 1);
            (k, i, c.and_then(|c| c.rho), c.and_then(|c| c.rho_star), c.and_then(|c| c.index))
        })
    })
}

pub fn figure_bytes(spec_path: &Path, which: Figure) -> Result<(String, Vec<u8>), CliError> {
    let spec = read_spec(spec_path)?;
    let hash = crate::spec::config_hash(&spec);
    let SystemSection::Trend(base) = &spec.system else {
        return Err(CliError::Input("figures need the trend shorthand".into()));
    };
    let eps = spec.budgets.eps;
    let mode = spec.solver.omega_mode;
    let bytes = match which {
        Figure::Thresholds | Figure::Indexes => {
            let mut rows = vec![];
            for nu in FIGURE_NUS {
                let (_, _, table) = trend_cell_table(&TrendShorthand { nu, ..base.clone() }, eps, mode)?;
                rows.extend(
                    onset_cells(base.d, &table).filter(|c| which == Figure::Thresholds || c.4.is_some()).map(
                        |(k, i, rho, rho_star, index)| NuCellRow { nu: nu.to_string(), k, i, rho, rho_star, index },
                    ),
                );
            }
            csv_bytes(&rows)?
        }
        Figure::EpsSigmaSweep => {
            let mut rows = vec![];
            for sigma in SWEEP_SIGMAS {
                for e in SWEEP_EPS {
                    let (_, _, table) = trend_cell_table(&TrendShorthand { sigma, ..base.clone() }, e, mode)?;
                    rows.extend(onset_cells(base.d, &table).map(|(k, i, rho, rho_star, index)| SweepRow {
                        sigma,
                        eps: e,
                        k,
                        i,
                        rho,
                        rho_star,
                        index,
                    }));
                }
            }
            csv_bytes(&rows)?
        }
        Figure::RefineCompare => {
            let mut rows = vec![];
            for nu in FIGURE_NUS {
                let (tp, cal, table) = trend_cell_table(&TrendShorthand { nu, ..base.clone() }, eps, mode)?;
                let refined = match refine_trend(&tp, &cal) {
                    Ok(r) => Some(r),
                    Err(SeqError::NoTheta { .. }) => None,
                    Err(e) => return Err(e.into()),
                };
                for k in 2..=base.d {
                    let theta = refined.as_ref().and_then(|r| r.steps[k - 1].theta);
                    rows.push(RefineRow { nu: nu.to_string(), k, worst_index: table.worst(k), theta });
                }
            }
            csv_bytes(&rows)?
        }
    };
    Ok((hash, bytes))
}

pub fn figures(spec_path: &Path, which: Figure, out: &Path, seed: u64) -> Result<PathBuf, CliError> {
    let (hash, bytes) = figure_bytes(spec_path, which)?;
    let mut dir = OutDir::create(out)?;
    let path = dir.write(which.file_name(), &bytes)?;
    dir.finish(&format!("figures-{}", which.name()), &hash, seed)?;
    Ok(path)
}
