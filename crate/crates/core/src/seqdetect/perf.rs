use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Calibration, DetectionProblem, PairTest, Scheme, SeqError, TestLabel, TestRule};
use crate::geomsep::{min_distance, opt_kj, rho_for_delta, ConvexSet, GeomError, SeparatorCert};
use crate::linsys::TrendProblem;
use crate::numkit::{first_true, Matrix};
use crate::scalardist::Density;

const THETA_REL_TOL: f64 = 1e-9;

fn lower_bound(q: &Matrix, gamma: &Density, tp: &TrendProblem, eps: f64, j: usize) -> Result<f64, SeqError> {
    let r = tp.config.r;
    let origin = ConvexSet::origin(tp.d());
    let signal = tp.signal(j)?;
    let target = gamma.quantile(eps)?;
    if opt_kj(q, &origin, &signal, r)? < target {
        return Ok(r);
    }
    Ok(rho_for_delta(q, &origin, &signal, target, r)?)
}

/// `ρ*_kj`: smallest magnitude any test of risk `ε` could detect at step `k`
/// from the increment-whitened observation; `R` when none can.
pub fn perf_index(tp: &TrendProblem, eps: f64, k: usize, j: usize) -> Result<f64, SeqError> {
    if j == 0 || j > tp.n_shapes() {
        return Err(SeqError::InvalidArgument(format!("shape {j} outside 1..={}", tp.n_shapes())));
    }
    if k <= 1 {
        return Ok(tp.config.r);
    }
    let ps = tp.perf_scheme(k)?;
    lower_bound(&ps.q, &ps.gamma, tp, eps, j)
}

/// One `(k, j)` cell; `None` marks a magnitude that reached the cap `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfCell {
    pub k: usize,
    pub j: usize,
    pub rho_star: Option<f64>,
    pub rho: Option<f64>,
    /// `ρ_kj / ρ*_kj` when both are finite.
    pub index: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfIndexTable {
    pub cap: f64,
    pub cells: Vec<PerfCell>,
}

impl PerfIndexTable {
    pub fn cell(&self, k: usize, j: usize) -> Option<&PerfCell> {
        self.cells.iter().find(|c| c.k == k && c.j == j)
    }

    /// Largest index at step `k`.
    pub fn worst(&self, k: usize) -> Option<f64> {
        self.cells.iter().filter(|c| c.k == k).filter_map(|c| c.index).reduce(f64::max)
    }
}

fn below_cap(v: f64, cap: f64) -> Option<f64> {
    (v < cap).then_some(v)
}

/// Lower bounds `ρ*_kj` for every cell, paired with the thresholds of `cal`.
pub fn perf_table(tp: &TrendProblem, cal: &Calibration) -> Result<PerfIndexTable, SeqError> {
    let r = tp.config.r;
    let n = tp.n_shapes();
    if cal.steps.len() != tp.d() {
        return Err(SeqError::Dimension(format!("{} calibrated steps for horizon {}", cal.steps.len(), tp.d())));
    }
    let mut cells = Vec::with_capacity(tp.d() * n);
    for step in &cal.steps {
        let k = step.k;
        let stars: Vec<f64> = if k <= 1 {
            vec![r; n]
        } else {
            let ps = tp.perf_scheme(k)?;
            (1..=n).map(|j| lower_bound(&ps.q, &ps.gamma, tp, cal.tolerances.miss, j)).collect::<Result<_, _>>()?
        };
        for j in 1..=n {
            let rho_star = below_cap(stars[j - 1], r);
            let rho = below_cap(step.rho[j - 1], cal.caps[j - 1]);
            let index = rho_star.zip(rho).map(|(s, v)| v / s);
            cells.push(PerfCell { k, j, rho_star, rho, index });
        }
    }
    Ok(PerfIndexTable { cap: r, cells })
}

/// Odd shapes in color 0, even shapes in color 1.
pub fn parity_coloring(n_shapes: usize) -> Vec<usize> {
    (1..=n_shapes).map(|j| (j + 1) % 2).collect()
}

fn hull_cert(
    a: &Matrix,
    problem: &DetectionProblem,
    members: &[(usize, f64)],
    theta: f64,
) -> Result<Option<SeparatorCert>, SeqError> {
    let mut sets: Vec<ConvexSet> = members.iter().map(|&(j, s)| problem.signals[j - 1].at(theta * s)).collect();
    let hull = if sets.len() == 1 { sets.remove(0) } else { ConvexSet::ConvexHull { members: sets } };
    match min_distance(&problem.nuisance.clone().image(a.clone()), &hull.image(a.clone())) {
        Ok(c) => Ok(Some(c)),
        Err(GeomError::IntersectingSets { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Replaces the per-shape tests of step `k` by one test per color class,
/// scaling every lower bound `ρ*_kj` by the smallest common factor `θ ≥ 1`
/// that keeps each class hull separated.
pub fn refine_aggregate(
    problem: &DetectionProblem,
    cal: &Calibration,
    k: usize,
    rho_star: &[f64],
    coloring: &[usize],
) -> Result<Calibration, SeqError> {
    if cal.scheme != Scheme::II {
        return Err(SeqError::InvalidArgument("aggregation needs shifted tests".into()));
    }
    let n = problem.signals.len();
    if rho_star.len() != n || coloring.len() != n {
        return Err(SeqError::Dimension(format!("need {n} lower bounds and colors")));
    }
    let step = k
        .checked_sub(1)
        .and_then(|i| cal.steps.get(i))
        .ok_or_else(|| SeqError::InvalidArgument(format!("step {k} outside 1..={}", cal.steps.len())))?;
    let Some(a) = problem.maps[k - 1].as_ref() else {
        return Ok(cal.clone());
    };
    let mut classes: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for &j in &step.candidates {
        let s = rho_star[j - 1];
        if s > 0.0 && s < cal.caps[j - 1] {
            classes.entry(coloring[j - 1]).or_default().push((j, s));
        }
    }
    if classes.is_empty() {
        return Ok(cal.clone());
    }
    let n_colors = classes.len();
    let share = step.step_eps / n_colors as f64;
    let alpha1 = cal.gamma.quantile(share)?;
    let alpha2 = cal.gamma.quantile(cal.tolerances.miss)?;
    let delta = 0.5 * (alpha1 + alpha2);
    let upper = classes.values().flatten().map(|&(j, s)| cal.caps[j - 1] / s).fold(f64::INFINITY, f64::min);

    let mut err = None;
    let mut separated = |theta: f64| -> bool {
        for members in classes.values() {
            match hull_cert(a, problem, members, theta) {
                Ok(Some(c)) if c.delta >= delta => {}
                Ok(_) => return false,
                Err(e) => {
                    err.get_or_insert(e);
                    return false;
                }
            }
        }
        true
    };
    let theta = first_true(&mut separated, 1.0, upper, THETA_REL_TOL);
    if let Some(e) = err {
        return Err(e);
    }
    let theta = theta.ok_or(SeqError::NoTheta { upper })?;

    let mut tests = Vec::with_capacity(n_colors);
    let mut rho = cal.caps.clone();
    for (&color, members) in &classes {
        let cert = hull_cert(a, problem, members, theta)?.ok_or(SeqError::NoTheta { upper })?;
        members.iter().for_each(|&(j, s)| rho[j - 1] = theta * s);
        tests.push(PairTest {
            label: TestLabel::Color(color),
            h: cert.h_star,
            c: cert.c_star,
            delta: cert.delta,
            rule: TestRule::Shifted { alpha1, alpha2 },
        });
    }
    let mut out = cal.clone();
    let s = &mut out.steps[k - 1];
    s.base_eps = share;
    s.rho = rho;
    s.tests = tests;
    s.theta = Some(theta);
    Ok(out)
}

/// Parity-colored aggregation of every step of a trend calibration, with the
/// lower bounds taken from [`perf_table`].
pub fn refine_trend(tp: &TrendProblem, cal: &Calibration) -> Result<Calibration, SeqError> {
    let problem = DetectionProblem::from_trend(tp)?;
    let table = perf_table(tp, cal)?;
    let n = tp.n_shapes();
    let coloring = parity_coloring(n);
    let mut out = cal.clone();
    for k in 2..=tp.d() {
        let stars: Vec<f64> = (1..=n).map(|j| table.cell(k, j).and_then(|c| c.rho_star).unwrap_or(table.cap)).collect();
        out = refine_aggregate(&problem, &out, k, &stars, &coloring)?;
    }
    Ok(out)
}
