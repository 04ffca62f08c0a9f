use serde::{Deserialize, Serialize};

use super::{
    Calibration, DetectionProblem, PairTest, RiskFamily, Scheme, SeqError, StepCalibration, TestLabel, TestRule,
    Tolerances,
};
use crate::geomsep::{opt_kj, rho_for_delta, separator_at};
use crate::numkit::Matrix;

const AUDIT_SLACK: f64 = 1e-10;

/// Builds the tests of one step from its per-test false-alarm share.
type StepBuilder<'a> = dyn FnMut(&Matrix, &[usize], f64) -> Result<(Vec<f64>, Vec<PairTest>), SeqError> + 'a;

/// Walks the steps in order, splitting the false-alarm budget uniformly over
/// all candidate tests and, when enabled, passing unused shares forward.
fn calibrate_steps(
    problem: &DetectionProblem,
    tol: &Tolerances,
    caps: &[f64],
    build: &mut StepBuilder<'_>,
) -> Result<(f64, Vec<StepCalibration>), SeqError> {
    let horizon = problem.horizon();
    let informative = |l: usize| problem.maps[l].is_some() && !problem.candidates[l].is_empty();
    if let Some(&k) = tol.step_budgets.keys().find(|&&k| k == 0 || k > horizon || !informative(k - 1)) {
        return Err(SeqError::InvalidArgument(format!("budget override for step {k}, which has no tests")));
    }
    let fixed: f64 = tol.step_budgets.values().sum();
    let total: usize =
        (0..horizon).filter(|l| !tol.step_budgets.contains_key(&(l + 1))).map(|l| problem.candidates[l].len()).sum();
    let base = if total == 0 { 0.0 } else { (tol.false_alarm - fixed).max(0.0) / total as f64 };
    let mut extra = vec![0.0; horizon];
    let mut steps = Vec::with_capacity(horizon);
    for (i, (map, cand)) in problem.maps.iter().zip(&problem.candidates).enumerate() {
        let k = i + 1;
        let dim = map.as_ref().map_or(0, Matrix::rows);
        let (map, n_cand) = match map {
            Some(m) if !cand.is_empty() => (m, cand.len()),
            _ => {
                steps.push(StepCalibration {
                    k,
                    step_eps: 0.0,
                    base_eps: 0.0,
                    candidates: cand.clone(),
                    rho: caps.to_vec(),
                    tests: vec![],
                    theta: None,
                    dim,
                });
                continue;
            }
        };
        let mut step_eps = tol.step_budgets.get(&k).copied().unwrap_or(base * n_cand as f64) + extra[i];
        let share = step_eps / n_cand as f64;
        let (rho, tests) = build(map, cand, share)?;
        if tol.dynamic_budget {
            let unused = share * (n_cand - tests.len()) as f64;
            let later: Vec<usize> = (i + 1..horizon).filter(|&l| informative(l)).collect();
            if unused > 0.0 && !later.is_empty() {
                let each = unused / later.len() as f64;
                later.iter().for_each(|&l| extra[l] += each);
                step_eps -= unused;
            }
        }
        steps.push(StepCalibration {
            k,
            step_eps,
            base_eps: share,
            candidates: cand.clone(),
            rho,
            tests,
            theta: None,
            dim,
        });
    }
    Ok((base, steps))
}

/// Potential-based calibration: each candidate shape gets an equal share of
/// `ε_k`, which fixes the separation it needs.
pub fn calibrate_scheme1(
    problem: &DetectionProblem,
    family: RiskFamily,
    tol: &Tolerances,
) -> Result<Calibration, SeqError> {
    problem.validate()?;
    tol.validate()?;
    let caps = problem.magnitude_caps()?;
    let gamma = &problem.gamma;
    let mut build = |a: &Matrix, cand: &[usize], share: f64| -> Result<(Vec<f64>, Vec<PairTest>), SeqError> {
        let target = (share * tol.miss).sqrt();
        let delta_star = family.delta_for_risk(target, gamma)?;
        let mut rho = caps.clone();
        let mut tests = vec![];
        for &j in cand {
            let sig = &problem.signals[j - 1];
            let r = rho_for_delta(a, &problem.nuisance, sig, delta_star, caps[j - 1])?;
            if r >= caps[j - 1] {
                continue;
            }
            rho[j - 1] = r;
            let cert = separator_at(a, &problem.nuisance, sig, r)?;
            let risk = family.risk(cert.delta, gamma)?;
            tests.push(PairTest {
                label: TestLabel::Shape(j),
                h: cert.h_star,
                c: cert.c_star,
                delta: cert.delta,
                rule: TestRule::Potential {
                    potential: family.potential(cert.delta, gamma)?,
                    alpha: (tol.miss / risk).ln(),
                },
            });
        }
        Ok((rho, tests))
    };
    let (base_eps, steps) = calibrate_steps(problem, tol, &caps, &mut build)?;
    let cal = Calibration {
        scheme: Scheme::I,
        family: Some(family),
        tolerances: tol.clone(),
        base_eps,
        caps,
        gamma: gamma.clone(),
        steps,
    };
    audit(problem, &cal)?.into_result()?;
    Ok(cal)
}

/// Shifted-test calibration: `α₁` from the per-test false-alarm share, `α₂`
/// from the miss tolerance, and the separation `½(α₁ + α₂)`.
pub fn calibrate_scheme2(problem: &DetectionProblem, tol: &Tolerances) -> Result<Calibration, SeqError> {
    problem.validate()?;
    tol.validate()?;
    let caps = problem.magnitude_caps()?;
    let gamma = &problem.gamma;
    let alpha2 = gamma.quantile(tol.miss)?;
    let mut cached: Option<(f64, f64)> = None;
    let mut build = |a: &Matrix, cand: &[usize], share: f64| -> Result<(Vec<f64>, Vec<PairTest>), SeqError> {
        let alpha1 = match cached {
            Some((s, q)) if s == share => q,
            _ => {
                let q = gamma.quantile(share)?;
                cached = Some((share, q));
                q
            }
        };
        let delta_star = 0.5 * (alpha1 + alpha2);
        let mut rho = caps.clone();
        let mut tests = vec![];
        for &j in cand {
            let sig = &problem.signals[j - 1];
            let r = rho_for_delta(a, &problem.nuisance, sig, delta_star, caps[j - 1])?;
            if r >= caps[j - 1] {
                continue;
            }
            rho[j - 1] = r;
            let cert = separator_at(a, &problem.nuisance, sig, r)?;
            tests.push(PairTest {
                label: TestLabel::Shape(j),
                h: cert.h_star,
                c: cert.c_star,
                delta: cert.delta,
                rule: TestRule::Shifted { alpha1, alpha2 },
            });
        }
        Ok((rho, tests))
    };
    let (base_eps, steps) = calibrate_steps(problem, tol, &caps, &mut build)?;
    let cal = Calibration {
        scheme: Scheme::II,
        family: None,
        tolerances: tol.clone(),
        base_eps,
        caps,
        gamma: gamma.clone(),
        steps,
    };
    audit(problem, &cal)?.into_result()?;
    Ok(cal)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checks: usize,
    pub failures: Vec<String>,
}

impl AuditReport {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_result(self) -> Result<Self, SeqError> {
        if self.passed() {
            Ok(self)
        } else {
            Err(SeqError::Audit(self.failures.join("; ")))
        }
    }
}

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + AUDIT_SLACK * rhs.abs().max(1.0)
}

/// Re-verifies every budget, threshold and separation inequality of a
/// calibration against the problem it came from.
pub fn audit(problem: &DetectionProblem, cal: &Calibration) -> Result<AuditReport, SeqError> {
    let mut rep = AuditReport::default();
    let gamma = &cal.gamma;
    let eps_kj = cal.tolerances.miss;
    let mut total = 0.0;
    for step in &cal.steps {
        let k = step.k;
        rep.check(step.rho.len() == cal.caps.len(), || format!("step {k}: {} magnitudes", step.rho.len()));
        let shape_tests: Vec<usize> = step
            .tests
            .iter()
            .filter_map(|t| match t.label {
                TestLabel::Shape(j) => Some(j),
                TestLabel::Color(_) => None,
            })
            .collect();
        if step.theta.is_none() {
            for (idx, (r, cap)) in step.rho.iter().zip(&cal.caps).enumerate() {
                let active = shape_tests.contains(&(idx + 1));
                rep.check(active == (r < cap), || format!("step {k}, shape {}: magnitude {r} vs cap {cap}", idx + 1));
            }
        }
        let mut spent = 0.0;
        for t in &step.tests {
            let delta = match (t.label, &problem.maps[k - 1]) {
                (TestLabel::Shape(j), Some(a)) => {
                    opt_kj(a, &problem.nuisance, &problem.signals[j - 1], step.rho[j - 1])?
                }
                _ => t.delta,
            };
            rep.check(delta > 0.0, || format!("step {k}, {:?}: separation {delta}", t.label));
            match (cal.scheme, t.rule) {
                (Scheme::I, TestRule::Potential { alpha, .. }) => {
                    let family = cal.family.ok_or_else(|| SeqError::Audit("missing risk family".into()))?;
                    let risk = family.risk(delta, gamma)?;
                    spent += risk * risk / eps_kj;
                    let rebuilt = alpha.exp() * family.risk(t.delta, gamma)?;
                    rep.check((rebuilt - eps_kj).abs() <= AUDIT_SLACK, || {
                        format!("step {k}, {:?}: exp(α)·R(δ) = {rebuilt}", t.label)
                    });
                }
                (Scheme::II, TestRule::Shifted { alpha1, alpha2 }) => {
                    spent += gamma.tail(alpha1)?;
                    let miss = gamma.tail(alpha2)?;
                    rep.check(within(miss, eps_kj), || format!("step {k}, {:?}: miss tail {miss}", t.label));
                    rep.check(within(alpha1 + alpha2, 2.0 * delta), || {
                        format!("step {k}, {:?}: α₁ + α₂ = {} > 2δ = {}", t.label, alpha1 + alpha2, 2.0 * delta)
                    });
                }
                _ => rep.check(false, || format!("step {k}: rule does not match the scheme")),
            }
        }
        rep.check(within(spent, step.step_eps), || format!("step {k}: spent {spent} of {}", step.step_eps));
        total += step.step_eps;
    }
    rep.check(within(total, cal.tolerances.false_alarm), || format!("total budget {total}"));
    Ok(rep)
}
