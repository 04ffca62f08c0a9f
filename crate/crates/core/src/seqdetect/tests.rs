use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::geomsep::{opt_kj, rho_for_delta};
use crate::linsys::{trend_problem, SignalKind};
use crate::scalardist::Nu;

const R: f64 = 1e4;

fn trend(nu: Nu, kind: SignalKind) -> (TrendProblem, DetectionProblem) {
    let tp = trend_problem(8, nu, 1.0, kind, R, 0.01).unwrap();
    let p = DetectionProblem::from_trend(&tp).unwrap();
    (tp, p)
}

fn plane_problem(eps_candidates: usize) -> DetectionProblem {
    let dirs = [vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
    DetectionProblem {
        maps: vec![Some(Matrix::identity(2))],
        nuisance: ConvexSet::origin(2),
        signals: dirs.iter().map(|d| SignalTemplate::ray(d.clone(), vec![-100.0; 2], vec![100.0; 2])).collect(),
        gamma: Density::gaussian(1.0),
        r_max: 100.0,
        candidates: vec![(1..=eps_candidates).collect()],
    }
}

#[test]
fn trend_budget_split() {
    let (_, p) = trend(Nu::Finite(3.0), SignalKind::Pulse);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    assert!((cal.base_eps - 0.01 / 70.0).abs() < 1e-18);
    assert!((cal.base_eps - 1.42857e-4).abs() < 1e-9);
    let total: f64 = cal.steps.iter().map(|s| s.step_eps).sum();
    assert!((total - 0.01).abs() < 1e-15);
    for s in &cal.steps[1..] {
        assert!((s.step_eps - 2.0 * s.k as f64 * cal.base_eps).abs() < 1e-15);
    }
}

#[test]
fn first_step_is_trivial() {
    let (_, p) = trend(Nu::Infinite, SignalKind::Step);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    assert!(cal.steps[0].tests.is_empty());
    assert_eq!(decide(&cal, 1, &[]).unwrap(), Verdict::Nuisance);
    assert!(cal.steps[0].rho.iter().all(|&r| r == R));
}

#[test]
fn empty_cells_follow_masking() {
    for kind in [SignalKind::Pulse, SignalKind::Step] {
        let (_, p) = trend(Nu::Infinite, kind);
        let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
        for step in &cal.steps {
            for j in 1..=16 {
                let i = TrendProblem::onset(j);
                let empty = step.k == 1 || i > step.k || (kind == SignalKind::Pulse && i == 1);
                assert_eq!(step.rho[j - 1] == R, empty, "{kind} k={} j={j}", step.k);
            }
        }
    }
}

#[test]
fn mirrored_shapes_share_thresholds() {
    let (tp, p) = trend(Nu::Finite(3.0), SignalKind::Step);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let tab = perf_table(&tp, &cal).unwrap();
    for step in &cal.steps {
        for i in 1..=8 {
            assert_eq!(step.rho[2 * i - 2], step.rho[2 * i - 1]);
            let (a, b) = (tab.cell(step.k, 2 * i - 1).unwrap(), tab.cell(step.k, 2 * i).unwrap());
            assert_eq!(a.rho_star, b.rho_star);
        }
    }
}

#[test]
fn step_thresholds_shrink_with_time() {
    let (_, p) = trend(Nu::Finite(3.0), SignalKind::Step);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    for j in 1..=16 {
        for k in 2..8 {
            assert!(cal.steps[k].rho[j - 1] <= cal.steps[k - 1].rho[j - 1] * (1.0 + 1e-12), "j={j} k={}", k + 1);
        }
    }
}

#[test]
fn thresholds_never_beat_lower_bounds() {
    for nu in [Nu::Finite(1.0), Nu::Finite(3.0), Nu::Infinite] {
        for kind in [SignalKind::Pulse, SignalKind::Step] {
            let (tp, p) = trend(nu, kind);
            let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
            let tab = perf_table(&tp, &cal).unwrap();
            for c in &tab.cells {
                if let (Some(r), Some(s)) = (c.rho, c.rho_star) {
                    assert!(r >= s - 1e-6, "{nu} {kind} k={} j={}", c.k, c.j);
                }
                assert_eq!(c.rho.is_some(), c.rho_star.is_some(), "k={} j={}", c.k, c.j);
            }
        }
    }
}

#[test]
fn perf_index_sentinels() {
    let (tp, _) = trend(Nu::Finite(2.0), SignalKind::Pulse);
    for j in 1..=16 {
        assert_eq!(perf_index(&tp, 0.01, 1, j).unwrap(), R);
    }
    for k in 2..=8 {
        for j in 1..=16 {
            let i = TrendProblem::onset(j);
            let v = perf_index(&tp, 0.01, k, j).unwrap();
            assert_eq!(v == R, i > k || i == 1, "k={k} j={j}");
        }
    }
    assert!(perf_index(&tp, 0.01, 3, 17).is_err());
}

#[test]
fn step_lower_bounds_shrink_with_time() {
    let (tp, _) = trend(Nu::Infinite, SignalKind::Step);
    for j in 1..=16 {
        let v: Vec<f64> = (2..=8).map(|k| perf_index(&tp, 0.01, k, j).unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "j={j}: {v:?}");
    }
}

#[test]
fn subgaussian_separation_example() {
    let d = RiskFamily::Linear.delta_for_risk((0.01f64 * 0.01 / 4.0).sqrt(), &Density::gaussian(1.0)).unwrap();
    assert!((d - 40000f64.ln().sqrt()).abs() < 1e-12);
    assert!((d - 3.2552).abs() < 1e-4);
    let p = plane_problem(4);
    let cal = calibrate_scheme1(&p, RiskFamily::Linear, &Tolerances::new(0.01)).unwrap();
    assert_eq!(cal.steps[0].tests.len(), 4);
    for t in &cal.steps[0].tests {
        assert!((t.delta - d).abs() < 1e-9);
        let TestRule::Potential { alpha, .. } = t.rule else { panic!("wrong rule") };
        assert!((alpha.exp() * RiskFamily::Linear.risk(t.delta, &p.gamma).unwrap() - 0.01).abs() < 1e-10);
    }
}

#[test]
fn step_family_inverts_its_risk() {
    let g = Density::student(3.0);
    for target in [0.9, 0.3, 0.05, 1e-3] {
        let d = RiskFamily::Step.delta_for_risk(target, &g).unwrap();
        let r = RiskFamily::Step.risk(d, &g).unwrap();
        assert!(r <= target * (1.0 + 1e-9) && r >= target * 0.999, "target {target}: {r}");
    }
    assert!(matches!(RiskFamily::Step.delta_for_risk(1.0, &g), Err(SeqError::NoFeasibleDelta { .. })));
}

#[test]
fn loose_tolerances_still_audit() {
    let mut p = plane_problem(1);
    p.candidates = vec![vec![1]];
    let tol = Tolerances::new(0.49);
    let cal = calibrate_scheme1(&p, RiskFamily::Linear, &tol).unwrap();
    assert!(audit(&p, &cal).unwrap().passed());
}

#[test]
fn scheme_one_trend_audits() {
    for family in [RiskFamily::Step, RiskFamily::Linear] {
        let (_, p) = trend(Nu::Infinite, SignalKind::Step);
        let cal = calibrate_scheme1(&p, family, &Tolerances::new(0.01)).unwrap();
        let rep = audit(&p, &cal).unwrap();
        assert!(rep.passed() && rep.checks > 100, "{rep:?}");
        assert_eq!(cal.family, Some(family));
    }
}

#[test]
fn scheme_two_audit_detects_tampering() {
    let (_, p) = trend(Nu::Infinite, SignalKind::Pulse);
    let mut cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    assert!(audit(&p, &cal).unwrap().passed());
    cal.steps[4].rho[3] *= 0.9;
    let rep = audit(&p, &cal).unwrap();
    assert!(!rep.passed());
    assert!(matches!(rep.into_result(), Err(SeqError::Audit(_))));
}

#[test]
fn decision_at_threshold_is_nuisance() {
    let test = PairTest {
        label: TestLabel::Shape(1),
        h: vec![1.0, 0.0],
        c: 0.0,
        delta: 2.0,
        rule: TestRule::Shifted { alpha1: 1.0, alpha2: 3.0 },
    };
    let cal = Calibration {
        scheme: Scheme::II,
        family: None,
        tolerances: Tolerances::new(0.01),
        base_eps: 0.01,
        caps: vec![10.0],
        gamma: Density::gaussian(1.0),
        steps: vec![StepCalibration {
            k: 1,
            step_eps: 0.01,
            base_eps: 0.01,
            candidates: vec![1],
            rho: vec![4.0],
            tests: vec![test],
            theta: None,
            dim: 2,
        }],
    };
    assert_eq!(decide(&cal, 1, &[1.0, 5.0]).unwrap(), Verdict::Nuisance);
    assert_eq!(decide(&cal, 1, &[0.999, 5.0]).unwrap(), Verdict::Signal);
    assert!(matches!(decide(&cal, 1, &[1.0]), Err(SeqError::Dimension(_))));
    assert!(decide(&cal, 2, &[1.0, 0.0]).is_err());

    let mut calls = vec![];
    let out = run(&cal, |k| {
        calls.push(k);
        Ok(vec![-3.0, 0.0])
    })
    .unwrap();
    assert_eq!(out.first_signal, Some(1));
    assert_eq!(out.verdicts, vec![Verdict::Signal]);
    assert_eq!(out.statistics, vec![vec![-3.0]]);
    assert_eq!(calls, vec![1]);
}

#[test]
fn run_halts_at_first_signal() {
    let (tp, p) = trend(Nu::Infinite, SignalKind::Step);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let mut u = vec![0.0; 8];
    u[2..].iter_mut().for_each(|v| *v = 100.0);
    let zero = vec![0.0; 8];
    let out = run(&cal, |k| Ok(tp.observe(k, &u, &zero, &zero)?)).unwrap();
    assert_eq!(out.first_signal, Some(3));
    assert_eq!(out.verdicts.len(), 3);
    let quiet = run(&cal, |k| Ok(tp.observe(k, &zero, &zero, &zero)?)).unwrap();
    assert_eq!(quiet.first_signal, None);
    assert_eq!(quiet.verdicts.len(), 8);
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn gaussian_monte_carlo_risks() {
    let (tp, p) = trend(Nu::Infinite, SignalKind::Pulse);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let runs = 2000;
    let se = (0.01f64 * 0.99 / runs as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let zero = vec![0.0; 8];
    let mut alarms = 0;
    for _ in 0..runs {
        let (eta, zeta) = (gaussian_vec(&mut rng, 8), gaussian_vec(&mut rng, 8));
        let out = run(&cal, |k| Ok(tp.observe(k, &zero, &eta, &zeta)?)).unwrap();
        alarms += usize::from(out.first_signal.is_some());
    }
    assert!((alarms as f64 / runs as f64) <= 0.01 + 3.0 * se, "false alarms {alarms}");

    let (k, j) = (5, 4);
    let rho = cal.steps[k - 1].rho[j - 1] * (1.0 + 1e-4);
    let u: Vec<f64> = tp.direction(j).unwrap().iter().map(|v| v * rho).collect();
    let mut misses = 0;
    for _ in 0..runs {
        let (eta, zeta) = (gaussian_vec(&mut rng, 8), gaussian_vec(&mut rng, 8));
        let omega = tp.observe(k, &u, &eta, &zeta).unwrap();
        misses += usize::from(decide(&cal, k, &omega).unwrap() == Verdict::Nuisance);
    }
    assert!((misses as f64 / runs as f64) <= 0.01 + 3.0 * se, "misses {misses}");
}

#[test]
fn dynamic_budget_stays_within_total() {
    let (_, p) = trend(Nu::Finite(3.0), SignalKind::Pulse);
    let tol = Tolerances { dynamic_budget: true, ..Tolerances::new(0.01) };
    let cal = calibrate_scheme2(&p, &tol).unwrap();
    let fixed = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let used: f64 = cal.steps.iter().map(|s| s.base_eps * s.tests.len() as f64).sum();
    assert!(used <= 0.01 * (1.0 + 1e-12));
    assert!(cal.steps[7].base_eps > fixed.steps[7].base_eps);
    for (a, b) in cal.steps.iter().zip(&fixed.steps) {
        for (x, y) in a.rho.iter().zip(&b.rho) {
            assert!(x <= y);
        }
    }
}

#[test]
fn step_budget_overrides() {
    let (_, p) = trend(Nu::Infinite, SignalKind::Step);
    let mut tol = Tolerances::new(0.01);
    tol.step_budgets.insert(8, 0.004);
    let cal = calibrate_scheme2(&p, &tol).unwrap();
    assert!((cal.steps[7].step_eps - 0.004).abs() < 1e-18);
    // 54 tests on steps 2..=7 share the remaining 0.006.
    assert!((cal.base_eps - 0.006 / 54.0).abs() < 1e-18);
    let total: f64 = cal.steps.iter().map(|s| s.step_eps).sum();
    assert!((total - 0.01).abs() < 1e-15);
    let uniform = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    assert!(cal.steps[7].rho[1] < uniform.steps[7].rho[1]);
    assert!(cal.steps[6].rho[1] > uniform.steps[6].rho[1]);

    for (k, v) in [(1, 0.001), (9, 0.001), (3, 0.0), (3, 0.02)] {
        let mut bad = Tolerances::new(0.01);
        bad.step_budgets.insert(k, v);
        assert!(calibrate_scheme2(&p, &bad).is_err(), "step {k}, budget {v}");
    }
}

#[test]
fn parity_refinement_separates_each_color() {
    let (tp, p) = trend(Nu::Finite(1.0), SignalKind::Pulse);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let unrefined = perf_table(&tp, &cal).unwrap();
    let refined = refine_trend(&tp, &cal).unwrap();
    assert!(audit(&p, &refined).unwrap().passed());
    let table = perf_table(&tp, &refined).unwrap();
    for step in &refined.steps[1..] {
        let theta = step.theta.unwrap();
        assert!(theta >= 1.0);
        assert_eq!(step.tests.len(), 2);
        let TestRule::Shifted { alpha1, alpha2 } = step.tests[0].rule else { panic!("wrong rule") };
        for t in &step.tests {
            assert!(t.delta >= 0.5 * (alpha1 + alpha2) - 1e-6);
        }
        for c in table.cells.iter().filter(|c| c.k == step.k) {
            if let Some(ix) = c.index {
                assert!((ix - theta).abs() < 1e-9 * theta);
            }
        }
        assert!(theta <= 1.2 * unrefined.worst(step.k).unwrap());
    }
    assert_eq!(parity_coloring(4), vec![0, 1, 0, 1]);
}

#[test]
fn singleton_colors_match_per_shape_thresholds() {
    let (tp, p) = trend(Nu::Infinite, SignalKind::Step);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let k = 4;
    let stars: Vec<f64> = (1..=16).map(|j| perf_index(&tp, 0.01, k, j).unwrap()).collect();
    let active: Vec<usize> = (1..=16).filter(|&j| stars[j - 1] < R).collect();
    let coloring: Vec<usize> = (0..16).collect();
    let refined = refine_aggregate(&p, &cal, k, &stars, &coloring).unwrap();
    let step = &refined.steps[k - 1];
    let theta = step.theta.unwrap();
    assert_eq!(step.tests.len(), active.len());

    // Per-shape thresholds at the same per-test budget.
    let share = cal.steps[k - 1].step_eps / active.len() as f64;
    let delta = 0.5 * (p.gamma.quantile(share).unwrap() + p.gamma.quantile(0.01).unwrap());
    let a = p.maps[k - 1].as_ref().unwrap();
    let per_shape: Vec<f64> =
        active.iter().map(|&j| rho_for_delta(a, &p.nuisance, &p.signals[j - 1], delta, R).unwrap()).collect();
    let needed = active.iter().zip(&per_shape).map(|(&j, r)| r / stars[j - 1]).fold(1.0, f64::max);
    assert!((theta - needed).abs() < 1e-6 * needed, "{theta} vs {needed}");
    for &j in &active {
        let got = opt_kj(a, &p.nuisance, &p.signals[j - 1], step.rho[j - 1]).unwrap();
        assert!(got >= delta * (1.0 - 1e-6));
    }
}

#[test]
fn refinement_requires_shifted_tests() {
    let (_, p) = trend(Nu::Infinite, SignalKind::Pulse);
    let cal = calibrate_scheme1(&p, RiskFamily::Linear, &Tolerances::new(0.01)).unwrap();
    let stars = vec![1.0; 16];
    assert!(refine_aggregate(&p, &cal, 3, &stars, &parity_coloring(16)).is_err());
}

#[test]
fn calibration_round_trips() {
    let (tp, p) = trend(Nu::Finite(3.0), SignalKind::Pulse);
    let cal = calibrate_scheme2(&p, &Tolerances::new(0.01)).unwrap();
    let text = serde_json::to_string(&cal).unwrap();
    let back: Calibration = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cal);
    let table = perf_table(&tp, &cal).unwrap();
    let back: PerfIndexTable = serde_json::from_str(&serde_json::to_string(&table).unwrap()).unwrap();
    assert_eq!(back, table);
}

#[test]
fn invalid_inputs() {
    let mut p = plane_problem(4);
    assert!(calibrate_scheme2(&p, &Tolerances::new(0.7)).is_err());
    p.candidates = vec![vec![5]];
    assert!(matches!(calibrate_scheme2(&p, &Tolerances::new(0.01)), Err(SeqError::InvalidArgument(_))));
    p.candidates = vec![];
    assert!(matches!(calibrate_scheme2(&p, &Tolerances::new(0.01)), Err(SeqError::Dimension(_))));
}
