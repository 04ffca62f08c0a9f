//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::f64::consts::{PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use sepdetect::geomsep::{min_distance, ConvexSet, SeparatorCert};
use sepdetect::linsys::{trend_problem, SignalKind, TrendProblem};
use sepdetect::numkit::Matrix;
use sepdetect::pairtests::{
    block_means, delta_index, detector_decide, majority_bound_semistationary, majority_decide, mm_decide, mm_params,
    near_optimality, subgaussian_risk, Detector, Hypothesis, Potential,
};
use sepdetect::scalardist::{dominates, mixture_density, Density, MixingLaw, Nu};
use sepdetect::seqdetect::{
    calibrate_scheme2, perf_table, refine_trend, Calibration, DetectionProblem, PerfIndexTable, TestRule, Tolerances,
};
use sepdetect::simlab::{estimate_risks, McConfig};

type Check = Result<String, String>;
type Tail = Box<dyn Fn(f64) -> f64>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn student_tail_oracle(nu: f64, t: f64) -> f64 {
    0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + t * t))
}

fn student_pdf_oracle(nu: f64, s: f64) -> f64 {
    (ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (PI * nu).ln()
        - 0.5 * (nu + 1.0) * (1.0 + s * s / nu).ln())
    .exp()
}

fn tails_and_mixtures() -> Check {
    let started = Instant::now();
    let deltas = grid(0.0, 10.0, 50);
    let mut worst: f64 = 0.0;
    let cases: Vec<(String, Density, Tail)> = vec![
        ("gaussian(1)".into(), Density::gaussian(1.0), Box::new(|d| 0.5 * erfc(d / SQRT_2))),
        ("gaussian(2.5)".into(), Density::gaussian(2.5), Box::new(|d| 0.5 * erfc(d / (2.5 * SQRT_2)))),
        ("laplace(1)".into(), Density::laplace(1.0), Box::new(|d| 0.5 * (-d).exp())),
        ("laplace(0.7)".into(), Density::laplace(0.7), Box::new(|d| 0.5 * (-d / 0.7).exp())),
        ("student(1)".into(), Density::student(1.0), Box::new(|d| student_tail_oracle(1.0, d))),
        ("student(3)".into(), Density::student(3.0), Box::new(|d| student_tail_oracle(3.0, d))),
        ("student(6)".into(), Density::student(6.0), Box::new(|d| student_tail_oracle(6.0, d))),
    ];
    for (name, density, oracle) in &cases {
        for &d in &deltas {
            let got = density.tail(d).map_err(|e| format!("{name}: {e}"))?;
            let err = (got - oracle(d)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("{name} tail at {d}: {got} vs {}", oracle(d)))?;
        }
    }
    let mut worst_mix: f64 = 0.0;
    for nu in [1.0, 2.0, 3.0, 6.0] {
        let mix = mixture_density(MixingLaw::InverseChiSqScaled { nu }).map_err(|e| e.to_string())?;
        for &s in &deltas {
            let err = (mix.pdf(s) - student_pdf_oracle(nu, s)).abs();
            worst_mix = worst_mix.max(err);
            ensure(err <= 1e-7, || format!("mixture ν={nu} at {s}: {} vs {}", mix.pdf(s), student_pdf_oracle(nu, s)))?;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max tail error {worst:.1e}, max mixture density error {worst_mix:.1e}, {secs:.2} s"))
}

fn potential_indexes() -> Check {
    let mut worst: f64 = 0.0;
    let families = [
        ("gaussian", Density::gaussian(1.0), Box::new(|d: f64| 0.5 * erfc(d / SQRT_2)) as Tail),
        ("laplace", Density::laplace(1.0), Box::new(|d: f64| 0.5 * (-d).exp())),
        ("student(3)", Density::student(3.0), Box::new(|d: f64| student_tail_oracle(3.0, d))),
    ];
    for (name, gamma, tail) in &families {
        for delta in [0.1, 0.5, 1.0, 2.0] {
            let e = tail(delta);
            let pot = Potential::step(e).map_err(|e| e.to_string())?;
            let got = delta_index(&pot, delta, gamma).map_err(|e| e.to_string())?;
            let want = 2.0 * (e * (1.0 - e)).sqrt();
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-10, || format!("step index {name}, δ={delta}: {got} vs {want}"))?;
        }
    }
    let mut worst_ramp: f64 = 0.0;
    for (delta, lambda) in [(1.0, 1.0), (0.5, 1.0), (2.0, 0.5), (1.5, 3.0)] {
        let got = delta_index(&Potential::Ramp { delta, lambda }, delta, &Density::laplace(lambda))
            .map_err(|e| e.to_string())?;
        let r = delta / lambda;
        let want = (-r).exp() * (1.0 + r);
        worst_ramp = worst_ramp.max((got - want).abs());
        ensure((got - want).abs() <= 1e-8, || format!("ramp index δ={delta}, λ={lambda}: {got} vs {want}"))?;
    }
    for delta in [0.1f64, 0.5, 1.0, 2.0] {
        let want = (-0.5 * delta * delta).exp();
        ensure(subgaussian_risk(delta) == want, || format!("sub-Gaussian risk at {delta}"))?;
        let got = delta_index(&Potential::Linear { slope: delta }, delta, &Density::gaussian(1.0))
            .map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, || format!("linear index at {delta}: {got} vs {want}"))?;
    }
    Ok(format!("step error {worst:.1e}, ramp error {worst_ramp:.1e}, linear exact"))
}

fn binomial_upper(eps: f64, k: usize) -> f64 {
    // P(Bin(k, eps) ≥ ⌈k/2⌉) from the pmf built by the ratio recurrence.
    let mut pmf = (1.0 - eps).powi(k as i32);
    let mut total = 0.0;
    for j in 0..=k {
        if j > 0 {
            pmf *= (k - j + 1) as f64 / j as f64 * eps / (1.0 - eps);
        }
        if 2 * j >= k {
            total += pmf;
        }
    }
    total
}

fn cert(h: Vec<f64>, c: f64) -> SeparatorCert {
    let n = h.len();
    SeparatorCert {
        opt: 2.0,
        x1_star: vec![0.0; n],
        x2_star: vec![0.0; n],
        h_star: h,
        c_star: c,
        delta: 1.0,
        kkt_residual: 0.0,
    }
}

fn majority_machinery() -> Check {
    let mut worst: f64 = 0.0;
    for k in 1..=200 {
        for eps in [0.001, 0.01, 0.1, 0.3, 0.45] {
            let rec = majority_bound_semistationary(&vec![eps; k]);
            let closed = binomial_upper(eps, k);
            worst = worst.max((rec - closed).abs());
            ensure((rec - closed).abs() <= 1e-12, || format!("K={k}, ε={eps}: {rec} vs {closed}"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let k = rng.random_range(1..=15);
        let n = rng.random_range(1..=4);
        let potential = Potential::step(rng.random_range(0.01..0.49)).map_err(|e| e.to_string())?;
        let (mut certs, mut dets, mut obs) = (vec![], vec![], vec![]);
        for _ in 0..k {
            let h: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let c: f64 = rng.sample(StandardNormal);
            obs.push((0..n).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
            dets.push(Detector { h: h.clone(), c, potential });
            certs.push(cert(h, c));
        }
        let a = majority_decide(&certs, &obs).map_err(|e| e.to_string())?.accepted;
        let b = detector_decide(&dets, &obs, 0.0).map_err(|e| e.to_string())?.accepted;
        ensure(a == b, || format!("verdicts differ on an instance with K={k}"))?;
    }
    Ok(format!("recursion error {worst:.1e}, 10000 instances verdict-identical"))
}

fn near_optimality_illustration() -> Check {
    let started = Instant::now();
    let r = near_optimality(0.01, 1.0, 1.0, 1.0 / (2.0 * PI), 1.0).map_err(|e| e.to_string())?;
    ensure(r.k_upper == 91, || format!("K* = {}", r.k_upper))?;
    let want = 25f64.ln() / 2.0;
    ensure((r.k_lower - want).abs() <= 1e-12, || format!("K_* = {} vs {want}", r.k_lower))?;
    let q = Density::gaussian(0.5f64.sqrt());
    let mut worst = f64::NEG_INFINITY;
    for nu in [1.0, 2.0, 3.0, 6.0] {
        let rep = dominates(&Density::student(nu), &q, 10.0, 2001);
        worst = worst.max(rep.worst_violation);
        ensure(rep.dominates, || format!("ν={nu}: violation {} at {}", rep.worst_violation, rep.at))?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("K* = 91, K_* = {:.6}, worst domination gap {worst:.2e}, {secs:.2} s", r.k_lower))
}

fn unit(dir: &[f64]) -> Vec<f64> {
    let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter().map(|v| v / n).collect()
}

/// `max_u (min_p uᵀp − max_q uᵀq)` over unit directions.
fn gap(u: &[f64], p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let lo = p.iter().map(|x| dot(u, x)).fold(f64::INFINITY, f64::min);
    let hi = q.iter().map(|x| dot(u, x)).fold(f64::NEG_INFINITY, f64::max);
    lo - hi
}

/// Distance between two vertex hulls by a coarse grid of directions followed
/// by slowly shrinking local grids.
fn grid_distance(p: &[Vec<f64>], q: &[Vec<f64>]) -> f64 {
    if p[0].len() == 2 {
        let (mut center, mut width) = (0.0, PI);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..20 {
            let n = 400;
            let (mut arg, mut val) = (center, f64::NEG_INFINITY);
            for i in 0..=n {
                let t = center - width + 2.0 * width * i as f64 / n as f64;
                let v = gap(&[t.cos(), t.sin()], p, q);
                if v > val {
                    (arg, val) = (t, v);
                }
            }
            best = best.max(val);
            center = arg;
            width /= 3.0;
        }
        best
    } else {
        let (mut ct, mut cp, mut wt, mut wp) = (PI / 2.0, 0.0, PI / 2.0, PI);
        let mut best = f64::NEG_INFINITY;
        for round in 0..25 {
            let n = if round == 0 { 300 } else { 60 };
            let (mut at, mut ap, mut val) = (ct, cp, f64::NEG_INFINITY);
            for i in 0..=n {
                let t = ct - wt + 2.0 * wt * i as f64 / n as f64;
                for j in 0..=n {
                    let f = cp - wp + 2.0 * wp * j as f64 / n as f64;
                    let v = gap(&[t.sin() * f.cos(), t.sin() * f.sin(), t.cos()], p, q);
                    if v > val {
                        (at, ap, val) = (t, f, v);
                    }
                }
            }
            best = best.max(val);
            (ct, cp) = (at, ap);
            if round == 0 {
                wt = 8.0 * wt / n as f64;
                wp = 8.0 * wp / n as f64;
            } else {
                wt /= 2.0;
                wp /= 2.0;
            }
        }
        best
    }
}

fn hull(pts: &[Vec<f64>]) -> ConvexSet {
    ConvexSet::ConvexHull { members: pts.iter().map(|p| ConvexSet::singleton(p.clone())).collect() }
}

fn separation_solver() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_dist, mut worst_audit): (f64, f64) = (0.0, 0.0);
    let mut pairs = 0;
    while pairs < 100 {
        let n = if pairs % 2 == 0 { 2 } else { 3 };
        let cloud = |rng: &mut ChaCha8Rng, shift: &[f64]| -> Vec<Vec<f64>> {
            let m = rng.random_range(n + 1..=n + 4);
            (0..m).map(|_| (0..n).map(|i| shift[i] + rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let p = cloud(&mut rng, &vec![0.0; n]);
        let dir = unit(&(0..n).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
        let len = rng.random_range(1.5..4.0);
        let shift: Vec<f64> = dir.iter().map(|v| v * len).collect();
        let q = cloud(&mut rng, &shift);
        let oracle = grid_distance(&p, &q);
        if oracle < 1e-2 {
            continue;
        }
        pairs += 1;
        let (x1, x2) = (hull(&p), hull(&q));
        let c = min_distance(&x1, &x2).map_err(|e| format!("pair {pairs}: {e}"))?;
        let err = (c.opt - oracle).abs();
        worst_dist = worst_dist.max(err);
        ensure(err <= 1e-4, || format!("pair {pairs} (n={n}): solver {} vs grid {oracle}", c.opt))?;
        let audit = c.audit(&x1, &x2).map_err(|e| e.to_string())?;
        worst_audit = worst_audit.max(-audit.first_margin.min(audit.second_margin));
        ensure(audit.passes(1e-6), || format!("pair {pairs}: audit {audit:?}"))?;
    }
    Ok(format!("100 pairs, max distance error {worst_dist:.1e}, worst audit shortfall {:.1e}", worst_audit.max(0.0)))
}

fn trend(nu: Nu, sigma: f64, kind: SignalKind, eps: f64) -> Result<(TrendProblem, Calibration), String> {
    let tp = trend_problem(8, nu, sigma, kind, 1e4, eps).map_err(|e| e.to_string())?;
    let p = DetectionProblem::from_trend(&tp).map_err(|e| e.to_string())?;
    let cal = calibrate_scheme2(&p, &Tolerances::new(eps)).map_err(|e| e.to_string())?;
    Ok((tp, cal))
}

fn trend_guarantees() -> Check {
    let mut notes = vec![];
    for nu in [Nu::Finite(3.0), Nu::Infinite] {
        for kind in [SignalKind::Pulse, SignalKind::Step] {
            let started = Instant::now();
            let (tp, cal) = trend(nu, 1.0, kind, 0.01)?;
            let calib = started.elapsed().as_secs_f64();
            ensure(calib < 60.0, || format!("ν={nu} {kind}: calibration took {calib:.1} s"))?;
            let cfg = McConfig::new(10_000, 2024);
            let fa = estimate_risks(&tp, &cal, &[0.0; 8], &cfg).map_err(|e| e.to_string())?;
            ensure(fa.signal.within(0.01, 3.0), || format!("ν={nu} {kind}: false alarm {:?}", fa.signal))?;
            let mut worst_miss: f64 = 0.0;
            let mut cells = 0;
            for step in &cal.steps {
                for j in step.active(&cal.caps) {
                    let rho = step.rho[j - 1] * (1.0 + 1e-4);
                    let u: Vec<f64> = tp.direction(j).map_err(|e| e.to_string())?.iter().map(|v| v * rho).collect();
                    let rep = estimate_risks(&tp, &cal, &u, &cfg).map_err(|e| e.to_string())?;
                    let miss = rep.miss_by(step.k);
                    worst_miss = worst_miss.max(miss.frequency);
                    cells += 1;
                    ensure(miss.within(0.01, 3.0), || {
                        format!("ν={nu} {kind}: cell ({}, {j}) miss {:?}", step.k, miss)
                    })?;
                }
            }
            let total = started.elapsed().as_secs_f64();
            ensure(total < 600.0, || format!("ν={nu} {kind}: took {total:.0} s"))?;
            notes.push(format!(
                "ν={nu} {kind}: calib {calib:.2} s, false alarm {:.4}, worst miss {worst_miss:.4} over {cells} cells",
                fa.signal.frequency
            ));
        }
    }
    Ok(notes.join("; "))
}

fn onset(j: usize) -> usize {
    j.div_ceil(2)
}

fn figure_structure() -> Check {
    let nus = [Nu::Finite(1.0), Nu::Finite(2.0), Nu::Finite(3.0), Nu::Finite(6.0), Nu::Infinite];
    let mut min_index = f64::INFINITY;
    for kind in [SignalKind::Pulse, SignalKind::Step] {
        let mut tables: Vec<PerfIndexTable> = vec![];
        for nu in nus {
            let (tp, cal) = trend(nu, 1.0, kind, 0.01)?;
            let table = perf_table(&tp, &cal).map_err(|e| e.to_string())?;
            for c in &table.cells {
                let masked = c.k == 1 || onset(c.j) > c.k || (kind == SignalKind::Pulse && onset(c.j) == 1);
                ensure(c.rho.is_none() == masked, || format!("ν={nu} {kind}: cell ({}, {}) emptiness", c.k, c.j))?;
                ensure(c.rho_star.is_none() == masked, || {
                    format!("ν={nu} {kind}: bound ({}, {}) emptiness", c.k, c.j)
                })?;
                if c.j % 2 == 1 {
                    let twin = table.cell(c.k, c.j + 1).ok_or("missing twin")?;
                    ensure(c.rho_star == twin.rho_star, || {
                        format!("ν={nu} {kind}: ρ* of ({}, {}) not mirrored", c.k, c.j)
                    })?;
                }
                if let Some(i) = c.index {
                    min_index = min_index.min(i);
                    ensure(i >= 1.0 - 1e-6, || format!("ν={nu} {kind}: index {i} at ({}, {})", c.k, c.j))?;
                }
            }
            if kind == SignalKind::Step {
                for j in 1..=16 {
                    let rho: Vec<f64> = (1..=8).filter_map(|k| table.cell(k, j).and_then(|c| c.rho)).collect();
                    ensure(rho.windows(2).all(|w| w[1] <= w[0]), || {
                        format!("ν={nu}: ρ of shape {j} increases: {rho:?}")
                    })?;
                }
            }
            tables.push(table);
        }
        for pair in tables.windows(2) {
            for (a, b) in pair[0].cells.iter().zip(&pair[1].cells) {
                if let (Some(x), Some(y)) = (a.index, b.index) {
                    ensure(x >= y, || format!("{kind}: index order broken at ({}, {}): {x} < {y}", a.k, a.j))?;
                }
            }
        }
    }
    Ok(format!("empty cells, mirrored bounds, monotone steps and index order hold; smallest index {min_index:.4}"))
}

fn sweep_monotonicity() -> Check {
    let k = 8;
    for kind in [SignalKind::Pulse, SignalKind::Step] {
        let row = |sigma: f64, eps: f64| -> Result<Vec<f64>, String> {
            Ok(trend(Nu::Finite(3.0), sigma, kind, eps)?.1.steps[k - 1].rho.clone())
        };
        let by_sigma = [row(0.5, 0.01)?, row(1.0, 0.01)?, row(2.0, 0.01)?];
        let by_eps = [row(1.0, 0.001)?, row(1.0, 0.01)?, row(1.0, 0.05)?];
        for j in 0..16 {
            ensure(by_sigma.windows(2).all(|w| w[0][j] <= w[1][j]), || {
                format!("{kind}: shape {} not nondecreasing in σ", j + 1)
            })?;
            ensure(by_eps.windows(2).all(|w| w[0][j] >= w[1][j]), || {
                format!("{kind}: shape {} not nonincreasing in ε", j + 1)
            })?;
        }
    }
    Ok("ρ at k=8 nondecreasing in σ and nonincreasing in ε for both signal kinds".into())
}

fn refinement() -> Check {
    let mut notes = vec![];
    for kind in [SignalKind::Pulse, SignalKind::Step] {
        let (tp, cal) = trend(Nu::Finite(1.0), 1.0, kind, 0.01)?;
        let table = perf_table(&tp, &cal).map_err(|e| e.to_string())?;
        let refined = refine_trend(&tp, &cal).map_err(|e| e.to_string())?;
        let mut pairs = vec![];
        for k in 2..=8 {
            let step = &refined.steps[k - 1];
            let theta = step.theta.ok_or_else(|| format!("step {k} was not refined"))?;
            ensure(theta >= 1.0, || format!("{kind}: θ_{k} = {theta}"))?;
            let a: &Matrix = &tp.step(k).ok_or("missing step")?.a;
            for (color, test) in step.tests.iter().enumerate() {
                let TestRule::Shifted { alpha1, alpha2 } = test.rule else {
                    return Err("refined test is not shifted".into());
                };
                let members: Vec<ConvexSet> = (1..=16)
                    .filter(|j| (j + 1) % 2 == color % 2)
                    .filter_map(|j| table.cell(k, j).and_then(|c| c.rho_star).map(|s| (j, s)))
                    .map(|(j, s)| Ok(tp.signal(j)?.at(theta * s).image(a.clone())))
                    .collect::<Result<_, sepdetect::linsys::LinError>>()
                    .map_err(|e| e.to_string())?;
                let c = min_distance(&ConvexSet::origin(k - 1), &ConvexSet::ConvexHull { members })
                    .map_err(|e| e.to_string())?;
                let need = 0.5 * (alpha1 + alpha2);
                ensure(c.delta >= need - 1e-6, || {
                    format!("{kind}: step {k}, color {color}: half-distance {} < {need}", c.delta)
                })?;
            }
            let worst = table.worst(k).ok_or("no unrefined index")?;
            ensure(theta <= 1.2 * worst, || format!("{kind}: step {k}: θ = {theta} vs worst {worst}"))?;
            pairs.push(format!("k={k} {worst:.2}->{theta:.2}"));
        }
        notes.push(format!("{kind} [{}]", pairs.join(", ")));
    }
    Ok(format!("ν=1 worst index -> θ_k: {}", notes.join("; ")))
}

fn majority_of_means() -> Check {
    let (eps1, eps2) = (0.01, 0.01);
    let x1 = [1.0, 0.5];
    let x2 = [-1.0, 0.5];
    let h = [1.0, 0.0];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let varrho = dot(&h, &x1) - dot(&h, &x2);
    let p = mm_params(eps1, eps2, varrho).map_err(|e| e.to_string())?;
    ensure(p.k == 110, || format!("K = {}", p.k))?;
    let c_star = p.threshold(dot(&h, &x1));
    let runs = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut wrong = [0usize; 2];
    for _ in 0..runs {
        for (idx, x) in [x1, x2].iter().enumerate() {
            let vals: Vec<f64> = (0..p.k)
                .map(|_| {
                    let w = [x[0] + rng.sample::<f64, _>(StandardNormal), x[1] + rng.sample::<f64, _>(StandardNormal)];
                    dot(&h, &w)
                })
                .collect();
            let verdict = mm_decide(&block_means(&vals, p.m as usize), c_star).map_err(|e| e.to_string())?.accepted;
            let truth = if idx == 0 { Hypothesis::H1 } else { Hypothesis::H2 };
            if verdict != truth {
                wrong[idx] += 1;
            }
        }
    }
    let rates: Vec<f64> = wrong.iter().map(|w| *w as f64 / runs as f64).collect();
    for (rate, eps) in rates.iter().zip([eps1, eps2]) {
        let se = (eps * (1.0 - eps) / runs as f64).sqrt();
        ensure(*rate <= eps + 3.0 * se, || format!("partial risk {rate}"))?;
    }
    Ok(format!("K = 110 (m = {}, J = {}), partial risks {:.4} and {:.4}", p.m, p.j, rates[0], rates[1]))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("density closed forms", tails_and_mixtures),
        ("potential indexes", potential_indexes),
        ("majority machinery", majority_machinery),
        ("near-optimality illustration", near_optimality_illustration),
        ("separation solver", separation_solver),
        ("trend detection guarantees", trend_guarantees),
        ("threshold table structure", figure_structure),
        ("noise and risk sweep", sweep_monotonicity),
        ("two-color refinement", refinement),
        ("majority of means", majority_of_means),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} ({secs:.1} s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why} ({secs:.1} s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
