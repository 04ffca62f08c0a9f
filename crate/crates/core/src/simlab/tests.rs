use super::*;
use crate::linsys::{trend_problem, SignalKind};
use crate::scalardist::Density;
use crate::seqdetect::{calibrate_scheme2, DetectionProblem, Tolerances};

const DRAWS: usize = 1_000_000;

fn marginal_tail(model: &NoiseModel, deltas: &[f64], seed: u64) -> Vec<f64> {
    let s = model.sampler().unwrap();
    let mut rng = stream(seed, 0, 0);
    let mut hits = vec![0u64; deltas.len()];
    for _ in 0..DRAWS {
        let x = s.draw(&mut rng)[0];
        for (h, d) in hits.iter_mut().zip(deltas) {
            *h += u64::from(x > *d);
        }
    }
    hits.iter().map(|&h| h as f64 / DRAWS as f64).collect()
}

fn within_3se(freq: f64, p: f64) -> bool {
    (freq - p).abs() <= 3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt()
}

#[test]
fn student_marginal_tails() {
    let deltas = [0.5, 1.0, 2.0, 4.0];
    let model = NoiseModel::StudentVec { nu: 4.0, theta: Matrix::identity(3) };
    let oracle = Density::student(4.0);
    for (f, d) in marginal_tail(&model, &deltas, 1).iter().zip(deltas) {
        let p = oracle.tail(d).unwrap();
        assert!(within_3se(*f, p), "δ={d}: {f} vs {p}");
    }
}

#[test]
fn laplace_marginal_tails() {
    let deltas = [2f64.ln(), 0.5, 1.0, 2.0, 4.0];
    let model = NoiseModel::LaplaceVec { lambda: 1.0, theta: Matrix::identity(2) };
    let freqs = marginal_tail(&model, &deltas, 2);
    assert!(within_3se(freqs[0], 0.25), "{}", freqs[0]);
    for (f, d) in freqs.iter().zip(deltas) {
        let p = 0.5 * (-d).exp();
        assert!(within_3se(*f, p), "δ={d}: {f} vs {p}");
    }
}

#[test]
fn mixture_with_inverse_chi_square_is_student() {
    let deltas = [0.5, 1.0, 2.0, 4.0];
    let model =
        NoiseModel::MixtureVec { mixing: MixingLaw::InverseChiSqScaled { nu: 3.0 }, theta: Matrix::identity(1) };
    let oracle = Density::student(3.0);
    for (f, d) in marginal_tail(&model, &deltas, 3).iter().zip(deltas) {
        let p = oracle.tail(d).unwrap();
        assert!(within_3se(*f, p), "δ={d}: {f} vs {p}");
    }
}

#[test]
fn gaussian_covariance() {
    let cov = Matrix::from_rows(&[vec![2.0, 0.6], vec![0.6, 1.0]]).unwrap();
    let n = 200_000;
    let draws = sample(&NoiseModel::GaussianVec { cov: cov.clone() }, n, &mut stream(4, 0, 0)).unwrap();
    for a in 0..2 {
        for b in 0..2 {
            let emp = draws.iter().map(|x| x[a] * x[b]).sum::<f64>() / n as f64;
            // Var(x_a x_b) = Σ_aa Σ_bb + Σ_ab² for a centred Gaussian pair.
            let var = cov[(a, a)] * cov[(b, b)] + cov[(a, b)] * cov[(a, b)];
            assert!((emp - cov[(a, b)]).abs() < 4.0 * (var / n as f64).sqrt(), "({a},{b}): {emp}");
        }
    }
}

#[test]
fn rejects_invalid_models() {
    let big = Matrix::identity(2).scale(1.5);
    assert!(matches!(NoiseModel::StudentVec { nu: 3.0, theta: big }.validate(), Err(SimError::InvalidModel(_))));
    assert!(NoiseModel::StudentVec { nu: -1.0, theta: Matrix::identity(2) }.validate().is_err());
    assert!(NoiseModel::LaplaceVec { lambda: 0.0, theta: Matrix::identity(2) }.validate().is_err());
    let skew = Matrix::from_rows(&[vec![0.5, 0.1], vec![0.0, 0.5]]).unwrap();
    assert!(NoiseModel::StudentVec { nu: 3.0, theta: skew }.validate().is_err());
    let indefinite = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]).unwrap();
    assert!(NoiseModel::GaussianVec { cov: indefinite }.sampler().is_err());
    let edge = Matrix::identity(2).scale(1.0 + 1e-10);
    assert!(NoiseModel::StudentVec { nu: 3.0, theta: edge }.validate().is_ok());
}

#[test]
fn streams_are_keyed() {
    let draw = |s, r, k| stream(s, r, k).random::<u64>();
    assert_eq!(draw(1, 2, 3), draw(1, 2, 3));
    assert_ne!(draw(1, 2, 3), draw(1, 3, 3));
    assert_ne!(draw(1, 2, 3), draw(1, 2, 4));
    assert_ne!(draw(1, 2, 3), draw(2, 2, 3));
}

#[test]
fn wilson_interval() {
    let p = Proportion::new(10, 1000);
    assert!(p.lower < 0.01 && 0.01 < p.upper);
    // Reference values for 10/1000 at 95%.
    assert!((p.lower - 0.005438).abs() < 1e-5 && (p.upper - 0.018313).abs() < 1e-5);
    let z = Proportion::new(0, 100);
    assert_eq!(z.lower, 0.0);
    assert!(z.upper > 0.03 && z.upper < 0.04);
    assert!(p.within(0.01, 3.0));
    assert!(!Proportion::new(30, 1000).within(0.01, 3.0));
}

fn setup(nu: Nu) -> (TrendProblem, Calibration) {
    let tp = trend_problem(8, nu, 1.0, SignalKind::Pulse, 1e4, 0.01).unwrap();
    let cal = calibrate_scheme2(&DetectionProblem::from_trend(&tp).unwrap(), &Tolerances::new(0.01)).unwrap();
    (tp, cal)
}

#[test]
fn reports_are_deterministic() {
    let (tp, cal) = setup(Nu::Finite(3.0));
    let u = vec![0.0; 8];
    let cfg = McConfig { replicates: 100, seed: 9, initial_level: 2.5, jobs: Some(1) };
    let a = estimate_risks(&tp, &cal, &u, &cfg).unwrap();
    let b = estimate_risks(&tp, &cal, &u, &cfg).unwrap();
    let c = estimate_risks(&tp, &cal, &u, &McConfig { jobs: Some(4), ..cfg.clone() }).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.signal.lower <= a.signal.frequency && a.signal.frequency <= a.signal.upper);
    assert!(a.max_plumbing_gap <= 1e-9);
}

#[test]
fn false_alarms_under_nuisance() {
    let (tp, cal) = setup(Nu::Finite(3.0));
    let rep =
        estimate_risks(&tp, &cal, &[0.0; 8], &McConfig { initial_level: -40.0, ..McConfig::new(4000, 21) }).unwrap();
    assert!(rep.signal.within(0.01, 3.0), "{:?}", rep.signal);
}

#[test]
fn large_pulse_is_detected() {
    let (tp, cal) = setup(Nu::Finite(3.0));
    let mut u = vec![0.0; 8];
    u[1] = 1e4;
    let rep = estimate_risks(&tp, &cal, &u, &McConfig::new(1000, 5)).unwrap();
    let detected = rep.signal;
    assert!(detected.frequency >= 0.99 - 3.0 * (0.0099f64 / 1000.0).sqrt(), "{detected:?}");
    assert_eq!(rep.first_signal_counts[0], 0);
    for k in 2..=8 {
        assert!(rep.miss_by(k).frequency <= 0.01 + 3.0 * (0.0099f64 / 1000.0).sqrt());
    }
}

#[test]
fn misses_at_calibrated_magnitude() {
    let (tp, cal) = setup(Nu::Infinite);
    let (k, j) = (4, 5);
    let rho = cal.steps[k - 1].rho[j - 1] * (1.0 + 1e-4);
    let u: Vec<f64> = tp.direction(j).unwrap().iter().map(|v| v * rho).collect();
    let rep = estimate_risks(&tp, &cal, &u, &McConfig::new(4000, 8)).unwrap();
    assert!(rep.miss_by(k).within(0.01, 3.0), "{:?}", rep.miss_by(k));
}

#[test]
fn argument_checks() {
    let (tp, cal) = setup(Nu::Infinite);
    assert!(estimate_risks(&tp, &cal, &[0.0; 7], &McConfig::new(100, 1)).is_err());
    assert!(estimate_risks(&tp, &cal, &[0.0; 8], &McConfig::new(99, 1)).is_err());
}

#[test]
fn noise_model_serde() {
    let m = NoiseModel::MixtureVec { mixing: MixingLaw::Exponential { mean: 2.0 }, theta: Matrix::identity(2) };
    let text = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<NoiseModel>(&text).unwrap(), m);
    assert!(serde_json::from_str::<NoiseModel>(r#"{"kind":"student_vec","nu":3,"theta":[[1]],"x":1}"#).is_err());
}

#[test]
fn general_system_matches_trend_pipeline() {
    use crate::geomsep::ConvexSet;
    use crate::linsys::{build_observation_scheme, trend_system, Whitening};

    let d = 5;
    let tp = trend_problem(d, Nu::Infinite, 0.7, SignalKind::Step, 1e3, 0.01).unwrap();
    let sys = trend_system(d);
    let scheme = build_observation_scheme(&sys, Whitening::MinTraceTheta { mode: Default::default() }).unwrap();
    let signals = (1..=2 * d).map(|j| tp.signal(j).unwrap()).collect();
    let problem = DetectionProblem::from_scheme(&scheme, d, ConvexSet::origin(d), signals, tp.gamma.clone(), 1e3);
    let cal = calibrate_scheme2(&problem, &Tolerances::new(0.01)).unwrap();
    let mut cov = Matrix::identity(2 * d);
    for i in d..2 * d {
        cov[(i, i)] = 0.49;
    }
    let noise = NoiseModel::GaussianVec { cov };
    let model = SystemModel::new(&sys, &scheme, &noise, vec![3.0]).unwrap();
    let rep = estimate_risks_with(&model, &cal, &vec![0.0; d], &McConfig::new(2000, 3)).unwrap();
    assert!(rep.signal.within(0.01, 3.0), "{:?}", rep.signal);
    assert!(rep.max_plumbing_gap <= 1e-9);
    assert_eq!(rep.first_signal_counts.len(), d);
    assert!(SystemModel::new(&sys, &scheme, &NoiseModel::gaussian_iso(3, 1.0), vec![0.0]).is_err());
}
