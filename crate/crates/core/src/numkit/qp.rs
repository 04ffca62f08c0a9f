//! Primal–dual interior-point solver (Mehrotra predictor–corrector) for small
//! dense convex quadratic programs
//!
//! ```text
//! minimize ½xᵀHx + gᵀx  subject to  A x = b,  G x ≤ h
//! ```
//!
//! with `H` positive semidefinite. Linear programs use `H = 0`.

use super::linalg::Lu;
use super::matrix::{axpy, dot, max_abs, Matrix};
use super::NumError;

#[derive(Clone, Debug)]
pub struct Qp {
    pub h: Matrix,
    pub g: Vec<f64>,
    pub a_eq: Matrix,
    pub b_eq: Vec<f64>,
    pub g_in: Matrix,
    pub h_in: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of the inequality constraints.
    pub z: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iter: 200 }
    }
}

impl Qp {
    pub fn new(n: usize) -> Self {
        Self {
            h: Matrix::zeros(n, n),
            g: vec![0.0; n],
            a_eq: Matrix::zeros(0, n),
            b_eq: vec![],
            g_in: Matrix::zeros(0, n),
            h_in: vec![],
        }
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    fn check(&self) -> Result<(), NumError> {
        let n = self.dim();
        let ok = self.h.shape() == (n, n)
            && self.a_eq.cols() == n
            && self.a_eq.rows() == self.b_eq.len()
            && self.g_in.cols() == n
            && self.g_in.rows() == self.h_in.len();
        if !ok {
            return Err(NumError::Shape("inconsistent QP data".into()));
        }
        let finite = self.h.is_finite()
            && self.a_eq.is_finite()
            && self.g_in.is_finite()
            && self.g.iter().chain(&self.b_eq).chain(&self.h_in).all(|v| v.is_finite());
        if !finite {
            return Err(NumError::NonFinite);
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.h.matvec(x)) + dot(&self.g, x)
    }
}

const PIVOT_FLOOR: f64 = 1e-15;
/// Best residual still accepted when the iteration stalls at roundoff.
const STALL_ACCEPT: f64 = 1e-8;

struct Kkt {
    lu: Lu,
    n: usize,
}

impl Kkt {
    fn new(qp: &Qp, w: &[f64]) -> Result<Self, NumError> {
        let n = qp.dim();
        let p = qp.b_eq.len();
        let mut k = Matrix::zeros(n + p, n + p);
        for i in 0..n {
            for j in 0..n {
                let mut v = qp.h[(i, j)];
                for (r, &wr) in w.iter().enumerate() {
                    v += qp.g_in[(r, i)] * wr * qp.g_in[(r, j)];
                }
                k[(i, j)] = v;
            }
        }
        // Scaled by the problem data only, so large barrier weights do not
        // swamp the step.
        let scale = 1.0 + qp.h.max_abs() + qp.g_in.max_abs().powi(2) + qp.a_eq.max_abs();
        let reg = 1e-13 * scale;
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for r in 0..p {
            for j in 0..n {
                k[(n + r, j)] = qp.a_eq[(r, j)];
                k[(j, n + r)] = qp.a_eq[(r, j)];
            }
            k[(n + r, n + r)] = -1e-13;
        }
        Ok(Self { lu: Lu::with_pivot_floor(&k, PIVOT_FLOOR)?, n })
    }

    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rhs = r1.to_vec();
        rhs.extend_from_slice(r2);
        let sol = self.lu.solve(&rhs);
        (sol[..self.n].to_vec(), sol[self.n..].to_vec())
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter().zip(dv).filter(|(_, &d)| d < 0.0).map(|(&x, &d)| -x / d).fold(f64::INFINITY, f64::min)
}

pub fn solve_qp(qp: &Qp, opts: &QpOptions) -> Result<QpSolution, NumError> {
    qp.check()?;
    let n = qp.dim();
    let m = qp.h_in.len();
    let scale_b = 1.0 + max_abs(&qp.b_eq);
    let scale_h = 1.0 + max_abs(&qp.h_in);

    // Least-squares start: minimize ½xᵀHx + gᵀx + ½‖Gx − h‖² subject to Ax = b.
    let init = Kkt::new(qp, &vec![1.0; m])?;
    let mut r1: Vec<f64> = qp.g.iter().map(|v| -v).collect();
    for r in 0..m {
        axpy(qp.h_in[r], qp.g_in.row(r), &mut r1);
    }
    let (mut x, mut y) = init.solve(&r1, &qp.b_eq);
    let gx = qp.g_in.matvec(&x);
    let mut s: Vec<f64> = qp.h_in.iter().zip(&gx).map(|(h, g)| (h - g).max(1.0)).collect();
    let mut z = vec![1.0; m];
    let mut best = (f64::INFINITY, x.clone(), z.clone(), 0);

    for it in 0..opts.max_iter {
        let hx = qp.h.matvec(&x);
        let gx = qp.g_in.matvec(&x);
        let mut rd: Vec<f64> = hx.iter().zip(&qp.g).map(|(a, b)| a + b).collect();
        let aty = qp.a_eq.tmatvec(&y);
        let gtz = qp.g_in.tmatvec(&z);
        for i in 0..n {
            rd[i] += aty[i] + gtz[i];
        }
        let rp: Vec<f64> = qp.a_eq.matvec(&x).iter().zip(&qp.b_eq).map(|(a, b)| a - b).collect();
        let ri: Vec<f64> = (0..m).map(|i| gx[i] + s[i] - qp.h_in[i]).collect();
        let gap = dot(&s, &z);
        let obj = 0.5 * dot(&x, &hx) + dot(&qp.g, &x);
        let dscale = 1.0 + max_abs(&qp.g).max(max_abs(&hx)).max(max_abs(&gtz)).max(max_abs(&aty));
        let pres = (max_abs(&rp) / scale_b).max(max_abs(&ri) / scale_h);
        let dres = max_abs(&rd) / dscale;
        let rel_gap = gap / (1.0 + obj.abs());
        if pres <= opts.tol && dres <= opts.tol && rel_gap <= opts.tol {
            return Ok(QpSolution { objective: qp.objective(&x), x, z, iterations: it });
        }
        let merit = pres.max(dres).max(rel_gap);
        if merit < best.0 {
            best = (merit, x.clone(), z.clone(), it);
        }
        if max_abs(&x) > 1e14 || max_abs(&z) > 1e14 {
            if best.0 <= STALL_ACCEPT {
                break;
            }
            return Err(NumError::NonConvergence("QP iterates diverged (infeasible or unbounded)".into()));
        }
        let mu = if m > 0 { gap / m as f64 } else { 0.0 };
        let w: Vec<f64> = (0..m).map(|i| z[i] / s[i]).collect();
        // Complementarity has collapsed while a residual stalls at roundoff.
        if (m > 0 && mu < 1e-200) || w.iter().any(|v| !v.is_finite()) {
            break;
        }
        let Ok(kkt) = Kkt::new(qp, &w) else { break };
        let direction = |rc: &[f64]| {
            let mut r1: Vec<f64> = rd.iter().map(|v| -v).collect();
            for r in 0..m {
                let coef = -(-rc[r] + z[r] * ri[r]) / s[r];
                axpy(coef, qp.g_in.row(r), &mut r1);
            }
            let r2: Vec<f64> = rp.iter().map(|v| -v).collect();
            let (dx, dy) = kkt.solve(&r1, &r2);
            let gdx = qp.g_in.matvec(&dx);
            let ds: Vec<f64> = (0..m).map(|i| -ri[i] - gdx[i]).collect();
            let dz: Vec<f64> = (0..m).map(|i| (-rc[i] - z[i] * ds[i]) / s[i]).collect();
            (dx, dy, ds, dz)
        };
        let rc_aff: Vec<f64> = (0..m).map(|i| s[i] * z[i]).collect();
        let (dx, dy, ds, dz) = if m > 0 {
            let (_, _, ds_a, dz_a) = direction(&rc_aff);
            let a_aff = 1f64.min(max_step(&s, &ds_a)).min(max_step(&z, &dz_a));
            let mu_aff = (0..m).map(|i| (s[i] + a_aff * ds_a[i]) * (z[i] + a_aff * dz_a[i])).sum::<f64>() / m as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let rc: Vec<f64> = (0..m).map(|i| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu).collect();
            direction(&rc)
        } else {
            direction(&rc_aff)
        };
        let alpha = if m > 0 { 1f64.min(0.99 * max_step(&s, &ds).min(max_step(&z, &dz))) } else { 1.0 };
        axpy(alpha, &dx, &mut x);
        axpy(alpha, &dy, &mut y);
        axpy(alpha, &ds, &mut s);
        axpy(alpha, &dz, &mut z);
    }
    let (merit, x, z, iterations) = best;
    if merit <= STALL_ACCEPT {
        return Ok(QpSolution { objective: qp.objective(&x), x, z, iterations });
    }
    Err(NumError::NonConvergence(format!("QP stalled at residual {merit:.3e}")))
}
