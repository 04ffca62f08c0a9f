use serde::{Deserialize, Serialize};

use super::{block_diag, concat, ConvexSet, GeomError, Lifted};
use crate::numkit::matrix::{dot, max_abs, norm, sub};
use crate::numkit::qp::{solve_qp, Qp, QpOptions};
use crate::numkit::{Matrix, NumError};

/// Proximal weight keeping the lifted programs bounded along directions the
/// objective does not see.
const REG: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-8;
const INTERSECT_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceMethod {
    /// One quadratic program over both sets jointly.
    #[default]
    JointQp,
    /// Alternate Euclidean projections until the iterates stop moving.
    AlternatingProjections { max_iter: usize, tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparatorCert {
    /// `‖x1* − x2*‖`
    pub opt: f64,
    pub x1_star: Vec<f64>,
    pub x2_star: Vec<f64>,
    pub h_star: Vec<f64>,
    pub c_star: f64,
    /// Half the distance.
    pub delta: f64,
    /// `‖P1(x2*) − x1*‖ + ‖P2(x1*) − x2*‖`
    pub kkt_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportAudit {
    /// `min_{x ∈ X1} hᵀx`
    pub min_over_first: f64,
    /// `max_{x ∈ X2} hᵀx`
    pub max_over_second: f64,
    /// `min_{X1} hᵀx − (c + δ)`; nonnegative for a valid certificate.
    pub first_margin: f64,
    /// `(c − δ) − max_{X2} hᵀx`; nonnegative for a valid certificate.
    pub second_margin: f64,
}

impl SupportAudit {
    pub fn passes(&self, tol: f64) -> bool {
        self.first_margin >= -tol && self.second_margin >= -tol
    }
}

impl SeparatorCert {
    /// Evaluate the affine statistic `hᵀx − c`.
    pub fn statistic(&self, x: &[f64]) -> f64 {
        dot(&self.h_star, x) - self.c_star
    }

    /// Check that the statistic is at least `δ` on `x1` and at most `−δ` on `x2`.
    pub fn audit(&self, x1: &ConvexSet, x2: &ConvexSet) -> Result<SupportAudit, GeomError> {
        let neg: Vec<f64> = self.h_star.iter().map(|v| -v).collect();
        let min1 = -support(x1, &neg)?;
        let max2 = support(x2, &self.h_star)?;
        Ok(SupportAudit {
            min_over_first: min1,
            max_over_second: max2,
            first_margin: min1 - (self.c_star + self.delta),
            second_margin: (self.c_star - self.delta) - max2,
        })
    }
}

struct Constraints {
    g: Matrix,
    h: Vec<f64>,
    e: Matrix,
    f: Vec<f64>,
}

impl Constraints {
    fn of(l: &Lifted) -> Self {
        Self { g: l.g.clone(), h: l.h.clone(), e: l.e.clone(), f: l.f.clone() }
    }

    fn joint(a: &Lifted, b: &Lifted) -> Self {
        Self { g: block_diag(&a.g, &b.g), h: concat(&a.h, &b.h), e: block_diag(&a.e, &b.e), f: concat(&a.f, &b.f) }
    }

    fn into_qp(self, h: Matrix, g: Vec<f64>) -> Qp {
        Qp { h, g, a_eq: self.e, b_eq: self.f, g_in: self.g, h_in: self.h }
    }
}

fn regularize(h: &mut Matrix) {
    let n = h.rows();
    let scale = 1.0 + (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
    for i in 0..n {
        h[(i, i)] += REG * scale;
    }
}

/// Solve a lifted program; on failure decide whether the set was empty.
fn solve_lifted(qp: &Qp, sets: &[&Lifted]) -> Result<Vec<f64>, GeomError> {
    match solve_qp(qp, &QpOptions::default()) {
        Ok(sol) => Ok(sol.x),
        Err(err) => {
            for l in sets {
                if feasible_y(l)?.is_none() {
                    return Err(GeomError::Infeasible("constraints admit no point".into()));
                }
            }
            Err(GeomError::Numeric(err))
        }
    }
}

/// A feasible lifted point, or `None` when the constraints are inconsistent.
fn feasible_y(l: &Lifted) -> Result<Option<Vec<f64>>, GeomError> {
    let p = l.vars();
    let tol = FEAS_TOL * l.constraint_scale();
    if p == 0 {
        return Ok((l.violation(&[]) <= tol).then(Vec::new));
    }
    // min t  s.t.  Gy − t ≤ h,  |Ey − f| ≤ t,  t ≥ −1
    let (q, r) = (l.g.rows(), l.e.rows());
    let mut g = Matrix::zeros(q + 2 * r + 1, p + 1);
    let mut h = Vec::with_capacity(q + 2 * r + 1);
    g.set_block(0, 0, &l.g);
    for i in 0..q {
        g[(i, p)] = -1.0;
    }
    h.extend_from_slice(&l.h);
    g.set_block(q, 0, &l.e);
    g.set_block(q + r, 0, &l.e.scale(-1.0));
    for i in 0..2 * r {
        g[(q + i, p)] = -1.0;
    }
    h.extend_from_slice(&l.f);
    h.extend(l.f.iter().map(|v| -v));
    g[(q + 2 * r, p)] = -1.0;
    h.push(1.0);
    let mut hess = Matrix::zeros(p + 1, p + 1);
    regularize(&mut hess);
    let mut grad = vec![0.0; p + 1];
    grad[p] = 1.0;
    let qp = Qp { h: hess, g: grad, a_eq: Matrix::zeros(0, p + 1), b_eq: vec![], g_in: g, h_in: h };
    let sol = solve_qp(&qp, &QpOptions::default())?;
    let y = sol.x[..p].to_vec();
    Ok((l.violation(&y) <= tol).then_some(y))
}

/// Some point of the set, or `None` when it is empty.
pub fn feasible_point(set: &ConvexSet) -> Result<Option<Vec<f64>>, GeomError> {
    let l = set.lift()?;
    Ok(feasible_y(&l)?.map(|y| l.point(&y)))
}

/// Euclidean projection of `point` onto `set`.
pub fn project(set: &ConvexSet, point: &[f64]) -> Result<Vec<f64>, GeomError> {
    match set {
        ConvexSet::Box { lower, upper } if lower.len() == point.len() && upper.len() == point.len() => {
            if lower.iter().zip(upper).any(|(l, u)| l > u) {
                return Err(GeomError::Infeasible("box with lower > upper".into()));
            }
            return Ok(point.iter().zip(lower.iter().zip(upper)).map(|(x, (l, u))| x.clamp(*l, *u)).collect());
        }
        ConvexSet::Singleton { point: p } if p.len() == point.len() => return Ok(p.clone()),
        _ => {}
    }
    let l = set.lift()?;
    if l.dim() != point.len() {
        return Err(GeomError::Dimension(format!(
            "point of length {} for a set in dimension {}",
            point.len(),
            l.dim()
        )));
    }
    if l.vars() == 0 {
        if feasible_y(&l)?.is_none() {
            return Err(GeomError::Infeasible("constraints admit no point".into()));
        }
        return Ok(l.offset.clone());
    }
    let mt = l.map.transpose();
    let mut hess = mt.matmul(&l.map);
    regularize(&mut hess);
    let grad = mt.matvec(&sub(&l.offset, point));
    let qp = Constraints::of(&l).into_qp(hess, grad);
    let y = solve_lifted(&qp, &[&l])?;
    Ok(l.point(&y))
}

/// `max_{x ∈ set} dirᵀx`.
pub fn support(set: &ConvexSet, dir: &[f64]) -> Result<f64, GeomError> {
    let l = set.lift()?;
    if l.dim() != dir.len() {
        return Err(GeomError::Dimension(format!(
            "direction of length {} for a set in dimension {}",
            dir.len(),
            l.dim()
        )));
    }
    let base = dot(dir, &l.offset);
    if l.vars() == 0 {
        if feasible_y(&l)?.is_none() {
            return Err(GeomError::Infeasible("constraints admit no point".into()));
        }
        return Ok(base);
    }
    let c = l.map.tmatvec(dir);
    let mut hess = Matrix::zeros(l.vars(), l.vars());
    let scale = 1.0 + max_abs(&c);
    for i in 0..l.vars() {
        hess[(i, i)] = REG * scale;
    }
    let grad: Vec<f64> = c.iter().map(|v| -v).collect();
    let qp = Constraints::of(&l).into_qp(hess, grad);
    let y = solve_lifted(&qp, &[&l])?;
    Ok(base + dot(&c, &y))
}

/// Nearest pair `(x1, x2)` without the intersection check.
pub(crate) fn closest_pair(
    x1: &ConvexSet,
    x2: &ConvexSet,
    method: DistanceMethod,
) -> Result<(Vec<f64>, Vec<f64>), GeomError> {
    let (l1, l2) = (x1.lift()?, x2.lift()?);
    if l1.dim() != l2.dim() {
        return Err(GeomError::Dimension(format!("sets in dimensions {} and {}", l1.dim(), l2.dim())));
    }
    match method {
        DistanceMethod::JointQp => {
            let (p1, p2) = (l1.vars(), l2.vars());
            if p1 + p2 == 0 {
                for l in [&l1, &l2] {
                    if feasible_y(l)?.is_none() {
                        return Err(GeomError::Infeasible("constraints admit no point".into()));
                    }
                }
                return Ok((l1.offset.clone(), l2.offset.clone()));
            }
            // x1 − x2 = [M1, −M2] y + (b1 − b2)
            let joint = l1.map.hstack(&l2.map.scale(-1.0));
            let jt = joint.transpose();
            let mut hess = jt.matmul(&joint);
            regularize(&mut hess);
            let grad = jt.matvec(&sub(&l1.offset, &l2.offset));
            let qp = Constraints::joint(&l1, &l2).into_qp(hess, grad);
            let y = solve_lifted(&qp, &[&l1, &l2])?;
            Ok((l1.point(&y[..p1]), l2.point(&y[p1..])))
        }
        DistanceMethod::AlternatingProjections { max_iter, tol } => {
            let start = feasible_y(&l1)?.ok_or_else(|| GeomError::Infeasible("first set is empty".into()))?;
            let mut a = l1.point(&start);
            for _ in 0..max_iter {
                let b = project(x2, &a)?;
                let next = project(x1, &b)?;
                let moved = norm(&sub(&next, &a));
                a = next;
                if moved <= tol * (1.0 + norm(&a)) {
                    let b = project(x2, &a)?;
                    return Ok((a, b));
                }
            }
            Err(GeomError::Numeric(NumError::NonConvergence(format!(
                "alternating projections after {max_iter} iterations"
            ))))
        }
    }
}

/// Euclidean separation of `x1` and `x2` with the joint quadratic program.
pub fn min_distance(x1: &ConvexSet, x2: &ConvexSet) -> Result<SeparatorCert, GeomError> {
    min_distance_with(x1, x2, DistanceMethod::JointQp)
}

pub fn min_distance_with(x1: &ConvexSet, x2: &ConvexSet, method: DistanceMethod) -> Result<SeparatorCert, GeomError> {
    let (a, b) = closest_pair(x1, x2, method)?;
    let diff = sub(&a, &b);
    let opt = norm(&diff);
    if opt < INTERSECT_TOL * (1.0 + norm(&a) + norm(&b)) {
        return Err(GeomError::IntersectingSets { distance: opt });
    }
    let h_star: Vec<f64> = diff.iter().map(|v| v / opt).collect();
    let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    let c_star = 0.5 * dot(&h_star, &mid);
    let gap1 = norm(&sub(&project(x1, &b)?, &a));
    let gap2 = norm(&sub(&project(x2, &a)?, &b));
    Ok(SeparatorCert { opt, x1_star: a, x2_star: b, h_star, c_star, delta: 0.5 * opt, kkt_residual: gap1 + gap2 })
}
