//! Small dense factorizations: cyclic Jacobi for symmetric eigenproblems,
//! one-sided Jacobi SVD, Householder QR and LU with partial pivoting.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use super::NumError;

/// Relative singular-value cutoff used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues in ascending order with matching eigenvectors as columns.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymEigen {
    /// `V f(Λ) Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let mut out = Matrix::zeros(n, n);
        for (k, &lam) in self.values.iter().enumerate() {
            let w = f(lam);
            if w == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * w;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)];
                }
            }
        }
        out
    }
}

pub fn sym_eigen(a: &Matrix) -> Result<SymEigen, NumError> {
    if a.rows() != a.cols() {
        return Err(NumError::Shape(format!("eigen of non-square {}x{}", a.rows(), a.cols())));
    }
    if !a.is_finite() {
        return Err(NumError::NonFinite);
    }
    let n = a.rows();
    let mut m = a.symmetrized();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        if off.sqrt() <= 1e-16 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_col(dst, &v.col(src));
    }
    Ok(SymEigen { values, vectors })
}

pub fn lambda_min(a: &Matrix) -> Result<f64, NumError> {
    Ok(sym_eigen(a)?.values.first().copied().unwrap_or(0.0))
}

pub fn lambda_max(a: &Matrix) -> Result<f64, NumError> {
    Ok(sym_eigen(a)?.values.last().copied().unwrap_or(0.0))
}

/// Thin SVD: `A = U diag(s) Vᵀ` with singular values in descending order.
/// `u` has one column per singular value; columns for zero singular values
/// are zero.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn rank(&self, tol: f64) -> usize {
        let smax = self.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&x| x > tol * smax).count()
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd, NumError> {
    if !a.is_finite() {
        return Err(NumError::NonFinite);
    }
    let (m, n) = a.shape();
    // Work on columns: w holds the columns of A V.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.col(j)).collect();
    let mut v = Matrix::identity(n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 { 1.0 } else { zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt()) };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (xp, xq) = (w[p][i], w[q][i]);
                    w[p][i] = c * xp - s * xq;
                    w[q][i] = s * xp + c * xq;
                }
                for i in 0..n {
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sig: Vec<f64> = w.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]));
    let mut u = Matrix::zeros(m, n);
    let mut vs = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        s.push(sig[src]);
        if sig[src] > 0.0 {
            for i in 0..m {
                u[(i, dst)] = w[src][i] / sig[src];
            }
        }
        vs.set_col(dst, &v.col(src));
    }
    Ok(Svd { u, s, v: vs })
}

/// Full orthogonal factor `Q` (t×t) of the Householder QR of `x` (t×r).
pub fn householder_q(x: &Matrix) -> Matrix {
    let (t, r) = x.shape();
    let mut a = x.clone();
    let mut q = Matrix::identity(t);
    for k in 0..r.min(t.saturating_sub(1)) {
        let col: Vec<f64> = (k..t).map(|i| a[(i, k)]).collect();
        let alpha = norm(&col);
        if alpha == 0.0 {
            continue;
        }
        let mut vh = col.clone();
        vh[0] += if col[0] >= 0.0 { alpha } else { -alpha };
        let vv = dot(&vh, &vh);
        if vv == 0.0 {
            continue;
        }
        // a ← H a on rows k..t
        for j in 0..r {
            let s: f64 = (k..t).map(|i| vh[i - k] * a[(i, j)]).sum::<f64>() * 2.0 / vv;
            for i in k..t {
                a[(i, j)] -= s * vh[i - k];
            }
        }
        // q ← q H on columns k..t
        for i in 0..t {
            let s: f64 = (k..t).map(|l| q[(i, l)] * vh[l - k]).sum::<f64>() * 2.0 / vv;
            for l in k..t {
                q[(i, l)] -= s * vh[l - k];
            }
        }
    }
    q
}

/// Flip each row so its first entry above `1e-12` in magnitude is positive.
pub fn canonical_row_signs(m: &mut Matrix) {
    for i in 0..m.rows() {
        let lead = m.row(i).iter().copied().find(|v| v.abs() > 1e-12);
        if matches!(lead, Some(v) if v < 0.0) {
            for j in 0..m.cols() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Rows forming an orthonormal basis of the orthogonal complement of
/// `range(b)`; `b` is t×p and the result is (t − rank)×t.
pub fn orth_complement_rows(b: &Matrix) -> Result<Matrix, NumError> {
    if !b.is_finite() {
        return Err(NumError::NonFinite);
    }
    let t = b.rows();
    let dec = svd(b)?;
    let r = dec.rank(RANK_TOL);
    let ur = dec.u.block(0, t, 0, r);
    let q = householder_q(&ur);
    let mut out = q.block(0, t, r, t).transpose();
    canonical_row_signs(&mut out);
    Ok(out)
}

fn check_psd_input(a: &Matrix) -> Result<SymEigen, NumError> {
    if !a.is_symmetric(1e-12) {
        return Err(NumError::NotSymmetric);
    }
    let eig = sym_eigen(a)?;
    let scale = 1.0f64.max(a.max_abs());
    if let Some(&lmin) = eig.values.first() {
        if lmin < -1e-12 * scale {
            return Err(NumError::Indefinite(lmin));
        }
    }
    Ok(eig)
}

/// Symmetric PSD square root; slightly negative eigenvalues are clamped.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix, NumError> {
    let eig = check_psd_input(a)?;
    Ok(eig.reconstruct_with(|l| l.max(0.0).sqrt()))
}

/// Inverse square root of a positive definite matrix.
pub fn pd_inv_sqrt(a: &Matrix) -> Result<Matrix, NumError> {
    let eig = check_psd_input(a)?;
    let lmax = eig.values.last().copied().unwrap_or(0.0);
    if eig.values.first().is_some_and(|&l| l <= 1e-12 * lmax.max(1e-300)) {
        return Err(NumError::Singular);
    }
    Ok(eig.reconstruct_with(|l| 1.0 / l.sqrt()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinTraceMode {
    Sum,
    EigScale,
    #[default]
    SdpRefine,
}

impl MinTraceMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sum => "sum",
            Self::EigScale => "eig_scale",
            Self::SdpRefine => "sdp_refine",
        }
    }
}

/// A matrix `Ω` with `Ω ⪰ a` and `Ω ⪰ b`.
///
/// `SdpRefine` starts from the cheaper of the other two modes and moves to
/// `(a+b)/2 + |a−b|/2`. That point is feasible, and its trace
/// `tr b + tr (a−b)₊` equals the value of the dual problem
/// `max {tr(Xa) + tr((I−X)b) : 0 ⪯ X ⪯ I}`, so it is the minimum-trace
/// dominating matrix.
pub fn min_trace_dominating(a: &Matrix, b: &Matrix, mode: MinTraceMode) -> Result<Matrix, NumError> {
    if a.shape() != b.shape() || a.rows() != a.cols() {
        return Err(NumError::Shape(format!("min-trace inputs {:?} and {:?}", a.shape(), b.shape())));
    }
    let n = a.rows();
    let sum = || a.add(b);
    let eig_scale = || -> Result<Matrix, NumError> {
        let l = lambda_max(a)?.max(lambda_max(b)?).max(0.0);
        Ok(Matrix::identity(n).scale(l))
    };
    match mode {
        MinTraceMode::Sum => Ok(sum()),
        MinTraceMode::EigScale => eig_scale(),
        MinTraceMode::SdpRefine => {
            let s = sum();
            let e = eig_scale()?;
            let start = if e.trace() < s.trace() { e } else { s };
            let diff = sym_eigen(&a.sub(b))?;
            let cand = a.add(b).scale(0.5).add(&diff.reconstruct_with(|l| 0.5 * l.abs()));
            let cand = cand.symmetrized();
            let tol = 1e-9 * 1.0f64.max(a.max_abs()).max(b.max_abs());
            let feasible = lambda_min(&cand.sub(a))? >= -tol && lambda_min(&cand.sub(b))? >= -tol;
            if feasible && cand.trace() <= start.trace() + tol {
                Ok(cand)
            } else {
                Ok(start)
            }
        }
    }
}

const PINNED_PIVOT: f64 = 1e64;

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self, NumError> {
        Self::factor(a, None)
    }

    /// Factorization in which a pivot below `rel` times the largest entry of
    /// its original row is replaced by a huge value, pinning the matching
    /// solution component near zero. Used for interior-point systems that
    /// lose rank to cancellation.
    pub fn with_pivot_floor(a: &Matrix, rel: f64) -> Result<Self, NumError> {
        Self::factor(a, Some(rel))
    }

    fn factor(a: &Matrix, floor: Option<f64>) -> Result<Self, NumError> {
        let n = a.rows();
        if a.cols() != n {
            return Err(NumError::Shape("LU of non-square matrix".into()));
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(1e-300);
        let row_scale: Vec<f64> = (0..n).map(|i| a.row(i).iter().fold(0.0f64, |m, v| m.max(v.abs()))).collect();
        for k in 0..n {
            let (piv, pval) =
                (k..n).map(|i| (i, lu[(i, k)].abs())).max_by(|x, y| x.1.total_cmp(&y.1)).expect("nonempty range");
            if !pval.is_finite() {
                return Err(NumError::Singular);
            }
            if let Some(rel) = floor {
                if pval <= rel * row_scale[perm[piv]] {
                    lu[(k, k)] = PINNED_PIVOT;
                    for i in k + 1..n {
                        lu[(i, k)] = 0.0;
                    }
                    continue;
                }
            } else if pval <= 1e-300 * scale {
                return Err(NumError::Singular);
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        x
    }
}

pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumError> {
    Ok(Lu::new(a)?.solve(b))
}

pub fn inverse(a: &Matrix) -> Result<Matrix, NumError> {
    let lu = Lu::new(a)?;
    let n = a.rows();
    let mut out = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        out.set_col(j, &lu.solve(&e));
    }
    Ok(out)
}
