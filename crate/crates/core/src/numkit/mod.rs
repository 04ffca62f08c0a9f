//! Dense numerical kernel: matrices, Jacobi factorizations, PSD helpers,
//! special functions, adaptive quadrature, bisection and a small QP solver.

pub mod linalg;
pub mod matrix;
pub mod qp;
pub mod quad;
pub mod roots;
pub mod special;

use thiserror::Error;

pub use linalg::{
    inverse, lambda_max, lambda_min, min_trace_dominating, orth_complement_rows, pd_inv_sqrt, psd_sqrt, solve, svd,
    sym_eigen, MinTraceMode,
};
pub use matrix::Matrix;
pub use quad::{integrate, quad_line, quad_tail, QuadratureSpec};
pub use roots::{bisect_monotone, first_true};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix is indefinite (eigenvalue {0:.3e})")]
    Indefinite(f64),
    #[error("matrix is singular")]
    Singular,
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("target {target} outside bracket values [{lo}, {hi}]")]
    OutOfBracket { target: f64, lo: f64, hi: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[cfg(test)]
mod tests {
    use super::linalg::householder_q;
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: &[f64]) -> Matrix {
        let data = (0..rows * cols).map(|i| seed[i % seed.len()] * ((i as f64) * 0.37 + 1.0).sin()).collect();
        Matrix::from_row_major(rows, cols, data).unwrap()
    }

    fn orthogonal(n: usize, seed: &[f64]) -> Matrix {
        householder_q(&random_matrix(n, n, seed))
    }

    #[test]
    fn complement_of_diagonal() {
        let b = Matrix::column(&[1.0, 1.0]);
        let m = orth_complement_rows(&b).unwrap();
        assert_eq!(m.shape(), (1, 2));
        let r = 0.5f64.sqrt();
        assert!((m[(0, 0)] - r).abs() < 1e-12 && (m[(0, 1)] + r).abs() < 1e-12);
        assert_eq!(orth_complement_rows(&Matrix::identity(2)).unwrap().rows(), 0);
    }

    #[test]
    fn complement_of_rank_two() {
        let b = random_matrix(5, 2, &[0.3, -1.2, 2.0, 0.7]);
        let m = orth_complement_rows(&b).unwrap();
        assert_eq!(m.rows(), 3);
        assert!(m.matmul(&b).max_abs() < 1e-10);
        assert!(m.gram_rows().sub(&Matrix::identity(3)).max_abs() < 1e-10);
    }

    #[test]
    fn complement_rejects_nan() {
        let b = Matrix::column(&[1.0, f64::NAN]);
        assert_eq!(orth_complement_rows(&b), Err(NumError::NonFinite));
    }

    #[test]
    fn sqrt_examples() {
        let s = psd_sqrt(&Matrix::from_diag(&[4.0, 9.0])).unwrap();
        assert!(s.sub(&Matrix::from_diag(&[2.0, 3.0])).max_abs() < 1e-12);
        let v = orthogonal(3, &[0.4, 1.1, -0.6]);
        let a = v.matmul(&Matrix::from_diag(&[1.0, 2.0, 3.0])).matmul(&v.transpose());
        let s = psd_sqrt(&a).unwrap();
        assert!(s.matmul(&s).sub(&a).max_abs() < 1e-9);
        assert!(matches!(psd_sqrt(&Matrix::from_diag(&[1.0, -1.0])), Err(NumError::Indefinite(_))));
    }

    #[test]
    fn min_trace_examples() {
        let i2 = Matrix::identity(2);
        let o = min_trace_dominating(&i2, &i2, MinTraceMode::SdpRefine).unwrap();
        assert!(o.sub(&i2).max_abs() < 1e-12);
        let o = min_trace_dominating(&i2, &i2, MinTraceMode::Sum).unwrap();
        assert!(o.sub(&i2.scale(2.0)).max_abs() < 1e-12);
        let a = Matrix::from_diag(&[1.0, 0.0]);
        let b = Matrix::from_diag(&[0.0, 1.0]);
        let o = min_trace_dominating(&a, &b, MinTraceMode::SdpRefine).unwrap();
        assert!((o.trace() - 2.0).abs() < 1e-12);
        let z = Matrix::zeros(2, 2);
        for mode in [MinTraceMode::Sum, MinTraceMode::EigScale, MinTraceMode::SdpRefine] {
            assert!(min_trace_dominating(&z, &z, mode).unwrap().max_abs() < 1e-15);
        }
        assert!(min_trace_dominating(&i2, &Matrix::identity(3), MinTraceMode::Sum).is_err());
    }

    #[test]
    fn min_trace_beats_brute_force_grid() {
        // Ω = [[p, r], [r, q]] over a grid; the closed form must not be beaten.
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, -0.5], vec![-0.5, 2.0]]).unwrap();
        let o = min_trace_dominating(&a, &b, MinTraceMode::SdpRefine).unwrap();
        let mut best = f64::INFINITY;
        let steps = 120;
        for ip in 0..=steps {
            for iq in 0..=steps {
                for ir in 0..=steps {
                    let p = 1.0 + 3.0 * ip as f64 / steps as f64;
                    let q = 1.0 + 3.0 * iq as f64 / steps as f64;
                    let r = -2.0 + 4.0 * ir as f64 / steps as f64;
                    if p + q >= best {
                        continue;
                    }
                    let w = Matrix::from_rows(&[vec![p, r], vec![r, q]]).unwrap();
                    if lambda_min(&w.sub(&a)).unwrap() >= -1e-12 && lambda_min(&w.sub(&b)).unwrap() >= -1e-12 {
                        best = p + q;
                    }
                }
            }
        }
        assert!(o.trace() <= best + 1e-12, "closed form {} vs grid {best}", o.trace());
        assert!(best - o.trace() < 0.1);
    }

    fn psd_strategy(n: usize) -> impl Strategy<Value = Matrix> {
        prop::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let b = Matrix::from_row_major(n, n, v).unwrap();
            b.matmul(&b.transpose())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sqrt_squares_back(a in (1usize..=20).prop_flat_map(psd_strategy)) {
            let s = psd_sqrt(&a).unwrap();
            prop_assert!(s.matmul(&s).sub(&a).max_abs() <= 1e-9 * a.max_abs().max(1.0));
        }

        #[test]
        fn min_trace_dominates_and_is_cheapest(
            (a, b) in (1usize..=6).prop_flat_map(|n| (psd_strategy(n), psd_strategy(n)))
        ) {
            let tol = 1e-9 * a.max_abs().max(b.max_abs()).max(1.0);
            let sum = min_trace_dominating(&a, &b, MinTraceMode::Sum).unwrap();
            let eig = min_trace_dominating(&a, &b, MinTraceMode::EigScale).unwrap();
            let refined = min_trace_dominating(&a, &b, MinTraceMode::SdpRefine).unwrap();
            for o in [&sum, &eig, &refined] {
                prop_assert!(lambda_min(&o.sub(&a)).unwrap() >= -tol);
                prop_assert!(lambda_min(&o.sub(&b)).unwrap() >= -tol);
            }
            prop_assert!(refined.trace() <= sum.trace() + tol);
            prop_assert!(refined.trace() <= eig.trace() + tol);
        }

        #[test]
        fn complement_rows_orthonormal(
            (t, r, v) in (2usize..8).prop_flat_map(|t| (Just(t), 1usize..t))
                .prop_flat_map(|(t, r)| (Just(t), Just(r), prop::collection::vec(-1.0f64..1.0, t * r)))
        ) {
            let b = Matrix::from_row_major(t, r, v).unwrap();
            let m = orth_complement_rows(&b).unwrap();
            prop_assert!(m.matmul(&b).max_abs() < 1e-10);
            prop_assert!(m.gram_rows().sub(&Matrix::identity(m.rows())).max_abs() < 1e-10);
        }
    }
}
