//! Dense least squares on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

use crate::types::Matrix;

/// Minimum-norm least-squares solution together with the numerical rank.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: Vec<f64>,
    pub rank: usize,
}

pub(crate) fn to_dmatrix(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

/// `argmin ||A x - b||` of smallest norm. The SVD is always taken of the
/// tall orientation so wide systems (more pixels than samples) stay cheap.
pub fn lstsq_min_norm(a: &Matrix, b: &[f64]) -> LstsqSolution {
    assert_eq!(a.rows(), b.len(), "right-hand side length must match rows");
    let (m, n) = a.shape();
    let rhs = DVector::from_column_slice(b);
    if m >= n {
        let svd = to_dmatrix(a).svd(true, true);
        let tol = rank_tol(svd.singular_values.as_slice(), m, n);
        let u = svd.u.as_ref().expect("u computed");
        let vt = svd.v_t.as_ref().expect("v_t computed");
        let utb = u.transpose() * &rhs;
        let mut x = DVector::zeros(n);
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                rank += 1;
                x += vt.row(k).transpose() * (utb[k] / s);
            }
        }
        LstsqSolution {
            x: x.as_slice().to_vec(),
            rank,
        }
    } else {
        // A^T = U S V^T  =>  A^+ b = U S^-1 V^T b
        let at = DMatrix::from_column_slice(n, m, a.as_slice());
        let svd = at.svd(true, true);
        let tol = rank_tol(svd.singular_values.as_slice(), m, n);
        let u = svd.u.as_ref().expect("u computed");
        let vt = svd.v_t.as_ref().expect("v_t computed");
        let vtb = vt * &rhs;
        let mut x = DVector::zeros(n);
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > tol {
                rank += 1;
                x += u.column(k) * (vtb[k] / s);
            }
        }
        LstsqSolution {
            x: x.as_slice().to_vec(),
            rank,
        }
    }
}

fn rank_tol(singular_values: &[f64], m: usize, n: usize) -> f64 {
    let smax = singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    smax * (m.max(n) as f64) * f64::EPSILON
}
