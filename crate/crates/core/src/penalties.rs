//! Anisotropic total variation and the selective integration penalty.
//!
//! TV uses the replicated-boundary convention: the first row and column are
//! differenced against themselves, so only interior differences contribute.
//! Subgradients choose `sign(0) = 0` at every kink.

use crate::error::{PairError, Result};
use crate::types::Matrix;

/// Penalty value together with a (sub)gradient of the same shape as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyEval {
    pub value: f64,
    pub gradient: Matrix,
}

#[inline]
fn sign(u: f64) -> f64 {
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn tv_value(b: &Matrix) -> f64 {
    let (p, q) = b.shape();
    let data = b.as_slice();
    let mut total = 0.0;
    for i in 0..p {
        let row = &data[i * q..(i + 1) * q];
        for j in 1..q {
            total += (row[j] - row[j - 1]).abs();
        }
        if i > 0 {
            let above = &data[(i - 1) * q..i * q];
            for j in 0..q {
                total += (row[j] - above[j]).abs();
            }
        }
    }
    total
}

pub fn tv_subgradient(b: &Matrix) -> Matrix {
    let (p, q) = b.shape();
    let data = b.as_slice();
    let mut g = Matrix::zeros(p, q);
    let gd = g.as_mut_slice();
    for i in 0..p {
        for j in 0..q {
            let k = i * q + j;
            if j > 0 {
                let s = sign(data[k] - data[k - 1]);
                gd[k] += s;
                gd[k - 1] -= s;
            }
            if i > 0 {
                let s = sign(data[k] - data[k - q]);
                gd[k] += s;
                gd[k - q] -= s;
            }
        }
    }
    g
}

pub fn tv_eval(b: &Matrix) -> PenaltyEval {
    PenaltyEval {
        value: tv_value(b),
        gradient: tv_subgradient(b),
    }
}

/// Number of components used by fewer than two sources.
pub fn sip_exact(w: &Matrix, zero_tol: f64) -> usize {
    (0..w.cols())
        .filter(|&r| {
            (0..w.rows())
                .filter(|&t| w.get(t, r).abs() > zero_tol)
                .count()
                < 2
        })
        .count()
}

/// Saturated support count of one weight column.
pub fn saturation(column: impl IntoIterator<Item = f64>, tau: f64) -> f64 {
    column.into_iter().map(|w| (w.abs() / tau).min(1.0)).sum()
}

/// Smoothed selective integration penalty and its subgradient.
pub fn sip_smoothed(w: &Matrix, tau: f64) -> Result<PenaltyEval> {
    if !(tau > 0.0) {
        return Err(PairError::InvalidArgument(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let (t_count, r_count) = w.shape();
    let mut gradient = Matrix::zeros(t_count, r_count);
    let mut value = 0.0;
    for r in 0..r_count {
        let q = saturation((0..t_count).map(|t| w.get(t, r)), tau);
        value += (2.0 - q).min(1.0).max(0.0);
        if q > 1.0 && q < 2.0 {
            for t in 0..t_count {
                let v = w.get(t, r);
                if v.abs() < tau {
                    gradient.set(t, r, -sign(v) / tau);
                }
            }
        }
    }
    Ok(PenaltyEval { value, gradient })
}
