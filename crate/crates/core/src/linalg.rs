//! Small dense symmetric eigensolver (cyclic Jacobi) used by MDS and PCA.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("Jacobi iteration did not converge in {0} sweeps")]
    NoConvergence(usize),
}

/// Eigenpairs sorted by decreasing eigenvalue. `vectors[k]` pairs with `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

pub fn symmetric_eigen(a: &[Vec<f64>]) -> Result<SymmetricEigen, LinalgError> {
    let n = a.len();
    if let Some(r) = a.iter().find(|r| r.len() != n) {
        return Err(LinalgError::NotSquare { rows: n, cols: r.len() });
    }
    if a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[i][j] - a[j][i]).abs());
        }
    }
    if asym > 1e-9 * scale.max(1.0) {
        return Err(LinalgError::NotSymmetric(asym));
    }

    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n];
            row[i] = 1.0;
            row
        })
        .collect();

    let total: f64 = m.iter().flatten().map(|x| x * x).sum();
    let tol = f64::EPSILON * f64::EPSILON * total.max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for sweep in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p][q];
                if apq == 0.0 {
                    continue;
                }
                // Off-diagonal entry below the diagonal's precision: drop it.
                let g = 100.0 * apq.abs();
                if sweep > 3 && m[p][p].abs() + g == m[p][p].abs() && m[q][q].abs() + g == m[q][q].abs() {
                    m[p][q] = 0.0;
                    m[q][p] = 0.0;
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * apq);
                let t = Float::signum(theta) / (theta.abs() + Float::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / Float::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]).then(i.cmp(&j)));
    Ok(SymmetricEigen {
        values: order.iter().map(|&k| m[k][k]).collect(),
        vectors: order
            .iter()
            .map(|&k| (0..n).map(|r| v[r][k]).collect())
            .collect(),
    })
}

/// Flip `v` so its first entry with magnitude above `tol` is positive.
pub fn canonicalize_first_nonzero(v: &mut [f64], tol: f64) {
    if let Some(x) = v.iter().find(|x| x.abs() > tol) {
        if *x < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Flip `v` so its largest-magnitude entry is positive (first one on ties).
pub fn canonicalize_largest(v: &mut [f64]) {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = Float::signum(x);
        }
    }
    if sign < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
