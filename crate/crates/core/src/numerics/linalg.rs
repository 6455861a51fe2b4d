//! Dense factorizations and the linear assignment solver.
//!
//! Eigen- and singular-value decompositions delegate to `nalgebra`; the
//! assignment solver is the O(n²m) shortest-augmenting-path form of the
//! Hungarian method with row/column potentials.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order and the matching unit eigenvectors
/// as the columns of the second matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if m.rows() != m.cols() {
        return Err(Error::Shape {
            op: "symmetric_eigen",
            left: m.shape(),
            right: (m.cols(), m.rows()),
        });
    }
    let eig = nalgebra::SymmetricEigen::new(to_na(m));
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(m.rows(), m.rows());
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..m.rows() {
            vectors[(r, dst)] = eig.eigenvectors[(r, src)];
        }
    }
    Ok((values, vectors))
}

/// Singular values, descending.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let svd = to_na(m).svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// 2-norm condition number; `∞` for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Minimum-norm least-squares solution of `design · β ≈ target`.
///
/// Singular values below `1e-10` of the largest are treated as zero, so a
/// rank-deficient design yields the pseudo-inverse solution. Fails only on
/// an all-zero or non-finite design.
pub fn least_squares(design: &Matrix, target: &Matrix) -> Result<Matrix> {
    if design.rows() != target.rows() {
        return Err(Error::Shape {
            op: "least_squares",
            left: design.shape(),
            right: target.shape(),
        });
    }
    if !design.is_finite() || !target.is_finite() {
        return Err(Error::metric("least squares on non-finite values"));
    }
    let svd = to_na(design).svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if !(smax > 0.0) {
        return Err(Error::metric(format!(
            "all-zero regression design ({}x{})",
            design.rows(),
            design.cols()
        )));
    }
    let beta = svd
        .solve(&to_na(target), 1e-10 * smax)
        .map_err(|e| Error::metric(format!("least squares failed: {e}")))?;
    Ok(from_na(&beta))
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Needs `rows ≤ cols`; returns `assignment[row] = col`.
pub fn hungarian(cost: &Matrix) -> Result<Vec<usize>> {
    let n = cost.rows();
    let m = cost.cols();
    if n > m {
        return Err(Error::Shape {
            op: "hungarian",
            left: cost.shape(),
            right: (m, n),
        });
    }
    if !cost.is_finite() {
        return Err(Error::contract("hungarian: non-finite cost"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}
