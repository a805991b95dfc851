//! Small dense symmetric-matrix helpers for the optimizer: Cholesky
//! factorization, triangular solves and inversion. Matrices are row-major
//! `Vec<f64>` of dimension `k * k`; only sizes up to a few dozen appear.

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// On failure returns the index of the first non-positive pivot.
pub(crate) fn cholesky(a: &[f64], k: usize) -> Result<Vec<f64>, usize> {
    debug_assert_eq!(a.len(), k * k);
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= l[i * k + m] * l[j * k + m];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(i);
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Ok(l)
}

/// Solve `A x = b` given the Cholesky factor `L` of `A`.
pub(crate) fn chol_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    // Forward: L y = b.
    let mut y = vec![0.0; k];
    for i in 0..k {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * k + j] * y[j];
        }
        y[i] = s / l[i * k + i];
    }
    // Backward: L^T x = y.
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = y[i];
        for j in i + 1..k {
            s -= l[j * k + i] * x[j];
        }
        x[i] = s / l[i * k + i];
    }
    x
}

/// Full inverse from a Cholesky factor, by solving against unit vectors.
pub(crate) fn chol_inverse(l: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    let mut e = vec![0.0; k];
    for col in 0..k {
        e[col] = 1.0;
        let x = chol_solve(l, k, &e);
        e[col] = 0.0;
        for row in 0..k {
            inv[row * k + col] = x[row];
        }
    }
    inv
}

/// Inverse of a lower-triangular matrix by forward substitution; the result
/// is again lower triangular.
pub(crate) fn lower_tri_inverse(l: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    for i in 0..k {
        inv[i * k + i] = 1.0 / l[i * k + i];
        for j in 0..i {
            let mut s = 0.0;
            for m in j..i {
                s += l[i * k + m] * inv[m * k + j];
            }
            inv[i * k + j] = -s / l[i * k + i];
        }
    }
    inv
}

/// `A B` for row-major `k x k` matrices.
pub(crate) fn mat_mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        for m in 0..k {
            let aim = a[i * k + m];
            if aim == 0.0 {
                continue;
            }
            for j in 0..k {
                c[i * k + j] += aim * b[m * k + j];
            }
        }
    }
    c
}

/// `A J^T` where both are `k x k`, i.e. `C[i][j] = sum_m A[i][m] J[j][m]`.
pub(crate) fn mat_mul_transpose(a: &[f64], j: &[f64], k: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * k];
    for i in 0..k {
        for jj in 0..k {
            let mut s = 0.0;
            for m in 0..k {
                s += a[i * k + m] * j[jj * k + m];
            }
            c[i * k + jj] = s;
        }
    }
    c
}
