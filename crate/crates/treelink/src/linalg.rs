//! Small dense matrix kernels: LU decomposition with partial pivoting,
//! log-determinant in sign/log-magnitude form, and inversion.
//!
//! Matrices here are tiny (a handful to a few hundred rows), so plain
//! `Vec<Vec<f64>>` with O(n^3) kernels is appropriate.

/// Absolute pivot magnitude below which a matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-300;

struct Lu {
    /// Packed L (unit lower, below diagonal) and U (on and above diagonal).
    lu: Vec<Vec<f64>>,
    /// Row permutation: `perm[i]` is the original row stored at position i.
    perm: Vec<usize>,
    /// Sign of the permutation, 0 if a pivot underflowed.
    sign: i8,
}

fn decompose(a: &[Vec<f64>]) -> Lu {
    let n = a.len();
    let mut lu: Vec<Vec<f64>> = a.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign: i8 = 1;
    for k in 0..n {
        // Partial pivoting: largest magnitude in column k at or below row k.
        let mut pivot_row = k;
        let mut pivot_mag = lu[k][k].abs();
        for r in (k + 1)..n {
            let mag = lu[r][k].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if !(pivot_mag > SINGULAR_TOL) {
            sign = 0;
            // Leave the remaining factorization unfinished; callers treat
            // sign == 0 as structurally singular.
            return Lu { lu, perm, sign };
        }
        if pivot_row != k {
            lu.swap(k, pivot_row);
            perm.swap(k, pivot_row);
            sign = -sign;
        }
        let pivot = lu[k][k];
        for r in (k + 1)..n {
            let factor = lu[r][k] / pivot;
            lu[r][k] = factor;
            for c in (k + 1)..n {
                lu[r][c] -= factor * lu[k][c];
            }
        }
    }
    Lu { lu, perm, sign }
}

/// Determinant as `(log |det|, sign)` where sign is -1, 0 or +1.
///
/// Sign 0 means the matrix is singular within [`SINGULAR_TOL`].
pub fn log_det(a: &[Vec<f64>]) -> (f64, i8) {
    let n = a.len();
    if n == 0 {
        return (0.0, 1); // empty product
    }
    let lu = decompose(a);
    if lu.sign == 0 {
        return (f64::NEG_INFINITY, 0);
    }
    let mut log_mag = 0.0;
    let mut sign = lu.sign;
    for k in 0..n {
        let d = lu.lu[k][k];
        log_mag += d.abs().ln();
        if d < 0.0 {
            sign = -sign;
        }
    }
    if !log_mag.is_finite() && log_mag < 0.0 {
        return (f64::NEG_INFINITY, 0);
    }
    (log_mag, sign)
}

/// Matrix inverse; `None` if singular within [`SINGULAR_TOL`].
pub fn inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let lu = decompose(a);
    if lu.sign == 0 {
        return None;
    }
    let mut inv = vec![vec![0.0; n]; n];
    // Solve A x = e_j column by column: apply the permutation, forward
    // substitution with unit L, back substitution with U.
    for j in 0..n {
        let mut x = vec![0.0; n];
        for (i, &p) in lu.perm.iter().enumerate() {
            x[i] = if p == j { 1.0 } else { 0.0 };
        }
        for i in 1..n {
            for k in 0..i {
                x[i] -= lu.lu[i][k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                x[i] -= lu.lu[i][k] * x[k];
            }
            x[i] /= lu.lu[i][i];
        }
        for i in 0..n {
            inv[i][j] = x[i];
        }
    }
    Some(inv)
}
