//! Dense symmetric kernels on column-major `nalgebra` storage: Cholesky with
//! a pivot tolerance, triangular solves, scatter matrices.

use nalgebra::DMatrix;

/// Lower Cholesky factor of a symmetric matrix, or `None` when a pivot falls
/// below `d · eps · max(diag)`. Only the lower triangle of `a` is read.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    debug_assert_eq!(d, a.ncols());
    let max_diag = (0..d).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let tol = d as f64 * f64::EPSILON * max_diag;

    let mut l = a.clone();
    {
        let buf = l.as_mut_slice();
        for j in 0..d {
            let (left, right) = buf.split_at_mut(j * d);
            let col_j = &mut right[..d];
            for k in 0..j {
                let col_k = &left[k * d..(k + 1) * d];
                let ljk = col_k[j];
                if ljk != 0.0 {
                    for (dst, &src) in col_j[j..].iter_mut().zip(&col_k[j..]) {
                        *dst -= ljk * src;
                    }
                }
            }
            let pivot = col_j[j];
            if !(pivot > tol) || !pivot.is_finite() {
                return None;
            }
            let ljj = pivot.sqrt();
            col_j[j] = ljj;
            let inv = 1.0 / ljj;
            for v in &mut col_j[j + 1..] {
                *v *= inv;
            }
        }
    }
    for j in 1..d {
        for i in 0..j {
            l[(i, j)] = 0.0;
        }
    }
    Some(l)
}

/// Solves `L y = b` in place for lower-triangular `L`.
pub fn forward_solve_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let d = l.nrows();
    let buf = l.as_slice();
    for j in 0..d {
        let col = &buf[j * d..(j + 1) * d];
        let y = b[j] / col[j];
        b[j] = y;
        if y != 0.0 {
            for (dst, &lij) in b[j + 1..].iter_mut().zip(&col[j + 1..]) {
                *dst -= y * lij;
            }
        }
    }
}

/// `2 Σ ln L_jj`.
pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Column means of an `n × d` sample matrix.
pub fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    x.column_iter().map(|c| c.iter().sum::<f64>() / n).collect()
}

/// Subtracts `mean` from every row.
pub fn center(x: &DMatrix<f64>, mean: &[f64]) -> DMatrix<f64> {
    let mut out = x.clone();
    for (mut col, &mu) in out.column_iter_mut().zip(mean) {
        col.add_scalar_mut(-mu);
    }
    out
}

/// `(1/n) RᵀR` for already-centered residuals `R` (`n × d`).
pub fn scatter(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let n = residuals.nrows() as f64;
    let mut s = residuals.tr_mul(residuals);
    s /= n;
    // gemm may differ in the last bit across the diagonal; mirror the lower half.
    symmetrize_from_lower(&mut s);
    s
}

/// Per-column `(1/n) Σ r²` for centered residuals.
pub fn column_variances(residuals: &DMatrix<f64>) -> Vec<f64> {
    let n = residuals.nrows() as f64;
    residuals
        .column_iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>() / n)
        .collect()
}

pub fn symmetrize_from_lower(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 1..d {
        for i in 0..j {
            m[(i, j)] = m[(j, i)];
        }
    }
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().sum()
}
