//! Ordinary least squares via Householder QR.
//!
//! Columns are scaled to unit norm before factorization so that predictors
//! spanning many orders of magnitude (byte counts times request counts) do not
//! swamp the rank test. A column whose component orthogonal to the preceding
//! columns is below [`PIVOT_TOLERANCE`] (relative to its own norm) is reported
//! as collinear.

use thiserror::Error;

pub const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OlsError {
    #[error("need more observations than coefficients: {observations} rows for {coefficients} coefficients")]
    Underdetermined {
        observations: usize,
        coefficients: usize,
    },
    #[error("design matrix is rank deficient: column {column} is collinear with columns {with:?}")]
    RankDeficient { column: usize, with: Vec<usize> },
    #[error("design matrix rows have inconsistent lengths")]
    Shape,
    #[error("non-finite value in design matrix or response")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Coefficient of determination, relative to the mean-only model.
    pub r_squared: f64,
    pub residual_std_error: f64,
    pub df: usize,
}

/// Solves `min ||y - X b||` for a design given as rows.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Result<OlsFit, OlsError> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if y.len() != n || rows.iter().any(|r| r.len() != p) {
        return Err(OlsError::Shape);
    }
    if n <= p {
        return Err(OlsError::Underdetermined {
            observations: n,
            coefficients: p,
        });
    }
    if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(OlsError::NonFinite);
    }

    // column-major copy, unit-norm columns
    let mut a: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let mut scale = vec![0.0; p];
    for (j, col) in a.iter_mut().enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(OlsError::RankDeficient {
                column: j,
                with: Vec::new(),
            });
        }
        col.iter_mut().for_each(|v| *v /= norm);
        scale[j] = norm;
    }
    let mut qty = y.to_vec();

    // Householder vectors are kept below the diagonal; r_diag holds R's diagonal
    let mut r_diag = vec![0.0; p];
    for j in 0..p {
        let alpha = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha <= PIVOT_TOLERANCE {
            return Err(OlsError::RankDeficient {
                column: j,
                with: dependent_on(&a, &r_diag, j),
            });
        }
        let sign = if a[j][j] >= 0.0 { 1.0 } else { -1.0 };
        let diag = -sign * alpha;
        // v = x - diag*e1, stored in place
        a[j][j] -= diag;
        let vnorm2: f64 = a[j][j..].iter().map(|v| v * v).sum();
        let (head, tail) = a.split_at_mut(j + 1);
        let v = &head[j][j..];
        for col in tail.iter_mut() {
            reflect(v, vnorm2, &mut col[j..]);
        }
        reflect(v, vnorm2, &mut qty[j..]);
        r_diag[j] = diag;
    }

    // back substitution R b = Q^T y
    let r = |i: usize, k: usize| if i == k { r_diag[i] } else { a[k][i] };
    let mut beta_scaled = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| r(i, k) * beta_scaled[k]).sum();
        beta_scaled[i] = (qty[i] - s) / r(i, i);
    }

    // R^{-1}, upper triangular, for the coefficient covariance
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let rhs = if i == c { 1.0 } else { 0.0 };
            let s: f64 = (i + 1..=c).map(|k| r(i, k) * rinv[k][c]).sum();
            rinv[i][c] = (rhs - s) / r(i, i);
        }
    }

    let coefficients: Vec<f64> = beta_scaled.iter().zip(&scale).map(|(b, s)| b / s).collect();
    let fitted: Vec<f64> = rows
        .iter()
        .map(|row| row.iter().zip(&coefficients).map(|(x, b)| x * b).sum())
        .collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let df = n - p;
    let sigma2 = rss / df as f64;
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    let std_errors: Vec<f64> = (0..p)
        .map(|j| {
            let row_norm2: f64 = rinv[j].iter().map(|v| v * v).sum();
            (sigma2 * row_norm2).sqrt() / scale[j]
        })
        .collect();
    let t_values = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| b / se)
        .collect();

    Ok(OlsFit {
        coefficients,
        std_errors,
        t_values,
        residuals,
        fitted,
        r_squared,
        residual_std_error: sigma2.sqrt(),
        df,
    })
}

fn reflect(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    if vnorm2 == 0.0 {
        return;
    }
    let dot: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

/// Earlier columns that column `j` leans on, found by regressing it on the
/// already-factored columns 0..j.
fn dependent_on(a: &[Vec<f64>], r_diag: &[f64], j: usize) -> Vec<usize> {
    // a[j][0..j] already holds Q^T a_j restricted to the first j rows
    let r = |i: usize, k: usize| if i == k { r_diag[i] } else { a[k][i] };
    let mut c = vec![0.0; j];
    for i in (0..j).rev() {
        let s: f64 = (i + 1..j).map(|k| r(i, k) * c[k]).sum();
        c[i] = (a[j][i] - s) / r(i, i);
    }
    c.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() > 1e-8)
        .map(|(i, _)| i)
        .collect()
}
