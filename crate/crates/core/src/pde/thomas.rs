use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude abort the elimination.
pub const MIN_PIVOT: f64 = 1e-14;

/// Solves a tridiagonal system by forward elimination and back substitution.
///
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn thomas_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if lower.len() != n || diag.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tridiagonal bands ({}, {}, {}) do not match rhs length {n}",
            lower.len(),
            diag.len(),
            upper.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < MIN_PIVOT {
        return Err(Error::ZeroPivot { row: 0, pivot });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot.abs() < MIN_PIVOT {
            return Err(Error::ZeroPivot { row: i, pivot });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_system() {
        let x = thomas_solve(&[0.0; 3], &[1.0; 3], &[0.0; 3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn small_second_difference_system() {
        // dense elimination of [[2,-1,0],[-1,2,-1],[0,-1,2]] x = (1,0,1) gives (1,1,1)
        let x = thomas_solve(&[0.0, -1.0, -1.0], &[2.0; 3], &[-1.0, -1.0, 0.0], &[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_pivot_reported() {
        let err = thomas_solve(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroPivot { row: 1, .. }));
        assert!(matches!(
            thomas_solve(&[0.0], &[0.0], &[0.0], &[1.0]),
            Err(Error::ZeroPivot { row: 0, .. })
        ));
    }

    #[test]
    fn band_length_mismatch() {
        assert!(matches!(
            thomas_solve(&[0.0], &[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
