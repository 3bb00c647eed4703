use nalgebra::DMatrix;

/// Reciprocal condition number threshold for the regressor cross-product.
pub const RCOND_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Singular {
    pub rcond: f64,
}

/// Least squares `min ||X B - Y||` through a Householder QR of `X`.
///
/// Fails when the reciprocal condition number of `XᵀX`, which is
/// `(σ_min/σ_max)²` of `X`, falls below [`RCOND_MIN`].
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>, Singular> {
    let (n, m) = x.shape();
    assert!(n >= m, "least squares needs at least as many rows as columns");
    assert_eq!(n, y.nrows());
    let qr = x.clone().qr();
    let r = qr.r();
    let sv = r.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let rcond = if smax > 0.0 { (smin / smax).powi(2) } else { 0.0 };
    if !(rcond >= RCOND_MIN) {
        return Err(Singular { rcond });
    }
    let mut qty = y.clone();
    qr.q_tr_mul(&mut qty);
    let top = qty.rows(0, m).into_owned();
    r.solve_upper_triangular(&top).ok_or(Singular { rcond: 0.0 })
}

/// Sample standard deviation with divisor `n - 1`.
pub(crate) fn sample_sd(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = xs.clone().count();
    if n < 2 {
        return 0.0;
    }
    // identical draws give an exact zero rather than rounding noise from the mean
    let first = xs.clone().next().unwrap_or(0.0);
    if xs.clone().all(|x| x == first) {
        return 0.0;
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 5.0, 7.0]);
        let b = least_squares(&x, &y).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn collinear_design_is_singular() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        assert!(least_squares(&x, &y).is_err());
    }

    #[test]
    fn sd_of_two_points() {
        assert!((sample_sd([0.0, 2.0].into_iter()) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sample_sd([5.0].into_iter()), 0.0);
    }
}
