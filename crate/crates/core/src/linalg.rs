//! Small dense linear-algebra helpers over `ndarray` matrices, backed by
//! nalgebra's decompositions.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{ensure, Result};

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Singular values in descending order.
pub fn singular_values(a: &Array2<f64>) -> Result<Vec<f64>> {
    ensure!(a.iter().all(|x| x.is_finite()), "singular values of a non-finite matrix");
    let mut s: Vec<f64> = to_na(a).singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}

/// Ratio of the largest to the smallest singular value (infinite when the
/// smallest is zero).
pub fn condition_number(a: &Array2<f64>) -> Result<f64> {
    let s = singular_values(a)?;
    let (hi, lo) = (s[0], *s.last().expect("non-empty"));
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// Eigenvalues of a symmetric matrix in descending order.
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Result<Vec<f64>> {
    ensure!(a.nrows() == a.ncols(), "eigenvalues of a non-square matrix");
    let mut e: Vec<f64> = to_na(a).symmetric_eigen().eigenvalues.iter().copied().collect();
    e.sort_by(|x, y| y.total_cmp(x));
    Ok(e)
}

/// Moore-Penrose pseudoinverse with singular values below `rcond * s_max`
/// treated as zero.
pub fn pseudoinverse(a: &Array2<f64>, rcond: f64) -> Result<Array2<f64>> {
    ensure!(a.iter().all(|x| x.is_finite()), "pseudoinverse of a non-finite matrix");
    let svd = to_na(a).svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rcond * smax).max(f64::MIN_POSITIVE);
    let pinv = svd.pseudo_inverse(eps).map_err(|e| crate::error::contract(e.to_string()))?;
    Ok(from_na(&pinv))
}

/// Sample covariance (unbiased) of the rows of `x`.
pub fn covariance(x: &Array2<f64>) -> Result<Array2<f64>> {
    ensure!(x.nrows() >= 2, "covariance needs at least two rows");
    let mean = x.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let xc = x - &mean;
    Ok(xc.t().dot(&xc) / (x.nrows() as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn diagonal_matrix_values() {
        let a = array![[3.0, 0.0], [0.0, -0.5]];
        assert_eq!(singular_values(&a).unwrap(), vec![3.0, 0.5]);
        assert!((condition_number(&a).unwrap() - 6.0).abs() < 1e-12);
        assert_eq!(symmetric_eigenvalues(&array![[2.0, 0.0], [0.0, 5.0]]).unwrap(), vec![5.0, 2.0]);
    }

    #[test]
    fn pseudoinverse_of_tall_matrix() {
        let a = array![[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let p = pseudoinverse(&a, 1e-12).unwrap();
        let expect = array![[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]];
        assert!((&p - &expect).iter().all(|x| x.abs() < 1e-12));
    }
}
