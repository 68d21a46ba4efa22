//! Dense symmetric positive-definite helpers: Cholesky with an explicit
//! pivot guard, whitening, and small linear solves.
//!
//! The factorization is written out by hand (rather than delegated) so a
//! failing pivot reports *which* row went bad and how — that error is part
//! of the public contract when a covariance matrix degenerates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot floor: a diagonal pivot below `PIVOT_RTOL × max diag`
/// marks the matrix as numerically singular.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Lower Cholesky factor `L` with `L Lᵀ = A`. `A` must be symmetric; only
/// the lower triangle is read.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput(format!(
            "cholesky needs a square matrix, got {}×{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max);
    let floor = PIVOT_RTOL * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(Error::SingularCovariance { row: j, pivot: d });
        }
        let root = d.sqrt();
        l[(j, j)] = root;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// Whitening operator built from a covariance matrix: applying it maps
/// `N(m, V)` samples to unit covariance (`W V Wᵀ = I` with `W = L⁻¹`).
pub struct Whitener {
    l: DMatrix<f64>,
}

impl Whitener {
    pub fn new(v: &DMatrix<f64>) -> Result<Self> {
        Ok(Whitener {
            l: cholesky_lower(v)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L⁻¹ v` by forward substitution.
    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.l
            .solve_lower_triangular(v)
            .expect("factor has positive diagonal")
    }

    /// `L⁻¹ M` column-wise.
    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.l
            .solve_lower_triangular(m)
            .expect("factor has positive diagonal")
    }

    /// `ln det V = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.l.nrows()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }
}

/// Solve `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let l = cholesky_lower(a)?;
    let y = l
        .solve_lower_triangular(b)
        .expect("factor has positive diagonal");
    Ok(l
        .transpose()
        .solve_upper_triangular(&y)
        .expect("factor has positive diagonal"))
}

/// Ordinary least squares `min ‖y − X b‖²` via the normal equations;
/// errors when `XᵀX` is singular (collinear columns).
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    solve_spd(&xtx, &xty)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_example() -> DMatrix<f64> {
        // B Bᵀ + I for a fixed B: guaranteed SPD, irregular entries.
        let b = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.3, -0.2, 0.7, //
            0.0, 2.0, 0.5, -1.1, //
            0.4, 0.4, 1.5, 0.2, //
            -0.6, 0.1, 0.0, 1.0,
        ]);
        &b * b.transpose() + DMatrix::identity(4, 4)
    }

    #[test]
    fn cholesky_reconstructs_the_input() {
        let a = spd_example();
        let l = cholesky_lower(&a).unwrap();
        let back = &l * l.transpose();
        assert!((&back - &a).abs().max() < 1e-12);
        // Lower triangular with positive diagonal.
        for i in 0..4 {
            assert!(l[(i, i)] > 0.0);
            for j in i + 1..4 {
                assert_eq!(l[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn singular_matrix_reports_failing_row() {
        // Third row is the sum of the first two.
        let mut a = spd_example();
        for j in 0..4 {
            let v = a[(0, j)] + a[(1, j)];
            a[(2, j)] = v;
            a[(j, 2)] = v;
        }
        a[(2, 2)] = a[(0, 0)] + 2.0 * a[(0, 1)] + a[(1, 1)];
        match cholesky_lower(&a) {
            Err(Error::SingularCovariance { row, .. }) => assert_eq!(row, 2),
            other => panic!("expected singular covariance, got {other:?}"),
        }
    }

    #[test]
    fn whitener_maps_covariance_to_identity() {
        let v = spd_example();
        let w = Whitener::new(&v).unwrap();
        let lw = w.apply_mat(&v); // L⁻¹ V
        let id = w.apply_mat(&lw.transpose()); // L⁻¹ V L⁻ᵀ
        assert!((&id - DMatrix::identity(4, 4)).abs().max() < 1e-12);
        // log det agrees with a direct determinant.
        assert!((w.log_det() - v.determinant().ln()).abs() < 1e-10);
    }

    #[test]
    fn solve_spd_and_least_squares_agree_with_direct_inverse() {
        let a = spd_example();
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let x = solve_spd(&a, &b).unwrap();
        assert!((&a * &x - &b).abs().max() < 1e-10);

        let design = DMatrix::from_row_slice(5, 2, &[
            1.0, 0.0, //
            1.0, 1.0, //
            1.0, 2.0, //
            1.0, 3.0, //
            1.0, 4.0,
        ]);
        let y = DVector::from_vec(vec![0.1, 1.9, 4.1, 6.1, 7.9]);
        let beta = least_squares(&design, &y).unwrap();
        // Hand-computed simple regression: slope 1.98, intercept 0.06.
        assert!((beta[1] - 1.98).abs() < 1e-12);
        assert!((beta[0] - 0.06).abs() < 1e-12);
    }
}
