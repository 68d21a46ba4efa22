//! Numerical building blocks: penalized regression, chi-square penalty
//! calibration, robust curve fitting, dense linear algebra, and scalar
//! optimization.

pub mod chi;
pub mod lasso;
pub mod linalg;
pub mod robust;

pub use chi::{chi2_survival, dkhi, edkhi, edkhi_neg_log, ln_dkhi};
pub use lasso::{lasso_fixed_support_size, lasso_path, FixedSupportFit, LassoProblem, PathPoint};
pub use linalg::{cholesky_lower, least_squares, solve_spd, Whitener};
pub use robust::{fit_saturating_increments, SaturatingFit};

/// Outcome of a golden-section search.
#[derive(Clone, Copy, Debug)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    /// The minimizer landed (numerically) on the lower / upper bound.
    pub at_lower: bool,
    pub at_upper: bool,
}

/// Golden-section minimization of a unimodal function on `[a, b]` to a
/// relative interval tolerance. Boundary flags fire when the final point
/// sits within one part in 10³ of the interval from either end — the
/// caller's cue that the optimum may lie outside the search range.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_iter: usize,
) -> GoldenResult {
    debug_assert!(b > a);
    let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iter {
        if (hi - lo) <= rel_tol * (lo.abs() + hi.abs()).max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let (x, fx) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let margin = 1e-3 * (b - a);
    GoldenResult {
        x,
        fx,
        at_lower: x - a <= margin,
        at_upper: b - x <= margin,
    }
}
