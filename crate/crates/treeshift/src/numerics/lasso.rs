//! Weighted Lasso by cyclic coordinate descent, with the first coordinate
//! left unpenalized (it plays the role of the ancestral state, which must
//! never be shrunk).
//!
//! Objective: `‖y − X Δ‖² + λ Σ_{j≥1} w_j |Δ_j|`. The solver keeps an
//! explicit residual vector, warm-starts along a log-spaced λ path, and can
//! hunt for a prescribed support size by bisecting between path points.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Convergence: sweep until the largest coefficient move falls below
/// `SWEEP_RTOL × ‖y‖∞` (or the sweep budget runs out).
pub const SWEEP_RTOL: f64 = 1e-8;

/// Hard cap on coordinate-descent sweeps per λ.
pub const MAX_SWEEPS: usize = 10_000;

/// Bisection depth when a requested support size falls between path points.
pub const SUPPORT_BISECTION_DEPTH: usize = 50;

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// A weighted Lasso problem over a fixed design. Column norms are
/// precomputed; `weights[0]` is ignored (first coordinate unpenalized).
pub struct LassoProblem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    weights: &'a [f64],
    col_norm2: Vec<f64>,
    y_scale: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a DVector<f64>, weights: &'a [f64]) -> Result<Self> {
        let p = x.ncols();
        if weights.len() != p {
            return Err(Error::Mismatch(format!(
                "{} penalty weights for {} columns",
                weights.len(),
                p
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::Mismatch(format!(
                "response length {} does not match {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if weights.iter().skip(1).any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput(
                "penalty weights beyond the first must be positive and finite".into(),
            ));
        }
        let col_norm2: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
        if col_norm2.iter().any(|&c| c <= 0.0) {
            return Err(Error::InvalidInput("design has an all-zero column".into()));
        }
        let y_scale = y.amax();
        if y_scale == 0.0 {
            return Err(Error::LassoDegenerate);
        }
        Ok(LassoProblem {
            x,
            y,
            weights,
            col_norm2,
            y_scale,
        })
    }

    /// Smallest λ for which every penalized coordinate stays at zero (the
    /// unpenalized first coordinate is profiled out first).
    pub fn lambda_max(&self) -> f64 {
        let b0 = self.x.column(0).dot(self.y) / self.col_norm2[0];
        let r = self.y - self.x.column(0) * b0;
        (1..self.x.ncols())
            .map(|j| 2.0 * self.x.column(j).dot(&r).abs() / self.weights[j])
            .fold(0.0f64, f64::max)
    }

    /// Coordinate descent at a single λ, warm-started from `init` when
    /// given. Returns the coefficient vector.
    pub fn solve(&self, lambda: f64, init: Option<&[f64]>) -> Vec<f64> {
        let p = self.x.ncols();
        let mut beta = match init {
            Some(b) => b.to_vec(),
            None => vec![0.0; p],
        };
        let mut r = self.y.clone();
        for j in 0..p {
            if beta[j] != 0.0 {
                r -= self.x.column(j) * beta[j];
            }
        }
        let tol = SWEEP_RTOL * self.y_scale;
        for _ in 0..MAX_SWEEPS {
            let mut max_move = 0.0f64;
            for j in 0..p {
                let old = beta[j];
                // z = 2 x_jᵀ(r + x_j β_j): gradient with coordinate j removed.
                let z = 2.0 * (self.x.column(j).dot(&r) + self.col_norm2[j] * old);
                let new = if j == 0 {
                    z / (2.0 * self.col_norm2[0])
                } else {
                    soft_threshold(z, lambda * self.weights[j]) / (2.0 * self.col_norm2[j])
                };
                if new != old {
                    r -= self.x.column(j) * (new - old);
                    beta[j] = new;
                    max_move = max_move.max((new - old).abs());
                }
            }
            if max_move < tol {
                break;
            }
        }
        beta
    }

    /// Penalized coordinates currently active.
    pub fn support(beta: &[f64]) -> Vec<usize> {
        beta.iter()
            .enumerate()
            .skip(1)
            .filter(|&(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    /// Karush–Kuhn–Tucker residual check: for active coordinates the
    /// subgradient must vanish, for inactive ones stay inside the box.
    pub fn kkt_gap(&self, lambda: f64, beta: &[f64]) -> f64 {
        let mut r = self.y.clone();
        for j in 0..beta.len() {
            if beta[j] != 0.0 {
                r -= self.x.column(j) * beta[j];
            }
        }
        let mut gap = (2.0 * self.x.column(0).dot(&r)).abs();
        for j in 1..beta.len() {
            let g = 2.0 * self.x.column(j).dot(&r);
            let viol = if beta[j] != 0.0 {
                (g - lambda * self.weights[j] * beta[j].signum()).abs()
            } else {
                (g.abs() - lambda * self.weights[j]).max(0.0)
            };
            gap = gap.max(viol);
        }
        gap
    }
}

/// One point of a Lasso regularization path.
pub struct PathPoint {
    pub lambda: f64,
    pub beta: Vec<f64>,
}

/// Solve along `n_lambda` log-spaced values from `λ_max` down to
/// `λ_max × min_ratio`, warm-starting each point at the previous solution.
pub fn lasso_path(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    n_lambda: usize,
    min_ratio: f64,
) -> Result<Vec<PathPoint>> {
    let problem = LassoProblem::new(x, y, weights)?;
    let lmax = problem.lambda_max();
    if lmax <= 0.0 {
        return Err(Error::LassoDegenerate);
    }
    let mut out = Vec::with_capacity(n_lambda);
    let mut beta: Option<Vec<f64>> = None;
    for i in 0..n_lambda {
        let f = if n_lambda == 1 {
            1.0
        } else {
            (min_ratio.ln() * i as f64 / (n_lambda - 1) as f64).exp()
        };
        let lambda = lmax * f;
        let b = problem.solve(lambda, beta.as_deref());
        beta = Some(b.clone());
        out.push(PathPoint { lambda, beta: b });
    }
    Ok(out)
}

/// Result of the fixed-support-size search.
pub struct FixedSupportFit {
    /// Active penalized coordinates (column indices into the design).
    pub support: Vec<usize>,
    /// Lasso coefficients at the chosen λ (all coordinates).
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Whether the requested size was hit exactly. When the path jumps over
    /// the requested size, the largest support not exceeding it is returned
    /// and this flag is false.
    pub attained: bool,
}

/// Walk the λ path until the penalized support reaches size `k`, bisecting
/// between straddling path points when the size is skipped.
pub fn lasso_fixed_support_size(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &[f64],
    k: usize,
) -> Result<FixedSupportFit> {
    let problem = LassoProblem::new(x, y, weights)?;
    let lmax = problem.lambda_max();
    if lmax <= 0.0 {
        return Err(Error::LassoDegenerate);
    }
    let n_lambda = 100;
    let min_ratio = 1e-4f64;
    // Best candidate with support size ≤ k seen so far (largest support,
    // then largest λ for stability).
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut prev: Option<(f64, Vec<f64>, usize)> = None;
    let mut beta: Option<Vec<f64>> = None;
    for i in 0..n_lambda {
        let f = (min_ratio.ln() * i as f64 / (n_lambda - 1) as f64).exp();
        let lambda = lmax * f;
        let b = problem.solve(lambda, beta.as_deref());
        let size = LassoProblem::support(&b).len();
        beta = Some(b.clone());
        if size == k {
            return Ok(FixedSupportFit {
                support: LassoProblem::support(&b),
                beta: b,
                lambda,
                attained: true,
            });
        }
        if size < k && best.as_ref().map_or(true, |(s, _, _)| size > *s) {
            best = Some((size, lambda, b.clone()));
        }
        if size > k {
            if let Some((hi_lambda, _, prev_size)) = prev.take() {
                if prev_size < k {
                    // Support jumped past k between hi_lambda and lambda.
                    if let Some(hit) =
                        bisect_support(&problem, hi_lambda, lambda, k, &b)
                    {
                        return Ok(hit);
                    }
                }
            }
            break; // smaller λ only grows the support further
        }
        prev = Some((lambda, b, size));
    }
    let (_, lambda, b) = best.ok_or(Error::LassoDegenerate)?;
    Ok(FixedSupportFit {
        support: LassoProblem::support(&b),
        beta: b,
        lambda,
        attained: false,
    })
}

fn bisect_support(
    problem: &LassoProblem,
    mut hi: f64,
    mut lo: f64,
    k: usize,
    warm: &[f64],
) -> Option<FixedSupportFit> {
    let mut beta = warm.to_vec();
    let mut best_below: Option<(usize, f64, Vec<f64>)> = None;
    for _ in 0..SUPPORT_BISECTION_DEPTH {
        let mid = (hi * lo).sqrt();
        beta = problem.solve(mid, Some(&beta));
        let size = LassoProblem::support(&beta).len();
        if size == k {
            return Some(FixedSupportFit {
                support: LassoProblem::support(&beta),
                beta,
                lambda: mid,
                attained: true,
            });
        }
        if size < k {
            if best_below.as_ref().map_or(true, |(s, _, _)| size > *s) {
                best_below = Some((size, mid, beta.clone()));
            }
            hi = mid;
        } else {
            lo = mid;
        }
    }
    best_below.map(|(_, lambda, b)| FixedSupportFit {
        support: LassoProblem::support(&b),
        beta: b,
        lambda,
        attained: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    /// Orthogonal design: the Lasso solution is an explicit soft threshold.
    #[test]
    fn orthogonal_design_matches_soft_threshold_formula() {
        let x = DMatrix::<f64>::identity(4, 4) * 2.0; // columns 2·e_j
        let y = DVector::from_vec(vec![3.0, -1.0, 0.2, 0.0]);
        let w = vec![0.0, 1.0, 1.0, 1.0];
        let problem = LassoProblem::new(&x, &y, &w).unwrap();
        let lambda = 2.0;
        let beta = problem.solve(lambda, None);
        // β_j = S(2·x_jᵀy, λw_j)/(2‖x_j‖²) = S(4 y_j, 2)/8 for j ≥ 1.
        assert!((beta[0] - y[0] / 2.0).abs() < 1e-12, "unpenalized coordinate is plain LS");
        assert!((beta[1] - (4.0 * -1.0 + 2.0) / 8.0).abs() < 1e-12);
        assert_eq!(beta[2], 0.0);
        assert_eq!(beta[3], 0.0);
    }

    #[test]
    fn kkt_conditions_hold_on_random_problems() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 30;
            let p = 12;
            let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let true_beta = DVector::from_fn(p, |j, _| if j % 4 == 1 { 2.0 } else { 0.0 });
            let y = &x * &true_beta
                + DVector::from_fn(n, |_, _| 0.1 * (rng.gen::<f64>() - 0.5));
            let mut w = vec![1.0; p];
            w[0] = 0.0;
            let problem = LassoProblem::new(&x, &y, &w).unwrap();
            for lambda_frac in [0.5, 0.1, 0.01] {
                let lambda = problem.lambda_max() * lambda_frac;
                let beta = problem.solve(lambda, None);
                assert!(
                    problem.kkt_gap(lambda, &beta) <= lambda * 1e-6 + 1e-6,
                    "KKT gap too large at λ fraction {lambda_frac}"
                );
            }
        }
    }

    #[test]
    fn lambda_max_really_zeroes_everything() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = DMatrix::from_fn(20, 6, |_, _| rng.gen::<f64>());
        let y = DVector::from_fn(20, |_, _| rng.gen::<f64>() * 4.0 - 2.0);
        let w = vec![0.0, 1.0, 0.5, 2.0, 1.0, 1.0];
        let problem = LassoProblem::new(&x, &y, &w).unwrap();
        let beta = problem.solve(problem.lambda_max() * (1.0 + 1e-9), None);
        assert!(LassoProblem::support(&beta).is_empty());
        let beta = problem.solve(problem.lambda_max() * 0.95, None);
        assert!(!LassoProblem::support(&beta).is_empty());
    }

    #[test]
    fn fixed_support_size_recovers_planted_support() {
        let mut rng = StdRng::seed_from_u64(7);
        let n = 60;
        let p = 15;
        let x = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let mut truth = vec![0.0; p];
        truth[0] = 1.0;
        truth[3] = 4.0;
        truth[9] = -5.0;
        let y = &x * DVector::from_vec(truth.clone())
            + DVector::from_fn(n, |_, _| 0.05 * (rng.gen::<f64>() - 0.5));
        let mut w = vec![1.0; p];
        w[0] = 0.0;
        let fit = lasso_fixed_support_size(&x, &y, &w, 2).unwrap();
        assert!(fit.attained);
        assert_eq!(fit.support, vec![3, 9]);
    }

    #[test]
    fn all_zero_response_is_degenerate() {
        let x = DMatrix::<f64>::identity(3, 3);
        let y = DVector::zeros(3);
        let w = vec![0.0, 1.0, 1.0];
        assert!(matches!(
            LassoProblem::new(&x, &y, &w),
            Err(Error::LassoDegenerate)
        ));
    }

    #[test]
    fn path_is_monotone_in_support_for_orthogonal_design() {
        let x = DMatrix::<f64>::identity(6, 6);
        let y = DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.5]);
        let w = vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let path = lasso_path(&x, &y, &w, 40, 1e-3).unwrap();
        let mut last = 0;
        for p in &path {
            let s = LassoProblem::support(&p.beta).len();
            assert!(s >= last, "support shrank along the path");
            last = s;
        }
        assert_eq!(last, 5);
    }
}
