//! EM engine: E-step by upward–downward message passing, M-steps (exact
//! for the drift model, generalized for the selection model), data-driven
//! starting points, and the fit driver with restarts and the equivalence
//! summary of the fitted shift allocation.

pub mod estep;
pub mod init;
pub mod mstep;

pub use estep::{e_step, edge_coefficients, q_function, ConditionalMoments, EdgeCoefficients};
pub use init::{bm_start, initial_params, ou_start};
pub use mstep::{
    bm_support_scores, greedy_parsimonious_support, m_step_bm, m_step_ou,
    support_is_parsimonious, update_alpha, ALPHA_LOWER_FACTOR, ALPHA_UPPER_FACTOR,
};

use nalgebra::DVector;
use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ProcessKind, SimilarDirection};
use crate::parsimony::{
    class_size, coloring_from_params, enumerate_up_to, shifts_from_coloring, TipColoring,
};
use crate::tree::PhyloTree;

/// A likelihood decrease beyond this relative tolerance is a hard error:
/// both M-steps are provably ascent steps, so a drop means a numerical
/// problem that must not be papered over.
pub const MONOTONICITY_RTOL: f64 = 1e-8;

/// How the selection strength is handled during an OU fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AlphaMode {
    /// Update α inside the M-step (profile golden-section search).
    Estimate,
    /// Hold α at the given value throughout.
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Relative convergence tolerance on the log-likelihood.
    pub tol: f64,
    pub alpha: AlphaMode,
    /// Perturbed restarts run in addition to the data-driven start.
    pub extra_restarts: usize,
    /// Seed for the restart perturbations.
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-8,
            alpha: AlphaMode::Estimate,
            extra_restarts: 2,
            seed: 0,
        }
    }
}

/// What is — and is not — identifiable about the fitted shift allocation:
/// the tip partition into regimes, its values, and the exact number of
/// shift allocations producing the same tip distribution.
#[derive(Clone, Debug)]
pub struct EquivalenceSummary {
    /// Number of parsimonious shift allocations equivalent to the fit.
    pub class_size: BigUint,
    /// Number of distinct regimes among the tips.
    pub n_colors: usize,
    /// Canonical tip coloring (regime per tip, first-occurrence ids).
    pub tip_coloring: TipColoring,
    /// Regime value per tip color (trait mean for the drift model,
    /// optimum for the selection model).
    pub values_by_tip_color: Vec<f64>,
    /// Two nodes from distinct components with numerically equal values,
    /// when the fit is degenerate in that way (reported, not hidden).
    pub homoplasy: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    /// Final log-likelihood `ln p(Y | θ̂)`.
    pub loglik: f64,
    /// EM iterations of the winning run.
    pub iterations: usize,
    pub converged: bool,
    /// The fitted α landed on the search boundary (OU with α estimated).
    pub alpha_at_boundary: bool,
    /// Log-likelihood after each iteration, starting at the initial value.
    pub trajectory: Vec<f64>,
    pub equivalence: EquivalenceSummary,
}

impl FitResult {
    /// Materialize every shift configuration equivalent to the fitted one
    /// (same tip regimes, same likelihood), erroring with the exact class
    /// size when it exceeds `cap`. The fitted parameters are among them.
    pub fn equivalent_params(&self, tree: &PhyloTree, cap: usize) -> Result<Vec<ModelParams>> {
        let colorings = enumerate_up_to(tree, &self.equivalence.tip_coloring, cap)?;
        colorings
            .into_iter()
            .map(|coloring| {
                let bm_config =
                    shifts_from_coloring(tree, &coloring, &self.equivalence.values_by_tip_color);
                match &self.params {
                    ModelParams::Bm { sigma2, .. } => Ok(ModelParams::Bm {
                        sigma2: *sigma2,
                        shifts: bm_config,
                    }),
                    ModelParams::Ou { alpha, gamma2, .. } => {
                        let config = crate::model::similar_shifts(
                            tree,
                            &bm_config,
                            *alpha,
                            SimilarDirection::BmToOu,
                        )?;
                        Ok(ModelParams::Ou {
                            alpha: *alpha,
                            gamma2: *gamma2,
                            shifts: config,
                        })
                    }
                }
            })
            .collect()
    }
}

struct RunOutcome {
    params: ModelParams,
    loglik: f64,
    iterations: usize,
    converged: bool,
    trajectory: Vec<f64>,
}

fn em_run(
    tree: &PhyloTree,
    y: &DVector<f64>,
    params0: ModelParams,
    k: usize,
    opts: &EmOptions,
) -> Result<RunOutcome> {
    let estimate_alpha = matches!(opts.alpha, AlphaMode::Estimate);
    let mut params = params0;
    let mut moments = e_step(tree, &params, y.as_slice())?;
    let mut trajectory = vec![moments.loglik];
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=opts.max_iter {
        iterations = it;
        let new_params = match params.kind() {
            ProcessKind::Bm => m_step_bm(tree, &moments, k)?,
            ProcessKind::Ou => m_step_ou(tree, &moments, k, &params, estimate_alpha)?,
        };
        let new_moments = e_step(tree, &new_params, y.as_slice())?;
        let prev = *trajectory.last().expect("non-empty");
        let ll = new_moments.loglik;
        if !ll.is_finite() {
            log::warn!(
                "EM stopped at iteration {it}: the proposed step has a \
                 non-finite log-likelihood; keeping the previous iterate"
            );
            break;
        }
        if prev - ll > MONOTONICITY_RTOL * (1.0 + prev.abs()) {
            return Err(Error::MonotonicityViolation {
                iteration: it,
                drop: prev - ll,
            });
        }
        params = new_params;
        moments = new_moments;
        trajectory.push(ll);
        if (ll - prev).abs() <= opts.tol * (1.0 + ll.abs()) {
            converged = true;
            break;
        }
    }
    Ok(RunOutcome {
        params,
        loglik: *trajectory.last().expect("non-empty"),
        iterations,
        converged,
        trajectory,
    })
}

fn equivalence_summary(tree: &PhyloTree, params: &ModelParams) -> Result<EquivalenceSummary> {
    let induced = coloring_from_params(tree, params)?;
    if let Some((a, b)) = induced.homoplasy {
        log::warn!(
            "fitted shifts are homoplasic (nodes {a} and {b} share a value); \
             the reported equivalence class merges their regimes"
        );
    }
    let tip_coloring = induced.coloring.tip_coloring(tree);
    let size = class_size(tree, &tip_coloring)?;
    let m = tree.n_internal();
    let mut values = vec![f64::NAN; tip_coloring.n_colors()];
    for k in 0..tree.n_tips() {
        values[tip_coloring.colors()[k] as usize] =
            induced.color_values[induced.coloring.colors[m + k] as usize];
    }
    Ok(EquivalenceSummary {
        class_size: size,
        n_colors: tip_coloring.n_colors(),
        tip_coloring,
        values_by_tip_color: values,
        homoplasy: induced.homoplasy,
    })
}

fn alpha_boundary_flag(tree: &PhyloTree, params: &ModelParams, opts: &EmOptions) -> bool {
    match (params, opts.alpha) {
        (ModelParams::Ou { alpha, .. }, AlphaMode::Estimate) => {
            let h = tree.height();
            let (lo, hi) = (ALPHA_LOWER_FACTOR / h, ALPHA_UPPER_FACTOR / h);
            *alpha <= lo * 1.001 || *alpha >= hi * 0.999
        }
        _ => false,
    }
}

/// Fit a `kind` model with at most `k` shifts by EM, trying the data-driven
/// start plus `opts.extra_restarts` perturbations and keeping the best
/// final likelihood.
pub fn fit(
    tree: &PhyloTree,
    y: &DVector<f64>,
    kind: ProcessKind,
    k: usize,
    opts: &EmOptions,
) -> Result<FitResult> {
    if y.len() != tree.n_tips() {
        return Err(Error::InvalidInput(format!(
            "{} trait values for {} tips",
            y.len(),
            tree.n_tips()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite trait value".into()));
    }
    let fixed_alpha = match (kind, opts.alpha) {
        (ProcessKind::Ou, AlphaMode::Fixed(a)) => Some(a),
        _ => None,
    };
    let starts = initial_params(tree, y, kind, k, fixed_alpha, opts.extra_restarts, opts.seed)?;
    let mut best: Option<RunOutcome> = None;
    let mut first_err: Option<Error> = None;
    for start in starts {
        match em_run(tree, y, start, k, opts) {
            Ok(run) => {
                if best.as_ref().map_or(true, |b| run.loglik > b.loglik) {
                    best = Some(run);
                }
            }
            Err(e) => {
                log::warn!("EM restart failed: {e}");
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    let run = match best {
        Some(run) => run,
        None => return Err(first_err.expect("at least one start")),
    };
    finish_fit(tree, run, opts)
}

/// Fit by EM from an explicit starting point (no restarts). The support
/// size bound is taken from the start's own shift count.
pub fn fit_from(
    tree: &PhyloTree,
    y: &DVector<f64>,
    start: ModelParams,
    opts: &EmOptions,
) -> Result<FitResult> {
    start.validate(tree)?;
    let k = start.shift_config().k();
    let run = em_run(tree, y, start, k, opts)?;
    finish_fit(tree, run, opts)
}

fn finish_fit(tree: &PhyloTree, run: RunOutcome, opts: &EmOptions) -> Result<FitResult> {
    let equivalence = equivalence_summary(tree, &run.params)?;
    let alpha_at_boundary = alpha_boundary_flag(tree, &run.params, opts);
    Ok(FitResult {
        loglik: run.loglik,
        iterations: run.iterations,
        converged: run.converged,
        alpha_at_boundary,
        trajectory: run.trajectory,
        equivalence,
        params: run.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_tip_traits, tip_means, Shift, ShiftConfig};

    fn assert_monotone(trajectory: &[f64]) {
        for w in trajectory.windows(2) {
            assert!(
                w[1] >= w[0] - MONOTONICITY_RTOL * (1.0 + w[0].abs()),
                "log-likelihood dropped: {} → {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn bm_fit_recovers_a_strong_shift() {
        let tree = PhyloTree::simulate_yule(32, 0.3, 17).unwrap();
        let truth = ModelParams::Bm {
            sigma2: 0.05,
            shifts: ShiftConfig::new(0.5, vec![Shift { node: 4, value: 5.0 }]),
        };
        let y = simulate_tip_traits(&tree, &truth, 3).unwrap();
        let fit = fit(&tree, &y, ProcessKind::Bm, 1, &EmOptions::default()).unwrap();
        assert!(fit.converged);
        assert_monotone(&fit.trajectory);
        assert_eq!(fit.params.shift_config().support(), vec![4]);
        assert!((fit.params.shift_config().shifts[0].value - 5.0).abs() < 1.0);
        assert_eq!(fit.equivalence.n_colors, 2);
    }

    #[test]
    fn ou_fit_recovers_support_and_stays_monotone() {
        let tree = PhyloTree::simulate_yule(32, 0.3, 19).unwrap();
        let truth = ModelParams::Ou {
            alpha: 3.0,
            gamma2: 0.1,
            shifts: ShiftConfig::new(0.0, vec![Shift { node: 6, value: 6.0 }]),
        };
        let y = simulate_tip_traits(&tree, &truth, 5).unwrap();
        let fit = fit(&tree, &y, ProcessKind::Ou, 1, &EmOptions::default()).unwrap();
        assert_monotone(&fit.trajectory);
        assert_eq!(fit.params.shift_config().support(), vec![6]);
        let a = fit.params.alpha().unwrap();
        assert!(a > 0.3 && a < 30.0, "α̂ = {a}");
    }

    #[test]
    fn fixed_alpha_mode_holds_alpha_exactly() {
        let tree = PhyloTree::simulate_yule(24, 0.3, 23).unwrap();
        let truth = ModelParams::Ou {
            alpha: 2.0,
            gamma2: 0.3,
            shifts: ShiftConfig::new(0.0, vec![Shift { node: 3, value: 4.0 }]),
        };
        let y = simulate_tip_traits(&tree, &truth, 7).unwrap();
        let opts = EmOptions {
            alpha: AlphaMode::Fixed(2.5),
            ..Default::default()
        };
        let fit = fit(&tree, &y, ProcessKind::Ou, 1, &opts).unwrap();
        assert_eq!(fit.params.alpha().unwrap(), 2.5);
        assert!(!fit.alpha_at_boundary);
    }

    #[test]
    fn k_zero_fit_has_a_singleton_equivalence_class() {
        let tree = PhyloTree::simulate_yule(16, 0.3, 29).unwrap();
        let truth = ModelParams::Bm {
            sigma2: 0.5,
            shifts: ShiftConfig::new(-1.0, vec![]),
        };
        let y = simulate_tip_traits(&tree, &truth, 9).unwrap();
        let fit = fit(&tree, &y, ProcessKind::Bm, 0, &EmOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.equivalence.n_colors, 1);
        assert_eq!(fit.equivalence.class_size, BigUint::from(1u32));
        let eq = fit.equivalent_params(&tree, 10).unwrap();
        assert_eq!(eq.len(), 1);
    }

    #[test]
    fn equivalent_params_share_the_tip_distribution() {
        let tree = PhyloTree::simulate_yule(20, 0.3, 31).unwrap();
        // A shift on an internal edge whose placement is ambiguous enough
        // to give a class with several members on most draws.
        let truth = ModelParams::Ou {
            alpha: 2.5,
            gamma2: 0.1,
            shifts: ShiftConfig::new(0.0, vec![Shift { node: 2, value: 5.0 }]),
        };
        let y = simulate_tip_traits(&tree, &truth, 13).unwrap();
        let fit = fit(&tree, &y, ProcessKind::Ou, 1, &EmOptions::default()).unwrap();
        let eq = fit.equivalent_params(&tree, 10_000).unwrap();
        assert_eq!(BigUint::from(eq.len()), fit.equivalence.class_size);
        let reference = tip_means(&tree, &fit.params).unwrap();
        for params in &eq {
            let means = tip_means(&tree, params).unwrap();
            for i in 0..tree.n_tips() {
                assert!(
                    (means[i] - reference[i]).abs() <= 1e-9 * (1.0 + reference[i].abs()),
                    "tip {i}: {} vs {}",
                    means[i],
                    reference[i]
                );
            }
        }
    }
}
