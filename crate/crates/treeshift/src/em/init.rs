//! Starting points for the EM runs.
//!
//! The base start whitens the tip covariance implied by a provisional
//! model, runs a fixed-support-size Lasso on the whitened incidence design
//! (root column unpenalized), prunes the support to a parsimonious set, and
//! refits by least squares. The selection model needs a provisional α
//! first: a pilot Lasso at a heuristic α groups the tips by regime, and a
//! robust saturating-increment regression on within-group tip pairs
//! estimates (α, γ²); the Lasso is then rerun at that α. Additional
//! restarts perturb the base start deterministically from the seed.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::em::mstep::{support_is_parsimonious, ALPHA_LOWER_FACTOR, ALPHA_UPPER_FACTOR,
    VARIANCE_FLOOR};
use crate::error::Result;
use crate::model::{
    bm_structure, ou_structure, w_vector, ModelParams, ProcessKind, Shift, ShiftConfig,
};
use crate::numerics::{fit_saturating_increments, lasso_fixed_support_size, least_squares, Whitener};
use crate::parsimony::{coloring_from_shifts, NodeColoring};
use crate::tree::PhyloTree;

/// Pilot half-life fraction: before anything is known about α, assume a
/// phylogenetic half-life of 30% of the tree height.
const PILOT_HALF_LIFE_FRACTION: f64 = 0.3;

/// Upper bound on the number of tip pairs fed to the robust α regression.
const MAX_PAIRS: usize = 20_000;

/// Deterministic multiplicative jitter for restart perturbations.
const JITTER_SCALE: f64 = 0.25;

/// Solve the whitened sparse regression at a fixed support size and refit
/// the pruned support by least squares. Returns the shift configuration
/// and the whitened residual sum of squares.
fn whitened_lasso_start(
    whitened_design: &DMatrix<f64>,
    whitened_y: &DVector<f64>,
    tree: &PhyloTree,
    k: usize,
) -> Result<(ShiftConfig, f64)> {
    let nn = tree.n_nodes();
    let support: Vec<usize> = if k == 0 {
        Vec::new()
    } else {
        let mut weights = vec![1.0; nn];
        weights[0] = 0.0;
        let fit = lasso_fixed_support_size(whitened_design, whitened_y, &weights, k)?;
        let mut s = fit.support.clone();
        s.sort_by(|&a, &b| {
            fit.beta[b]
                .abs()
                .partial_cmp(&fit.beta[a].abs())
                .expect("finite coefficients")
        });
        let mut pruned: Vec<usize> = Vec::new();
        for j in s {
            pruned.push(j);
            if pruned.len() > k || !support_is_parsimonious(tree, &pruned) {
                pruned.pop();
            }
        }
        pruned.sort_unstable();
        pruned
    };
    let p = support.len() + 1;
    let mut x = DMatrix::zeros(whitened_y.len(), p);
    x.set_column(0, &whitened_design.column(0));
    for (c, &j) in support.iter().enumerate() {
        x.set_column(c + 1, &whitened_design.column(j));
    }
    let theta = least_squares(&x, whitened_y)?;
    let resid = whitened_y - &x * &theta;
    let config = ShiftConfig::new(
        theta[0],
        support
            .iter()
            .zip(theta.iter().skip(1))
            .map(|(&node, &value)| Shift { node, value })
            .collect(),
    );
    Ok((config, resid.norm_squared()))
}

/// Drift-model start: GLS whitening by the Brownian tip covariance
/// (unit rate — the rate cancels out of the support search), Lasso, refit.
pub fn bm_start(tree: &PhyloTree, y: &DVector<f64>, k: usize) -> Result<ModelParams> {
    let n = tree.n_tips();
    let structure = bm_structure(tree);
    let chol = Whitener::new(&structure)?;
    let yw = chol.apply_vec(y);
    let xw = chol.apply_mat(&tree.tip_incidence());
    let (config, rss_w) = whitened_lasso_start(&xw, &yw, tree, k)?;
    Ok(ModelParams::Bm {
        sigma2: (rss_w / n as f64).max(VARIANCE_FLOOR),
        shifts: config,
    })
}

/// Selection-model start at a fixed α: whiten by the stationary OU
/// correlation, Lasso on the optimum-shift design (incidence columns scaled
/// by the age weights so coefficients are optimum shifts), refit.
fn ou_start_at_alpha(
    tree: &PhyloTree,
    y: &DVector<f64>,
    k: usize,
    alpha: f64,
) -> Result<ModelParams> {
    let n = tree.n_tips();
    let structure = ou_structure(tree, alpha);
    let chol = Whitener::new(&structure)?;
    let yw = chol.apply_vec(y);
    let w = w_vector(tree, alpha);
    let mut design = tree.tip_incidence();
    for j in 0..tree.n_nodes() {
        if w[j] != 1.0 {
            for i in 0..n {
                design[(i, j)] *= w[j];
            }
        }
    }
    let xw = chol.apply_mat(&design);
    let (config, rss_w) = whitened_lasso_start(&xw, &yw, tree, k)?;
    Ok(ModelParams::Ou {
        alpha,
        gamma2: (rss_w / n as f64).max(VARIANCE_FLOOR),
        shifts: config,
    })
}

/// Group tips by the regimes of a provisional shift configuration and
/// collect within-group (distance, squared-difference) pairs.
fn within_group_pairs(
    tree: &PhyloTree,
    config: &ShiftConfig,
    y: &DVector<f64>,
) -> Result<Vec<(f64, f64)>> {
    let induced = coloring_from_shifts(tree, config)?;
    let coloring: &NodeColoring = &induced.coloring;
    let dist = tree.tip_distances();
    let m = tree.n_internal();
    let n = tree.n_tips();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if coloring.colors[m + i] == coloring.colors[m + j] {
                let d = (y[i] - y[j]).powi(2);
                pairs.push((dist[(i, j)], d));
            }
        }
    }
    if pairs.len() > MAX_PAIRS {
        // Deterministic thinning: keep a uniform stride.
        let stride = pairs.len().div_ceil(MAX_PAIRS);
        pairs = pairs.into_iter().step_by(stride).collect();
    }
    Ok(pairs)
}

/// Selection-model start. Two stages: a pilot Lasso at the heuristic α
/// defines provisional regimes; within-regime squared tip contrasts have
/// expectation `2γ²(1 − e^{−αd})`, a saturating curve in the tip-pair
/// distance `d`, fitted robustly to give (α, γ²); the Lasso rerun at that α
/// produces the start. Falls back to the pilot values when the robust fit
/// is degenerate or pinned at the search boundary.
pub fn ou_start(tree: &PhyloTree, y: &DVector<f64>, k: usize) -> Result<ModelParams> {
    let h = tree.height();
    let (alpha_min, alpha_max) = (ALPHA_LOWER_FACTOR / h, ALPHA_UPPER_FACTOR / h);
    let alpha_pilot = std::f64::consts::LN_2 / (PILOT_HALF_LIFE_FRACTION * h);
    let pilot = ou_start_at_alpha(tree, y, k, alpha_pilot)?;

    let pairs = within_group_pairs(tree, pilot.shift_config(), y)?;
    let robust = fit_saturating_increments(&pairs, alpha_pilot, alpha_min, alpha_max);
    let alpha = match &robust {
        Ok(fit) if !fit.at_boundary => fit.alpha,
        _ => alpha_pilot,
    };
    let mut start = ou_start_at_alpha(tree, y, k, alpha)?;
    if let (Ok(fit), ModelParams::Ou { gamma2, .. }) = (&robust, &mut start) {
        if !fit.at_boundary && fit.gamma2 > VARIANCE_FLOOR {
            *gamma2 = fit.gamma2;
        }
    }
    Ok(start)
}

/// The list of EM starting points: the data-driven base start plus
/// `extra_restarts` deterministic perturbations of it.
pub fn initial_params(
    tree: &PhyloTree,
    y: &DVector<f64>,
    kind: ProcessKind,
    k: usize,
    fixed_alpha: Option<f64>,
    extra_restarts: usize,
    seed: u64,
) -> Result<Vec<ModelParams>> {
    let base = match (kind, fixed_alpha) {
        (ProcessKind::Bm, _) => bm_start(tree, y, k)?,
        (ProcessKind::Ou, Some(alpha)) => ou_start_at_alpha(tree, y, k, alpha)?,
        (ProcessKind::Ou, None) => ou_start(tree, y, k)?,
    };
    let mut starts = vec![base.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1011);
    for r in 0..extra_restarts {
        let scale = if r % 2 == 0 { 2.0 } else { 0.5 };
        let mut p = match &base {
            ModelParams::Bm { sigma2, shifts } => ModelParams::Bm {
                sigma2: sigma2 * scale,
                shifts: shifts.clone(),
            },
            ModelParams::Ou {
                alpha,
                gamma2,
                shifts,
            } => {
                let h = tree.height();
                let alpha = match fixed_alpha {
                    Some(a) => a,
                    None => (alpha * scale).clamp(ALPHA_LOWER_FACTOR / h, ALPHA_UPPER_FACTOR / h),
                };
                ModelParams::Ou {
                    alpha,
                    gamma2: *gamma2,
                    shifts: shifts.clone(),
                }
            }
        };
        for s in &mut p.shift_config_mut().shifts {
            let z: f64 = rng.sample(StandardNormal);
            s.value *= 1.0 + JITTER_SCALE * z;
        }
        starts.push(p);
    }
    Ok(starts)
}
