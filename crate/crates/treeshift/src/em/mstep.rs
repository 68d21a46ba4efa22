//! M-step updates.
//!
//! Drift model: the update is exact. Shift placement maximizes a sum of
//! per-edge scores over parsimonious supports — the independent sets of a
//! linear matroid (incidence columns plus the root column) — so sorting by
//! score and adding whatever stays independent is provably optimal; the
//! remaining parameters then have closed forms.
//!
//! Selection model: the placement subproblem has no exact polynomial
//! solution, so the step is generalized-EM: a handful of candidate supports
//! (keep-and-refit, fixed-size Lasso, best single relocation) are scored
//! exactly and the winner taken. Keep-and-refit can never lose to the
//! incumbent, which is what makes the whole step monotone.

use nalgebra::{DMatrix, DVector};

use crate::em::estep::ConditionalMoments;
use crate::error::{Error, Result};
use crate::model::{node_optima, ModelParams, Shift, ShiftConfig};
use crate::numerics::{golden_section_min, lasso_fixed_support_size, solve_spd};
use crate::tree::PhyloTree;

/// Search range for the selection strength, relative to tree height:
/// `α ∈ [1e-4/h, 1e3/h]`.
pub const ALPHA_LOWER_FACTOR: f64 = 1e-4;
pub const ALPHA_UPPER_FACTOR: f64 = 1e3;

/// Variance floor keeping parameter sets valid when residuals vanish.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Relocation candidates are capped on large trees (the step stays a GEM
/// step regardless of how the candidate list is thinned).
const MAX_RELOCATION_TARGETS: usize = 128;

/// Color each tip by its nearest marked ancestor (`support ∪ {root}`).
fn support_tip_colors(tree: &PhyloTree, support: &[usize]) -> Vec<usize> {
    let mut marked = vec![false; tree.n_nodes()];
    marked[tree.root()] = true;
    for &s in support {
        marked[s] = true;
    }
    (0..tree.n_tips())
        .map(|k| {
            let tip = tree.tip_node(k);
            if marked[tip] {
                return tip;
            }
            tree.ancestors(tip)
                .find(|&a| marked[a])
                .expect("root is marked")
        })
        .collect()
}

/// Independence test used during greedy growth: a support is parsimonious
/// iff it splits the tips into `|support| + 1` distinct colors.
pub fn support_is_parsimonious(tree: &PhyloTree, support: &[usize]) -> bool {
    let colors = support_tip_colors(tree, support);
    let mut seen: Vec<usize> = colors;
    seen.sort_unstable();
    seen.dedup();
    seen.len() == support.len() + 1
}

/// Per-edge scores for drift-model shift placement: the complete-data cost
/// removed by absorbing edge `j`'s residual into a shift,
/// `(E[X_j|Y] − E[X_pa|Y])² / ℓ_j` (the root mean is pinned at the current
/// ancestral value by the E-step).
pub fn bm_support_scores(tree: &PhyloTree, moments: &ConditionalMoments) -> Vec<f64> {
    let mut scores = vec![0.0; tree.n_nodes()];
    for j in 1..tree.n_nodes() {
        let pa = tree.parent(j).expect("non-root");
        let diff = moments.mean[j] - moments.mean[pa];
        scores[j] = diff * diff / tree.branch_length(j);
    }
    scores
}

/// Greedy maximization of `Σ_{j∈S} scores[j]` over parsimonious supports of
/// size ≤ `k`: descending score order (ties to the smaller node index),
/// skipping any edge that would break independence. Exact by the matroid
/// exchange property.
pub fn greedy_parsimonious_support(tree: &PhyloTree, scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (1..tree.n_nodes()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for j in order {
        if chosen.len() == k {
            break;
        }
        chosen.push(j);
        if !support_is_parsimonious(tree, &chosen) {
            chosen.pop();
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Exact drift-model M-step at support size `k`.
///
/// Monotonicity: the greedy support maximizes the modular score, so its
/// zeroed residuals cost no more than the incumbent support's; the
/// ancestral value, shift values, and variance then take their joint
/// minimizers in closed form. Each stage weakly increases Q.
pub fn m_step_bm(tree: &PhyloTree, moments: &ConditionalMoments, k: usize) -> Result<ModelParams> {
    let scores = bm_support_scores(tree, moments);
    let support = greedy_parsimonious_support(tree, &scores, k);
    let in_support = {
        let mut mask = vec![false; tree.n_nodes()];
        for &s in &support {
            mask[s] = true;
        }
        mask
    };
    // Ancestral value: 1/ℓ-weighted mean over shift-free root children.
    // (A support holding every root child is non-parsimonious, so the set
    // is never empty.)
    let mut num = 0.0;
    let mut den = 0.0;
    for &c in tree.children(tree.root()) {
        if !in_support[c] {
            let l = tree.branch_length(c);
            num += moments.mean[c] / l;
            den += 1.0 / l;
        }
    }
    let mu = num / den;
    let parent_mean = |pa: usize| if pa == 0 { mu } else { moments.mean[pa] };

    let shifts: Vec<Shift> = support
        .iter()
        .map(|&j| {
            let pa = tree.parent(j).expect("non-root");
            Shift {
                node: j,
                value: moments.mean[j] - parent_mean(pa),
            }
        })
        .collect();
    let config = ShiftConfig::new(mu, shifts);

    let mut delta = vec![0.0; tree.n_nodes()];
    for s in &config.shifts {
        delta[s.node] = s.value;
    }
    let mut rss = 0.0;
    for j in 1..tree.n_nodes() {
        let pa = tree.parent(j).expect("non-root");
        let resid = moments.mean[j] - parent_mean(pa) - delta[j];
        let (var_pa, cov) = if pa == 0 {
            (0.0, 0.0) // the root is the parameter, not a random node
        } else {
            (moments.var[pa], moments.cov_parent[j])
        };
        rss += (resid * resid + moments.var[j] + var_pa - 2.0 * cov)
            / tree.branch_length(j);
    }
    let sigma2 = (rss / (tree.n_nodes() - 1) as f64).max(VARIANCE_FLOOR);
    Ok(ModelParams::Bm {
        sigma2,
        shifts: config,
    })
}

/// Whitened complete-data regression pieces for the selection model at a
/// given α: response `F` and design `ÃU`.
struct OuRegression {
    f: DVector<f64>,
    design: DMatrix<f64>,
}

fn ou_regression(tree: &PhyloTree, moments: &ConditionalMoments, alpha: f64) -> OuRegression {
    let nn = tree.n_nodes();
    let mut f = DVector::zeros(nn);
    let mut row_scale = vec![1.0; nn];
    f[0] = moments.mean[0];
    for j in 1..nn {
        let pa = tree.parent(j).expect("non-root");
        let a = (-alpha * tree.branch_length(j)).exp();
        let c = 1.0 - a * a;
        f[j] = (moments.mean[j] - a * moments.mean[pa]) / c.sqrt();
        row_scale[j] = ((1.0 - a) / (1.0 + a)).sqrt();
    }
    let mut design = tree.incidence();
    for j in 0..nn {
        let s = row_scale[j];
        if s != 1.0 {
            for c in 0..nn {
                design[(j, c)] *= s;
            }
        }
    }
    OuRegression { f, design }
}

/// Least-squares refit on `{root} ∪ support`; returns the coefficient
/// vector (aligned with the support order, root first) and the residual
/// sum of squares. Errors on a collinear (non-identifiable) support.
fn refit_support(
    reg: &OuRegression,
    support: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let p = support.len() + 1;
    let mut cols: Vec<usize> = Vec::with_capacity(p);
    cols.push(0);
    cols.extend_from_slice(support);
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (i, &ci) in cols.iter().enumerate() {
        rhs[i] = reg.design.column(ci).dot(&reg.f);
        for (j, &cj) in cols.iter().enumerate().skip(i) {
            let v = reg.design.column(ci).dot(&reg.design.column(cj));
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let theta = solve_spd(&gram, &rhs)?;
    let rss = reg.f.norm_squared() - theta.dot(&rhs);
    Ok((theta.iter().copied().collect(), rss.max(0.0)))
}

fn config_from_refit(support: &[usize], theta: &[f64]) -> ShiftConfig {
    ShiftConfig::new(
        theta[0],
        support
            .iter()
            .zip(&theta[1..])
            .map(|(&node, &value)| Shift { node, value })
            .collect(),
    )
}

/// Profile update of the stationary variance given everything else.
fn ou_profile_gamma2(
    tree: &PhyloTree,
    moments: &ConditionalMoments,
    shifts: &ShiftConfig,
    alpha: f64,
) -> f64 {
    let beta = node_optima(tree, shifts);
    let mut total = (moments.mean[0] - beta[0]).powi(2) + moments.var[0];
    for j in 1..tree.n_nodes() {
        let pa = tree.parent(j).expect("non-root");
        let a = (-alpha * tree.branch_length(j)).exp();
        let c = 1.0 - a * a;
        let resid = moments.mean[j] - a * moments.mean[pa] - beta[j] * (1.0 - a);
        total += (resid * resid
            + moments.var[j]
            + a * a * moments.var[pa]
            - 2.0 * a * moments.cov_parent[j])
            / c;
    }
    (total / tree.n_nodes() as f64).max(VARIANCE_FLOOR)
}

/// Golden-section update of α on `[1e-4/h, 1e3/h]` (log scale), with γ²
/// profiled out in closed form. Returns `(α, γ², hit_boundary)`; the
/// incumbent α is kept when the search finds nothing better, so the update
/// never decreases Q.
pub fn update_alpha(
    tree: &PhyloTree,
    moments: &ConditionalMoments,
    shifts: &ShiftConfig,
    alpha_old: f64,
) -> (f64, f64, bool) {
    let h = tree.height();
    let (lo, hi) = (ALPHA_LOWER_FACTOR / h, ALPHA_UPPER_FACTOR / h);
    let nn = tree.n_nodes() as f64;
    let objective = |ln_a: f64| -> f64 {
        let alpha = ln_a.exp();
        let g2 = ou_profile_gamma2(tree, moments, shifts, alpha);
        let mut log_dets = 0.0;
        for j in 1..tree.n_nodes() {
            let a = (-alpha * tree.branch_length(j)).exp();
            log_dets += (1.0 - a * a).ln();
        }
        nn * g2.ln() + log_dets
    };
    let res = golden_section_min(objective, lo.ln(), hi.ln(), 1e-6, 300);
    let old_obj = objective(alpha_old.clamp(lo, hi).ln());
    if res.fx < old_obj {
        let alpha = res.x.exp();
        (
            alpha,
            ou_profile_gamma2(tree, moments, shifts, alpha),
            res.at_lower || res.at_upper,
        )
    } else {
        let alpha = alpha_old.clamp(lo, hi);
        (
            alpha,
            ou_profile_gamma2(tree, moments, shifts, alpha),
            alpha <= lo * 1.001 || alpha >= hi * 0.999,
        )
    }
}

/// One generalized M-step for the selection model.
pub fn m_step_ou(
    tree: &PhyloTree,
    moments: &ConditionalMoments,
    k: usize,
    old: &ModelParams,
    estimate_alpha: bool,
) -> Result<ModelParams> {
    let alpha_old = old.alpha().expect("selection-model parameters");
    let old_support = old.shift_config().support();
    let reg = ou_regression(tree, moments, alpha_old);

    // Candidate 1: keep the incumbent support, refit its values. This one
    // is the monotonicity anchor: refitting cannot lose to the incumbent
    // values, so the chosen candidate never increases the residual.
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    let mut consider = |support: &[usize], reg: &OuRegression| {
        if support.len() > k || !support_is_parsimonious(tree, support) {
            return;
        }
        if let Ok((theta, rss)) = refit_support(reg, support) {
            if best.as_ref().map_or(true, |(b, _, _)| rss < *b) {
                best = Some((rss, support.to_vec(), theta));
            }
        }
    };
    consider(&old_support, &reg);

    // Candidate 2: fixed-support-size Lasso on the whitened complete-data
    // regression (root column unpenalized).
    let mut weights = vec![1.0; tree.n_nodes()];
    weights[0] = 0.0;
    if k > 0 {
        if let Ok(fit) = lasso_fixed_support_size(&reg.design, &reg.f, &weights, k) {
            // Largest coefficients first so a non-parsimonious support can
            // be pruned from the least important end.
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
                if !support_is_parsimonious(tree, &pruned) {
                    pruned.pop();
                }
            }
            pruned.sort_unstable();
            consider(&pruned, &reg);
        }
    }

    // Candidate 3: best single-shift relocation of the incumbent support.
    if !old_support.is_empty() {
        let targets: Vec<usize> = {
            let n_candidates = tree.n_nodes() - 1;
            if n_candidates <= 2 * MAX_RELOCATION_TARGETS {
                (1..tree.n_nodes()).collect()
            } else {
                // Thin by correlation with the incumbent residual.
                let (theta, _) = refit_support(&reg, &old_support)?;
                let mut resid = reg.f.clone();
                let mut cols = vec![0usize];
                cols.extend_from_slice(&old_support);
                for (i, &c) in cols.iter().enumerate() {
                    resid -= reg.design.column(c) * theta[i];
                }
                let mut scored: Vec<(f64, usize)> = (1..tree.n_nodes())
                    .map(|j| (reg.design.column(j).dot(&resid).abs(), j))
                    .collect();
                scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite"));
                scored
                    .into_iter()
                    .take(MAX_RELOCATION_TARGETS)
                    .map(|(_, j)| j)
                    .collect()
            }
        };
        for &out in &old_support {
            for &inb in &targets {
                if old_support.contains(&inb) {
                    continue;
                }
                let mut s: Vec<usize> = old_support
                    .iter()
                    .copied()
                    .filter(|&j| j != out)
                    .chain(std::iter::once(inb))
                    .collect();
                s.sort_unstable();
                consider(&s, &reg);
            }
        }
    }

    let (_, support, theta) =
        best.ok_or_else(|| Error::InvalidInput("no admissible support candidate".into()))?;
    let config = config_from_refit(&support, &theta);

    let (alpha, gamma2, _boundary) = if estimate_alpha {
        update_alpha(tree, moments, &config, alpha_old)
    } else {
        (
            alpha_old,
            ou_profile_gamma2(tree, moments, &config, alpha_old),
            false,
        )
    };
    Ok(ModelParams::Ou {
        alpha,
        gamma2,
        shifts: config,
    })
}
