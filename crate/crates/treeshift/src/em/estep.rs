//! Exact E-step: conditional moments of the latent node values given the
//! tip data, by one upward and one downward pass of Gaussian message
//! passing along the tree. The upward pass also yields the observed-data
//! log-likelihood for free.
//!
//! Every edge carries a linear-Gaussian transition `X_i | X_pa ~
//! N(a_i X_pa + b_i, v_i)`; the drift and selection models differ only in
//! those three coefficients and in the root law (fixed value vs stationary
//! Gaussian), so one message-passing core serves both.

use crate::error::{Error, Result};
use crate::model::{node_optima, ModelParams};
use crate::tree::PhyloTree;

const LN_2PI: f64 = 1.8378770664093453;

/// Per-edge linear-Gaussian coefficients (`a x_pa + b`, variance `v`),
/// indexed by child node; entry 0 (the root has no edge) holds the root
/// law instead: `a=0`, `b` = root mean, `v` = root variance (0 when the
/// root is a fixed parameter).
pub struct EdgeCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
}

/// Build the transition coefficients for a parameter set.
pub fn edge_coefficients(tree: &PhyloTree, params: &ModelParams) -> Result<EdgeCoefficients> {
    params.validate(tree)?;
    let nn = tree.n_nodes();
    let mut a = vec![0.0; nn];
    let mut b = vec![0.0; nn];
    let mut v = vec![0.0; nn];
    match params {
        ModelParams::Bm { sigma2, shifts } => {
            let mut delta = vec![0.0; nn];
            for s in &shifts.shifts {
                delta[s.node] = s.value;
            }
            b[0] = shifts.root_value;
            v[0] = 0.0;
            for i in 1..nn {
                a[i] = 1.0;
                b[i] = delta[i];
                v[i] = sigma2 * tree.branch_length(i);
            }
        }
        ModelParams::Ou {
            alpha,
            gamma2,
            shifts,
        } => {
            let beta = node_optima(tree, shifts);
            b[0] = beta[0];
            v[0] = *gamma2;
            for i in 1..nn {
                let e = (-alpha * tree.branch_length(i)).exp();
                a[i] = e;
                b[i] = beta[i] * (1.0 - e);
                v[i] = gamma2 * (1.0 - e * e);
            }
        }
    }
    Ok(EdgeCoefficients { a, b, v })
}

/// First and second conditional moments of every node value given the tip
/// data, together with the observed-data log-likelihood.
#[derive(Clone, Debug)]
pub struct ConditionalMoments {
    /// `E[X_i | Y]`; equals the observation at tips and the fixed root
    /// value under the drift model.
    pub mean: Vec<f64>,
    /// `Var[X_i | Y]`; zero at tips (and at a fixed root).
    pub var: Vec<f64>,
    /// `Cov[X_i, X_pa(i) | Y]`; zero for the root entry and at tips.
    pub cov_parent: Vec<f64>,
    /// `ln p(Y | θ)`.
    pub loglik: f64,
}

/// Run the upward–downward pass.
pub fn e_step(tree: &PhyloTree, params: &ModelParams, y: &[f64]) -> Result<ConditionalMoments> {
    let nn = tree.n_nodes();
    let m = tree.n_internal();
    let n = tree.n_tips();
    if y.len() != n {
        return Err(Error::Mismatch(format!(
            "{} observations for {} tips",
            y.len(),
            n
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("observations must be finite".into()));
    }
    let coef = edge_coefficients(tree, params)?;

    // Upward pass in natural parameters. The message from node i to its
    // parent is exp(cst_i + h_i·x_pa − ½·lam_i·x_pa²); the only divisors
    // are v > 0 and 1 + Λv ≥ 1, so an edge with a ≈ 0 (large α·ℓ under the
    // selection model) degrades to a flat message instead of overflowing —
    // which is the exact limit: such a child carries no information about
    // its parent. For internal nodes, (lam_below, h_below, cst_below) is
    // the product of the children's messages — the node's own
    // below-likelihood in x_i — kept for the downward pass.
    let mut lam = vec![0.0; nn];
    let mut h = vec![0.0; nn];
    let mut cst = vec![0.0; nn];
    let mut lam_below = vec![0.0; nn];
    let mut h_below = vec![0.0; nn];
    let mut cst_below = vec![0.0; nn];
    for i in (0..nn).rev() {
        let (a, b, v) = (coef.a[i], coef.b[i], coef.v[i]);
        if tree.is_tip(i) {
            // N(y; a·x_pa + b, v) as a function of x_pa.
            let yi = y[i - m];
            lam[i] = a * a / v;
            h[i] = a * (yi - b) / v;
            cst[i] = -0.5 * (LN_2PI + v.ln()) - (yi - b) * (yi - b) / (2.0 * v);
            continue;
        }
        // Product of the children's messages.
        let mut lb = 0.0;
        let mut hb = 0.0;
        let mut cb = 0.0;
        for &c in tree.children(i) {
            lb += lam[c];
            hb += h[c];
            cb += cst[c];
        }
        lam_below[i] = lb;
        h_below[i] = hb;
        cst_below[i] = cb;
        if i == 0 {
            break;
        }
        // ∫ N(x_i; a·x_pa + b, v) · exp(cb + hb·x_i − ½·lb·x_i²) dx_i.
        let s = 1.0 + lb * v;
        lam[i] = a * a * lb / s;
        h[i] = a * (hb - lb * b) / s;
        cst[i] = cb + (hb * hb * v - lb * b * b + 2.0 * hb * b) / (2.0 * s) - 0.5 * s.ln();
    }

    let mut mean = vec![0.0; nn];
    let mut var = vec![0.0; nn];
    let mut cov_parent = vec![0.0; nn];

    // Root posterior and total likelihood.
    let (lb, hb, cb) = (lam_below[0], h_below[0], cst_below[0]);
    let loglik = if coef.v[0] == 0.0 {
        // Fixed root: evaluate the children product at the root value.
        mean[0] = coef.b[0];
        var[0] = 0.0;
        cb + hb * coef.b[0] - 0.5 * lb * coef.b[0] * coef.b[0]
    } else {
        // Stationary Gaussian root: integrate prior × below-likelihood.
        let (mu, v0) = (coef.b[0], coef.v[0]);
        let s = 1.0 + lb * v0;
        var[0] = v0 / s;
        mean[0] = (mu + v0 * hb) / s;
        cb + (hb * hb * v0 - lb * mu * mu + 2.0 * hb * mu) / (2.0 * s) - 0.5 * s.ln()
    };

    // Downward pass, parents first (ascending index).
    for i in 1..nn {
        let pa = tree.parent(i).expect("non-root");
        if tree.is_tip(i) {
            mean[i] = y[i - m];
            var[i] = 0.0;
            cov_parent[i] = 0.0;
            continue;
        }
        // p(x_i | x_pa, Y) ∝ N(x_i; a·x_pa + b, v) · below-likelihood(x_i)
        let (a, b, v) = (coef.a[i], coef.b[i], coef.v[i]);
        let s = 1.0 + lam_below[i] * v;
        let w = v / s;
        let c = a / s;
        let d = (b + v * h_below[i]) / s;
        mean[i] = c * mean[pa] + d;
        var[i] = w + c * c * var[pa];
        cov_parent[i] = c * var[pa];
    }

    Ok(ConditionalMoments {
        mean,
        var,
        cov_parent,
        loglik,
    })
}

/// Expected complete-data log-likelihood `Q(θ; moments)` — the quantity
/// each M-step update must not decrease. Under the drift model the root is
/// the parameter itself, so root-child edges read the parameter, not the
/// (pinned) conditional moment.
pub fn q_function(tree: &PhyloTree, params: &ModelParams, moments: &ConditionalMoments) -> f64 {
    let coef = edge_coefficients(tree, params).expect("params validated");
    let fixed_root = coef.v[0] == 0.0;
    let mut q = 0.0;
    if !fixed_root {
        let d = (moments.mean[0] - coef.b[0]).powi(2) + moments.var[0];
        q += -0.5 * (LN_2PI + coef.v[0].ln() + d / coef.v[0]);
    }
    for i in 1..tree.n_nodes() {
        let pa = tree.parent(i).expect("non-root");
        let (mean_pa, var_pa, cov) = if pa == 0 && fixed_root {
            (coef.b[0], 0.0, 0.0)
        } else {
            (moments.mean[pa], moments.var[pa], moments.cov_parent[i])
        };
        let resid = moments.mean[i] - coef.a[i] * mean_pa - coef.b[i];
        let d = resid * resid + moments.var[i] + coef.a[i] * coef.a[i] * var_pa
            - 2.0 * coef.a[i] * cov;
        q += -0.5 * (LN_2PI + coef.v[i].ln() + d / coef.v[i]);
    }
    q
}
