//! The shift model: a trait evolving on the tree by Brownian motion (BM) or
//! a stationary Ornstein-Uhlenbeck process (OUsun), with abrupt changes
//! ("shifts") on a few branches.
//!
//! Shifts enter through the vector `Δ` of size `m+n`: the first coordinate
//! carries the root value (the BM ancestral mean `μ`, or the OU ancestral
//! optimum `β₁`), and coordinate `i` carries the shift on the branch ending
//! at node `i` (0 when there is none). BM shifts displace the mean; OU
//! shifts displace the primary optimum `β`, which the trait then tracks
//! with phylogenetic half-life `t½ = ln 2 / α`.
//!
//! On an ultrametric tree of height `h`, tip means are `T Δ` under BM and
//! `T W(α) Δ` under OU, where `W(α) = Diag(1, 1 - e^{-α(h - t_pa(i))})`.
//! Rescaling a BM shift vector by `W(α)⁻¹` therefore produces an OU shift
//! vector with identical tip means — see [`similar_shifts`].

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::PhyloTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessKind {
    Bm,
    Ou,
}

impl std::fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProcessKind::Bm => write!(f, "bm"),
            ProcessKind::Ou => write!(f, "ou"),
        }
    }
}

/// One shift: the branch is identified by its child node.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub node: usize,
    pub value: f64,
}

/// A root value together with the shifts; the sparse form of `Δ`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ShiftConfig {
    pub root_value: f64,
    pub shifts: Vec<Shift>,
}

impl ShiftConfig {
    pub fn new(root_value: f64, shifts: Vec<Shift>) -> Self {
        ShiftConfig { root_value, shifts }
    }

    pub fn k(&self) -> usize {
        self.shifts.len()
    }

    /// Branch (= child node) indices carrying a shift.
    pub fn support(&self) -> Vec<usize> {
        self.shifts.iter().map(|s| s.node).collect()
    }

    pub fn validate(&self, tree: &PhyloTree) -> Result<()> {
        if !self.root_value.is_finite() {
            return Err(Error::InvalidParams("non-finite root value".into()));
        }
        let mut seen = vec![false; tree.n_nodes()];
        for s in &self.shifts {
            if s.node >= tree.n_nodes() {
                return Err(Error::InvalidParams(format!(
                    "shift node {} out of range (tree has {} nodes)",
                    s.node,
                    tree.n_nodes()
                )));
            }
            if s.node == tree.root() {
                return Err(Error::InvalidParams(
                    "a shift cannot sit on the root (there is no branch above it)".into(),
                ));
            }
            if seen[s.node] {
                return Err(Error::InvalidParams(format!(
                    "duplicate shift on node {}",
                    s.node
                )));
            }
            seen[s.node] = true;
            if !s.value.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "non-finite shift value on node {}",
                    s.node
                )));
            }
        }
        Ok(())
    }

    /// Dense `Δ` of length `m+n`.
    pub fn delta_vector(&self, tree: &PhyloTree) -> DVector<f64> {
        let mut d = DVector::zeros(tree.n_nodes());
        d[0] = self.root_value;
        for s in &self.shifts {
            d[s.node] = s.value;
        }
        d
    }
}

/// Full parameter set of either process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelParams {
    Bm {
        sigma2: f64,
        shifts: ShiftConfig,
    },
    Ou {
        alpha: f64,
        gamma2: f64,
        shifts: ShiftConfig,
    },
}

impl ModelParams {
    pub fn kind(&self) -> ProcessKind {
        match self {
            ModelParams::Bm { .. } => ProcessKind::Bm,
            ModelParams::Ou { .. } => ProcessKind::Ou,
        }
    }

    pub fn shift_config(&self) -> &ShiftConfig {
        match self {
            ModelParams::Bm { shifts, .. } | ModelParams::Ou { shifts, .. } => shifts,
        }
    }

    pub fn shift_config_mut(&mut self) -> &mut ShiftConfig {
        match self {
            ModelParams::Bm { shifts, .. } | ModelParams::Ou { shifts, .. } => shifts,
        }
    }

    /// Ancestral mean (BM) or ancestral optimum (OU).
    pub fn root_value(&self) -> f64 {
        self.shift_config().root_value
    }

    /// Infinitesimal variance: `σ²` for BM, `2αγ²` for OU.
    pub fn sigma2(&self) -> f64 {
        match self {
            ModelParams::Bm { sigma2, .. } => *sigma2,
            ModelParams::Ou { alpha, gamma2, .. } => 2.0 * alpha * gamma2,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            ModelParams::Bm { .. } => None,
            ModelParams::Ou { alpha, .. } => Some(*alpha),
        }
    }

    pub fn validate(&self, tree: &PhyloTree) -> Result<()> {
        self.shift_config().validate(tree)?;
        match self {
            ModelParams::Bm { sigma2, .. } => {
                if !(*sigma2 > 0.0) || !sigma2.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "sigma2 must be positive and finite, got {sigma2}"
                    )));
                }
            }
            ModelParams::Ou { alpha, gamma2, .. } => {
                if !(*alpha > 0.0) || !alpha.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "alpha must be positive and finite, got {alpha}"
                    )));
                }
                if !(*gamma2 > 0.0) || !gamma2.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "gamma2 must be positive and finite, got {gamma2}"
                    )));
                }
                tree.require_ultrametric()?;
            }
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------
// Deterministic structure: kernels, W(α), means, covariances
// ----------------------------------------------------------------------

/// The kernel vector `K^i` of an internal node: +1 at `i`, -1 at each child.
/// These satisfy `T K^i = 0` and `U K^i = e_i`, and span the kernel of `T`.
pub fn kernel_vector(tree: &PhyloTree, node: usize) -> Result<DVector<f64>> {
    if tree.is_tip(node) {
        return Err(Error::InvalidInput(format!(
            "kernel vectors are defined for internal nodes; node {node} is a tip"
        )));
    }
    let mut k = DVector::zeros(tree.n_nodes());
    k[node] = 1.0;
    for &c in tree.children(node) {
        k[c] = -1.0;
    }
    Ok(k)
}

/// Diagonal of `W(α)`: 1 for the root, `1 - e^{-α(h - t_pa(i))}` otherwise.
pub fn w_vector(tree: &PhyloTree, alpha: f64) -> DVector<f64> {
    let h = tree.height();
    let mut w = DVector::zeros(tree.n_nodes());
    w[0] = 1.0;
    for i in 1..tree.n_nodes() {
        let tp = tree.node_time(tree.parent(i).expect("non-root"));
        w[i] = 1.0 - (-alpha * (h - tp)).exp();
    }
    w
}

/// Node optima `β = U Δ` (OU), or equivalently the piecewise-constant node
/// means of the BM: the root value plus all shifts on the path to each node.
pub fn node_optima(tree: &PhyloTree, shifts: &ShiftConfig) -> DVector<f64> {
    let delta = shifts.delta_vector(tree);
    let mut beta = DVector::zeros(tree.n_nodes());
    beta[0] = delta[0];
    for i in 1..tree.n_nodes() {
        beta[i] = beta[tree.parent(i).expect("non-root")] + delta[i];
    }
    beta
}

/// Expectations `E[X_i]` at every node.
pub fn node_expectations(tree: &PhyloTree, params: &ModelParams) -> DVector<f64> {
    match params {
        ModelParams::Bm { shifts, .. } => node_optima(tree, shifts),
        ModelParams::Ou { alpha, shifts, .. } => {
            let beta = node_optima(tree, shifts);
            let mut e = DVector::zeros(tree.n_nodes());
            e[0] = beta[0];
            for i in 1..tree.n_nodes() {
                let pa = tree.parent(i).expect("non-root");
                let ei = (-alpha * tree.branch_length(i)).exp();
                e[i] = ei * e[pa] + beta[i] * (1.0 - ei);
            }
            e
        }
    }
}

/// Expected trait at the tips: `T Δ` for BM, `T W(α) Δ` for OU (ultrametric
/// trees only).
pub fn tip_means(tree: &PhyloTree, params: &ModelParams) -> Result<DVector<f64>> {
    if params.kind() == ProcessKind::Ou {
        tree.require_ultrametric()?;
    }
    let e = node_expectations(tree, params);
    Ok(DVector::from_fn(tree.n_tips(), |k, _| e[tree.tip_node(k)]))
}

/// Tip covariance, stored as a structure matrix and a scale:
/// `Var = scale · v` with `v_ij = t_ij`, `scale = σ²` for BM and
/// `v_ij = e^{-α d_ij}`, `scale = γ²` for OU.
pub struct TipCovariance {
    pub v: DMatrix<f64>,
    pub scale: f64,
}

impl TipCovariance {
    pub fn full(&self) -> DMatrix<f64> {
        &self.v * self.scale
    }
}

/// BM structure matrix on the tips: shared times `t_ij`.
pub fn bm_structure(tree: &PhyloTree) -> DMatrix<f64> {
    tree.tip_mrca_times()
}

/// Stationary-OU structure matrix on the tips: `e^{-α d_ij}`.
pub fn ou_structure(tree: &PhyloTree, alpha: f64) -> DMatrix<f64> {
    tree.tip_distances().map(|d| (-alpha * d).exp())
}

pub fn covariance(tree: &PhyloTree, params: &ModelParams) -> TipCovariance {
    match params {
        ModelParams::Bm { sigma2, .. } => TipCovariance {
            v: bm_structure(tree),
            scale: *sigma2,
        },
        ModelParams::Ou { alpha, gamma2, .. } => TipCovariance {
            v: ou_structure(tree, *alpha),
            scale: *gamma2,
        },
    }
}

// ----------------------------------------------------------------------
// BM/OU shift correspondence
// ----------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarDirection {
    BmToOu,
    OuToBm,
}

/// Rescale a shift configuration by `W(α)` so that the companion process has
/// the same tip means on the same support: `Δ^OU = W(α)⁻¹ Δ^BM`.
///
/// `W(α)` has positive diagonal on branches (the tree is ultrametric and
/// branch lengths are positive), so the map is a bijection that preserves
/// the support.
pub fn similar_shifts(
    tree: &PhyloTree,
    config: &ShiftConfig,
    alpha: f64,
    direction: SimilarDirection,
) -> Result<ShiftConfig> {
    tree.require_ultrametric()?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParams(format!(
            "alpha must be positive and finite, got {alpha}"
        )));
    }
    let w = w_vector(tree, alpha);
    let shifts = config
        .shifts
        .iter()
        .map(|s| {
            let value = match direction {
                SimilarDirection::BmToOu => s.value / w[s.node],
                SimilarDirection::OuToBm => s.value * w[s.node],
            };
            Shift { node: s.node, value }
        })
        .collect();
    Ok(ShiftConfig {
        root_value: config.root_value,
        shifts,
    })
}

// ----------------------------------------------------------------------
// Simulation
// ----------------------------------------------------------------------

/// One standard normal per node, keyed by `(seed, node)` so draws do not
/// depend on traversal order.
fn node_normal(seed: u64, node: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node as u64 + 1);
    StandardNormal.sample(&mut rng)
}

/// Simulate the trait at every node; `out[i]` is the value at node `i`
/// (tips occupy the last `n` entries). The BM root is fixed at the root
/// value; the OU root is drawn from the stationary law `N(β₁, γ²)`.
pub fn simulate_traits(tree: &PhyloTree, params: &ModelParams, seed: u64) -> Result<DVector<f64>> {
    params.validate(tree)?;
    let nn = tree.n_nodes();
    let mut x = DVector::zeros(nn);
    match params {
        ModelParams::Bm { sigma2, shifts } => {
            let delta = shifts.delta_vector(tree);
            x[0] = shifts.root_value;
            for i in 1..nn {
                let pa = tree.parent(i).expect("non-root");
                let sd = (tree.branch_length(i) * sigma2).sqrt();
                x[i] = x[pa] + delta[i] + sd * node_normal(seed, i);
            }
        }
        ModelParams::Ou {
            alpha,
            gamma2,
            shifts,
        } => {
            let beta = node_optima(tree, shifts);
            x[0] = beta[0] + gamma2.sqrt() * node_normal(seed, 0);
            for i in 1..nn {
                let pa = tree.parent(i).expect("non-root");
                let ei = (-alpha * tree.branch_length(i)).exp();
                let sd = (gamma2 * (1.0 - ei * ei)).sqrt();
                x[i] = ei * x[pa] + beta[i] * (1.0 - ei) + sd * node_normal(seed, i);
            }
        }
    }
    Ok(x)
}

/// The tip block of [`simulate_traits`].
pub fn simulate_tip_traits(
    tree: &PhyloTree,
    params: &ModelParams,
    seed: u64,
) -> Result<DVector<f64>> {
    let x = simulate_traits(tree, params, seed)?;
    Ok(x.rows(tree.n_internal(), tree.n_tips()).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const FIVE_TIP: &str = "((Y1:0.5,Y2:0.5):0.5,(Y3:0.7,(Y4:0.3,Y5:0.3):0.4):0.3);";

    fn five_tip() -> PhyloTree {
        PhyloTree::from_newick(FIVE_TIP).unwrap()
    }

    /// The printed 9x9 incidence matrix for this topology, in the reference
    /// ordering: internals (root, parent-of-Y3-clade, parent-of-(Y4,Y5),
    /// parent-of-(Y1,Y2)), then tips Y1..Y5. Our numbering orders the
    /// internals differently (preorder on the Newick above), so the check is
    /// up to the topology-forced relabeling of internal nodes.
    #[test]
    fn five_tip_incidence_matches_reference_matrix() {
        #[rustfmt::skip]
        let reference: [[f64; 9]; 9] = [
            [1., 0., 0., 0.,  0., 0., 0., 0., 0.],
            [1., 1., 0., 0.,  0., 0., 0., 0., 0.],
            [1., 1., 1., 0.,  0., 0., 0., 0., 0.],
            [1., 0., 0., 1.,  0., 0., 0., 0., 0.],
            [1., 0., 0., 1.,  1., 0., 0., 0., 0.],
            [1., 0., 0., 1.,  0., 1., 0., 0., 0.],
            [1., 1., 0., 0.,  0., 0., 1., 0., 0.],
            [1., 1., 1., 0.,  0., 0., 0., 1., 0.],
            [1., 1., 1., 0.,  0., 0., 0., 0., 1.],
        ];
        let t = five_tip();
        let u = t.incidence();
        // Reference index -> our index. Internals are forced by the
        // topology: reference 2 is the parent of Y3 (ours: 2), reference 3
        // the parent of (Y4,Y5) (ours: 3), reference 4 the parent of
        // (Y1,Y2) (ours: 1). Tips map by label.
        let map = |r: usize| -> usize {
            match r {
                0 => 0,
                1 => 2,
                2 => 3,
                3 => 1,
                k => t.node_by_label(&format!("Y{}", k - 3)).unwrap(),
            }
        };
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(
                    u[(map(i), map(j))],
                    reference[i][j],
                    "mismatch at reference ({i},{j})"
                );
            }
        }
        // And the tip rows of `u` are exactly `tip_incidence`.
        let tm = t.tip_incidence();
        for k in 0..5 {
            for j in 0..9 {
                assert_eq!(tm[(k, j)], u[(t.tip_node(k), j)]);
            }
        }
    }

    #[test]
    fn bm_tip_means_shift_only_below_the_shift() {
        let t = five_tip();
        let y3_branch = t.node_by_label("Y3").unwrap();
        let params = ModelParams::Bm {
            sigma2: 1.0,
            shifts: ShiftConfig::new(1.5, vec![Shift { node: y3_branch, value: 2.0 }]),
        };
        let mu = tip_means(&t, &params).unwrap();
        let expect = [1.5, 1.5, 3.5, 1.5, 1.5]; // tips Y1..Y5
        for k in 0..5 {
            assert_abs_diff_eq!(mu[k], expect[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn ou_tip_means_damp_the_shift_by_w() {
        let t = five_tip();
        let y3_branch = t.node_by_label("Y3").unwrap();
        let (alpha, beta1, delta) = (1.3, 0.5, 2.0);
        let params = ModelParams::Ou {
            alpha,
            gamma2: 0.5,
            shifts: ShiftConfig::new(beta1, vec![Shift { node: y3_branch, value: delta }]),
        };
        let mu = tip_means(&t, &params).unwrap();
        // The shift branch starts at the parent of Y3, at time 0.3.
        let w = 1.0 - (-alpha * (1.0 - 0.3)).exp();
        for (k, m) in mu.iter().enumerate() {
            let expect = if k == 2 { beta1 + delta * w } else { beta1 };
            assert_abs_diff_eq!(*m, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_vectors_annihilate_tip_incidence() {
        let t = five_tip();
        // Node 1 is the parent of tips Y1, Y2.
        let k = kernel_vector(&t, 1).unwrap();
        assert_eq!(k[1], 1.0);
        assert_eq!(k[t.node_by_label("Y1").unwrap()], -1.0);
        assert_eq!(k[t.node_by_label("Y2").unwrap()], -1.0);
        assert_eq!(k.iter().filter(|&&v| v != 0.0).count(), 3);

        let u = t.incidence();
        let tm = t.tip_incidence();
        for i in 0..t.n_internal() {
            let k = kernel_vector(&t, i).unwrap();
            let tk = &tm * &k;
            assert!(tk.iter().all(|&v| v == 0.0), "T K^{i} != 0");
            let uk = &u * &k;
            for j in 0..t.n_nodes() {
                assert_eq!(uk[j], if j == i { 1.0 } else { 0.0 }, "U K^{i} != e_{i}");
            }
        }
        assert!(kernel_vector(&t, t.tip_node(0)).is_err());
    }

    #[test]
    fn cherry_ou_covariance_has_quarter_correlation_at_half_life_one() {
        let t = PhyloTree::from_newick("(A:1,B:1);").unwrap();
        let params = ModelParams::Ou {
            alpha: std::f64::consts::LN_2,
            gamma2: 0.7,
            shifts: ShiftConfig::new(0.0, vec![]),
        };
        let cov = covariance(&t, &params);
        assert_abs_diff_eq!(cov.v[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.v[(0, 1)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.full()[(0, 1)], 0.25 * 0.7, epsilon = 1e-15);

        let bm = ModelParams::Bm {
            sigma2: 2.0,
            shifts: ShiftConfig::new(0.0, vec![]),
        };
        let cov = covariance(&t, &bm);
        assert_eq!(cov.v[(0, 0)], 1.0); // t_ii = h
        assert_eq!(cov.v[(0, 1)], 0.0); // split at the root
    }

    #[test]
    fn similar_shifts_preserve_tip_means_and_support() {
        let t = five_tip();
        let alpha = 0.8;
        let ou_shifts = ShiftConfig::new(
            -0.25,
            vec![
                Shift { node: 3, value: 1.0 },
                Shift { node: t.node_by_label("Y1").unwrap(), value: -2.0 },
            ],
        );
        let bm_shifts =
            similar_shifts(&t, &ou_shifts, alpha, SimilarDirection::OuToBm).unwrap();
        assert_eq!(bm_shifts.support(), ou_shifts.support());

        let ou = ModelParams::Ou { alpha, gamma2: 1.0, shifts: ou_shifts.clone() };
        let bm = ModelParams::Bm { sigma2: 1.0, shifts: bm_shifts.clone() };
        let mu_ou = tip_means(&t, &ou).unwrap();
        let mu_bm = tip_means(&t, &bm).unwrap();
        for k in 0..5 {
            assert_abs_diff_eq!(mu_ou[k], mu_bm[k], epsilon = 1e-14);
        }
        // And the round trip is the identity.
        let back = similar_shifts(&t, &bm_shifts, alpha, SimilarDirection::BmToOu).unwrap();
        for (a, b) in back.shifts.iter().zip(ou_shifts.shifts.iter()) {
            assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-14);
        }
    }

    #[test]
    fn ou_recursion_matches_linear_formulation() {
        // E[X] from the recursion must equal (U - A U B) Δ with
        // A = Diag(e^{-α t_i}) and B = Diag(0, e^{α t_pa(i)}).
        let t = five_tip();
        let alpha = 0.9;
        let shifts = ShiftConfig::new(
            0.4,
            vec![Shift { node: 2, value: -1.0 }, Shift { node: 7, value: 0.5 }],
        );
        let params = ModelParams::Ou { alpha, gamma2: 1.0, shifts: shifts.clone() };
        let e = node_expectations(&t, &params);

        let nn = t.n_nodes();
        let u = t.incidence();
        let delta = shifts.delta_vector(&t);
        let a = DMatrix::from_diagonal(&DVector::from_fn(nn, |i, _| {
            (-alpha * t.node_time(i)).exp()
        }));
        let b = DMatrix::from_diagonal(&DVector::from_fn(nn, |i, _| {
            if i == 0 {
                0.0
            } else {
                (alpha * t.node_time(t.parent(i).unwrap())).exp()
            }
        }));
        let lin = (&u - &a * &u * &b) * &delta;
        for i in 0..nn {
            assert_abs_diff_eq!(e[i], lin[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn simulation_is_seed_deterministic_and_traversal_independent() {
        let t = five_tip();
        let params = ModelParams::Ou {
            alpha: 2.0,
            gamma2: 0.5,
            shifts: ShiftConfig::new(0.0, vec![Shift { node: 6, value: 4.0 }]),
        };
        let a = simulate_traits(&t, &params, 11).unwrap();
        let b = simulate_traits(&t, &params, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_traits(&t, &params, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn simulated_moments_match_model_moments() {
        // BM on the five-tip tree, no shifts: Monte-Carlo tip mean and
        // covariance over 20k draws within ~3 standard errors.
        let t = five_tip();
        let params = ModelParams::Bm {
            sigma2: 1.0,
            shifts: ShiftConfig::new(0.0, vec![]),
        };
        let reps = 20_000;
        let n = t.n_tips();
        let mut sum = vec![0.0; n];
        let mut sum2 = DMatrix::<f64>::zeros(n, n);
        for seed in 0..reps {
            let y = simulate_tip_traits(&t, &params, seed as u64).unwrap();
            for i in 0..n {
                sum[i] += y[i];
                for j in 0..n {
                    sum2[(i, j)] += y[i] * y[j];
                }
            }
        }
        let cov_expect = covariance(&t, &params).full();
        let r = reps as f64;
        for i in 0..n {
            let mean = sum[i] / r;
            // sd of the mean = sqrt(h/reps)
            assert!(
                mean.abs() < 3.5 * (1.0 / r).sqrt(),
                "tip {i} mean {mean} too far from 0"
            );
            for j in 0..n {
                let cov = sum2[(i, j)] / r - (sum[i] / r) * (sum[j] / r);
                // Crude SE bound for a covariance of variables with var <= 1.
                let se = 2.0 / r.sqrt();
                assert!(
                    (cov - cov_expect[(i, j)]).abs() < 3.5 * se,
                    "cov({i},{j}) = {cov} vs {}",
                    cov_expect[(i, j)]
                );
            }
        }
    }

    #[test]
    fn ou_stationary_variance_is_gamma2_at_every_node() {
        // With no shifts the OU trait is stationary: every node has variance
        // γ² and mean β₁; check by Monte Carlo at a deep tip and the root.
        let t = five_tip();
        let params = ModelParams::Ou {
            alpha: 1.7,
            gamma2: 0.6,
            shifts: ShiftConfig::new(2.0, vec![]),
        };
        let reps = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut root_sum = 0.0;
        for seed in 0..reps {
            let x = simulate_traits(&t, &params, seed as u64).unwrap();
            let y = x[t.tip_node(4)];
            sum += y;
            sumsq += y * y;
            root_sum += x[0];
        }
        let r = reps as f64;
        let mean = sum / r;
        let var = sumsq / r - mean * mean;
        assert!((mean - 2.0).abs() < 3.5 * (0.6f64 / r).sqrt());
        assert!((root_sum / r - 2.0).abs() < 3.5 * (0.6f64 / r).sqrt());
        assert!((var - 0.6).abs() < 0.03, "stationary variance {var}");
    }
}
