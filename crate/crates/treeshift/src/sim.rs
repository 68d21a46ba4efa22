//! Simulation-study drivers and scores: balanced shift placement, the
//! adjusted Rand index between tip partitions, support recovery metrics,
//! and a replicate runner for star-design studies.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::em::FitResult;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{simulate_tip_traits, ModelParams, ProcessKind, Shift, ShiftConfig};
use crate::parsimony::{coloring_from_params, is_parsimonious};
use crate::selection::{select, SelectionConfig};
use crate::tree::PhyloTree;

/// Attempts at drawing a parsimonious balanced allocation before giving up.
const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Shift-value mixture: `N(+4, 1)` and `N(−4, 1)` in equal proportions
/// (keeps shifts away from zero amplitude).
pub const SHIFT_MIXTURE_MEAN: f64 = 4.0;

/// Derive a named sub-stream seed from the master seed (FNV-1a over the
/// stream name, the index, and the seed) so that every random component of
/// a study is independently and reproducibly seeded.
pub fn substream(seed: u64, name: &str, index: u64) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in name.bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    for b in index.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    for b in seed.to_le_bytes() {
        h = (h ^ b as u64).wrapping_mul(PRIME);
    }
    h
}

/// Adjusted Rand index between two labelings of the same items, by pair
/// counting. 1 for identical partitions, expectation 0 for independent
/// ones; can be negative.
pub fn adjusted_rand_index(a: &[u32], b: &[u32]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions of the same items");
    let n = a.len();
    if n == 0 {
        return 1.0;
    }
    let ka = 1 + *a.iter().max().expect("non-empty") as usize;
    let kb = 1 + *b.iter().max().expect("non-empty") as usize;
    let mut table = vec![vec![0u64; kb]; ka];
    for i in 0..n {
        table[a[i] as usize][b[i] as usize] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let row_sum: f64 = table.iter().map(|r| c2(r.iter().sum())).sum();
    let col_sum: f64 = (0..kb)
        .map(|j| c2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = row_sum * col_sum / total;
    let max_index = 0.5 * (row_sum + col_sum);
    if (max_index - expected).abs() < 1e-12 {
        // Degenerate case (e.g. both partitions are single clusters):
        // identical partitions score 1, anything else 0. Partitions are
        // identical iff the contingency table is a (permuted) diagonal —
        // exactly one nonzero cell in every row and every column.
        let rows_ok = table
            .iter()
            .all(|r| r.iter().filter(|&&x| x > 0).count() == 1);
        let cols_ok =
            (0..kb).all(|j| table.iter().filter(|r| r[j] > 0).count() == 1);
        return if ka == kb && rows_ok && cols_ok { 1.0 } else { 0.0 };
    }
    (index - expected) / (max_index - expected)
}

/// Draw `k` shift values from the ±[`SHIFT_MIXTURE_MEAN`] Gaussian mixture
/// and place them in a balanced way: the tree height is cut into `k` equal
/// bands, one edge is drawn uniformly among the edges crossing each band,
/// and the whole allocation is redrawn until it is parsimonious.
pub fn draw_balanced_shifts(
    tree: &PhyloTree,
    k: usize,
    root_value: f64,
    seed: u64,
) -> Result<ShiftConfig> {
    if k == 0 {
        return Ok(ShiftConfig::new(root_value, vec![]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = tree.height();
    // Edges crossing each height band.
    let bands: Vec<Vec<usize>> = (0..k)
        .map(|s| {
            let lo = h * s as f64 / k as f64;
            let hi = h * (s + 1) as f64 / k as f64;
            (1..tree.n_nodes())
                .filter(|&j| {
                    let start = tree.node_time(tree.parent(j).expect("non-root"));
                    let end = tree.node_time(j);
                    start < hi && end > lo
                })
                .collect()
        })
        .collect();
    if let Some(s) = bands.iter().position(|b| b.is_empty()) {
        return Err(Error::InvalidInput(format!(
            "no edge crosses height band {s} of {k}"
        )));
    }
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let mut support: Vec<usize> = bands
            .iter()
            .map(|band| band[rng.gen_range(0..band.len())])
            .collect();
        support.sort_unstable();
        support.dedup();
        if support.len() != k {
            continue; // an edge was drawn for two bands
        }
        let shifts: Vec<Shift> = support
            .iter()
            .map(|&node| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let z: f64 = rng.sample(StandardNormal);
                Shift {
                    node,
                    value: sign * SHIFT_MIXTURE_MEAN + z,
                }
            })
            .collect();
        let config = ShiftConfig::new(root_value, shifts);
        if is_parsimonious(tree, &config) {
            return Ok(config);
        }
    }
    Err(Error::InvalidInput(format!(
        "no parsimonious balanced allocation of {k} shifts found in \
         {MAX_PLACEMENT_ATTEMPTS} attempts"
    )))
}

/// True-vs-fitted support agreement: `(TP, FP)` — fitted edges that do /
/// do not carry a true shift.
pub fn support_recovery(true_support: &[usize], fitted: &[usize]) -> (usize, usize) {
    let tp = fitted.iter().filter(|j| true_support.contains(j)).count();
    (tp, fitted.len() - tp)
}

/// One cell of a star-design study: everything varies around this base.
#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub n_tips: usize,
    pub birth_rate: f64,
    /// Process simulated *and* fitted.
    pub kind: ProcessKind,
    pub k_true: usize,
    /// Selection strength (ignored for the drift model).
    pub alpha: f64,
    /// Stationary variance γ² (OU) or diffusion rate σ² (BM).
    pub variance: f64,
    pub root_value: f64,
    pub replicates: usize,
    pub seed: u64,
    pub selection: SelectionConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            n_tips: 64,
            birth_rate: 0.1,
            kind: ProcessKind::Ou,
            k_true: 5,
            alpha: 3.0,
            variance: 0.5,
            root_value: 0.0,
            replicates: 20,
            seed: 0,
            selection: SelectionConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn true_params(&self, shifts: ShiftConfig) -> ModelParams {
        match self.kind {
            ProcessKind::Bm => ModelParams::Bm {
                sigma2: self.variance,
                shifts,
            },
            ProcessKind::Ou => ModelParams::Ou {
                alpha: self.alpha,
                gamma2: self.variance,
                shifts,
            },
        }
    }
}

/// Per-replicate study outcome.
#[derive(Clone, Debug)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub k_true: usize,
    pub k_selected: usize,
    /// Adjusted Rand index between the true and fitted tip partitions.
    pub ari: f64,
    /// The fitted equivalence class has exactly one member.
    pub unambiguous: bool,
    /// `TP / K_t`; only for unambiguous fits with `K_t > 0`.
    pub sensitivity: Option<f64>,
    /// `FP / (n + m − K_t)`; only for unambiguous fits.
    pub fpr: Option<f64>,
    pub alpha_hat: Option<f64>,
    /// Fitted γ² (OU) or σ² (BM).
    pub variance_hat: f64,
    pub loglik: f64,
    pub converged: bool,
}

/// Run one replicate: draw shifts (sub-stream "shifts"), simulate traits
/// (sub-stream "noise"), run model selection, and score the winner.
pub fn run_replicate(
    tree: &PhyloTree,
    config: &StudyConfig,
    replicate: usize,
) -> Result<ReplicateOutcome> {
    let shifts = draw_balanced_shifts(
        tree,
        config.k_true,
        config.root_value,
        substream(config.seed, "shifts", replicate as u64),
    )?;
    let truth = config.true_params(shifts);
    let y = simulate_tip_traits(tree, &truth, substream(config.seed, "noise", replicate as u64))?;
    let selection = select(tree, &y, config.kind, &config.selection)?;
    score_replicate(tree, config, replicate, &truth, &selection.best, selection.table.selected)
}

/// Score a fitted model against the generating one (shared by the study
/// runner and end-to-end tests that fit without selection).
pub fn score_replicate(
    tree: &PhyloTree,
    config: &StudyConfig,
    replicate: usize,
    truth: &ModelParams,
    best: &FitResult,
    k_selected: usize,
) -> Result<ReplicateOutcome> {
    let true_coloring = coloring_from_params(tree, truth)?;
    let true_tips = true_coloring.coloring.tip_coloring(tree);
    let ari = adjusted_rand_index(
        true_tips.colors(),
        best.equivalence.tip_coloring.colors(),
    );
    let unambiguous = best.equivalence.class_size == 1u32.into();
    let (sensitivity, fpr) = if unambiguous {
        let true_support = truth.shift_config().support();
        let fitted = best.params.shift_config().support();
        let (tp, fp) = support_recovery(&true_support, &fitted);
        let sens = (config.k_true > 0).then(|| tp as f64 / config.k_true as f64);
        let denom = (tree.n_nodes() - config.k_true) as f64;
        (sens, Some(fp as f64 / denom))
    } else {
        (None, None)
    };
    Ok(ReplicateOutcome {
        replicate,
        k_true: config.k_true,
        k_selected,
        ari,
        unambiguous,
        sensitivity,
        fpr,
        alpha_hat: best.params.alpha(),
        variance_hat: match &best.params {
            ModelParams::Bm { sigma2, .. } => *sigma2,
            ModelParams::Ou { gamma2, .. } => *gamma2,
        },
        loglik: best.loglik,
        converged: best.converged,
    })
}

/// Aggregate study summary.
#[derive(Clone, Debug)]
pub struct StudySummary {
    pub n_ok: usize,
    pub n_failed: usize,
    pub median_ari: f64,
    /// `histogram[k]` = replicates with `K̂ = k`.
    pub k_hat_histogram: Vec<usize>,
    /// Share of replicates with `K̂ ≤ K_true`.
    pub share_k_at_most_true: f64,
    pub share_k_exact: f64,
    pub share_unambiguous: f64,
    pub median_sensitivity: Option<f64>,
    pub median_fpr: Option<f64>,
    /// Median relative error of α̂ (OU studies only).
    pub median_alpha_rel_err: Option<f64>,
    /// Median relative error of the fitted variance.
    pub median_variance_rel_err: f64,
}

#[derive(Debug)]
pub struct StudyResult {
    /// Per-replicate outcomes; failed replicates carry the error text.
    pub outcomes: Vec<std::result::Result<ReplicateOutcome, String>>,
    pub summary: StudySummary,
    pub tree: PhyloTree,
}

fn median(values: &mut Vec<f64>) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Run the whole study: one tree (sub-stream "tree"), `replicates`
/// independent replicates fanned out in parallel, partial failures kept as
/// error strings so a long study always produces its summary.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    let tree = PhyloTree::simulate_yule(
        config.n_tips,
        config.birth_rate,
        substream(config.seed, "tree", 0),
    )?;
    let outcomes: Vec<std::result::Result<ReplicateOutcome, String>> = exec::map_collect(
        (0..config.replicates).collect(),
        |rep| match run_replicate(&tree, config, rep) {
            Ok(o) => Ok(o),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                Err(e.to_string())
            }
        },
    );
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let n_ok = ok.len();
    let n_failed = outcomes.len() - n_ok;
    let mut aris: Vec<f64> = ok.iter().map(|o| o.ari).collect();
    let k_cap = ok.iter().map(|o| o.k_selected).max().unwrap_or(0);
    let mut hist = vec![0usize; k_cap + 1];
    for o in &ok {
        hist[o.k_selected] += 1;
    }
    let share = |pred: &dyn Fn(&ReplicateOutcome) -> bool| {
        if n_ok == 0 {
            0.0
        } else {
            ok.iter().filter(|o| pred(o)).count() as f64 / n_ok as f64
        }
    };
    let mut sens: Vec<f64> = ok.iter().filter_map(|o| o.sensitivity).collect();
    let mut fprs: Vec<f64> = ok.iter().filter_map(|o| o.fpr).collect();
    let mut alpha_err: Vec<f64> = ok
        .iter()
        .filter_map(|o| o.alpha_hat)
        .map(|a| (a - config.alpha).abs() / config.alpha)
        .collect();
    let mut var_err: Vec<f64> = ok
        .iter()
        .map(|o| (o.variance_hat - config.variance).abs() / config.variance)
        .collect();
    let summary = StudySummary {
        n_ok,
        n_failed,
        median_ari: median(&mut aris),
        k_hat_histogram: hist,
        share_k_at_most_true: share(&|o| o.k_selected <= o.k_true),
        share_k_exact: share(&|o| o.k_selected == o.k_true),
        share_unambiguous: share(&|o| o.unambiguous),
        median_sensitivity: (!sens.is_empty()).then(|| median(&mut sens)),
        median_fpr: (!fprs.is_empty()).then(|| median(&mut fprs)),
        median_alpha_rel_err: (!alpha_err.is_empty()).then(|| median(&mut alpha_err)),
        median_variance_rel_err: median(&mut var_err),
    };
    Ok(StudyResult {
        outcomes,
        summary,
        tree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_is_one_for_identical_partitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let labels: Vec<u32> = (0..40).map(|_| rng.gen_range(0..4)).collect();
            assert_eq!(adjusted_rand_index(&labels, &labels), 1.0);
        }
    }

    #[test]
    fn ari_matches_a_hand_computed_contingency() {
        // Partitions {0,1}{2,3} vs {0,1}{2}{3}: index 1, expected 1/3,
        // max 3/2 → ARI = (2/3)/(7/6) = 4/7.
        let a = [0u32, 0, 1, 1];
        let b = [0u32, 0, 1, 2];
        let ari = adjusted_rand_index(&a, &b);
        assert!((ari - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn ari_of_independent_partitions_averages_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let draws = 1000;
        let mut values = Vec::with_capacity(draws);
        for _ in 0..draws {
            let a: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let b: Vec<u32> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            values.push(adjusted_rand_index(&a, &b));
        }
        let mean = values.iter().sum::<f64>() / draws as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / draws as f64;
        let se = (var / draws as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se,
            "mean ARI {mean} not within 3 SE ({se}) of 0"
        );
    }

    #[test]
    fn degenerate_partitions_are_handled() {
        let all_one = [0u32, 0, 0, 0];
        assert_eq!(adjusted_rand_index(&all_one, &all_one), 1.0);
        let split = [0u32, 0, 1, 1];
        // One trivial, one informative: agreement is at chance level.
        assert_eq!(adjusted_rand_index(&all_one, &split), 0.0);
    }

    #[test]
    fn balanced_placement_is_parsimonious_spread_and_deterministic() {
        let tree = PhyloTree::simulate_yule(64, 0.1, 42).unwrap();
        let k = 5;
        let a = draw_balanced_shifts(&tree, k, 0.0, 9).unwrap();
        let b = draw_balanced_shifts(&tree, k, 0.0, 9).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(a.k(), k);
        assert!(is_parsimonious(&tree, &a));
        // Every height band contains at least one of the drawn edges.
        let h = tree.height();
        for s in 0..k {
            let lo = h * s as f64 / k as f64;
            let hi = h * (s + 1) as f64 / k as f64;
            assert!(
                a.shifts.iter().any(|sh| {
                    let start = tree.node_time(tree.parent(sh.node).unwrap());
                    let end = tree.node_time(sh.node);
                    start < hi && end > lo
                }),
                "band {s} holds no shift"
            );
        }
        // Mixture values: away from zero, not absurd.
        for sh in &a.shifts {
            assert!(sh.value.abs() > 0.5 && sh.value.abs() < 10.0);
        }
    }

    #[test]
    fn support_recovery_counts_tp_and_fp() {
        let (tp, fp) = support_recovery(&[3, 7, 11], &[7, 11, 20]);
        assert_eq!((tp, fp), (2, 1));
        let (tp0, fp0) = support_recovery(&[], &[4]);
        assert_eq!((tp0, fp0), (0, 1));
    }

    #[test]
    fn substreams_are_deterministic_and_distinct() {
        assert_eq!(substream(5, "noise", 3), substream(5, "noise", 3));
        assert_ne!(substream(5, "noise", 3), substream(5, "noise", 4));
        assert_ne!(substream(5, "noise", 3), substream(5, "shifts", 3));
        assert_ne!(substream(5, "noise", 3), substream(6, "noise", 3));
    }

    #[test]
    fn one_easy_replicate_runs_end_to_end() {
        let config = StudyConfig {
            n_tips: 32,
            k_true: 2,
            alpha: 3.0,
            variance: 0.05,
            replicates: 1,
            seed: 11,
            selection: SelectionConfig {
                alpha_grid: Some(vec![3.0]),
                ..Default::default()
            },
            ..Default::default()
        };
        let tree = PhyloTree::simulate_yule(config.n_tips, config.birth_rate, 1).unwrap();
        let outcome = run_replicate(&tree, &config, 0).unwrap();
        assert!(outcome.ari > 0.5, "easy replicate should score well: {outcome:?}");
        assert!(outcome.k_selected <= 3);
        assert!(outcome.loglik.is_finite());
    }
}
