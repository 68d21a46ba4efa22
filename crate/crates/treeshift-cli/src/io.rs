//! File formats crossing the CLI boundary: trait tables (TSV), parameter
//! and result documents (JSON). Node references in JSON accept either the
//! documented node index or a label; outputs always carry both the index
//! and the `(parent, child)` label pair of each shift edge, so reports
//! stay readable on trees whose internal nodes were never named by hand
//! (the parser synthesizes `n<k>` preorder names for those).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use treeshift::em::{EquivalenceSummary, FitResult};
use treeshift::selection::{CriterionTable, Selection};
use treeshift::sim::{ReplicateOutcome, StudySummary};
use treeshift::{ModelParams, PhyloTree, ProcessKind, Shift, ShiftConfig};

use crate::{data, usage, CliResult};

// ----------------------------------------------------------------------
// Basic file plumbing
// ----------------------------------------------------------------------

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read `{}`: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| data(format!("cannot write `{}`: {e}", path.display())))
}

pub fn load_tree(path: &Path) -> CliResult<PhyloTree> {
    let text = read_to_string(path)?;
    let tree = PhyloTree::from_newick(text.trim())?;
    Ok(tree)
}

/// Serialize a JSON document (pretty, trailing newline) to `path`, or to
/// stdout when no path is given.
pub fn emit_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| data(format!("cannot serialize result: {e}")))?;
    text.push('\n');
    match path {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `f64` → JSON-safe option: JSON has no NaN, so degenerate aggregates
/// (e.g. a median over zero successful replicates) become `null`.
pub fn finite(x: f64) -> Option<f64> {
    if x.is_finite() {
        Some(x)
    } else {
        None
    }
}

// ----------------------------------------------------------------------
// Trait tables
// ----------------------------------------------------------------------

/// Read a two-column TSV of `(tip label, trait value)` and return values
/// ordered by the tree's tip rank. Labels must match the tree's tip set
/// exactly — every line must name a tip, no tip may repeat, and no tip
/// may be missing; violations name the offending label.
pub fn read_traits(path: &Path, tree: &PhyloTree) -> CliResult<Vec<f64>> {
    let text = read_to_string(path)?;
    let mut values: Vec<Option<f64>> = vec![None; tree.n_tips()];
    let mut saw_data = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let label = cols.next().unwrap_or("").trim();
        let value = cols.next().unwrap_or("").trim();
        let parsed: Option<f64> = value.parse().ok();
        if parsed.is_none() && !saw_data {
            // Header line (e.g. `tip\tvalue`); only valid before any data.
            continue;
        }
        let value: f64 = parsed.ok_or_else(|| {
            usage(format!(
                "{}:{}: `{value}` is not a number",
                path.display(),
                lineno + 1
            ))
        })?;
        if !value.is_finite() {
            return Err(usage(format!(
                "{}:{}: trait value for `{label}` is not finite",
                path.display(),
                lineno + 1
            )));
        }
        let node = tree.node_by_label(label).ok_or_else(|| {
            usage(format!(
                "{}:{}: `{label}` is not a tip of the tree",
                path.display(),
                lineno + 1
            ))
        })?;
        let rank = match node.checked_sub(tree.n_internal()) {
            Some(r) if node >= tree.n_internal() => r,
            _ => {
                return Err(usage(format!(
                    "{}:{}: `{label}` names an internal node, not a tip",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        if values[rank].replace(value).is_some() {
            return Err(usage(format!(
                "{}:{}: tip `{label}` appears twice",
                path.display(),
                lineno + 1
            )));
        }
        saw_data = true;
    }
    for (rank, slot) in values.iter().enumerate() {
        if slot.is_none() {
            return Err(usage(format!(
                "{}: no trait value for tip `{}`",
                path.display(),
                tree.label(tree.tip_node(rank))
            )));
        }
    }
    Ok(values.into_iter().map(|v| v.expect("checked")).collect())
}

/// Write a trait table; values print in Rust's shortest-roundtrip form,
/// so reading the file back reproduces them bit for bit.
pub fn format_traits(tree: &PhyloTree, values: &[f64]) -> String {
    let mut out = String::from("tip\tvalue\n");
    for rank in 0..tree.n_tips() {
        let _ = writeln!(out, "{}\t{}", tree.label(tree.tip_node(rank)), values[rank]);
    }
    out
}

// ----------------------------------------------------------------------
// Parameters: JSON input
// ----------------------------------------------------------------------

/// A node reference in input JSON: index (documented numbering) or label.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum NodeRef {
    Index(usize),
    Label(String),
}

impl NodeRef {
    pub fn resolve(&self, tree: &PhyloTree) -> CliResult<usize> {
        match self {
            NodeRef::Index(i) => {
                if *i >= tree.n_nodes() {
                    Err(usage(format!(
                        "node index {i} out of range (tree has {} nodes)",
                        tree.n_nodes()
                    )))
                } else {
                    Ok(*i)
                }
            }
            NodeRef::Label(l) => Ok(tree.require_node(l)?),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftIn {
    pub node: NodeRef,
    pub value: f64,
}

/// Parameter document: `variance` is the diffusion rate σ² for the drift
/// model and the stationary variance γ² for the selection model.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsIn {
    pub kind: ProcessKind,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub variance: f64,
    #[serde(default)]
    pub root_value: f64,
    #[serde(default)]
    pub shifts: Vec<ShiftIn>,
}

impl ParamsIn {
    pub fn into_params(self, tree: &PhyloTree) -> CliResult<ModelParams> {
        let mut shifts = Vec::with_capacity(self.shifts.len());
        for s in &self.shifts {
            shifts.push(Shift {
                node: s.node.resolve(tree)?,
                value: s.value,
            });
        }
        let config = ShiftConfig::new(self.root_value, shifts);
        let params = match (self.kind, self.alpha) {
            (ProcessKind::Bm, None) => ModelParams::Bm {
                sigma2: self.variance,
                shifts: config,
            },
            (ProcessKind::Bm, Some(_)) => {
                return Err(usage("`alpha` is only meaningful for the ou kind".into()))
            }
            (ProcessKind::Ou, Some(alpha)) => ModelParams::Ou {
                alpha,
                gamma2: self.variance,
                shifts: config,
            },
            (ProcessKind::Ou, None) => {
                return Err(usage("the ou kind needs an `alpha` field".into()))
            }
        };
        params.validate(tree)?;
        Ok(params)
    }
}

pub fn read_params(path: &Path, tree: &PhyloTree) -> CliResult<ModelParams> {
    let text = read_to_string(path)?;
    let parsed: ParamsIn = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parsed.into_params(tree)
}

/// A bare shift configuration (for `enumerate`/`count`): same shape as the
/// `shifts` part of a parameter document.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigIn {
    #[serde(default)]
    pub root_value: f64,
    pub shifts: Vec<ShiftIn>,
}

pub fn read_shift_config(path: &Path, tree: &PhyloTree) -> CliResult<ShiftConfig> {
    let text = read_to_string(path)?;
    let parsed: ConfigIn = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut shifts = Vec::with_capacity(parsed.shifts.len());
    for s in &parsed.shifts {
        let node = s.node.resolve(tree)?;
        if node == 0 {
            return Err(usage("the root cannot carry a shift".into()));
        }
        shifts.push(Shift {
            node,
            value: s.value,
        });
    }
    Ok(ShiftConfig::new(parsed.root_value, shifts))
}

// ----------------------------------------------------------------------
// Parameters and fits: JSON output
// ----------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct ShiftJson {
    pub node: usize,
    pub parent: String,
    pub child: String,
    pub value: f64,
}

impl ShiftJson {
    pub fn new(tree: &PhyloTree, shift: &Shift) -> Self {
        let parent = tree.parent(shift.node).expect("shifts never sit on the root");
        ShiftJson {
            node: shift.node,
            parent: tree.label(parent).to_string(),
            child: tree.label(shift.node).to_string(),
            value: shift.value,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ParamsJson {
    pub kind: ProcessKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub variance: f64,
    pub root_value: f64,
    pub shifts: Vec<ShiftJson>,
}

impl ParamsJson {
    pub fn new(tree: &PhyloTree, params: &ModelParams) -> Self {
        let config = params.shift_config();
        ParamsJson {
            kind: params.kind(),
            alpha: params.alpha(),
            variance: match params {
                ModelParams::Bm { sigma2, .. } => *sigma2,
                ModelParams::Ou { gamma2, .. } => *gamma2,
            },
            root_value: config.root_value,
            shifts: config.shifts.iter().map(|s| ShiftJson::new(tree, s)).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TipRegimeJson {
    pub tip: String,
    pub regime: u32,
}

pub fn tip_regimes(tree: &PhyloTree, colors: &[u32]) -> Vec<TipRegimeJson> {
    colors
        .iter()
        .enumerate()
        .map(|(rank, &regime)| TipRegimeJson {
            tip: tree.label(tree.tip_node(rank)).to_string(),
            regime,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct HomoplasyJson {
    pub node_a: usize,
    pub node_b: usize,
}

#[derive(Debug, Serialize)]
pub struct EquivalenceJson {
    /// Exact count of equivalent parsimonious allocations (decimal string;
    /// the count can exceed any fixed-width integer).
    pub class_size: String,
    pub n_regimes: usize,
    pub regime_values: Vec<f64>,
    pub tip_regimes: Vec<TipRegimeJson>,
    pub homoplasy: Option<HomoplasyJson>,
}

impl EquivalenceJson {
    pub fn new(tree: &PhyloTree, eq: &EquivalenceSummary) -> Self {
        EquivalenceJson {
            class_size: eq.class_size.to_string(),
            n_regimes: eq.n_colors,
            regime_values: eq.values_by_tip_color.clone(),
            tip_regimes: tip_regimes(tree, eq.tip_coloring.colors()),
            homoplasy: eq.homoplasy.map(|(node_a, node_b)| HomoplasyJson { node_a, node_b }),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct FitJson {
    pub kind: ProcessKind,
    pub n_tips: usize,
    pub k: usize,
    pub params: ParamsJson,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub alpha_at_boundary: bool,
    pub equivalence: EquivalenceJson,
}

impl FitJson {
    pub fn new(tree: &PhyloTree, fit: &FitResult) -> Self {
        FitJson {
            kind: fit.params.kind(),
            n_tips: tree.n_tips(),
            k: fit.params.shift_config().k(),
            params: ParamsJson::new(tree, &fit.params),
            loglik: fit.loglik,
            iterations: fit.iterations,
            converged: fit.converged,
            alpha_at_boundary: fit.alpha_at_boundary,
            equivalence: EquivalenceJson::new(tree, &fit.equivalence),
        }
    }
}

// ----------------------------------------------------------------------
// Selection output
// ----------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct CriterionRowJson {
    pub k: usize,
    pub alpha: Option<f64>,
    pub loglik: f64,
    pub rss_mahalanobis: f64,
    pub pen: f64,
    pub pen_prime: f64,
    pub crit: f64,
}

#[derive(Debug, Serialize)]
pub struct SelectJson {
    pub kind: ProcessKind,
    pub n_tips: usize,
    pub selected_k: usize,
    pub table: Vec<CriterionRowJson>,
    pub best: FitJson,
}

impl SelectJson {
    pub fn new(tree: &PhyloTree, selection: &Selection) -> Self {
        SelectJson {
            kind: selection.best.params.kind(),
            n_tips: tree.n_tips(),
            selected_k: selection.table.selected,
            table: selection
                .table
                .rows
                .iter()
                .map(|r| CriterionRowJson {
                    k: r.k,
                    alpha: r.alpha,
                    loglik: r.loglik,
                    rss_mahalanobis: r.rss_mahalanobis,
                    pen: r.pen,
                    pen_prime: r.pen_prime,
                    crit: r.crit,
                })
                .collect(),
            best: FitJson::new(tree, &selection.best),
        }
    }
}

pub fn write_criterion_tsv(path: &Path, table: &CriterionTable) -> CliResult<()> {
    write_file(path, &table.to_tsv())
}

// ----------------------------------------------------------------------
// Truth document (simulate)
// ----------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct TruthJson {
    pub seed: u64,
    pub n_tips: usize,
    pub tree_height: f64,
    pub params: ParamsJson,
    pub tip_regimes: Vec<TipRegimeJson>,
}

// ----------------------------------------------------------------------
// Enumerate / count output
// ----------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct SolutionShiftJson {
    pub node: usize,
    pub parent: String,
    pub child: String,
    /// Present when the input carried shift values; a bare tip coloring
    /// fixes only the partition, not the values.
    pub value: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct SolutionJson {
    pub shift_edges: Vec<SolutionShiftJson>,
    pub root_value: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct EnumerateJson {
    pub class_size: String,
    pub n_regimes: usize,
    pub max_solutions: usize,
    /// True when the class is larger than `max_solutions`; `solutions` is
    /// then empty and `class_size` still reports the exact count.
    pub truncated: bool,
    pub solutions: Vec<SolutionJson>,
}

#[derive(Debug, Serialize)]
pub struct PartitionCountJson {
    pub groups: usize,
    /// N_k: tip partitions into `groups` groups realizable by parsimonious
    /// shift allocations (decimal string).
    pub partitions: String,
    /// M_k: the same partitions with one group marked.
    pub marked: String,
}

#[derive(Debug, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CountJson {
    Partitions {
        n_tips: usize,
        binary: bool,
        counts: Vec<PartitionCountJson>,
    },
    Class {
        n_tips: usize,
        class_size: String,
        n_regimes: usize,
        /// For shift-configuration input: the allocation uses the minimal
        /// number of shifts for its tip partition. Absent for coloring input.
        parsimonious: Option<bool>,
    },
}

// ----------------------------------------------------------------------
// Tip colorings (enumerate/count input)
// ----------------------------------------------------------------------

/// Read a two-column TSV of `(tip label, regime id)`; ids are arbitrary
/// non-negative integers and are canonicalized downstream.
pub fn read_coloring(path: &Path, tree: &PhyloTree) -> CliResult<Vec<u32>> {
    let text = read_to_string(path)?;
    let mut colors: Vec<Option<u32>> = vec![None; tree.n_tips()];
    let mut saw_data = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        let label = cols.next().unwrap_or("").trim();
        let value = cols.next().unwrap_or("").trim();
        let parsed: Option<u32> = value.parse().ok();
        if parsed.is_none() && !saw_data {
            continue; // header
        }
        let regime = parsed.ok_or_else(|| {
            usage(format!(
                "{}:{}: `{value}` is not a regime id",
                path.display(),
                lineno + 1
            ))
        })?;
        let node = tree.node_by_label(label).ok_or_else(|| {
            usage(format!(
                "{}:{}: `{label}` is not a tip of the tree",
                path.display(),
                lineno + 1
            ))
        })?;
        if node < tree.n_internal() {
            return Err(usage(format!(
                "{}:{}: `{label}` names an internal node, not a tip",
                path.display(),
                lineno + 1
            )));
        }
        let rank = node - tree.n_internal();
        if colors[rank].replace(regime).is_some() {
            return Err(usage(format!(
                "{}:{}: tip `{label}` appears twice",
                path.display(),
                lineno + 1
            )));
        }
        saw_data = true;
    }
    let mut out = Vec::with_capacity(tree.n_tips());
    for (rank, slot) in colors.iter().enumerate() {
        match slot {
            Some(c) => out.push(*c),
            None => {
                return Err(usage(format!(
                    "{}: no regime for tip `{}`",
                    path.display(),
                    tree.label(tree.tip_node(rank))
                )))
            }
        }
    }
    Ok(out)
}

// ----------------------------------------------------------------------
// Simulation study: config input, replicate TSV, summary JSON
// ----------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyEmIn {
    #[serde(default)]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    /// Fix α at this value during fitting; omit to estimate it per cell.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub extra_restarts: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DfIn {
    Derived,
    Displayed,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySelectionIn {
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub df: Option<DfIn>,
    #[serde(default)]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub em: Option<StudyEmIn>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyIn {
    #[serde(default)]
    pub n_tips: Option<usize>,
    #[serde(default)]
    pub birth_rate: Option<f64>,
    #[serde(default)]
    pub kind: Option<ProcessKind>,
    #[serde(default)]
    pub k_true: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub root_value: Option<f64>,
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub selection: Option<StudySelectionIn>,
}

const NA: &str = "NA";

fn tsv_opt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v}"),
        _ => NA.to_string(),
    }
}

pub const REPLICATE_HEADER: &str = "replicate\tstatus\tk_true\tk_selected\tari\tunambiguous\t\
sensitivity\tfpr\talpha_hat\tvariance_hat\tloglik\tconverged\terror";

pub fn replicate_row(index: usize, outcome: &Result<ReplicateOutcome, String>) -> String {
    match outcome {
        Ok(o) => format!(
            "{}\tok\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t",
            o.replicate,
            o.k_true,
            o.k_selected,
            tsv_opt(Some(o.ari)),
            o.unambiguous,
            tsv_opt(o.sensitivity),
            tsv_opt(o.fpr),
            tsv_opt(o.alpha_hat),
            tsv_opt(Some(o.variance_hat)),
            tsv_opt(Some(o.loglik)),
            o.converged,
        ),
        Err(msg) => {
            let clean = msg.replace(['\t', '\n'], " ");
            format!("{index}\terror\t\t\t\t\t\t\t\t\t\t\t{clean}")
        }
    }
}

#[derive(Debug, Serialize)]
pub struct StudyConfigEcho {
    pub n_tips: usize,
    pub birth_rate: f64,
    pub kind: ProcessKind,
    pub k_true: usize,
    pub alpha: f64,
    pub variance: f64,
    pub root_value: f64,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct StudySummaryJson {
    pub config: StudyConfigEcho,
    pub n_ok: usize,
    pub n_failed: usize,
    pub median_ari: Option<f64>,
    pub k_hat_histogram: Vec<usize>,
    pub share_k_at_most_true: Option<f64>,
    pub share_k_exact: Option<f64>,
    pub share_unambiguous: Option<f64>,
    pub median_sensitivity: Option<f64>,
    pub median_fpr: Option<f64>,
    pub median_alpha_rel_err: Option<f64>,
    pub median_variance_rel_err: Option<f64>,
}

impl StudySummaryJson {
    pub fn new(config: StudyConfigEcho, s: &StudySummary) -> Self {
        StudySummaryJson {
            config,
            n_ok: s.n_ok,
            n_failed: s.n_failed,
            median_ari: finite(s.median_ari),
            k_hat_histogram: s.k_hat_histogram.clone(),
            share_k_at_most_true: finite(s.share_k_at_most_true),
            share_k_exact: finite(s.share_k_exact),
            share_unambiguous: finite(s.share_unambiguous),
            median_sensitivity: s.median_sensitivity.and_then(finite),
            median_fpr: s.median_fpr.and_then(finite),
            median_alpha_rel_err: s.median_alpha_rel_err.and_then(finite),
            median_variance_rel_err: finite(s.median_variance_rel_err),
        }
    }
}
