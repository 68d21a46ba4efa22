//! One function per subcommand. Each takes parsed arguments, does its
//! file work through `io`, and returns a `CliError` carrying the process
//! exit code on failure (2 = bad input, 3 = numerical failure).

use std::path::PathBuf;

use clap::{ArgGroup, Args, ValueEnum};

use treeshift::em::{fit, AlphaMode, EmOptions};
use treeshift::model::simulate_tip_traits;
use treeshift::parsimony::{
    class_size, coloring_from_shifts, count_partitions, enumerate_up_to, is_parsimonious,
    shifts_from_coloring, TipColoring,
};
use treeshift::selection::{default_alpha_grid, select, DfConvention, SelectionConfig};
use treeshift::sim::{draw_balanced_shifts, run_study, substream, StudyConfig};
use treeshift::{Error, ModelParams, PhyloTree, ProcessKind};

use crate::io::{self, CountJson, EnumerateJson, PartitionCountJson, SolutionJson, SolutionShiftJson};
use crate::{usage, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    /// Drift model (Brownian motion on the tree).
    Bm,
    /// Stationary selection model (Ornstein–Uhlenbeck on the tree).
    Ou,
}

impl From<KindArg> for ProcessKind {
    fn from(k: KindArg) -> ProcessKind {
        match k {
            KindArg::Bm => ProcessKind::Bm,
            KindArg::Ou => ProcessKind::Ou,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DfArg {
    /// Numerator df K+2, denominator df n−K−2.
    Derived,
    /// Numerator df K, denominator df n−K−2 (falls back at K = 0).
    Displayed,
}

impl From<DfArg> for DfConvention {
    fn from(d: DfArg) -> DfConvention {
        match d {
            DfArg::Derived => DfConvention::Derived,
            DfArg::Displayed => DfConvention::Displayed,
        }
    }
}

/// EM controls shared by `fit` and `select`.
#[derive(Args, Debug)]
pub struct EmArgs {
    /// Maximum EM iterations per fit.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Relative convergence tolerance on the log-likelihood.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Perturbed restarts in addition to the data-driven start.
    #[arg(long, default_value_t = 2)]
    pub restarts: usize,
    /// Seed for restart perturbations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl EmArgs {
    fn options(&self, alpha: AlphaMode) -> EmOptions {
        EmOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            alpha,
            extra_restarts: self.restarts,
            seed: self.seed,
        }
    }
}

// ----------------------------------------------------------------------
// simulate
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["tree", "yule"])))]
#[command(group(ArgGroup::new("model").args(["params", "k"])))]
pub struct SimulateArgs {
    /// Newick tree file (ultrametric).
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Simulate a pure-birth tree with this many tips instead.
    #[arg(long, value_name = "N_TIPS")]
    pub yule: Option<usize>,
    /// Birth rate for --yule (the tree is rescaled to height 1 regardless).
    #[arg(long, default_value_t = 0.1, requires = "yule")]
    pub birth_rate: f64,
    /// Parameter document (JSON). Mutually exclusive with --K.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Draw this many balanced shifts at random instead of --params.
    #[arg(long = "K", value_name = "K")]
    pub k: Option<usize>,
    /// Process kind when drawing parameters.
    #[arg(long, value_enum, default_value = "ou", conflicts_with = "params")]
    pub kind: KindArg,
    /// Selection strength when drawing ou parameters.
    #[arg(long, default_value_t = 3.0, conflicts_with = "params")]
    pub alpha: f64,
    /// Stationary variance (ou) or diffusion rate (bm) when drawing.
    #[arg(long, default_value_t = 0.5, conflicts_with = "params")]
    pub variance: f64,
    /// Root trait value when drawing parameters.
    #[arg(long, default_value_t = 0.0, conflicts_with = "params")]
    pub root_value: f64,
    /// Master seed; tree, shifts, and noise use fixed sub-streams of it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output trait table (TSV).
    #[arg(long)]
    pub traits: PathBuf,
    /// Output truth document (JSON): generating parameters and regimes.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write the tree that was used (Newick); handy with --yule.
    #[arg(long)]
    pub out_tree: Option<PathBuf>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let tree = match (&args.tree, args.yule) {
        (Some(path), None) => io::load_tree(path)?,
        (None, Some(n)) => PhyloTree::simulate_yule(n, args.birth_rate, substream(args.seed, "tree", 0))?,
        _ => unreachable!("clap enforces the tree/yule group"),
    };

    let params = match &args.params {
        Some(path) => io::read_params(path, &tree)?,
        None => {
            let k = args.k.unwrap_or(0);
            let shifts = draw_balanced_shifts(&tree, k, args.root_value, substream(args.seed, "shifts", 0))?;
            let drawn = match args.kind.into() {
                ProcessKind::Bm => ModelParams::Bm {
                    sigma2: args.variance,
                    shifts,
                },
                ProcessKind::Ou => ModelParams::Ou {
                    alpha: args.alpha,
                    gamma2: args.variance,
                    shifts,
                },
            };
            drawn.validate(&tree)?;
            drawn
        }
    };

    let y = simulate_tip_traits(&tree, &params, substream(args.seed, "noise", 0))?;
    io::write_file(&args.traits, &io::format_traits(&tree, y.as_slice()))?;

    if let Some(path) = &args.truth {
        let induced = coloring_from_shifts(&tree, params.shift_config())?;
        let tip_coloring = induced.coloring.tip_coloring(&tree);
        let truth = io::TruthJson {
            seed: args.seed,
            n_tips: tree.n_tips(),
            tree_height: tree.height(),
            params: io::ParamsJson::new(&tree, &params),
            tip_regimes: io::tip_regimes(&tree, tip_coloring.colors()),
        };
        io::emit_json(Some(path), &truth)?;
    }
    if let Some(path) = &args.out_tree {
        io::write_file(path, &format!("{}\n", tree.to_newick()))?;
    }
    Ok(())
}

// ----------------------------------------------------------------------
// fit
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Newick tree file (ultrametric).
    #[arg(long)]
    pub tree: PathBuf,
    /// Trait table (TSV: tip label, value).
    #[arg(long)]
    pub traits: PathBuf,
    /// Process kind to fit.
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Number of shifts.
    #[arg(long = "K", value_name = "K")]
    pub k: usize,
    /// Fix the selection strength at this value; omit to estimate it.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub em: EmArgs,
    /// Output file (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn alpha_mode(kind: ProcessKind, alpha: Option<f64>) -> CliResult<AlphaMode> {
    match (kind, alpha) {
        (ProcessKind::Bm, Some(_)) => {
            Err(usage("--alpha is only meaningful with --kind ou".into()))
        }
        (_, Some(a)) if !(a > 0.0) || !a.is_finite() => {
            Err(usage(format!("--alpha must be positive and finite, got {a}")))
        }
        (_, Some(a)) => Ok(AlphaMode::Fixed(a)),
        (_, None) => Ok(AlphaMode::Estimate),
    }
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let tree = io::load_tree(&args.tree)?;
    let y = io::read_traits(&args.traits, &tree)?;
    let kind: ProcessKind = args.kind.into();
    let options = args.em.options(alpha_mode(kind, args.alpha)?);
    let y = nalgebra_vector(y);
    let result = fit(&tree, &y, kind, args.k, &options)?;
    io::emit_json(args.out.as_deref(), &io::FitJson::new(&tree, &result))
}

fn nalgebra_vector(y: Vec<f64>) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_vec(y)
}

// ----------------------------------------------------------------------
// select
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("alphas").args(["alpha", "alpha_grid"])))]
pub struct SelectArgs {
    /// Newick tree file (ultrametric).
    #[arg(long)]
    pub tree: PathBuf,
    /// Trait table (TSV: tip label, value).
    #[arg(long)]
    pub traits: PathBuf,
    /// Process kind to fit.
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Cap on the candidate number of shifts (structural caps still apply).
    #[arg(long)]
    pub k_max: Option<usize>,
    /// Single fixed selection strength (ou only).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Selection-strength grid (ou only): a point count for the default
    /// log-spaced grid (e.g. "6"), or explicit comma-separated values
    /// (e.g. "0.5,1,3"). Without --alpha/--alpha-grid, α is estimated
    /// within each fit.
    #[arg(long, value_name = "N|A1,A2,...")]
    pub alpha_grid: Option<String>,
    /// Penalty multiplier (> 1).
    #[arg(long = "A", default_value_t = 1.1, value_name = "A")]
    pub a: f64,
    /// Dimension-bound constant (< 1) for the default shift cap.
    #[arg(long, default_value_t = 0.9)]
    pub kappa: f64,
    /// Degrees-of-freedom convention for the penalty.
    #[arg(long, value_enum, default_value = "derived")]
    pub df: DfArg,
    #[command(flatten)]
    pub em: EmArgs,
    /// Output file (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the criterion table as TSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

/// An `--alpha-grid` argument is either a point count ("6": that many
/// log-spaced values over the standard half-life range) or a list of
/// explicit values ("0.5,1,3").
fn parse_alpha_grid(spec: &str, tree: &PhyloTree) -> CliResult<Vec<f64>> {
    if let Ok(count) = spec.trim().parse::<usize>() {
        if count == 0 {
            return Err(usage("--alpha-grid needs at least one point".into()));
        }
        return Ok(default_alpha_grid(tree, count));
    }
    spec.split(',')
        .map(|tok| {
            tok.trim().parse::<f64>().map_err(|_| {
                usage(format!(
                    "--alpha-grid: `{tok}` is neither a point count nor a number"
                ))
            })
        })
        .collect()
}

pub fn cmd_select(args: &SelectArgs) -> CliResult<()> {
    let tree = io::load_tree(&args.tree)?;
    let y = io::read_traits(&args.traits, &tree)?;
    let kind: ProcessKind = args.kind.into();
    if kind == ProcessKind::Bm && (args.alpha.is_some() || args.alpha_grid.is_some()) {
        return Err(usage("--alpha/--alpha-grid are only meaningful with --kind ou".into()));
    }
    let alpha_grid = match (&args.alpha, &args.alpha_grid) {
        (Some(a), None) => Some(vec![*a]),
        (None, Some(spec)) => Some(parse_alpha_grid(spec, &tree)?),
        (None, None) => None,
        (Some(_), Some(_)) => unreachable!("clap enforces the alphas group"),
    };
    if let Some(grid) = &alpha_grid {
        if grid.is_empty() || grid.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(usage("the selection-strength grid must be nonempty and positive".into()));
        }
    }
    let config = SelectionConfig {
        a: args.a,
        kappa: args.kappa,
        k_max: args.k_max,
        df: args.df.into(),
        alpha_grid,
        em: args.em.options(AlphaMode::Estimate),
    };
    let y = nalgebra_vector(y);
    let selection = select(&tree, &y, kind, &config)?;
    if let Some(path) = &args.table {
        io::write_criterion_tsv(path, &selection.table)?;
    }
    io::emit_json(args.out.as_deref(), &io::SelectJson::new(&tree, &selection))
}

// ----------------------------------------------------------------------
// enumerate
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["coloring", "shifts"])))]
pub struct EnumerateArgs {
    /// Newick tree file.
    #[arg(long)]
    pub tree: PathBuf,
    /// Tip regimes (TSV: tip label, regime id).
    #[arg(long)]
    pub coloring: Option<PathBuf>,
    /// Shift configuration (JSON: root_value, shifts).
    #[arg(long)]
    pub shifts: Option<PathBuf>,
    /// Cap on the number of materialized solutions.
    #[arg(long, default_value_t = 1000)]
    pub max_solutions: usize,
    /// Output file (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The tip coloring plus, when the input named shift values, the value
/// attached to each canonical tip regime (index = regime id).
fn coloring_source(args_coloring: Option<&PathBuf>, args_shifts: Option<&PathBuf>, tree: &PhyloTree)
    -> CliResult<(TipColoring, Option<Vec<f64>>)> {
    match (args_coloring, args_shifts) {
        (Some(path), None) => {
            let colors = io::read_coloring(path, tree)?;
            Ok((TipColoring::new(&colors), None))
        }
        (None, Some(path)) => {
            let config = io::read_shift_config(path, tree)?;
            let induced = coloring_from_shifts(tree, &config)?.strict()?;
            let tips = induced.coloring.tip_coloring(tree);
            let mut values = vec![f64::NAN; tips.n_colors()];
            for rank in 0..tree.n_tips() {
                let canonical = tips.colors()[rank] as usize;
                let component = induced.coloring.colors[tree.tip_node(rank)] as usize;
                values[canonical] = induced.color_values[component];
            }
            if values.iter().any(|v| v.is_nan()) {
                // A shift component without tips never reaches the tip
                // coloring; such configurations are not parsimonious but
                // are still legal enumerate input — drop the values.
                return Ok((tips, None));
            }
            Ok((tips, Some(values)))
        }
        _ => unreachable!("clap enforces the coloring/shifts group"),
    }
}

pub fn cmd_enumerate(args: &EnumerateArgs) -> CliResult<()> {
    let tree = io::load_tree(&args.tree)?;
    let (tips, values) = coloring_source(args.coloring.as_ref(), args.shifts.as_ref(), &tree)?;
    let exact = class_size(&tree, &tips)?;
    let (truncated, solutions) = match enumerate_up_to(&tree, &tips, args.max_solutions) {
        Ok(colorings) => {
            let mut out = Vec::with_capacity(colorings.len());
            for coloring in &colorings {
                let edges = match &values {
                    Some(values) => {
                        let config = shifts_from_coloring(&tree, coloring, values);
                        config
                            .shifts
                            .iter()
                            .map(|s| {
                                let j = io::ShiftJson::new(&tree, s);
                                SolutionShiftJson {
                                    node: j.node,
                                    parent: j.parent,
                                    child: j.child,
                                    value: Some(j.value),
                                }
                            })
                            .collect()
                    }
                    None => shift_edges_of_coloring(&tree, &coloring.colors),
                };
                out.push(SolutionJson {
                    shift_edges: edges,
                    root_value: values.as_ref().map(|v| v[coloring.colors[0] as usize]),
                });
            }
            (false, out)
        }
        Err(Error::EnumerationCapExceeded { .. }) => (true, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let report = EnumerateJson {
        class_size: exact.to_string(),
        n_regimes: tips.n_colors(),
        max_solutions: args.max_solutions,
        truncated,
        solutions,
    };
    io::emit_json(args.out.as_deref(), &report)
}

/// Shift edges of a node coloring: every non-root node whose color
/// differs from its parent's.
fn shift_edges_of_coloring(tree: &PhyloTree, colors: &[u32]) -> Vec<SolutionShiftJson> {
    (1..tree.n_nodes())
        .filter(|&j| {
            let pa = tree.parent(j).expect("non-root");
            colors[j] != colors[pa]
        })
        .map(|j| SolutionShiftJson {
            node: j,
            parent: tree.label(tree.parent(j).expect("non-root")).to_string(),
            child: tree.label(j).to_string(),
            value: None,
        })
        .collect()
}

// ----------------------------------------------------------------------
// count
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("source").required(true).args(["partitions", "coloring", "shifts"])))]
pub struct CountArgs {
    /// Newick tree file.
    #[arg(long)]
    pub tree: PathBuf,
    /// Count realizable tip partitions instead of an equivalence class.
    #[arg(long)]
    pub partitions: bool,
    /// Largest number of tip groups to count (with --partitions).
    #[arg(long = "K", value_name = "K", requires = "partitions")]
    pub k: Option<usize>,
    /// Tip regimes (TSV) whose equivalence class is counted.
    #[arg(long)]
    pub coloring: Option<PathBuf>,
    /// Shift configuration (JSON) whose equivalence class is counted.
    #[arg(long)]
    pub shifts: Option<PathBuf>,
    /// Output file (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_count(args: &CountArgs) -> CliResult<()> {
    let tree = io::load_tree(&args.tree)?;
    let report = if args.partitions {
        let k_max = args
            .k
            .ok_or_else(|| usage("--partitions needs --K (largest number of groups)".into()))?;
        if k_max == 0 {
            return Err(usage("--K must be at least 1".into()));
        }
        let counts = count_partitions(&tree, k_max)?;
        let binary = (0..tree.n_internal()).all(|v| tree.children(v).len() == 2);
        CountJson::Partitions {
            n_tips: tree.n_tips(),
            binary,
            counts: (1..=k_max)
                .map(|k| PartitionCountJson {
                    groups: k,
                    partitions: counts.n_root(k).to_string(),
                    marked: counts.m_root(k).to_string(),
                })
                .collect(),
        }
    } else {
        let parsimonious = match &args.shifts {
            Some(path) => Some(is_parsimonious(&tree, &io::read_shift_config(path, &tree)?)),
            None => None,
        };
        let (tips, _) = coloring_source(args.coloring.as_ref(), args.shifts.as_ref(), &tree)?;
        CountJson::Class {
            n_tips: tree.n_tips(),
            class_size: class_size(&tree, &tips)?.to_string(),
            n_regimes: tips.n_colors(),
            parsimonious,
        }
    };
    io::emit_json(args.out.as_deref(), &report)
}

// ----------------------------------------------------------------------
// simstudy
// ----------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SimstudyArgs {
    /// Study configuration (JSON); omitted fields use the base design.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing): replicates.tsv,
    /// summary.json, tree.nwk.
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn study_config(input: io::StudyIn) -> CliResult<StudyConfig> {
    let mut config = StudyConfig::default();
    if let Some(v) = input.n_tips {
        config.n_tips = v;
    }
    if let Some(v) = input.birth_rate {
        config.birth_rate = v;
    }
    if let Some(v) = input.kind {
        config.kind = v;
    }
    if let Some(v) = input.k_true {
        config.k_true = v;
    }
    if let Some(v) = input.alpha {
        config.alpha = v;
    }
    if let Some(v) = input.variance {
        config.variance = v;
    }
    if let Some(v) = input.root_value {
        config.root_value = v;
    }
    if let Some(v) = input.replicates {
        config.replicates = v;
    }
    if let Some(v) = input.seed {
        config.seed = v;
    }
    if let Some(sel) = input.selection {
        if let Some(v) = sel.a {
            config.selection.a = v;
        }
        if let Some(v) = sel.kappa {
            config.selection.kappa = v;
        }
        if sel.k_max.is_some() {
            config.selection.k_max = sel.k_max;
        }
        if let Some(v) = sel.df {
            config.selection.df = match v {
                io::DfIn::Derived => DfConvention::Derived,
                io::DfIn::Displayed => DfConvention::Displayed,
            };
        }
        if sel.alpha_grid.is_some() {
            config.selection.alpha_grid = sel.alpha_grid;
        }
        if let Some(em) = sel.em {
            if let Some(v) = em.max_iter {
                config.selection.em.max_iter = v;
            }
            if let Some(v) = em.tol {
                config.selection.em.tol = v;
            }
            if let Some(a) = em.alpha {
                if !(a > 0.0) || !a.is_finite() {
                    return Err(usage(format!(
                        "em.alpha must be positive and finite, got {a}"
                    )));
                }
                config.selection.em.alpha = AlphaMode::Fixed(a);
            }
            if let Some(v) = em.extra_restarts {
                config.selection.em.extra_restarts = v;
            }
            if let Some(v) = em.seed {
                config.selection.em.seed = v;
            }
        }
    }
    Ok(config)
}

pub fn cmd_simstudy(args: &SimstudyArgs) -> CliResult<()> {
    let text = io::read_to_string(&args.config)?;
    let input: io::StudyIn = serde_json::from_str(&text)
        .map_err(|e| usage(format!("{}: {e}", args.config.display())))?;
    let config = study_config(input)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| usage(format!("cannot create `{}`: {e}", args.out_dir.display())))?;

    let result = run_study(&config)?;

    let mut table = String::from(io::REPLICATE_HEADER);
    table.push('\n');
    for (index, outcome) in result.outcomes.iter().enumerate() {
        table.push_str(&io::replicate_row(index, outcome));
        table.push('\n');
    }
    io::write_file(&args.out_dir.join("replicates.tsv"), &table)?;
    io::write_file(
        &args.out_dir.join("tree.nwk"),
        &format!("{}\n", result.tree.to_newick()),
    )?;

    let echo = io::StudyConfigEcho {
        n_tips: config.n_tips,
        birth_rate: config.birth_rate,
        kind: config.kind,
        k_true: config.k_true,
        alpha: config.alpha,
        variance: config.variance,
        root_value: config.root_value,
        replicates: config.replicates,
        seed: config.seed,
    };
    let summary = io::StudySummaryJson::new(echo, &result.summary);
    io::emit_json(Some(&args.out_dir.join("summary.json")), &summary)?;
    log::info!(
        "study done: {} ok, {} failed, median ARI {:.3}",
        result.summary.n_ok,
        result.summary.n_failed,
        result.summary.median_ari
    );
    Ok(())
}
