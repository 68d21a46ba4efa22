//! Combinatorics of shift allocations: colorings of the tree, parsimonious
//! equivalence classes (exact size and lazy enumeration), tree-compatible
//! partition counts, and the linear-independence test for identifiability.
//!
//! A shift allocation cuts the tree into connected components ("colors");
//! two allocations producing the same tip coloring generate the same trait
//! distribution at the tips, so only the tip partition is identifiable. A
//! K-shift allocation is *parsimonious* when no allocation with fewer shifts
//! produces the same tip coloring; equivalently it creates exactly K+1 tip
//! colors, or the incidence columns of its support (root included) are
//! linearly independent.
//!
//! Costs run over a saturating `u32`; all counts are exact big integers
//! (class sizes explode combinatorially once K approaches √n).

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::{node_optima, ModelParams, ShiftConfig, SimilarDirection};
use crate::tree::PhyloTree;

/// Relative tolerance under which two component values count as equal
/// (homoplasy detection).
pub const HOMOPLASY_RTOL: f64 = 1e-9;

/// Saturating stand-in for +∞ in Sankoff costs.
pub const INFINITE_COST: u32 = u32::MAX / 2;

fn values_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= HOMOPLASY_RTOL * a.abs().max(b.abs())
}

// ----------------------------------------------------------------------
// Colorings
// ----------------------------------------------------------------------

/// A coloring of the tips, canonicalized so color ids appear in first-use
/// order along the tip ordering (the canonical representative of a tip
/// partition).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TipColoring {
    colors: Vec<u32>,
    n_colors: usize,
}

impl TipColoring {
    /// Canonicalize arbitrary labels into first-occurrence order.
    pub fn new(raw: &[u32]) -> Self {
        let mut map: Vec<Option<u32>> = Vec::new();
        let mut colors = Vec::with_capacity(raw.len());
        let mut next = 0u32;
        for &r in raw {
            let r = r as usize;
            if map.len() <= r {
                map.resize(r + 1, None);
            }
            let c = *map[r].get_or_insert_with(|| {
                let c = next;
                next += 1;
                c
            });
            colors.push(c);
        }
        TipColoring {
            colors,
            n_colors: next as usize,
        }
    }

    pub fn colors(&self) -> &[u32] {
        &self.colors
    }

    pub fn n_colors(&self) -> usize {
        self.n_colors
    }

    pub fn n_tips(&self) -> usize {
        self.colors.len()
    }
}

/// A coloring of every node. Tip restriction and the induced shift edges
/// (branches whose endpoints differ) are derived views.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeColoring {
    pub colors: Vec<u32>,
}

impl NodeColoring {
    /// Branches (identified by child node) where the color changes.
    pub fn shift_edges(&self, tree: &PhyloTree) -> Vec<usize> {
        (1..tree.n_nodes())
            .filter(|&i| self.colors[i] != self.colors[tree.parent(i).expect("non-root")])
            .collect()
    }

    /// Number of color-change edges.
    pub fn cost(&self, tree: &PhyloTree) -> usize {
        self.shift_edges(tree).len()
    }

    /// Restriction to the tips, canonicalized.
    pub fn tip_coloring(&self, tree: &PhyloTree) -> TipColoring {
        TipColoring::new(&self.colors[tree.n_internal()..])
    }
}

/// The coloring induced by a shift configuration, with the (BM-scale) value
/// attached to each color and a homoplasy flag when two distinct components
/// carry numerically equal values.
#[derive(Clone, Debug)]
pub struct InducedColoring {
    pub coloring: NodeColoring,
    /// Trait mean (BM) / optimum (OU, on the similar-BM scale) per color id.
    pub color_values: Vec<f64>,
    /// A representative node pair from two components whose values collide.
    pub homoplasy: Option<(usize, usize)>,
}

impl InducedColoring {
    pub fn n_colors(&self) -> usize {
        self.color_values.len()
    }

    /// Error out when the shifts→coloring bijection is broken by a value
    /// collision. Reporting paths keep the flag and warn instead.
    pub fn strict(self) -> Result<InducedColoring> {
        if let Some((a, b)) = self.homoplasy {
            return Err(Error::Homoplasy {
                node_a: a,
                node_b: b,
                value: self.color_values[self.coloring.colors[a] as usize],
            });
        }
        Ok(self)
    }
}

/// Cut the shift branches and color the resulting components. Colors are
/// assigned in preorder, so ids are canonical with respect to node order
/// (root = 0). Values are BM-scale means; use [`coloring_from_params`] for a
/// fitted model of either kind.
pub fn coloring_from_shifts(tree: &PhyloTree, config: &ShiftConfig) -> Result<InducedColoring> {
    config.validate(tree)?;
    let beta = node_optima(tree, config);
    let mut is_shift = vec![false; tree.n_nodes()];
    for s in &config.shifts {
        is_shift[s.node] = true;
    }
    let mut colors = vec![0u32; tree.n_nodes()];
    let mut color_values = vec![beta[0]];
    let mut first_node = vec![0usize]; // representative node per color
    for i in 1..tree.n_nodes() {
        let pa = tree.parent(i).expect("non-root");
        if is_shift[i] {
            colors[i] = color_values.len() as u32;
            color_values.push(beta[i]);
            first_node.push(i);
        } else {
            colors[i] = colors[pa];
        }
    }
    let mut homoplasy = None;
    'outer: for a in 0..color_values.len() {
        for b in a + 1..color_values.len() {
            if values_equal(color_values[a], color_values[b]) {
                homoplasy = Some((first_node[a], first_node[b]));
                break 'outer;
            }
        }
    }
    Ok(InducedColoring {
        coloring: NodeColoring { colors },
        color_values,
        homoplasy,
    })
}

/// [`coloring_from_shifts`] for either process kind; OU shifts are first
/// mapped to their similar BM shifts (same support), whose values define the
/// colors.
pub fn coloring_from_params(tree: &PhyloTree, params: &ModelParams) -> Result<InducedColoring> {
    match params {
        ModelParams::Bm { shifts, .. } => coloring_from_shifts(tree, shifts),
        ModelParams::Ou { alpha, shifts, .. } => {
            let bm = crate::model::similar_shifts(tree, shifts, *alpha, SimilarDirection::OuToBm)?;
            coloring_from_shifts(tree, &bm)
        }
    }
}

/// Rebuild a shift configuration from a node coloring and per-color values:
/// the root takes its color's value, and each color-change edge carries the
/// value difference. By telescoping, node `i` ends up at
/// `values[color(i)]` exactly.
pub fn shifts_from_coloring(
    tree: &PhyloTree,
    coloring: &NodeColoring,
    values: &[f64],
) -> ShiftConfig {
    let mut shifts = Vec::new();
    for i in 1..tree.n_nodes() {
        let pa = tree.parent(i).expect("non-root");
        if coloring.colors[i] != coloring.colors[pa] {
            shifts.push(crate::model::Shift {
                node: i,
                value: values[coloring.colors[i] as usize]
                    - values[coloring.colors[pa] as usize],
            });
        }
    }
    ShiftConfig::new(values[coloring.colors[0] as usize], shifts)
}

// ----------------------------------------------------------------------
// Sankoff dynamic programming with counts
// ----------------------------------------------------------------------

/// Per-node, per-color minimal costs `S_i(k)` and solution counts `T_i(k)`
/// of the unit-cost Sankoff recursion, extended to count parsimonious
/// colorings.
pub struct SankoffTables {
    pub n_colors: usize,
    /// `cost[i][k]`: minimal number of shifts in the subtree of `i` when `i`
    /// has color `k` (`INFINITE_COST` when impossible).
    pub cost: Vec<Vec<u32>>,
    /// `count[i][k]`: number of minimal colorings of the subtree of `i`
    /// starting with color `k`.
    pub count: Vec<Vec<BigUint>>,
}

impl SankoffTables {
    /// Minimal total cost `min_k S_root(k)`.
    pub fn min_cost(&self) -> u32 {
        *self.cost[0].iter().min().expect("at least one color")
    }

    /// Colors the root may take in a parsimonious coloring.
    pub fn root_colors(&self) -> Vec<u32> {
        let m = self.min_cost();
        (0..self.n_colors as u32)
            .filter(|&k| self.cost[0][k as usize] == m)
            .collect()
    }

    /// Exact size of the equivalence class, `Σ_{k ∈ argmin} T_root(k)`.
    pub fn class_size(&self) -> BigUint {
        let m = self.min_cost();
        let mut total = BigUint::zero();
        for k in 0..self.n_colors {
            if self.cost[0][k] == m {
                total += &self.count[0][k];
            }
        }
        total
    }

    /// Admissible colors for `child` when its parent has color `k`:
    /// `argmin_p { S_child(p) + 1{p ≠ k} }`.
    pub fn admissible(&self, child: usize, parent_color: u32) -> Vec<u32> {
        let row = &self.cost[child];
        let mut best = INFINITE_COST;
        for (p, &c) in row.iter().enumerate() {
            let v = c.saturating_add(u32::from(p as u32 != parent_color));
            if v < best {
                best = v;
            }
        }
        row.iter()
            .enumerate()
            .filter(|&(p, &c)| {
                c.saturating_add(u32::from(p as u32 != parent_color)) == best
            })
            .map(|(p, _)| p as u32)
            .collect()
    }
}

/// Run the counting Sankoff recursion for `d` over a palette of `n_colors`
/// colors. Complexity O(K² L n) for K colors and max arity L.
pub fn sankoff(tree: &PhyloTree, d: &TipColoring, n_colors: usize) -> Result<SankoffTables> {
    if d.n_tips() != tree.n_tips() {
        return Err(Error::Mismatch(format!(
            "coloring has {} tips, tree has {}",
            d.n_tips(),
            tree.n_tips()
        )));
    }
    if d.n_colors() > n_colors {
        return Err(Error::InvalidInput(format!(
            "coloring uses {} colors but the palette holds {n_colors}",
            d.n_colors()
        )));
    }
    let nn = tree.n_nodes();
    let m = tree.n_internal();
    let mut cost = vec![vec![INFINITE_COST; n_colors]; nn];
    let mut count = vec![vec![BigUint::zero(); n_colors]; nn];
    // Children always carry larger indices, so descending order is a valid
    // children-first traversal.
    for i in (0..nn).rev() {
        if tree.is_tip(i) {
            let c = d.colors()[i - m] as usize;
            cost[i][c] = 0;
            count[i][c] = BigUint::one();
        } else {
            for k in 0..n_colors {
                let mut s = 0u32;
                let mut t = BigUint::one();
                for &child in tree.children(i) {
                    let mut best = INFINITE_COST;
                    for p in 0..n_colors {
                        let v = cost[child][p].saturating_add(u32::from(p != k));
                        if v < best {
                            best = v;
                        }
                    }
                    s = s.saturating_add(best);
                    let mut ways = BigUint::zero();
                    for p in 0..n_colors {
                        if cost[child][p].saturating_add(u32::from(p != k)) == best {
                            ways += &count[child][p];
                        }
                    }
                    t *= ways;
                }
                cost[i][k] = s.min(INFINITE_COST);
                count[i][k] = if cost[i][k] >= INFINITE_COST {
                    BigUint::zero()
                } else {
                    t
                };
            }
        }
    }
    Ok(SankoffTables {
        n_colors,
        cost,
        count,
    })
}

/// Minimal number of shifts producing the tip coloring `d`.
pub fn parsimony_score(tree: &PhyloTree, d: &TipColoring) -> Result<u32> {
    Ok(sankoff(tree, d, d.n_colors())?.min_cost())
}

/// Exact number of parsimonious allocations producing `d`, `|φ⁻¹(d)|`.
pub fn class_size(tree: &PhyloTree, d: &TipColoring) -> Result<BigUint> {
    Ok(sankoff(tree, d, d.n_colors())?.class_size())
}

// ----------------------------------------------------------------------
// Lazy enumeration of an equivalence class
// ----------------------------------------------------------------------

/// Depth-first streaming enumeration of all parsimonious colorings with tip
/// restriction `d`. Memory stays O(nodes × colors) however large the class.
pub struct ClassEnumerator<'a> {
    tree: &'a PhyloTree,
    tables: SankoffTables,
    options: Vec<Vec<u32>>,
    choice: Vec<usize>,
    colors: Vec<u32>,
    state: EnumState,
}

enum EnumState {
    Fresh,
    Running,
    Done,
}

impl<'a> ClassEnumerator<'a> {
    /// Fill `options/colors` from `from` onward, taking the first choice
    /// everywhere (ascending index order is parents-first).
    fn descend(&mut self, from: usize) {
        for j in from..self.tree.n_nodes() {
            let opts = if j == 0 {
                self.tables.root_colors()
            } else {
                let pa = self.tree.parent(j).expect("non-root");
                self.tables.admissible(j, self.colors[pa])
            };
            debug_assert!(!opts.is_empty());
            self.colors[j] = opts[0];
            self.options[j] = opts;
            self.choice[j] = 0;
        }
    }
}

impl<'a> Iterator for ClassEnumerator<'a> {
    type Item = NodeColoring;

    fn next(&mut self) -> Option<NodeColoring> {
        match self.state {
            EnumState::Done => return None,
            EnumState::Fresh => {
                self.descend(0);
                self.state = EnumState::Running;
            }
            EnumState::Running => {
                // Odometer: advance the deepest node with options left.
                let mut j = self.tree.n_nodes();
                loop {
                    if j == 0 {
                        self.state = EnumState::Done;
                        return None;
                    }
                    j -= 1;
                    if self.choice[j] + 1 < self.options[j].len() {
                        self.choice[j] += 1;
                        self.colors[j] = self.options[j][self.choice[j]];
                        self.descend(j + 1);
                        break;
                    }
                }
            }
        }
        Some(NodeColoring {
            colors: self.colors.clone(),
        })
    }
}

/// Lazily enumerate the equivalence class of `d`. Every yielded coloring is
/// parsimonious with tip restriction exactly `d`; the stream length is
/// `class_size(tree, d)`.
pub fn enumerate_class<'a>(tree: &'a PhyloTree, d: &TipColoring) -> Result<ClassEnumerator<'a>> {
    let tables = sankoff(tree, d, d.n_colors())?;
    let nn = tree.n_nodes();
    Ok(ClassEnumerator {
        tree,
        tables,
        options: vec![Vec::new(); nn],
        choice: vec![0; nn],
        colors: vec![0; nn],
        state: EnumState::Fresh,
    })
}

/// Collect at most `cap` colorings, erroring (with the exact class size)
/// when the class is larger.
pub fn enumerate_up_to(
    tree: &PhyloTree,
    d: &TipColoring,
    cap: usize,
) -> Result<Vec<NodeColoring>> {
    let size = class_size(tree, d)?;
    if size > BigUint::from(cap) {
        return Err(Error::EnumerationCapExceeded {
            cap,
            class_size: size.to_string(),
        });
    }
    Ok(enumerate_class(tree, d)?.collect())
}

// ----------------------------------------------------------------------
// Partition counting
// ----------------------------------------------------------------------

/// Per-subtree counts of tree-compatible partitions: `n[i][k]` partitions of
/// the tips of the subtree at `i` into `k` groups, `m[i][k]` the marked
/// variant feeding the recursion (the group containing the subtree root
/// stays open to merging above).
pub struct PartitionCounts {
    pub n: Vec<Vec<BigUint>>,
    pub m: Vec<Vec<BigUint>>,
}

impl PartitionCounts {
    /// `N_K` at the root of the whole tree.
    pub fn n_root(&self, k: usize) -> &BigUint {
        &self.n[0][k]
    }

    pub fn m_root(&self, k: usize) -> &BigUint {
        &self.m[0][k]
    }

    pub fn k_max(&self) -> usize {
        self.n[0].len() - 1
    }
}

/// Count tree-compatible partitions of the tips into `1..=k_max` groups at
/// every subtree, by the product recursion over children (exact arithmetic).
///
/// For each internal node the children contribute either their unmarked
/// count `N` or their marked count `M` (subsets `I`, `|I| ≥ 2` of marked
/// children merge through the node into one group). Tracking the generating
/// polynomial in (groups `z`, marked-children `y`) turns the subset sum into
/// one truncated bivariate product per node.
pub fn count_partitions(tree: &PhyloTree, k_max: usize) -> Result<PartitionCounts> {
    if k_max < 1 {
        return Err(Error::InvalidInput("k_max must be ≥ 1".into()));
    }
    let nn = tree.n_nodes();
    let mut n_arr: Vec<Vec<BigUint>> = vec![Vec::new(); nn];
    let mut m_arr: Vec<Vec<BigUint>> = vec![Vec::new(); nn];
    for i in (0..nn).rev() {
        if tree.is_tip(i) {
            let mut base = vec![BigUint::zero(); k_max + 1];
            if k_max >= 1 {
                base[1] = BigUint::one();
            }
            n_arr[i] = base.clone();
            m_arr[i] = base;
            continue;
        }
        let l = tree.children(i).len();
        let z_cap = k_max + l; // highest group count ever extracted
        // poly[c][k]: Σ over ways to pick `c` marked children, total groups k.
        let mut poly: Vec<Vec<BigUint>> = vec![vec![BigUint::zero(); z_cap + 1]; l + 1];
        poly[0][0] = BigUint::one();
        for &child in tree.children(i) {
            let mut next: Vec<Vec<BigUint>> = vec![vec![BigUint::zero(); z_cap + 1]; l + 1];
            for c in 0..l + 1 {
                for k in 0..z_cap + 1 {
                    if poly[c][k].is_zero() {
                        continue;
                    }
                    // child unmarked: multiply by N_child(z)
                    for (kc, coeff) in n_arr[child].iter().enumerate() {
                        if coeff.is_zero() || k + kc > z_cap {
                            continue;
                        }
                        let add = &poly[c][k] * coeff;
                        next[c][k + kc] += add;
                    }
                    // child marked: multiply by y·M_child(z)
                    if c + 1 <= l {
                        for (kc, coeff) in m_arr[child].iter().enumerate() {
                            if coeff.is_zero() || k + kc > z_cap {
                                continue;
                            }
                            let add = &poly[c][k] * coeff;
                            next[c + 1][k + kc] += add;
                        }
                    }
                }
            }
            poly = next;
        }
        // Extract: marked subsets of size c ≥ 2 merge into one group
        // (k_total = K + c - 1); c = 0 keeps all children separate.
        let mut n_i = vec![BigUint::zero(); k_max + 1];
        let mut m_i = vec![BigUint::zero(); k_max + 1];
        for kk in 1..k_max + 1 {
            let mut n_acc = poly[0][kk].clone();
            let mut m_acc = BigUint::zero();
            for c in 1..l + 1 {
                let z = kk + c - 1;
                if z <= z_cap {
                    if c >= 2 {
                        n_acc += &poly[c][z];
                    }
                    m_acc += &poly[c][z];
                }
            }
            n_i[kk] = n_acc;
            m_i[kk] = m_acc;
        }
        n_arr[i] = n_i;
        m_arr[i] = m_i;
    }
    Ok(PartitionCounts { n: n_arr, m: m_arr })
}

/// Exact binomial coefficient, 0 outside the valid range.
pub fn binomial(n: i64, k: i64) -> BigUint {
    if k < 0 || n < 0 || k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k) as u64;
    let mut num = BigUint::one();
    let mut den = BigUint::one();
    for j in 0..k {
        num *= BigUint::from((n as u64) - j);
        den *= BigUint::from(j + 1);
    }
    num / den
}

/// Closed-form partition count for a rooted binary tree with `n` tips:
/// `N_{K+1} = C(2n−2−K, K)`, returned as the number of compatible
/// partitions into `K+1` groups.
pub fn closed_formula_binary(n_tips: usize, k: usize) -> BigUint {
    binomial(2 * n_tips as i64 - 2 - k as i64, k as i64)
}

/// Companion closed form for the marked counts: `M_K = C(2n−K, K−1)`.
pub fn closed_formula_binary_marked(n_tips: usize, k: usize) -> BigUint {
    if k == 0 {
        return BigUint::zero();
    }
    binomial(2 * n_tips as i64 - k as i64, k as i64 - 1)
}

// ----------------------------------------------------------------------
// Parsimony test (linear independence)
// ----------------------------------------------------------------------

/// Exact rank of an integer matrix by fraction-free (Bareiss) elimination.
fn exact_rank(mut m: Vec<Vec<BigInt>>) -> usize {
    let rows = m.len();
    if rows == 0 {
        return 0;
    }
    let cols = m[0].len();
    let mut rank = 0;
    let mut prev = BigInt::one();
    for col in 0..cols {
        let Some(p) = (rank..rows).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(rank, p);
        for r in rank + 1..rows {
            for c in col + 1..cols {
                let val = (&m[rank][col] * &m[r][c] - &m[r][col] * &m[rank][c]) / &prev;
                m[r][c] = val;
            }
            m[r][col] = BigInt::zero();
        }
        prev = m[rank][col].clone();
        rank += 1;
        if rank == rows || rank == cols {
            break;
        }
    }
    rank
}

/// Rank test on a shift support: true iff the tip-incidence columns of the
/// support plus the root column are linearly independent. Duplicate tip rows
/// are collapsed first (rank-preserving), keeping the elimination tiny.
pub fn is_parsimonious_support(tree: &PhyloTree, support: &[usize]) -> bool {
    let mut cols = Vec::with_capacity(support.len() + 1);
    cols.push(tree.root());
    cols.extend_from_slice(support);
    let mut profiles: Vec<Vec<BigInt>> = Vec::new();
    for k in 0..tree.n_tips() {
        let tip = tree.tip_node(k);
        let row: Vec<BigInt> = cols
            .iter()
            .map(|&j| {
                if tree.ancestors(tip).any(|a| a == j) {
                    BigInt::one()
                } else {
                    BigInt::zero()
                }
            })
            .collect();
        if !profiles.contains(&row) {
            profiles.push(row);
        }
    }
    exact_rank(profiles) == cols.len()
}

/// [`is_parsimonious_support`] on a full configuration.
pub fn is_parsimonious(tree: &PhyloTree, config: &ShiftConfig) -> bool {
    is_parsimonious_support(tree, &config.support())
}

// ----------------------------------------------------------------------
// Vandermonde-like identities
// ----------------------------------------------------------------------

/// Check both convolution identities used to prove the binary closed form:
///
/// ```text
/// C(n+n'−K, K)   = Σ_{k+k'=K} C(n−k,k) C(n'−k',k')
///                + Σ_{k+k'=K−1} C(n−1−k,k) C(n'−1−k',k')
/// C(n+n'+1−K, K) = Σ_{k+k'=K} C(n−k,k) C(n'−k',k')
///                + Σ_{k+k'=K−1} [C(n−1−k,k) C(n'−k',k') + C(n−k,k) C(n'−1−k',k')]
/// ```
pub fn vandermonde_identity_check(n: i64, n2: i64, k: i64) -> bool {
    let c = binomial;
    let conv = |a: i64, b: i64, kk: i64| -> BigUint {
        let mut s = BigUint::zero();
        for k1 in 0..=kk.max(0) {
            let k2 = kk - k1;
            s += c(a - k1, k1) * c(b - k2, k2);
        }
        s
    };
    let lhs1 = c(n + n2 - k, k);
    let rhs1 = conv(n, n2, k) + conv(n - 1, n2 - 1, k - 1);
    let lhs2 = c(n + n2 + 1 - k, k);
    let rhs2 = conv(n, n2, k) + conv(n - 1, n2, k - 1) + conv(n, n2 - 1, k - 1);
    lhs1 == rhs1 && lhs2 == rhs2
}
