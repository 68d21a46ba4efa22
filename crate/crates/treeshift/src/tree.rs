//! Rooted phylogenetic trees with branch lengths.
//!
//! Node numbering convention (0-based): the `m` internal nodes take indices
//! `0..m` in preorder with the root at `0`, and the `n` tips take indices
//! `m..m+n` in Newick left-to-right order. Two properties follow and are
//! relied on throughout the crate:
//!
//! * `parent(i) < i` for every non-root node, so ascending index order is a
//!   valid parents-first traversal and descending order a children-first one;
//! * the incidence matrix `U` (see [`PhyloTree::incidence`]) is lower
//!   triangular and invertible.
//!
//! Node times are measured from the root (`t_root = 0`); a tree is
//! *ultrametric* when all tips sit at the same time `h` up to a `1e-8`
//! relative tolerance.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Relative tolerance on tip times used by the ultrametricity check.
pub const ULTRAMETRIC_RTOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct PhyloTree {
    n_tips: usize,
    n_internal: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    branch: Vec<f64>,
    time: Vec<f64>,
    label: Vec<String>,
    label_index: HashMap<String, usize>,
    height: f64,
    ultrametric: bool,
}

impl PhyloTree {
    // ------------------------------------------------------------------
    // Basic accessors
    // ------------------------------------------------------------------

    pub fn n_tips(&self) -> usize {
        self.n_tips
    }

    pub fn n_internal(&self) -> usize {
        self.n_internal
    }

    /// Total number of nodes, `m + n`.
    pub fn n_nodes(&self) -> usize {
        self.n_internal + self.n_tips
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn is_tip(&self, node: usize) -> bool {
        node >= self.n_internal
    }

    /// Tip rank (0-based, Newick left-to-right) of a tip node.
    pub fn tip_rank(&self, node: usize) -> Option<usize> {
        node.checked_sub(self.n_internal)
    }

    /// Node index of the tip with the given rank.
    pub fn tip_node(&self, rank: usize) -> usize {
        debug_assert!(rank < self.n_tips);
        self.n_internal + rank
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Length of the branch ending at `node` (0 for the root).
    pub fn branch_length(&self, node: usize) -> f64 {
        self.branch[node]
    }

    /// Time of `node`, measured from the root.
    pub fn node_time(&self, node: usize) -> f64 {
        self.time[node]
    }

    /// Largest tip time.
    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn label(&self, node: usize) -> &str {
        &self.label[node]
    }

    pub fn node_by_label(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn require_node(&self, label: &str) -> Result<usize> {
        self.node_by_label(label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn tip_labels(&self) -> Vec<&str> {
        (0..self.n_tips)
            .map(|k| self.label[self.n_internal + k].as_str())
            .collect()
    }

    pub fn is_ultrametric(&self) -> bool {
        self.ultrametric
    }

    pub fn require_ultrametric(&self) -> Result<()> {
        if self.ultrametric {
            Ok(())
        } else {
            Err(Error::NotUltrametric)
        }
    }

    /// Iterator over `node, parent(node), ..., root`.
    pub fn ancestors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        let mut cur = Some(node);
        std::iter::from_fn(move || {
            let here = cur?;
            cur = self.parent[here];
            Some(here)
        })
    }

    // ------------------------------------------------------------------
    // Distances and shared times
    // ------------------------------------------------------------------

    /// Most recent common ancestor. Relies on `parent(i) < i`.
    pub fn mrca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while a != b {
            if a > b {
                a = self.parent[a].expect("walked past the root");
            } else {
                b = self.parent[b].expect("walked past the root");
            }
        }
        a
    }

    /// Lists of tip nodes below each node (a node counts itself when a tip).
    pub(crate) fn descendant_tips(&self) -> Vec<Vec<u32>> {
        let nn = self.n_nodes();
        let mut desc: Vec<Vec<u32>> = vec![Vec::new(); nn];
        for i in (0..nn).rev() {
            if self.is_tip(i) {
                desc[i].push(i as u32);
            } else {
                let mut merged = Vec::new();
                for &c in &self.children[i] {
                    merged.extend_from_slice(&desc[c]);
                }
                desc[i] = merged;
            }
        }
        desc
    }

    /// Full `(m+n) x (m+n)` matrix of most-recent-common-ancestor times
    /// `t_ij`. Quadratic in the number of nodes; intended for moderate sizes
    /// and for oracle computations.
    pub fn mrca_times_full(&self) -> DMatrix<f64> {
        let nn = self.n_nodes();
        // desc[i] lists all nodes in the subtree rooted at i (i included).
        let mut desc: Vec<Vec<u32>> = vec![Vec::new(); nn];
        for i in (0..nn).rev() {
            let mut merged = vec![i as u32];
            for &c in &self.children[i] {
                merged.extend_from_slice(&desc[c]);
            }
            desc[i] = merged;
        }
        let mut m = DMatrix::<f64>::zeros(nn, nn);
        for a in 0..nn {
            let ta = self.time[a];
            m[(a, a)] = ta;
            for &c in &self.children[a] {
                for &x in &desc[c] {
                    m[(a, x as usize)] = ta;
                    m[(x as usize, a)] = ta;
                }
            }
            let ch = &self.children[a];
            for i in 0..ch.len() {
                for j in i + 1..ch.len() {
                    for &x in &desc[ch[i]] {
                        for &y in &desc[ch[j]] {
                            m[(x as usize, y as usize)] = ta;
                            m[(y as usize, x as usize)] = ta;
                        }
                    }
                }
            }
        }
        m
    }

    /// `n x n` matrix of mrca times between tips, indexed by tip rank.
    pub fn tip_mrca_times(&self) -> DMatrix<f64> {
        let n = self.n_tips;
        let m = self.n_internal;
        let desc = self.descendant_tips();
        let mut out = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            out[(k, k)] = self.time[m + k];
        }
        for a in 0..m {
            let ta = self.time[a];
            let ch = &self.children[a];
            for i in 0..ch.len() {
                for j in i + 1..ch.len() {
                    for &x in &desc[ch[i]] {
                        for &y in &desc[ch[j]] {
                            let (x, y) = (x as usize - m, y as usize - m);
                            out[(x, y)] = ta;
                            out[(y, x)] = ta;
                        }
                    }
                }
            }
        }
        out
    }

    /// `n x n` matrix of phylogenetic distances between tips,
    /// `d_ij = t_i + t_j - 2 t_ij`.
    pub fn tip_distances(&self) -> DMatrix<f64> {
        let n = self.n_tips;
        let m = self.n_internal;
        let mut d = self.tip_mrca_times();
        for i in 0..n {
            for j in 0..n {
                let v = self.time[m + i] + self.time[m + j] - 2.0 * d[(i, j)];
                d[(i, j)] = v;
            }
        }
        d
    }

    // ------------------------------------------------------------------
    // Incidence matrices
    // ------------------------------------------------------------------

    /// Incidence matrix `U`: `U[i, j] = 1` iff `j` is `i` itself or one of
    /// its ancestors. Lower triangular with unit diagonal under the numbering
    /// convention of this crate, hence invertible.
    pub fn incidence(&self) -> DMatrix<f64> {
        let nn = self.n_nodes();
        let mut u = DMatrix::<f64>::zeros(nn, nn);
        for i in 0..nn {
            for a in self.ancestors(i) {
                u[(i, a)] = 1.0;
            }
        }
        u
    }

    /// Tip rows of the incidence matrix: `T[k, j] = 1` iff the tip of rank
    /// `k` descends from node `j`.
    pub fn tip_incidence(&self) -> DMatrix<f64> {
        let n = self.n_tips;
        let m = self.n_internal;
        let mut t = DMatrix::<f64>::zeros(n, m + n);
        for k in 0..n {
            for a in self.ancestors(m + k) {
                t[(k, a)] = 1.0;
            }
        }
        t
    }

    // ------------------------------------------------------------------
    // Newick I/O
    // ------------------------------------------------------------------

    pub fn from_newick(text: &str) -> Result<Self> {
        parse_newick(text)
    }

    /// Serialize to Newick. Internal labels are always written, so
    /// `PhyloTree::from_newick(&t.to_newick())` reproduces `t` exactly
    /// (floats are printed in shortest round-trip form).
    pub fn to_newick(&self) -> String {
        let mut out = String::new();
        self.write_newick_node(self.root(), &mut out);
        out.push(';');
        out
    }

    fn write_newick_node(&self, node: usize, out: &mut String) {
        if !self.is_tip(node) {
            out.push('(');
            for (k, &c) in self.children[node].iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                self.write_newick_node(c, out);
            }
            out.push(')');
        }
        out.push_str(&self.label[node]);
        if self.parent[node].is_some() {
            let _ = write!(out, ":{}", self.branch[node]);
        }
    }

    /// Node table as TSV with columns `id, parent, length, time, label`.
    /// Ids are 1-based to match the usual presentation (root = 1); the
    /// root's parent is printed as 0.
    pub fn node_table_tsv(&self) -> String {
        let mut out = String::from("id\tparent\tlength\ttime\tlabel\n");
        for i in 0..self.n_nodes() {
            let pa = self.parent[i].map_or(0, |p| p + 1);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i + 1,
                pa,
                self.branch[i],
                self.time[i],
                self.label[i]
            );
        }
        out
    }

    // ------------------------------------------------------------------
    // Simulation
    // ------------------------------------------------------------------

    /// Simulate a pure-birth (Yule) tree: starting from two lineages,
    /// `n_tips - 2` uniformly chosen lineages split after exponential waits
    /// of rate `k * birth_rate` (`k` = current lineage count), a final wait
    /// closes the tree, and node times are rescaled so the height is exactly
    /// 1. Tips are labelled `t1..tn` in left-to-right order.
    pub fn simulate_yule(n_tips: usize, birth_rate: f64, seed: u64) -> Result<Self> {
        if n_tips < 2 {
            return Err(Error::InvalidParams(
                "a Yule tree needs at least 2 tips".into(),
            ));
        }
        if !(birth_rate > 0.0) || !birth_rate.is_finite() {
            return Err(Error::InvalidParams(format!(
                "birth rate must be positive and finite, got {birth_rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Arena of nodes under construction; `time` is the split time for
        // internals and is filled in at the end for pending lineages.
        struct Raw {
            children: Vec<usize>,
            time: f64,
        }
        let mut arena = vec![Raw { children: vec![1, 2], time: 0.0 }];
        arena.push(Raw { children: Vec::new(), time: f64::NAN });
        arena.push(Raw { children: Vec::new(), time: f64::NAN });
        let mut active: Vec<usize> = vec![1, 2];
        let mut t = 0.0;
        for k in 2..n_tips {
            let wait = Exp::new(k as f64 * birth_rate)
                .expect("positive rate")
                .sample(&mut rng);
            t += wait;
            let pick = rng.gen_range(0..active.len());
            let node = active[pick];
            arena[node].time = t;
            let a = arena.len();
            arena.push(Raw { children: Vec::new(), time: f64::NAN });
            let b = arena.len();
            arena.push(Raw { children: Vec::new(), time: f64::NAN });
            arena[node].children = vec![a, b];
            active[pick] = a;
            active.push(b);
        }
        let wait = Exp::new(n_tips as f64 * birth_rate)
            .expect("positive rate")
            .sample(&mut rng);
        let t_end = t + wait;
        for &node in &active {
            arena[node].time = t_end;
        }

        // Convert to a builder with times rescaled to height 1.
        let mut builder = TreeBuilder::new();
        for (i, raw) in arena.iter().enumerate() {
            builder.push(BuilderNode {
                children: raw.children.clone(),
                length: None, // filled below from times
                // Placeholder names; re-labelled t1..tn by tip rank below.
                label: if raw.children.is_empty() {
                    Some(format!("__pending{i}"))
                } else {
                    None
                },
                pos: None,
            });
        }
        for i in 0..arena.len() {
            for &c in &arena[i].children.clone() {
                builder.nodes[c].length = Some((arena[c].time - arena[i].time) / t_end);
            }
        }
        let mut tree = builder.finalize(0)?;
        // Tips were unlabeled; name them t1..tn and refresh the index.
        for k in 0..tree.n_tips {
            let node = tree.n_internal + k;
            let name = format!("t{}", k + 1);
            tree.label_index.remove(&tree.label[node]);
            tree.label_index.insert(name.clone(), node);
            tree.label[node] = name.clone();
        }
        Ok(tree)
    }
}

// ----------------------------------------------------------------------
// Builder: shared by the parser and the simulators
// ----------------------------------------------------------------------

pub(crate) struct BuilderNode {
    pub children: Vec<usize>,
    pub length: Option<f64>,
    pub label: Option<String>,
    /// Byte offset in the source text, when there is one (for errors).
    pub pos: Option<usize>,
}

pub(crate) struct TreeBuilder {
    pub nodes: Vec<BuilderNode>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        TreeBuilder { nodes: Vec::new() }
    }

    pub fn push(&mut self, node: BuilderNode) -> usize {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Validate and renumber: internals `0..m` in preorder, tips `m..m+n`
    /// left to right.
    pub fn finalize(self, root: usize) -> Result<PhyloTree> {
        // Count tips/internals and detect unary internals up front.
        let mut n_tips = 0;
        let mut n_internal = 0;
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.children.is_empty() {
                n_tips += 1;
            } else {
                if node.children.len() == 1 {
                    return Err(Error::InvalidTree(format!(
                        "internal node{} has a single child; unary nodes are not allowed",
                        self.nodes[idx]
                            .pos
                            .map_or(String::new(), |p| format!(" at byte {p}"))
                    )));
                }
                n_internal += 1;
            }
        }
        if n_tips < 2 {
            return Err(Error::InvalidTree(format!(
                "a tree needs at least 2 tips, found {n_tips}"
            )));
        }

        // Preorder numbering via an explicit stack (deep trees would blow
        // the call stack).
        let mut number = vec![usize::MAX; self.nodes.len()];
        let mut next_internal = 0;
        let mut next_tip = n_internal;
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![root];
        while let Some(idx) = stack.pop() {
            order.push(idx);
            if self.nodes[idx].children.is_empty() {
                number[idx] = next_tip;
                next_tip += 1;
            } else {
                number[idx] = next_internal;
                next_internal += 1;
                // Children pushed in reverse so they pop left to right.
                for &c in self.nodes[idx].children.iter().rev() {
                    stack.push(c);
                }
            }
        }
        if order.len() != self.nodes.len() {
            return Err(Error::InvalidTree(
                "tree has unreachable nodes".to_string(),
            ));
        }
        // The DFS above numbers tips in DFS order, which interleaves with
        // internal preorder; both counters are independent so the combined
        // assignment is exactly the documented convention.

        let nn = self.nodes.len();
        let mut parent = vec![None; nn];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); nn];
        let mut branch = vec![0.0; nn];
        let mut time = vec![0.0; nn];
        let mut label: Vec<String> = vec![String::new(); nn];

        for &idx in &order {
            let me = number[idx];
            for &c in &self.nodes[idx].children {
                let cn = number[c];
                parent[cn] = Some(me);
                children[me].push(cn);
            }
        }
        // Branch lengths and times in parents-first order.
        for &idx in &order {
            let me = number[idx];
            match (parent[me], self.nodes[idx].length) {
                (None, _) => {
                    branch[me] = 0.0;
                    time[me] = 0.0;
                }
                (Some(pa), Some(l)) => {
                    if !(l > 0.0) || !l.is_finite() {
                        return Err(Error::InvalidTree(format!(
                            "non-positive branch length {l}{}",
                            self.nodes[idx]
                                .pos
                                .map_or(String::new(), |p| format!(" at byte {p}"))
                        )));
                    }
                    branch[me] = l;
                    time[me] = time[pa] + l;
                }
                (Some(_), None) => {
                    return Err(Error::InvalidTree(format!(
                        "missing branch length{}",
                        self.nodes[idx]
                            .pos
                            .map_or(String::new(), |p| format!(" at byte {p}"))
                    )));
                }
            }
        }
        // Labels: tips must carry one, internals get `n<k>` (1-based
        // preorder) when absent.
        for &idx in &order {
            let me = number[idx];
            match (&self.nodes[idx].label, me < n_internal) {
                (Some(l), _) => label[me] = l.clone(),
                (None, true) => label[me] = format!("n{}", me + 1),
                (None, false) => {
                    return Err(Error::InvalidTree(format!(
                        "unlabeled tip{}",
                        self.nodes[idx]
                            .pos
                            .map_or(String::new(), |p| format!(" at byte {p}"))
                    )));
                }
            }
        }
        let mut label_index = HashMap::with_capacity(nn);
        for (i, l) in label.iter().enumerate() {
            if label_index.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidTree(format!("duplicate label `{l}`")));
            }
        }

        let height = (0..n_tips)
            .map(|k| time[n_internal + k])
            .fold(f64::NEG_INFINITY, f64::max);
        let ultrametric = (0..n_tips)
            .all(|k| (time[n_internal + k] - height).abs() <= ULTRAMETRIC_RTOL * height);

        Ok(PhyloTree {
            n_tips,
            n_internal,
            parent,
            children,
            branch,
            time,
            label,
            label_index,
            height,
            ultrametric,
        })
    }
}

// ----------------------------------------------------------------------
// Newick parser
// ----------------------------------------------------------------------

fn parse_newick(text: &str) -> Result<PhyloTree> {
    let bytes = text.as_bytes();
    let mut parser = NewickParser {
        bytes,
        pos: 0,
        builder: TreeBuilder::new(),
    };
    parser.skip_ws();
    let root = parser.subtree()?;
    // A root branch length ("(...):0.1;") is tolerated and ignored.
    parser.skip_ws();
    if parser.peek() == Some(b':') {
        parser.pos += 1;
        parser.number()?;
    }
    parser.skip_ws();
    match parser.peek() {
        Some(b';') => parser.pos += 1,
        _ => return Err(parser.err("expected `;`")),
    }
    parser.skip_ws();
    if parser.pos != bytes.len() {
        return Err(parser.err("trailing characters after `;`"));
    }
    parser.builder.finalize(root)
}

struct NewickParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    builder: TreeBuilder,
}

impl<'a> NewickParser<'a> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, message: &str) -> Error {
        Error::NewickParse {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn subtree(&mut self) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let mut children = Vec::new();
            loop {
                let child = self.branch()?;
                children.push(child);
                self.skip_ws();
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                    }
                    Some(b')') => {
                        self.pos += 1;
                        break;
                    }
                    _ => return Err(self.err("expected `,` or `)`")),
                }
            }
            let label = self.label()?;
            Ok(self.builder.push(BuilderNode {
                children,
                length: None,
                label,
                pos: Some(start),
            }))
        } else {
            let label = self.label()?;
            if label.is_none() {
                return Err(self.err("expected a tip label or `(`"));
            }
            Ok(self.builder.push(BuilderNode {
                children: Vec::new(),
                length: None,
                label,
                pos: Some(start),
            }))
        }
    }

    /// subtree followed by `:length`, as one child of an internal node.
    fn branch(&mut self) -> Result<usize> {
        let node = self.subtree()?;
        self.skip_ws();
        if self.peek() == Some(b':') {
            self.pos += 1;
            let l = self.number()?;
            self.builder.nodes[node].length = Some(l);
        }
        Ok(node)
    }

    fn label(&mut self) -> Result<Option<String>> {
        self.skip_ws();
        let start = self.pos;
        while matches!(
            self.peek(),
            Some(b) if !b.is_ascii_whitespace() && !matches!(b, b'(' | b')' | b',' | b':' | b';' | b'[' | b']' | b'\'' | b'"')
        ) {
            self.pos += 1;
        }
        if matches!(self.peek(), Some(b'[' | b']' | b'\'' | b'"')) {
            return Err(self.err("comments and quoted labels are not supported"));
        }
        if self.pos == start {
            Ok(None)
        } else {
            Ok(Some(
                std::str::from_utf8(&self.bytes[start..self.pos])
                    .map_err(|_| self.err("label is not valid UTF-8"))?
                    .to_string(),
            ))
        }
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        while matches!(
            self.peek(),
            Some(b) if b.is_ascii_digit() || matches!(b, b'.' | b'e' | b'E' | b'+' | b'-')
        ) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err("expected a branch length"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::NewickParse {
                position: start,
                message: "malformed branch length".to_string(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Five tips, two cherries and one lone tip; unit-scaled times.
    pub(crate) const FIVE_TIP: &str =
        "((Y1:0.5,Y2:0.5):0.5,(Y3:0.7,(Y4:0.3,Y5:0.3):0.4):0.3);";

    #[test]
    fn five_tip_numbering_follows_convention() {
        let t = PhyloTree::from_newick(FIVE_TIP).unwrap();
        assert_eq!(t.n_tips(), 5);
        assert_eq!(t.n_internal(), 4);
        // Internals in preorder: root, (Y1,Y2), (Y3,(Y4,Y5)), (Y4,Y5).
        assert_eq!(t.children(0), &[1, 2]);
        assert_eq!(t.children(1), &[4, 5]);
        assert_eq!(t.children(2), &[6, 3]);
        assert_eq!(t.children(3), &[7, 8]);
        // Tips left to right.
        let labels: Vec<_> = t.tip_labels().iter().map(|s| s.to_string()).collect();
        assert_eq!(labels, ["Y1", "Y2", "Y3", "Y4", "Y5"]);
        // Times from the root.
        assert_eq!(t.node_time(0), 0.0);
        assert_eq!(t.node_time(1), 0.5);
        assert_eq!(t.node_time(2), 0.3);
        assert_eq!(t.node_time(3), 0.7);
        for k in 0..5 {
            assert!((t.node_time(t.tip_node(k)) - 1.0).abs() < 1e-15);
        }
        assert!(t.is_ultrametric());
        assert_eq!(t.height(), 1.0);
        // parent(i) < i everywhere.
        for i in 1..t.n_nodes() {
            assert!(t.parent(i).unwrap() < i);
        }
    }

    #[test]
    fn newick_round_trip_is_exact() {
        let t = PhyloTree::from_newick(FIVE_TIP).unwrap();
        let again = PhyloTree::from_newick(&t.to_newick()).unwrap();
        assert_eq!(t, again);

        // Lengths that exercise float printing.
        let s = "(A:0.1234567890123457,(B:1e-05,C:3.3333333333333331e-01)x:2.5):0.0;";
        let t = PhyloTree::from_newick(s).unwrap();
        let again = PhyloTree::from_newick(&t.to_newick()).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn parse_errors_carry_positions() {
        let cases: &[(&str, &str)] = &[
            ("((A:1):1,B:2);", "single child"),
            ("(A:1,A:2);", "duplicate label"),
            ("(A:1,B);", "missing branch length"),
            ("(A:1,B:0);", "non-positive"),
            ("(A:1,B:-2);", "non-positive"),
            ("(A:1,B:2); extra", "trailing"),
            ("(,B:2);", "expected a tip label"),
            ("(A:1,B:2)", "expected `;`"),
            ("(A:1,'B':2);", "quoted"),
            ("A;", "at least 2 tips"),
        ];
        for (text, needle) in cases {
            let err = PhyloTree::from_newick(text).unwrap_err().to_string();
            assert!(
                err.contains(needle),
                "for {text:?} expected error containing {needle:?}, got {err:?}"
            );
        }
    }

    #[test]
    fn ultrametricity_detection() {
        let t = PhyloTree::from_newick("(A:1,B:2);").unwrap();
        assert!(!t.is_ultrametric());
        assert!(t.require_ultrametric().is_err());
        // Within the relative tolerance.
        let t = PhyloTree::from_newick("(A:1,B:1.000000001);").unwrap();
        assert!(t.is_ultrametric());
    }

    #[test]
    fn mrca_and_times_match_ancestor_walk_oracle() {
        let t = PhyloTree::simulate_yule(23, 0.1, 7).unwrap();
        let full = t.mrca_times_full();
        let nn = t.n_nodes();
        for a in 0..nn {
            for b in 0..nn {
                // Oracle: intersect ancestor chains.
                let anc: std::collections::HashSet<_> = t.ancestors(a).collect();
                let mrca = t.ancestors(b).find(|x| anc.contains(x)).unwrap();
                assert_eq!(t.mrca(a, b), mrca);
                assert_eq!(full[(a, b)], t.node_time(mrca));
            }
        }
        // Tip blocks agree with the full matrix.
        let tip_times = t.tip_mrca_times();
        let dist = t.tip_distances();
        let m = t.n_internal();
        for i in 0..t.n_tips() {
            for j in 0..t.n_tips() {
                assert_eq!(tip_times[(i, j)], full[(m + i, m + j)]);
                let expect =
                    t.node_time(m + i) + t.node_time(m + j) - 2.0 * full[(m + i, m + j)];
                assert!((dist[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn incidence_is_lower_triangular_ancestor_indicator() {
        let t = PhyloTree::from_newick(FIVE_TIP).unwrap();
        let u = t.incidence();
        let nn = t.n_nodes();
        for i in 0..nn {
            for j in 0..nn {
                let expect = if t.ancestors(i).any(|a| a == j) { 1.0 } else { 0.0 };
                assert_eq!(u[(i, j)], expect);
                if j > i {
                    assert_eq!(u[(i, j)], 0.0);
                }
            }
        }
        let tm = t.tip_incidence();
        for k in 0..t.n_tips() {
            for j in 0..nn {
                assert_eq!(tm[(k, j)], u[(t.tip_node(k), j)]);
            }
        }
    }

    #[test]
    fn yule_two_tips_is_unit_cherry() {
        let t = PhyloTree::simulate_yule(2, 0.1, 99).unwrap();
        assert_eq!(t.n_tips(), 2);
        assert_eq!(t.n_internal(), 1);
        assert_eq!(t.height(), 1.0);
        assert!((t.branch_length(1) - 1.0).abs() < 1e-12);
        assert!((t.branch_length(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn yule_trees_are_binary_ultrametric_and_deterministic() {
        let t = PhyloTree::simulate_yule(50, 0.1, 42).unwrap();
        assert_eq!(t.n_tips(), 50);
        assert_eq!(t.n_internal(), 49);
        assert!(t.is_ultrametric());
        assert!((t.height() - 1.0).abs() < 1e-12);
        for i in 0..t.n_internal() {
            assert_eq!(t.children(i).len(), 2);
        }
        for i in 1..t.n_nodes() {
            assert!(t.branch_length(i) > 0.0);
            assert!(t.parent(i).unwrap() < i);
        }
        let again = PhyloTree::simulate_yule(50, 0.1, 42).unwrap();
        assert_eq!(t, again);
        let other = PhyloTree::simulate_yule(50, 0.1, 43).unwrap();
        assert_ne!(t, other);
    }

    #[test]
    fn yule_cherry_count_matches_expectation() {
        // E[#cherries] = n/3 for a Yule tree; average over 200 replicates
        // with n = 24 should land within 10%.
        let n = 24usize;
        let mut total = 0usize;
        for seed in 0..200u64 {
            let t = PhyloTree::simulate_yule(n, 0.1, seed).unwrap();
            total += (0..t.n_internal())
                .filter(|&i| t.children(i).iter().all(|&c| t.is_tip(c)))
                .count();
        }
        let mean = total as f64 / 200.0;
        let expected = n as f64 / 3.0;
        assert!(
            (mean - expected).abs() < 0.1 * expected,
            "mean cherry count {mean} vs expected {expected}"
        );
    }

    #[test]
    fn node_table_lists_every_node() {
        let t = PhyloTree::from_newick(FIVE_TIP).unwrap();
        let tsv = t.node_table_tsv();
        let lines: Vec<_> = tsv.lines().collect();
        assert_eq!(lines.len(), 1 + t.n_nodes());
        assert_eq!(lines[0], "id\tparent\tlength\ttime\tlabel");
        assert_eq!(lines[1], "1\t0\t0\t0\tn1");
        let last = lines[lines.len() - 1];
        assert_eq!(last, "9\t4\t0.3\t1\tY5");
    }
}
