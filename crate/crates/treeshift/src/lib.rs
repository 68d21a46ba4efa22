//! Detection of adaptive shifts in a quantitative trait evolving along a
//! phylogenetic tree.
//!
//! A trait follows a Brownian motion (BM) or a stationary Ornstein-Uhlenbeck
//! process (OUsun) on a rooted, ultrametric, time-calibrated tree; at a few
//! branches the mean (BM) or the primary optimum (OU) jumps. This crate
//! provides:
//!
//! * trees: Newick I/O, incidence matrices, distances, Yule simulation
//!   ([`tree`]);
//! * the shift model itself: tip means, covariances, trait simulation, and
//!   the BM/OU shift correspondence ([`model`]);
//! * the combinatorics of shift identifiability: colorings of the tips,
//!   equivalence classes of shift allocations, and their exact counts
//!   ([`parsimony`]);
//! * an EM fitter for a fixed number of shifts `K` ([`em`]);
//! * penalized model selection of `K` with a data-driven penalty
//!   ([`selection`]);
//! * simulation-study drivers and scores ([`sim`]).
//!
//! Numbering convention: internal nodes come first, `0..m` in preorder with
//! the root at index 0; tips occupy `m..m+n` in Newick left-to-right order.
//! Edges are identified by their child node.

pub mod error;
pub mod exec;
pub mod model;
pub mod numerics;
pub mod parsimony;
pub mod selection;
pub mod sim;
pub mod tree;

pub mod em;

pub use error::{Error, Result};
pub use model::{ModelParams, ProcessKind, Shift, ShiftConfig};
pub use tree::PhyloTree;
