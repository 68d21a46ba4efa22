//! Benchmarks for the data-parallel entry points.
//!
//! Every group name carries the execution policy of the current build
//! (`parallel` when the default feature is on, `sequential` otherwise), so the
//! two configurations can be compared directly:
//!
//! ```text
//! cargo bench -p treeshift                          # rayon fan-out
//! cargo bench -p treeshift --no-default-features    # sequential fallback
//! ```
//!
//! The workloads are intentionally small: the point is the relative cost of
//! the two policies on the same inputs, not absolute throughput.

use criterion::{criterion_group, criterion_main, Criterion};
use std::time::Duration;
use treeshift::em::{AlphaMode, EmOptions};
use treeshift::exec::is_parallel;
use treeshift::model::{simulate_tip_traits, ModelParams, ProcessKind};
use treeshift::parsimony::count_partitions;
use treeshift::selection::{select, SelectionConfig};
use treeshift::sim::{draw_balanced_shifts, run_study, StudyConfig};
use treeshift::tree::PhyloTree;

fn policy() -> &'static str {
    if is_parallel() {
        "parallel"
    } else {
        "sequential"
    }
}

/// Small EM budget so a full selection grid stays in benchmark territory.
fn quick_em(seed: u64) -> EmOptions {
    EmOptions {
        max_iter: 30,
        tol: 1e-6,
        alpha: AlphaMode::Estimate,
        extra_restarts: 0,
        seed,
    }
}

fn bench_select_grid(c: &mut Criterion) {
    let tree = PhyloTree::simulate_yule(24, 1.0, 11).expect("yule tree");
    let shifts = draw_balanced_shifts(&tree, 2, 0.0, 5).expect("shifts");
    let truth = ModelParams::Ou {
        alpha: 3.0,
        gamma2: 0.5,
        shifts,
    };
    let y = simulate_tip_traits(&tree, &truth, 17).expect("traits");
    let config = SelectionConfig {
        k_max: Some(3),
        alpha_grid: Some(vec![1.0, 3.0, 9.0]),
        em: quick_em(0),
        ..SelectionConfig::default()
    };
    let mut group = c.benchmark_group(format!("select_grid/{}", policy()));
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(10));
    group.bench_function("ou_n24_grid3_k3", |b| {
        b.iter(|| select(&tree, &y, ProcessKind::Ou, &config).expect("select"))
    });
    group.finish();
}

fn bench_study_replicates(c: &mut Criterion) {
    let mut config = StudyConfig {
        n_tips: 16,
        replicates: 4,
        k_true: 1,
        seed: 3,
        ..StudyConfig::default()
    };
    config.selection.k_max = Some(2);
    config.selection.alpha_grid = Some(vec![3.0]);
    config.selection.em = quick_em(1);
    let mut group = c.benchmark_group(format!("study_replicates/{}", policy()));
    group
        .sample_size(10)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(10));
    group.bench_function("ou_n16_reps4", |b| {
        b.iter(|| run_study(&config).expect("study"))
    });
    group.finish();
}

fn bench_count_partitions(c: &mut Criterion) {
    // Pure combinatorics; identical work in both builds. Serves as the
    // control: any difference here is measurement noise, not policy.
    let tree = PhyloTree::simulate_yule(256, 1.0, 7).expect("yule tree");
    let mut group = c.benchmark_group(format!("count_partitions/{}", policy()));
    group
        .sample_size(20)
        .warm_up_time(Duration::from_secs(1))
        .measurement_time(Duration::from_secs(5));
    group.bench_function("n256_k8", |b| b.iter(|| count_partitions(&tree, 8).expect("count")));
    group.finish();
}

criterion_group!(
    benches,
    bench_select_grid,
    bench_study_replicates,
    bench_count_partitions
);
criterion_main!(benches);
