use kinesics_core::graph::{build_named_graph, PartitionRegistry, SkeletonLayout};
use proptest::prelude::*;

/// 25-joint bone list, 1-based, written out independently of the library.
const BONES_ONE_BASED: [(usize, usize); 24] = [
    (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7), (9, 21), (10, 9), (11, 10), (12, 11),
    (13, 1), (14, 13), (15, 14), (16, 15), (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25),
    (25, 12),
];

/// Row-normalized `A + I` by direct degree counting.
fn expected_normalized(v: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; v]; v];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for &(a, b) in edges {
        m[a][b] = 1.0;
        m[b][a] = 1.0;
    }
    for row in &mut m {
        let degree: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= degree);
    }
    m
}

fn check_partitions_sum(layout: &SkeletonLayout, edges: &[(usize, usize)]) {
    let v = layout.num_joints;
    let want = expected_normalized(v, edges);
    for name in PartitionRegistry::builtin().names() {
        let graph = build_named_graph(layout, name).unwrap();
        for i in 0..v {
            for j in 0..v {
                let sum: f64 = graph.partitions().iter().map(|p| p[i * v + j]).sum();
                assert!((sum - want[i][j]).abs() <= 1e-6, "{name}: entry ({i}, {j}) sums to {sum}, want {}", want[i][j]);
            }
        }
        for p in graph.partitions() {
            assert!(p.iter().all(|x| *x >= 0.0), "{name}: negative weight");
            for i in 0..v {
                assert!(p[i * v..(i + 1) * v].iter().sum::<f64>() <= 1.0 + 1e-12, "{name}: row {i} exceeds 1");
            }
        }
    }
}

#[test]
fn body25_partitions_sum_to_the_normalized_adjacency() {
    let edges: Vec<_> = BONES_ONE_BASED.iter().map(|&(a, b)| (a - 1, b - 1)).collect();
    let layout = SkeletonLayout::body25();
    assert_eq!(layout.num_joints, 25);
    check_partitions_sum(&layout, &edges);
}

#[test]
fn strategies_have_the_expected_partition_counts() {
    let layout = SkeletonLayout::body25();
    let counts: Vec<(String, usize)> = ["uniform", "distance", "spatial"]
        .iter()
        .map(|n| (n.to_string(), build_named_graph(&layout, n).unwrap().num_partitions()))
        .collect();
    assert_eq!(counts, vec![("uniform".into(), 1), ("distance".into(), 2), ("spatial".into(), 3)]);
    assert!(build_named_graph(&layout, "nope").is_err());
}

proptest! {
    #[test]
    fn any_tree_partitions_sum_to_the_normalized_adjacency(parents in proptest::collection::vec(any::<prop::sample::Index>(), 1..15)) {
        // joint k+1 hangs off a random earlier joint
        let edges: Vec<(usize, usize)> = parents.iter().enumerate().map(|(k, p)| (p.index(k + 1), k + 1)).collect();
        let layout = SkeletonLayout { num_joints: parents.len() + 1, edges: edges.clone(), center: 0 };
        check_partitions_sum(&layout, &edges);
    }
}
