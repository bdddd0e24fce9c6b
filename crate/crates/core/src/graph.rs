//! Skeleton graph construction and the adjacency partition strategies.
//!
//! Partition matrices are stored row = receiving joint, column = sending
//! joint, so aggregation is `out[w] = sum_v P[w][v] * in[v]`. Each strategy
//! splits the same degree-normalized adjacency `D^-1 (A + I)`.

use std::collections::{BTreeMap, VecDeque};

use kinesics_nn::{Real, Tensor};

use crate::error::{CoreError, Result};

/// Joint count, undirected bone list and the center joint used by
/// distance-aware partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonLayout {
    pub num_joints: usize,
    pub edges: Vec<(usize, usize)>,
    pub center: usize,
}

impl SkeletonLayout {
    /// 25-joint body layout (spine base = 0, spine shoulder = 20 is the center).
    pub fn body25() -> Self {
        const BONES: [(usize, usize); 24] = [
            (1, 2), (2, 21), (3, 21), (4, 3), (5, 21), (6, 5), (7, 6), (8, 7),
            (9, 21), (10, 9), (11, 10), (12, 11), (13, 1), (14, 13), (15, 14), (16, 15),
            (17, 1), (18, 17), (19, 18), (20, 19), (22, 23), (23, 8), (24, 25), (25, 12),
        ];
        Self { num_joints: 25, edges: BONES.iter().map(|(a, b)| (a - 1, b - 1)).collect(), center: 20 }
    }

    /// `V`-joint chain `0 - 1 - ... - V-1`, centered on joint 0. Handy for
    /// small test graphs.
    pub fn chain(num_joints: usize) -> Self {
        Self { num_joints, edges: (1..num_joints).map(|i| (i - 1, i)).collect(), center: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_joints == 0 {
            return Err(CoreError::Graph("layout has no joints".into()));
        }
        if self.center >= self.num_joints {
            return Err(CoreError::Graph(format!("center {} out of range", self.center)));
        }
        for &(a, b) in &self.edges {
            if a >= self.num_joints || b >= self.num_joints {
                return Err(CoreError::Graph(format!("edge ({a}, {b}) out of range 0..{}", self.num_joints)));
            }
            if a == b {
                return Err(CoreError::Graph(format!("self-loop on joint {a}")));
            }
        }
        let hops = self.hop_distances();
        if let Some(j) = (0..self.num_joints).find(|&j| hops[self.center][j].is_none()) {
            return Err(CoreError::Graph(format!("layout is disconnected: joint {j} unreachable")));
        }
        Ok(())
    }

    /// Symmetric 0/1 adjacency without self-links.
    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let mut a = vec![vec![false; self.num_joints]; self.num_joints];
        for &(i, j) in &self.edges {
            a[i][j] = true;
            a[j][i] = true;
        }
        a
    }

    /// All-pairs hop distance by BFS; `None` when unreachable.
    pub fn hop_distances(&self) -> Vec<Vec<Option<usize>>> {
        let adj = self.adjacency();
        (0..self.num_joints)
            .map(|src| {
                let mut dist = vec![None; self.num_joints];
                dist[src] = Some(0);
                let mut queue = VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    for v in 0..self.num_joints {
                        if adj[u][v] && dist[v].is_none() {
                            dist[v] = Some(dist[u].unwrap() + 1);
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// `D^-1 (A + I)`, rows summing to one.
    pub fn normalized_adjacency(&self) -> Vec<f64> {
        let v = self.num_joints;
        let adj = self.adjacency();
        let mut m = vec![0.0; v * v];
        for i in 0..v {
            let neighbours: Vec<usize> = (0..v).filter(|&j| j == i || adj[i][j]).collect();
            let w = 1.0 / neighbours.len() as f64;
            for j in neighbours {
                m[i * v + j] = w;
            }
        }
        m
    }
}

/// A way of splitting the normalized adjacency into `K` weight-sharing
/// neighbour groups.
pub trait PartitionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    /// `K` row-major `V x V` matrices summing to the normalized adjacency.
    fn partition(&self, layout: &SkeletonLayout) -> Vec<Vec<f64>>;
}

/// One group holding every neighbour and the joint itself.
pub struct UniformPartition;

impl PartitionStrategy for UniformPartition {
    fn name(&self) -> &'static str {
        "uniform"
    }
    fn partition(&self, layout: &SkeletonLayout) -> Vec<Vec<f64>> {
        vec![layout.normalized_adjacency()]
    }
}

/// Groups by hop distance: the joint itself, then its direct neighbours.
pub struct DistancePartition;

impl PartitionStrategy for DistancePartition {
    fn name(&self) -> &'static str {
        "distance"
    }
    fn partition(&self, layout: &SkeletonLayout) -> Vec<Vec<f64>> {
        let v = layout.num_joints;
        let norm = layout.normalized_adjacency();
        let mut parts = vec![vec![0.0; v * v]; 2];
        for i in 0..v {
            for j in 0..v {
                let k = if i == j { 0 } else { 1 };
                parts[k][i * v + j] = norm[i * v + j];
            }
        }
        parts
    }
}

/// Root, neighbours at the same or larger distance from the center, and
/// neighbours closer to the center.
pub struct SpatialPartition;

impl PartitionStrategy for SpatialPartition {
    fn name(&self) -> &'static str {
        "spatial"
    }
    fn partition(&self, layout: &SkeletonLayout) -> Vec<Vec<f64>> {
        let v = layout.num_joints;
        let norm = layout.normalized_adjacency();
        let hops = layout.hop_distances();
        let to_center = |j: usize| hops[j][layout.center].unwrap_or(usize::MAX);
        let mut parts = vec![vec![0.0; v * v]; 3];
        for i in 0..v {
            for j in 0..v {
                let w = norm[i * v + j];
                if w == 0.0 {
                    continue;
                }
                let k = if i == j {
                    0
                } else if to_center(j) >= to_center(i) {
                    1
                } else {
                    2
                };
                parts[k][i * v + j] = w;
            }
        }
        parts
    }
}

/// Name-keyed partition strategies.
pub struct PartitionRegistry {
    strategies: BTreeMap<&'static str, Box<dyn PartitionStrategy>>,
}

impl PartitionRegistry {
    pub fn builtin() -> Self {
        let mut reg = Self { strategies: BTreeMap::new() };
        reg.register(Box::new(UniformPartition));
        reg.register(Box::new(DistancePartition));
        reg.register(Box::new(SpatialPartition));
        reg
    }

    pub fn register(&mut self, strategy: Box<dyn PartitionStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<&dyn PartitionStrategy> {
        let key = if name == "uni" { "uniform" } else { name };
        self.strategies
            .get(key)
            .map(|s| s.as_ref())
            .ok_or_else(|| CoreError::Config(format!("unknown partition strategy '{name}' (known: {})", self.names().join(", "))))
    }
}

/// A validated layout together with its partition stack.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    pub layout: SkeletonLayout,
    pub strategy: String,
    partitions: Vec<Vec<f64>>,
}

pub fn build_graph(layout: &SkeletonLayout, strategy: &dyn PartitionStrategy) -> Result<SkeletonGraph> {
    layout.validate()?;
    Ok(SkeletonGraph { layout: layout.clone(), strategy: strategy.name().to_string(), partitions: strategy.partition(layout) })
}

/// Look the strategy up by name in the built-in registry.
pub fn build_named_graph(layout: &SkeletonLayout, strategy: &str) -> Result<SkeletonGraph> {
    let registry = PartitionRegistry::builtin();
    build_graph(layout, registry.get(strategy)?)
}

impl SkeletonGraph {
    pub fn num_joints(&self) -> usize {
        self.layout.num_joints
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn partitions(&self) -> &[Vec<f64>] {
        &self.partitions
    }

    /// `(K, V, V)` tensor of partition matrices.
    pub fn partition_tensor<R: Real>(&self) -> Tensor<R> {
        let v = self.num_joints();
        let data = self.partitions.iter().flatten().map(|x| R::of(*x)).collect();
        Tensor::from_vec(&[self.partitions.len(), v, v], data).expect("partition shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_normalized_a_plus_i() {
        let g = build_named_graph(&SkeletonLayout::body25(), "uniform").unwrap();
        assert_eq!(g.num_partitions(), 1);
        assert_eq!(g.partitions()[0], SkeletonLayout::body25().normalized_adjacency());
    }

    #[test]
    fn two_node_rows_sum_to_one() {
        let g = build_named_graph(&SkeletonLayout::chain(2), "uni").unwrap();
        let m = &g.partitions()[0];
        assert_eq!(m, &vec![0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn strategy_sizes() {
        let layout = SkeletonLayout::body25();
        let k: Vec<usize> = ["uniform", "distance", "spatial"]
            .iter()
            .map(|s| build_named_graph(&layout, s).unwrap().num_partitions())
            .collect();
        assert_eq!(k, vec![1, 2, 3]);
    }

    #[test]
    fn body25_is_a_connected_tree() {
        let layout = SkeletonLayout::body25();
        layout.validate().unwrap();
        assert_eq!(layout.edges.len(), 24);
    }

    #[test]
    fn disconnected_layout_is_rejected() {
        let layout = SkeletonLayout { num_joints: 4, edges: vec![(0, 1), (2, 3)], center: 0 };
        assert!(matches!(build_named_graph(&layout, "spatial"), Err(CoreError::Graph(_))));
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        assert!(PartitionRegistry::builtin().get("random").is_err());
    }
}
