//! Weighted undirected graph and single-source shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
pub struct Graph {
    adjacency: Vec<Vec<(u32, f64)>>,
}

#[derive(Clone, Copy, PartialEq)]
struct State {
    cost: f64,
    node: u32,
}

impl Eq for State {}

impl Ord for State {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, then node id.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Graph {
    pub fn new(nodes: usize) -> Self {
        Graph {
            adjacency: vec![Vec::new(); nodes],
        }
    }

    /// Builds from `(a, b, weight)` triples. Weights must be non-negative.
    pub fn from_edges(nodes: usize, edges: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut g = Graph::new(nodes);
        for (a, b, w) in edges {
            g.add_edge(a, b, w);
        }
        g
    }

    pub fn add_edge(&mut self, a: u32, b: u32, weight: f64) {
        debug_assert!(weight >= 0.0);
        self.adjacency[a as usize].push((b, weight));
        self.adjacency[b as usize].push((a, weight));
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, node: u32) -> &[(u32, f64)] {
        &self.adjacency[node as usize]
    }

    /// Dijkstra from `source`; unreachable nodes get `f64::INFINITY`.
    pub fn shortest_paths(&self, source: u32) -> Vec<f64> {
        self.shortest_paths_multi(&[(source, 0.0)])
    }

    /// Dijkstra from several sources, each with an initial offset.
    pub fn shortest_paths_multi(&self, sources: &[(u32, f64)]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        for &(node, cost) in sources {
            if cost < dist[node as usize] {
                dist[node as usize] = cost;
                heap.push(State { cost, node });
            }
        }
        while let Some(State { cost, node }) = heap.pop() {
            if cost > dist[node as usize] {
                continue;
            }
            for &(next, w) in &self.adjacency[node as usize] {
                let c = cost + w;
                if c < dist[next as usize] {
                    dist[next as usize] = c;
                    heap.push(State { cost: c, node: next });
                }
            }
        }
        dist
    }
}
