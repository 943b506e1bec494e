//! Balanced transportation problem with integer supplies, solved as a
//! min-cost flow by successive shortest paths.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2};

struct Edge {
    to: usize,
    cap: u64,
    cost: f64,
}

struct Graph {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: u64, cost: f64) -> usize {
        let id = self.edges.len();
        self.edges.push(Edge { to, cap, cost });
        self.adj[from].push(id);
        self.edges.push(Edge {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[to].push(id + 1);
        id
    }
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Min-heap on distance, ties on node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Minimum-cost integral flow shipping `supply[i]` out of every row and
/// `demand[j]` into every column. Totals must agree. Returns the flow matrix.
pub fn solve(cost: ArrayView2<'_, f64>, supply: &[u64], demand: &[u64]) -> Array2<u64> {
    let (m, n) = cost.dim();
    assert_eq!(supply.len(), m);
    assert_eq!(demand.len(), n);
    let total: u64 = supply.iter().sum();
    assert_eq!(total, demand.iter().sum::<u64>(), "unbalanced transport problem");

    let source = m + n;
    let sink = m + n + 1;
    let mut g = Graph::new(m + n + 2);
    for (i, &s) in supply.iter().enumerate() {
        g.add_edge(source, i, s, 0.0);
    }
    let mut cell = Array2::<usize>::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            cell[[i, j]] = g.add_edge(i, m + j, total, cost[[i, j]]);
        }
    }
    for (j, &d) in demand.iter().enumerate() {
        g.add_edge(m + j, sink, d, 0.0);
    }

    // Costs are nonnegative, so zero potentials start out feasible.
    let nodes = m + n + 2;
    let mut potential = vec![0.0f64; nodes];
    let mut shipped = 0u64;
    while shipped < total {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut prev_edge = vec![usize::MAX; nodes];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &g.adj[u] {
                let edge = &g.edges[e];
                if edge.cap == 0 {
                    continue;
                }
                let reduced = (edge.cost + potential[u] - potential[edge.to]).max(0.0);
                let nd = d + reduced;
                if nd < dist[edge.to] {
                    dist[edge.to] = nd;
                    prev_edge[edge.to] = e;
                    heap.push(Entry(nd, edge.to));
                }
            }
        }
        assert!(dist[sink].is_finite(), "transport network disconnected");
        for v in 0..nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        let mut push = u64::MAX;
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            push = push.min(g.edges[e].cap);
            v = g.edges[e ^ 1].to;
        }
        let mut v = sink;
        while v != source {
            let e = prev_edge[v];
            g.edges[e].cap -= push;
            g.edges[e ^ 1].cap += push;
            v = g.edges[e ^ 1].to;
        }
        shipped += push;
    }

    cell.mapv(|e| g.edges[e ^ 1].cap)
}
