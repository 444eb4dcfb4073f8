//! Geographic shortest paths (Dijkstra over edge lengths).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::graph::{NodeId, RoadGraph};
use crate::scalar::Scalar;

/// Node sequence with its hop count and length in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct Path<T> {
    pub nodes: Vec<NodeId>,
    pub length: T,
}

impl<T: Scalar> Path<T> {
    pub fn single(node: NodeId) -> Self {
        Path {
            nodes: vec![node],
            length: T::zero(),
        }
    }

    pub fn hops(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    pub fn start(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn end(&self) -> NodeId {
        *self.nodes.last().expect("path is never empty")
    }
}

struct Frontier<T> {
    dist: T,
    node: NodeId,
}

impl<T: PartialOrd> PartialEq for Frontier<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for Frontier<T> {}

impl<T: PartialOrd> PartialOrd for Frontier<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for Frontier<T> {
    // min-heap on (dist, node)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Minimum-length path from `s` to `t`, or `None` when disconnected.
///
/// Nodes settle in (distance, id) order, and on equal tentative distances the
/// smaller predecessor id wins, so the result is fully deterministic.
pub fn dijkstra<T: Scalar>(graph: &RoadGraph<T>, s: NodeId, t: NodeId) -> Option<Path<T>> {
    if s == t {
        return Some(Path::single(s));
    }
    let n = graph.node_count();
    let mut dist = vec![T::infinity(); n];
    let mut pred: Vec<Option<NodeId>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();

    dist[s.index()] = T::zero();
    heap.push(Frontier { dist: T::zero(), node: s });

    while let Some(Frontier { dist: d, node: u }) = heap.pop() {
        if settled[u.index()] {
            continue;
        }
        settled[u.index()] = true;
        if u == t {
            break;
        }
        for &(v, len) in graph.neighbors(u) {
            if settled[v.index()] {
                continue;
            }
            let nd = d + len;
            let cur = dist[v.index()];
            if nd < cur {
                dist[v.index()] = nd;
                pred[v.index()] = Some(u);
                heap.push(Frontier { dist: nd, node: v });
            } else if nd == cur && pred[v.index()].is_some_and(|p| u < p) {
                pred[v.index()] = Some(u);
            }
        }
    }

    if !settled[t.index()] {
        return None;
    }
    let mut nodes = vec![t];
    let mut cur = t;
    while let Some(p) = pred[cur.index()] {
        nodes.push(p);
        cur = p;
    }
    nodes.reverse();
    debug_assert_eq!(nodes[0], s);
    Some(Path {
        nodes,
        length: dist[t.index()],
    })
}

pub fn shortest_hop_count<T: Scalar>(graph: &RoadGraph<T>, s: NodeId, t: NodeId) -> Option<usize> {
    dijkstra(graph, s, t).map(|p| p.hops())
}
