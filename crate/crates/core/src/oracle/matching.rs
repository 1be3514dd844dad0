use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::Edge;

#[derive(Clone, Copy)]
struct Arc {
    to: usize,
    cap: bool,
    cost: f64,
}

#[derive(Clone, Copy, PartialEq)]
struct State {
    dist: f64,
    node: usize,
}

impl Eq for State {}

impl Ord for State {
    // Min-heap on distance, then node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for State {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Maximum-weight (not necessarily perfect) bipartite matching by successive
/// shortest augmenting paths with Johnson potentials.
///
/// Returns, for each donor, the index into `edges` of its matched edge.
/// All weights are assumed positive. Augmentation stops once the cheapest
/// path no longer increases the total weight.
pub fn max_weight_matching(n_donors: usize, n_patients: usize, edges: &[Edge]) -> Vec<Option<usize>> {
    let source = 0;
    let sink = 1 + n_donors + n_patients;
    let n = sink + 1;
    let pnode = |p: usize| 1 + n_donors + p;

    let mut arcs: Vec<Arc> = Vec::with_capacity(2 * (edges.len() + n_donors + n_patients));
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let add = |arcs: &mut Vec<Arc>, adj: &mut Vec<Vec<usize>>, u: usize, v: usize, cost: f64| {
        adj[u].push(arcs.len());
        arcs.push(Arc { to: v, cap: true, cost });
        adj[v].push(arcs.len());
        arcs.push(Arc {
            to: u,
            cap: false,
            cost: -cost,
        });
    };
    let mut has_edge = vec![false; n_patients];
    let mut donor_has_edge = vec![false; n_donors];
    for e in edges {
        has_edge[e.patient] = true;
        donor_has_edge[e.donor] = true;
    }
    for (d, _) in donor_has_edge.iter().enumerate().filter(|x| *x.1) {
        add(&mut arcs, &mut adj, source, 1 + d, 0.0);
    }
    // Arc 2*i + first_edge_arc corresponds to edges[i].
    let first_edge_arc = arcs.len();
    for e in edges {
        add(&mut arcs, &mut adj, 1 + e.donor, pnode(e.patient), -e.weight);
    }
    for (p, _) in has_edge.iter().enumerate().filter(|x| *x.1) {
        add(&mut arcs, &mut adj, pnode(p), sink, 0.0);
    }

    // The initial residual graph is a DAG, so potentials are a single pass.
    let mut pot = vec![0.0; n];
    for e in edges {
        let v = pnode(e.patient);
        pot[v] = f64::min(pot[v], -e.weight);
    }
    pot[sink] = (0..n_patients)
        .filter(|&p| has_edge[p])
        .map(|p| pot[pnode(p)])
        .fold(0.0, f64::min);

    let mut dist = vec![f64::INFINITY; n];
    let mut prev = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    loop {
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        dist[source] = 0.0;
        heap.push(State {
            dist: 0.0,
            node: source,
        });
        while let Some(State { dist: du, node: u }) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &ai in &adj[u] {
                let a = arcs[ai];
                if !a.cap || done[a.to] {
                    continue;
                }
                // Reduced costs are non-negative up to rounding.
                let rc = (a.cost + pot[u] - pot[a.to]).max(0.0);
                let nd = du + rc;
                if nd < dist[a.to] {
                    dist[a.to] = nd;
                    prev[a.to] = ai;
                    heap.push(State { dist: nd, node: a.to });
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        // Decide on the true path cost rather than the reduced one.
        let mut cost = 0.0;
        let mut v = sink;
        while v != source {
            let ai = prev[v];
            cost += arcs[ai].cost;
            v = arcs[ai ^ 1].to;
        }
        if cost >= 0.0 {
            break;
        }
        let mut v = sink;
        while v != source {
            let ai = prev[v];
            arcs[ai].cap = false;
            arcs[ai ^ 1].cap = true;
            v = arcs[ai ^ 1].to;
        }
        for u in 0..n {
            if dist[u].is_finite() {
                pot[u] += dist[u];
            }
        }
    }

    let mut mate = vec![None; n_donors];
    for (i, e) in edges.iter().enumerate() {
        if !arcs[first_edge_arc + 2 * i].cap {
            mate[e.donor] = Some(i);
        }
    }
    mate
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search; totals summed in donor order like the solver's.
    fn brute(nd: usize, np: usize, edges: &[Edge]) -> f64 {
        let mut w = vec![vec![None; np]; nd];
        for e in edges {
            w[e.donor][e.patient] = Some(e.weight);
        }
        fn go(d: usize, used: u32, acc: f64, w: &[Vec<Option<f64>>]) -> f64 {
            if d == w.len() {
                return acc;
            }
            let mut best = go(d + 1, used, acc, w);
            for (p, x) in w[d].iter().enumerate() {
                if let Some(x) = x {
                    if used & (1 << p) == 0 {
                        best = best.max(go(d + 1, used | (1 << p), acc + x, w));
                    }
                }
            }
            best
        }
        go(0, 0, 0.0, &w)
    }

    #[test]
    fn agrees_with_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let nd = rng.random_range(0..=6);
            let np = rng.random_range(0..=6);
            let mut edges = Vec::new();
            for d in 0..nd {
                for p in 0..np {
                    if rng.random_bool(0.5) {
                        edges.push(Edge {
                            donor: d,
                            patient: p,
                            weight: rng.random_range(0.01..10.0),
                        });
                    }
                }
            }
            let mate = max_weight_matching(nd, np, &edges);
            let mut total = 0.0;
            let mut seen = std::collections::HashSet::new();
            for m in mate.iter().flatten() {
                total += edges[*m].weight;
                assert!(seen.insert(edges[*m].patient));
            }
            assert_eq!(total, brute(nd, np, &edges));
        }
    }

    #[test]
    fn prefers_two_matches_over_one_heavy() {
        let edges = [
            Edge {
                donor: 0,
                patient: 0,
                weight: 10.0,
            },
            Edge {
                donor: 0,
                patient: 1,
                weight: 9.0,
            },
            Edge {
                donor: 1,
                patient: 0,
                weight: 10.0,
            },
        ];
        let mate = max_weight_matching(2, 2, &edges);
        assert_eq!(mate, [Some(1), Some(2)]);
    }
}
