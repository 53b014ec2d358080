//! Fixed undirected communication topology.
//!
//! A [`Graph`] is always connected and has at least two nodes. Neighbor lists
//! are sorted by node id; that order is also the column order used by the
//! stop matrices and by all per-edge multiplier storage.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_GENERATION_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from undirected edges. Fails on self-loops, duplicate
    /// edges (in either orientation), out-of-range ids, `n < 2`, or when the
    /// result is disconnected.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count < 2 {
            return Err(Error::Graph(format!(
                "a network needs at least 2 nodes, got {node_count}"
            )));
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = vec![Vec::new(); node_count];
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(Error::Graph(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at node {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(Error::Graph(format!("duplicate edge ({a}, {b})")));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let graph = Graph {
            node_count,
            edges: seen.into_iter().collect(),
            adjacency,
        };
        if !graph.is_connected() {
            return Err(Error::Graph("graph is disconnected".into()));
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Undirected edges `(a, b)` with `a < b`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Neighbors of `i` excluding `i`, sorted by id.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Size of the closed neighborhood (neighbors plus the node itself).
    pub fn closed_degree(&self, i: usize) -> usize {
        self.adjacency[i].len() + 1
    }

    /// Position of `j` in the sorted neighbor list of `i`.
    pub fn neighbor_index(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i].binary_search(&j).ok()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbor_index(i, j).is_some()
    }

    /// Hop distances from `source`; `usize::MAX` marks unreachable nodes.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.node_count];
        let mut queue = VecDeque::from([source]);
        dist[source] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(0).iter().all(|&d| d != usize::MAX)
    }

    /// Exact diameter by all-pairs BFS, clamped to at least 1 so that stop
    /// matrices always have a row.
    pub fn diameter(&self) -> usize {
        (0..self.node_count)
            .map(|s| self.bfs_distances(s).into_iter().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
            .max(1)
    }

    /// Serializes as an edge list with a `# nodes N` header.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.node_count);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// Parses an edge list: one `i j` pair per line, 0-based ids. Blank lines and
/// `#` comments are skipped; a `# nodes N` header fixes the node count,
/// otherwise it is the largest id plus one.
pub fn load_edge_list(text: &str) -> Result<Graph> {
    let mut declared = None;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some("nodes") {
                let n = parts
                    .next()
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: "malformed `# nodes` header".into(),
                    })?;
                declared = Some(n);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `i j`, found `{line}`"),
            });
        }
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("`{s}` is not a node id"),
            })
        };
        edges.push((parse(fields[0])?, parse(fields[1])?));
    }
    let inferred = edges.iter().map(|&(a, b)| a.max(b) + 1).max().unwrap_or(0);
    Graph::from_edges(declared.unwrap_or(inferred), &edges)
}

/// Connected Watts-Strogatz small-world graph.
///
/// Starts from a ring lattice where every node is joined to its
/// `mean_degree / 2` nearest neighbors on each side, then rewires the far
/// endpoint of each lattice edge with probability `rewire_prob`, avoiding
/// self-loops and duplicates. Disconnected draws are discarded and the
/// generator retries on the next ChaCha stream of the same seed.
pub fn generate_watts_strogatz(
    n_nodes: usize,
    mean_degree: usize,
    rewire_prob: f64,
    seed: u64,
) -> Result<Graph> {
    if n_nodes < 2 {
        return Err(Error::Graph(format!(
            "a network needs at least 2 nodes, got {n_nodes}"
        )));
    }
    if mean_degree == 0 || !mean_degree.is_multiple_of(2) || (mean_degree >= n_nodes && (n_nodes, mean_degree) != (2, 2)) {
        return Err(Error::Graph(format!(
            "mean degree must be even, positive and below {n_nodes}, got {mean_degree}"
        )));
    }
    if !(0.0..=1.0).contains(&rewire_prob) {
        return Err(Error::Graph(format!(
            "rewiring probability {rewire_prob} outside [0, 1]"
        )));
    }
    // n = 2, K = 2 would need a double edge; the ring degenerates to K2.
    if n_nodes == 2 {
        return Graph::from_edges(2, &[(0, 1)]);
    }

    let half = mean_degree / 2;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);

        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_nodes];
        for i in 0..n_nodes {
            for off in 1..=half {
                let j = (i + off) % n_nodes;
                adj[i].insert(j);
                adj[j].insert(i);
            }
        }
        for off in 1..=half {
            for i in 0..n_nodes {
                let j = (i + off) % n_nodes;
                if rng.gen::<f64>() >= rewire_prob || !adj[i].contains(&j) {
                    continue;
                }
                // node i saturated: nowhere to rewire to
                if adj[i].len() >= n_nodes - 1 {
                    continue;
                }
                let target = loop {
                    let k = rng.gen_range(0..n_nodes);
                    if k != i && !adj[i].contains(&k) {
                        break k;
                    }
                };
                adj[i].remove(&j);
                adj[j].remove(&i);
                adj[i].insert(target);
                adj[target].insert(i);
            }
        }

        let edges: Vec<(usize, usize)> = adj
            .iter()
            .enumerate()
            .flat_map(|(a, set)| set.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect();
        match Graph::from_edges(n_nodes, &edges) {
            Ok(g) => return Ok(g),
            Err(Error::Graph(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::TopologyGeneration {
        attempts: MAX_GENERATION_ATTEMPTS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rewiring_gives_ring() {
        let g = generate_watts_strogatz(10, 2, 0.0, 123).unwrap();
        assert_eq!(g.edge_count(), 10);
        for i in 0..10 {
            assert_eq!(g.closed_degree(i), 3);
            assert!(g.has_edge(i, (i + 1) % 10));
        }
    }

    #[test]
    fn rewired_graph_keeps_edge_count_and_connectivity() {
        let g = generate_watts_strogatz(10, 2, 0.1, 7).unwrap();
        assert_eq!(g.edge_count(), 10);
        assert!(g.bfs_distances(0).iter().all(|&d| d != usize::MAX));
    }

    #[test]
    fn cycle_of_four_has_diameter_two() {
        let g = generate_watts_strogatz(4, 2, 0.0, 0).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert_eq!(g.diameter(), 2);
    }

    #[test]
    fn edge_list_examples() {
        let p3 = load_edge_list("0 1\n1 2").unwrap();
        assert_eq!(p3.node_count(), 3);
        assert_eq!(p3.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(p3.diameter(), 2);

        assert!(matches!(load_edge_list("0 1\n0 1"), Err(Error::Graph(m)) if m.contains("duplicate")));
        assert!(matches!(load_edge_list("0 1\n1 0"), Err(Error::Graph(_))));
        assert!(matches!(load_edge_list("0 1\n2 3"), Err(Error::Graph(m)) if m.contains("disconnected")));
        assert!(matches!(load_edge_list("# nodes 2\n0 1\n1 2"), Err(Error::Graph(m)) if m.contains("outside")));
        assert!(matches!(load_edge_list("0 x"), Err(Error::Parse { line: 1, .. })));
        assert!(load_edge_list("").is_err());
    }

    #[test]
    fn single_edge_diameter_is_one() {
        let k2 = load_edge_list("0 1").unwrap();
        assert_eq!(k2.diameter(), 1);
    }

    #[test]
    fn single_node_rejected() {
        assert!(Graph::from_edges(1, &[]).is_err());
        assert!(generate_watts_strogatz(1, 2, 0.1, 0).is_err());
        assert!(generate_watts_strogatz(10, 3, 0.1, 0).is_err());
        assert!(generate_watts_strogatz(4, 4, 0.1, 0).is_err());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_watts_strogatz(12, 4, 0.3, 99).unwrap();
        assert_eq!(load_edge_list(&g.to_edge_list()).unwrap(), g);
    }
}
