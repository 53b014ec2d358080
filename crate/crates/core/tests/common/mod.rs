#![allow(dead_code)]

pub mod schedules;

use asymm::graph::Graph;
use asymm::lagrangian::{MultiplierSet, NodeMultipliers, NodePenalties, PenaltySet};
use asymm::problem::{LocalizationInstance, ProblemSpec};
use asymm::SimConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random connected graph: a random recursive tree plus each remaining pair
/// with probability `extra`.
pub fn random_connected_graph(n: usize, extra: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for i in 1..n {
        edges.push((rng.gen_range(0..i), i));
    }
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.gen::<f64>() < extra {
                edges.push((a, b));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("tree plus edges is connected")
}

/// All-pairs shortest path lengths by Floyd-Warshall, independent of the
/// BFS used by the library.
pub fn floyd_diameter(g: &Graph) -> usize {
    let n = g.node_count();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
    }
    for &(a, b) in g.edges() {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.iter().flatten().copied().max().unwrap_or(0).max(1)
}

/// Random multipliers (μ ≥ 0) and positive penalties for `spec` on `graph`.
pub fn random_state(
    spec: &ProblemSpec,
    graph: &Graph,
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f64>>, MultiplierSet, PenaltySet) {
    let dim = spec.dim;
    let mut vec = |len: usize, lo: f64, hi: f64| -> Vec<f64> { (0..len).map(|_| rng.gen_range(lo..hi)).collect() };
    let xs: Vec<Vec<f64>> = (0..spec.node_count()).map(|_| vec(dim, -scale, scale)).collect();
    let mut mults = Vec::new();
    let mut pens = Vec::new();
    for (i, p) in spec.nodes.iter().enumerate() {
        let deg = graph.neighbors(i).len();
        mults.push(NodeMultipliers {
            lambda: vec(p.equality_count(), -2.0, 2.0),
            mu: vec(p.inequality_count(), 0.0, 2.0),
            nu: (0..deg).map(|_| vec(dim, -2.0, 2.0)).collect(),
        });
        pens.push(NodePenalties {
            rho_eq: vec(p.equality_count(), 0.1, 10.0),
            rho_ineq: vec(p.inequality_count(), 0.1, 10.0),
            rho_edge: vec(deg, 0.1, 10.0),
        });
    }
    (xs, MultiplierSet { nodes: mults }, PenaltySet { nodes: pens })
}

/// Global minimizer of `Σ_i ||x||²` (i.e. `||x||`) over the intersection of
/// the annuli of a 2-D instance. Starts from a square grid of spacing `res`
/// over `[-half, half]²` and refines by branch and bound: a cell survives
/// while it may touch every annulus and its lower bound on `||x||` does not
/// exceed the best exactly feasible center found so far. Stops once cells
/// are smaller than `tol`.
pub fn grid_search_oracle(inst: &LocalizationInstance, half: f64, res: f64, tol: f64) -> Option<Vec<f64>> {
    assert_eq!(inst.dimension, 2);
    let steps = (2.0 * half / res).round() as i64;
    let mut cells: Vec<[f64; 2]> = (0..=steps)
        .flat_map(|a| (0..=steps).map(move |b| [-half + a as f64 * res, -half + b as f64 * res]))
        .collect();
    let feasible = |p: &[f64; 2], slack: f64| {
        inst.anchors.iter().enumerate().all(|(i, c)| {
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
            d <= inst.outer_radius[i] + slack && d >= inst.inner_radius[i] - slack
        })
    };
    let norm = |p: &[f64; 2]| p[0].hypot(p[1]);
    let mut h = res;
    let mut best: Option<[f64; 2]> = None;
    loop {
        let reach = h / std::f64::consts::SQRT_2;
        cells.retain(|p| feasible(p, reach));
        for p in &cells {
            if feasible(p, 0.0) && best.map_or(true, |b| norm(p) < norm(&b)) {
                best = Some(*p);
            }
        }
        let bound = best.map_or(f64::INFINITY, |b| norm(&b));
        cells.retain(|p| norm(p) - reach <= bound);
        if h < tol || cells.is_empty() {
            return best.map(|b| b.to_vec());
        }
        h /= 3.0;
        cells = cells
            .iter()
            .flat_map(|p| (-1..=1).flat_map(move |a| (-1..=1).map(move |b| [p[0] + a as f64 * h, p[1] + b as f64 * h])))
            .collect();
    }
}


pub fn small_config(nodes: usize, dim: usize, seed: u64, max_iter: u64) -> SimConfig {
    SimConfig {
        seed,
        nodes,
        dim,
        max_iter,
        ..SimConfig::default()
    }
}

/// Instance class with every constraint kind: weighted squared-distance
/// costs, one affine equality and an annulus per node.
pub fn mixed_spec(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> ProblemSpec {
    use asymm::problem::{Affine, NodeProblem, RangeConstraint, RangeSide, SquaredDistance};
    use std::sync::Arc;
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let nodes = (0..n)
        .map(|_| {
            let anchor = point(rng);
            let inner = rng.gen_range(0.2..1.0);
            NodeProblem::new(
                Arc::new(SquaredDistance { center: point(rng), weight: rng.gen_range(0.1..2.0) }),
                vec![Arc::new(Affine { coeffs: point(rng), offset: rng.gen_range(-1.0..1.0) })],
                vec![
                    Arc::new(RangeConstraint { anchor: anchor.clone(), radius: inner + 1.0, side: RangeSide::Outer, smoothing: 0.0 }),
                    Arc::new(RangeConstraint { anchor, radius: inner, side: RangeSide::Inner, smoothing: 0.0 }),
                ],
            )
            .unwrap()
        })
        .collect();
    ProblemSpec::new(nodes).unwrap()
}
