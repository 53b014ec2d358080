//! Augmented Lagrangian machinery.
//!
//! For the consensus problem the Augmented Lagrangian is
//!
//! ```text
//! L_P(x, Λ) = Σ_i { f_i(x_i)
//!                   + Σ_{j ∈ N_i \ i} [ ν_ijᵀ(x_i - x_j) + ρ_ij/2 ||x_i - x_j||² ]
//!                   + λ_iᵀ h_i(x_i) + ρ_Ei/2 ||h_i(x_i)||²
//!                   + 1/(2ρ_Ii) ( max{0, μ_i + ρ_Ii g_i(x_i)}² - μ_i² ) }
//! ```
//!
//! Node `i` only sees its closed neighborhood, through the local function
//!
//! ```text
//! L̃_i = f_i(x_i) + Σ_j [ x_iᵀ(ν_ij - ν_ji) + (ρ_ij + ρ_ji)/2 ||x_i - x_j||² ] + (constraint terms of i)
//! ```
//!
//! whose `x_i`-gradient coincides with the block gradient of `L_P`. Both
//! routes are implemented independently here: [`local_al_gradient`] works on a
//! [`LocalView`], [`global_al_block_gradient`] differentiates the global sum
//! term by term.
//!
//! Vector-valued constraints are handled entry-wise: every equality and
//! inequality carries its own multiplier and penalty.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;
use crate::problem::{NodeProblem, ProblemSpec};

/// Multipliers owned by one node: `λ_i`, `μ_i` and `ν_ij` for each neighbor
/// `j` (in sorted neighbor order).
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMultipliers {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu: Vec<Vec<f64>>,
}

impl NodeMultipliers {
    pub fn zeros(prob: &NodeProblem, degree: usize) -> Self {
        NodeMultipliers {
            lambda: vec![0.0; prob.equality_count()],
            mu: vec![0.0; prob.inequality_count()],
            nu: vec![vec![0.0; prob.dim]; degree],
        }
    }

    /// All scalars in a fixed order (λ, μ, then ν by neighbor).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.lambda.clone();
        out.extend_from_slice(&self.mu);
        for v in &self.nu {
            out.extend_from_slice(v);
        }
        out
    }
}

/// Penalties owned by one node: `ρ_Ei`, `ρ_Ii` per constraint entry and `ρ_ij`
/// per neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct NodePenalties {
    pub rho_eq: Vec<f64>,
    pub rho_ineq: Vec<f64>,
    pub rho_edge: Vec<f64>,
}

impl NodePenalties {
    pub fn uniform(prob: &NodeProblem, degree: usize, value: f64) -> Self {
        NodePenalties {
            rho_eq: vec![value; prob.equality_count()],
            rho_ineq: vec![value; prob.inequality_count()],
            rho_edge: vec![value; degree],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.rho_eq.clone();
        out.extend_from_slice(&self.rho_ineq);
        out.extend_from_slice(&self.rho_edge);
        out
    }

    pub fn all_positive(&self) -> bool {
        self.flatten().iter().all(|&r| r > 0.0)
    }
}

/// Network-wide multipliers Λ.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    pub nodes: Vec<NodeMultipliers>,
}

impl MultiplierSet {
    pub fn zeros(spec: &ProblemSpec, graph: &Graph) -> Self {
        MultiplierSet {
            nodes: spec
                .nodes
                .iter()
                .enumerate()
                .map(|(i, p)| NodeMultipliers::zeros(p, graph.neighbors(i).len()))
                .collect(),
        }
    }

    /// `ν_ij`, if `(i, j)` is an edge.
    pub fn nu(&self, graph: &Graph, i: usize, j: usize) -> Option<&[f64]> {
        graph
            .neighbor_index(i, j)
            .map(|idx| self.nodes[i].nu[idx].as_slice())
    }
}

/// Network-wide penalties P.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySet {
    pub nodes: Vec<NodePenalties>,
}

impl PenaltySet {
    pub fn uniform(spec: &ProblemSpec, graph: &Graph, value: f64) -> Self {
        PenaltySet {
            nodes: spec
                .nodes
                .iter()
                .enumerate()
                .map(|(i, p)| NodePenalties::uniform(p, graph.neighbors(i).len(), value))
                .collect(),
        }
    }

    pub fn rho(&self, graph: &Graph, i: usize, j: usize) -> Option<f64> {
        graph
            .neighbor_index(i, j)
            .map(|idx| self.nodes[i].rho_edge[idx])
    }
}

/// What node `i` knows about neighbor `j`.
#[derive(Debug, Clone, Copy)]
pub struct NeighborData<'a> {
    pub id: usize,
    pub x: &'a [f64],
    /// `ν_ji`
    pub nu_in: &'a [f64],
    /// `ρ_ji`
    pub rho_in: f64,
}

/// Everything the local Augmented Lagrangian of node `i` depends on.
#[derive(Debug, Clone)]
pub struct LocalView<'a> {
    pub node: usize,
    pub x: &'a [f64],
    pub own: &'a NodeMultipliers,
    pub penalties: &'a NodePenalties,
    pub neighbors: Vec<NeighborData<'a>>,
}

impl<'a> LocalView<'a> {
    /// Assembles a view from per-neighbor data that may be missing
    /// (`None`), failing with [`Error::IncompleteNeighborhood`] if so.
    pub fn assemble(
        node: usize,
        x: &'a [f64],
        own: &'a NodeMultipliers,
        penalties: &'a NodePenalties,
        neighbors: impl IntoIterator<Item = (usize, Option<&'a [f64]>, Option<&'a [f64]>, Option<f64>)>,
    ) -> Result<Self> {
        let neighbors = neighbors
            .into_iter()
            .map(|(id, x, nu_in, rho_in)| match (x, nu_in, rho_in) {
                (Some(x), Some(nu_in), Some(rho_in)) => Ok(NeighborData {
                    id,
                    x,
                    nu_in,
                    rho_in,
                }),
                _ => Err(Error::IncompleteNeighborhood { node, neighbor: id }),
            })
            .collect::<Result<Vec<_>>>()?;
        if neighbors.len() != own.nu.len() || neighbors.len() != penalties.rho_edge.len() {
            return Err(Error::Dimension {
                expected: own.nu.len(),
                got: neighbors.len(),
            });
        }
        Ok(LocalView {
            node,
            x,
            own,
            penalties,
            neighbors,
        })
    }

    /// Restriction of a global state to the closed neighborhood of `i`.
    pub fn from_global(
        i: usize,
        xs: &'a [Vec<f64>],
        mults: &'a MultiplierSet,
        pens: &'a PenaltySet,
        graph: &'a Graph,
    ) -> Self {
        let neighbors = graph
            .neighbors(i)
            .iter()
            .map(|&j| {
                let back = graph
                    .neighbor_index(j, i)
                    .expect("graph adjacency is symmetric");
                NeighborData {
                    id: j,
                    x: &xs[j],
                    nu_in: &mults.nodes[j].nu[back],
                    rho_in: pens.nodes[j].rho_edge[back],
                }
            })
            .collect();
        LocalView {
            node: i,
            x: &xs[i],
            own: &mults.nodes[i],
            penalties: &pens.nodes[i],
            neighbors,
        }
    }

    /// Same view with `x_i` replaced.
    pub fn at<'b>(&self, x: &'b [f64]) -> LocalView<'b>
    where
        'a: 'b,
    {
        LocalView {
            node: self.node,
            x,
            own: self.own,
            penalties: self.penalties,
            neighbors: self.neighbors.clone(),
        }
    }
}

fn inequality_term(mu: f64, rho: f64, g: f64) -> f64 {
    let shifted = (mu + rho * g).max(0.0);
    (shifted * shifted - mu * mu) / (2.0 * rho)
}

/// Constraint part shared by the local and the global value:
/// `λᵀh + ρ_E/2 ||h||² + Σ 1/(2ρ_I)(max{0, μ + ρ_I g}² - μ²)`.
fn constraint_terms(prob: &NodeProblem, x: &[f64], own: &NodeMultipliers, pens: &NodePenalties) -> f64 {
    let mut total = 0.0;
    for ((h, lambda), rho) in prob.equalities.iter().zip(&own.lambda).zip(&pens.rho_eq) {
        let hv = h.value(x);
        total += lambda * hv + 0.5 * rho * hv * hv;
    }
    for ((g, mu), rho) in prob.inequalities.iter().zip(&own.mu).zip(&pens.rho_ineq) {
        total += inequality_term(*mu, *rho, g.value(x));
    }
    total
}

/// Adds the gradient of the constraint terms at `x` into `out`.
fn add_constraint_gradient(
    prob: &NodeProblem,
    x: &[f64],
    own: &NodeMultipliers,
    pens: &NodePenalties,
    out: &mut [f64],
) {
    let mut scratch = vec![0.0; prob.dim];
    for ((h, lambda), rho) in prob.equalities.iter().zip(&own.lambda).zip(&pens.rho_eq) {
        h.gradient(x, &mut scratch);
        linalg::axpy(lambda + rho * h.value(x), &scratch, out);
    }
    for ((g, mu), rho) in prob.inequalities.iter().zip(&own.mu).zip(&pens.rho_ineq) {
        let weight = (mu + rho * g.value(x)).max(0.0);
        if weight > 0.0 {
            g.gradient(x, &mut scratch);
            linalg::axpy(weight, &scratch, out);
        }
    }
}

/// Value of the local Augmented Lagrangian of the viewed node.
pub fn local_al_value(view: &LocalView<'_>, prob: &NodeProblem) -> f64 {
    let x = view.x;
    let mut total = prob.cost.value(x);
    for (idx, nb) in view.neighbors.iter().enumerate() {
        let nu_diff = linalg::sub(&view.own.nu[idx], nb.nu_in);
        let rho_sum = view.penalties.rho_edge[idx] + nb.rho_in;
        total += linalg::dot(x, &nu_diff) + 0.5 * rho_sum * linalg::dist(x, nb.x).powi(2);
    }
    total + constraint_terms(prob, x, view.own, view.penalties)
}

/// Gradient of [`local_al_value`] with respect to `x_i`.
pub fn local_al_gradient(view: &LocalView<'_>, prob: &NodeProblem) -> Vec<f64> {
    let x = view.x;
    let mut grad = prob.cost.gradient_vec(x);
    for (idx, nb) in view.neighbors.iter().enumerate() {
        let rho_sum = view.penalties.rho_edge[idx] + nb.rho_in;
        for k in 0..grad.len() {
            grad[k] += (view.own.nu[idx][k] - nb.nu_in[k]) + rho_sum * (x[k] - nb.x[k]);
        }
    }
    add_constraint_gradient(prob, x, view.own, view.penalties, &mut grad);
    grad
}

fn check_global(
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    spec: &ProblemSpec,
    graph: &Graph,
) -> Result<()> {
    spec.check_points(xs)?;
    let n = spec.node_count();
    for len in [graph.node_count(), mults.nodes.len(), pens.nodes.len()] {
        if len != n {
            return Err(Error::Dimension { expected: n, got: len });
        }
    }
    Ok(())
}

/// Augmented Lagrangian of the whole network.
pub fn global_al_value(
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    spec: &ProblemSpec,
    graph: &Graph,
) -> Result<f64> {
    check_global(xs, mults, pens, spec, graph)?;
    let mut total = 0.0;
    for (i, prob) in spec.nodes.iter().enumerate() {
        let x = &xs[i];
        total += prob.cost.value(x);
        for (idx, &j) in graph.neighbors(i).iter().enumerate() {
            let diff = linalg::sub(x, &xs[j]);
            total += linalg::dot(&mults.nodes[i].nu[idx], &diff)
                + 0.5 * pens.nodes[i].rho_edge[idx] * linalg::norm_sq(&diff);
        }
        total += constraint_terms(prob, x, &mults.nodes[i], &pens.nodes[i]);
    }
    Ok(total)
}

/// Block gradient `∇_{x_i} L_P` obtained by differentiating every term of the
/// global sum in which `x_i` appears: node `i`'s own terms and the edge terms
/// `(j, i)` owned by its neighbors.
pub fn global_al_block_gradient(
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    spec: &ProblemSpec,
    graph: &Graph,
    i: usize,
) -> Result<Vec<f64>> {
    check_global(xs, mults, pens, spec, graph)?;
    let prob = &spec.nodes[i];
    let x = &xs[i];
    let mut grad = prob.cost.gradient_vec(x);
    // terms ν_ijᵀ(x_i - x_j) + ρ_ij/2 ||x_i - x_j||² of node i
    for (idx, &j) in graph.neighbors(i).iter().enumerate() {
        let rho = pens.nodes[i].rho_edge[idx];
        for k in 0..grad.len() {
            grad[k] += mults.nodes[i].nu[idx][k] + rho * (x[k] - xs[j][k]);
        }
    }
    // terms ν_jiᵀ(x_j - x_i) + ρ_ji/2 ||x_j - x_i||² of each neighbor j
    for &j in graph.neighbors(i) {
        let back = graph.neighbor_index(j, i).expect("symmetric adjacency");
        let rho = pens.nodes[j].rho_edge[back];
        for k in 0..grad.len() {
            grad[k] += -mults.nodes[j].nu[back][k] - rho * (xs[j][k] - x[k]);
        }
    }
    add_constraint_gradient(prob, x, &mults.nodes[i], &pens.nodes[i], &mut grad);
    Ok(grad)
}

/// Full gradient `∇_x L_P`, one block per node.
pub fn global_al_gradient(
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    spec: &ProblemSpec,
    graph: &Graph,
) -> Result<Vec<Vec<f64>>> {
    (0..spec.node_count())
        .map(|i| global_al_block_gradient(xs, mults, pens, spec, graph, i))
        .collect()
}

/// One multiplier ascent step of the viewed node:
/// `ν_ij += ρ_ij (x_i - x_j)`, `λ_i += ρ_Ei h_i(x_i)`,
/// `μ_i = max{0, μ_i + ρ_Ii g_i(x_i)}`.
pub fn update_node_multipliers(view: &LocalView<'_>, prob: &NodeProblem) -> NodeMultipliers {
    let x = view.x;
    let nu = view
        .neighbors
        .iter()
        .enumerate()
        .map(|(idx, nb)| {
            let rho = view.penalties.rho_edge[idx];
            view.own.nu[idx]
                .iter()
                .zip(x.iter().zip(nb.x))
                .map(|(v, (xi, xj))| v + rho * (xi - xj))
                .collect()
        })
        .collect();
    let lambda = prob
        .equalities
        .iter()
        .zip(&view.own.lambda)
        .zip(&view.penalties.rho_eq)
        .map(|((h, l), rho)| l + rho * h.value(x))
        .collect();
    let mu = prob
        .inequalities
        .iter()
        .zip(&view.own.mu)
        .zip(&view.penalties.rho_ineq)
        .map(|((g, m), rho)| (m + rho * g.value(x)).max(0.0))
        .collect();
    NodeMultipliers { lambda, mu, nu }
}

/// Per-constraint residuals driving the penalty rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Violations {
    /// `|h(x_i)|`
    pub eq: Vec<f64>,
    /// `|max{g(x_i), -μ/ρ_I}|`
    pub ineq: Vec<f64>,
    /// `||x_i - x_j||`
    pub edge: Vec<f64>,
}

/// Residuals at the current view, measured with the pre-update multipliers.
pub fn node_violations(view: &LocalView<'_>, prob: &NodeProblem) -> Violations {
    let x = view.x;
    Violations {
        eq: prob.equalities.iter().map(|h| h.value(x).abs()).collect(),
        ineq: prob
            .inequalities
            .iter()
            .zip(&view.own.mu)
            .zip(&view.penalties.rho_ineq)
            .map(|((g, mu), rho)| g.value(x).max(-mu / rho).abs())
            .collect(),
        edge: view.neighbors.iter().map(|nb| linalg::dist(x, nb.x)).collect(),
    }
}

/// Penalty growth rule: a penalty is multiplied by `growth` (up to `cap`)
/// whenever its residual did not shrink below `ratio` times the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyPolicy {
    pub growth: f64,
    pub ratio: f64,
    pub cap: f64,
}

impl Default for PenaltyPolicy {
    fn default() -> Self {
        PenaltyPolicy {
            growth: 4.0,
            ratio: 0.25,
            cap: 1e8,
        }
    }
}

impl PenaltyPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.growth > 1.0) || !(self.ratio > 0.0 && self.ratio < 1.0) || !(self.cap > 0.0) {
            return Err(Error::Config(format!(
                "penalty policy needs growth > 1, ratio in (0, 1), cap > 0: {self:?}"
            )));
        }
        Ok(())
    }

    fn apply(&self, rho: f64, now: f64, prev: f64) -> f64 {
        if now > self.ratio * prev {
            rho.max((self.growth * rho).min(self.cap))
        } else {
            rho
        }
    }
}

/// Applies the penalty rule entry by entry. Without a previous measurement
/// (first multiplier update) penalties are left unchanged.
pub fn update_node_penalties(
    pens: &NodePenalties,
    now: &Violations,
    prev: Option<&Violations>,
    policy: &PenaltyPolicy,
) -> NodePenalties {
    let Some(prev) = prev else {
        return pens.clone();
    };
    let grow = |rhos: &[f64], now: &[f64], prev: &[f64]| -> Vec<f64> {
        rhos.iter()
            .zip(now.iter().zip(prev))
            .map(|(&rho, (&n, &p))| policy.apply(rho, n, p))
            .collect()
    };
    NodePenalties {
        rho_eq: grow(&pens.rho_eq, &now.eq, &prev.eq),
        rho_ineq: grow(&pens.rho_ineq, &now.ineq, &prev.ineq),
        rho_edge: grow(&pens.rho_edge, &now.edge, &prev.edge),
    }
}

/// Geometric tolerance decay with a floor: `ε^k = max(ε_min, ε⁰ α^k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSchedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl ToleranceSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.decay > 0.0 && self.decay < 1.0) || !(self.floor >= 0.0)
        {
            return Err(Error::Config(format!(
                "tolerance schedule needs initial > 0, decay in (0, 1), floor >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn next_tolerance(sched: &ToleranceSchedule, k: usize) -> f64 {
    let k = i32::try_from(k).unwrap_or(i32::MAX);
    (sched.initial * sched.decay.powi(k)).max(sched.floor)
}

const MIN_LIPSCHITZ: f64 = 1e-8;
const MAX_DOUBLINGS: usize = 80;

/// Upper estimate of the Lipschitz constant of `∇_{x_i} L̃_i` around the
/// current state, used as the inverse step size of the primal descent.
///
/// When every function supplies curvature bounds the estimate starts from
///
/// ```text
/// L = H_f + Σ_j (ρ_ij + ρ_ji) + Σ_eq (ρ_E G² + |λ + ρ_E h| H) + Σ_ineq (ρ_I G² + max{0, μ + ρ_I g} H)
/// ```
///
/// Those bounds are local, so the step `x - ∇/L` is then checked for
/// sufficient decrease and `L` doubled until it passes. Without curvature
/// information the doubling starts from the consensus term and additionally
/// requires `L` to dominate the gradient secants on both sides of `x`.
pub fn estimate_block_lipschitz(view: &LocalView<'_>, prob: &NodeProblem) -> Result<f64> {
    let x = view.x;
    let consensus: f64 = view
        .neighbors
        .iter()
        .zip(&view.penalties.rho_edge)
        .map(|(nb, rho)| rho + nb.rho_in)
        .sum();

    let analytic = (|| {
        let mut bound = prob.cost.curvature(x)?.hessian + consensus;
        for ((h, lambda), rho) in prob
            .equalities
            .iter()
            .zip(&view.own.lambda)
            .zip(&view.penalties.rho_eq)
        {
            let c = h.curvature(x)?;
            bound += rho * c.gradient * c.gradient + (lambda + rho * h.value(x)).abs() * c.hessian;
        }
        for ((g, mu), rho) in prob
            .inequalities
            .iter()
            .zip(&view.own.mu)
            .zip(&view.penalties.rho_ineq)
        {
            let c = g.curvature(x)?;
            bound += rho * c.gradient * c.gradient + (mu + rho * g.value(x)).max(0.0) * c.hessian;
        }
        Some(bound)
    })();

    let grad = local_al_gradient(view, prob);
    if !linalg::all_finite(&grad) {
        return Err(Error::Numerical(format!(
            "non-finite local gradient at node {}",
            view.node
        )));
    }
    let grad_sq = linalg::norm_sq(&grad);
    let secant_check = analytic.is_none();
    if grad_sq == 0.0 {
        return Ok(analytic.unwrap_or(consensus).max(MIN_LIPSCHITZ));
    }
    let mut lip = match analytic {
        Some(bound) => bound,
        None => {
            // secant slope along the gradient seeds the doubling search
            let h = 1e-6 * (1.0 + linalg::norm(x)) / grad_sq.sqrt();
            let probe: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - h * g).collect();
            let moved = local_al_gradient(&view.at(&probe), prob);
            let slope = linalg::dist(&moved, &grad) / (h * grad_sq.sqrt());
            if slope.is_finite() { slope.max(consensus) } else { consensus }
        }
    }
    .max(MIN_LIPSCHITZ);

    let value = local_al_value(view, prob);
    let slack = 1e-12 * (1.0 + value.abs());
    let mut trial = vec![0.0; x.len()];
    for _ in 0..MAX_DOUBLINGS {
        for k in 0..x.len() {
            trial[k] = x[k] - grad[k] / lip;
        }
        let decrease_ok = local_al_value(&view.at(&trial), prob) <= value - grad_sq / (2.0 * lip) + slack;
        let secant_ok = !secant_check || {
            let step = grad_sq.sqrt() / lip;
            let below = local_al_gradient(&view.at(&trial), prob);
            for k in 0..x.len() {
                trial[k] = x[k] + grad[k] / lip;
            }
            let above = local_al_gradient(&view.at(&trial), prob);
            linalg::dist(&below, &grad).max(linalg::dist(&above, &grad)) <= lip * step
        };
        if decrease_ok && secant_ok {
            return Ok(lip);
        }
        lip *= 2.0;
    }
    Err(Error::Numerical(format!(
        "step-size search at node {} did not terminate (last L = {lip:e})",
        view.node
    )))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::problem::{Affine, SquaredDistance};

    fn quad(dim: usize) -> NodeProblem {
        NodeProblem::unconstrained(Arc::new(SquaredDistance::squared_norm(dim)))
    }

    fn single_ineq(g: Arc<dyn crate::problem::SmoothFn>) -> NodeProblem {
        NodeProblem::new(Arc::new(SquaredDistance::squared_norm(1)), vec![], vec![g]).unwrap()
    }

    #[test]
    fn inequality_term_arithmetic() {
        // μ = 0, ρ_I = 2, g = 1 → (1/4)(max{0, 2}² - 0) = 1
        assert_eq!(inequality_term(0.0, 2.0, 1.0), 1.0);
        let prob = single_ineq(Arc::new(Affine { coeffs: vec![0.0], offset: -1.0 }));
        let own = NodeMultipliers { lambda: vec![], mu: vec![0.0], nu: vec![] };
        let pens = NodePenalties { rho_eq: vec![], rho_ineq: vec![2.0], rho_edge: vec![] };
        let view = LocalView::assemble(0, &[0.0], &own, &pens, []).unwrap();
        assert_eq!(local_al_value(&view, &prob), 1.0);
    }

    #[test]
    fn local_value_reduces_to_cost() {
        let prob = single_ineq(Arc::new(Affine { coeffs: vec![1.0], offset: 10.0 }));
        let own = NodeMultipliers { lambda: vec![], mu: vec![0.0], nu: vec![vec![0.0]] };
        let pens = NodePenalties { rho_eq: vec![], rho_ineq: vec![1.0], rho_edge: vec![3.0] };
        let x = [1.5];
        let view = LocalView::assemble(0, &x, &own, &pens, [(1, Some(&x[..]), Some(&[0.0][..]), Some(2.0))]).unwrap();
        assert_eq!(local_al_value(&view, &prob), 2.25);
        assert_eq!(local_al_gradient(&view, &prob), vec![3.0]);
    }

    #[test]
    fn missing_neighbor_is_reported() {
        let prob = quad(1);
        let own = NodeMultipliers::zeros(&prob, 1);
        let pens = NodePenalties::uniform(&prob, 1, 1.0);
        let err = LocalView::assemble(4, &[0.0], &own, &pens, [(7, None, Some(&[0.0][..]), Some(1.0))]).unwrap_err();
        assert!(matches!(err, Error::IncompleteNeighborhood { node: 4, neighbor: 7 }));
    }

    #[test]
    fn multiplier_update_examples() {
        let g = |offset: f64| Arc::new(Affine { coeffs: vec![0.0], offset: -offset });
        let run = |mu: f64, rho: f64, gval: f64| {
            let prob = single_ineq(g(gval));
            let own = NodeMultipliers { lambda: vec![], mu: vec![mu], nu: vec![] };
            let pens = NodePenalties { rho_eq: vec![], rho_ineq: vec![rho], rho_edge: vec![] };
            let view = LocalView::assemble(0, &[0.0], &own, &pens, []).unwrap();
            update_node_multipliers(&view, &prob).mu[0]
        };
        assert_eq!(run(2.0, 2.0, 0.5), 3.0);
        assert_eq!(run(1.0, 4.0, -1.0), 0.0);
    }

    #[test]
    fn multiplier_fixed_point_at_feasible_consensus() {
        let prob = NodeProblem::new(
            Arc::new(SquaredDistance::squared_norm(2)),
            vec![Arc::new(Affine { coeffs: vec![1.0, 1.0], offset: 2.0 })],
            vec![Arc::new(Affine { coeffs: vec![1.0, 0.0], offset: 5.0 })],
        )
        .unwrap();
        let own = NodeMultipliers { lambda: vec![0.7], mu: vec![0.0], nu: vec![vec![0.3, -0.1]] };
        let pens = NodePenalties { rho_eq: vec![3.0], rho_ineq: vec![2.0], rho_edge: vec![5.0] };
        let x = [1.0, 1.0];
        let view = LocalView::assemble(0, &x, &own, &pens, [(1, Some(&x[..]), Some(&[0.0, 0.0][..]), Some(1.0))]).unwrap();
        assert_eq!(update_node_multipliers(&view, &prob), own);
    }

    #[test]
    fn penalty_rule_examples() {
        let policy = PenaltyPolicy { growth: 4.0, ratio: 0.25, cap: 1e8 };
        let pens = NodePenalties { rho_eq: vec![], rho_ineq: vec![], rho_edge: vec![1.0] };
        let v = |e: f64| Violations { eq: vec![], ineq: vec![], edge: vec![e] };
        // halved residual is not enough progress at ratio 0.25
        assert_eq!(update_node_penalties(&pens, &v(0.5), Some(&v(1.0)), &policy).rho_edge, vec![4.0]);
        assert_eq!(update_node_penalties(&pens, &v(0.0), Some(&v(1.0)), &policy).rho_edge, vec![1.0]);
        assert_eq!(update_node_penalties(&pens, &v(0.1), Some(&v(1.0)), &policy).rho_edge, vec![1.0]);
        assert_eq!(update_node_penalties(&pens, &v(5.0), None, &policy).rho_edge, vec![1.0]);

        let capless = PenaltyPolicy { growth: 2.0, ratio: 0.25, cap: f64::INFINITY };
        let mut p = pens.clone();
        for _ in 0..5 {
            p = update_node_penalties(&p, &v(1.0), Some(&v(1.0)), &capless);
        }
        assert_eq!(p.rho_edge, vec![32.0]);

        let capped = PenaltyPolicy { growth: 4.0, ratio: 0.25, cap: 10.0 };
        let p = update_node_penalties(&NodePenalties { rho_edge: vec![8.0], ..pens.clone() }, &v(1.0), Some(&v(1.0)), &capped);
        assert_eq!(p.rho_edge, vec![10.0]);
    }

    #[test]
    fn tolerance_examples() {
        let sched = ToleranceSchedule { initial: 1e-2, decay: 0.5, floor: 1e-8 };
        assert_eq!(next_tolerance(&sched, 0), 1e-2);
        assert_eq!(next_tolerance(&sched, 3), 1.25e-3);
        assert_eq!(next_tolerance(&sched, 10_000), 1e-8);
        assert_eq!(next_tolerance(&sched, usize::MAX), 1e-8);
    }

    #[test]
    fn lipschitz_of_quadratic_with_one_neighbor() {
        let prob = quad(2);
        let own = NodeMultipliers::zeros(&prob, 1);
        let pens = NodePenalties { rho_eq: vec![], rho_ineq: vec![], rho_edge: vec![1.0] };
        let x = [0.4, -0.2];
        let xj = [1.0, 2.0];
        let view = LocalView::assemble(0, &x, &own, &pens, [(1, Some(&xj[..]), Some(&[0.0, 0.0][..]), Some(2.0))]).unwrap();
        assert_eq!(estimate_block_lipschitz(&view, &prob).unwrap(), 5.0);
    }

    #[test]
    fn doubling_estimator_dominates_quartic_curvature() {
        let quartic = crate::problem::FnMap::new(1, |x| x[0].powi(4), |x, g| g[0] = 4.0 * x[0].powi(3));
        let prob = NodeProblem::unconstrained(Arc::new(quartic));
        let own = NodeMultipliers::zeros(&prob, 0);
        let pens = NodePenalties::uniform(&prob, 0, 1.0);
        for probe in [-2.0, -0.7, 0.3, 1.0, 1.9] {
            let x = [probe];
            let view = LocalView::assemble(0, &x, &own, &pens, []).unwrap();
            let lip = estimate_block_lipschitz(&view, &prob).unwrap();
            let second = 12.0 * probe * probe;
            assert!(lip >= second, "L = {lip} below f'' = {second} at {probe}");
        }
    }
}
