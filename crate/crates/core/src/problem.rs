//! Per-node optimization data and the source-localization instance.
//!
//! Each node `i` privately owns a cost `f_i`, equality constraints `h_i = 0` and
//! inequality constraints `g_i <= 0`, all maps `R^n -> R` with analytic
//! gradients. The network problem is the consensus form: every node holds its
//! own copy `x_i` and neighboring copies must agree.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg;

/// Local bounds on the first and second derivative of a smooth map near a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    /// Upper bound on `||grad phi||`.
    pub gradient: f64,
    /// Upper bound on the spectral norm of the Hessian.
    pub hessian: f64,
}

/// A differentiable scalar map on `R^n`.
pub trait SmoothFn: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes the gradient at `x` into `out` (length `dim`).
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Derivative bounds valid around `x`, when known in closed form. `None`
    /// makes step-size estimation fall back to backtracking.
    fn curvature(&self, _x: &[f64]) -> Option<Curvature> {
        None
    }

    fn gradient_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g
    }
}

/// `weight * ||x - center||^2`
#[derive(Debug, Clone)]
pub struct SquaredDistance {
    pub center: Vec<f64>,
    pub weight: f64,
}

impl SquaredDistance {
    /// `x^T x`
    pub fn squared_norm(dim: usize) -> Self {
        SquaredDistance {
            center: vec![0.0; dim],
            weight: 1.0,
        }
    }
}

impl SmoothFn for SquaredDistance {
    fn dim(&self) -> usize {
        self.center.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.weight * linalg::dist(x, &self.center).powi(2)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.center) {
            *o = 2.0 * self.weight * (xi - ci);
        }
    }
    fn curvature(&self, x: &[f64]) -> Option<Curvature> {
        Some(Curvature {
            gradient: 2.0 * self.weight.abs() * linalg::dist(x, &self.center),
            hessian: 2.0 * self.weight.abs(),
        })
    }
}

/// `a^T x - b`
#[derive(Debug, Clone)]
pub struct Affine {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl SmoothFn for Affine {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        linalg::dot(&self.coeffs, x) - self.offset
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coeffs);
    }
    fn curvature(&self, _x: &[f64]) -> Option<Curvature> {
        Some(Curvature {
            gradient: linalg::norm(&self.coeffs),
            hessian: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeSide {
    /// `||x - c|| - R <= 0`
    Outer,
    /// `r - ||x - c|| <= 0`
    Inner,
}

/// Range constraint around an anchor. With `smoothing = delta > 0` the
/// distance is replaced by `sqrt(||x - c||^2 + delta^2)`, which is smooth at
/// the anchor itself.
#[derive(Debug, Clone)]
pub struct RangeConstraint {
    pub anchor: Vec<f64>,
    pub radius: f64,
    pub side: RangeSide,
    pub smoothing: f64,
}

impl RangeConstraint {
    fn distance(&self, x: &[f64]) -> f64 {
        (linalg::dist(x, &self.anchor).powi(2) + self.smoothing * self.smoothing).sqrt()
    }

    fn sign(&self) -> f64 {
        match self.side {
            RangeSide::Outer => 1.0,
            RangeSide::Inner => -1.0,
        }
    }
}

const RANGE_CURVATURE_FLOOR: f64 = 1e-6;

impl SmoothFn for RangeConstraint {
    fn dim(&self) -> usize {
        self.anchor.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.sign() * (self.distance(x) - self.radius)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.distance(x);
        let s = self.sign();
        for ((o, xi), ci) in out.iter_mut().zip(x).zip(&self.anchor) {
            // zero is a valid subgradient of the distance at the anchor
            *o = if d > 0.0 { s * (xi - ci) / d } else { 0.0 };
        }
    }
    fn curvature(&self, x: &[f64]) -> Option<Curvature> {
        let d = self.distance(x);
        // 1/d explodes at the anchor and would freeze an iterate sitting on
        // it; the cap is an estimate there and backtracking takes over
        (d > 0.0).then(|| Curvature {
            gradient: 1.0,
            hessian: 1.0 / d.max(RANGE_CURVATURE_FLOOR * (1.0 + self.radius)),
        })
    }
}

/// Closure-backed map without curvature information.
pub struct FnMap {
    dim: usize,
    value: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    gradient: Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl FnMap {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        FnMap {
            dim,
            value: Box::new(value),
            gradient: Box::new(gradient),
        }
    }
}

impl fmt::Debug for FnMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap").field("dim", &self.dim).finish()
    }
}

impl SmoothFn for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// Data private to one node.
#[derive(Debug, Clone)]
pub struct NodeProblem {
    pub dim: usize,
    pub cost: Arc<dyn SmoothFn>,
    pub equalities: Vec<Arc<dyn SmoothFn>>,
    pub inequalities: Vec<Arc<dyn SmoothFn>>,
}

impl NodeProblem {
    pub fn new(
        cost: Arc<dyn SmoothFn>,
        equalities: Vec<Arc<dyn SmoothFn>>,
        inequalities: Vec<Arc<dyn SmoothFn>>,
    ) -> Result<Self> {
        let dim = cost.dim();
        for f in equalities.iter().chain(&inequalities) {
            if f.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: f.dim(),
                });
            }
        }
        Ok(NodeProblem {
            dim,
            cost,
            equalities,
            inequalities,
        })
    }

    pub fn unconstrained(cost: Arc<dyn SmoothFn>) -> Self {
        NodeProblem {
            dim: cost.dim(),
            cost,
            equalities: Vec::new(),
            inequalities: Vec::new(),
        }
    }

    pub fn equality_count(&self) -> usize {
        self.equalities.len()
    }

    pub fn inequality_count(&self) -> usize {
        self.inequalities.len()
    }

    fn functions(&self) -> impl Iterator<Item = &Arc<dyn SmoothFn>> {
        std::iter::once(&self.cost)
            .chain(&self.equalities)
            .chain(&self.inequalities)
    }

    /// Largest relative error between analytic gradients and central
    /// differences over all of this node's functions at `probes`.
    pub fn gradient_check(&self, probes: &[Vec<f64>], step: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for x in probes {
            for f in self.functions() {
                let analytic = f.gradient_vec(x);
                let numeric = finite_difference_gradient(|p| f.value(p), x, step);
                worst = worst.max(relative_error(&numeric, &analytic));
            }
        }
        worst
    }
}

/// The whole network problem: one [`NodeProblem`] per node, common dimension.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub nodes: Vec<NodeProblem>,
}

impl ProblemSpec {
    pub fn new(nodes: Vec<NodeProblem>) -> Result<Self> {
        let dim = nodes
            .first()
            .map(|p| p.dim)
            .ok_or_else(|| Error::Config("problem has no nodes".into()))?;
        if let Some(bad) = nodes.iter().find(|p| p.dim != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.dim,
            });
        }
        Ok(ProblemSpec { dim, nodes })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Checks that `xs` holds `N` points of dimension `n`.
    pub fn check_points(&self, xs: &[Vec<f64>]) -> Result<()> {
        if xs.len() != self.nodes.len() {
            return Err(Error::Dimension {
                expected: self.nodes.len(),
                got: xs.len(),
            });
        }
        if let Some(bad) = xs.iter().find(|x| x.len() != self.dim) {
            return Err(Error::Dimension {
                expected: self.dim,
                got: bad.len(),
            });
        }
        Ok(())
    }
}

/// Central-difference gradient of `fun` at `x`.
pub fn finite_difference_gradient(fun: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let up = fun(&probe);
            probe[k] = x[k] - step;
            let down = fun(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `||a - b|| / max(||b||, 1)`: relative for large gradients, absolute near zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    linalg::dist(a, b) / linalg::norm(b).max(1.0)
}

/// Network infeasibility: constraint violations plus the disagreement with
/// every neighbor, summed over nodes. Each edge contributes once from each
/// endpoint.
pub fn infeasibility(spec: &ProblemSpec, graph: &Graph, xs: &[Vec<f64>]) -> Result<f64> {
    spec.check_points(xs)?;
    if graph.node_count() != spec.node_count() {
        return Err(Error::Dimension {
            expected: spec.node_count(),
            got: graph.node_count(),
        });
    }
    let mut total = 0.0;
    for (i, (prob, x)) in spec.nodes.iter().zip(xs).enumerate() {
        for g in &prob.inequalities {
            total += g.value(x).max(0.0);
        }
        for h in &prob.equalities {
            total += h.value(x).abs();
        }
        for &j in graph.neighbors(i) {
            total += linalg::dist(x, &xs[j]);
        }
    }
    Ok(total)
}

/// Source localization under unknown-but-bounded noise: node `i` knows its
/// anchor `c_i` and a range `y_i = ||x* - c_i|| + w_i` with `|w_i| <= kappa_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationInstance {
    pub seed: u64,
    pub dimension: usize,
    pub box_half_width: f64,
    pub kappa_max: f64,
    #[serde(default)]
    pub smoothing: f64,
    pub true_source: Vec<f64>,
    pub anchors: Vec<Vec<f64>>,
    pub kappa: Vec<f64>,
    pub noise: Vec<f64>,
    pub measurements: Vec<f64>,
    pub outer_radius: Vec<f64>,
    pub inner_radius: Vec<f64>,
}

/// Anchors closer than this to a gradient probe point are redrawn.
const ANCHOR_CLEARANCE: f64 = 1e-6;

/// Draws a localization instance: `x*`, anchors uniform in the box, noise
/// bounds uniform in `[0, kappa_max]`, noise uniform in `[-kappa_i, kappa_i]`,
/// annulus radii `R_i = y_i + kappa_i`, `r_i = max(0, y_i - kappa_i)`.
///
/// Anchors that land on a gradient probe point (the source or the origin,
/// the constant start) are redrawn, since the range gradient is singular
/// there.
pub fn make_source_localization(
    n_nodes: usize,
    dimension: usize,
    box_half_width: f64,
    kappa_max: f64,
    seed: u64,
) -> Result<(ProblemSpec, LocalizationInstance)> {
    if n_nodes < 2 {
        return Err(Error::Config(format!(
            "localization needs at least 2 nodes, got {n_nodes}"
        )));
    }
    if dimension == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    if !(box_half_width > 0.0) || !(kappa_max >= 0.0) {
        return Err(Error::Config(
            "box half width must be positive and kappa_max nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dimension)
            .map(|_| rng.gen_range(-box_half_width..=box_half_width))
            .collect()
    };
    let true_source = point(&mut rng);
    let origin = vec![0.0; dimension];
    let mut anchors = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let anchor = loop {
            let c = point(&mut rng);
            if linalg::dist(&c, &true_source) > ANCHOR_CLEARANCE
                && linalg::dist(&c, &origin) > ANCHOR_CLEARANCE
            {
                break c;
            }
        };
        anchors.push(anchor);
    }
    let kappa: Vec<f64> = (0..n_nodes)
        .map(|_| {
            if kappa_max > 0.0 {
                rng.gen_range(0.0..=kappa_max)
            } else {
                0.0
            }
        })
        .collect();
    let noise: Vec<f64> = kappa
        .iter()
        .map(|&k| if k > 0.0 { rng.gen_range(-k..=k) } else { 0.0 })
        .collect();
    let measurements: Vec<f64> = anchors
        .iter()
        .zip(&noise)
        .map(|(c, w)| linalg::dist(&true_source, c) + w)
        .collect();
    let outer_radius = measurements.iter().zip(&kappa).map(|(y, k)| y + k).collect();
    let inner_radius = measurements
        .iter()
        .zip(&kappa)
        .map(|(y, k)| (y - k).max(0.0))
        .collect();
    let instance = LocalizationInstance {
        seed,
        dimension,
        box_half_width,
        kappa_max,
        smoothing: 0.0,
        true_source,
        anchors,
        kappa,
        noise,
        measurements,
        outer_radius,
        inner_radius,
    };
    let spec = instance.to_problem()?;
    Ok((spec, instance))
}

impl LocalizationInstance {
    pub fn node_count(&self) -> usize {
        self.anchors.len()
    }

    /// Builds the per-node problems: cost `x^T x`, inequalities
    /// `||x - c_i|| - R_i <= 0` and `r_i - ||x - c_i|| <= 0`.
    pub fn to_problem(&self) -> Result<ProblemSpec> {
        let n = self.node_count();
        for (name, len) in [
            ("kappa", self.kappa.len()),
            ("outer_radius", self.outer_radius.len()),
            ("inner_radius", self.inner_radius.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!(
                    "instance field `{name}` has {len} entries, expected {n}"
                )));
            }
        }
        let nodes = self
            .anchors
            .iter()
            .zip(self.outer_radius.iter().zip(&self.inner_radius))
            .map(|(c, (&outer, &inner))| {
                if c.len() != self.dimension {
                    return Err(Error::Dimension {
                        expected: self.dimension,
                        got: c.len(),
                    });
                }
                let range = |radius, side| -> Arc<dyn SmoothFn> {
                    Arc::new(RangeConstraint {
                        anchor: c.clone(),
                        radius,
                        side,
                        smoothing: self.smoothing,
                    })
                };
                NodeProblem::new(
                    Arc::new(SquaredDistance::squared_norm(self.dimension)),
                    Vec::new(),
                    vec![range(outer, RangeSide::Outer), range(inner, RangeSide::Inner)],
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ProblemSpec::new(nodes)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance fields are always representable in TOML")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("instance document: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_differences_of_quadratic() {
        let g = finite_difference_gradient(|x| linalg::norm_sq(x), &[1.0, 2.0], 1e-6);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn range_gradient_at_anchor_is_zero() {
        let g = RangeConstraint {
            anchor: vec![1.0, 1.0],
            radius: 1.0,
            side: RangeSide::Outer,
            smoothing: 0.0,
        };
        assert_eq!(g.gradient_vec(&[1.0, 1.0]), vec![0.0, 0.0]);
        assert!(g.curvature(&[1.0, 1.0]).is_none());
    }

    #[test]
    fn smoothed_range_is_differentiable_at_anchor() {
        let g = RangeConstraint {
            anchor: vec![0.5],
            radius: 1.0,
            side: RangeSide::Inner,
            smoothing: 0.1,
        };
        assert_eq!(g.value(&[0.5]), 1.0 - 0.1);
        assert_eq!(g.gradient_vec(&[0.5]), vec![0.0]);
        assert_eq!(g.curvature(&[0.5]).unwrap().hessian, 10.0);
    }

    #[test]
    fn range_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for side in [RangeSide::Outer, RangeSide::Inner] {
            let g = RangeConstraint {
                anchor: vec![0.3, -1.2],
                radius: 1.7,
                side,
                smoothing: 0.0,
            };
            for _ in 0..5 {
                let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.5..2.5)).collect();
                let fd = finite_difference_gradient(|p| g.value(p), &x, 1e-6);
                assert!(relative_error(&fd, &g.gradient_vec(&x)) < 1e-6);
            }
        }
    }

    #[test]
    fn zero_noise_instance_has_degenerate_annuli() {
        let (_, inst) = make_source_localization(6, 2, 2.5, 0.0, 11).unwrap();
        for i in 0..6 {
            let d = linalg::dist(&inst.true_source, &inst.anchors[i]);
            assert_eq!(inst.outer_radius[i], d);
            assert_eq!(inst.inner_radius[i], d);
        }
    }

    #[test]
    fn one_dimensional_pair() {
        // two anchors on a line, exact ranges: x* is the only common point of
        // {c_0 - d_0, c_0 + d_0} and {c_1 - d_1, c_1 + d_1} (generic case)
        let (spec, inst) = make_source_localization(2, 1, 1.0, 0.0, 5).unwrap();
        let candidates: Vec<f64> = (0..2)
            .flat_map(|i| {
                let c = inst.anchors[i][0];
                let d = inst.measurements[i];
                [c - d, c + d]
            })
            .collect();
        let common: Vec<f64> = candidates[..2]
            .iter()
            .copied()
            .filter(|a| candidates[2..].iter().any(|b| (a - b).abs() < 1e-12))
            .collect();
        assert_eq!(common.len(), 1);
        assert!((common[0] - inst.true_source[0]).abs() < 1e-12);
        let g = crate::graph::load_edge_list("0 1").unwrap();
        let xs = vec![inst.true_source.clone(); 2];
        assert!(infeasibility(&spec, &g, &xs).unwrap() < 1e-12);
    }

    #[test]
    fn infeasibility_examples() {
        let spec = ProblemSpec::new(vec![
            NodeProblem::unconstrained(Arc::new(SquaredDistance::squared_norm(2)));
            2
        ])
        .unwrap();
        let g = crate::graph::load_edge_list("0 1").unwrap();
        let xs = vec![vec![3.0, 4.0], vec![0.0, 0.0]];
        assert_eq!(infeasibility(&spec, &g, &xs).unwrap(), 10.0);
        assert_eq!(
            infeasibility(&spec, &g, &[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            0.0
        );
        assert!(infeasibility(&spec, &g, &[vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn instance_document_round_trip() {
        let (_, inst) = make_source_localization(4, 2, 2.5, 0.3, 8).unwrap();
        let back = LocalizationInstance::from_toml(&inst.to_toml()).unwrap();
        assert_eq!(back, inst);
        assert!(LocalizationInstance::from_toml("seed = 1").is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_source_localization(1, 2, 2.5, 0.3, 0).is_err());
        assert!(make_source_localization(3, 0, 2.5, 0.3, 0).is_err());
    }
}
