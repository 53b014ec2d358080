//! Centralized counterparts of ASYMM.
//!
//! - [`inexact_mm_run`]: Method of Multipliers whose primal phase is a block
//!   coordinate descent following a prescribed block schedule. Fed with the
//!   schedule extracted from an ASYMM trace it must reproduce the trace's
//!   `x^k`, `Λ^k` exactly; [`equivalence_check`] compares the two.
//! - [`centralized_mm_solve`]: Method of Multipliers with the primal phase
//!   solved to a gradient tolerance by full gradient descent.
//! - [`gradient_bound_diagnostic`]: the heuristic bound
//!   `sqrt(Σ_i (L_i ε_i / σ)²)` on the full gradient, with `σ` estimated by
//!   sampling.
//!
//! The block steps and multiplier updates call the same kernels as the nodes
//! ([`local_al_gradient`], [`estimate_block_lipschitz`],
//! [`update_node_multipliers`], [`update_node_penalties`]) on views restricted
//! from the global state, so agreement is bit-exact rather than up to
//! floating-point reordering.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::lagrangian::{
    estimate_block_lipschitz, global_al_gradient, global_al_value, local_al_gradient,
    node_violations, update_node_multipliers, update_node_penalties, LocalView, MultiplierSet,
    PenaltyPolicy, PenaltySet, Violations,
};
use crate::linalg;
use crate::node::Task;
use crate::problem::{infeasibility, ProblemSpec};
use crate::simulator::{checks, consensus_error, max_constraint_violation, Snapshot, Trace};

/// Block indices of the primal phase of every round, plus the order in which
/// the multiplier updates happened.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BlockSchedule {
    pub rounds: Vec<Vec<usize>>,
    pub multiplier_order: Vec<Vec<usize>>,
}

impl BlockSchedule {
    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    /// Smallest `M` such that every node appears in every window of `M`
    /// consecutive block selections (rounds concatenated), or `None` if some
    /// window never sees a node.
    pub fn cyclic_window(&self, node_count: usize) -> Option<usize> {
        let seq: Vec<usize> = self.rounds.iter().flatten().copied().collect();
        let mut last: Vec<Option<usize>> = vec![None; node_count];
        let mut worst_gap = 0;
        for (pos, &i) in seq.iter().enumerate() {
            let gap = match last[i] {
                Some(p) => pos - p,
                None => pos + 1,
            };
            worst_gap = worst_gap.max(gap);
            last[i] = Some(pos);
        }
        for l in &last {
            match l {
                Some(p) => worst_gap = worst_gap.max(seq.len() - p),
                None if !seq.is_empty() => return None,
                None => {}
            }
        }
        Some(worst_gap.max(node_count))
    }

    /// Every node is drawn at least once in every window of `m` selections.
    pub fn is_essentially_cyclic(&self, node_count: usize, m: usize) -> bool {
        self.cyclic_window(node_count).is_some_and(|w| w <= m)
    }
}

/// Turns an ASYMM trace into the schedule of the equivalent inexact Method of
/// Multipliers. Primal steps are grouped by the round they belong to, keeping
/// universal-time order inside each round; only completed rounds are kept.
pub fn extract_block_schedule(trace: &Trace) -> Result<BlockSchedule> {
    checks::multiplier_cycles_are_permutations(trace)
        .map_err(|e| Error::Trace(format!("multiplier cycles: {e}")))?;
    let rounds = trace.rounds.len();
    let mut schedule = BlockSchedule {
        rounds: vec![Vec::new(); rounds],
        multiplier_order: trace.rounds.iter().map(|r| r.t2_order.clone()).collect(),
    };
    for e in &trace.events {
        if e.task == Task::T1 && e.round < rounds {
            schedule.rounds[e.round].push(e.node);
        }
    }
    Ok(schedule)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmRound {
    /// `(block, new value of that block)` for every primal step.
    pub steps: Vec<(usize, Vec<f64>)>,
    /// `x^{k+1}`, `Λ^{k+1}`, `P^{k+1}`.
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmTrace {
    pub initial: Snapshot,
    pub rounds: Vec<MmRound>,
}

/// Joint multiplier and penalty update of every node at `xs`.
fn multiplier_phase(
    spec: &ProblemSpec,
    graph: &Graph,
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    prev: &mut [Option<Violations>],
    policy: &PenaltyPolicy,
) -> (MultiplierSet, PenaltySet) {
    let mut new_mults = Vec::with_capacity(spec.node_count());
    let mut new_pens = Vec::with_capacity(spec.node_count());
    for (i, prob) in spec.nodes.iter().enumerate() {
        let view = LocalView::from_global(i, xs, mults, pens, graph);
        let now = node_violations(&view, prob);
        new_mults.push(update_node_multipliers(&view, prob));
        new_pens.push(update_node_penalties(&pens.nodes[i], &now, prev[i].as_ref(), policy));
        prev[i] = Some(now);
    }
    (
        MultiplierSet { nodes: new_mults },
        PenaltySet { nodes: new_pens },
    )
}

/// Inexact Method of Multipliers driven by `schedule` for `rounds` rounds.
pub fn inexact_mm_run(
    spec: &ProblemSpec,
    graph: &Graph,
    schedule: &BlockSchedule,
    policy: &PenaltyPolicy,
    initial: &Snapshot,
    rounds: usize,
) -> Result<MmTrace> {
    if schedule.round_count() < rounds {
        return Err(Error::Config(format!(
            "schedule covers {} rounds, {rounds} requested",
            schedule.round_count()
        )));
    }
    spec.check_points(&initial.x)?;
    let mut xs = initial.x.clone();
    let mut mults = initial.multipliers.clone();
    let mut pens = initial.penalties.clone();
    let mut prev: Vec<Option<Violations>> = vec![None; spec.node_count()];
    let mut out = MmTrace {
        initial: initial.clone(),
        rounds: Vec::with_capacity(rounds),
    };
    for (k, blocks) in schedule.rounds.iter().take(rounds).enumerate() {
        let mut steps = Vec::with_capacity(blocks.len());
        for &i in blocks {
            if i >= spec.node_count() {
                return Err(Error::Config(format!("schedule names block {i}")));
            }
            let view = LocalView::from_global(i, &xs, &mults, &pens, graph);
            let grad = local_al_gradient(&view, &spec.nodes[i]);
            let lip = estimate_block_lipschitz(&view, &spec.nodes[i])?;
            drop(view);
            linalg::axpy(-1.0 / lip, &grad, &mut xs[i]);
            if !linalg::all_finite(&xs[i]) {
                return Err(Error::Numerical(format!("round {k}: block {i} became non-finite")));
            }
            steps.push((i, xs[i].clone()));
        }
        let (m, p) = multiplier_phase(spec, graph, &xs, &mults, &pens, &mut prev, policy);
        mults = m;
        pens = p;
        out.rounds.push(MmRound {
            steps,
            snapshot: Snapshot {
                x: xs.clone(),
                multipliers: mults.clone(),
                penalties: pens.clone(),
            },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub round: usize,
    pub node: usize,
    pub field: &'static str,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundDeviation {
    pub k: usize,
    pub x: f64,
    pub multipliers: f64,
    pub penalties: f64,
    pub steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub pass: bool,
    pub tolerance: f64,
    pub rounds_compared: usize,
    pub max_deviation: f64,
    pub first_divergence: Option<Divergence>,
    pub per_round: Vec<RoundDeviation>,
    pub structural_error: Option<String>,
    pub warnings: Vec<String>,
}

impl EquivalenceReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "equivalence: {}", if self.pass { "PASS" } else { "FAIL" });
        let _ = writeln!(s, "rounds compared: {}", self.rounds_compared);
        let _ = writeln!(s, "max deviation: {:e} (tolerance {:e})", self.max_deviation, self.tolerance);
        if let Some(d) = &self.first_divergence {
            let _ = writeln!(
                s,
                "first divergence: round {} node {} field {} deviation {:e}",
                d.round, d.node, d.field, d.deviation
            );
        }
        if let Some(e) = &self.structural_error {
            let _ = writeln!(s, "structural error: {e}");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    pub fn deviations_csv(&self) -> String {
        let mut s = String::from("k,x_dev,multiplier_dev,penalty_dev,step_dev\n");
        for r in &self.per_round {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", r.k, r.x, r.multipliers, r.penalties, r.steps);
        }
        s
    }
}

/// Compares an ASYMM trace with the inexact MM run built from its schedule,
/// round by round: every primal step, `x^{k+1}`, `Λ^{k+1}` and `P^{k+1}`.
pub fn equivalence_check(asymm: &Trace, mm: &MmTrace, tol: f64) -> EquivalenceReport {
    let mut report = EquivalenceReport {
        pass: true,
        tolerance: tol,
        rounds_compared: 0,
        max_deviation: 0.0,
        first_divergence: None,
        per_round: Vec::new(),
        structural_error: None,
        warnings: Vec::new(),
    };
    if asymm.rounds.len() != mm.rounds.len() {
        report.pass = false;
        report.structural_error = Some(format!(
            "ASYMM trace has {} rounds, MM trace {}",
            asymm.rounds.len(),
            mm.rounds.len()
        ));
        return report;
    }
    if asymm.rounds.is_empty() {
        report.warnings.push("no completed rounds; nothing to compare".into());
        return report;
    }

    let mut steps_by_round: Vec<Vec<(usize, &[f64])>> = vec![Vec::new(); asymm.rounds.len()];
    for e in asymm.events.iter().filter(|e| e.task == Task::T1) {
        if let Some(r) = steps_by_round.get_mut(e.round) {
            r.push((e.node, &e.x));
        }
    }

    let note = |report: &mut EquivalenceReport, round: usize, node: usize, field: &'static str, dev: f64| {
        report.max_deviation = report.max_deviation.max(dev);
        if !(dev <= tol) && report.first_divergence.is_none() {
            report.first_divergence = Some(Divergence { round, node, field, deviation: dev });
        }
    };

    for (k, (a, b)) in asymm.rounds.iter().zip(&mm.rounds).enumerate() {
        let mut dev = RoundDeviation { k, x: 0.0, multipliers: 0.0, penalties: 0.0, steps: 0.0 };
        let steps = &steps_by_round[k];
        if steps.len() != b.steps.len() {
            report.pass = false;
            report.structural_error = Some(format!(
                "round {k}: ASYMM made {} primal steps, MM {}",
                steps.len(),
                b.steps.len()
            ));
            return report;
        }
        for ((node_a, xa), (node_b, xb)) in steps.iter().zip(&b.steps) {
            if node_a != node_b {
                report.pass = false;
                report.structural_error = Some(format!(
                    "round {k}: step order differs (node {node_a} vs {node_b})"
                ));
                return report;
            }
            let d = linalg::max_abs_diff(xa, xb);
            dev.steps = dev.steps.max(d);
            note(&mut report, k, *node_a, "step", d);
        }
        let (sa, sb) = (&a.snapshot, &b.snapshot);
        for i in 0..sa.x.len() {
            let dx = linalg::max_abs_diff(&sa.x[i], &sb.x[i]);
            dev.x = dev.x.max(dx);
            note(&mut report, k, i, "x", dx);
            let dm = linalg::max_abs_diff(
                &sa.multipliers.nodes[i].flatten(),
                &sb.multipliers.nodes[i].flatten(),
            );
            dev.multipliers = dev.multipliers.max(dm);
            note(&mut report, k, i, "multipliers", dm);
            let dp = linalg::max_abs_diff(
                &sa.penalties.nodes[i].flatten(),
                &sb.penalties.nodes[i].flatten(),
            );
            dev.penalties = dev.penalties.max(dp);
            note(&mut report, k, i, "penalties", dp);
        }
        report.per_round.push(dev);
        report.rounds_compared += 1;
    }
    report.pass = report.first_divergence.is_none();
    report
}

/// Extracts the schedule of `trace`, replays it through the inexact MM and
/// compares.
pub fn verify_trace(
    trace: &Trace,
    spec: &ProblemSpec,
    graph: &Graph,
    policy: &PenaltyPolicy,
    tol: f64,
) -> Result<EquivalenceReport> {
    let schedule = extract_block_schedule(trace)?;
    let mm = inexact_mm_run(spec, graph, &schedule, policy, &trace.initial, schedule.round_count())?;
    Ok(equivalence_check(trace, &mm, tol))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmOptions {
    pub rounds: usize,
    /// Gradient-norm target of each primal phase.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Stop once consensus error and constraint violation are both below this.
    pub outer_tol: f64,
    pub policy: PenaltyPolicy,
}

impl Default for MmOptions {
    fn default() -> Self {
        MmOptions {
            rounds: 100,
            inner_tol: 1e-8,
            max_inner: 1_000_000,
            outer_tol: 1e-9,
            policy: PenaltyPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmSolution {
    pub x: Vec<Vec<f64>>,
    pub multipliers: MultiplierSet,
    pub penalties: PenaltySet,
    pub rounds: usize,
    pub inner_iterations: usize,
    pub converged: bool,
    pub infeasibility: f64,
}

/// Method of Multipliers with each Augmented Lagrangian minimization carried
/// out by full gradient descent (backtracking on the inverse step) until the
/// gradient norm is at most `inner_tol`.
pub fn centralized_mm_solve(
    spec: &ProblemSpec,
    graph: &Graph,
    initial: &Snapshot,
    opts: &MmOptions,
) -> Result<MmSolution> {
    opts.policy.validate()?;
    if !(opts.inner_tol > 0.0) {
        return Err(Error::Config("inner tolerance must be positive".into()));
    }
    let mut xs = initial.x.clone();
    let mut mults = initial.multipliers.clone();
    let mut pens = initial.penalties.clone();
    let mut prev: Vec<Option<Violations>> = vec![None; spec.node_count()];
    let mut total_inner = 0;
    let mut lip: f64 = 1.0;
    let mut converged = false;
    let mut rounds = 0;
    while rounds < opts.rounds {
        let mut inner = 0;
        loop {
            let grad = global_al_gradient(&xs, &mults, &pens, spec, graph)?;
            let gnorm_sq: f64 = grad.iter().map(|g| linalg::norm_sq(g)).sum();
            if !gnorm_sq.is_finite() {
                return Err(Error::Numerical(format!("round {rounds}: non-finite gradient")));
            }
            if gnorm_sq.sqrt() <= opts.inner_tol {
                break;
            }
            if inner >= opts.max_inner {
                return Err(Error::Numerical(format!(
                    "round {rounds}: inner loop stalled after {inner} steps at gradient norm {:e}",
                    gnorm_sq.sqrt()
                )));
            }
            let value = global_al_value(&xs, &mults, &pens, spec, graph)?;
            let slack = 1e-13 * (1.0 + value.abs());
            lip = (lip / 2.0).max(1e-12);
            let mut trial = xs.clone();
            loop {
                for (t, (x, g)) in trial.iter_mut().zip(xs.iter().zip(&grad)) {
                    for ((tk, xk), gk) in t.iter_mut().zip(x).zip(g) {
                        *tk = xk - gk / lip;
                    }
                }
                let v = global_al_value(&trial, &mults, &pens, spec, graph)?;
                if v <= value - gnorm_sq / (2.0 * lip) + slack {
                    break;
                }
                lip *= 2.0;
                if !lip.is_finite() {
                    return Err(Error::Numerical(format!("round {rounds}: line search failed")));
                }
            }
            xs = trial;
            inner += 1;
        }
        total_inner += inner;
        let (m, p) = multiplier_phase(spec, graph, &xs, &mults, &pens, &mut prev, &opts.policy);
        mults = m;
        pens = p;
        rounds += 1;
        if consensus_error(graph, &xs) <= opts.outer_tol
            && max_constraint_violation(spec, &xs) <= opts.outer_tol
        {
            converged = true;
            break;
        }
    }
    Ok(MmSolution {
        infeasibility: infeasibility(spec, graph, &xs)?,
        x: xs,
        multipliers: mults,
        penalties: pens,
        rounds,
        inner_iterations: total_inner,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBoundDiagnostic {
    /// `||∇_x L_P(x, Λ)||`
    pub grad_norm: f64,
    /// Block step constants `L_i` at `x`.
    pub lipschitz: Vec<f64>,
    /// Sampled curvature estimate; nonpositive means no local strong
    /// convexity was observed.
    pub sigma_hat: f64,
    /// `sqrt(Σ_i (L_i ε_i / σ̂)²)` when `σ̂ > 0`.
    pub bound: Option<f64>,
}

const CURVATURE_SAMPLES: usize = 32;

/// Heuristic check of the gradient bound reached at the end of a primal phase.
/// `σ̂` is the smallest observed `(∇L(x+d) - ∇L(x-d))ᵀ(2d) / ||2d||²` over
/// random small perturbations `d` of the whole network state; it estimates a
/// local strong-convexity modulus and is not computed by the nodes.
pub fn gradient_bound_diagnostic(
    spec: &ProblemSpec,
    graph: &Graph,
    xs: &[Vec<f64>],
    mults: &MultiplierSet,
    pens: &PenaltySet,
    tolerances: &[f64],
    seed: u64,
) -> Result<GradientBoundDiagnostic> {
    let grad = global_al_gradient(xs, mults, pens, spec, graph)?;
    let grad_norm = grad.iter().map(|g| linalg::norm_sq(g)).sum::<f64>().sqrt();
    let lipschitz = (0..spec.node_count())
        .map(|i| estimate_block_lipschitz(&LocalView::from_global(i, xs, mults, pens, graph), &spec.nodes[i]))
        .collect::<Result<Vec<_>>>()?;

    let scale: f64 = xs.iter().map(|x| linalg::norm(x)).fold(0.0, f64::max);
    let radius = 1e-4 * (1.0 + scale);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sigma_hat = f64::INFINITY;
    for _ in 0..CURVATURE_SAMPLES {
        let mut d: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let dn = d.iter().map(|v| linalg::norm_sq(v)).sum::<f64>().sqrt();
        if dn == 0.0 {
            continue;
        }
        for v in &mut d {
            v.iter_mut().for_each(|c| *c *= radius / dn);
        }
        let shifted = |sign: f64| -> Vec<Vec<f64>> {
            xs.iter()
                .zip(&d)
                .map(|(x, v)| x.iter().zip(v).map(|(a, b)| a + sign * b).collect())
                .collect()
        };
        let gp = global_al_gradient(&shifted(1.0), mults, pens, spec, graph)?;
        let gm = global_al_gradient(&shifted(-1.0), mults, pens, spec, graph)?;
        let mut inner = 0.0;
        for ((a, b), v) in gp.iter().zip(&gm).zip(&d) {
            for ((ak, bk), vk) in a.iter().zip(b).zip(v) {
                inner += (ak - bk) * 2.0 * vk;
            }
        }
        sigma_hat = sigma_hat.min(inner / (4.0 * radius * radius));
    }
    let bound = (sigma_hat > 0.0 && sigma_hat.is_finite()).then(|| {
        lipschitz
            .iter()
            .zip(tolerances)
            .map(|(l, e)| (l * e / sigma_hat).powi(2))
            .sum::<f64>()
            .sqrt()
    });
    Ok(GradientBoundDiagnostic {
        grad_norm,
        lipschitz,
        sigma_hat,
        bound,
    })
}
