//! Deterministic event-driven execution of an asynchronous network.
//!
//! Every node owns a timer drawing waiting times in `[T_min, T̄_i]`. Wake-ups
//! are popped from a single queue ordered by time and then node id, so exactly
//! one node is awake at a time. In the default delivery mode the messages an
//! awake node emits are handed to the recipients' idle handlers before the
//! next wake-up is popped; the delayed mode instead queues them until the
//! recipient's own next awakening.
//!
//! The simulator records a [`Trace`]: one [`EventRecord`] per awakening
//! (universal time `t` starting at 1) and one [`RoundRecord`] per completed
//! multiplier cycle holding `x^{k+1}`, `Λ^{k+1}` and `P^{k+1}` as assembled
//! from the nodes' multiplier-update events.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use crate::config::{Delivery, SimConfig, StopMode};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::lagrangian::{MultiplierSet, NodeMultipliers, NodePenalties, PenaltySet};
use crate::linalg;
use crate::node::{AsymmMessage, NodeSettings, NodeState, Task};
use crate::problem::{infeasibility, ProblemSpec};
use crate::reference;

/// Per-node waiting-time model: `T_i ~ U[T_min, T̄_i]`, one ChaCha stream per node.
#[derive(Debug, Clone)]
pub struct TimerModel {
    pub min_wait: f64,
    pub max_wait: Vec<f64>,
    pub seed: u64,
    streams: Vec<ChaCha8Rng>,
}

impl TimerModel {
    pub fn new(min_wait: f64, max_wait: Vec<f64>, seed: u64) -> Result<Self> {
        if !(min_wait > 0.0) {
            return Err(Error::Config(format!("minimum waiting time must be positive, got {min_wait}")));
        }
        if let Some(bad) = max_wait.iter().find(|&&m| !(m >= min_wait) || !m.is_finite()) {
            return Err(Error::Config(format!(
                "maximum waiting time {bad} is below the minimum {min_wait}"
            )));
        }
        let streams = (0..max_wait.len())
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        Ok(TimerModel {
            min_wait,
            max_wait,
            seed,
            streams,
        })
    }

    pub fn uniform(nodes: usize, min_wait: f64, max_wait: f64, seed: u64) -> Result<Self> {
        TimerModel::new(min_wait, vec![max_wait; nodes], seed)
    }

    /// Next wake-up time of `node` after `now`.
    pub fn schedule_next(&mut self, node: usize, now: f64) -> f64 {
        let hi = self.max_wait[node];
        let wait = if hi > self.min_wait {
            self.streams[node].gen_range(self.min_wait..=hi)
        } else {
            hi
        };
        now + wait
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wake {
    time: f64,
    node: usize,
}

impl Eq for Wake {}

impl Ord for Wake {
    // reversed: BinaryHeap is a max-heap, the earliest wake-up must pop first
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Wake {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Wake-up queue ordered by time, ties broken by node id.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Wake>,
}

impl EventQueue {
    pub fn push(&mut self, time: f64, node: usize) {
        self.heap.push(Wake { time, node });
    }

    pub fn pop(&mut self) -> Option<(f64, usize)> {
        self.heap.pop().map(|w| (w.time, w.node))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// One awakening.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub t: u64,
    pub time: f64,
    pub node: usize,
    pub task: Task,
    /// Round of the node when it woke up.
    pub round: usize,
    /// `x_i` after the awakening.
    pub x: Vec<f64>,
    /// Logic-AND flag after the awakening.
    pub flag: bool,
    pub flag_raised: bool,
    /// Gradient norm used by the flag test, NaN unless T1.
    pub tested_norm: f64,
    pub tolerance: f64,
    /// Inverse step size, NaN unless T1.
    pub lipschitz: f64,
}

/// Network-wide primal, multiplier and penalty values.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub x: Vec<Vec<f64>>,
    pub multipliers: MultiplierSet,
    pub penalties: PenaltySet,
}

/// A completed multiplier cycle `k`: every node performed its `k`-th
/// multiplier update.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: usize,
    /// Universal times of the multiplier updates, in order.
    pub t2_times: Vec<u64>,
    /// Nodes in multiplier-update order.
    pub t2_order: Vec<usize>,
    /// Primal steps tagged with round `k`.
    pub h_k: usize,
    /// Tolerance each node used during round `k`.
    pub tolerances: Vec<f64>,
    /// `x^{k+1}`, `Λ^{k+1}`, `P^{k+1}`.
    pub snapshot: Snapshot,
}

impl RoundRecord {
    pub fn t_start(&self) -> u64 {
        self.t2_times.first().copied().unwrap_or(0)
    }

    pub fn t_end(&self) -> u64 {
        self.t2_times.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub node_count: usize,
    pub dim: usize,
    pub initial: Snapshot,
    pub events: Vec<EventRecord>,
    pub rounds: Vec<RoundRecord>,
}

impl Trace {
    /// Each node's iterate after the last recorded awakening.
    pub fn final_points(&self) -> Vec<Vec<f64>> {
        let mut xs = self.initial.x.clone();
        for e in &self.events {
            xs[e.node].clone_from(&e.x);
        }
        xs
    }

    /// Snapshot at the start of round `k` (`x^k`, `Λ^k`, `P^k`).
    pub fn snapshot(&self, k: usize) -> Option<&Snapshot> {
        if k == 0 {
            Some(&self.initial)
        } else {
            self.rounds.get(k - 1).map(|r| &r.snapshot)
        }
    }

    pub fn t2_events(&self) -> impl Iterator<Item = &EventRecord> {
        self.events.iter().filter(|e| e.task == Task::T2)
    }
}

/// A run that stopped on an error, with everything recorded up to it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: Trace,
}

/// Algorithm parameters shared by all nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSettings {
    pub node: NodeSettings,
    pub initial_penalty: f64,
    /// Starting point of every node.
    pub initial_points: Vec<Vec<f64>>,
    pub delivery: Delivery,
    pub stop: StopMode,
}

#[derive(Default)]
struct PartialRound {
    x: Vec<Option<Vec<f64>>>,
    mults: Vec<Option<NodeMultipliers>>,
    pens: Vec<Option<NodePenalties>>,
    tolerances: Vec<f64>,
    t2_times: Vec<u64>,
    t2_order: Vec<usize>,
    h_k: usize,
}

impl PartialRound {
    fn new(n: usize) -> Self {
        PartialRound {
            x: vec![None; n],
            mults: vec![None; n],
            pens: vec![None; n],
            tolerances: vec![f64::NAN; n],
            ..Default::default()
        }
    }

    fn complete(&self) -> bool {
        self.x.iter().all(Option::is_some)
    }
}

pub struct Simulator<'a> {
    graph: &'a Graph,
    spec: &'a ProblemSpec,
    settings: AlgorithmSettings,
    timer: TimerModel,
}

impl<'a> Simulator<'a> {
    pub fn new(
        graph: &'a Graph,
        spec: &'a ProblemSpec,
        settings: AlgorithmSettings,
        timer: TimerModel,
    ) -> Result<Self> {
        if graph.node_count() != spec.node_count() || timer.max_wait.len() != spec.node_count() {
            return Err(Error::Config(format!(
                "graph has {} nodes, problem {}, timers {}",
                graph.node_count(),
                spec.node_count(),
                timer.max_wait.len()
            )));
        }
        if settings.initial_points.len() != spec.node_count() {
            return Err(Error::Config(format!(
                "{} initial points for {} nodes",
                settings.initial_points.len(),
                spec.node_count()
            )));
        }
        spec.check_points(&settings.initial_points)?;
        if !(settings.initial_penalty > 0.0) {
            return Err(Error::Config("initial penalty must be positive".into()));
        }
        settings.node.policy.validate()?;
        settings.node.tolerance.validate()?;
        Ok(Simulator {
            graph,
            spec,
            settings,
            timer,
        })
    }

    pub fn initial_snapshot(&self) -> Snapshot {
        Snapshot {
            x: self.settings.initial_points.clone(),
            multipliers: MultiplierSet::zeros(self.spec, self.graph),
            penalties: PenaltySet::uniform(self.spec, self.graph, self.settings.initial_penalty),
        }
    }

    /// Runs for at most `max_iter` awakenings.
    pub fn run(mut self, max_iter: u64) -> std::result::Result<Trace, Box<RunFailure>> {
        let n = self.spec.node_count();
        let mut trace = Trace {
            node_count: n,
            dim: self.spec.dim,
            initial: self.initial_snapshot(),
            events: Vec::new(),
            rounds: Vec::new(),
        };
        let mut nodes: Vec<NodeState> = (0..n)
            .map(|i| {
                NodeState::new(
                    i,
                    self.graph,
                    &self.spec.nodes[i],
                    &self.settings.initial_points[i],
                    self.settings.initial_penalty,
                    self.settings.node.clone(),
                )
            })
            .collect();
        // nodes start from different points; one exchange before the first
        // awakening fills every neighbor cache
        for node in nodes.iter_mut() {
            for (slot, &j) in self.graph.neighbors(node.id).iter().enumerate() {
                node.x_cache[slot].clone_from(&self.settings.initial_points[j]);
            }
        }
        let mut queue = EventQueue::default();
        for i in 0..n {
            let at = self.timer.schedule_next(i, 0.0);
            queue.push(at, i);
        }
        let mut inboxes: Vec<VecDeque<(usize, AsymmMessage)>> = vec![VecDeque::new(); n];
        let mut pending: BTreeMap<usize, PartialRound> = BTreeMap::new();

        for t in 1..=max_iter {
            let (now, i) = queue.pop().expect("every node is always scheduled");
            let step = self.awaken(t, now, i, &mut nodes, &mut inboxes, &mut pending, &mut trace);
            if let Err(error) = step {
                return Err(Box::new(RunFailure {
                    error,
                    partial: trace,
                }));
            }
            let next = self.timer.schedule_next(i, now);
            queue.push(next, i);
            if self.converged(&trace) {
                break;
            }
        }
        Ok(trace)
    }

    #[allow(clippy::too_many_arguments)]
    fn awaken(
        &self,
        t: u64,
        now: f64,
        i: usize,
        nodes: &mut [NodeState],
        inboxes: &mut [VecDeque<(usize, AsymmMessage)>],
        pending: &mut BTreeMap<usize, PartialRound>,
        trace: &mut Trace,
    ) -> Result<()> {
        while let Some((from, msg)) = inboxes[i].pop_front() {
            nodes[i].on_receive(from, &msg)?;
        }
        let prob = &self.spec.nodes[i];
        let (report, out) = nodes[i].on_awake(prob)?;
        trace.events.push(EventRecord {
            t,
            time: now,
            node: i,
            task: report.task,
            round: report.round,
            x: nodes[i].x.clone(),
            flag: nodes[i].flag(),
            flag_raised: report.flag_raised,
            tested_norm: report.tested_norm.unwrap_or(f64::NAN),
            tolerance: report.tolerance,
            lipschitz: report.lipschitz.unwrap_or(f64::NAN),
        });
        let n = nodes.len();
        match report.task {
            Task::T1 => {
                pending
                    .entry(report.round)
                    .or_insert_with(|| PartialRound::new(n))
                    .h_k += 1;
            }
            Task::T2 => {
                let part = pending
                    .entry(report.round)
                    .or_insert_with(|| PartialRound::new(n));
                if part.x[i].is_some() {
                    return Err(Error::Protocol(format!(
                        "node {i} updated its multipliers twice in round {}",
                        report.round
                    )));
                }
                part.x[i] = Some(nodes[i].x.clone());
                part.mults[i] = Some(nodes[i].own.clone());
                part.pens[i] = Some(nodes[i].penalties.clone());
                part.tolerances[i] = report.tolerance;
                part.t2_times.push(t);
                part.t2_order.push(i);
            }
            Task::Noop => {}
        }
        for o in out {
            match self.settings.delivery {
                Delivery::Immediate => nodes[o.to].on_receive(i, &o.msg)?,
                Delivery::Delayed => inboxes[o.to].push_back((i, o.msg)),
            }
        }
        if report.task == Task::T2 {
            self.close_round(report.round, nodes, pending, trace)?;
        }
        Ok(())
    }

    fn close_round(
        &self,
        k: usize,
        nodes: &[NodeState],
        pending: &mut BTreeMap<usize, PartialRound>,
        trace: &mut Trace,
    ) -> Result<()> {
        if !pending.get(&k).is_some_and(PartialRound::complete) {
            return Ok(());
        }
        if k != trace.rounds.len() {
            return Err(Error::Protocol(format!(
                "round {k} completed while round {} is still open",
                trace.rounds.len()
            )));
        }
        let part = pending.remove(&k).expect("checked above");
        let mults: Vec<NodeMultipliers> = part.mults.into_iter().map(Option::unwrap).collect();
        // own multipliers are only touched by the node's T2: none may have moved
        // between its update and the end of the cycle
        for (node, m) in nodes.iter().zip(&mults) {
            if node.own != *m {
                return Err(Error::Protocol(format!(
                    "node {} changed its multipliers inside cycle {k}",
                    node.id
                )));
            }
        }
        trace.rounds.push(RoundRecord {
            k,
            t2_times: part.t2_times,
            t2_order: part.t2_order,
            h_k: part.h_k,
            tolerances: part.tolerances,
            snapshot: Snapshot {
                x: part.x.into_iter().map(Option::unwrap).collect(),
                multipliers: MultiplierSet { nodes: mults },
                penalties: PenaltySet {
                    nodes: part.pens.into_iter().map(Option::unwrap).collect(),
                },
            },
        });
        Ok(())
    }

    fn converged(&self, trace: &Trace) -> bool {
        let StopMode::Threshold { xi, consensus } = self.settings.stop else {
            return false;
        };
        let Some(last) = trace.rounds.last() else {
            return false;
        };
        // evaluate once, right after the round closed
        if trace.events.last().map(|e| e.t) != Some(last.t_end()) {
            return false;
        }
        let x = &last.snapshot.x;
        let within = infeasibility(self.spec, self.graph, x).is_ok_and(|v| v <= xi);
        within && consensus_error(self.graph, x) <= consensus
    }
}

/// Builds the graph and problem described by `config` and runs it.
pub fn run(config: &SimConfig) -> std::result::Result<Trace, Box<RunFailure>> {
    let setup = config.build().map_err(|error| {
        Box::new(RunFailure {
            error,
            partial: empty_trace(),
        })
    })?;
    let sim = Simulator::new(&setup.graph, &setup.spec, setup.settings, setup.timer).map_err(
        |error| {
            Box::new(RunFailure {
                error,
                partial: empty_trace(),
            })
        },
    )?;
    sim.run(config.max_iter)
}

fn empty_trace() -> Trace {
    Trace {
        node_count: 0,
        dim: 0,
        initial: Snapshot {
            x: Vec::new(),
            multipliers: MultiplierSet { nodes: Vec::new() },
            penalties: PenaltySet { nodes: Vec::new() },
        },
        events: Vec::new(),
        rounds: Vec::new(),
    }
}

/// `max_{(i,j) ∈ E} ||x_i - x_j||`
pub fn consensus_error(graph: &Graph, xs: &[Vec<f64>]) -> f64 {
    graph
        .edges()
        .iter()
        .map(|&(a, b)| linalg::dist(&xs[a], &xs[b]))
        .fold(0.0, f64::max)
}

/// Largest constraint residual `max(|h|, max(0, g))` over all nodes.
pub fn max_constraint_violation(spec: &ProblemSpec, xs: &[Vec<f64>]) -> f64 {
    spec.nodes
        .iter()
        .zip(xs)
        .flat_map(|(p, x)| {
            p.equalities
                .iter()
                .map(|h| h.value(x).abs())
                .chain(p.inequalities.iter().map(|g| g.value(x).max(0.0)))
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// One row of the per-round table. Row `k` describes `x^k`; row 0 is the
/// initial point and has no time range.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub k: usize,
    pub t_start: u64,
    pub t_end: u64,
    pub xi: f64,
    pub consensus_err: f64,
    pub max_violation: f64,
    pub h_k: usize,
    /// `||∇_x L_{P^{k-1}}(x^k, Λ^{k-1})||`; NaN for row 0.
    pub grad_norm: f64,
    /// Heuristic gradient bound `sqrt(Σ_i (L_i ε_i / σ̂)²)`; NaN when no
    /// positive curvature estimate is available.
    pub grad_bound: f64,
}

/// Per-round table computed from a trace.
pub fn metrics(trace: &Trace, spec: &ProblemSpec, graph: &Graph) -> Result<Vec<RoundMetrics>> {
    let mut rows = Vec::with_capacity(trace.rounds.len() + 1);
    let x0 = &trace.initial.x;
    rows.push(RoundMetrics {
        k: 0,
        t_start: 0,
        t_end: 0,
        xi: infeasibility(spec, graph, x0)?,
        consensus_err: consensus_error(graph, x0),
        max_violation: max_constraint_violation(spec, x0),
        h_k: 0,
        grad_norm: f64::NAN,
        grad_bound: f64::NAN,
    });
    for (idx, round) in trace.rounds.iter().enumerate() {
        let prev = trace.snapshot(idx).expect("rounds are contiguous");
        let x = &round.snapshot.x;
        let diag = reference::gradient_bound_diagnostic(
            spec,
            graph,
            x,
            &prev.multipliers,
            &prev.penalties,
            &round.tolerances,
            idx as u64,
        )?;
        rows.push(RoundMetrics {
            k: idx + 1,
            t_start: round.t_start(),
            t_end: round.t_end(),
            xi: infeasibility(spec, graph, x)?,
            consensus_err: consensus_error(graph, x),
            max_violation: max_constraint_violation(spec, x),
            h_k: round.h_k,
            grad_norm: diag.grad_norm,
            grad_bound: diag.bound.unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// Trace-level checks of the multiplier-cycle structure.
pub mod checks {
    use super::*;

    /// Consecutive blocks of `N` multiplier updates are permutations of the nodes.
    pub fn multiplier_cycles_are_permutations(trace: &Trace) -> Result<()> {
        let n = trace.node_count;
        let t2: Vec<&EventRecord> = trace.t2_events().collect();
        for (c, block) in t2.chunks(n).enumerate() {
            let mut seen = vec![false; n];
            for e in block {
                if std::mem::replace(&mut seen[e.node], true) {
                    return Err(Error::Protocol(format!(
                        "node {} updates twice in multiplier cycle {c} (t = {})",
                        e.node, e.t
                    )));
                }
                if e.round != c {
                    return Err(Error::Protocol(format!(
                        "multiplier update of node {} at t = {} is tagged round {} inside cycle {c}",
                        e.node, e.t, e.round
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every node takes a primal step between the first multiplier update of
    /// cycle `k` and the first of cycle `k + 1`, for every cycle for which the
    /// latter exists.
    pub fn primal_step_every_cycle(trace: &Trace) -> Result<()> {
        let n = trace.node_count;
        let starts: Vec<u64> = trace.t2_events().step_by(n.max(1)).map(|e| e.t).collect();
        for (k, w) in starts.windows(2).enumerate() {
            let mut stepped = vec![false; n];
            for e in trace.events.iter().filter(|e| e.t >= w[0] && e.t < w[1]) {
                if e.task == Task::T1 {
                    stepped[e.node] = true;
                }
            }
            if let Some(lazy) = stepped.iter().position(|&s| !s) {
                return Err(Error::Protocol(format!(
                    "node {lazy} took no primal step between t = {} and t = {} (cycle {k})",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// A flag is only raised by a primal step whose tested gradient norm was
    /// within that node's tolerance.
    pub fn flags_raised_within_tolerance(trace: &Trace) -> Result<()> {
        match trace
            .events
            .iter()
            .find(|e| e.flag_raised && !(e.task == Task::T1 && e.tested_norm <= e.tolerance))
        {
            Some(e) => Err(Error::Protocol(format!(
                "node {} raised its flag at t = {} with gradient norm {} > {}",
                e.node, e.t, e.tested_norm, e.tolerance
            ))),
            None => Ok(()),
        }
    }

    /// Universal time is strictly increasing and wake times nondecreasing.
    pub fn serialized(trace: &Trace) -> Result<()> {
        for w in trace.events.windows(2) {
            if w[1].t <= w[0].t || w[1].time < w[0].time {
                return Err(Error::Protocol(format!("events out of order at t = {}", w[1].t)));
            }
        }
        Ok(())
    }

    pub fn all(trace: &Trace) -> Result<()> {
        serialized(trace)?;
        multiplier_cycles_are_permutations(trace)?;
        primal_step_every_cycle(trace)?;
        flags_raised_within_tolerance(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_orders_by_time_then_node() {
        let mut q = EventQueue::default();
        q.push(2.0, 0);
        q.push(1.0, 3);
        q.push(1.0, 1);
        q.push(0.5, 7);
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(order, vec![(0.5, 7), (1.0, 1), (1.0, 3), (2.0, 0)]);
    }

    #[test]
    fn constant_timer_is_round_robin() {
        let mut timer = TimerModel::uniform(3, 1.0, 1.0, 5).unwrap();
        assert_eq!(timer.schedule_next(2, 4.0), 5.0);
        assert_eq!(timer.schedule_next(0, 0.0), 1.0);
    }

    #[test]
    fn timer_draws_respect_bounds_and_seed() {
        let mut a = TimerModel::uniform(2, 0.2, 1.3, 9).unwrap();
        let mut b = TimerModel::uniform(2, 0.2, 1.3, 9).unwrap();
        for _ in 0..1000 {
            let wa = a.schedule_next(1, 0.0);
            assert!((0.2..=1.3).contains(&wa));
            assert_eq!(wa, b.schedule_next(1, 0.0));
        }
        assert!(TimerModel::uniform(2, 0.0, 1.0, 0).is_err());
        assert!(TimerModel::uniform(2, 1.0, 0.5, 0).is_err());
    }
}
