//! Per-node ASYMM state machine.
//!
//! On each awakening a node runs exactly one task:
//!
//! - **T1** while its stop matrix has not completed and it has no pending
//!   multiplier round: one gradient step on the local Augmented Lagrangian,
//!   raise the logic-AND flag once the gradient norm is within tolerance,
//!   refresh the stop column and broadcast `x_i` with it.
//! - **T2** once the last stop-matrix row is all ones: one multiplier ascent
//!   and penalty update, then broadcast `ν_ij, ρ_ij` to each neighbor.
//! - otherwise nothing (waiting for the neighbors' multipliers).
//!
//! Receiving a multiplier doubles as the logic-AND STOP signal. When a node
//! holds its own updated multipliers and those of every neighbor it starts the
//! next round: stop matrix cleared, flag lowered, tolerance tightened.
//!
//! Every message carries the sender's round counter; it lets the receiver
//! discard stop columns that belong to an already completed round.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::lagrangian::{
    estimate_block_lipschitz, local_al_gradient, next_tolerance, node_violations,
    update_node_multipliers, update_node_penalties, LocalView, NodeMultipliers, NodePenalties,
    PenaltyPolicy, ToleranceSchedule, Violations,
};
use crate::linalg;
use crate::logicand::StopMatrix;
use crate::problem::NodeProblem;

/// Which gradient the flag test uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlagCheck {
    /// The gradient that drove the step (state before the step).
    #[default]
    PreStep,
    /// A fresh gradient at the updated point.
    PostStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSettings {
    pub tolerance: ToleranceSchedule,
    pub policy: PenaltyPolicy,
    pub flag_check: FlagCheck,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AsymmMessage {
    Primal {
        x: Vec<f64>,
        column: Vec<bool>,
        round: usize,
    },
    Multiplier {
        /// `ν_ij` as seen by the receiver `j`, i.e. its `ν_ji`.
        nu: Vec<f64>,
        rho: f64,
        round: usize,
    },
}

impl AsymmMessage {
    pub fn round(&self) -> usize {
        match self {
            AsymmMessage::Primal { round, .. } | AsymmMessage::Multiplier { round, .. } => *round,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: usize,
    pub msg: AsymmMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    T1,
    T2,
    Noop,
}

/// Diagnostics of one awakening.
#[derive(Debug, Clone, PartialEq)]
pub struct AwakeReport {
    pub task: Task,
    /// Round the task belongs to.
    pub round: usize,
    /// Gradient norm compared against the tolerance (T1 only).
    pub tested_norm: Option<f64>,
    pub tolerance: f64,
    /// Inverse step size (T1 only).
    pub lipschitz: Option<f64>,
    /// Flag raised by this very step.
    pub flag_raised: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub id: usize,
    pub neighbors: Vec<usize>,
    pub x: Vec<f64>,
    /// Latest `x_j` received from each neighbor.
    pub x_cache: Vec<Vec<f64>>,
    pub own: NodeMultipliers,
    pub penalties: NodePenalties,
    /// `ν_ji` and `ρ_ji` received from each neighbor.
    pub nu_in: Vec<Vec<f64>>,
    pub rho_in: Vec<f64>,
    pub stop: StopMatrix,
    pub m_done: bool,
    pub tolerance: f64,
    pub round: usize,
    /// Neighbors whose multiplier for the current round has arrived.
    pub received: Vec<bool>,
    prev_violations: Option<Violations>,
    settings: NodeSettings,
}

impl NodeState {
    /// Node `id` starting at `x0` with zero multipliers and uniform penalties.
    /// Neighbor caches start at `x0` and neighbor penalties at
    /// `initial_penalty`; callers with heterogeneous starts overwrite `x_cache`.
    pub fn new(
        id: usize,
        graph: &Graph,
        prob: &NodeProblem,
        x0: &[f64],
        initial_penalty: f64,
        settings: NodeSettings,
    ) -> Self {
        let neighbors = graph.neighbors(id).to_vec();
        let degree = neighbors.len();
        NodeState {
            id,
            x: x0.to_vec(),
            x_cache: vec![x0.to_vec(); degree],
            own: NodeMultipliers::zeros(prob, degree),
            penalties: NodePenalties::uniform(prob, degree, initial_penalty),
            nu_in: vec![vec![0.0; prob.dim]; degree],
            rho_in: vec![initial_penalty; degree],
            stop: StopMatrix::new(graph.diameter(), &neighbors),
            m_done: false,
            tolerance: next_tolerance(&settings.tolerance, 0),
            round: 0,
            received: vec![false; degree],
            prev_violations: None,
            neighbors,
            settings,
        }
    }

    pub fn view(&self) -> LocalView<'_> {
        LocalView {
            node: self.id,
            x: &self.x,
            own: &self.own,
            penalties: &self.penalties,
            neighbors: self
                .neighbors
                .iter()
                .enumerate()
                .map(|(idx, &id)| crate::lagrangian::NeighborData {
                    id,
                    x: &self.x_cache[idx],
                    nu_in: &self.nu_in[idx],
                    rho_in: self.rho_in[idx],
                })
                .collect(),
        }
    }

    pub fn flag(&self) -> bool {
        self.stop.own_flag()
    }

    fn neighbor_slot(&self, from: usize) -> Result<usize> {
        self.neighbors
            .binary_search(&from)
            .map_err(|_| Error::UnknownNeighbor {
                node: self.id,
                neighbor: from,
            })
    }

    pub fn on_awake(&mut self, prob: &NodeProblem) -> Result<(AwakeReport, Vec<Outgoing>)> {
        let mut report = AwakeReport {
            task: Task::Noop,
            round: self.round,
            tested_norm: None,
            tolerance: self.tolerance,
            lipschitz: None,
            flag_raised: false,
        };
        if self.m_done {
            return Ok((report, Vec::new()));
        }
        if !self.stop.last_row_all_ones() {
            self.primal_step(prob, &mut report)?;
            let column = self.stop.own_column();
            let out = self
                .neighbors
                .iter()
                .map(|&to| Outgoing {
                    to,
                    msg: AsymmMessage::Primal {
                        x: self.x.clone(),
                        column: column.clone(),
                        round: self.round,
                    },
                })
                .collect();
            Ok((report, out))
        } else {
            report.task = Task::T2;
            let out = self.multiplier_step(prob);
            self.maybe_start_next_round();
            Ok((report, out))
        }
    }

    fn primal_step(&mut self, prob: &NodeProblem, report: &mut AwakeReport) -> Result<()> {
        let view = self.view();
        let grad = local_al_gradient(&view, prob);
        if !linalg::all_finite(&grad) {
            return Err(Error::Numerical(format!(
                "node {} round {}: non-finite gradient",
                self.id, self.round
            )));
        }
        let lip = estimate_block_lipschitz(&view, prob)?;
        drop(view);
        linalg::axpy(-1.0 / lip, &grad, &mut self.x);
        if !linalg::all_finite(&self.x) {
            return Err(Error::Numerical(format!(
                "node {} round {}: non-finite iterate",
                self.id, self.round
            )));
        }
        let tested = match self.settings.flag_check {
            FlagCheck::PreStep => linalg::norm(&grad),
            FlagCheck::PostStep => linalg::norm(&local_al_gradient(&self.view(), prob)),
        };
        if tested <= self.tolerance && !self.stop.own_flag() {
            self.stop.set_own_flag(true);
            report.flag_raised = true;
        }
        self.stop.propagate();
        report.task = Task::T1;
        report.tested_norm = Some(tested);
        report.lipschitz = Some(lip);
        Ok(())
    }

    fn multiplier_step(&mut self, prob: &NodeProblem) -> Vec<Outgoing> {
        let view = self.view();
        let now = node_violations(&view, prob);
        let updated = update_node_multipliers(&view, prob);
        drop(view);
        self.penalties = update_node_penalties(
            &self.penalties,
            &now,
            self.prev_violations.as_ref(),
            &self.settings.policy,
        );
        self.prev_violations = Some(now);
        self.own = updated;
        self.m_done = true;
        self.neighbors
            .iter()
            .enumerate()
            .map(|(idx, &to)| Outgoing {
                to,
                msg: AsymmMessage::Multiplier {
                    nu: self.own.nu[idx].clone(),
                    rho: self.penalties.rho_edge[idx],
                    round: self.round,
                },
            })
            .collect()
    }

    fn maybe_start_next_round(&mut self) {
        if self.m_done && self.received.iter().all(|&r| r) {
            self.m_done = false;
            self.stop.reset();
            self.round += 1;
            self.tolerance = next_tolerance(&self.settings.tolerance, self.round);
            self.received.fill(false);
        }
    }

    pub fn on_receive(&mut self, from: usize, msg: &AsymmMessage) -> Result<()> {
        let slot = self.neighbor_slot(from)?;
        match msg {
            AsymmMessage::Primal { x, column, round } => {
                if *round > self.round + 1 {
                    return Err(Error::Protocol(format!(
                        "node {} in round {} got a round-{} state from {}",
                        self.id, self.round, round, from
                    )));
                }
                if x.len() != self.x.len() {
                    return Err(Error::Dimension {
                        expected: self.x.len(),
                        got: x.len(),
                    });
                }
                self.x_cache[slot].clone_from(x);
                // a received STOP is final for the round; late columns must
                // not clear the filled last row
                if *round == self.round && !self.received.iter().any(|&r| r) {
                    self.stop.set_column(from, column)?;
                }
            }
            AsymmMessage::Multiplier { nu, rho, round } => {
                if *round != self.round {
                    return Err(Error::Protocol(format!(
                        "node {} in round {} got a round-{} multiplier from {}",
                        self.id, self.round, round, from
                    )));
                }
                if self.received[slot] {
                    return Err(Error::Protocol(format!(
                        "node {} got a second round-{} multiplier from {}",
                        self.id, round, from
                    )));
                }
                if nu.len() != self.x.len() {
                    return Err(Error::Dimension {
                        expected: self.x.len(),
                        got: nu.len(),
                    });
                }
                self.nu_in[slot].clone_from(nu);
                self.rho_in[slot] = *rho;
                self.received[slot] = true;
                self.stop.fill_last_row();
                self.maybe_start_next_round();
            }
        }
        Ok(())
    }
}
