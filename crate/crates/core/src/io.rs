//! Trace output: CSV tables and a binary trace format.
//!
//! Binary layout (all integers u64 little-endian, floats f64 little-endian):
//!
//! ```text
//! magic "ASYMMTRC" | version | node_count | dim
//! per node: n_eq n_ineq degree
//! initial snapshot
//! event_count | events
//! round_count | rounds
//! ```
//!
//! A snapshot is, per node, `x`, `λ`, `μ`, `ν` (degree x dim), `ρ_eq`,
//! `ρ_ineq`, `ρ_edge`, with lengths implied by the header.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::lagrangian::{MultiplierSet, NodeMultipliers, NodePenalties, PenaltySet};
use crate::node::Task;
use crate::simulator::{EventRecord, RoundMetrics, RoundRecord, Snapshot, Trace};

const MAGIC: &[u8; 8] = b"ASYMMTRC";
const VERSION: u64 = 1;

fn task_name(t: Task) -> &'static str {
    match t {
        Task::T1 => "T1",
        Task::T2 => "T2",
        Task::Noop => "noop",
    }
}

/// `t,node,task,k,x0..x{n-1}`, one row per awakening.
pub fn iterations_csv(trace: &Trace) -> String {
    let mut s = String::from("t,node,task,k");
    for c in 0..trace.dim {
        let _ = write!(s, ",x{c}");
    }
    s.push('\n');
    for e in &trace.events {
        let _ = write!(s, "{},{},{},{}", e.t, e.node, task_name(e.task), e.round);
        for v in &e.x {
            let _ = write!(s, ",{v:e}");
        }
        s.push('\n');
    }
    s
}

/// `k,t_start,t_end,xi,consensus_err,h_k` plus diagnostic columns.
pub fn rounds_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from("k,t_start,t_end,xi,consensus_err,h_k,max_violation,grad_norm,grad_bound\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:e},{:e},{},{:e},{:e},{:e}",
            r.k, r.t_start, r.t_end, r.xi, r.consensus_err, r.h_k, r.max_violation, r.grad_norm, r.grad_bound
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shape {
    n_eq: usize,
    n_ineq: usize,
    degree: usize,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn floats(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Trace(format!("truncated trace at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Trace(format!("count {v} out of range")))
    }
    /// A count that must be backed by at least `min_bytes` bytes per item.
    fn count(&mut self, min_bytes: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(min_bytes) > self.buf.len() - self.pos {
            return Err(Error::Trace(format!("truncated trace: {n} records announced")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn shapes_of(snap: &Snapshot) -> Vec<Shape> {
    snap.multipliers
        .nodes
        .iter()
        .map(|m| Shape {
            n_eq: m.lambda.len(),
            n_ineq: m.mu.len(),
            degree: m.nu.len(),
        })
        .collect()
}

fn write_snapshot(w: &mut Writer, snap: &Snapshot, shapes: &[Shape], dim: usize) -> Result<()> {
    for (i, sh) in shapes.iter().enumerate() {
        let (m, p, x) = (&snap.multipliers.nodes[i], &snap.penalties.nodes[i], &snap.x[i]);
        let ok = x.len() == dim
            && m.lambda.len() == sh.n_eq
            && m.mu.len() == sh.n_ineq
            && m.nu.len() == sh.degree
            && m.nu.iter().all(|v| v.len() == dim)
            && p.rho_eq.len() == sh.n_eq
            && p.rho_ineq.len() == sh.n_ineq
            && p.rho_edge.len() == sh.degree;
        if !ok {
            return Err(Error::Trace(format!("node {i}: snapshot shape changed")));
        }
        w.floats(x);
        w.floats(&m.lambda);
        w.floats(&m.mu);
        m.nu.iter().for_each(|v| w.floats(v));
        w.floats(&p.rho_eq);
        w.floats(&p.rho_ineq);
        w.floats(&p.rho_edge);
    }
    Ok(())
}

fn read_snapshot(r: &mut Reader, shapes: &[Shape], dim: usize) -> Result<Snapshot> {
    let mut x = Vec::with_capacity(shapes.len());
    let mut mults = Vec::with_capacity(shapes.len());
    let mut pens = Vec::with_capacity(shapes.len());
    for sh in shapes {
        x.push(r.floats(dim)?);
        let lambda = r.floats(sh.n_eq)?;
        let mu = r.floats(sh.n_ineq)?;
        let nu = (0..sh.degree).map(|_| r.floats(dim)).collect::<Result<Vec<_>>>()?;
        mults.push(NodeMultipliers { lambda, mu, nu });
        pens.push(NodePenalties {
            rho_eq: r.floats(sh.n_eq)?,
            rho_ineq: r.floats(sh.n_ineq)?,
            rho_edge: r.floats(sh.degree)?,
        });
    }
    Ok(Snapshot {
        x,
        multipliers: MultiplierSet { nodes: mults },
        penalties: PenaltySet { nodes: pens },
    })
}

pub fn encode_trace(trace: &Trace) -> Result<Vec<u8>> {
    let shapes = shapes_of(&trace.initial);
    if shapes.len() != trace.node_count {
        return Err(Error::Trace("initial snapshot does not cover every node".into()));
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u64(VERSION);
    w.usize(trace.node_count);
    w.usize(trace.dim);
    for sh in &shapes {
        w.usize(sh.n_eq);
        w.usize(sh.n_ineq);
        w.usize(sh.degree);
    }
    write_snapshot(&mut w, &trace.initial, &shapes, trace.dim)?;

    w.usize(trace.events.len());
    for e in &trace.events {
        if e.x.len() != trace.dim {
            return Err(Error::Trace(format!("event {}: wrong dimension", e.t)));
        }
        w.u64(e.t);
        w.f64(e.time);
        w.usize(e.node);
        w.u64(match e.task {
            Task::T1 => 1,
            Task::T2 => 2,
            Task::Noop => 0,
        });
        w.usize(e.round);
        w.u64(u64::from(e.flag) | (u64::from(e.flag_raised) << 1));
        w.f64(e.tested_norm);
        w.f64(e.tolerance);
        w.f64(e.lipschitz);
        w.floats(&e.x);
    }

    w.usize(trace.rounds.len());
    for r in &trace.rounds {
        if r.t2_times.len() != r.t2_order.len() || r.tolerances.len() != trace.node_count {
            return Err(Error::Trace(format!("round {}: inconsistent record", r.k)));
        }
        w.usize(r.k);
        w.usize(r.h_k);
        w.usize(r.t2_times.len());
        for (&t, &i) in r.t2_times.iter().zip(&r.t2_order) {
            w.u64(t);
            w.usize(i);
        }
        w.floats(&r.tolerances);
        write_snapshot(&mut w, &r.snapshot, &shapes, trace.dim)?;
    }
    Ok(w.0)
}

pub fn decode_trace(bytes: &[u8]) -> Result<Trace> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Trace("not an ASYMM trace (bad magic)".into()));
    }
    let version = r.u64()?;
    if version != VERSION {
        return Err(Error::Trace(format!("unsupported trace version {version}")));
    }
    let node_count = r.count(24)?;
    let dim = r.count(0)?;
    let shapes = (0..node_count)
        .map(|_| {
            Ok(Shape {
                n_eq: r.count(0)?,
                n_ineq: r.count(0)?,
                degree: r.count(0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let initial = read_snapshot(&mut r, &shapes, dim)?;

    let event_count = r.count(80)?;
    let mut events = Vec::with_capacity(event_count);
    for _ in 0..event_count {
        let t = r.u64()?;
        let time = r.f64()?;
        let node = r.usize()?;
        let task = match r.u64()? {
            0 => Task::Noop,
            1 => Task::T1,
            2 => Task::T2,
            other => return Err(Error::Trace(format!("event {t}: unknown task code {other}"))),
        };
        let round = r.usize()?;
        let bits = r.u64()?;
        if node >= node_count {
            return Err(Error::Trace(format!("event {t}: node {node} out of range")));
        }
        events.push(EventRecord {
            t,
            time,
            node,
            task,
            round,
            flag: bits & 1 != 0,
            flag_raised: bits & 2 != 0,
            tested_norm: r.f64()?,
            tolerance: r.f64()?,
            lipschitz: r.f64()?,
            x: r.floats(dim)?,
        });
    }

    let round_count = r.count(24)?;
    let mut rounds = Vec::with_capacity(round_count);
    for _ in 0..round_count {
        let k = r.usize()?;
        let h_k = r.usize()?;
        let n = r.count(16)?;
        let mut t2_times = Vec::with_capacity(n);
        let mut t2_order = Vec::with_capacity(n);
        for _ in 0..n {
            t2_times.push(r.u64()?);
            t2_order.push(r.usize()?);
        }
        let tolerances = r.floats(node_count)?;
        let snapshot = read_snapshot(&mut r, &shapes, dim)?;
        rounds.push(RoundRecord {
            k,
            t2_times,
            t2_order,
            h_k,
            tolerances,
            snapshot,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Trace(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Trace {
        node_count,
        dim,
        initial,
        events,
        rounds,
    })
}

pub fn write_trace(path: &std::path::Path, trace: &Trace) -> Result<()> {
    std::fs::write(path, encode_trace(trace)?)?;
    Ok(())
}

pub fn read_trace(path: &std::path::Path) -> Result<Trace> {
    decode_trace(&std::fs::read(path)?)
}
