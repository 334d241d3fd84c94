//! Brute-force reference for the expected-cost solver.
//!
//! Every meta-step is expanded into one state per on-air packet, and the
//! absorbing chain is solved through its fundamental matrix `(I - Q)^-1`.
//! Successor rules are written out here from the protocol descriptions and
//! do not reuse the solver's builders.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use trome_core::markov_analyzer::{ChainParams, CostConstants, StepCost};
use trome_core::protocol_engine::Protocol;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("chain has no transient solution (p={p}, q={q})")]
    Singular { p: f64, q: f64 },
    #[error("need at least two nodes, got {0}")]
    TooFewNodes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Step {
    /// Holder `i`, node `j` wakes `j + 1`.
    Wake(usize, usize),
    /// CTP-WUR relay `i + 1` wakes `i + 2`.
    RelayWake(usize),
    Send(usize, usize),
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Wake,
    Transfer,
}

/// Packet structure, cost and successors of one meta-step. `None` is the
/// delivered state.
struct Meta {
    kind: Kind,
    cost: StepCost,
    ok: Option<Step>,
    partial: Option<Step>,
    fail: Option<Step>,
}

fn plus(a: StepCost, b: StepCost, k: f64) -> StepCost {
    StepCost::new(a.success + k * b.success, a.partial + k * b.partial, a.fail + k * b.fail)
}

fn arrived(node: usize, m: usize) -> Option<Step> {
    (node < m).then_some(Step::Wake(node, node))
}

fn meta(protocol: Protocol, s: Step, m: usize, ttl: usize, c: &CostConstants) -> Meta {
    match (protocol, s) {
        (Protocol::Trome, Step::Wake(i, j)) => {
            let next = j + 1;
            let ok = if next == m || next - i == ttl { Step::Send(i, next) } else { Step::Wake(i, next) };
            let back = if i == j { Step::Wake(i, i) } else { Step::Send(i, j) };
            let cost = if i == j { c.source_wake } else { plus(c.relay_wake, c.wake_listener, (j - i - 1) as f64) };
            Meta { kind: Kind::Wake, cost, ok: Some(ok), partial: Some(back), fail: Some(back) }
        }
        (Protocol::Trome, Step::Send(i, j)) => {
            let cost = plus(c.transfer, c.transfer_listener, (j - i - 1) as f64);
            let back = Some(Step::Wake(i, i));
            Meta { kind: Kind::Transfer, cost, ok: arrived(j, m), partial: back, fail: back }
        }
        (Protocol::Naive, Step::Wake(i, _)) => {
            Meta { kind: Kind::Wake, cost: c.source_wake, ok: Some(Step::Send(i, i + 1)), partial: Some(s), fail: Some(s) }
        }
        (Protocol::Naive, Step::Send(i, j)) => {
            let back = Some(Step::Wake(i, i));
            Meta { kind: Kind::Transfer, cost: c.transfer, ok: arrived(j, m), partial: back, fail: back }
        }
        (Protocol::CtpWur, Step::Wake(i, _)) if i + 1 == m => {
            Meta { kind: Kind::Wake, cost: c.source_wake, ok: Some(Step::Send(i, m)), partial: Some(s), fail: Some(s) }
        }
        (Protocol::CtpWur, Step::Wake(i, _)) => Meta {
            kind: Kind::Wake,
            cost: c.relayed_source_wake,
            ok: Some(Step::RelayWake(i)),
            partial: Some(s),
            fail: Some(s),
        },
        (Protocol::CtpWur, Step::RelayWake(i)) => {
            let fallback = Some(Step::Send(i, i + 1));
            Meta { kind: Kind::Wake, cost: c.relay_wake, ok: Some(Step::Send(i, i + 2)), partial: fallback, fail: fallback }
        }
        (Protocol::CtpWur, Step::Send(i, j)) if j == i + 2 => {
            let fallback = Some(Step::Send(i, i + 1));
            let cost = plus(c.transfer, c.transfer_listener, 1.0);
            Meta { kind: Kind::Transfer, cost, ok: arrived(j, m), partial: fallback, fail: fallback }
        }
        (Protocol::CtpWur, Step::Send(i, j)) => {
            let back = Some(Step::Wake(i, i));
            Meta { kind: Kind::Transfer, cost: c.transfer, ok: arrived(j, m), partial: back, fail: back }
        }
        (_, Step::RelayWake(_)) => unreachable!("relay wake-ups only exist in CTP-WUR"),
    }
}

const OK: usize = usize::MAX;
const PARTIAL: usize = usize::MAX - 1;
const FAIL: usize = usize::MAX - 2;

#[derive(Default)]
struct Chain {
    index: HashMap<(Step, usize), usize>,
    edges: Vec<Vec<(usize, f64)>>,
    reward: Vec<f64>,
}

impl Chain {
    fn state(&mut self, key: (Step, usize)) -> (usize, bool) {
        if let Some(&i) = self.index.get(&key) {
            return (i, false);
        }
        let i = self.edges.len();
        self.index.insert(key, i);
        self.edges.push(Vec::new());
        self.reward.push(0.0);
        (i, true)
    }
}

/// Expected cost from the start state (message at node 1, waking node 2).
pub fn expected_cost(protocol: Protocol, chain: &ChainParams, costs: &CostConstants) -> Result<f64, OracleError> {
    let (m, p, q) = (chain.m, chain.p, chain.q);
    if m < 2 {
        return Err(OracleError::TooFewNodes(m));
    }
    let mut g = Chain::default();
    let start = Step::Wake(1, 1);
    g.state((start, 0));
    let mut todo = vec![start];
    while let Some(s) = todo.pop() {
        let mm = meta(protocol, s, m, chain.ttl as usize, costs);
        // Wake-up: the call itself, then the main-radio packets it needs.
        // Transfer: data, then acknowledgement.
        let probs: Vec<f64> = match mm.kind {
            Kind::Wake => std::iter::once(p).chain(std::iter::repeat_n(q, chain.wake_exponent as usize)).collect(),
            Kind::Transfer => vec![q, q],
        };
        let (ok, _) = g.state((s, OK));
        let (partial, _) = g.state((s, PARTIAL));
        let (fail, _) = g.state((s, FAIL));
        for (k, &pr) in probs.iter().enumerate() {
            let (here, _) = g.state((s, k));
            let next = if k + 1 == probs.len() { ok } else { g.state((s, k + 1)).0 };
            let lost = if k == 0 { fail } else { partial };
            g.edges[here].push((next, pr));
            g.edges[here].push((lost, 1.0 - pr));
        }
        for (state, cost, succ) in [(ok, mm.cost.success, mm.ok), (partial, mm.cost.partial, mm.partial), (fail, mm.cost.fail, mm.fail)] {
            g.reward[state] = cost;
            if let Some(n) = succ {
                let (entry, fresh) = g.state((n, 0));
                g.edges[state].push((entry, 1.0));
                if fresh {
                    todo.push(n);
                }
            }
        }
    }
    let n = g.edges.len();
    let mut transient = DMatrix::<f64>::zeros(n, n);
    for (from, out) in g.edges.iter().enumerate() {
        for &(to, pr) in out {
            transient[(from, to)] += pr;
        }
    }
    let fundamental =
        (DMatrix::<f64>::identity(n, n) - transient).try_inverse().ok_or(OracleError::Singular { p, q })?;
    let costs = fundamental * DVector::from_vec(g.reward);
    let v = costs[g.index[&(start, 0)]];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(OracleError::Singular { p, q })
    }
}
