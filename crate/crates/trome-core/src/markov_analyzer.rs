//! Expected delivery cost along a line of `m` nodes as an absorbing Markov
//! chain over meta-states, solved as a dense linear system.
//!
//! Nodes are numbered `1..=m` from the source; node `m` is the sink. Every
//! meta-step ends in success, a partial failure (wake-up seen, a main-radio
//! packet lost) or a plain failure, each with its own cost. Costs may be
//! times in µs or energies in mJ; the system matrix only depends on `p`, `q`.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::airtime_energy::{EnergyModel, RadioState};
use crate::channel_sim::default_wake_exponent;
use crate::protocol_engine::{Protocol, ProtocolParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MarkovError {
    #[error("degenerate probabilities p={p}, q={q}")]
    DegenerateProbability { p: f64, q: f64 },
    #[error("line needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("TTL must be at least 1")]
    ZeroTtl,
    #[error("packet count must be at least 1")]
    ZeroPackets,
    #[error("singular system")]
    SingularSystem,
    #[error("residual {residual:e} above tolerance")]
    Residual { residual: f64 },
    #[error("state {0:?} is not part of the system")]
    UnknownState(MetaState),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetaState {
    /// Message at `msg_at`, node `waker` wakes node `target`.
    W { msg_at: u8, waker: u8, target: u8 },
    /// Data moves from `from` to `to`.
    T { from: u8, to: u8 },
    Delivered,
}

impl MetaState {
    pub fn start() -> Self {
        MetaState::W { msg_at: 1, waker: 1, target: 2 }
    }
}

/// Cost of one meta-step outcome.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepCost {
    pub success: f64,
    /// Wake-up received but a main-radio packet was lost; for transfers,
    /// the data arrived but its acknowledgement did not.
    pub partial: f64,
    pub fail: f64,
}

impl StepCost {
    pub const fn new(success: f64, partial: f64, fail: f64) -> Self {
        Self { success, partial, fail }
    }

    fn scaled_success(self, n: f64) -> Self {
        let extra = self.success * (n - 1.0);
        Self::new(self.success + extra, self.partial + extra, self.fail + extra)
    }

    fn plus(self, o: StepCost, times: f64) -> Self {
        Self::new(self.success + times * o.success, self.partial + times * o.partial, self.fail + times * o.fail)
    }

    fn non_negative(&self) -> bool {
        [self.success, self.partial, self.fail].iter().all(|v| v.is_finite() && *v >= 0.0)
    }

    fn fail_not_cheaper(&self) -> bool {
        self.partial >= self.success && self.fail >= self.success
    }
}

/// Step costs of one protocol, all in the same unit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostConstants {
    /// Wake-up started by the node holding the message.
    pub source_wake: StepCost,
    /// An awake relay wakes the next node while the message stays behind.
    pub relay_wake: StepCost,
    /// First wake-up of a relayed exchange (only used by CTP-WUR).
    pub relayed_source_wake: StepCost,
    /// Data frame and its acknowledgement.
    pub transfer: StepCost,
    /// Added to a relay wake-up per awake node between holder and waker.
    pub wake_listener: StepCost,
    /// Added to a transfer per awake node between sender and receiver.
    pub transfer_listener: StepCost,
}

impl CostConstants {
    /// Delays in µs of the engine's deadlines for a `payload`-byte message.
    pub fn time(params: &ProtocolParams, payload: usize) -> Self {
        let t = Timeline::new(params, payload);
        let g = t.g;
        match params.protocol {
            Protocol::Trome => {
                let src = params.source_step_us() as f64;
                let relay = params.relay_step_us() as f64;
                let tx = 2.0 * g + t.data + t.ack;
                Self {
                    source_wake: StepCost::new(src, src + t.guard, src + t.guard),
                    relay_wake: StepCost::new(relay, relay + t.guard, relay + t.guard),
                    relayed_source_wake: StepCost::new(src, src + t.guard, src + t.guard),
                    transfer: StepCost::new(tx, tx + t.guard, tx + t.guard),
                    ..Self::default()
                }
            }
            Protocol::Naive | Protocol::CtpWur => {
                let nw = t.lbt + t.wuc + t.x;
                let cw2 = g + t.wuc + t.x;
                let nt = 2.0 * g + t.data + t.ack;
                let nt_fail = nt + t.guard;
                Self {
                    source_wake: StepCost::new(nw, nw + nt_fail, nw + nt_fail),
                    relay_wake: StepCost::new(cw2, cw2 + nt_fail, cw2 + nt_fail),
                    relayed_source_wake: StepCost::new(nw, nw + cw2 + 2.0 * nt_fail, nw + cw2 + 2.0 * nt_fail),
                    transfer: StepCost::new(nt, nt_fail, nt_fail),
                    ..Self::default()
                }
            }
        }
    }

    /// Energy in mJ spent by all awake nodes during each step.
    pub fn energy(params: &ProtocolParams, model: &EnergyModel, payload: usize) -> Self {
        let t = Timeline::new(params, payload);
        let e = |s: RadioState, d: f64| model.energy_mj(s, d);
        let idle = |d: f64| e(RadioState::DelayIdle, d);
        let rx = |d: f64| e(RadioState::Rx, d);
        let cal = t.cal;
        let send = |air: f64| idle(t.g) + e(RadioState::Calibrate, cal) + e(RadioState::TxData, air - cal);
        let wuc = e(RadioState::Calibrate, cal) + e(RadioState::TxWuc, t.wuc - cal);
        let g = t.g;
        match params.protocol {
            Protocol::Trome => {
                let src = params.source_step_us() as f64;
                let relay = params.relay_step_us() as f64;
                let woken = send(t.ack) + rx(g + t.req) + send(t.req);
                let woken_lost = send(t.ack) + rx(g + t.req + t.guard);
                let src_ok = rx(t.lbt) + wuc + idle(t.x + g) + rx(t.ack) + send(t.req) + idle(g) + rx(t.req);
                let src_fail = rx(t.lbt) + wuc + idle(src - t.lbt - t.wuc + t.guard);
                let relay_ok = idle(g) + wuc + idle(t.x + g) + rx(t.ack) + send(t.req);
                let relay_fail = idle(g) + wuc + idle(relay - g - t.wuc + t.guard);
                let holder_ok = idle(relay - t.req) + rx(t.req);
                let holder_fail = idle(relay + t.guard);
                let tx_ok = send(t.data) + idle(g) + rx(t.ack) + rx(g + t.data) + send(t.ack);
                let tx_fail = send(t.data) + idle(g + t.ack + t.guard) + rx(2.0 * g + t.data + t.ack + t.guard);
                let tx_partial = tx_ok + idle(t.guard);
                Self {
                    source_wake: StepCost::new(src_ok + woken, src_fail + woken_lost, src_fail),
                    relay_wake: StepCost::new(
                        relay_ok + woken + holder_ok,
                        relay_fail + woken_lost + holder_fail,
                        relay_fail + holder_fail,
                    ),
                    relayed_source_wake: StepCost::new(src_ok + woken, src_fail + woken_lost, src_fail),
                    transfer: StepCost::new(tx_ok, tx_partial, tx_fail),
                    wake_listener: StepCost::new(rx(relay), rx(relay + t.guard), rx(relay + t.guard)),
                    transfer_listener: StepCost::new(
                        rx(2.0 * g + t.data + t.ack),
                        rx(2.0 * g + t.data + t.ack + t.guard),
                        rx(2.0 * g + t.data + t.ack + t.guard),
                    ),
                }
            }
            Protocol::Naive | Protocol::CtpWur => {
                let wake = rx(t.lbt) + wuc + idle(t.x);
                let nt = 2.0 * g + t.data + t.ack;
                let tx_ok = send(t.data) + idle(g) + rx(t.ack) + rx(g + t.data) + send(t.ack);
                let tx_void = send(t.data) + idle(g + t.ack + t.guard);
                let tx_fail = tx_void + rx(nt + t.guard);
                let tx_partial = tx_ok + idle(t.guard);
                let relay_ok = idle(g) + wuc + rx(t.x);
                let relay_fail = relay_ok + rx(nt + t.guard);
                let src_wait = idle(g + t.wuc + t.x);
                Self {
                    source_wake: StepCost::new(wake, wake + tx_fail, wake + tx_void),
                    relay_wake: StepCost::new(relay_ok + src_wait, relay_fail + src_wait + tx_void, relay_fail + src_wait + tx_void),
                    relayed_source_wake: StepCost::new(wake, wake + src_wait + 2.0 * tx_void, wake + src_wait + 2.0 * tx_void),
                    transfer: StepCost::new(tx_ok, tx_partial, tx_fail),
                    wake_listener: StepCost::default(),
                    transfer_listener: StepCost::new(rx(nt), rx(nt + t.guard), rx(nt + t.guard)),
                }
            }
        }
    }

    fn all(&self) -> [StepCost; 6] {
        [self.source_wake, self.relay_wake, self.relayed_source_wake, self.transfer, self.wake_listener, self.transfer_listener]
    }

    pub fn validate(&self) -> bool {
        self.all().iter().all(StepCost::non_negative)
    }

    /// A failed step never takes less than a successful one.
    pub fn failures_cost_more(&self) -> bool {
        self.all().iter().all(StepCost::fail_not_cheaper)
    }
}

/// Durations of one exchange, in µs.
struct Timeline {
    g: f64,
    x: f64,
    lbt: f64,
    guard: f64,
    cal: f64,
    wuc: f64,
    ack: f64,
    req: f64,
    data: f64,
}

impl Timeline {
    fn new(p: &ProtocolParams, payload: usize) -> Self {
        let r = &p.radio;
        let data = match p.protocol {
            Protocol::Trome => r.routed_data_us(payload),
            _ => r.mac_data_us(payload),
        };
        Self {
            g: p.timing.turnaround_us as f64,
            x: p.timing.wake_latency_us as f64,
            lbt: p.timing.lbt_us as f64,
            guard: p.timing.guard_us as f64,
            cal: r.calibration_us as f64,
            wuc: p.wuc_us() as f64,
            ack: r.mac_packet_us as f64,
            req: r.routing_packet_us as f64,
            data: data as f64,
        }
    }
}

/// Inputs of a chain that do not depend on the cost unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParams {
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub ttl: u8,
    /// Main-radio packets a wake-up step depends on.
    pub wake_exponent: u32,
}

impl ChainParams {
    pub fn new(protocol: Protocol, m: usize, p: f64, q: f64) -> Self {
        Self { m, p, q, ttl: 3, wake_exponent: default_wake_exponent(protocol) }
    }

    fn check(&self) -> Result<(), MarkovError> {
        let ok = |v: f64| v > 0.0 && v <= 1.0;
        if !ok(self.p) || !ok(self.q) {
            return Err(MarkovError::DegenerateProbability { p: self.p, q: self.q });
        }
        if self.m < 2 {
            return Err(MarkovError::TooFewNodes(self.m));
        }
        if self.m > 250 {
            return Err(MarkovError::TooFewNodes(self.m));
        }
        if self.ttl == 0 {
            return Err(MarkovError::ZeroTtl);
        }
        Ok(())
    }

    fn wake_probs(&self) -> [f64; 3] {
        let s = self.p * powi(self.q, self.wake_exponent);
        [s, self.p - s, 1.0 - self.p]
    }

    fn transfer_probs(&self) -> [f64; 3] {
        [self.q * self.q, self.q * (1.0 - self.q), 1.0 - self.q]
    }
}

pub(crate) fn powi(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, _| acc * x)
}

fn abs(x: f64) -> f64 {
    if x < 0.0 {
        -x
    } else {
        x
    }
}

/// One transition group: outcomes with probabilities, costs and successors.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub probs: [f64; 3],
    pub cost: StepCost,
    pub next: [MetaState; 3],
}

/// `A·x = b`, one row per transient meta-state.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSystem {
    pub protocol: Protocol,
    pub variables: Vec<MetaState>,
    pub transitions: Vec<Transition>,
    /// Row-major, `n × n`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl ExpectationSystem {
    fn assemble(protocol: Protocol, start: MetaState, step: impl Fn(MetaState) -> Transition) -> Self {
        let mut index = BTreeMap::new();
        let mut variables = Vec::new();
        let mut transitions = Vec::new();
        let mut todo = VecDeque::from([start]);
        index.insert(start, 0usize);
        variables.push(start);
        while let Some(s) = todo.pop_front() {
            let tr = step(s);
            for &n in &tr.next {
                if n != MetaState::Delivered && !index.contains_key(&n) {
                    index.insert(n, variables.len());
                    variables.push(n);
                    todo.push_back(n);
                }
            }
            transitions.push((s, tr));
        }
        transitions.sort_by_key(|(s, _)| index[s]);
        let n = variables.len();
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for (row, (_, tr)) in transitions.iter().enumerate() {
            a[row * n + row] += 1.0;
            let costs = [tr.cost.success, tr.cost.partial, tr.cost.fail];
            for ((prob, cost), next) in tr.probs.iter().zip(costs).zip(&tr.next) {
                b[row] += prob * cost;
                if let Some(&col) = index.get(next) {
                    a[row * n + col] -= prob;
                }
            }
        }
        Self { protocol, variables, transitions: transitions.into_iter().map(|(_, t)| t).collect(), a, b }
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, s: MetaState) -> Option<usize> {
        self.variables.iter().position(|&v| v == s)
    }
}

/// T-ROME: the wake-up chain grows from the holder until it reaches the sink
/// or the TTL, then data skips to the farthest awake node.
pub fn build_trome(chain: &ChainParams, costs: &CostConstants) -> Result<ExpectationSystem, MarkovError> {
    chain.check()?;
    let m = chain.m as u8;
    let ttl = chain.ttl;
    let wake = chain.wake_probs();
    let xfer = chain.transfer_probs();
    let step = |s: MetaState| match s {
        MetaState::W { msg_at: i, waker: j, target } => {
            let holder_restart = MetaState::W { msg_at: i, waker: i, target: i + 1 };
            let chain_ends = target == m || target - i >= ttl;
            let ok = if chain_ends {
                MetaState::T { from: i, to: target }
            } else {
                MetaState::W { msg_at: i, waker: target, target: target + 1 }
            };
            if i == j {
                Transition { probs: wake, cost: costs.source_wake, next: [ok, holder_restart, holder_restart] }
            } else {
                let fallback = MetaState::T { from: i, to: j };
                let listeners = f64::from(j - i - 1);
                let cost = costs.relay_wake.plus(costs.wake_listener, listeners);
                Transition { probs: wake, cost, next: [ok, fallback, fallback] }
            }
        }
        MetaState::T { from: i, to: j } => {
            let ok = if j == m { MetaState::Delivered } else { MetaState::W { msg_at: j, waker: j, target: j + 1 } };
            let restart = MetaState::W { msg_at: i, waker: i, target: i + 1 };
            let cost = costs.transfer.plus(costs.transfer_listener, f64::from(j - i - 1));
            Transition { probs: xfer, cost, next: [ok, restart, restart] }
        }
        MetaState::Delivered => Transition { probs: [1.0, 0.0, 0.0], cost: StepCost::default(), next: [s; 3] },
    };
    Ok(ExpectationSystem::assemble(Protocol::Trome, MetaState::start(), step))
}

/// Hop by hop: wake the neighbour, send it the data, repeat.
pub fn build_naive(chain: &ChainParams, costs: &CostConstants) -> Result<ExpectationSystem, MarkovError> {
    chain.check()?;
    let m = chain.m as u8;
    let wake = chain.wake_probs();
    let xfer = chain.transfer_probs();
    let step = |s: MetaState| match s {
        MetaState::W { msg_at: i, .. } => {
            let again = s;
            Transition { probs: wake, cost: costs.source_wake, next: [MetaState::T { from: i, to: i + 1 }, again, again] }
        }
        MetaState::T { from: i, to: j } => {
            let ok = if j == m { MetaState::Delivered } else { MetaState::W { msg_at: j, waker: j, target: j + 1 } };
            let restart = MetaState::W { msg_at: i, waker: i, target: i + 1 };
            Transition { probs: xfer, cost: costs.transfer, next: [ok, restart, restart] }
        }
        MetaState::Delivered => Transition { probs: [1.0, 0.0, 0.0], cost: StepCost::default(), next: [s; 3] },
    };
    Ok(ExpectationSystem::assemble(Protocol::Naive, MetaState::start(), step))
}

/// At most one relay per data transmission: node `i` wakes `i+1`, which
/// wakes `i+2`; data goes to `i+2` and falls back to `i+1`.
pub fn build_ctpwur(chain: &ChainParams, costs: &CostConstants) -> Result<ExpectationSystem, MarkovError> {
    chain.check()?;
    let m = chain.m as u8;
    let wake = chain.wake_probs();
    let xfer = chain.transfer_probs();
    let holder = |i: u8| MetaState::W { msg_at: i, waker: i, target: i + 1 };
    let arrived = move |j: u8| if j == m { MetaState::Delivered } else { holder(j) };
    let step = |s: MetaState| match s {
        // Single hop to the sink.
        MetaState::W { msg_at: i, waker, .. } if waker == i && i + 1 == m => {
            Transition { probs: wake, cost: costs.source_wake, next: [MetaState::T { from: i, to: i + 1 }, s, s] }
        }
        MetaState::W { msg_at: i, waker, .. } if waker == i => {
            let relay_awake = MetaState::W { msg_at: i, waker: i + 1, target: i + 2 };
            Transition { probs: wake, cost: costs.relayed_source_wake, next: [relay_awake, s, s] }
        }
        MetaState::W { msg_at: i, .. } => {
            let fallback = MetaState::T { from: i, to: i + 1 };
            Transition { probs: wake, cost: costs.relay_wake, next: [MetaState::T { from: i, to: i + 2 }, fallback, fallback] }
        }
        MetaState::T { from: i, to: j } if j == i + 2 => {
            let fallback = MetaState::T { from: i, to: i + 1 };
            let cost = costs.transfer.plus(costs.transfer_listener, 1.0);
            Transition { probs: xfer, cost, next: [arrived(j), fallback, fallback] }
        }
        MetaState::T { from: i, to: j } => {
            Transition { probs: xfer, cost: costs.transfer, next: [arrived(j), holder(i), holder(i)] }
        }
        MetaState::Delivered => Transition { probs: [1.0, 0.0, 0.0], cost: StepCost::default(), next: [s; 3] },
    };
    Ok(ExpectationSystem::assemble(Protocol::CtpWur, MetaState::start(), step))
}

pub fn build(protocol: Protocol, chain: &ChainParams, costs: &CostConstants) -> Result<ExpectationSystem, MarkovError> {
    match protocol {
        Protocol::Trome => build_trome(chain, costs),
        Protocol::Naive => build_naive(chain, costs),
        Protocol::CtpWur => build_ctpwur(chain, costs),
    }
}

/// Solves `A·x = b` and returns the expected cost from `start`.
pub fn solve(system: &ExpectationSystem, start: MetaState) -> Result<f64, MarkovError> {
    let row = system.index_of(start).ok_or(MarkovError::UnknownState(start))?;
    Ok(solve_all(system)?[row])
}

/// Gaussian elimination with partial pivoting.
pub fn solve_all(system: &ExpectationSystem) -> Result<Vec<f64>, MarkovError> {
    let n = system.len();
    let mut a = system.a.clone();
    let mut b = system.b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| abs(a[x * n + col]).total_cmp(&abs(a[y * n + col])))
            .ok_or(MarkovError::SingularSystem)?;
        if abs(a[pivot * n + col]) < 1e-12 {
            return Err(MarkovError::SingularSystem);
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    // Normwise backward error, so badly conditioned but correctly solved
    // systems (very lossy links) are accepted.
    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |acc, e| acc.max(abs(*e)));
    let a_norm = (0..n)
        .map(|r| (0..n).map(|k| abs(system.a[r * n + k])).sum::<f64>())
        .fold(0.0f64, f64::max);
    let scale = a_norm * inf_norm(&x) + inf_norm(&system.b);
    let residual = (0..n)
        .map(|r| abs((0..n).map(|k| system.a[r * n + k] * x[k]).sum::<f64>() - system.b[r]))
        .fold(0.0f64, f64::max);
    if residual.is_nan() || residual > 1e-9 * scale.max(f64::MIN_POSITIVE) {
        return Err(MarkovError::Residual { residual });
    }
    Ok(x)
}

/// Expected cost of delivering `n` packets. T-ROME sets the link up once and
/// sends all packets over it; the other protocols repeat everything per
/// packet.
pub fn multi_packet_cost(
    protocol: Protocol,
    chain: &ChainParams,
    costs: &CostConstants,
    n: usize,
) -> Result<f64, MarkovError> {
    if n == 0 {
        return Err(MarkovError::ZeroPackets);
    }
    match protocol {
        Protocol::Trome => {
            let scaled = CostConstants {
                transfer: costs.transfer.scaled_success(n as f64),
                transfer_listener: costs.transfer_listener,
                ..*costs
            };
            solve(&build_trome(chain, &scaled)?, MetaState::start())
        }
        _ => Ok(n as f64 * solve(&build(protocol, chain, costs)?, MetaState::start())?),
    }
}

/// Time and energy expectations for one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub time_us: f64,
    pub energy_mj: f64,
}

pub fn expected(
    params: &ProtocolParams,
    model: &EnergyModel,
    chain: &ChainParams,
    payload: usize,
    n: usize,
) -> Result<Expectation, MarkovError> {
    let protocol = params.protocol;
    let time = CostConstants::time(params, payload);
    let energy = CostConstants::energy(params, model, payload);
    Ok(Expectation {
        time_us: multi_packet_cost(protocol, chain, &time, n)?,
        energy_mj: multi_packet_cost(protocol, chain, &energy, n)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn time(protocol: Protocol) -> CostConstants {
        CostConstants::time(&ProtocolParams::new(protocol), 100)
    }

    #[test]
    fn two_node_trome_has_two_variables() {
        let chain = ChainParams::new(Protocol::Trome, 2, 0.9, 0.9);
        let sys = build_trome(&chain, &time(Protocol::Trome)).unwrap();
        assert_eq!(sys.variables, [MetaState::start(), MetaState::T { from: 1, to: 2 }]);
    }

    #[test]
    fn lossless_trome_is_the_success_path() {
        let p = ProtocolParams::new(Protocol::Trome);
        let c = time(Protocol::Trome);
        let chain = ChainParams::new(Protocol::Trome, 4, 1.0, 1.0);
        let got = solve(&build_trome(&chain, &c).unwrap(), MetaState::start()).unwrap();
        let want = (p.source_step_us() + 2 * p.relay_step_us()) as f64 + c.transfer.success;
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn naive_scales_with_hops() {
        let c = time(Protocol::Naive);
        let e = |m| solve(&build_naive(&ChainParams::new(Protocol::Naive, m, 0.8, 0.9), &c).unwrap(), MetaState::start()).unwrap();
        assert!((e(5) - 4.0 * e(2)).abs() < 1e-6 * e(5));
    }

    #[test]
    fn ctp_equals_naive_on_two_nodes() {
        for (p, q) in [(1.0, 1.0), (0.75, 0.97)] {
            let n = solve(&build_naive(&ChainParams::new(Protocol::Naive, 2, p, q), &time(Protocol::Naive)).unwrap(), MetaState::start()).unwrap();
            let c = solve(&build_ctpwur(&ChainParams::new(Protocol::CtpWur, 2, p, q), &time(Protocol::CtpWur)).unwrap(), MetaState::start()).unwrap();
            assert!((n - c).abs() < 1e-9 * n);
        }
    }

    #[test]
    fn rejects_zero_probability() {
        let chain = ChainParams::new(Protocol::Trome, 3, 0.0, 1.0);
        assert!(matches!(build_trome(&chain, &time(Protocol::Trome)), Err(MarkovError::DegenerateProbability { .. })));
    }

    #[test]
    fn single_variable_system() {
        let sys = ExpectationSystem {
            protocol: Protocol::Naive,
            variables: vec![MetaState::start()],
            transitions: Vec::new(),
            a: vec![1.0],
            b: vec![7.5],
        };
        assert_eq!(solve(&sys, MetaState::start()).unwrap(), 7.5);
    }

    #[test]
    fn cost_constants_are_ordered() {
        for proto in Protocol::ALL {
            let p = ProtocolParams::new(proto);
            let t = CostConstants::time(&p, 100);
            assert!(t.validate() && t.failures_cost_more());
            assert!(CostConstants::energy(&p, &EnergyModel::default(), 100).validate());
        }
    }
}
