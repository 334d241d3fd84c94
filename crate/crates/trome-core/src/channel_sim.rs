//! Seeded discrete-event simulation of a line of dual-radio nodes.
//!
//! The wake-up radio reaches adjacent nodes only, the main radio reaches
//! every node the topology allows. Each node runs a [`NodeState`] machine;
//! the simulator executes its actions on a virtual clock, tracks radio
//! states for energy accounting, and decides frame losses.

use alloc::collections::{BTreeSet, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::airtime_energy::{
    frame_bytes, Activity, EnergyModel, RadioState, RadioStateInterval,
};
use crate::frame_codec::{decode_wakeup, Frame, Stack, WakeUpAddress, RELAY_FLAG};
use crate::protocol_engine::{
    Action, Event, MachineState, NodeState, Protocol, ProtocolParams, RadioMode, Route, TimerId,
    QUEUE_CAPACITY,
};

/// Id of the sink in [`Topology::line`]; ids grow toward the source.
pub const LINE_SINK_ID: u8 = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("a line needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("line of {0} nodes does not fit the address space")]
    TooManyNodes(usize),
    #[error("node id {0} appears twice")]
    DuplicateId(u8),
    #[error("wake-up reach must be within data reach and link neighbours")]
    BadReach,
    #[error("payload of {got} bytes outside 4..={max}")]
    PayloadSize { got: usize, max: usize },
    #[error("packet count {0} outside 1..={QUEUE_CAPACITY}")]
    PacketCount(usize),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("source index {0} is not a node of the line")]
    BadSource(usize),
    #[error("TTL must be at least 1")]
    ZeroTtl,
}

/// Nodes in line order, source first and sink last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_ids: Vec<u8>,
    wakeup_reach: Vec<Vec<bool>>,
    data_reach: Vec<Vec<bool>>,
}

impl Topology {
    /// `m` nodes with ids counting down to [`LINE_SINK_ID`] at the sink.
    pub fn line(m: usize) -> Result<Self, SimError> {
        if m < 2 {
            return Err(SimError::TooFewNodes(m));
        }
        if m > 100 {
            return Err(SimError::TooManyNodes(m));
        }
        let ids = (0..m).rev().map(|k| LINE_SINK_ID + k as u8).collect();
        Self::from_ids(ids)
    }

    pub fn from_ids(node_ids: Vec<u8>) -> Result<Self, SimError> {
        let m = node_ids.len();
        if m < 2 {
            return Err(SimError::TooFewNodes(m));
        }
        let mut seen = BTreeSet::new();
        for &id in &node_ids {
            if !seen.insert(id) {
                return Err(SimError::DuplicateId(id));
            }
            if id & RELAY_FLAG != 0 {
                return Err(SimError::TooManyNodes(m));
            }
        }
        let wakeup_reach = (0..m).map(|i| (0..m).map(|j| i.abs_diff(j) == 1).collect()).collect();
        let data_reach = (0..m).map(|i| (0..m).map(|j| i != j).collect()).collect();
        Ok(Self { node_ids, wakeup_reach, data_reach })
    }

    /// Limits the main radio to `hops` positions along the line.
    pub fn with_data_range(mut self, hops: usize) -> Result<Self, SimError> {
        let m = self.len();
        self.data_reach = (0..m).map(|i| (0..m).map(|j| i != j && i.abs_diff(j) <= hops).collect()).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let m = self.len();
        for i in 0..m {
            for j in 0..m {
                if self.wakeup_reach[i][j] && !self.data_reach[i][j] {
                    return Err(SimError::BadReach);
                }
            }
            if i + 1 < m && !self.wakeup_reach[i][i + 1] {
                return Err(SimError::BadReach);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[u8] {
        &self.node_ids
    }

    pub fn index_of(&self, id: u8) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == id)
    }

    /// Whether a wake-up call sent at position `from` reaches position `to`.
    pub fn wakes(&self, from: usize, to: usize) -> bool {
        self.wakeup_reach[from][to]
    }

    /// Whether a main-radio frame sent at position `from` reaches `to`.
    pub fn hears(&self, from: usize, to: usize) -> bool {
        self.data_reach[from][to]
    }

    pub fn route(&self, i: usize) -> Route {
        let m = self.len();
        Route {
            prev: i.checked_sub(1).map(|k| self.node_ids[k]),
            next: self.node_ids.get(i + 1).copied(),
            second: self.node_ids.get(i + 2).copied(),
            sink: self.node_ids[m - 1],
            hops_to_sink: (m - 1 - i) as u8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// Every packet is lost independently.
    PerPacket,
    /// One draw per wake-up step or data transfer, as in the Markov model.
    PerMetastep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    /// Success of a wake-up signal.
    pub p: f64,
    /// Success of a main-radio packet.
    pub q: f64,
    pub mode: LossMode,
    /// Main-radio packets folded into a wake-up step; `None` uses the
    /// protocol default.
    pub wake_exponent: Option<u32>,
}

impl LossModel {
    pub fn lossless() -> Self {
        Self::new(1.0, 1.0)
    }

    pub fn new(p: f64, q: f64) -> Self {
        Self { p, q, mode: LossMode::PerMetastep, wake_exponent: None }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for v in [self.p, self.q] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Probability(v));
            }
        }
        Ok(())
    }

    pub fn wake_exponent_for(&self, protocol: Protocol) -> u32 {
        self.wake_exponent.unwrap_or(default_wake_exponent(protocol))
    }
}

/// Main-radio packets whose success a wake-up step depends on.
pub fn default_wake_exponent(protocol: Protocol) -> u32 {
    match protocol {
        Protocol::Trome => 5,
        Protocol::Naive | Protocol::CtpWur => 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// A wake-up step depending on `q_exponent` main-radio packets.
    WakeupMeta { q_exponent: u32 },
    /// A data packet and its acknowledgement.
    DataMeta,
    /// One packet succeeding with probability `p` (wake-up) or `q`.
    SinglePacket { wakeup: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Full,
    /// The first `k` packets went through, the next one did not.
    Partial(u32),
    Fail,
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn bernoulli(rng: &mut ChaCha8Rng, prob: f64) -> bool {
    uniform(rng) < prob
}

/// Samples the outcome of one step: the wake-up signal first, then each
/// main-radio packet in order.
pub fn draw_success(loss: &LossModel, kind: StepKind, rng: &mut ChaCha8Rng) -> Outcome {
    match kind {
        StepKind::WakeupMeta { q_exponent } => {
            if !bernoulli(rng, loss.p) {
                return Outcome::Fail;
            }
            for k in 0..q_exponent {
                if !bernoulli(rng, loss.q) {
                    return Outcome::Partial(k);
                }
            }
            Outcome::Full
        }
        StepKind::DataMeta => {
            if !bernoulli(rng, loss.q) {
                Outcome::Fail
            } else if !bernoulli(rng, loss.q) {
                Outcome::Partial(1)
            } else {
                Outcome::Full
            }
        }
        StepKind::SinglePacket { wakeup } => {
            let prob = if wakeup { loss.p } else { loss.q };
            if bernoulli(rng, prob) {
                Outcome::Full
            } else {
                Outcome::Fail
            }
        }
    }
}

/// Extra traffic injected at another node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtraSource {
    /// Position in the line (0 = first node).
    pub index: usize,
    pub packets: usize,
    pub start_us: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub topology: Topology,
    pub params: ProtocolParams,
    pub energy: EnergyModel,
    pub loss: LossModel,
    /// Packets submitted at the first node at time 0.
    pub packets: usize,
    pub payload_bytes: usize,
    pub extra_sources: Vec<ExtraSource>,
    /// Virtual time after which the run is cut off.
    pub horizon_us: u64,
    /// Keep per-event trace records (statistics are always kept).
    pub record: bool,
}

impl SimConfig {
    pub fn new(topology: Topology, protocol: Protocol) -> Self {
        Self {
            topology,
            params: ProtocolParams::new(protocol),
            energy: EnergyModel::default(),
            loss: LossModel::lossless(),
            packets: 1,
            payload_bytes: 100,
            extra_sources: Vec::new(),
            horizon_us: 600_000_000,
            record: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.topology.validate()?;
        self.loss.validate()?;
        let max = self.params.protocol.max_payload();
        if !(4..=max).contains(&self.payload_bytes) {
            return Err(SimError::PayloadSize { got: self.payload_bytes, max });
        }
        if self.params.ttl == 0 {
            return Err(SimError::ZeroTtl);
        }
        for (n, i) in core::iter::once((self.packets, 0)).chain(self.extra_sources.iter().map(|s| (s.packets, s.index))) {
            if !(1..=QUEUE_CAPACITY).contains(&n) {
                return Err(SimError::PacketCount(n));
            }
            if i + 1 >= self.topology.len() {
                return Err(SimError::BadSource(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceKind {
    Tx,
    Rx,
    Drop,
    State,
    Deliver,
    Fail,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Tx => "TX",
            TraceKind::Rx => "RX",
            TraceKind::Drop => "DROP",
            TraceKind::State => "STATE",
            TraceKind::Deliver => "DELIVER",
            TraceKind::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSummary {
    pub kind: &'static str,
    pub src: u8,
    pub dest: Option<u8>,
    pub bytes: usize,
    pub airtime_us: u64,
    /// TTL of a routing request.
    pub ttl: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: u64,
    pub node: u8,
    pub kind: TraceKind,
    pub frame: Option<FrameSummary>,
    /// Machine state for STATE records, drop reason for DROP records, `lbt`
    /// for transmissions sent right after an idle channel probe.
    pub note: &'static str,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub submitted: usize,
    /// Distinct payloads that reached the sink.
    pub delivered: usize,
    pub duplicates: usize,
    pub rejected: usize,
    pub permanent_failures: usize,
    /// Time the last distinct payload reached the sink.
    pub delivery_time_us: Option<u64>,
    /// End of the sink's acknowledgement of the last distinct payload.
    pub completion_time_us: Option<u64>,
    /// Payload tags in the order the sink received them.
    pub delivered_ids: Vec<u32>,
    pub control_bits: u64,
    pub data_bits_delivered: u64,
    pub transmissions: usize,
    /// Pairs of transmissions that overlapped at a common receiver.
    pub collisions: usize,
    pub end_time_us: u64,
    pub timed_out: bool,
    /// Nodes still outside SLEEP when the run ended.
    pub awake_at_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<TraceRecord>,
    pub intervals: Vec<RadioStateInterval>,
    pub stats: SimStats,
}

impl SimTrace {
    pub fn delivery_time_us(&self) -> Option<u64> {
        self.stats.delivery_time_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Off,
    Idle,
    Sniff,
    Await,
    Rx,
    /// Preparing or sending a frame.
    Busy,
}

impl Mode {
    fn listening(self) -> bool {
        matches!(self, Mode::Sniff | Mode::Await | Mode::Rx)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Radio(RadioMode),
    Prep { activity: Activity },
    TxStart { frame: Frame, activity: Activity },
    CalEnd { wuc: bool, activity: Activity },
    TxEnd { tx: usize },
    ProbeStart,
    ProbeEnd { start: u64 },
    BackoffStart { duration: u64 },
    Sleep,
}

struct Node {
    engine: NodeState,
    mode: Mode,
    mode_since: u64,
    /// Last closed listening interval.
    prev_listen: (u64, u64),
    program: VecDeque<(u64, Op)>,
    cursor: u64,
    timers: [Option<u64>; 5],
    seg: (RadioState, Activity, u64),
    sniff_until: Option<u64>,
    /// End of the last probe that found the channel idle.
    idle_probe_end: Option<u64>,
    rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Run(usize),
    Timer(usize, TimerId, u64),
    BackoffCheck(usize, u64, u64),
    Wake(usize, u8),
    SniffEnd(usize, u64),
}

struct Tx {
    src: usize,
    start: u64,
    end: u64,
    frame: Frame,
    bytes: Vec<u8>,
    candidates: Vec<usize>,
}

fn timer_slot(id: TimerId) -> usize {
    match id {
        TimerId::Step => 0,
        TimerId::Ack => 1,
        TimerId::Listen => 2,
        TimerId::Wait => 3,
        TimerId::Backoff => 4,
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    now: u64,
    seq: u64,
    gen: u64,
    queue: BinaryHeap<Reverse<(u64, usize, u64, Ev)>>,
    nodes: Vec<Node>,
    txs: Vec<Tx>,
    rng: ChaCha8Rng,
    records: Vec<TraceRecord>,
    intervals: Vec<RadioStateInterval>,
    stats: SimStats,
    seen: BTreeSet<u32>,
    drop_next_wuc_ack: Vec<bool>,
    stack: Stack,
    awaiting_sink_ack: bool,
}

/// Runs one simulation. The same configuration and seed always give the
/// same trace.
pub fn run(cfg: &SimConfig, seed: u64) -> Result<SimTrace, SimError> {
    cfg.validate()?;
    let topo = &cfg.topology;
    let m = topo.len();
    let nodes = (0..m)
        .map(|i| Node {
            engine: NodeState::new(topo.node_ids[i], topo.route(i)),
            mode: Mode::Off,
            mode_since: 0,
            prev_listen: (0, 0),
            program: VecDeque::new(),
            cursor: 0,
            timers: [None; 5],
            seg: (RadioState::Sleep, Activity::Sleep, 0),
            sniff_until: None,
            idle_probe_end: None,
            rank: m - 1 - i,
        })
        .collect();
    let mut sim = Sim {
        cfg,
        now: 0,
        seq: 0,
        gen: 0,
        queue: BinaryHeap::new(),
        nodes,
        txs: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        records: Vec::new(),
        intervals: Vec::new(),
        stats: SimStats::default(),
        seen: BTreeSet::new(),
        drop_next_wuc_ack: vec![false; m],
        stack: if cfg.params.protocol == Protocol::Trome { Stack::Routed } else { Stack::Plain },
        awaiting_sink_ack: false,
    };

    let mut submissions = vec![(0u64, 0usize, cfg.packets)];
    submissions.extend(cfg.extra_sources.iter().map(|s| (s.start_us, s.index, s.packets)));
    submissions.sort();
    let mut pending_submits = VecDeque::new();
    for (k, &(t, i, n)) in submissions.iter().enumerate() {
        let payloads = (0..n).map(|j| make_payload(((k as u32) << 16) | j as u32, cfg.payload_bytes)).collect::<Vec<_>>();
        sim.stats.submitted += n;
        pending_submits.push_back((t, i, payloads));
    }

    loop {
        let next_ev = sim.queue.peek().map(|Reverse((t, ..))| *t);
        let next_submit = pending_submits.front().map(|(t, ..)| *t);
        let take_submit = match (next_submit, next_ev) {
            (Some(s), Some(e)) => s <= e,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if take_submit {
            let (t, i, payloads) = pending_submits.pop_front().unwrap_or_default();
            sim.now = t;
            sim.deliver(i, Event::AppSubmit(payloads));
            continue;
        }
        let Some(Reverse((t, _, _, ev))) = sim.queue.pop() else { break };
        if t > cfg.horizon_us {
            sim.stats.timed_out = true;
            break;
        }
        sim.now = t;
        sim.handle(ev);
    }
    Ok(sim.finish())
}

fn make_payload(id: u32, len: usize) -> Vec<u8> {
    let mut p = id.to_be_bytes().to_vec();
    p.extend((4..len).map(|k| (id as u8).wrapping_mul(31).wrapping_add(k as u8)));
    p
}

fn payload_id(p: &[u8]) -> Option<u32> {
    Some(u32::from_be_bytes(p.get(..4)?.try_into().ok()?))
}

impl Sim<'_> {
    fn push(&mut self, t: u64, rank: usize, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((t, rank, self.seq, ev)));
    }

    fn record(&mut self, node: usize, kind: TraceKind, frame: Option<FrameSummary>, note: &'static str) {
        if self.cfg.record {
            let id = self.cfg.topology.node_ids[node];
            self.records.push(TraceRecord { time_us: self.now, node: id, kind, frame, note });
        }
    }

    fn set_seg(&mut self, i: usize, state: RadioState, activity: Activity) {
        let now = self.now;
        let n = &mut self.nodes[i];
        let (s, a, start) = n.seg;
        if (s, a) == (state, activity) {
            return;
        }
        if now > start {
            self.intervals.push(RadioStateInterval {
                node_id: n.engine.node_id,
                state: s,
                activity: a,
                start_us: start,
                end_us: now,
            });
        }
        n.seg = (state, activity, now);
    }

    fn set_mode(&mut self, i: usize, mode: Mode) {
        let now = self.now;
        let n = &mut self.nodes[i];
        if n.mode.listening() && n.mode != mode {
            n.prev_listen = (n.mode_since, now);
        }
        if n.mode != mode {
            n.mode = mode;
            n.mode_since = now;
        }
        n.sniff_until = None;
        let (state, activity) = match mode {
            Mode::Off => (RadioState::Sleep, Activity::Sleep),
            Mode::Idle | Mode::Sniff => (RadioState::DelayIdle, Activity::Delay),
            Mode::Await => (RadioState::DelayIdle, Activity::Receive),
            Mode::Rx => (RadioState::Rx, Activity::Receive),
            Mode::Busy => return,
        };
        self.set_seg(i, state, activity);
    }

    fn deliver(&mut self, i: usize, event: Event) {
        let before = self.nodes[i].engine.state;
        let (next, actions) = self.nodes[i].engine.step(&event, &self.cfg.params);
        self.nodes[i].engine = next;
        let after = self.nodes[i].engine.state;
        if after != before {
            self.record(i, TraceKind::State, None, after.as_str());
        }
        self.execute(i, actions);
    }

    fn execute(&mut self, i: usize, actions: Vec<Action>) {
        let p = self.cfg.params;
        for action in actions {
            let c = self.nodes[i].cursor.max(self.now);
            match action {
                Action::SetRadio(mode) => self.nodes[i].program.push_back((c, Op::Radio(mode))),
                Action::ProbeChannel => {
                    let n = &mut self.nodes[i];
                    n.program.push_back((c, Op::ProbeStart));
                    n.program.push_back((c + p.timing.lbt_us, Op::ProbeEnd { start: c }));
                    n.cursor = c + p.timing.lbt_us;
                }
                Action::Backoff(duration) => {
                    self.nodes[i].program.push_back((c, Op::BackoffStart { duration }));
                }
                Action::SendWuc { target, relay, prep_us } => {
                    let mut wuc = p.wuc_frame(target);
                    if relay {
                        wuc.address = WakeUpAddress::new(target | RELAY_FLAG);
                    }
                    self.queue_tx(i, c, prep_us, Frame::Wuc(wuc), Activity::Wuc);
                }
                Action::SendFrame { frame, prep_us } => self.queue_tx(i, c, prep_us, frame, Activity::Send),
                Action::SetTimer(id, d) => {
                    self.gen += 1;
                    let g = self.gen;
                    self.nodes[i].timers[timer_slot(id)] = Some(g);
                    let rank = self.nodes[i].rank;
                    self.push(self.now + d, rank, Ev::Timer(i, id, g));
                }
                Action::CancelTimer(id) => self.nodes[i].timers[timer_slot(id)] = None,
                Action::EnterSleep => {
                    self.nodes[i].timers = [None; 5];
                    self.nodes[i].program.push_back((c, Op::Sleep));
                }
                Action::DeliverToApp(payloads) => {
                    for pl in payloads {
                        self.app_delivery(i, &pl);
                    }
                }
                Action::Rejected(n) => self.stats.rejected += n,
                Action::PermanentFailure(_) => {
                    self.stats.permanent_failures += 1;
                    self.record(i, TraceKind::Fail, None, "retry cap");
                }
            }
        }
        self.run_program(i);
    }

    fn queue_tx(&mut self, i: usize, c: u64, prep: u64, frame: Frame, activity: Activity) {
        let air = self.cfg.params.radio.frame_airtime(&frame);
        let n = &mut self.nodes[i];
        if prep > 0 {
            n.program.push_back((c, Op::Prep { activity }));
        }
        n.program.push_back((c + prep, Op::TxStart { frame, activity }));
        n.cursor = c + prep + air;
    }

    fn app_delivery(&mut self, i: usize, payload: &[u8]) {
        let id = payload_id(payload).unwrap_or(u32::MAX);
        if self.seen.insert(id) {
            self.stats.delivered += 1;
            self.stats.delivered_ids.push(id);
            self.stats.data_bits_delivered += 8 * payload.len() as u64;
            self.stats.delivery_time_us = Some(self.now);
            self.awaiting_sink_ack = true;
            self.record(i, TraceKind::Deliver, None, "new");
        } else {
            self.stats.duplicates += 1;
            self.record(i, TraceKind::Deliver, None, "duplicate");
        }
    }

    /// Runs the node's queued operations that are due, then schedules the
    /// next one.
    fn run_program(&mut self, i: usize) {
        while let Some(&(t, _)) = self.nodes[i].program.front() {
            if t > self.now {
                let rank = self.nodes[i].rank;
                self.push(t, rank, Ev::Run(i));
                return;
            }
            let (_, op) = self.nodes[i].program.pop_front().unwrap_or((0, Op::Sleep));
            self.apply_op(i, op);
        }
    }

    fn apply_op(&mut self, i: usize, op: Op) {
        match op {
            Op::Radio(mode) => {
                let mode = match mode {
                    RadioMode::Idle => Mode::Idle,
                    RadioMode::Sniff => Mode::Sniff,
                    RadioMode::Await => Mode::Await,
                    RadioMode::Rx => Mode::Rx,
                };
                self.set_mode(i, mode);
            }
            Op::Prep { activity } => {
                self.set_mode(i, Mode::Busy);
                self.set_seg(i, RadioState::DelayIdle, activity);
            }
            Op::TxStart { frame, activity } => self.start_tx(i, frame, activity),
            Op::CalEnd { wuc, activity } => {
                let state = if wuc { RadioState::TxWuc } else { RadioState::TxData };
                self.set_seg(i, state, activity);
            }
            Op::TxEnd { tx } => {
                self.set_mode(i, Mode::Idle);
                self.end_tx(tx);
            }
            Op::ProbeStart => self.set_mode(i, Mode::Rx),
            Op::ProbeEnd { start } => {
                let busy = self.channel_busy(i, start, self.now);
                self.nodes[i].idle_probe_end = (!busy).then_some(self.now);
                self.deliver(i, Event::ChannelProbed { busy });
            }
            Op::BackoffStart { duration } => {
                self.set_mode(i, Mode::Rx);
                self.gen += 1;
                let g = self.gen;
                self.nodes[i].timers[timer_slot(TimerId::Backoff)] = Some(g);
                let rank = self.nodes[i].rank;
                self.push(self.now + duration, rank, Ev::BackoffCheck(i, duration, g));
            }
            Op::Sleep => self.set_mode(i, Mode::Off),
        }
    }

    /// Whether another in-range node transmitted at any time in `[from, to]`.
    /// A frame ending exactly at `from` counts, so the receiver of an ACK
    /// defers to the node that sent it.
    fn channel_busy(&self, i: usize, from: u64, to: u64) -> bool {
        let reach = &self.cfg.topology.data_reach[i];
        self.txs.iter().rev().take_while(|t| t.end + 1_000_000 >= from).any(|t| {
            t.src != i && reach[t.src] && t.start <= to && t.end >= from
        })
    }

    /// End of the most recent in-range transmission started by `t`.
    fn last_busy_end(&self, i: usize, t: u64) -> Option<u64> {
        let reach = &self.cfg.topology.data_reach[i];
        self.txs
            .iter()
            .filter(|x| x.src != i && reach[x.src] && x.start <= t)
            .map(|x| x.end)
            .max()
    }

    fn summary(&self, src: usize, frame: &Frame, bytes: usize, air: u64) -> FrameSummary {
        let ttl = match frame {
            Frame::Routed { routing: crate::frame_codec::RoutingFrame::Req { ttl, .. }, .. } => Some(*ttl),
            _ => None,
        };
        FrameSummary {
            kind: frame.kind(),
            src: self.cfg.topology.node_ids[src],
            dest: frame.dest(),
            bytes,
            airtime_us: air,
            ttl,
        }
    }

    #[allow(clippy::needless_range_loop)]
    fn start_tx(&mut self, i: usize, frame: Frame, activity: Activity) {
        let p = self.cfg.params;
        let air = p.radio.frame_airtime(&frame);
        let start = self.now;
        let end = start + air;
        self.set_mode(i, Mode::Busy);
        self.set_seg(i, RadioState::Calibrate, activity);
        let wuc = matches!(frame, Frame::Wuc(_));
        let cal = p.radio.calibration_us.min(air);
        self.nodes[i].program.push_front((start + air, Op::TxEnd { tx: self.txs.len() }));
        self.nodes[i].program.push_front((start + cal, Op::CalEnd { wuc, activity }));

        let bytes = frame.encode().unwrap_or_default();
        self.stats.transmissions += 1;
        self.stats.control_bits += 8 * frame_bytes(&frame).0 as u64;
        let sum = self.summary(i, &frame, bytes.len(), air);
        let note = if self.nodes[i].idle_probe_end == Some(start) { "lbt" } else { "" };
        self.record(i, TraceKind::Tx, Some(sum), note);

        let reach = &self.cfg.topology.data_reach;
        let overlapping = self
            .txs
            .iter()
            .rev()
            .take_while(|t| t.end + 1_000_000 >= start)
            .filter(|t| t.end > start && t.src != i)
            .filter(|t| (0..self.nodes.len()).any(|r| r != i && r != t.src && reach[r][i] && reach[r][t.src]) || reach[t.src][i])
            .count();
        self.stats.collisions += overlapping;

        let dest = frame.dest();
        let mut candidates = Vec::new();
        if !wuc {
            for r in 0..self.nodes.len() {
                if r == i || !reach[r][i] {
                    continue;
                }
                let addressed = dest == Some(self.cfg.topology.node_ids[r]);
                match self.nodes[r].mode {
                    Mode::Rx => candidates.push(r),
                    Mode::Sniff | Mode::Await if addressed => {
                        candidates.push(r);
                        self.set_seg(r, RadioState::Rx, Activity::Receive);
                        self.nodes[r].sniff_until = Some(end);
                        let rank = self.nodes[r].rank;
                        self.push(end, rank, Ev::SniffEnd(r, end));
                    }
                    _ => {}
                }
            }
        }
        self.txs.push(Tx { src: i, start, end, frame, bytes, candidates });
    }

    fn listened_through(&self, r: usize, start: u64, end: u64) -> bool {
        let n = &self.nodes[r];
        (n.mode.listening() && n.mode_since <= start) || (n.prev_listen.0 <= start && n.prev_listen.1 >= end)
    }

    fn collided(&self, tx: usize, r: usize) -> bool {
        let t = &self.txs[tx];
        let reach = &self.cfg.topology.data_reach[r];
        self.txs.iter().enumerate().rev().take_while(|(_, o)| o.end + 1_000_000 >= t.start).any(|(k, o)| {
            k != tx && (o.src == r || reach[o.src]) && o.start < t.end && o.end > t.start
        })
    }

    /// Loss decision for the frame as a whole (meta-step mode) or for one
    /// receiver (per-packet mode).
    fn survives(&mut self, tx: usize, addressed: bool) -> bool {
        let loss = self.cfg.loss;
        let protocol = self.cfg.params.protocol;
        let t = &self.txs[tx];
        let src = t.src;
        match loss.mode {
            LossMode::PerPacket => {
                let wakeup = matches!(t.frame, Frame::Wuc(_));
                draw_success(&loss, StepKind::SinglePacket { wakeup }, &mut self.rng) == Outcome::Full
            }
            LossMode::PerMetastep => match &t.frame {
                Frame::Wuc(_) => {
                    let q_exponent = loss.wake_exponent_for(protocol);
                    match draw_success(&loss, StepKind::WakeupMeta { q_exponent }, &mut self.rng) {
                        Outcome::Full => true,
                        Outcome::Partial(_) if protocol == Protocol::Trome => {
                            if let Some(target) = t.frame.dest().and_then(|d| self.cfg.topology.index_of(d)) {
                                self.drop_next_wuc_ack[target] = true;
                            }
                            true
                        }
                        _ => false,
                    }
                }
                Frame::WucAck(_) => !core::mem::replace(&mut self.drop_next_wuc_ack[src], false),
                Frame::Data(_) | Frame::Routed { routing: crate::frame_codec::RoutingFrame::Data { .. }, .. }
                    if addressed =>
                {
                    draw_success(&loss, StepKind::DataMeta, &mut self.rng) == Outcome::Full
                }
                _ => true,
            },
        }
    }

    fn end_tx(&mut self, tx: usize) {
        let (src, start, end) = (self.txs[tx].src, self.txs[tx].start, self.txs[tx].end);
        if let Frame::Wuc(w) = &self.txs[tx].frame {
            let target_id = w.address.logical_id & !RELAY_FLAG;
            let target = self.cfg.topology.index_of(target_id);
            let summary = {
                let t = &self.txs[tx];
                self.summary(src, &t.frame, t.bytes.len(), end - start)
            };
            for r in 0..self.nodes.len() {
                if !self.cfg.topology.wakeup_reach[src][r] {
                    continue;
                }
                if Some(r) != target {
                    self.record(r, TraceKind::Drop, Some(summary), "address mismatch");
                    continue;
                }
                let ok = !self.collided(tx, r) && self.survives(tx, true);
                let decoded = decode_wakeup(&self.txs[tx].bytes, self.cfg.params.wuc_preamble_bytes);
                match decoded {
                    Ok(frame) if ok => {
                        self.record(r, TraceKind::Rx, Some(summary), "");
                        let rank = self.nodes[r].rank;
                        let at = end + self.cfg.params.timing.wake_latency_us;
                        self.push(at, rank, Ev::Wake(r, frame.address.logical_id));
                    }
                    _ => self.record(r, TraceKind::Drop, Some(summary), "lost"),
                }
            }
            // Per-packet mode draws per receiver; the meta-step draw above is shared.
            return;
        }

        if self.awaiting_sink_ack && src + 1 == self.nodes.len() && matches!(self.txs[tx].frame, Frame::Ack(_)) {
            self.awaiting_sink_ack = false;
            self.stats.completion_time_us = Some(end);
        }
        let dest = self.txs[tx].frame.dest();
        let candidates = core::mem::take(&mut self.txs[tx].candidates);
        let summary = {
            let t = &self.txs[tx];
            self.summary(src, &t.frame, t.bytes.len(), end - start)
        };
        let mut heard = Vec::new();
        for r in 0..self.nodes.len() {
            if r == src || !self.cfg.topology.data_reach[src][r] {
                continue;
            }
            let reason = if !candidates.contains(&r) {
                Some("not listening")
            } else if !self.listened_through(r, start, end) {
                Some("radio switched")
            } else if self.collided(tx, r) {
                Some("collision")
            } else {
                None
            };
            match reason {
                Some(why) => self.record(r, TraceKind::Drop, Some(summary), why),
                None => heard.push(r),
            }
        }
        let addressed = |sim: &Self, r: usize| dest == Some(sim.cfg.topology.node_ids[r]);
        // In meta-step mode one draw decides the frame for every receiver.
        let frame_ok = match self.cfg.loss.mode {
            LossMode::PerMetastep if heard.iter().any(|&r| addressed(self, r)) => self.survives(tx, true),
            _ => true,
        };
        let mut deliveries = Vec::new();
        for r in heard {
            let ok = match self.cfg.loss.mode {
                LossMode::PerPacket => self.survives(tx, addressed(self, r)),
                LossMode::PerMetastep => frame_ok,
            };
            if !ok {
                self.record(r, TraceKind::Drop, Some(summary), "lost");
                continue;
            }
            match Frame::decode(&self.txs[tx].bytes, self.stack) {
                Ok(frame) => {
                    self.record(r, TraceKind::Rx, Some(summary), "");
                    deliveries.push((r, frame));
                }
                Err(_) => self.record(r, TraceKind::Drop, Some(summary), "undecodable"),
            }
        }
        // Addressed receiver first, so overhearers react to a settled exchange.
        deliveries.sort_by_key(|(r, _)| dest != Some(self.cfg.topology.node_ids[*r]));
        for (r, frame) in deliveries {
            self.deliver(r, Event::FrameReceived(frame));
        }
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Run(i) => self.run_program(i),
            Ev::Timer(i, id, g) => {
                if self.nodes[i].timers[timer_slot(id)] == Some(g) {
                    self.nodes[i].timers[timer_slot(id)] = None;
                    self.deliver(i, Event::TimerFired(id));
                }
            }
            Ev::BackoffCheck(i, duration, g) => {
                if self.nodes[i].timers[timer_slot(TimerId::Backoff)] != Some(g) {
                    return;
                }
                let quiet_since = self.now - duration.min(self.now);
                match self.last_busy_end(i, self.now) {
                    Some(last) if last > quiet_since => {
                        let rank = self.nodes[i].rank;
                        self.push(last.max(self.now) + duration, rank, Ev::BackoffCheck(i, duration, g));
                    }
                    _ => {
                        self.nodes[i].timers[timer_slot(TimerId::Backoff)] = None;
                        self.deliver(i, Event::TimerFired(TimerId::Backoff));
                    }
                }
            }
            Ev::Wake(i, logical_id) => self.deliver(i, Event::WakeUpDetected(WakeUpAddress::new(logical_id))),
            Ev::SniffEnd(i, until) => {
                let activity = match self.nodes[i].mode {
                    Mode::Sniff => Activity::Delay,
                    Mode::Await => Activity::Receive,
                    _ => return,
                };
                if self.nodes[i].sniff_until == Some(until) {
                    self.nodes[i].sniff_until = None;
                    self.set_seg(i, RadioState::DelayIdle, activity);
                }
            }
        }
    }

    fn finish(mut self) -> SimTrace {
        let end = self.now;
        for i in 0..self.nodes.len() {
            let (s, a, start) = self.nodes[i].seg;
            if end > start {
                self.intervals.push(RadioStateInterval {
                    node_id: self.nodes[i].engine.node_id,
                    state: s,
                    activity: a,
                    start_us: start,
                    end_us: end,
                });
            }
            if self.nodes[i].engine.state != MachineState::Sleep || self.nodes[i].mode != Mode::Off {
                self.stats.awake_at_end += 1;
            }
        }
        self.stats.end_time_us = end;
        SimTrace { records: self.records, intervals: self.intervals, stats: self.stats }
    }
}
