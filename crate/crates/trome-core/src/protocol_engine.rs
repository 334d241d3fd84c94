//! Per-node state machines for T-ROME, the naive hop-by-hop scheme and
//! CTP-WUR.
//!
//! A node is driven purely by [`Event`]s and answers with an ordered list of
//! [`Action`]s. Actions run back to back on the node's radio: a frame is
//! sent after its preparation time, and a radio mode set after a send takes
//! effect once the transmission has finished. Timer durations count from the
//! instant of the event that armed them.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::airtime_energy::RadioTimingModel;
use crate::frame_codec::{
    Frame, MacAckFrame, MacDataFrame, RoutingFrame, WakeUpAddress, WakeUpFrame, WucAckFrame,
    MAX_PAYLOAD, MAX_SLOTS, PROTOCOL_ID, RELAY_FLAG, ROUTING_LEN,
};

/// Messages a node can hold.
pub const QUEUE_CAPACITY: usize = 64;

/// Slot count as carried in a request. The field has six bits and a request
/// never announces zero slots, so a full queue goes out as 0.
fn slots_to_wire(count: u8) -> u8 {
    if usize::from(count) == QUEUE_CAPACITY { 0 } else { count }
}

fn slots_from_wire(field: u8) -> u8 {
    if field == 0 { QUEUE_CAPACITY as u8 } else { field }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    Trome,
    Naive,
    CtpWur,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Trome, Protocol::Naive, Protocol::CtpWur];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Trome => "trome",
            Protocol::Naive => "naive",
            Protocol::CtpWur => "ctpwur",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "trome" => Some(Protocol::Trome),
            "naive" => Some(Protocol::Naive),
            "ctpwur" | "ctp" => Some(Protocol::CtpWur),
            _ => None,
        }
    }

    /// Largest application payload a data frame can carry.
    pub fn max_payload(self) -> usize {
        match self {
            Protocol::Trome => MAX_PAYLOAD - ROUTING_LEN,
            _ => MAX_PAYLOAD,
        }
    }
}

/// Delays of the node software around the radio, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeTiming {
    /// Channel listening before a source's wake-up call.
    pub lbt_us: u64,
    /// From the end of a wake-up call until the woken node's software runs.
    pub wake_latency_us: u64,
    /// Preparation before each main-radio frame (after the LBT window the
    /// wake-up call goes out immediately).
    pub turnaround_us: u64,
    /// Slack added to every expected response time.
    pub guard_us: u64,
}

impl Default for NodeTiming {
    fn default() -> Self {
        Self { lbt_us: 2500, wake_latency_us: 4000, turnaround_us: 700, guard_us: 2000 }
    }
}

/// Back-off after a busy channel: `base + step * rank`, where rank counts
/// hops to the sink minus one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackoffParams {
    pub base_us: u64,
    pub step_us: u64,
}

impl Default for BackoffParams {
    fn default() -> Self {
        Self { base_us: 5000, step_us: 5000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    pub protocol: Protocol,
    pub ttl: u8,
    pub radio: RadioTimingModel,
    pub timing: NodeTiming,
    pub backoff: BackoffParams,
    /// Failed attempts allowed per message before it is dropped.
    pub retry_cap: u32,
    pub wuc_carrier_bytes: usize,
    pub wuc_preamble_bytes: usize,
}

impl ProtocolParams {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            ttl: 3,
            radio: RadioTimingModel::default(),
            timing: NodeTiming::default(),
            backoff: BackoffParams::default(),
            retry_cap: 10,
            wuc_carrier_bytes: crate::frame_codec::DEFAULT_CARRIER_BYTES,
            wuc_preamble_bytes: crate::frame_codec::DEFAULT_PREAMBLE_BYTES,
        }
    }

    pub fn wuc_frame(&self, target: u8) -> WakeUpFrame {
        WakeUpFrame {
            carrier_burst_bytes: self.wuc_carrier_bytes,
            preamble_bytes: self.wuc_preamble_bytes,
            address: WakeUpAddress::new(target),
        }
    }

    pub fn wuc_us(&self) -> u64 {
        self.radio.wuc_us(&self.wuc_frame(0))
    }

    /// Preparation plus airtime of a frame lasting `airtime` µs.
    fn hop(&self, airtime: u64) -> u64 {
        self.timing.turnaround_us + airtime
    }

    /// One relay extending the wake-up chain, measured from the end of the
    /// previous acknowledgement to the end of the new node's R_REQ_ACK.
    pub fn relay_step_us(&self) -> u64 {
        let r = &self.radio;
        self.hop(self.wuc_us())
            + self.timing.wake_latency_us
            + self.hop(r.mac_packet_us)
            + 2 * self.hop(r.routing_packet_us)
    }

    /// First wake-up step of a T-ROME source, from the start of the LBT window.
    pub fn source_step_us(&self) -> u64 {
        self.timing.lbt_us + self.relay_step_us() - self.timing.turnaround_us
    }

    /// Longest data frame of this protocol.
    fn max_data_us(&self) -> u64 {
        match self.protocol {
            Protocol::Trome => self.radio.routed_data_us(self.protocol.max_payload()),
            _ => self.radio.mac_data_us(MAX_PAYLOAD),
        }
    }

    /// How long an awake node waits for data it may still be sent.
    fn data_wait_us(&self) -> u64 {
        self.relay_step_us()
            + 2 * self.timing.guard_us
            + 2 * self.hop(self.max_data_us())
            + self.hop(self.radio.mac_packet_us)
    }
}

/// Static routing entry of a node on the path to the sink.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    /// Upstream neighbour, the node that wakes this one.
    pub prev: Option<u8>,
    /// Next hop toward the sink.
    pub next: Option<u8>,
    /// Hop after `next`.
    pub second: Option<u8>,
    pub sink: u8,
    pub hops_to_sink: u8,
}

/// Back-off time of `node_id`; ids grow with distance from `sink_id`.
pub fn backoff_duration(node_id: u8, sink_id: u8, params: &BackoffParams) -> u64 {
    let rank = u64::from(node_id.abs_diff(sink_id).saturating_sub(1));
    params.base_us + params.step_us * rank
}

fn cancel_all(out: &mut Vec<Action>) {
    for t in [TimerId::Step, TimerId::Ack, TimerId::Listen, TimerId::Wait, TimerId::Backoff] {
        out.push(Action::CancelTimer(t));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckSummary {
    pub node_id: u8,
    pub hop_distance: u8,
    pub free_slots: u8,
    pub lqi: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecideError {
    #[error("no responder can take {needed} packets")]
    NoCapableTarget { needed: usize },
}

/// Farthest responder that can take `needed` packets; ties go to more free
/// slots, then to the smaller id.
pub fn decide_target(acks: &[AckSummary], needed: usize) -> Result<u8, DecideError> {
    acks.iter()
        .filter(|a| usize::from(a.free_slots) >= needed.max(1))
        .max_by(|a, b| {
            (a.hop_distance, a.free_slots, core::cmp::Reverse(a.node_id)).cmp(&(
                b.hop_distance,
                b.free_slots,
                core::cmp::Reverse(b.node_id),
            ))
        })
        .map(|a| a.node_id)
        .ok_or(DecideError::NoCapableTarget { needed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MachineState {
    Sleep,
    /// Kept for the hardware state machine; sensing is folded into `AppSubmit`.
    Meas,
    Store,
    SendWakeup,
    SendRReq,
    WaitRAck,
    SendData,
    RelayFwd,
    RxWait,
}

impl MachineState {
    pub fn as_str(self) -> &'static str {
        match self {
            MachineState::Sleep => "SLEEP",
            MachineState::Meas => "MEAS",
            MachineState::Store => "STORE",
            MachineState::SendWakeup => "SEND_WAKEUP",
            MachineState::SendRReq => "SEND_R_REQ",
            MachineState::WaitRAck => "WAIT_R_ACK",
            MachineState::SendData => "SEND_DATA",
            MachineState::RelayFwd => "RELAY_FWD",
            MachineState::RxWait => "RX_WAIT",
        }
    }
}

/// Main-radio mode requested by a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RadioMode {
    /// Radio idle, MCU running; nothing is received.
    Idle,
    /// Low-power receive: the radio only wakes fully for frames addressed
    /// to this node.
    Sniff,
    /// Sniff while expecting data addressed to this node; idle time counts
    /// as receiving rather than delay.
    Await,
    /// Continuous receive.
    Rx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TimerId {
    /// End of a wake-up attempt.
    Step,
    /// Expected acknowledgement overdue.
    Ack,
    /// Relay starts listening for the source's decision.
    Listen,
    /// Receiver gives up waiting.
    Wait,
    /// Back-off elapsed on an idle channel.
    Backoff,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    WakeUpDetected(WakeUpAddress),
    FrameReceived(Frame),
    TimerFired(TimerId),
    ChannelProbed { busy: bool },
    AppSubmit(Vec<Vec<u8>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    SetRadio(RadioMode),
    /// Listen for the LBT window, then report [`Event::ChannelProbed`].
    ProbeChannel,
    /// Wait until the channel has been idle this long, then fire
    /// [`TimerId::Backoff`].
    Backoff(u64),
    SendWuc { target: u8, relay: bool, prep_us: u64 },
    SendFrame { frame: Frame, prep_us: u64 },
    SetTimer(TimerId, u64),
    CancelTimer(TimerId),
    EnterSleep,
    DeliverToApp(Vec<Vec<u8>>),
    /// Messages refused because the queue is full.
    Rejected(usize),
    /// The retry budget of a message ran out; it is dropped.
    PermanentFailure(Vec<u8>),
}

/// Bookkeeping of the exchange a node is currently part of.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Session {
    /// Node that woke us, or that we woke.
    peer: Option<u8>,
    /// Source of the routing request being served.
    r_src: u8,
    r_dest: u8,
    slots: u8,
    /// Data target chosen by a sender.
    target: Option<u8>,
    /// Packets of the current batch already acknowledged.
    sent: u8,
    /// Packets received over the current link.
    received: u8,
    forwarding: bool,
    /// CTP-WUR: the direct attempt to the second hop failed.
    fallback: bool,
    relay_wake: bool,
    /// Overhearing an acknowledgement between other nodes ends our part.
    may_release: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeState {
    pub node_id: u8,
    pub route: Route,
    pub state: MachineState,
    pub queue: VecDeque<Vec<u8>>,
    pub collected_acks: Vec<AckSummary>,
    pub pending_ttl: u8,
    /// Failed attempts of the message at the head of the queue.
    pub retries: u32,
    session: Session,
}

impl NodeState {
    pub fn new(node_id: u8, route: Route) -> Self {
        Self {
            node_id,
            route,
            state: MachineState::Sleep,
            queue: VecDeque::new(),
            collected_acks: Vec::new(),
            pending_ttl: 0,
            retries: 0,
            session: Session::default(),
        }
    }

    pub fn is_sink(&self) -> bool {
        self.route.hops_to_sink == 0
    }

    /// Transition function. Events that make no sense in the current
    /// state leave it unchanged and produce no actions.
    pub fn step(&self, event: &Event, params: &ProtocolParams) -> (NodeState, Vec<Action>) {
        let mut next = self.clone();
        let mut out = Vec::new();
        next.apply(event, params, &mut out);
        (next, out)
    }

    fn apply(&mut self, event: &Event, p: &ProtocolParams, out: &mut Vec<Action>) {
        match event {
            Event::AppSubmit(payloads) => self.submit(payloads, p, out),
            Event::WakeUpDetected(addr) => self.on_wakeup(*addr, p, out),
            Event::ChannelProbed { busy } => self.on_probe(*busy, p, out),
            Event::TimerFired(id) => self.on_timer(*id, p, out),
            Event::FrameReceived(frame) => self.on_frame(frame, p, out),
        }
    }

    fn submit(&mut self, payloads: &[Vec<u8>], p: &ProtocolParams, out: &mut Vec<Action>) {
        let room = QUEUE_CAPACITY - self.queue.len();
        let take = payloads.len().min(room);
        self.queue.extend(payloads[..take].iter().cloned());
        if take < payloads.len() {
            out.push(Action::Rejected(payloads.len() - take));
        }
        if self.state == MachineState::Sleep && !self.queue.is_empty() && !self.is_sink() {
            self.start_round(p, out);
        }
    }

    fn start_round(&mut self, _p: &ProtocolParams, out: &mut Vec<Action>) {
        cancel_all(out);
        self.state = MachineState::SendWakeup;
        self.session = Session::default();
        self.collected_acks.clear();
        out.push(Action::ProbeChannel);
    }

    /// Leaves the current exchange: sends queued data if any, else sleeps.
    fn finish(&mut self, p: &ProtocolParams, out: &mut Vec<Action>) {
        self.collected_acks.clear();
        self.session = Session::default();
        if !self.queue.is_empty() && !self.is_sink() {
            self.start_round(p, out);
        } else {
            self.state = MachineState::Sleep;
            out.push(Action::EnterSleep);
        }
    }

    /// A wake-up attempt or data transfer failed; try again or give up.
    fn attempt_failed(&mut self, p: &ProtocolParams, out: &mut Vec<Action>) {
        self.retries += 1;
        if self.retries >= p.retry_cap {
            self.retries = 0;
            if let Some(m) = self.queue.pop_front() {
                out.push(Action::PermanentFailure(m));
            }
        }
        self.finish(p, out);
    }

    fn on_probe(&mut self, busy: bool, p: &ProtocolParams, out: &mut Vec<Action>) {
        if self.state != MachineState::SendWakeup || self.session.peer.is_some() {
            return;
        }
        if busy {
            out.push(Action::Backoff(backoff_duration(self.node_id, self.route.sink, &p.backoff)));
            return;
        }
        let Some(next) = self.route.next else { return };
        let t = &p.timing;
        let w = p.wuc_us();
        self.session.peer = Some(next);
        match p.protocol {
            Protocol::Trome => {
                out.push(Action::SendWuc { target: next, relay: false, prep_us: 0 });
                out.push(Action::SetRadio(RadioMode::Sniff));
                let success = p.source_step_us() - t.lbt_us;
                out.push(Action::SetTimer(TimerId::Step, success + t.guard_us));
            }
            Protocol::Naive => {
                self.session.target = Some(next);
                out.push(Action::SendWuc { target: next, relay: false, prep_us: 0 });
                out.push(Action::SetRadio(RadioMode::Idle));
                out.push(Action::SetTimer(TimerId::Step, w + t.wake_latency_us));
            }
            Protocol::CtpWur => match self.route.second {
                Some(second) => {
                    self.session.target = Some(second);
                    out.push(Action::SendWuc { target: next, relay: true, prep_us: 0 });
                    out.push(Action::SetRadio(RadioMode::Idle));
                    let both = 2 * (w + t.wake_latency_us) + t.turnaround_us;
                    out.push(Action::SetTimer(TimerId::Step, both));
                }
                None => {
                    self.session.target = Some(next);
                    out.push(Action::SendWuc { target: next, relay: false, prep_us: 0 });
                    out.push(Action::SetRadio(RadioMode::Idle));
                    out.push(Action::SetTimer(TimerId::Step, w + t.wake_latency_us));
                }
            },
        }
    }

    fn batch_len(&self) -> u8 {
        self.queue.len().min(QUEUE_CAPACITY) as u8
    }

    fn free_slots(&self) -> u8 {
        (QUEUE_CAPACITY - self.queue.len()).min(usize::from(MAX_SLOTS)) as u8
    }

    fn send_data(&mut self, p: &ProtocolParams, out: &mut Vec<Action>) {
        let Some(target) = self.session.target else { return };
        let Some(payload) = self.queue.front().cloned() else { return };
        let frame = match p.protocol {
            Protocol::Trome => Frame::Routed {
                src: self.node_id,
                dest: target,
                routing: RoutingFrame::Data {
                    src: self.node_id,
                    dest: self.route.sink,
                    payload_len: payload.len() as u8,
                },
                payload,
            },
            _ => Frame::Data(MacDataFrame { src: self.node_id, dest: target, payload }),
        };
        let wait = p.hop(p.radio.frame_airtime(&frame)) + p.hop(p.radio.mac_packet_us) + p.timing.guard_us;
        self.state = MachineState::SendData;
        out.push(Action::SendFrame { frame, prep_us: p.timing.turnaround_us });
        out.push(Action::SetRadio(RadioMode::Sniff));
        out.push(Action::SetTimer(TimerId::Ack, wait));
    }

    fn on_timer(&mut self, id: TimerId, p: &ProtocolParams, out: &mut Vec<Action>) {
        use MachineState::*;
        match (self.state, id) {
            (SendWakeup, TimerId::Backoff) if self.session.peer.is_none() => {
                out.push(Action::ProbeChannel);
            }
            (SendWakeup | SendRReq, TimerId::Step) if p.protocol == Protocol::Trome => {
                self.attempt_failed(p, out);
            }
            (SendWakeup, TimerId::Step) => self.send_data(p, out),
            (WaitRAck, TimerId::Ack) => self.decide(p, out),
            (SendData, TimerId::Ack) => {
                let direct = self.session.target != self.route.next;
                if p.protocol == Protocol::CtpWur && direct && !self.session.fallback {
                    self.session.fallback = true;
                    self.session.target = self.route.next;
                    self.send_data(p, out);
                } else {
                    self.attempt_failed(p, out);
                }
            }
            (RelayFwd, TimerId::Wait) if self.session.forwarding && p.protocol == Protocol::Trome => {
                // The next hop never answered: this node ends the chain.
                self.session.forwarding = false;
                self.session.may_release = true;
                self.state = RxWait;
                out.push(Action::SetRadio(RadioMode::Await));
                out.push(Action::SetTimer(TimerId::Wait, p.data_wait_us()));
            }
            (RelayFwd, TimerId::Listen) => {
                self.session.may_release = true;
                self.state = RxWait;
                out.push(Action::SetRadio(RadioMode::Rx));
                out.push(Action::SetTimer(TimerId::Wait, p.data_wait_us()));
            }
            (RelayFwd | RxWait, TimerId::Wait) => self.finish(p, out),
            _ => {}
        }
    }

    fn passive(&self) -> bool {
        matches!(self.state, MachineState::Sleep | MachineState::RxWait | MachineState::RelayFwd)
            || (self.state == MachineState::SendWakeup && self.session.peer.is_none())
    }

    fn on_wakeup(&mut self, addr: WakeUpAddress, p: &ProtocolParams, out: &mut Vec<Action>) {
        let id = addr.logical_id & !RELAY_FLAG;
        if id != self.node_id || !self.passive() {
            return;
        }
        let relay = addr.logical_id & RELAY_FLAG != 0;
        cancel_all(out);
        self.collected_acks.clear();
        self.session = Session { peer: self.route.prev, relay_wake: relay, ..Session::default() };
        let t = &p.timing;
        match p.protocol {
            Protocol::Trome => {
                self.state = MachineState::RxWait;
                let ack = WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id: self.route.prev.unwrap_or(0).into() };
                out.push(Action::SendFrame { frame: Frame::WucAck(ack), prep_us: t.turnaround_us });
                out.push(Action::SetRadio(RadioMode::Rx));
                let wait = p.hop(p.radio.mac_packet_us) + p.hop(p.radio.routing_packet_us) + t.guard_us;
                out.push(Action::SetTimer(TimerId::Wait, wait));
            }
            Protocol::CtpWur if relay && self.route.next.is_some() => {
                self.state = MachineState::RelayFwd;
                self.session.may_release = true;
                let next = self.route.next.unwrap_or(0);
                out.push(Action::SendWuc { target: next, relay: false, prep_us: t.turnaround_us });
                out.push(Action::SetRadio(RadioMode::Rx));
                let wait = p.hop(p.wuc_us()) + t.wake_latency_us + 2 * p.hop(p.max_data_us())
                    + p.hop(p.radio.mac_packet_us)
                    + 2 * t.guard_us;
                out.push(Action::SetTimer(TimerId::Wait, wait));
            }
            Protocol::Naive | Protocol::CtpWur => {
                self.state = MachineState::RxWait;
                out.push(Action::SetRadio(RadioMode::Await));
                out.push(Action::SetTimer(TimerId::Wait, p.hop(p.max_data_us()) + t.guard_us));
            }
        }
    }

    fn on_frame(&mut self, frame: &Frame, p: &ProtocolParams, out: &mut Vec<Action>) {
        use MachineState::*;
        let me = self.node_id;
        match (self.state, frame) {
            (SendWakeup, Frame::WucAck(a))
                if p.protocol == Protocol::Trome
                    && self.session.peer.is_some()
                    && a.receiver_id == u16::from(me) =>
            {
                let next = self.session.peer.unwrap_or(0);
                let slots = self.batch_len();
                self.session.slots = slots;
                self.state = SendRReq;
                let req = RoutingFrame::Req { slots: slots_to_wire(slots), src: me, dest: self.route.sink, ttl: p.ttl };
                let frame = Frame::Routed { src: me, dest: next, routing: req, payload: Vec::new() };
                out.push(Action::SendFrame { frame, prep_us: p.timing.turnaround_us });
                out.push(Action::SetRadio(RadioMode::Sniff));
            }
            (
                SendRReq | WaitRAck,
                Frame::Routed { src, dest, routing: RoutingFrame::ReqAck { current_ttl, lqi, free_slots }, .. },
            ) if *dest == me => {
                if self.state == SendRReq {
                    out.push(Action::CancelTimer(TimerId::Step));
                    self.state = WaitRAck;
                }
                self.collected_acks.push(AckSummary {
                    node_id: *src,
                    hop_distance: p.ttl.saturating_sub(*current_ttl),
                    free_slots: *free_slots,
                    lqi: *lqi,
                });
                if *current_ttl == 0 || *src == self.route.sink {
                    out.push(Action::CancelTimer(TimerId::Ack));
                    self.decide(p, out);
                } else {
                    out.push(Action::SetTimer(TimerId::Ack, p.relay_step_us() + p.timing.guard_us));
                }
            }
            (SendData, Frame::Ack(a)) if a.dest == me && Some(a.src) == self.session.target => {
                out.push(Action::CancelTimer(TimerId::Ack));
                self.queue.pop_front();
                self.retries = 0;
                self.session.sent += 1;
                let more = p.protocol == Protocol::Trome
                    && self.session.sent < self.session.slots
                    && !self.queue.is_empty();
                if more {
                    self.send_data(p, out);
                } else {
                    self.finish(p, out);
                }
            }
            (RxWait, Frame::Routed { src, dest, routing: RoutingFrame::Req { slots, src: r_src, dest: r_dest, ttl }, .. })
                if *dest == me && p.protocol == Protocol::Trome && self.session.slots == 0 && !self.session.forwarding =>
            {
                self.on_request(*src, *slots, *r_src, *r_dest, *ttl, p, out);
            }
            (RelayFwd, Frame::WucAck(a)) if self.session.forwarding && a.receiver_id == u16::from(me) => {
                self.session.forwarding = false;
                let next = self.route.next.unwrap_or(0);
                let ttl = self.pending_ttl;
                let req = RoutingFrame::Req { slots: slots_to_wire(self.session.slots), src: self.session.r_src, dest: self.session.r_dest, ttl };
                let frame = Frame::Routed { src: me, dest: next, routing: req, payload: Vec::new() };
                out.push(Action::SendFrame { frame, prep_us: p.timing.turnaround_us });
                out.push(Action::SetRadio(RadioMode::Sniff));
                out.push(Action::CancelTimer(TimerId::Wait));
                // Acknowledgements still to come after this forward.
                let k = u64::from(ttl.min(self.route.hops_to_sink));
                let ack = p.hop(p.radio.routing_packet_us);
                let listen = ack + k * ack + k.saturating_sub(1) * (p.relay_step_us() - ack);
                out.push(Action::SetTimer(TimerId::Listen, listen));
            }
            (RxWait | RelayFwd, Frame::Routed { src, dest, routing: RoutingFrame::Data { dest: r_dest, .. }, payload })
                if *dest == me && p.protocol == Protocol::Trome =>
            {
                let _ = r_dest;
                self.on_data(*src, payload, p, out);
            }
            (RxWait | RelayFwd, Frame::Data(d)) if d.dest == me && p.protocol != Protocol::Trome => {
                self.on_data(d.src, &d.payload, p, out);
            }
            // Another node got the data: this relay is not needed.
            (RxWait | RelayFwd, Frame::Ack(a))
                if a.dest != me && self.session.may_release && self.session.received == 0 =>
            {
                cancel_all(out);
                self.finish(p, out);
            }
            _ => {}
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_request(&mut self, from: u8, slots: u8, r_src: u8, r_dest: u8, ttl: u8, p: &ProtocolParams, out: &mut Vec<Action>) {
        let me = self.node_id;
        let remaining = ttl.saturating_sub(1);
        self.session.r_src = r_src;
        self.session.r_dest = r_dest;
        self.session.slots = slots_from_wire(slots);
        self.session.peer = Some(from);
        self.pending_ttl = remaining;
        out.push(Action::CancelTimer(TimerId::Wait));
        let ack = RoutingFrame::ReqAck { current_ttl: remaining, lqi: 0, free_slots: self.free_slots() };
        let frame = Frame::Routed { src: me, dest: r_src, routing: ack, payload: Vec::new() };
        out.push(Action::SendFrame { frame, prep_us: p.timing.turnaround_us });
        let forward = remaining > 0 && me != r_dest && !self.is_sink();
        match (forward, self.route.next) {
            (true, Some(next)) => {
                self.state = MachineState::RelayFwd;
                self.session.forwarding = true;
                out.push(Action::SendWuc { target: next, relay: false, prep_us: p.timing.turnaround_us });
                out.push(Action::SetRadio(RadioMode::Sniff));
                let wait = p.hop(p.radio.routing_packet_us)
                    + p.hop(p.wuc_us())
                    + p.timing.wake_latency_us
                    + p.hop(p.radio.mac_packet_us)
                    + p.timing.guard_us;
                out.push(Action::SetTimer(TimerId::Wait, wait));
            }
            _ => {
                self.state = MachineState::RxWait;
                self.session.may_release = true;
                out.push(Action::SetRadio(RadioMode::Await));
                out.push(Action::SetTimer(TimerId::Wait, p.data_wait_us()));
            }
        }
    }

    fn on_data(&mut self, from: u8, payload: &[u8], p: &ProtocolParams, out: &mut Vec<Action>) {
        let me = self.node_id;
        if self.is_sink() {
            out.push(Action::DeliverToApp(alloc::vec![payload.to_vec()]));
        } else if self.queue.len() < QUEUE_CAPACITY {
            self.queue.push_back(payload.to_vec());
        } else {
            // No room: stay silent so the sender retries elsewhere.
            return;
        }
        self.session.received = self.session.received.saturating_add(1);
        self.session.forwarding = false;
        self.state = MachineState::RxWait;
        out.push(Action::CancelTimer(TimerId::Listen));
        out.push(Action::SendFrame { frame: Frame::Ack(MacAckFrame { src: me, dest: from }), prep_us: p.timing.turnaround_us });
        let expected = if p.protocol == Protocol::Trome { self.session.slots.max(1) } else { 1 };
        if self.session.received >= expected {
            out.push(Action::CancelTimer(TimerId::Wait));
            self.finish(p, out);
        } else {
            out.push(Action::SetRadio(RadioMode::Await));
            let wait = p.hop(p.radio.mac_packet_us) + p.hop(p.max_data_us()) + p.timing.guard_us;
            out.push(Action::SetTimer(TimerId::Wait, wait));
        }
    }

    fn decide(&mut self, p: &ProtocolParams, out: &mut Vec<Action>) {
        // Free slots saturate at the field maximum too.
        let needed = usize::from(self.session.slots.min(MAX_SLOTS));
        match decide_target(&self.collected_acks, needed) {
            Ok(target) => {
                self.collected_acks.clear();
                self.session.target = Some(target);
                self.session.sent = 0;
                self.send_data(p, out);
            }
            Err(_) => self.attempt_failed(p, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ack(node_id: u8, hop: u8, slots: u8) -> AckSummary {
        AckSummary { node_id, hop_distance: hop, free_slots: slots, lqi: 0 }
    }

    #[test]
    fn full_queue_fits_the_slot_field() {
        for count in 1..=QUEUE_CAPACITY as u8 {
            assert!(slots_to_wire(count) <= MAX_SLOTS);
            assert_eq!(slots_from_wire(slots_to_wire(count)), count);
        }
    }

    #[test]
    fn decide_examples() {
        let acks = [ack(12, 1, 10), ack(11, 2, 10), ack(10, 3, 10)];
        assert_eq!(decide_target(&acks, 5), Ok(10));
        assert_eq!(decide_target(&[ack(12, 1, 63)], 1), Ok(12));
        assert_eq!(decide_target(&[ack(11, 2, 0), ack(12, 1, 5)], 5), Ok(12));
        assert_eq!(
            decide_target(&[ack(11, 2, 0)], 1),
            Err(DecideError::NoCapableTarget { needed: 1 })
        );
        // ties: more slots, then smaller id
        assert_eq!(decide_target(&[ack(20, 2, 5), ack(21, 2, 9)], 1), Ok(21));
        assert_eq!(decide_target(&[ack(21, 2, 9), ack(20, 2, 9)], 1), Ok(20));
    }

    #[test]
    fn backoff_examples() {
        let b = BackoffParams::default();
        assert_eq!(backoff_duration(11, 10, &b), 5000);
        assert_eq!(backoff_duration(14, 10, &b), 20000);
        assert!(backoff_duration(12, 10, &b) < backoff_duration(13, 10, &b));
    }

    fn line_route(id: u8, sink: u8) -> Route {
        let hops = id - sink;
        Route {
            prev: Some(id + 1),
            next: (hops > 0).then(|| id - 1),
            second: (hops > 1).then(|| id - 2),
            sink,
            hops_to_sink: hops,
        }
    }

    #[test]
    fn relay_with_zero_ttl_only_acks() {
        let p = ProtocolParams::new(Protocol::Trome);
        let mut n = NodeState::new(12, line_route(12, 10));
        let (s, _) = n.step(&Event::WakeUpDetected(WakeUpAddress::new(12)), &p);
        n = s;
        let req = Frame::Routed {
            src: 13,
            dest: 12,
            routing: RoutingFrame::Req { slots: 1, src: 13, dest: 10, ttl: 0 },
            payload: vec![],
        };
        let (s, acts) = n.step(&Event::FrameReceived(req), &p);
        assert_eq!(s.state, MachineState::RxWait);
        assert!(!acts.iter().any(|a| matches!(a, Action::SendWuc { .. })));
        let acks: Vec<_> = acts
            .iter()
            .filter_map(|a| match a {
                Action::SendFrame { frame: Frame::Routed { routing: RoutingFrame::ReqAck { current_ttl, .. }, .. }, .. } => {
                    Some(*current_ttl)
                }
                _ => None,
            })
            .collect();
        assert_eq!(acks, vec![0]);
    }

    #[test]
    fn step_is_deterministic_and_ignores_junk() {
        let p = ProtocolParams::new(Protocol::Naive);
        let n = NodeState::new(12, line_route(12, 10));
        let junk = Event::FrameReceived(Frame::Ack(MacAckFrame { src: 1, dest: 2 }));
        let (a, acts) = n.step(&junk, &p);
        assert_eq!(a, n);
        assert!(acts.is_empty());
        let ev = Event::AppSubmit(vec![vec![1, 2, 3, 4]]);
        assert_eq!(n.step(&ev, &p), n.step(&ev, &p));
    }
}
