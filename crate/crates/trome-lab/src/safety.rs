//! Trace auditor for the protocol safety properties.

use trome_core::channel_sim::{SimConfig, SimTrace, TraceKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("trace time goes backwards at record {0}")]
    TimeOrder(usize),
    #[error("message {0:#x} delivered twice")]
    Duplicate(u32),
    #[error("{delivered} of {submitted} messages delivered without a recorded failure")]
    Lost { submitted: usize, delivered: usize },
    #[error("source {0} delivered out of order")]
    Order(u32),
    #[error("{kind} sent at {time_us} us carries TTL {ttl}")]
    TtlField { kind: &'static str, time_us: u64, ttl: u8 },
    #[error("{kind} at {time_us} us spans {hops} hops")]
    TtlSpan { kind: &'static str, time_us: u64, hops: usize },
    #[error("simulation hit the horizon with work left")]
    TimedOut,
    #[error("{0} nodes still awake at the end")]
    Awake(usize),
    #[error("transmission at {0} us started after an idle probe but the channel was busy")]
    Lbt(u64),
    #[error("transmissions at {0} us and {1} us overlap")]
    Overlap(u64, u64),
    #[error("node {node} has no reception record for the frame sent at {time_us} us")]
    Unmatched { node: u8, time_us: u64 },
}

/// Which properties to hold the trace to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Strictness {
    /// Nothing lost and a single flow: delivery must be complete and in
    /// order, and no two transmissions may overlap.
    pub exclusive: bool,
}

/// Checks exactly-once delivery, the TTL bound, return to sleep, listen
/// before talk, and that every frame reaches each node in range as either a
/// reception or a drop. Needs a trace recorded with `cfg.record` set.
pub fn audit(cfg: &SimConfig, trace: &SimTrace, strict: Strictness) -> Result<(), Violation> {
    let s = &trace.stats;
    if let Some(k) = trace.records.windows(2).position(|w| w[0].time_us > w[1].time_us) {
        return Err(Violation::TimeOrder(k + 1));
    }

    let mut ids = s.delivered_ids.clone();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Violation::Duplicate(w[0]));
    }
    let submitted = cfg.packets + cfg.extra_sources.iter().map(|e| e.packets).sum::<usize>();
    if s.delivered != submitted && (s.permanent_failures == 0 || strict.exclusive) {
        return Err(Violation::Lost { submitted, delivered: s.delivered });
    }
    if strict.exclusive {
        for src in 0..=cfg.extra_sources.len() as u32 {
            let seq: Vec<u32> = s.delivered_ids.iter().copied().filter(|id| id >> 16 == src).collect();
            if seq.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Violation::Order(src));
            }
        }
    }

    let ttl = cfg.params.ttl;
    // A chain spans at most `ttl` hops; CTP-WUR always skips one node.
    let span = usize::from(ttl).max(2);
    let topo = &cfg.topology;
    let tx: Vec<_> = trace.records.iter().filter(|r| r.kind == TraceKind::Tx).collect();
    for r in &tx {
        let f = r.frame.expect("transmissions carry a frame");
        if let Some(v) = f.ttl.filter(|&v| v > ttl) {
            return Err(Violation::TtlField { kind: f.kind, time_us: r.time_us, ttl: v });
        }
        if matches!(f.kind, "DATA" | "R_DATA") {
            let (Some(a), Some(b)) = (topo.index_of(f.src), f.dest.and_then(|d| topo.index_of(d))) else { continue };
            let hops = a.abs_diff(b);
            if hops > span {
                return Err(Violation::TtlSpan { kind: f.kind, time_us: r.time_us, hops });
            }
        }
    }

    if s.timed_out {
        return Err(Violation::TimedOut);
    }
    if s.awake_at_end > 0 {
        return Err(Violation::Awake(s.awake_at_end));
    }

    let air: Vec<(u64, u64)> = tx.iter().map(|r| (r.time_us, r.time_us + r.frame.map_or(0, |f| f.airtime_us))).collect();
    for (r, &(start, _)) in tx.iter().zip(&air) {
        if r.note == "lbt" && air.iter().any(|&(a, b)| a < start && b > start) {
            return Err(Violation::Lbt(start));
        }
    }
    if strict.exclusive {
        let mut sorted = air.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0].1 > w[1].0) {
            return Err(Violation::Overlap(w[0].0, w[1].0));
        }
    }

    for (r, &(_, end)) in tx.iter().zip(&air) {
        let f = r.frame.expect("transmissions carry a frame");
        let Some(from) = topo.index_of(r.node) else { continue };
        let wuc = f.kind == "WUC" || f.kind == "WUC_RELAY";
        for (to, &node) in topo.node_ids().iter().enumerate() {
            let in_range = if wuc { topo.wakes(from, to) } else { topo.hears(from, to) };
            if !in_range {
                continue;
            }
            let seen = trace.records.iter().any(|x| {
                x.time_us == end && x.node == node && matches!(x.kind, TraceKind::Rx | TraceKind::Drop) && x.frame == Some(f)
            });
            if !seen {
                return Err(Violation::Unmatched { node, time_us: r.time_us });
            }
        }
    }
    Ok(())
}
