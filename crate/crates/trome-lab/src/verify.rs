//! Cross-validation suite: codec, simulator, solver and oracle against each
//! other and against the reference targets.

use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use trome_core::airtime_energy::{classify_trace, Activity};
use trome_core::channel_sim::{run, ExtraSource, LossMode, LossModel, SimConfig, Topology};
use trome_core::frame_codec::*;
use trome_core::markov_analyzer::{build, solve, ChainParams, CostConstants, MetaState};
use trome_core::protocol_engine::{Protocol, ProtocolParams};
use trome_core::airtime_energy::EnergyModel;

use crate::experiments::{break_even, expectation, expected_time, monte_carlo};
use crate::oracle::expected_cost;
use crate::report::CheckRow;
use crate::safety::{audit, Strictness};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyOptions {
    /// Seeds per configuration in the Monte-Carlo comparison.
    pub mc_runs: u64,
    /// Random scenarios in the safety suite.
    pub safety_cases: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { mc_runs: 100_000, safety_cases: 1000, seed: 1 }
    }
}

fn check(id: &str, name: &str, measured: String, target: &str, pass: bool) -> CheckRow {
    CheckRow { id: id.into(), check: name.into(), measured, target: target.into(), pass }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn bytes(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    let mut v = vec![0; n];
    rng.fill_bytes(&mut v);
    v
}

fn below(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    rng.next_u64() % n
}

fn random_frame(rng: &mut ChaCha8Rng) -> (Frame, Stack) {
    let b = |rng: &mut ChaCha8Rng| rng.next_u32() as u8;
    match below(rng, 6) {
        0 => (Frame::WucAck(WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id: rng.next_u32() as u16 }), Stack::Plain),
        1 => (Frame::Ack(MacAckFrame { src: b(rng), dest: b(rng) }), Stack::Plain),
        2 => {
            let n = below(rng, MAX_PAYLOAD as u64 + 1) as usize;
            (Frame::Data(MacDataFrame { src: b(rng), dest: b(rng), payload: bytes(rng, n) }), Stack::Plain)
        }
        3 => {
            let routing = RoutingFrame::Req { slots: below(rng, MAX_SLOTS as u64 + 1) as u8, src: b(rng), dest: b(rng), ttl: b(rng) };
            (Frame::Routed { src: b(rng), dest: b(rng), routing, payload: Vec::new() }, Stack::Routed)
        }
        4 => {
            let routing = RoutingFrame::ReqAck { current_ttl: b(rng), lqi: b(rng), free_slots: below(rng, MAX_SLOTS as u64 + 1) as u8 };
            (Frame::Routed { src: b(rng), dest: b(rng), routing, payload: Vec::new() }, Stack::Routed)
        }
        _ => {
            let n = below(rng, (MAX_PAYLOAD - ROUTING_LEN) as u64 + 1) as usize;
            let src = b(rng);
            let routing = RoutingFrame::Data { src, dest: b(rng), payload_len: n as u8 };
            (Frame::Routed { src, dest: b(rng), routing, payload: bytes(rng, n) }, Stack::Routed)
        }
    }
}

/// Frame sizes and 10^3 random round trips of every frame type.
pub fn codec(seed: u64) -> CheckRow {
    let t0 = Instant::now();
    let wuc = |carrier, id| WakeUpFrame { carrier_burst_bytes: carrier, preamble_bytes: 52, address: WakeUpAddress::new(id) };
    let len = |f: &Frame| f.encode().map(|b| b.len()).unwrap_or(0);
    let sizes = [
        encode_wakeup(&wuc(CARRIER_MIN, 0)).map(|b| b.len()).unwrap_or(0),
        encode_wakeup(&wuc(CARRIER_MAX, 255)).map(|b| b.len()).unwrap_or(0),
        len(&Frame::WucAck(WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id: 12 })),
        len(&Frame::Data(MacDataFrame { src: 13, dest: 12, payload: vec![0; 100] })),
        len(&Frame::Ack(MacAckFrame { src: 10, dest: 13 })),
        encode_routing(&RoutingFrame::Req { slots: 5, src: 13, dest: 10, ttl: 3 }).map(|b| b.len()).unwrap_or(0),
    ];
    let sizes_ok = sizes == [148, 216, 3, 104, 3, 4];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    for _ in 0..1000 {
        let (frame, stack) = random_frame(&mut rng);
        if frame.encode().ok().and_then(|b| Frame::decode(&b, stack).ok()) != Some(frame) {
            failures += 1;
        }
        let w = WakeUpFrame {
            carrier_burst_bytes: CARRIER_MIN + below(&mut rng, (CARRIER_MAX - CARRIER_MIN) as u64 + 1) as usize,
            preamble_bytes: below(&mut rng, 65) as usize,
            address: WakeUpAddress::new(rng.next_u32() as u8),
        };
        if encode_wakeup(&w).ok().and_then(|b| decode_wakeup(&b, w.preamble_bytes).ok()) != Some(w) {
            failures += 1;
        }
    }
    let elapsed = t0.elapsed();
    check(
        "1",
        "codec byte counts and round trips",
        format!("sizes {sizes:?}, {failures} round-trip failures in 2000, {:.3} s", elapsed.as_secs_f64()),
        "sizes [148, 216, 3, 104, 3, 4], no failures, < 1 s",
        sizes_ok && failures == 0 && within(elapsed, 1.0),
    )
}

/// Four nodes, five 100-byte packets, no loss.
pub fn latency() -> CheckRow {
    let t0 = Instant::now();
    let mut cfg = SimConfig::new(Topology::line(4).expect("valid line"), Protocol::Trome);
    cfg.packets = 5;
    cfg.payload_bytes = 100;
    let t = run(&cfg, 7).ok();
    let elapsed = t0.elapsed();
    let delivered = t.as_ref().map_or(0, |t| t.stats.delivered);
    let us = t.and_then(|t| t.stats.delivery_time_us).unwrap_or(0);
    check(
        "2",
        "deterministic latency, 4 nodes, 5 x 100 B",
        format!("{delivered} delivered after {:.2} ms, {:.3} s", us as f64 / 1000.0, elapsed.as_secs_f64()),
        "5 delivered in 81..=99 ms, < 1 s",
        delivered == 5 && (81_000..=99_000).contains(&us) && within(elapsed, 1.0),
    )
}

const GRID: [f64; 4] = [1.0, 0.97, 0.75, 0.5];

/// Largest relative gap between the solver and the fundamental-matrix
/// oracle over the protocol, line length and loss grid.
pub fn solver_vs_oracle() -> CheckRow {
    let t0 = Instant::now();
    let mut points = Vec::new();
    for protocol in Protocol::ALL {
        for m in 2..=6 {
            for p in GRID {
                for q in GRID {
                    points.push((protocol, m, p, q));
                }
            }
        }
    }
    let worst = points
        .par_iter()
        .map(|&(protocol, m, p, q)| {
            let params = ProtocolParams::new(protocol);
            let chain = ChainParams::new(protocol, m, p, q);
            [CostConstants::time(&params, 100), CostConstants::energy(&params, &EnergyModel::default(), 100)]
                .iter()
                .map(|costs| {
                    let got = build(protocol, &chain, costs).and_then(|s| solve(&s, MetaState::start()));
                    match (got, expected_cost(protocol, &chain, costs)) {
                        (Ok(a), Ok(b)) => (a - b).abs() / b.abs(),
                        _ => f64::INFINITY,
                    }
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let elapsed = t0.elapsed();
    check(
        "3",
        "solver vs fundamental-matrix oracle",
        format!("max relative error {worst:.2e} over {} configurations, {:.2} s", points.len() * 2, elapsed.as_secs_f64()),
        "< 1e-6, < 10 s",
        worst < 1e-6 && within(elapsed, 10.0),
    )
}

/// Meta-step Monte-Carlo against the analytic expectation.
pub fn sim_vs_model(runs: u64, seed: u64) -> CheckRow {
    let t0 = Instant::now();
    let s = Scenario { p: 0.75, q: 0.97, unbounded_retries: true, ..Scenario::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    for protocol in Protocol::ALL {
        for m in [3, 4, 5] {
            let mut cfg = s.sim_config(protocol, m, 1, 100);
            cfg.loss = LossModel { mode: LossMode::PerMetastep, ..LossModel::new(0.75, 0.97) };
            cfg.record = false;
            let want = expected_time(&s, protocol, m, 1).unwrap_or(f64::NAN);
            let ok = match monte_carlo(&cfg, seed, runs, |_, _| Ok(())) {
                Ok(mc) if mc.complete_runs == runs => {
                    let z = (mc.mean_completion_us - want) / mc.stderr_completion_us;
                    let rel = (mc.mean_completion_us - want).abs() / want;
                    parts.push(format!("{} m={m}: z={z:+.2} rel={:.3}%", protocol.as_str(), 100.0 * rel));
                    z.abs() <= 3.0 && rel <= 0.01
                }
                _ => {
                    parts.push(format!("{} m={m}: incomplete", protocol.as_str()));
                    false
                }
            };
            pass &= ok;
        }
    }
    let elapsed = t0.elapsed();
    parts.push(format!("{runs} seeds each, {:.1} s", elapsed.as_secs_f64()));
    check("4", "Monte-Carlo vs model at p=0.75 q=0.97", parts.join("; "), "|z| <= 3 and within 1%, < 300 s", pass && within(elapsed, 300.0))
}

fn lossless() -> Scenario {
    Scenario::default()
}

fn time(protocol: Protocol, m: usize, n: usize) -> f64 {
    expectation(&lossless(), protocol, m, n).map_or(f64::NAN, |e| e.time_us)
}

/// Time over line length for one and five packets.
pub fn curve_shape() -> CheckRow {
    let one: Vec<f64> = (2..=6).map(|m| time(Protocol::Trome, m, 1)).collect();
    let five: Vec<f64> = (2..=6).map(|m| time(Protocol::Trome, m, 5)).collect();
    let rising = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let above = one.iter().zip(&five).all(|(a, b)| b > a);
    let ms = |v: &[f64]| v.iter().map(|t| format!("{:.1}", t / 1000.0)).collect::<Vec<_>>().join(" ");
    check(
        "5",
        "latency curves over line length",
        format!("n=1 [{}] ms; n=5 [{}] ms", ms(&one), ms(&five)),
        "both strictly increasing, n=5 above n=1",
        rising(&one) && rising(&five) && above,
    )
}

/// Time ratios against the naive protocol without loss.
pub fn comparisons() -> CheckRow {
    let ratio = |protocol, m, n| time(protocol, m, n) / time(Protocol::Naive, m, n);
    let a = ratio(Protocol::Trome, 2, 1);
    let b = ratio(Protocol::Trome, 4, 1);
    let c = ratio(Protocol::CtpWur, 2, 1);
    let d = (2..=6)
        .map(|m| {
            let r: Vec<f64> = [1, 2, 5].iter().map(|&n| ratio(Protocol::CtpWur, m, n)).collect();
            r.iter().map(|x| (x / r[0] - 1.0).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let e = (2..=6).all(|m| {
        (2..=5).all(|n| {
            let t = time(Protocol::Trome, m, n);
            t < time(Protocol::Naive, m, n) && t < time(Protocol::CtpWur, m, n)
        })
    });
    let ok = [(a - 1.4).abs() <= 0.15, (b - 1.0).abs() <= 0.05, (c - 1.0).abs() < 1e-12, d <= 0.01, e];
    let flags: String = ok.iter().zip("abcde".chars()).map(|(&o, l)| format!("{l}={}", if o { "ok" } else { "FAIL" })).collect::<Vec<_>>().join(" ");
    check(
        "6",
        "comparative claims without loss",
        format!("(a) {a:.3} (b) {b:.3} (c) {c:.3} (d) spread {:.2}% (e) {e}; {flags}", 100.0 * d),
        "(a) 1.4 +- 0.15 (b) 1 +- 5% (c) 1 (d) <= 1% (e) true",
        ok.iter().all(|&o| o),
    )
}

/// Per-node energy for four nodes and five 100-byte packets.
pub fn energy_table() -> CheckRow {
    let mut cfg = SimConfig::new(Topology::line(4).expect("valid line"), Protocol::Trome);
    cfg.packets = 5;
    let Some(per_node) = run(&cfg, 0).ok().and_then(|t| classify_trace(&t.intervals, &cfg.energy).ok()) else {
        return check("7", "per-node energy", "simulation failed".into(), "", false);
    };
    let target = [(13u8, 3.3), (12, 1.7), (11, 1.6), (10, 2.1)];
    let total = |id: u8| per_node.get(&id).map_or(f64::NAN, |b| b.total_energy_mj());
    let close = target.iter().all(|&(id, t)| (total(id) / t - 1.0).abs() <= 0.15);
    let sink = per_node.get(&10).copied().unwrap_or_default();
    let sink_zero = sink.energy(Activity::Wuc) == 0.0 && sink.energy(Activity::Delay) == 0.0;
    let order = total(13) > total(12) && total(13) > total(11);
    let values = target.iter().map(|&(id, _)| format!("{id}: {:.2}", total(id))).collect::<Vec<_>>().join(", ");
    check(
        "7",
        "per-node energy, 4 nodes, 5 x 100 B",
        format!("{values} mJ; sink WUC/Delay zero: {sink_zero}; source highest: {order}"),
        "{3.3, 1.7, 1.6, 2.1} mJ +- 15%, sink WUC/Delay 0, source > relays",
        close && sink_zero && order,
    )
}

fn o_cd(protocol: Protocol, m: usize, n: usize) -> f64 {
    let mut cfg = SimConfig::new(Topology::line(m).expect("valid line"), protocol);
    cfg.packets = n;
    cfg.record = false;
    run(&cfg, 0).map_or(f64::NAN, |t| t.stats.control_bits as f64 / t.stats.data_bits_delivered as f64)
}

/// Break-even payloads and overhead over the packet count.
pub fn overhead() -> CheckRow {
    let s = Scenario { nodes: vec![2], ..Scenario::default() };
    let naive_be = break_even(&s, Protocol::Naive, 2).ok().flatten();
    let trome_be = break_even(&s, Protocol::Trome, 2).ok().flatten();
    let be_ok = naive_be.is_some_and(|b| b.abs_diff(165) <= 5) && trome_be.is_some_and(|b| b.abs_diff(192) <= 5);
    let mut curves_ok = true;
    for m in [2, 4] {
        let naive: Vec<f64> = (1..=64).map(|n| o_cd(Protocol::Naive, m, n)).collect();
        let trome: Vec<f64> = (1..=64).map(|n| o_cd(Protocol::Trome, m, n)).collect();
        curves_ok &= naive.iter().all(|x| (x / naive[0] - 1.0).abs() < 1e-12);
        curves_ok &= trome.windows(2).all(|w| w[1] < w[0]);
        curves_ok &= trome.iter().zip(&naive).skip(1).all(|(t, n)| t < n);
    }
    check(
        "8",
        "control overhead",
        format!("break-even naive {naive_be:?} B, T-ROME {trome_be:?} B; curves over n=1..=64 ok: {curves_ok}"),
        "165 +- 5 B and 192 +- 5 B; naive flat, T-ROME falling and below naive from n=2",
        be_ok && curves_ok,
    )
}

/// One randomized scenario of the safety suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyCase {
    pub cfg: SimConfig,
    pub seed: u64,
    pub strict: Strictness,
}

pub fn safety_case(rng: &mut ChaCha8Rng) -> SafetyCase {
    let protocol = Protocol::ALL[below(rng, 3) as usize];
    let m = 2 + below(rng, 5) as usize;
    let mut cfg = SimConfig::new(Topology::line(m).expect("valid line"), protocol);
    cfg.packets = 1 + below(rng, 64) as usize;
    let unit = |rng: &mut ChaCha8Rng| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let lossy = below(rng, 2) == 0;
    if lossy {
        let mode = if below(rng, 2) == 0 { LossMode::PerMetastep } else { LossMode::PerPacket };
        cfg.loss = LossModel { mode, ..LossModel::new(0.5 + 0.5 * unit(rng), 0.8 + 0.2 * unit(rng)) };
    }
    let second = m >= 3 && below(rng, 4) == 0;
    let mut simultaneous = true;
    if second {
        let start_us = if below(rng, 2) == 0 { 0 } else { below(rng, 50_000) };
        simultaneous = start_us == 0;
        cfg.extra_sources.push(ExtraSource { index: 1, packets: 1 + below(rng, 8) as usize, start_us });
    }
    SafetyCase { cfg, seed: rng.next_u64(), strict: Strictness { exclusive: !lossy && simultaneous } }
}

/// Randomized scenarios audited for the safety properties.
pub fn safety(cases: usize, seed: u64) -> CheckRow {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all: Vec<SafetyCase> = (0..cases).map(|_| safety_case(&mut rng)).collect();
    let failures: Vec<String> = all
        .par_iter()
        .filter_map(|c| {
            let result = run(&c.cfg, c.seed).map_err(|e| e.to_string()).and_then(|t| audit(&c.cfg, &t, c.strict).map_err(|e| e.to_string()));
            result.err().map(|e| format!("{} m={} n={} seed={}: {e}", c.cfg.params.protocol.as_str(), c.cfg.topology.len(), c.cfg.packets, c.seed))
        })
        .collect();
    let elapsed = t0.elapsed();
    let first = failures.first().map(|f| format!("; first: {f}")).unwrap_or_default();
    check(
        "9",
        "safety over random scenarios",
        format!("{} of {cases} violated{first}; {:.1} s", failures.len(), elapsed.as_secs_f64()),
        "no violations, < 120 s",
        failures.is_empty() && within(elapsed, 120.0),
    )
}

pub fn run_all(opts: &VerifyOptions) -> Vec<CheckRow> {
    vec![
        codec(opts.seed),
        latency(),
        solver_vs_oracle(),
        sim_vs_model(opts.mc_runs, opts.seed),
        curve_shape(),
        comparisons(),
        energy_table(),
        overhead(),
        safety(opts.safety_cases, opts.seed),
    ]
}
