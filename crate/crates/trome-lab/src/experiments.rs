//! The experiment suites behind the subcommands. Each returns report rows
//! sorted by their key columns.

use std::path::Path;

use rayon::prelude::*;
use trome_core::airtime_energy::{classify_trace, overhead_ratio, Activity, EnergyModel};
use trome_core::channel_sim::{run, LossMode, SimConfig, SimError, SimTrace};
use trome_core::markov_analyzer::{expected, multi_packet_cost, ChainParams, CostConstants, Expectation, MarkovError};
use trome_core::protocol_engine::{Protocol, ProtocolParams};

use crate::report::{self, AnalyzeRow, BreakEvenRow, BudgetRow, OverheadRow, ReportError, SimulateRow};
use crate::scenario::{ConfigError, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulator rejected the configuration: {0}")]
    Sim(#[from] SimError),
    #[error("analysis failed: {0}")]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn chain(s: &Scenario, protocol: Protocol, m: usize) -> ChainParams {
    let mut c = ChainParams::new(protocol, m, s.p, s.q);
    c.ttl = s.ttl;
    if let Some(e) = s.wake_exponent {
        c.wake_exponent = e;
    }
    c
}

fn params(s: &Scenario, protocol: Protocol) -> ProtocolParams {
    let mut p = ProtocolParams::new(protocol);
    p.ttl = s.ttl;
    p
}

/// Analytic time and energy for one configuration.
pub fn expectation(s: &Scenario, protocol: Protocol, m: usize, n: usize) -> Result<Expectation, MarkovError> {
    expected(&params(s, protocol), &EnergyModel::default(), &chain(s, protocol, m), s.payload, n)
}

/// Expected completion time, comparable to [`McSummary::mean_completion_us`].
pub fn expected_time(s: &Scenario, protocol: Protocol, m: usize, n: usize) -> Result<f64, MarkovError> {
    let costs = CostConstants::time(&params(s, protocol), s.payload);
    multi_packet_cost(protocol, &chain(s, protocol, m), &costs, n)
}

pub fn analyze(s: &Scenario) -> Result<Vec<AnalyzeRow>, LabError> {
    s.validate()?;
    let protocols = s.protocol_list()?;
    let mut rows = Vec::new();
    for &m in &s.nodes {
        for &n in &s.packets {
            let naive = expectation(s, Protocol::Naive, m, n)?;
            for &protocol in &protocols {
                let e = expectation(s, protocol, m, n)?;
                rows.push(AnalyzeRow {
                    protocol: protocol.as_str(),
                    m,
                    p: s.p,
                    q: s.q,
                    n_packets: n,
                    expected_time_us: e.time_us,
                    expected_energy_mj: e.energy_mj,
                    ratio_vs_naive: e.time_us / naive.time_us,
                    energy_ratio_vs_naive: e.energy_mj / naive.energy_mj,
                });
            }
        }
    }
    rows.sort_by(|a, b| (a.protocol, a.m, a.n_packets).cmp(&(b.protocol, b.m, b.n_packets)));
    rows.dedup();
    Ok(rows)
}

/// Outcome of one simulated run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub complete: bool,
    pub delivery_us: f64,
    pub completion_us: f64,
    pub energy_mj: f64,
    pub control_bits: u64,
    pub data_bits: u64,
    pub permanent_failures: u64,
}

pub fn sample(cfg: &SimConfig, trace: &SimTrace) -> Sample {
    let s = &trace.stats;
    let energy = classify_trace(&trace.intervals, &cfg.energy)
        .map(|b| b.values().map(|n| n.total_energy_mj()).sum())
        .unwrap_or(f64::NAN);
    Sample {
        complete: s.delivered == s.submitted,
        delivery_us: s.delivery_time_us.map_or(f64::NAN, |t| t as f64),
        completion_us: s.completion_time_us.map_or(f64::NAN, |t| t as f64),
        energy_mj: energy,
        control_bits: s.control_bits,
        data_bits: s.data_bits_delivered,
        permanent_failures: s.permanent_failures as u64,
    }
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSummary {
    pub runs: u64,
    pub complete_runs: u64,
    pub permanent_failures: u64,
    /// Averages over complete runs.
    pub mean_delivery_us: f64,
    pub mean_completion_us: f64,
    pub stderr_completion_us: f64,
    /// Averages over all runs.
    pub mean_energy_mj: f64,
    pub stderr_energy_mj: f64,
    pub mean_control_bits: f64,
    pub o_cd: f64,
}

/// Runs seeds `seed..seed + runs` in parallel. `hook` sees every trace.
pub fn monte_carlo<F>(cfg: &SimConfig, seed: u64, runs: u64, hook: F) -> Result<McSummary, LabError>
where
    F: Fn(u64, &SimTrace) -> Result<(), ReportError> + Sync,
{
    cfg.validate()?;
    let samples: Vec<Sample> = (seed..seed + runs)
        .into_par_iter()
        .map(|k| {
            let t = run(cfg, k)?;
            hook(k, &t)?;
            Ok(sample(cfg, &t))
        })
        .collect::<Result<_, LabError>>()?;
    let done: Vec<&Sample> = samples.iter().filter(|s| s.complete).collect();
    let completion: Vec<f64> = done.iter().map(|s| s.completion_us).collect();
    let delivery: Vec<f64> = done.iter().map(|s| s.delivery_us).collect();
    let energy: Vec<f64> = samples.iter().map(|s| s.energy_mj).collect();
    let (mean_completion_us, stderr_completion_us) = mean_stderr(&completion);
    let (mean_energy_mj, stderr_energy_mj) = mean_stderr(&energy);
    let control: u64 = samples.iter().map(|s| s.control_bits).sum();
    let data: u64 = samples.iter().map(|s| s.data_bits).sum();
    Ok(McSummary {
        runs,
        complete_runs: done.len() as u64,
        permanent_failures: samples.iter().map(|s| s.permanent_failures).sum(),
        mean_delivery_us: mean_stderr(&delivery).0,
        mean_completion_us,
        stderr_completion_us,
        mean_energy_mj,
        stderr_energy_mj,
        mean_control_bits: control as f64 / runs as f64,
        o_cd: overhead_ratio(control, data).unwrap_or(f64::INFINITY),
    })
}

fn loss_mode_name(mode: LossMode) -> &'static str {
    match mode {
        LossMode::PerMetastep => "metastep",
        LossMode::PerPacket => "packet",
    }
}

/// Monte-Carlo summary per configuration. With `trace_dir`, every run's
/// trace is written there as JSON lines.
pub fn simulate(s: &Scenario, trace_dir: Option<&Path>) -> Result<Vec<SimulateRow>, LabError> {
    s.validate()?;
    let protocols = s.protocol_list()?;
    let mut rows = Vec::new();
    for &protocol in &protocols {
        for &m in &s.nodes {
            for &n in &s.packets {
                let cfg = s.sim_config(protocol, m, n, s.payload);
                let summary = monte_carlo(&cfg, s.seed, s.runs, |k, t| match trace_dir {
                    Some(dir) => {
                        let name = format!("{}-{}-m{m}-n{n}-seed{k}.jsonl", s.name, protocol.as_str());
                        report::write_trace(&dir.join(name), t)
                    }
                    None => Ok(()),
                })?;
                rows.push(SimulateRow {
                    protocol: protocol.as_str(),
                    m,
                    p: s.p,
                    q: s.q,
                    n_packets: n,
                    payload_bytes: s.payload,
                    loss_mode: loss_mode_name(cfg.loss.mode),
                    seed: s.seed,
                    runs: s.runs,
                    complete_runs: summary.complete_runs,
                    permanent_failures: summary.permanent_failures,
                    mean_delivery_us: summary.mean_delivery_us,
                    mean_completion_us: summary.mean_completion_us,
                    stderr_completion_us: summary.stderr_completion_us,
                    mean_energy_mj: summary.mean_energy_mj,
                    stderr_energy_mj: summary.stderr_energy_mj,
                    mean_control_bits: summary.mean_control_bits,
                    o_cd: summary.o_cd,
                    expected_time_us: expected_time(s, protocol, m, n).unwrap_or(f64::NAN),
                    ratio_vs_naive: None,
                });
            }
        }
    }
    let naive: Vec<(usize, usize, f64)> =
        rows.iter().filter(|r| r.protocol == Protocol::Naive.as_str()).map(|r| (r.m, r.n_packets, r.mean_completion_us)).collect();
    for r in &mut rows {
        r.ratio_vs_naive =
            naive.iter().find(|(m, n, _)| *m == r.m && *n == r.n_packets).map(|(_, _, t)| r.mean_completion_us / t);
    }
    rows.sort_by(|a, b| (a.protocol, a.m, a.n_packets).cmp(&(b.protocol, b.m, b.n_packets)));
    Ok(rows)
}

pub fn role(index: usize, m: usize) -> &'static str {
    match index {
        0 => "source",
        i if i + 1 == m => "sink",
        _ => "relay",
    }
}

/// Per-node energy by activity for one run at the scenario's first seed.
pub fn budget(s: &Scenario) -> Result<Vec<BudgetRow>, LabError> {
    s.validate()?;
    let mut rows = Vec::new();
    for protocol in s.protocol_list()? {
        for &m in &s.nodes {
            for &n in &s.packets {
                let cfg = s.sim_config(protocol, m, n, s.payload);
                let trace = run(&cfg, s.seed)?;
                let per_node = classify_trace(&trace.intervals, &cfg.energy).unwrap_or_default();
                for (i, &id) in cfg.topology.node_ids().iter().enumerate() {
                    let b = per_node.get(&id).copied().unwrap_or_default();
                    let row = |state, time_us, energy_mj| BudgetRow {
                        protocol: protocol.as_str(),
                        m,
                        n_packets: n,
                        payload_bytes: s.payload,
                        node_id: id,
                        role: role(i, m),
                        state,
                        time_us,
                        energy_mj,
                    };
                    for a in Activity::ALL {
                        rows.push(row(a.as_str(), b.time(a), b.energy(a)));
                    }
                    rows.push(row("total", b.total_time_us(), b.total_energy_mj()));
                }
            }
        }
    }
    // Nodes from source to sink, activities in table order.
    rows.sort_by_key(|r| (r.protocol, r.m, r.n_packets, std::cmp::Reverse(r.node_id)));
    Ok(rows)
}

fn lossless_run(s: &Scenario, protocol: Protocol, m: usize, n: usize, payload: usize) -> Result<SimTrace, LabError> {
    let mut cfg = s.sim_config(protocol, m, n, payload);
    cfg.record = false;
    Ok(run(&cfg, s.seed)?)
}

/// Control-to-data ratio over the payload and packet-count sweeps, plus the
/// single-packet break-even payload per protocol and line length.
pub fn overhead(s: &Scenario) -> Result<(Vec<OverheadRow>, Vec<BreakEvenRow>), LabError> {
    s.validate()?;
    let protocols = s.protocol_list()?;
    let mut points = Vec::new();
    for &protocol in &protocols {
        for &m in &s.nodes {
            for &n in &s.packets {
                for &payload in &s.payloads {
                    points.push((protocol, m, n, payload));
                }
            }
        }
    }
    let mut rows = points
        .into_par_iter()
        .map(|(protocol, m, n, payload)| {
            let t = lossless_run(s, protocol, m, n, payload)?;
            Ok(OverheadRow {
                protocol: protocol.as_str(),
                m,
                n_packets: n,
                payload_bytes: payload,
                control_bits: t.stats.control_bits,
                data_bits: t.stats.data_bits_delivered,
                o_cd: overhead_ratio(t.stats.control_bits, t.stats.data_bits_delivered).unwrap_or(f64::INFINITY),
            })
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    rows.sort_by_key(|r| (r.protocol, r.m, r.n_packets, r.payload_bytes));

    let mut even = Vec::new();
    for &protocol in &protocols {
        for &m in &s.nodes {
            even.push(BreakEvenRow { protocol: protocol.as_str(), m, break_even_bytes: break_even(s, protocol, m)? });
        }
    }
    even.sort_by_key(|r| (r.protocol, r.m));
    Ok((rows, even))
}

/// Smallest payload whose single packet delivers at least as many data bits
/// as the protocol spends on control bits.
pub fn break_even(s: &Scenario, protocol: Protocol, m: usize) -> Result<Option<usize>, LabError> {
    let found = (4..=protocol.max_payload())
        .into_par_iter()
        .map(|payload| {
            let t = lossless_run(s, protocol, m, 1, payload)?;
            let ok = t.stats.data_bits_delivered > 0 && t.stats.control_bits <= t.stats.data_bits_delivered;
            Ok(ok.then_some(payload))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    Ok(found.into_iter().flatten().min())
}
