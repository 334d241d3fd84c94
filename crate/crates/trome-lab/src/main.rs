use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trome_lab::experiments::{self, LabError};
use trome_lab::report::{self, ReportError};
use trome_lab::scenario::{parse_list, ConfigError, Scenario};
use trome_lab::verify::{self, VerifyOptions};

/// Simulation, analysis and reporting for the T-ROME, naive and CTP-WUR
/// wake-up routing protocols.
#[derive(Debug, Parser)]
#[command(name = "trome-lab", version)]
struct Cli {
    /// TOML scenario file; its keys override the command-line flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Directory for CSV, JSON-lines and trace output.
    #[arg(long, global = true, env = "TROME_LAB_OUT", default_value = "out", value_name = "DIR")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte-Carlo runs of the simulator, one summary row per configuration.
    Simulate(ScenarioArgs),
    /// Analytic expected time and energy from the Markov chain.
    Analyze(ScenarioArgs),
    /// Per-node energy and time by radio activity for one run.
    Budget(ScenarioArgs),
    /// Control-to-data overhead over payload and packet count, plus break-even payloads.
    Overhead(ScenarioArgs),
    /// Run the cross-validation suite; exits 2 if any check fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    /// Protocols: trome, naive, ctpwur (comma-separated).
    #[arg(long = "protocol", value_delimiter = ',')]
    protocols: Vec<String>,
    /// Line lengths including the sink, e.g. `4` or `2-6`.
    #[arg(long)]
    nodes: Option<String>,
    /// Packets per run, e.g. `1,2,5`.
    #[arg(long)]
    packets: Option<String>,
    /// Payload bytes per packet.
    #[arg(long)]
    payload: Option<usize>,
    /// Payload sweep for the overhead report, e.g. `10-240`.
    #[arg(long)]
    payloads: Option<String>,
    /// Wake-up success probability per hop.
    #[arg(long)]
    p: Option<f64>,
    /// Main-radio packet success probability.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    ttl: Option<u8>,
    /// First seed; runs use `seed..seed + runs`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<u64>,
    /// `metastep` or `packet`.
    #[arg(long)]
    loss_mode: Option<String>,
    /// Override the q exponent of a wake-up step.
    #[arg(long)]
    wake_exponent: Option<u32>,
    /// Retry forever instead of giving up after the retry cap.
    #[arg(long)]
    unbounded_retries: bool,
    /// Write a JSON-lines trace per configuration and seed (simulate only).
    #[arg(long)]
    traces: bool,
    /// Prefix of the output files.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = VerifyOptions::default().mc_runs)]
    mc_runs: u64,
    #[arg(long, default_value_t = VerifyOptions::default().safety_cases)]
    safety_cases: usize,
    #[arg(long, default_value_t = VerifyOptions::default().seed)]
    seed: u64,
    #[arg(long, default_value = "verify")]
    name: String,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{0} of 9 checks failed")]
    Verify(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 2,
            _ => 1,
        }
    }
}

impl ScenarioArgs {
    fn scenario(&self) -> Result<Scenario, ConfigError> {
        let mut s = Scenario::default();
        if !self.protocols.is_empty() {
            s.protocols = self.protocols.clone();
        }
        if let Some(v) = &self.nodes {
            s.nodes = parse_list(v)?;
        }
        if let Some(v) = &self.packets {
            s.packets = parse_list(v)?;
        }
        if let Some(v) = &self.payloads {
            s.payloads = parse_list(v)?;
        }
        if let Some(v) = self.payload {
            s.payload = v;
        }
        s.p = self.p.unwrap_or(s.p);
        s.q = self.q.unwrap_or(s.q);
        s.ttl = self.ttl.unwrap_or(s.ttl);
        s.seed = self.seed.unwrap_or(s.seed);
        s.runs = self.runs.unwrap_or(s.runs);
        if let Some(v) = &self.loss_mode {
            s.loss_mode = v.clone();
        }
        if let Some(v) = &self.name {
            s.name = v.clone();
        }
        s.wake_exponent = self.wake_exponent.or(s.wake_exponent);
        s.unbounded_retries |= self.unbounded_retries;
        s.traces |= self.traces;
        Ok(s)
    }
}

fn write<T: Serialize>(dir: &Path, stem: &str, rows: &[T]) -> Result<(), ReportError> {
    for path in report::write_rows(dir, stem, rows)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let scenario = |args: &ScenarioArgs| -> Result<(Scenario, PathBuf), CliError> {
        let mut s = args.scenario()?;
        if let Some(path) = &cli.config {
            s = s.overlay_file(path)?;
        }
        s.validate()?;
        let out = s.output_dir.clone().unwrap_or_else(|| cli.out.clone());
        Ok((s, out))
    };
    match &cli.command {
        Command::Simulate(args) => {
            let (s, out) = scenario(args)?;
            let traces = s.traces.then(|| out.join("traces"));
            let rows = experiments::simulate(&s, traces.as_deref())?;
            write(&out, &format!("{}-simulate", s.name), &rows)?;
        }
        Command::Analyze(args) => {
            let (s, out) = scenario(args)?;
            write(&out, &format!("{}-analyze", s.name), &experiments::analyze(&s)?)?;
        }
        Command::Budget(args) => {
            let (s, out) = scenario(args)?;
            write(&out, &format!("{}-budget", s.name), &experiments::budget(&s)?)?;
        }
        Command::Overhead(args) => {
            let (s, out) = scenario(args)?;
            let (curves, even) = experiments::overhead(&s)?;
            write(&out, &format!("{}-overhead", s.name), &curves)?;
            write(&out, &format!("{}-breakeven", s.name), &even)?;
        }
        Command::Verify(args) => {
            let opts = VerifyOptions { mc_runs: args.mc_runs, safety_cases: args.safety_cases, seed: args.seed };
            let rows = verify::run_all(&opts);
            for r in &rows {
                println!("[{}] {} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.check, r.measured);
            }
            write(&cli.out, &args.name, &rows)?;
            let failed = rows.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                return Err(CliError::Verify(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
