//! Experiment description shared by all subcommands.
//!
//! A scenario starts from command-line flags; keys present in a TOML config
//! file replace the flag values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trome_core::channel_sim::{LossMode, LossModel, SimConfig, Topology};
use trome_core::protocol_engine::Protocol;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("bad config file {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("unknown protocol {0:?} (expected trome, naive or ctpwur)")]
    UnknownProtocol(String),
    #[error("unknown loss mode {0:?} (expected metastep or packet)")]
    UnknownLossMode(String),
    #[error("bad list {0:?}: use comma-separated values or an inclusive range like 2-6")]
    BadList(String),
    #[error("{field} must be {expected}, got {got}")]
    OutOfRange { field: &'static str, expected: &'static str, got: String },
    #[error("payload of {got} bytes exceeds the {max}-byte limit of {protocol}")]
    PayloadTooLarge { protocol: &'static str, got: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Prefix of every output file.
    pub name: String,
    pub protocols: Vec<String>,
    /// Line lengths to sweep, sink included.
    pub nodes: Vec<usize>,
    pub packets: Vec<usize>,
    pub payload: usize,
    /// Payload sweep of the overhead report.
    pub payloads: Vec<usize>,
    pub p: f64,
    pub q: f64,
    pub ttl: u8,
    pub seed: u64,
    /// Seeds `seed..seed + runs` per configuration.
    pub runs: u64,
    pub loss_mode: String,
    /// Retry forever instead of dropping a message after the retry cap.
    pub unbounded_retries: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wake_exponent: Option<u32>,
    /// Write one JSON-lines trace per configuration and seed.
    pub traces: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "run".into(),
            protocols: Protocol::ALL.iter().map(|p| p.as_str().to_string()).collect(),
            nodes: vec![4],
            packets: vec![1],
            payload: 100,
            payloads: (1..=24).map(|k| 10 * k).collect(),
            p: 1.0,
            q: 1.0,
            ttl: 3,
            seed: 0,
            runs: 1,
            loss_mode: "metastep".into(),
            unbounded_retries: false,
            wake_exponent: None,
            traces: false,
            output_dir: None,
        }
    }
}

/// Parses `1,2,5`, `2-6` or a mix such as `1,4-6`.
pub fn parse_list(s: &str) -> Result<Vec<usize>, ConfigError> {
    let bad = || ConfigError::BadList(s.to_string());
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

impl Scenario {
    /// Replaces every field present in the TOML file at `path`.
    pub fn overlay_file(&self, path: &Path) -> Result<Scenario, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        self.overlay_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source: Box::new(source) })
    }

    pub fn overlay_str(&self, text: &str) -> Result<Scenario, toml::de::Error> {
        let file: toml::Table = text.parse()?;
        let mut base = toml::Table::try_from(self).expect("scenario serializes to a table");
        base.extend(file);
        base.try_into()
    }

    pub fn protocol_list(&self) -> Result<Vec<Protocol>, ConfigError> {
        self.protocols
            .iter()
            .map(|s| Protocol::parse(s).ok_or_else(|| ConfigError::UnknownProtocol(s.clone())))
            .collect()
    }

    pub fn loss_mode(&self) -> Result<LossMode, ConfigError> {
        match self.loss_mode.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "metastep" => Ok(LossMode::PerMetastep),
            "packet" | "perpacket" => Ok(LossMode::PerPacket),
            _ => Err(ConfigError::UnknownLossMode(self.loss_mode.clone())),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |field, expected, ok: bool, got: String| {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::OutOfRange { field, expected, got })
            }
        };
        let protocols = self.protocol_list()?;
        range("protocols", "non-empty", !protocols.is_empty(), "[]".into())?;
        self.loss_mode()?;
        range("nodes", "non-empty, each in 2..=100", !self.nodes.is_empty() && self.nodes.iter().all(|m| (2..=100).contains(m)), format!("{:?}", self.nodes))?;
        range("packets", "non-empty, each in 1..=64", !self.packets.is_empty() && self.packets.iter().all(|n| (1..=64).contains(n)), format!("{:?}", self.packets))?;
        range("p", "in [0, 1]", (0.0..=1.0).contains(&self.p), self.p.to_string())?;
        range("q", "in [0, 1]", (0.0..=1.0).contains(&self.q), self.q.to_string())?;
        range("ttl", "at least 1", self.ttl >= 1, self.ttl.to_string())?;
        range("runs", "at least 1", self.runs >= 1, self.runs.to_string())?;
        range("name", "a plain file name", !self.name.is_empty() && !self.name.contains(['/', '\\']), self.name.clone())?;
        for &payload in self.payloads.iter().chain([&self.payload]) {
            range("payload", "at least 4 bytes (the simulator tags each payload)", payload >= 4, payload.to_string())?;
            for &protocol in &protocols {
                if payload > protocol.max_payload() {
                    return Err(ConfigError::PayloadTooLarge { protocol: protocol.as_str(), got: payload, max: protocol.max_payload() });
                }
            }
        }
        Ok(())
    }

    pub fn loss(&self) -> LossModel {
        LossModel { mode: self.loss_mode().unwrap_or(LossMode::PerMetastep), wake_exponent: self.wake_exponent, ..LossModel::new(self.p, self.q) }
    }

    /// Simulator configuration for one sweep point.
    pub fn sim_config(&self, protocol: Protocol, m: usize, n: usize, payload: usize) -> SimConfig {
        let topology = Topology::line(m).expect("validated node count");
        let mut cfg = SimConfig::new(topology, protocol);
        cfg.params.ttl = self.ttl;
        if self.unbounded_retries {
            cfg.params.retry_cap = u32::MAX;
        }
        cfg.loss = self.loss();
        cfg.packets = n;
        cfg.payload_bytes = payload;
        cfg.record = self.traces;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_list("2-6").unwrap(), vec![2, 3, 4, 5, 6]);
        assert_eq!(parse_list("1, 5").unwrap(), vec![1, 5]);
        assert_eq!(parse_list("1,4-5").unwrap(), vec![1, 4, 5]);
        assert!(parse_list("6-2").is_err());
        assert!(parse_list("").is_err());
        assert!(parse_list("a").is_err());
    }

    #[test]
    fn file_keys_win() {
        let flags = Scenario { p: 0.5, nodes: vec![3], ..Scenario::default() };
        let s = flags.overlay_str("p = 0.75\nprotocols = [\"trome\"]\n").unwrap();
        assert_eq!(s.p, 0.75);
        assert_eq!(s.protocols, vec!["trome"]);
        assert_eq!(s.nodes, vec![3]);
        assert!(flags.overlay_str("bogus = 1").is_err());
        assert!(flags.overlay_str("p = \"high\"").is_err());
    }

    #[test]
    fn validation() {
        assert!(Scenario::default().validate().is_ok());
        let bad = [
            Scenario { p: 1.5, ..Scenario::default() },
            Scenario { nodes: vec![1], ..Scenario::default() },
            Scenario { packets: vec![0], ..Scenario::default() },
            Scenario { payload: 246, ..Scenario::default() },
            Scenario { protocols: vec!["aloha".into()], ..Scenario::default() },
            Scenario { loss_mode: "sometimes".into(), ..Scenario::default() },
            Scenario { name: "../x".into(), ..Scenario::default() },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
        let naive_only = Scenario { protocols: vec!["naive".into()], payload: 246, payloads: vec![246], ..Scenario::default() };
        assert!(naive_only.validate().is_ok());
    }
}
