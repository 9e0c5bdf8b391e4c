//! Synthetic labeled flow streams with controllable class signatures.
//!
//! Each class is described by a [`TrafficProfile`]: arrival rate, host pools,
//! protocol mix, lognormal size/duration distributions, and a port strategy
//! per endpoint. Flood-style classes use a single victim and few ports; scan
//! classes sweep unique ports at high rate; the benign profile mixes all
//! three protocol classes. Generation is byte-for-byte deterministic under a
//! seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FlowRecord, ProtocolClass};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid profile `{label}`: {reason}")]
    InvalidProfile { label: String, reason: String },
    #[error("profile config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Lognormal location/scale in ln-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalSpec {
    /// Parameterized by the median of the resulting distribution.
    pub fn with_median(median: f64, sigma: f64) -> Self {
        Self { mu: median.ln(), sigma }
    }

    fn sample(&self, rng: &mut ChaCha20Rng) -> f64 {
        LogNormal::new(self.mu, self.sigma).expect("validated sigma").sample(rng)
    }
}

/// How one endpoint of a generated flow picks its port.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PortStrategy {
    /// Always the same port (single-service victim).
    Fixed(u16),
    /// Uniform choice from a small service set.
    FixedSet(Vec<u16>),
    /// Uniform in an inclusive range (ephemeral ports; narrow ranges model
    /// NAT-ed or tool-pinned sources).
    UniformRange { lo: u16, hi: u16 },
    /// Sequential sweep over an inclusive range, wrapping around. Every flow
    /// gets a fresh port until the range is exhausted.
    Sweep { lo: u16, hi: u16 },
}

impl PortStrategy {
    fn validate(&self) -> Result<(), String> {
        match self {
            PortStrategy::Fixed(p) => {
                if *p == 0 {
                    return Err("port 0 is reserved".into());
                }
            }
            PortStrategy::FixedSet(set) => {
                if set.is_empty() || set.contains(&0) {
                    return Err("port set must be non-empty and non-zero".into());
                }
            }
            PortStrategy::UniformRange { lo, hi } | PortStrategy::Sweep { lo, hi } => {
                if *lo == 0 || lo > hi {
                    return Err(format!("bad port range {lo}..{hi}"));
                }
            }
        }
        Ok(())
    }

    fn next(&self, rng: &mut ChaCha20Rng, sweep_state: &mut u32) -> u16 {
        match self {
            PortStrategy::Fixed(p) => *p,
            PortStrategy::FixedSet(set) => set[rng.random_range(0..set.len())],
            PortStrategy::UniformRange { lo, hi } => rng.random_range(*lo..=*hi),
            PortStrategy::Sweep { lo, hi } => {
                let span = (*hi - *lo) as u32 + 1;
                let port = *lo + (*sweep_state % span) as u16;
                *sweep_state += 1;
                port
            }
        }
    }
}

/// Generative parameters for one traffic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub label: String,
    /// Aggregate flow arrival rate in flows/second.
    pub rate: f64,
    pub src_hosts: u32,
    pub dst_hosts: u32,
    /// Host identifier prefix; source and destination pools never overlap.
    pub host_prefix: String,
    /// Probabilities for (TCP, UDP, OTHER).
    pub protocol_mix: [f64; 3],
    pub duration: LogNormalSpec,
    pub src_packets: LogNormalSpec,
    pub dst_packets: LogNormalSpec,
    pub src_bytes: LogNormalSpec,
    pub dst_bytes: LogNormalSpec,
    pub src_port: PortStrategy,
    pub dst_port: PortStrategy,
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |reason: String| SynthError::InvalidProfile { label: self.label.clone(), reason };
        if self.label.is_empty() {
            return Err(err("empty label".into()));
        }
        if self.rate.is_nan() || self.rate <= 0.0 || !self.rate.is_finite() {
            return Err(err(format!("rate {} must be positive", self.rate)));
        }
        if self.src_hosts == 0 || self.dst_hosts == 0 {
            return Err(err("host pools must be non-empty".into()));
        }
        let mix_sum: f64 = self.protocol_mix.iter().sum();
        if self.protocol_mix.iter().any(|p| *p < 0.0) || (mix_sum - 1.0).abs() > 1e-9 {
            return Err(err(format!("protocol mix {:?} must sum to 1", self.protocol_mix)));
        }
        for (name, spec) in [
            ("duration", &self.duration),
            ("src_packets", &self.src_packets),
            ("dst_packets", &self.dst_packets),
            ("src_bytes", &self.src_bytes),
            ("dst_bytes", &self.dst_bytes),
        ] {
            if !spec.mu.is_finite() || spec.sigma.is_nan() || spec.sigma < 0.0 || !spec.sigma.is_finite() {
                return Err(err(format!("bad {name} distribution {spec:?}")));
            }
        }
        self.src_port.validate().map_err(&err)?;
        self.dst_port.validate().map_err(&err)?;
        Ok(())
    }
}

// ── Built-in profile sets ─────────────────────────────────────────────────────

/// Ordinary mixed client/server traffic: many hosts, service destination
/// ports, wide ephemeral source ports, all three protocol classes.
pub fn benign_profile() -> TrafficProfile {
    TrafficProfile {
        label: "Benign".into(),
        rate: 40.0,
        src_hosts: 24,
        dst_hosts: 8,
        host_prefix: "lan".into(),
        protocol_mix: [0.55, 0.35, 0.10],
        duration: LogNormalSpec::with_median(0.5, 1.0),
        src_packets: LogNormalSpec::with_median(8.0, 0.8),
        dst_packets: LogNormalSpec::with_median(12.0, 0.8),
        src_bytes: LogNormalSpec::with_median(700.0, 1.0),
        dst_bytes: LogNormalSpec::with_median(3000.0, 1.2),
        src_port: PortStrategy::UniformRange { lo: 32768, hi: 60999 },
        dst_port: PortStrategy::FixedSet(vec![22, 53, 80, 123, 443]),
    }
}

/// Flood toward one victim service: huge flow rate, a single destination
/// port, a narrow source-port band, small short flows.
pub fn dos_profile() -> TrafficProfile {
    TrafficProfile {
        label: "DoS".into(),
        rate: 300.0,
        src_hosts: 2,
        dst_hosts: 1,
        host_prefix: "dos".into(),
        protocol_mix: [1.0, 0.0, 0.0],
        duration: LogNormalSpec::with_median(2.0, 0.7),
        src_packets: LogNormalSpec::with_median(3.0, 0.5),
        dst_packets: LogNormalSpec::with_median(1.5, 0.5),
        src_bytes: LogNormalSpec::with_median(220.0, 0.4),
        dst_bytes: LogNormalSpec::with_median(130.0, 0.5),
        src_port: PortStrategy::UniformRange { lo: 40000, hi: 40063 },
        dst_port: PortStrategy::Fixed(80),
    }
}

/// Port sweep from one scanner: unique destination ports at high rate, tiny
/// probe flows, near-zero durations.
pub fn portscan_profile() -> TrafficProfile {
    TrafficProfile {
        label: "PortScan".into(),
        rate: 200.0,
        src_hosts: 1,
        dst_hosts: 16,
        host_prefix: "scan".into(),
        protocol_mix: [1.0, 0.0, 0.0],
        duration: LogNormalSpec::with_median(1e-3, 0.3),
        src_packets: LogNormalSpec::with_median(1.2, 0.2),
        dst_packets: LogNormalSpec::with_median(0.8, 0.3),
        src_bytes: LogNormalSpec::with_median(60.0, 0.15),
        dst_bytes: LogNormalSpec::with_median(45.0, 0.4),
        src_port: PortStrategy::UniformRange { lo: 32768, hi: 60999 },
        dst_port: PortStrategy::Sweep { lo: 1, hi: 32000 },
    }
}

/// The three-class baseline mix.
pub fn standard_profiles() -> Vec<TrafficProfile> {
    vec![benign_profile(), dos_profile(), portscan_profile()]
}

/// Same attacks, but benign traffic from a very different network: few
/// NAT-ed sources on a narrow port band, busier per host, larger transfers.
/// Benign feature distributions shift; scan signatures stay put.
pub fn shifted_benign_profiles() -> Vec<TrafficProfile> {
    let mut benign = benign_profile();
    benign.src_hosts = 3;
    benign.dst_hosts = 2;
    benign.host_prefix = "nat".into();
    benign.protocol_mix = [0.8, 0.15, 0.05];
    benign.duration = LogNormalSpec::with_median(6.0, 0.8);
    benign.src_packets = LogNormalSpec::with_median(40.0, 0.6);
    benign.dst_packets = LogNormalSpec::with_median(60.0, 0.6);
    benign.src_bytes = LogNormalSpec::with_median(20_000.0, 0.8);
    benign.dst_bytes = LogNormalSpec::with_median(90_000.0, 0.9);
    benign.src_port = PortStrategy::UniformRange { lo: 50000, hi: 50031 };
    benign.dst_port = PortStrategy::FixedSet(vec![443, 8443]);
    vec![benign, dos_profile(), portscan_profile()]
}

/// Named built-in profile sets.
pub fn builtin_profiles(name: &str) -> Result<Vec<TrafficProfile>, SynthError> {
    match name {
        "standard" => Ok(standard_profiles()),
        "shifted-benign" => Ok(shifted_benign_profiles()),
        other => Err(SynthError::Config(format!(
            "unknown built-in profile set `{other}` (available: standard, shifted-benign)"
        ))),
    }
}

// ── Generation ────────────────────────────────────────────────────────────────

fn profile_rng(seed: u64, index: usize) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

fn sample_count(rng: &mut ChaCha20Rng, rate: f64, duration: f64) -> u64 {
    let lambda = rate * duration;
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).expect("positive lambda").sample(rng) as u64
}

fn round_count(x: f64) -> u64 {
    if x.is_finite() && x > 0.0 {
        x.round() as u64
    } else {
        0
    }
}

fn generate_profile(
    profile: &TrafficProfile,
    count: u64,
    duration_s: f64,
    rng: &mut ChaCha20Rng,
) -> Vec<FlowRecord> {
    let mut sweep_src = 0u32;
    let mut sweep_dst = 0u32;
    let mut flows = Vec::with_capacity(count as usize);
    for _ in 0..count {
        // arrivals conditioned on the count are uniform over the capture
        let timestamp = rng.random_range(0.0..duration_s);
        let src_ip = format!("{}-src-{}", profile.host_prefix, rng.random_range(0..profile.src_hosts));
        let dst_ip = format!("{}-dst-{}", profile.host_prefix, rng.random_range(0..profile.dst_hosts));
        let p: f64 = rng.random();
        let protocol = if p < profile.protocol_mix[0] {
            ProtocolClass::Tcp
        } else if p < profile.protocol_mix[0] + profile.protocol_mix[1] {
            ProtocolClass::Udp
        } else {
            ProtocolClass::Other
        };
        let duration = profile.duration.sample(rng);
        let src_packets = round_count(profile.src_packets.sample(rng));
        let dst_packets = round_count(profile.dst_packets.sample(rng));
        let src_bytes = round_count(profile.src_bytes.sample(rng));
        let dst_bytes = round_count(profile.dst_bytes.sample(rng));
        let src_port = profile.src_port.next(rng, &mut sweep_src);
        let dst_port = profile.dst_port.next(rng, &mut sweep_dst);
        flows.push(FlowRecord {
            timestamp,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol,
            duration,
            src_packets,
            dst_packets,
            src_bytes,
            dst_bytes,
            label: profile.label.clone(),
        });
    }
    flows
}

fn finalize(mut flows: Vec<FlowRecord>) -> Vec<FlowRecord> {
    crate::ingest::sort_by_timestamp(&mut flows);
    flows
}

/// Generate a merged, timestamp-sorted stream. Per-class flow counts draw
/// from a Poisson law at `rate * duration_s`.
pub fn generate(
    profiles: &[TrafficProfile],
    duration_s: f64,
    seed: u64,
) -> Result<Vec<FlowRecord>, SynthError> {
    if profiles.is_empty() {
        return Err(SynthError::Config("at least one profile required".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    if duration_s <= 0.0 {
        return Ok(Vec::new());
    }
    let mut flows = Vec::new();
    for (i, profile) in profiles.iter().enumerate() {
        let mut rng = profile_rng(seed, i);
        let count = sample_count(&mut rng, profile.rate, duration_s);
        flows.extend(generate_profile(profile, count, duration_s, &mut rng));
    }
    Ok(finalize(flows))
}

/// Generate exactly the requested number of flows per profile, spread over
/// `duration_s` seconds.
pub fn generate_with_counts(
    requests: &[(TrafficProfile, u64)],
    duration_s: f64,
    seed: u64,
) -> Result<Vec<FlowRecord>, SynthError> {
    if requests.is_empty() {
        return Err(SynthError::Config("at least one profile required".into()));
    }
    for (p, _) in requests {
        p.validate()?;
    }
    if duration_s <= 0.0 {
        return Ok(Vec::new());
    }
    let mut flows = Vec::new();
    for (i, (profile, count)) in requests.iter().enumerate() {
        let mut rng = profile_rng(seed, i);
        flows.extend(generate_profile(profile, *count, duration_s, &mut rng));
    }
    Ok(finalize(flows))
}

// ── Profile files ─────────────────────────────────────────────────────────────

/// Parse a key-value profile file. Keys are `class.<Label>.<field>`:
/// `rate`, `src_hosts`, `dst_hosts`, `host_prefix`, `protocol_mix` (three
/// comma-separated probabilities), `duration`/`src_packets`/`dst_packets`/
/// `src_bytes`/`dst_bytes` (`median,sigma`), `src_port`/`dst_port`
/// (`fixed:80`, `set:80,443`, `range:1024-2048`, `sweep:1-32000`).
pub fn profiles_from_file(path: impl AsRef<Path>) -> Result<Vec<TrafficProfile>, SynthError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| SynthError::Io(path.as_ref().display().to_string(), e))?;
    profiles_from_config_str(&text)
}

pub fn profiles_from_config_str(text: &str) -> Result<Vec<TrafficProfile>, SynthError> {
    let mut by_label: BTreeMap<String, TrafficProfile> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| SynthError::Config(format!("line {}: {reason}", lineno + 1));
        let (key, value) =
            line.split_once('=').ok_or_else(|| bad("expected `key = value`".into()))?;
        let key = key.trim();
        let value = value.trim();
        let rest = key
            .strip_prefix("class.")
            .ok_or_else(|| bad(format!("unknown key `{key}` (expected class.<label>.<field>)")))?;
        let (label, field) = rest
            .rsplit_once('.')
            .ok_or_else(|| bad(format!("unknown key `{key}` (expected class.<label>.<field>)")))?;
        if !by_label.contains_key(label) {
            let mut p = benign_profile();
            p.label = label.to_string();
            p.host_prefix = label.to_ascii_lowercase();
            by_label.insert(label.to_string(), p);
            order.push(label.to_string());
        }
        let profile = by_label.get_mut(label).expect("inserted");
        let parse_lognormal = |v: &str| -> Result<LogNormalSpec, SynthError> {
            let (median, sigma) = v
                .split_once(',')
                .ok_or_else(|| bad(format!("expected `median,sigma`, got `{v}`")))?;
            let median: f64 = median.trim().parse().map_err(|_| bad(format!("bad median `{median}`")))?;
            let sigma: f64 = sigma.trim().parse().map_err(|_| bad(format!("bad sigma `{sigma}`")))?;
            Ok(LogNormalSpec::with_median(median, sigma))
        };
        let parse_port = |v: &str| -> Result<PortStrategy, SynthError> {
            let (kind, spec) = v.split_once(':').ok_or_else(|| bad(format!("bad port strategy `{v}`")))?;
            let parse_u16 = |s: &str| s.trim().parse::<u16>().map_err(|_| bad(format!("bad port `{s}`")));
            match kind.trim() {
                "fixed" => Ok(PortStrategy::Fixed(parse_u16(spec)?)),
                "set" => Ok(PortStrategy::FixedSet(
                    spec.split(',').map(parse_u16).collect::<Result<Vec<_>, _>>()?,
                )),
                "range" | "sweep" => {
                    let (lo, hi) =
                        spec.split_once('-').ok_or_else(|| bad(format!("bad port range `{spec}`")))?;
                    let (lo, hi) = (parse_u16(lo)?, parse_u16(hi)?);
                    if kind.trim() == "range" {
                        Ok(PortStrategy::UniformRange { lo, hi })
                    } else {
                        Ok(PortStrategy::Sweep { lo, hi })
                    }
                }
                other => Err(bad(format!("unknown port strategy `{other}`"))),
            }
        };
        match field {
            "rate" => profile.rate = value.parse().map_err(|_| bad(format!("bad rate `{value}`")))?,
            "src_hosts" => {
                profile.src_hosts = value.parse().map_err(|_| bad(format!("bad src_hosts `{value}`")))?
            }
            "dst_hosts" => {
                profile.dst_hosts = value.parse().map_err(|_| bad(format!("bad dst_hosts `{value}`")))?
            }
            "host_prefix" => profile.host_prefix = value.to_string(),
            "protocol_mix" => {
                let parts: Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse()).collect();
                let parts = parts.map_err(|_| bad(format!("bad protocol mix `{value}`")))?;
                if parts.len() != 3 {
                    return Err(bad("protocol mix needs three probabilities".into()));
                }
                profile.protocol_mix = [parts[0], parts[1], parts[2]];
            }
            "duration" => profile.duration = parse_lognormal(value)?,
            "src_packets" => profile.src_packets = parse_lognormal(value)?,
            "dst_packets" => profile.dst_packets = parse_lognormal(value)?,
            "src_bytes" => profile.src_bytes = parse_lognormal(value)?,
            "dst_bytes" => profile.dst_bytes = parse_lognormal(value)?,
            "src_port" => profile.src_port = parse_port(value)?,
            "dst_port" => profile.dst_port = parse_port(value)?,
            other => return Err(bad(format!("unknown profile field `{other}`"))),
        }
    }
    if order.is_empty() {
        return Err(SynthError::Config("no profiles defined".into()));
    }
    let profiles: Vec<TrafficProfile> = order.into_iter().map(|l| by_label.remove(&l).expect("present")).collect();
    for p in &profiles {
        p.validate()?;
    }
    Ok(profiles)
}
