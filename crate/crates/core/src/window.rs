//! Sliding time-window aggregation over a timestamp-sorted flow stream.
//!
//! Every host accumulates three protocol-segregated flow lists (TCP, UDP,
//! OTHER) plus a multiset of in-window ports per protocol. Processing a flow
//! first evicts entries older than `anchor - window` from both endpoint hosts,
//! reads the counts and the new-port flags, emits a frozen [`WindowedSample`],
//! and only then appends the flow to both hosts (direction-mirrored on the
//! destination side). Once emitted, a sample never changes: downstream
//! training can shuffle samples freely.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FlowRecord, IngestError, ProtocolClass, CANONICAL_COLUMNS};

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window length must be positive and finite, got {0}")]
    InvalidWindow(f64),
    #[error("host capacity must be at least 2")]
    InvalidCapacity,
    #[error("input not sorted by timestamp at index {index}: {previous} > {current}")]
    Unsorted { index: usize, previous: f64, current: f64 },
    #[error(transparent)]
    Persist(#[from] IngestError),
    #[error("windowed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("windowed csv row {line}: {reason}")]
    BadRow { line: u64, reason: String },
}

/// Window engine configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window length in seconds, anchored at the current flow's timestamp.
    pub window_seconds: f64,
    /// Optional bound on tracked hosts; the least-recently-anchored host is
    /// dropped when the bound is exceeded. `None` keeps every host.
    pub max_hosts: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window_seconds: 60.0, max_hosts: None }
    }
}

impl WindowConfig {
    pub fn new(window_seconds: f64) -> Self {
        Self { window_seconds, max_hosts: None }
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        if self.window_seconds.is_nan() || self.window_seconds <= 0.0 || !self.window_seconds.is_finite() {
            return Err(WindowError::InvalidWindow(self.window_seconds));
        }
        if let Some(cap) = self.max_hosts {
            // every flow touches two hosts
            if cap < 2 {
                return Err(WindowError::InvalidCapacity);
            }
        }
        Ok(())
    }
}

/// One flow as stored on a host: quantities oriented out/in from that host's
/// point of view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowEntry {
    pub timestamp: f64,
    pub duration: f64,
    pub packets_out: u64,
    pub packets_in: u64,
    pub bytes_out: u64,
    pub bytes_in: u64,
    /// This host's own port in the flow.
    pub port: u16,
}

#[derive(Debug, Clone, Default)]
struct ProtocolState {
    flows: VecDeque<FlowEntry>,
    /// Multiset of in-window ports. Never populated for OTHER.
    ports: HashMap<u16, u32>,
}

impl ProtocolState {
    fn evict(&mut self, cutoff: f64, track_ports: bool) {
        while let Some(front) = self.flows.front() {
            if front.timestamp >= cutoff {
                break;
            }
            let gone = self.flows.pop_front().expect("non-empty");
            if track_ports {
                if let Some(n) = self.ports.get_mut(&gone.port) {
                    *n -= 1;
                    if *n == 0 {
                        self.ports.remove(&gone.port);
                    }
                }
            }
        }
    }
}

/// Mean of each stored flow field over one protocol's in-window list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowAverages {
    pub duration: f64,
    pub packets_out: f64,
    pub packets_in: f64,
    pub bytes_out: f64,
    pub bytes_in: f64,
}

/// Per-host rolling state: three protocol-segregated flow lists plus the
/// per-protocol port multisets.
#[derive(Debug, Clone, Default)]
pub struct HostWindowState {
    classes: [ProtocolState; 3],
}

impl HostWindowState {
    /// Drop every flow with `timestamp < anchor - window`. The window is
    /// inclusive on both ends.
    pub fn evict(&mut self, anchor: f64, config: &WindowConfig) {
        let cutoff = anchor - config.window_seconds;
        for proto in ProtocolClass::ALL {
            let track_ports = proto != ProtocolClass::Other;
            self.classes[proto.index()].evict(cutoff, track_ports);
        }
    }

    /// `(flow_count, distinct_port_count)` for one protocol class. The port
    /// count is always zero for OTHER.
    pub fn counts_for(&self, protocol: ProtocolClass) -> (u64, u64) {
        let state = &self.classes[protocol.index()];
        let ports = if protocol == ProtocolClass::Other { 0 } else { state.ports.len() as u64 };
        (state.flows.len() as u64, ports)
    }

    /// Whether `port` is absent from the protocol's in-window multiset.
    /// OTHER flows never register ports, so they always read as new.
    pub fn port_is_new(&self, protocol: ProtocolClass, port: u16) -> bool {
        if protocol == ProtocolClass::Other {
            return true;
        }
        !self.classes[protocol.index()].ports.contains_key(&port)
    }

    /// Append a flow oriented from this host's point of view.
    pub fn insert(&mut self, protocol: ProtocolClass, entry: FlowEntry) {
        let state = &mut self.classes[protocol.index()];
        if protocol != ProtocolClass::Other {
            *state.ports.entry(entry.port).or_insert(0) += 1;
        }
        state.flows.push_back(entry);
    }

    /// Recomputed per-field means over one protocol's in-window list; `None`
    /// when the list is empty. Computed on demand, never incrementally.
    pub fn averages(&self, protocol: ProtocolClass) -> Option<FlowAverages> {
        let flows = &self.classes[protocol.index()].flows;
        if flows.is_empty() {
            return None;
        }
        let n = flows.len() as f64;
        let mut a = FlowAverages { duration: 0.0, packets_out: 0.0, packets_in: 0.0, bytes_out: 0.0, bytes_in: 0.0 };
        for f in flows {
            a.duration += f.duration;
            a.packets_out += f.packets_out as f64;
            a.packets_in += f.packets_in as f64;
            a.bytes_out += f.bytes_out as f64;
            a.bytes_in += f.bytes_in as f64;
        }
        a.duration /= n;
        a.packets_out /= n;
        a.packets_in /= n;
        a.bytes_out /= n;
        a.bytes_in /= n;
        Some(a)
    }

    pub fn flows(&self, protocol: ProtocolClass) -> impl Iterator<Item = &FlowEntry> {
        self.classes[protocol.index()].flows.iter()
    }
}

/// The frozen per-flow training row: the flow itself, the new-port flags, and
/// the per-protocol counts of both hosts at the moment the flow arrived
/// (excluding the flow itself).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedSample {
    pub flow: FlowRecord,
    pub new_port_src: bool,
    pub new_port_dst: bool,
    pub src_flow_count: u64,
    pub dst_flow_count: u64,
    pub src_port_count: u64,
    pub dst_port_count: u64,
}

/// In-window mean aggregates for both endpoint hosts, read at the same moment
/// as the counts. Diagnostics only; no model feature consumes them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SampleAggregates {
    pub src: Option<FlowAverages>,
    pub dst: Option<FlowAverages>,
}

/// Single-writer streaming engine over one sorted flow stream.
#[derive(Debug)]
pub struct WindowEngine {
    config: WindowConfig,
    hosts: HashMap<String, Host>,
    /// (last-touch sequence, host) index for least-recently-anchored spill.
    touch_order: BTreeSet<(u64, String)>,
    seq: u64,
    prev_timestamp: Option<f64>,
    index: usize,
    self_flows: u64,
    spilled_hosts: u64,
}

#[derive(Debug)]
struct Host {
    state: HostWindowState,
    last_touch: u64,
}

impl WindowEngine {
    pub fn new(config: WindowConfig) -> Result<Self, WindowError> {
        config.validate()?;
        Ok(Self {
            config,
            hosts: HashMap::new(),
            touch_order: BTreeSet::new(),
            seq: 0,
            prev_timestamp: None,
            index: 0,
            self_flows: 0,
            spilled_hosts: 0,
        })
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    /// Hosts currently tracked.
    pub fn host_count(&self) -> usize {
        self.hosts.len()
    }

    /// Flows seen with `src_ip == dst_ip`; processed as two updates of the
    /// same host and surfaced here for diagnostics.
    pub fn self_flow_count(&self) -> u64 {
        self.self_flows
    }

    /// Hosts dropped by the capacity bound so far.
    pub fn spilled_host_count(&self) -> u64 {
        self.spilled_hosts
    }

    pub fn host_state(&self, host: &str) -> Option<&HostWindowState> {
        self.hosts.get(host).map(|h| &h.state)
    }

    /// Process one flow and emit its frozen sample.
    pub fn push(&mut self, record: FlowRecord) -> Result<WindowedSample, WindowError> {
        Ok(self.push_inner(record, false)?.0)
    }

    /// Like [`push`](Self::push), additionally reporting both hosts' in-window
    /// mean aggregates at read time.
    pub fn push_with_aggregates(
        &mut self,
        record: FlowRecord,
    ) -> Result<(WindowedSample, SampleAggregates), WindowError> {
        let (sample, aggr) = self.push_inner(record, true)?;
        Ok((sample, aggr.expect("aggregates requested")))
    }

    fn push_inner(
        &mut self,
        record: FlowRecord,
        want_aggregates: bool,
    ) -> Result<(WindowedSample, Option<SampleAggregates>), WindowError> {
        let anchor = record.timestamp;
        if let Some(prev) = self.prev_timestamp {
            if anchor < prev {
                return Err(WindowError::Unsorted { index: self.index, previous: prev, current: anchor });
            }
        }
        self.prev_timestamp = Some(anchor);
        if record.src_ip == record.dst_ip {
            self.self_flows += 1;
        }

        self.touch(&record.src_ip, anchor);
        self.touch(&record.dst_ip, anchor);

        let proto = record.protocol;
        let (src_flow_count, src_port_count, new_port_src, src_avg) = {
            let state = &self.hosts[&record.src_ip].state;
            let (f, p) = state.counts_for(proto);
            let avg = want_aggregates.then(|| state.averages(proto)).flatten();
            (f, p, state.port_is_new(proto, record.src_port), avg)
        };
        let (dst_flow_count, dst_port_count, new_port_dst, dst_avg) = {
            let state = &self.hosts[&record.dst_ip].state;
            let (f, p) = state.counts_for(proto);
            let avg = want_aggregates.then(|| state.averages(proto)).flatten();
            (f, p, state.port_is_new(proto, record.dst_port), avg)
        };

        // Source host stores the flow as-is; the destination host stores it
        // with the directional quantities swapped.
        let entry_src = FlowEntry {
            timestamp: anchor,
            duration: record.duration,
            packets_out: record.src_packets,
            packets_in: record.dst_packets,
            bytes_out: record.src_bytes,
            bytes_in: record.dst_bytes,
            port: record.src_port,
        };
        let entry_dst = FlowEntry {
            timestamp: anchor,
            duration: record.duration,
            packets_out: record.dst_packets,
            packets_in: record.src_packets,
            bytes_out: record.dst_bytes,
            bytes_in: record.src_bytes,
            port: record.dst_port,
        };
        self.hosts.get_mut(&record.src_ip).expect("touched").state.insert(proto, entry_src);
        self.hosts.get_mut(&record.dst_ip).expect("touched").state.insert(proto, entry_dst);

        self.spill_over_capacity(&record.src_ip, &record.dst_ip);
        self.index += 1;

        let aggregates = want_aggregates.then_some(SampleAggregates { src: src_avg, dst: dst_avg });
        Ok((
            WindowedSample {
                flow: record,
                new_port_src,
                new_port_dst,
                src_flow_count,
                dst_flow_count,
                src_port_count,
                dst_port_count,
            },
            aggregates,
        ))
    }

    /// Ensure the host exists, evict it against the anchor, and refresh its
    /// position in the touch order.
    fn touch(&mut self, host: &str, anchor: f64) {
        self.seq += 1;
        let seq = self.seq;
        match self.hosts.get_mut(host) {
            Some(h) => {
                self.touch_order.remove(&(h.last_touch, host.to_string()));
                h.last_touch = seq;
                h.state.evict(anchor, &self.config);
            }
            None => {
                self.hosts.insert(host.to_string(), Host { state: HostWindowState::default(), last_touch: seq });
            }
        }
        self.touch_order.insert((seq, host.to_string()));
    }

    fn spill_over_capacity(&mut self, keep_a: &str, keep_b: &str) {
        let Some(cap) = self.config.max_hosts else { return };
        while self.hosts.len() > cap {
            let Some(oldest) = self.touch_order.iter().find(|(_, h)| h != keep_a && h != keep_b).cloned()
            else {
                break;
            };
            self.touch_order.remove(&oldest);
            self.hosts.remove(&oldest.1);
            self.spilled_hosts += 1;
        }
    }
}

/// Run a whole sorted stream through a fresh engine, emitting one sample per
/// record in input order.
pub fn process_stream(
    records: impl IntoIterator<Item = FlowRecord>,
    config: &WindowConfig,
) -> Result<Vec<WindowedSample>, WindowError> {
    let mut engine = WindowEngine::new(config.clone())?;
    records.into_iter().map(|r| engine.push(r)).collect()
}

// ── Persistence ───────────────────────────────────────────────────────────────

/// Fixed column order of the windowed-sample file: all flow fields followed by
/// the window-derived columns.
pub fn windowed_columns() -> Vec<&'static str> {
    let mut cols: Vec<&'static str> = CANONICAL_COLUMNS.to_vec();
    cols.extend([
        "new_port_src",
        "new_port_dst",
        "src_flow_count",
        "dst_flow_count",
        "src_port_count",
        "dst_port_count",
    ]);
    cols
}

pub struct WindowedWriter {
    inner: csv::Writer<std::fs::File>,
}

impl WindowedWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, WindowError> {
        let mut inner = csv::WriterBuilder::new().from_path(path.as_ref())?;
        inner.write_record(windowed_columns())?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, s: &WindowedSample) -> Result<(), WindowError> {
        let f = &s.flow;
        self.inner.write_record(&[
            f.timestamp.to_string(),
            f.src_ip.clone(),
            f.src_port.to_string(),
            f.dst_ip.clone(),
            f.dst_port.to_string(),
            f.protocol.to_string(),
            f.duration.to_string(),
            f.src_packets.to_string(),
            f.dst_packets.to_string(),
            f.src_bytes.to_string(),
            f.dst_bytes.to_string(),
            f.label.clone(),
            (s.new_port_src as u8).to_string(),
            (s.new_port_dst as u8).to_string(),
            s.src_flow_count.to_string(),
            s.dst_flow_count.to_string(),
            s.src_port_count.to_string(),
            s.dst_port_count.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), WindowError> {
        self.inner.flush().map_err(|e| WindowError::BadRow { line: 0, reason: e.to_string() })?;
        Ok(())
    }
}

pub fn write_windowed_csv(path: impl AsRef<Path>, samples: &[WindowedSample]) -> Result<(), WindowError> {
    let mut w = WindowedWriter::create(path)?;
    for s in samples {
        w.write(s)?;
    }
    w.finish()
}

pub fn read_windowed_csv(path: impl AsRef<Path>) -> Result<Vec<WindowedSample>, WindowError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let expected = windowed_columns();
    let mut idx = Vec::with_capacity(expected.len());
    for name in &expected {
        let i = headers
            .iter()
            .position(|h| h.trim() == *name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))?;
        idx.push(i);
    }
    let mut samples = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = n as u64 + 2;
        let cell = |i: usize| row.get(idx[i]).unwrap_or("").trim();
        let bad = |reason: String| WindowError::BadRow { line, reason };
        let parse_f64 = |i: usize| cell(i).parse::<f64>().map_err(|_| bad(format!("bad number `{}`", cell(i))));
        let parse_u64 = |i: usize| cell(i).parse::<u64>().map_err(|_| bad(format!("bad count `{}`", cell(i))));
        let parse_u16 = |i: usize| cell(i).parse::<u16>().map_err(|_| bad(format!("bad port `{}`", cell(i))));
        let parse_flag = |i: usize| match cell(i) {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(bad(format!("bad flag `{other}`"))),
        };
        samples.push(WindowedSample {
            flow: FlowRecord {
                timestamp: parse_f64(0)?,
                src_ip: cell(1).to_string(),
                src_port: parse_u16(2)?,
                dst_ip: cell(3).to_string(),
                dst_port: parse_u16(4)?,
                protocol: ProtocolClass::parse(cell(5)),
                duration: parse_f64(6)?,
                src_packets: parse_u64(7)?,
                dst_packets: parse_u64(8)?,
                src_bytes: parse_u64(9)?,
                dst_bytes: parse_u64(10)?,
                label: cell(11).to_string(),
            },
            new_port_src: parse_flag(12)?,
            new_port_dst: parse_flag(13)?,
            src_flow_count: parse_u64(14)?,
            dst_flow_count: parse_u64(15)?,
            src_port_count: parse_u64(16)?,
            dst_port_count: parse_u64(17)?,
        });
    }
    Ok(samples)
}
