//! Flow CSV ingestion and harmonization.
//!
//! Public intrusion-detection datasets ship flow tables with inconsistent
//! column names, duration units, and label vocabularies. A [`DatasetSchema`]
//! maps a concrete file onto the harmonized [`FlowRecord`] (seconds, canonical
//! labels, fixed field set); [`load_dataset`] applies it and returns a
//! timestamp-sorted stream.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Protocol class a flow is bucketed into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolClass {
    Tcp,
    Udp,
    Other,
}

impl ProtocolClass {
    pub const ALL: [ProtocolClass; 3] = [ProtocolClass::Tcp, ProtocolClass::Udp, ProtocolClass::Other];

    /// Index into per-protocol arrays: TCP 0, UDP 1, OTHER 2.
    pub fn index(self) -> usize {
        match self {
            ProtocolClass::Tcp => 0,
            ProtocolClass::Udp => 1,
            ProtocolClass::Other => 2,
        }
    }

    /// One-hot mask in (TCP, UDP, OTHER) order.
    pub fn mask(self) -> [f64; 3] {
        let mut m = [0.0; 3];
        m[self.index()] = 1.0;
        m
    }

    /// Accepts canonical names, common lowercase spellings, and IANA numbers.
    pub fn parse(raw: &str) -> ProtocolClass {
        match raw.trim().to_ascii_lowercase().as_str() {
            "tcp" | "6" => ProtocolClass::Tcp,
            "udp" | "17" => ProtocolClass::Udp,
            _ => ProtocolClass::Other,
        }
    }
}

impl fmt::Display for ProtocolClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProtocolClass::Tcp => "TCP",
            ProtocolClass::Udp => "UDP",
            ProtocolClass::Other => "OTHER",
        };
        f.write_str(s)
    }
}

/// One harmonized flow record.
///
/// Host identifiers are opaque strings compared only for equality. Duration is
/// seconds; byte counts include headers where the source provides them (the
/// schema flag is metadata only, no reconstruction is attempted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub timestamp: f64,
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: ProtocolClass,
    pub duration: f64,
    pub src_packets: u64,
    pub dst_packets: u64,
    pub src_bytes: u64,
    pub dst_bytes: u64,
    pub label: String,
}

/// Unit of the duration column in a source file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationUnit {
    Seconds,
    Millis,
    Micros,
}

impl DurationUnit {
    pub fn to_seconds(self, raw: f64) -> f64 {
        match self {
            DurationUnit::Seconds => raw * 1.0,
            DurationUnit::Millis => raw * 1e-3,
            DurationUnit::Micros => raw * 1e-6,
        }
    }
}

impl FromStr for DurationUnit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "s" => Ok(DurationUnit::Seconds),
            "ms" => Ok(DurationUnit::Millis),
            "us" | "µs" => Ok(DurationUnit::Micros),
            other => Err(format!("unknown duration unit `{other}` (expected s, ms or us)")),
        }
    }
}

/// What to do with a row that fails to parse or carries an unmapped label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RowErrorPolicy {
    /// Drop the row and report a count at the end.
    #[default]
    Skip,
    /// Fail the whole load at the first bad row.
    Abort,
}

/// Default canonical class set.
pub const DEFAULT_CLASSES: [&str; 6] = ["Benign", "DoS", "DDoS", "Password", "PortScan", "XSS"];

/// Fixed column order of the harmonized on-disk format.
pub const CANONICAL_COLUMNS: [&str; 12] = [
    "timestamp",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "protocol",
    "duration",
    "src_packets",
    "dst_packets",
    "src_bytes",
    "dst_bytes",
    "label",
];

const FIELD_NAMES: [&str; 11] = [
    "timestamp",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "protocol",
    "duration",
    "src_packets",
    "dst_packets",
    "src_bytes",
    "dst_bytes",
];

/// Column mapping plus unit/label semantics for one source file format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    /// Source column name for each harmonized field, keyed by field name.
    pub columns: BTreeMap<String, String>,
    pub duration_unit: DurationUnit,
    /// Whether the source byte counts include protocol headers. Recorded as
    /// metadata only.
    pub bytes_include_headers: bool,
    pub label_column: String,
    /// Raw label → canonical class. Empty map means identity.
    pub label_map: BTreeMap<String, String>,
    /// Canonical class vocabulary; labels outside it are rejected per policy.
    /// Empty means open vocabulary.
    pub classes: Vec<String>,
    pub delimiter: u8,
    pub on_error: RowErrorPolicy,
}

impl DatasetSchema {
    /// Schema of the harmonized format itself (identity mapping, seconds).
    pub fn canonical() -> Self {
        let columns = FIELD_NAMES.iter().map(|f| (f.to_string(), f.to_string())).collect();
        DatasetSchema {
            columns,
            duration_unit: DurationUnit::Seconds,
            bytes_include_headers: true,
            label_column: "label".into(),
            label_map: BTreeMap::new(),
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            delimiter: b',',
            on_error: RowErrorPolicy::Skip,
        }
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Self {
        self.classes = classes;
        self
    }

    pub fn with_policy(mut self, policy: RowErrorPolicy) -> Self {
        self.on_error = policy;
        self
    }

    /// Parse a `key = value` schema file. Recognized keys: the eleven field
    /// names, `label`, `duration_unit`, `bytes_include_headers`, `delimiter`,
    /// `on_error`, `classes`, and `label.<raw>` label-merge entries.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| IngestError::Io(path.as_ref().display().to_string(), e))?;
        Self::from_config_str(&text)
    }

    pub fn from_config_str(text: &str) -> Result<Self, IngestError> {
        let mut schema = DatasetSchema::canonical();
        schema.columns.clear();
        schema.label_map.clear();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| IngestError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            if let Some(raw_label) = key.strip_prefix("label.") {
                schema.label_map.insert(raw_label.to_string(), value.to_string());
                continue;
            }
            match key {
                "label" => schema.label_column = value.to_string(),
                "duration_unit" => {
                    schema.duration_unit = value.parse().map_err(IngestError::Config)?;
                }
                "bytes_include_headers" => {
                    schema.bytes_include_headers = value
                        .parse()
                        .map_err(|_| IngestError::Config(format!("bad bool `{value}`")))?;
                }
                "delimiter" => {
                    let bytes = value.as_bytes();
                    if bytes.len() != 1 {
                        return Err(IngestError::Config(format!(
                            "delimiter must be a single character, got `{value}`"
                        )));
                    }
                    schema.delimiter = bytes[0];
                }
                "on_error" => {
                    schema.on_error = match value {
                        "skip" => RowErrorPolicy::Skip,
                        "abort" => RowErrorPolicy::Abort,
                        other => {
                            return Err(IngestError::Config(format!(
                                "on_error must be skip or abort, got `{other}`"
                            )))
                        }
                    };
                }
                "classes" => {
                    schema.classes = value.split(',').map(|c| c.trim().to_string()).collect();
                }
                field if FIELD_NAMES.contains(&field) => {
                    schema.columns.insert(field.to_string(), value.to_string());
                }
                other => {
                    return Err(IngestError::Config(format!("unknown schema key `{other}`")));
                }
            }
        }
        schema.validate()?;
        Ok(schema)
    }

    /// Every harmonized field must map to a source column.
    pub fn validate(&self) -> Result<(), IngestError> {
        for field in FIELD_NAMES {
            if !self.columns.contains_key(field) {
                return Err(IngestError::Config(format!("schema maps no column for field `{field}`")));
            }
        }
        if self.label_column.is_empty() {
            return Err(IngestError::Config("schema maps no label column".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema: {0}")]
    Config(String),
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("row {line}: {reason}")]
    Row { line: u64, reason: String },
}

/// Outcome of a load: sorted records plus skip bookkeeping.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub records: Vec<FlowRecord>,
    pub rows_read: u64,
    pub rows_skipped: u64,
    /// Up to eight sample reasons for skipped rows.
    pub skip_examples: Vec<String>,
}

/// Load a flow CSV through a schema. Records come back sorted ascending by
/// timestamp (stable, so same-timestamp rows keep file order), with durations
/// in seconds and labels mapped to canonical classes.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<LoadOutcome, IngestError> {
    let mut out = read_records(path, schema)?;
    sort_by_timestamp(&mut out.records);
    Ok(out)
}

/// Load without sorting; the caller decides whether file order is trusted.
pub fn read_records(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<LoadOutcome, IngestError> {
    let mut reader = RecordReader::open(path, schema)?;
    let mut records = Vec::new();
    for result in &mut reader {
        records.push(result?);
    }
    Ok(LoadOutcome {
        records,
        rows_read: reader.rows_read(),
        rows_skipped: reader.rows_skipped(),
        skip_examples: reader.skip_examples().to_vec(),
    })
}

/// Streaming reader over a flow CSV: one harmonized record at a time, in file
/// order, with the schema's malformed-row policy applied. Keeps only one row
/// in memory, so arbitrarily large exports can be processed.
pub struct RecordReader {
    rows: csv::StringRecordsIntoIter<std::fs::File>,
    schema: DatasetSchema,
    idx: [usize; 11],
    label_idx: usize,
    line: u64,
    rows_read: u64,
    rows_skipped: u64,
    skip_examples: Vec<String>,
}

impl RecordReader {
    pub fn open(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Self, IngestError> {
        schema.validate()?;
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter)
            .flexible(false)
            .from_path(path.as_ref())?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| -> Result<usize, IngestError> {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
        };
        let mut idx = [0usize; 11];
        for (i, field) in FIELD_NAMES.iter().enumerate() {
            idx[i] = col(&schema.columns[*field])?;
        }
        let label_idx = col(&schema.label_column)?;
        Ok(Self {
            rows: reader.into_records(),
            schema: schema.clone(),
            idx,
            label_idx,
            line: 1, // header
            rows_read: 0,
            rows_skipped: 0,
            skip_examples: Vec::new(),
        })
    }

    pub fn rows_read(&self) -> u64 {
        self.rows_read
    }

    pub fn rows_skipped(&self) -> u64 {
        self.rows_skipped
    }

    /// Up to eight sample reasons for skipped rows.
    pub fn skip_examples(&self) -> &[String] {
        &self.skip_examples
    }
}

impl Iterator for RecordReader {
    type Item = Result<FlowRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let row = match self.rows.next()? {
                Ok(row) => row,
                Err(e) => return Some(Err(e.into())),
            };
            self.line += 1;
            self.rows_read += 1;
            match parse_row(&row, &self.idx, self.label_idx, &self.schema, self.line) {
                Ok(record) => return Some(Ok(record)),
                Err(e) => match self.schema.on_error {
                    RowErrorPolicy::Abort => return Some(Err(e)),
                    RowErrorPolicy::Skip => {
                        self.rows_skipped += 1;
                        if self.skip_examples.len() < 8 {
                            self.skip_examples.push(e.to_string());
                        }
                    }
                },
            }
        }
    }
}

/// Stable ascending sort by timestamp.
pub fn sort_by_timestamp(records: &mut [FlowRecord]) {
    records.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).expect("finite timestamps"));
}

fn parse_row(
    row: &csv::StringRecord,
    idx: &[usize; 11],
    label_idx: usize,
    schema: &DatasetSchema,
    line: u64,
) -> Result<FlowRecord, IngestError> {
    let cell = |i: usize| row.get(i).unwrap_or("").trim();
    let bad = |reason: String| IngestError::Row { line, reason };

    let timestamp: f64 = cell(idx[0])
        .parse()
        .map_err(|_| bad(format!("unparseable timestamp `{}`", cell(idx[0]))))?;
    if !timestamp.is_finite() {
        return Err(bad("non-finite timestamp".into()));
    }
    let src_ip = cell(idx[1]).to_string();
    let dst_ip = cell(idx[3]).to_string();
    if src_ip.is_empty() || dst_ip.is_empty() {
        return Err(bad("empty host identifier".into()));
    }
    let src_port = parse_port(cell(idx[2])).map_err(&bad)?;
    let dst_port = parse_port(cell(idx[4])).map_err(&bad)?;
    let protocol = ProtocolClass::parse(cell(idx[5]));
    let raw_duration: f64 = cell(idx[6])
        .parse()
        .map_err(|_| bad(format!("unparseable duration `{}`", cell(idx[6]))))?;
    let duration = schema.duration_unit.to_seconds(raw_duration);
    if !duration.is_finite() || duration < 0.0 {
        return Err(bad(format!("negative or non-finite duration {duration}")));
    }
    let src_packets = parse_count(cell(idx[7])).map_err(&bad)?;
    let dst_packets = parse_count(cell(idx[8])).map_err(&bad)?;
    let src_bytes = parse_count(cell(idx[9])).map_err(&bad)?;
    let dst_bytes = parse_count(cell(idx[10])).map_err(&bad)?;

    let raw_label = cell(label_idx);
    let label = match schema.label_map.get(raw_label) {
        Some(mapped) => mapped.clone(),
        None => raw_label.to_string(),
    };
    if !schema.classes.is_empty() && !schema.classes.iter().any(|c| c == &label) {
        return Err(bad(format!("unmapped label `{raw_label}`")));
    }

    Ok(FlowRecord {
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
        label,
    })
}

fn parse_port(s: &str) -> Result<u16, String> {
    s.parse::<u16>().map_err(|_| format!("bad port `{s}`"))
}

/// Counts parse as integers; integral floats ("12.0") are tolerated because
/// some exports format them that way.
fn parse_count(s: &str) -> Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("bad count `{s}`"))?;
    if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 {
        Ok(f as u64)
    } else {
        Err(format!("bad count `{s}`"))
    }
}

/// Per-class record counts.
pub fn class_table(records: &[FlowRecord]) -> BTreeMap<String, u64> {
    let mut table = BTreeMap::new();
    for r in records {
        *table.entry(r.label.clone()).or_insert(0) += 1;
    }
    table
}

/// Write records in the harmonized fixed column order.
pub fn write_canonical_csv(path: impl AsRef<Path>, records: &[FlowRecord]) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
    w.write_record(CANONICAL_COLUMNS)?;
    for r in records {
        w.write_record(&[
            r.timestamp.to_string(),
            r.src_ip.clone(),
            r.src_port.to_string(),
            r.dst_ip.clone(),
            r.dst_port.to_string(),
            r.protocol.to_string(),
            r.duration.to_string(),
            r.src_packets.to_string(),
            r.dst_packets.to_string(),
            r.src_bytes.to_string(),
            r.dst_bytes.to_string(),
            r.label.clone(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Io(path.as_ref().display().to_string(), e))?;
    Ok(())
}
