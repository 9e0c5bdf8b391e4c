//! Derived feature vector computed from a windowed sample.
//!
//! Directional field pairs enter as max/min or absolute difference, so the
//! vector is invariant to which endpoint the collector happened to call the
//! source. Ratio features carry a small additive stabilizer in the
//! denominator to stay finite on zero-packet and zero-byte flows.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{IngestError, ProtocolClass};
use crate::window::WindowedSample;

/// Additive denominator stabilizer for the ratio features.
pub const STABILIZER: f64 = 1e-4;

/// Number of derived features.
pub const FEATURE_COUNT: usize = 20;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("sample violates invariants: {0}")]
    InvariantViolation(String),
    #[error("unknown feature id {0} (valid: 1..=20, zero_length_flag)")]
    UnknownFeature(String),
    #[error(transparent)]
    Persist(#[from] IngestError),
    #[error("feature csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("feature csv row {line}: {reason}")]
    BadRow { line: u64, reason: String },
}

/// The 20 derived features plus the protocol one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// values[i] holds feature i+1.
    pub values: [f64; FEATURE_COUNT],
    pub protocol: ProtocolClass,
}

impl FeatureVector {
    /// Feature by 1-based number.
    pub fn feature(&self, number: usize) -> f64 {
        self.values[number - 1]
    }

    /// One-hot (TCP, UDP, OTHER) mask; exactly one element is 1.
    pub fn mask(&self) -> [f64; 3] {
        self.protocol.mask()
    }
}

/// Compute the feature vector of one windowed sample.
pub fn extract(sample: &WindowedSample) -> Result<FeatureVector, FeatureError> {
    let f = &sample.flow;
    if f.duration.is_nan() || f.duration < 0.0 || !f.duration.is_finite() {
        return Err(FeatureError::InvariantViolation(format!("duration {}", f.duration)));
    }

    let sp = f.src_packets as f64;
    let dp = f.dst_packets as f64;
    let sb = f.src_bytes as f64;
    let db = f.dst_bytes as f64;
    let sf = sample.src_flow_count as f64;
    let df = sample.dst_flow_count as f64;
    let spc = sample.src_port_count as f64;
    let dpc = sample.dst_port_count as f64;
    let np1 = sample.new_port_src as u8 as f64;
    let np2 = sample.new_port_dst as u8 as f64;

    let bytes_per_packet_src = sb / (sp + STABILIZER);
    let bytes_per_packet_dst = db / (dp + STABILIZER);
    let ports_per_flow_src = spc / (sf + STABILIZER);
    let ports_per_flow_dst = dpc / (df + STABILIZER);

    let values = [
        f.duration,
        (sp - dp).abs(),
        (sb - db).abs(),
        f.duration / (sb + db + STABILIZER),
        f.duration / (sp + dp + STABILIZER),
        sp.max(dp),
        sp.min(dp),
        sb.max(db),
        sb.min(db),
        bytes_per_packet_src.max(bytes_per_packet_dst),
        bytes_per_packet_src.min(bytes_per_packet_dst),
        0.5 * (np1 + np2),
        sf.max(df),
        sf.min(df),
        spc.max(dpc),
        spc.min(dpc),
        (sf - df).abs(),
        (spc - dpc).abs(),
        ports_per_flow_src.max(ports_per_flow_dst),
        ports_per_flow_src.min(ports_per_flow_dst),
    ];
    Ok(FeatureVector { values, protocol: f.protocol })
}

// ── Feature selection ─────────────────────────────────────────────────────────

/// Identifier of a model input: one of the 20 derived features or the
/// zero-length flag (1 when the flow duration is exactly zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureId {
    Feature(u8),
    ZeroLengthFlag,
}

impl FeatureId {
    pub fn feature(number: u8) -> Result<Self, FeatureError> {
        if (1..=FEATURE_COUNT as u8).contains(&number) {
            Ok(FeatureId::Feature(number))
        } else {
            Err(FeatureError::UnknownFeature(number.to_string()))
        }
    }

    pub fn parse(s: &str) -> Result<Self, FeatureError> {
        let t = s.trim();
        if t == "zero_length_flag" {
            return Ok(FeatureId::ZeroLengthFlag);
        }
        let digits = t.strip_prefix('f').unwrap_or(t);
        let n: u8 = digits.parse().map_err(|_| FeatureError::UnknownFeature(s.to_string()))?;
        Self::feature(n)
    }

    pub fn value(self, vector: &FeatureVector) -> f64 {
        match self {
            FeatureId::Feature(n) => vector.feature(n as usize),
            // duration is feature 1
            FeatureId::ZeroLengthFlag => {
                if vector.values[0] == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl TryFrom<String> for FeatureId {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        FeatureId::parse(&s).map_err(|e| e.to_string())
    }
}

impl From<FeatureId> for String {
    fn from(id: FeatureId) -> String {
        match id {
            FeatureId::Feature(n) => format!("f{n}"),
            FeatureId::ZeroLengthFlag => "zero_length_flag".to_string(),
        }
    }
}

/// Project a vector onto an ordered input tuple. Repeated ids appear
/// repeatedly, in the given order.
pub fn select_features(vector: &FeatureVector, ids: &[FeatureId]) -> Vec<f64> {
    ids.iter().map(|id| id.value(vector)).collect()
}

// ── Persistence ───────────────────────────────────────────────────────────────

/// Fixed column order of the feature-matrix file.
pub fn feature_columns() -> Vec<String> {
    let mut cols: Vec<String> = (1..=FEATURE_COUNT).map(|i| format!("f{i}")).collect();
    cols.extend(["mask_tcp".into(), "mask_udp".into(), "mask_other".into(), "label".into()]);
    cols
}

/// Write labeled feature vectors in the fixed column order.
pub fn write_feature_csv(
    path: impl AsRef<Path>,
    rows: &[(FeatureVector, String)],
) -> Result<(), FeatureError> {
    let mut w = csv::WriterBuilder::new().from_path(path.as_ref())?;
    w.write_record(feature_columns())?;
    for (v, label) in rows {
        let mut rec: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        for m in v.mask() {
            rec.push((m as u8).to_string());
        }
        rec.push(label.clone());
        w.write_record(rec)?;
    }
    w.flush()
        .map_err(|e| FeatureError::BadRow { line: 0, reason: e.to_string() })?;
    Ok(())
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<Vec<(FeatureVector, String)>, FeatureError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let expected = feature_columns();
    let mut idx = Vec::with_capacity(expected.len());
    for name in &expected {
        let i = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.clone()))?;
        idx.push(i);
    }
    let mut rows = Vec::new();
    for (n, row) in reader.records().enumerate() {
        let row = row?;
        let line = n as u64 + 2;
        let cell = |i: usize| row.get(idx[i]).unwrap_or("").trim();
        let mut values = [0.0; FEATURE_COUNT];
        for (i, v) in values.iter_mut().enumerate() {
            *v = cell(i)
                .parse()
                .map_err(|_| FeatureError::BadRow { line, reason: format!("bad value `{}`", cell(i)) })?;
        }
        let mask: Vec<u8> = (FEATURE_COUNT..FEATURE_COUNT + 3)
            .map(|i| cell(i).parse::<u8>().unwrap_or(255))
            .collect();
        let protocol = match (mask[0], mask[1], mask[2]) {
            (1, 0, 0) => ProtocolClass::Tcp,
            (0, 1, 0) => ProtocolClass::Udp,
            (0, 0, 1) => ProtocolClass::Other,
            _ => return Err(FeatureError::BadRow { line, reason: "mask is not one-hot".into() }),
        };
        let label = cell(FEATURE_COUNT + 3).to_string();
        rows.push((FeatureVector { values, protocol }, label));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::FlowRecord;
    use proptest::prelude::*;

    #[allow(clippy::too_many_arguments)]
    fn sample(
        duration: f64,
        src_packets: u64,
        dst_packets: u64,
        src_bytes: u64,
        dst_bytes: u64,
        counts: (u64, u64, u64, u64),
        flags: (bool, bool),
        protocol: ProtocolClass,
    ) -> WindowedSample {
        WindowedSample {
            flow: FlowRecord {
                timestamp: 0.0,
                src_ip: "A".into(),
                dst_ip: "B".into(),
                src_port: 1,
                dst_port: 2,
                protocol,
                duration,
                src_packets,
                dst_packets,
                src_bytes,
                dst_bytes,
                label: "Benign".into(),
            },
            new_port_src: flags.0,
            new_port_dst: flags.1,
            src_flow_count: counts.0,
            dst_flow_count: counts.1,
            src_port_count: counts.2,
            dst_port_count: counts.3,
        }
    }

    fn swap_src_dst(s: &WindowedSample) -> WindowedSample {
        let mut t = s.clone();
        std::mem::swap(&mut t.flow.src_ip, &mut t.flow.dst_ip);
        std::mem::swap(&mut t.flow.src_port, &mut t.flow.dst_port);
        std::mem::swap(&mut t.flow.src_packets, &mut t.flow.dst_packets);
        std::mem::swap(&mut t.flow.src_bytes, &mut t.flow.dst_bytes);
        std::mem::swap(&mut t.src_flow_count, &mut t.dst_flow_count);
        std::mem::swap(&mut t.src_port_count, &mut t.dst_port_count);
        let (a, b) = (t.new_port_src, t.new_port_dst);
        t.new_port_src = b;
        t.new_port_dst = a;
        t
    }

    #[test]
    fn symmetric_flow_zeroes_differences() {
        let v = extract(&sample(1.0, 5, 5, 500, 500, (0, 0, 0, 0), (true, true), ProtocolClass::Tcp)).unwrap();
        assert_eq!(v.feature(2), 0.0);
        assert_eq!(v.feature(3), 0.0);
        assert_eq!(v.feature(6), 5.0);
        assert_eq!(v.feature(7), 5.0);
        assert_eq!(v.feature(8), 500.0);
        assert_eq!(v.feature(9), 500.0);
    }

    #[test]
    fn worked_example_matches_hand_arithmetic() {
        let v = extract(&sample(2.0, 10, 2, 1000, 200, (4, 1, 3, 1), (true, false), ProtocolClass::Tcp)).unwrap();
        assert_eq!(v.feature(1), 2.0);
        assert_eq!(v.feature(2), 8.0);
        assert_eq!(v.feature(3), 800.0);
        assert_eq!(v.feature(4), 2.0 / (1200.0 + STABILIZER));
        assert!((v.feature(4) - 2.0 / 1200.0).abs() < 1e-9);
        assert_eq!(v.feature(5), 2.0 / (12.0 + STABILIZER));
        assert!((v.feature(5) - 2.0 / 12.0).abs() < 2e-6);
        assert_eq!(v.feature(6), 10.0);
        assert_eq!(v.feature(7), 2.0);
        assert_eq!(v.feature(8), 1000.0);
        assert_eq!(v.feature(9), 200.0);
        assert_eq!(v.feature(10), 1000.0 / (10.0 + STABILIZER));
        assert!((v.feature(10) - 1000.0 / 10.0001).abs() < 1e-9);
        assert_eq!(v.feature(11), 200.0 / (2.0 + STABILIZER));
        assert!((v.feature(11) - 200.0 / 2.0001).abs() < 1e-9);
        assert_eq!(v.feature(12), 0.5);
        assert_eq!(v.feature(13), 4.0);
        assert_eq!(v.feature(14), 1.0);
        assert_eq!(v.feature(15), 3.0);
        assert_eq!(v.feature(16), 1.0);
        assert_eq!(v.feature(17), 3.0);
        assert_eq!(v.feature(18), 2.0);
        // per-host ratios: src 3/4.0001 ≈ 0.75, dst 1/1.0001 ≈ 0.9999;
        // the dst ratio is the larger one
        assert_eq!(v.feature(19), 1.0 / (1.0 + STABILIZER));
        assert!((v.feature(19) - 1.0 / 1.0001).abs() < 1e-9);
        assert_eq!(v.feature(20), 3.0 / (4.0 + STABILIZER));
        assert!((v.feature(20) - 3.0 / 4.0001).abs() < 1e-9);
    }

    #[test]
    fn new_port_flag_feature_levels() {
        let base = |flags| sample(1.0, 1, 1, 1, 1, (0, 0, 0, 0), flags, ProtocolClass::Tcp);
        assert_eq!(extract(&base((true, true))).unwrap().feature(12), 1.0);
        assert_eq!(extract(&base((true, false))).unwrap().feature(12), 0.5);
        assert_eq!(extract(&base((false, false))).unwrap().feature(12), 0.0);
    }

    #[test]
    fn ratio_features_finite_on_zero_flows() {
        let v = extract(&sample(0.0, 0, 0, 0, 0, (0, 0, 0, 0), (true, true), ProtocolClass::Other)).unwrap();
        for i in 1..=FEATURE_COUNT {
            assert!(v.feature(i).is_finite(), "f{i}");
        }
        assert_eq!(v.feature(4), 0.0);
        assert_eq!(v.feature(10), 0.0);
    }

    #[test]
    fn negative_duration_rejected() {
        let mut s = sample(1.0, 1, 1, 1, 1, (0, 0, 0, 0), (true, true), ProtocolClass::Tcp);
        s.flow.duration = -0.5;
        assert!(matches!(extract(&s), Err(FeatureError::InvariantViolation(_))));
    }

    #[test]
    fn selection_supports_repeats_and_flag() {
        let v = extract(&sample(0.0, 2, 1, 20, 10, (3, 2, 1, 1), (true, false), ProtocolClass::Udp)).unwrap();
        let ids = [
            FeatureId::feature(6).unwrap(),
            FeatureId::feature(6).unwrap(),
            FeatureId::ZeroLengthFlag,
        ];
        let tuple = select_features(&v, &ids);
        assert_eq!(tuple, vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn unknown_feature_ids_error() {
        assert!(FeatureId::feature(21).is_err());
        assert!(FeatureId::feature(0).is_err());
        assert!(FeatureId::parse("f21").is_err());
        assert!(FeatureId::parse("banana").is_err());
        assert!(FeatureId::parse("f7").is_ok());
        assert!(FeatureId::parse("12").is_ok());
    }

    #[test]
    fn feature_csv_round_trips() {
        let rows = vec![
            (
                extract(&sample(1.5, 3, 9, 100, 900, (2, 5, 1, 4), (false, true), ProtocolClass::Tcp)).unwrap(),
                "DoS".to_string(),
            ),
            (
                extract(&sample(0.0, 0, 0, 0, 0, (0, 0, 0, 0), (true, true), ProtocolClass::Other)).unwrap(),
                "Benign".to_string(),
            ),
        ];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_feature_csv(f.path(), &rows).unwrap();
        let back = read_feature_csv(f.path()).unwrap();
        assert_eq!(back, rows);
    }

    fn arb_sample() -> impl Strategy<Value = WindowedSample> {
        (
            0.0f64..1e4,
            0u64..1_000_000,
            0u64..1_000_000,
            0u64..1_000_000_000,
            0u64..1_000_000_000,
            (0u64..10_000, 0u64..10_000, 0u64..5_000, 0u64..5_000),
            (any::<bool>(), any::<bool>()),
            prop_oneof![
                Just(ProtocolClass::Tcp),
                Just(ProtocolClass::Udp),
                Just(ProtocolClass::Other)
            ],
        )
            .prop_map(|(d, sp, dp, sb, db, counts, flags, proto)| sample(d, sp, dp, sb, db, counts, flags, proto))
    }

    proptest! {
        // Exact invariance to relabeling the endpoints.
        #[test]
        fn swap_invariance(s in arb_sample()) {
            let a = extract(&s).unwrap();
            let b = extract(&swap_src_dst(&s)).unwrap();
            prop_assert_eq!(a.values, b.values);
        }

        // Max/min ordering and non-negativity invariants.
        #[test]
        fn ordering_invariants(s in arb_sample()) {
            let v = extract(&s).unwrap();
            for (hi, lo) in [(6, 7), (8, 9), (10, 11), (13, 14), (15, 16), (19, 20)] {
                prop_assert!(v.feature(hi) >= v.feature(lo));
            }
            for i in [2, 3, 17, 18] {
                prop_assert!(v.feature(i) >= 0.0);
            }
            prop_assert!([0.0, 0.5, 1.0].contains(&v.feature(12)));
            for i in 1..=FEATURE_COUNT {
                prop_assert!(v.feature(i).is_finite());
            }
            prop_assert_eq!(v.mask().iter().sum::<f64>(), 1.0);
        }
    }
}
