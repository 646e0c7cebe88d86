//! Latency traces and their on-disk format.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "SILT" | version u16
//! clock u8 | query u8 | batch u32 | drop_first u32 | total_events u64
//! calibration: ticks u64 | ns u64 | interval_ns u64   (all zero when absent)
//! label_len u16 | label utf-8
//! meta_len u32 | meta JSON (string map)
//! count u64 | count * delta u64
//! crc32 u32 over every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use quietbench_engine::QueryId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Calibration, ClockKind};

pub const MAGIC: &[u8; 4] = b"SILT";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("not a trace file (bad magic)")]
    BadMagic,
    #[error("trace format version {found} is newer than supported version {supported}")]
    Version { found: u16, supported: u16 },
    #[error("trace file truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTrace {
    pub deltas: Vec<u64>,
    pub clock: ClockKind,
    pub calibration: Option<Calibration>,
    pub query: QueryId,
    pub batch: u32,
    pub drop_first: u32,
    pub total_events: u64,
    pub scenario: String,
    /// Host facts and run parameters (cpu model, pinned cpu, fencing, seed, ...).
    pub meta: BTreeMap<String, String>,
}

impl LatencyTrace {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn unit(&self) -> &'static str {
        self.clock.unit()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let label = self.scenario.as_bytes();
        let meta = serde_json::to_vec(&self.meta).expect("string map serializes");
        let mut buf = Vec::with_capacity(64 + label.len() + meta.len() + 8 * self.deltas.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(self.clock.code());
        buf.push(self.query.code());
        buf.extend_from_slice(&self.batch.to_le_bytes());
        buf.extend_from_slice(&self.drop_first.to_le_bytes());
        buf.extend_from_slice(&self.total_events.to_le_bytes());
        let cal = self.calibration.unwrap_or(Calibration { ticks: 0, ns: 0, interval_ns: 0 });
        buf.extend_from_slice(&cal.ticks.to_le_bytes());
        buf.extend_from_slice(&cal.ns.to_le_bytes());
        buf.extend_from_slice(&cal.interval_ns.to_le_bytes());
        buf.extend_from_slice(&u16::try_from(label.len()).expect("label under 64 KiB").to_le_bytes());
        buf.extend_from_slice(label);
        buf.extend_from_slice(&u32::try_from(meta.len()).expect("meta under 4 GiB").to_le_bytes());
        buf.extend_from_slice(&meta);
        buf.extend_from_slice(&(self.deltas.len() as u64).to_le_bytes());
        for d in &self.deltas {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TraceError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(TraceError::BadMagic);
        }
        let version = r.u16()?;
        if version > FORMAT_VERSION {
            return Err(TraceError::Version { found: version, supported: FORMAT_VERSION });
        }
        if version == 0 {
            return Err(TraceError::Header("version 0".into()));
        }
        if bytes.len() < 4 {
            return Err(TraceError::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            // a short file usually fails here too; tell the two apart by the declared length
            if declared_len(bytes).is_some_and(|want| want > bytes.len()) {
                return Err(TraceError::Truncated);
            }
            return Err(TraceError::Checksum { stored, computed });
        }
        let mut r = Reader { buf: body, pos: r.pos };
        let clock = ClockKind::from_code(r.u8()?).ok_or_else(|| TraceError::Header("unknown clock kind".into()))?;
        let query = QueryId::from_code(r.u8()?).ok_or_else(|| TraceError::Header("unknown query id".into()))?;
        let batch = r.u32()?;
        let drop_first = r.u32()?;
        let total_events = r.u64()?;
        let cal = Calibration { ticks: r.u64()?, ns: r.u64()?, interval_ns: r.u64()? };
        let calibration = (cal.ns != 0).then_some(cal);
        let label_len = r.u16()? as usize;
        let scenario = String::from_utf8(r.take(label_len)?.to_vec())
            .map_err(|_| TraceError::Header("scenario label is not utf-8".into()))?;
        let meta_len = r.u32()? as usize;
        let meta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| TraceError::Header(e.to_string()))?;
        let count = usize::try_from(r.u64()?).map_err(|_| TraceError::Header("count".into()))?;
        let raw = r.take(count.checked_mul(8).ok_or(TraceError::Truncated)?)?;
        let deltas = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if r.pos != body.len() {
            return Err(TraceError::Header("trailing bytes before checksum".into()));
        }
        Ok(LatencyTrace { deltas, clock, calibration, query, batch, drop_first, total_events, scenario, meta })
    }
}

/// Expected file size from the header, if the header itself is intact.
fn declared_len(bytes: &[u8]) -> Option<usize> {
    let mut r = Reader { buf: bytes, pos: 6 + 2 + 4 + 4 + 8 + 24 };
    let label = r.u16().ok()? as usize;
    r.take(label).ok()?;
    let meta = r.u32().ok()? as usize;
    r.take(meta).ok()?;
    let count = r.u64().ok()? as usize;
    Some(r.pos + count.checked_mul(8)? + 4)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        let end = self.pos.checked_add(n).ok_or(TraceError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(TraceError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TraceError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn export_trace(trace: &LatencyTrace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    fs::write(path, trace.to_bytes())?;
    Ok(())
}

pub fn import_trace(path: impl AsRef<Path>) -> Result<LatencyTrace, TraceError> {
    LatencyTrace::from_bytes(&fs::read(path)?)
}

/// One delta per line.
pub fn export_csv<W: Write>(trace: &LatencyTrace, w: W) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    for d in &trace.deltas {
        writeln!(w, "{d}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(deltas: Vec<u64>) -> LatencyTrace {
        let mut meta = BTreeMap::new();
        meta.insert("cpu_model".into(), "Test CPU".into());
        LatencyTrace {
            total_events: deltas.len() as u64,
            deltas,
            clock: ClockKind::CycleCounter,
            calibration: Some(Calibration { ticks: 229, ns: 100, interval_ns: 100_000_000 }),
            query: QueryId::Axf,
            batch: 1,
            drop_first: 0,
            scenario: "load-shield-fifo".into(),
            meta,
        }
    }

    #[test]
    fn roundtrip_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.silt");
        let t = sample(vec![1, 2, 3, u64::MAX]);
        export_trace(&t, &p).unwrap();
        assert_eq!(import_trace(&p).unwrap(), t);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut b = sample(vec![10; 100]).to_bytes();
        let i = b.len() - 20;
        b[i] ^= 0x40;
        assert!(matches!(LatencyTrace::from_bytes(&b), Err(TraceError::Checksum { .. })));
    }

    #[test]
    fn corrupted_checksum_fails() {
        let mut b = sample(vec![10; 3]).to_bytes();
        let n = b.len();
        b[n - 1] ^= 1;
        assert!(matches!(LatencyTrace::from_bytes(&b), Err(TraceError::Checksum { .. })));
    }

    #[test]
    fn newer_version_rejected_before_parsing() {
        let mut b = sample(vec![10; 3]).to_bytes();
        b[4..6].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        b.truncate(8); // nothing after the version should be looked at
        assert!(matches!(LatencyTrace::from_bytes(&b), Err(TraceError::Version { found: 2, supported: 1 })));
    }

    #[test]
    fn truncated_file_detected() {
        let b = sample(vec![7; 50]).to_bytes();
        assert!(matches!(LatencyTrace::from_bytes(&b[..b.len() - 100]), Err(TraceError::Truncated)));
        assert!(matches!(LatencyTrace::from_bytes(&b[..5]), Err(TraceError::Truncated)));
    }

    #[test]
    fn bad_magic() {
        assert!(matches!(LatencyTrace::from_bytes(b"NOPE\x01\x00"), Err(TraceError::BadMagic)));
    }

    #[test]
    fn csv_export_one_per_line() {
        let mut out = Vec::new();
        export_csv(&sample(vec![3, 1, 4]), &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "3\n1\n4\n");
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(deltas in proptest::collection::vec(any::<u64>(), 0..200), label in "[a-z-]{0,20}") {
            let mut t = sample(deltas);
            t.scenario = label;
            t.calibration = None;
            prop_assert_eq!(LatencyTrace::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
