//! Tenant workload kinds and throughput reports.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkloadKind {
    /// Binary search on a sorted array.
    Bsearch,
    /// Dense matrix multiplication.
    Matmul,
    /// Compress and decompress random data.
    Compress,
    /// Randomly spread memory reads and writes.
    Memthrash,
    /// Sequential, random and memory-mapped file I/O.
    Fileio,
    /// 1 MHz periodic timer.
    HighfreqTimer,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 6] = [
        WorkloadKind::Bsearch,
        WorkloadKind::Matmul,
        WorkloadKind::Compress,
        WorkloadKind::Memthrash,
        WorkloadKind::Fileio,
        WorkloadKind::HighfreqTimer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Bsearch => "bsearch",
            WorkloadKind::Matmul => "matmul",
            WorkloadKind::Compress => "compress",
            WorkloadKind::Memthrash => "memthrash",
            WorkloadKind::Fileio => "fileio",
            WorkloadKind::HighfreqTimer => "highfreq-timer",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        match norm.as_str() {
            "timer" | "hrtimer" => return Ok(WorkloadKind::HighfreqTimer),
            "memory" | "thrash" => return Ok(WorkloadKind::Memthrash),
            _ => {}
        }
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown workload `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    Skipped { reason: String },
    Failed { cause: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerStats {
    pub requested_period_ns: u64,
    pub delivered: u64,
    pub overruns: u64,
    /// Time the timer was armed.
    #[serde(default)]
    pub armed_ns: u64,
}

/// Throughput of one workload on one CPU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantCell {
    pub workload: WorkloadKind,
    pub cpu: usize,
    pub ops: u64,
    pub wall_ns: u64,
    pub ops_per_sec: f64,
    pub status: CellStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timer: Option<TimerStats>,
}

impl TenantCell {
    pub fn new(workload: WorkloadKind, cpu: usize, ops: u64, wall_ns: u64, status: CellStatus) -> Self {
        let ops_per_sec = if wall_ns == 0 { 0.0 } else { ops as f64 * 1e9 / wall_ns as f64 };
        TenantCell { workload, cpu, ops, wall_ns, ops_per_sec, status, timer: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantReport {
    pub seed: u64,
    pub elapsed_ns: u64,
    /// Scheduling policy the workers observed for themselves.
    pub worker_policy: String,
    pub parameters: serde_json::Value,
    pub cells: Vec<TenantCell>,
}

impl TenantReport {
    /// Summed ops/sec across CPUs for one workload, over healthy cells.
    pub fn throughput(&self, kind: WorkloadKind) -> Option<f64> {
        let cells: Vec<&TenantCell> = self
            .cells
            .iter()
            .filter(|c| c.workload == kind && c.status == CellStatus::Ok)
            .collect();
        if cells.is_empty() {
            None
        } else {
            Some(cells.iter().map(|c| c.ops_per_sec).sum())
        }
    }

    pub fn workloads(&self) -> Vec<WorkloadKind> {
        let mut k: Vec<WorkloadKind> = self.cells.iter().map(|c| c.workload).collect();
        k.sort();
        k.dedup();
        k
    }
}
