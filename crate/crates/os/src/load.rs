//! Synthetic tenants: one worker thread per CPU, pinned there, cycling
//! through the requested workloads in fixed time slices under the default
//! scheduling class.

use std::collections::BTreeMap;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use quietbench_core::{CellStatus, TenantCell, TenantReport, WorkloadKind};
use quietbench_core::tenant::TimerStats;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{current_tid, LinuxOs, Os, OsWrite, SchedParams};
use crate::cpulist::CpuList;
use crate::workloads::{InitError, Workload};

pub const SCRATCH_ENV: &str = "QUIETBENCH_SCRATCH";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("empty workload set")]
    NoWorkloads,
    #[error("no CPUs given for tenants")]
    NoCpus,
    #[error("cpu {0} is not online")]
    OfflineCpu(usize),
    #[error("cannot start worker: {0}")]
    Spawn(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub bsearch_len: usize,
    pub matmul_n: usize,
    pub compress_block: usize,
    pub thrash_bytes: usize,
    pub file_bytes: usize,
    pub timer_period_ns: u64,
    /// Time a worker spends on one workload before moving to the next.
    pub slice_ms: u64,
    /// How long stop waits for workers before declaring them failed.
    pub grace_ms: u64,
    /// Directory for the file workload; falls back to `$QUIETBENCH_SCRATCH`, then the temp dir.
    pub scratch: Option<PathBuf>,
}

impl Default for LoadParams {
    fn default() -> Self {
        LoadParams {
            bsearch_len: 1 << 20,
            matmul_n: 256,
            compress_block: 1 << 20,
            thrash_bytes: 64 << 20,
            file_bytes: 128 << 20,
            timer_period_ns: 1_000,
            slice_ms: 20,
            grace_ms: 5_000,
            scratch: None,
        }
    }
}

impl LoadParams {
    /// Reduced sizes for tests and small machines.
    pub fn small() -> Self {
        LoadParams {
            bsearch_len: 1 << 12,
            matmul_n: 32,
            compress_block: 16 << 10,
            thrash_bytes: 1 << 20,
            file_bytes: 1 << 20,
            ..LoadParams::default()
        }
    }

    pub fn scratch_dir(&self) -> PathBuf {
        self.scratch
            .clone()
            .or_else(|| std::env::var_os(SCRATCH_ENV).map(PathBuf::from))
            .unwrap_or_else(std::env::temp_dir)
    }
}

/// Test hook: make one workload on one CPU fail on its first step.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InjectFailure {
    pub cpu: usize,
    pub workload: WorkloadKind,
}

struct WorkerResult {
    cpu: usize,
    cells: Vec<TenantCell>,
    policy: String,
}

pub struct TenantHandle {
    stop: Arc<AtomicBool>,
    rx: Receiver<WorkerResult>,
    threads: BTreeMap<usize, JoinHandle<()>>,
    kinds: Vec<WorkloadKind>,
    started: Instant,
    seed: u64,
    params: LoadParams,
    report: Option<TenantReport>,
}

pub fn start_tenants(kinds: &[WorkloadKind], cpus: &[usize], seed: u64, params: LoadParams) -> Result<TenantHandle, LoadError> {
    start_tenants_with(kinds, cpus, seed, params, None)
}

#[doc(hidden)]
pub fn start_tenants_with(
    kinds: &[WorkloadKind],
    cpus: &[usize],
    seed: u64,
    params: LoadParams,
    inject: Option<InjectFailure>,
) -> Result<TenantHandle, LoadError> {
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Err(LoadError::NoWorkloads);
    }
    let cpus: CpuList = cpus.iter().copied().collect();
    if cpus.is_empty() {
        return Err(LoadError::NoCpus);
    }
    let online = LinuxOs.online_cpus()?;
    if let Some(c) = cpus.iter().find(|&c| !online.contains(c)) {
        return Err(LoadError::OfflineCpu(c));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let mut threads = BTreeMap::new();
    for cpu in cpus.iter() {
        let w = Worker {
            cpu,
            kinds: kinds.clone(),
            params: params.clone(),
            seed: seed ^ (cpu as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            stop: stop.clone(),
            inject: inject.filter(|i| i.cpu == cpu),
        };
        let tx = tx.clone();
        let spawned = thread::Builder::new().name(format!("tenant-{cpu}")).spawn(move || w.run(tx));
        match spawned {
            Ok(h) => {
                threads.insert(cpu, h);
            }
            Err(e) => {
                stop.store(true, Ordering::Relaxed);
                return Err(LoadError::Spawn(e));
            }
        }
    }
    Ok(TenantHandle { stop, rx, threads, kinds, started: Instant::now(), seed, params, report: None })
}

impl TenantHandle {
    pub fn cpus(&self) -> Vec<usize> {
        self.threads.keys().copied().collect()
    }

    /// Stops all workers and returns the report. Later calls return the same report.
    pub fn stop(&mut self) -> TenantReport {
        if let Some(r) = &self.report {
            return r.clone();
        }
        self.stop.store(true, Ordering::Relaxed);
        let elapsed = self.started.elapsed();
        let deadline = Instant::now() + Duration::from_millis(self.params.grace_ms);
        let mut results: BTreeMap<usize, WorkerResult> = BTreeMap::new();
        while results.len() < self.threads.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.rx.recv_timeout(left) {
                Ok(r) => {
                    results.insert(r.cpu, r);
                }
                Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
            }
        }
        let mut cells = Vec::new();
        let mut policies: Vec<String> = Vec::new();
        for (cpu, handle) in std::mem::take(&mut self.threads) {
            match results.remove(&cpu) {
                Some(r) => {
                    let _ = handle.join();
                    cells.extend(r.cells);
                    policies.push(r.policy);
                }
                None => {
                    // left running detached; it still sees the stop flag
                    for &k in &self.kinds {
                        let cause = format!("worker on cpu {cpu} did not stop within {} ms", self.params.grace_ms);
                        cells.push(TenantCell::new(k, cpu, 0, 0, CellStatus::Failed { cause }));
                    }
                }
            }
        }
        policies.sort();
        policies.dedup();
        let report = TenantReport {
            seed: self.seed,
            elapsed_ns: elapsed.as_nanos() as u64,
            worker_policy: policies.join(","),
            parameters: serde_json::to_value(&self.params).unwrap_or_default(),
            cells,
        };
        self.report = Some(report.clone());
        report
    }
}

impl Drop for TenantHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

struct Worker {
    cpu: usize,
    kinds: Vec<WorkloadKind>,
    params: LoadParams,
    seed: u64,
    stop: Arc<AtomicBool>,
    inject: Option<InjectFailure>,
}

struct Slot {
    kind: WorkloadKind,
    work: Option<Workload>,
    ops: u64,
    wall: Duration,
    status: CellStatus,
}

impl Worker {
    fn run(self, tx: Sender<WorkerResult>) {
        let mut os = LinuxOs;
        let tid = current_tid();
        let pin = os.perform(&OsWrite::SetAffinity { tid, cpus: CpuList::single(self.cpu) });
        // never inherit a real-time policy from the spawning thread
        let _ = os.perform(&OsWrite::SetScheduler { tid, params: SchedParams::OTHER });
        let policy = os.scheduler(tid).map(|p| p.policy.as_str().to_string()).unwrap_or_else(|_| "unknown".into());

        let mut slots: Vec<Slot> = self
            .kinds
            .iter()
            .map(|&kind| Slot { kind, work: None, ops: 0, wall: Duration::ZERO, status: CellStatus::Ok })
            .collect();
        if let Err(e) = pin {
            for s in &mut slots {
                s.status = CellStatus::Failed { cause: format!("pinning to cpu {} failed: {e}", self.cpu) };
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let slice = Duration::from_millis(self.params.slice_ms.max(1));
        let mut next = 0;
        while !self.stop.load(Ordering::Relaxed) {
            let Some(i) = (0..slots.len()).map(|k| (next + k) % slots.len()).find(|&i| slots[i].status == CellStatus::Ok)
            else {
                break;
            };
            next = i + 1;
            self.run_slice(&mut slots[i], &mut rng, slice);
        }

        let cells = slots
            .into_iter()
            .map(|s| {
                let timer = s.work.as_ref().and_then(|w| w.timer()).map(|t| TimerStats {
                    requested_period_ns: t.period_ns(),
                    delivered: t.delivered,
                    overruns: t.overruns,
                    armed_ns: t.armed_ns,
                });
                let mut c = TenantCell::new(s.kind, self.cpu, s.ops, s.wall.as_nanos() as u64, s.status);
                c.timer = timer;
                c
            })
            .collect();
        let _ = tx.send(WorkerResult { cpu: self.cpu, cells, policy });
    }

    fn run_slice(&self, slot: &mut Slot, rng: &mut ChaCha8Rng, slice: Duration) {
        if slot.work.is_none() {
            match Workload::init(slot.kind, &self.params, self.cpu, rng) {
                Ok(w) => slot.work = Some(w),
                Err(InitError::Skip(reason)) => {
                    slot.status = CellStatus::Skipped { reason };
                    return;
                }
                Err(InitError::Fail(cause)) => {
                    slot.status = CellStatus::Failed { cause };
                    return;
                }
            }
        }
        let injected = self.inject.is_some_and(|i| i.workload == slot.kind);
        let work = slot.work.as_mut().expect("initialized");
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| -> Result<u64, String> {
            if injected {
                return Err("injected fault".into());
            }
            work.begin_slice()?;
            let mut ops = 0;
            while start.elapsed() < slice && !self.stop.load(Ordering::Relaxed) {
                ops += work.step(rng)?;
            }
            Ok(ops)
        }));
        work.end_slice();
        slot.wall += start.elapsed();
        match outcome {
            Ok(Ok(ops)) => slot.ops += ops,
            Ok(Err(cause)) => slot.status = CellStatus::Failed { cause },
            Err(p) => {
                let cause = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panic".into());
                slot.status = CellStatus::Failed { cause: format!("panicked: {cause}") };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_inputs() {
        assert!(matches!(start_tenants(&[], &[0], 1, LoadParams::small()), Err(LoadError::NoWorkloads)));
        assert!(matches!(start_tenants(&[WorkloadKind::Bsearch], &[], 1, LoadParams::small()), Err(LoadError::NoCpus)));
        assert!(matches!(
            start_tenants(&[WorkloadKind::Bsearch], &[4096], 1, LoadParams::small()),
            Err(LoadError::OfflineCpu(4096))
        ));
    }

    #[test]
    fn every_workload_makes_progress() {
        let dir = tempfile::tempdir().unwrap();
        let params = LoadParams { scratch: Some(dir.path().into()), slice_ms: 5, ..LoadParams::small() };
        let mut h = start_tenants(&WorkloadKind::ALL, &[0], 3, params).unwrap();
        thread::sleep(Duration::from_millis(300));
        let r = h.stop();
        assert_eq!(r.cells.len(), 6);
        for c in &r.cells {
            assert_eq!(c.status, CellStatus::Ok, "{:?}", c.workload);
            assert!(c.ops > 0, "{:?}", c.workload);
        }
        assert_eq!(r.worker_policy, "other");
        assert_eq!(h.stop(), r);
        // scratch files are removed once the worker is done
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn unwritable_scratch_skips_fileio() {
        let params = LoadParams { scratch: Some("/proc/nonexistent-dir".into()), ..LoadParams::small() };
        let mut h = start_tenants(&[WorkloadKind::Fileio, WorkloadKind::Bsearch], &[0], 1, params).unwrap();
        thread::sleep(Duration::from_millis(100));
        let r = h.stop();
        let f = r.cells.iter().find(|c| c.workload == WorkloadKind::Fileio).unwrap();
        assert!(matches!(f.status, CellStatus::Skipped { .. }));
        let b = r.cells.iter().find(|c| c.workload == WorkloadKind::Bsearch).unwrap();
        assert!(b.ops > 0);
    }

    #[test]
    fn injected_failure_is_contained() {
        let inject = InjectFailure { cpu: 0, workload: WorkloadKind::Matmul };
        let kinds = [WorkloadKind::Matmul, WorkloadKind::Bsearch];
        let mut h = start_tenants_with(&kinds, &[0], 1, LoadParams::small(), Some(inject)).unwrap();
        thread::sleep(Duration::from_millis(100));
        let r = h.stop();
        let m = r.cells.iter().find(|c| c.workload == WorkloadKind::Matmul).unwrap();
        assert!(matches!(&m.status, CellStatus::Failed { cause } if cause.contains("injected")));
        let b = r.cells.iter().find(|c| c.workload == WorkloadKind::Bsearch).unwrap();
        assert!(b.status == CellStatus::Ok && b.ops > 0);
    }
}
