//! Timing sources: the CPU cycle counter, the kernel monotonic clock, and
//! scripted doubles for deterministic tests.

use std::fs;

use quietbench_engine::OpCounter;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClockError {
    #[error("cycle counter unavailable: {0}")]
    Unavailable(String),
    #[error("counter unstable: {0}")]
    Unstable(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockKind {
    CycleCounter,
    MonotonicNs,
    Fake,
}

impl ClockKind {
    pub fn code(self) -> u8 {
        match self {
            ClockKind::CycleCounter => 0,
            ClockKind::MonotonicNs => 1,
            ClockKind::Fake => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ClockKind::CycleCounter),
            1 => Some(ClockKind::MonotonicNs),
            2 => Some(ClockKind::Fake),
            _ => None,
        }
    }

    /// Unit of trace deltas taken with this clock.
    pub fn unit(self) -> &'static str {
        match self {
            ClockKind::CycleCounter => "ticks",
            ClockKind::MonotonicNs => "ns",
            ClockKind::Fake => "units",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClockKind::CycleCounter => "tsc",
            ClockKind::MonotonicNs => "monotonic",
            ClockKind::Fake => "fake",
        }
    }
}

pub trait Clock {
    fn kind(&self) -> ClockKind;
    fn read(&mut self) -> u64;
    /// Free-form description of how reads are taken, stored in trace metadata.
    fn describe(&self) -> String {
        self.kind().as_str().to_string()
    }
}

/// `clock_gettime(CLOCK_MONOTONIC)` in nanoseconds.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicClock;

impl MonotonicClock {
    #[inline]
    pub fn now_ns() -> u64 {
        let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
        // SAFETY: valid out-pointer; CLOCK_MONOTONIC is always supported on Linux.
        unsafe { libc::clock_gettime(libc::CLOCK_MONOTONIC, &mut ts) };
        ts.tv_sec as u64 * 1_000_000_000 + ts.tv_nsec as u64
    }
}

impl Clock for MonotonicClock {
    fn kind(&self) -> ClockKind {
        ClockKind::MonotonicNs
    }

    #[inline]
    fn read(&mut self) -> u64 {
        Self::now_ns()
    }

    fn describe(&self) -> String {
        "clock_gettime(CLOCK_MONOTONIC)".into()
    }
}

/// Serialization of cycle-counter reads against surrounding instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fencing {
    /// `lfence; rdtsc; lfence`
    Lfence,
    /// bare `rdtsc`
    None,
}

/// The x86 time stamp counter. Construct via [`CycleCounter::probe`].
#[derive(Debug, Clone, Copy)]
pub struct CycleCounter {
    fencing: Fencing,
}

impl CycleCounter {
    /// Refuses unless the OS advertises a constant-rate, non-stop counter.
    pub fn probe(fencing: Fencing) -> Result<Self, ClockError> {
        if !cfg!(target_arch = "x86_64") {
            return Err(ClockError::Unavailable("not an x86-64 host".into()));
        }
        let info = fs::read_to_string("/proc/cpuinfo")
            .map_err(|e| ClockError::Unavailable(format!("cannot read /proc/cpuinfo: {e}")))?;
        check_tsc_flags(&info)?;
        Ok(CycleCounter { fencing })
    }

    pub fn fencing(&self) -> Fencing {
        self.fencing
    }
}

pub(crate) fn check_tsc_flags(cpuinfo: &str) -> Result<(), ClockError> {
    let flags = cpuinfo
        .lines()
        .find(|l| l.starts_with("flags"))
        .ok_or_else(|| ClockError::Unavailable("no cpu flags line".into()))?;
    let has = |f: &str| flags.split_whitespace().any(|w| w == f);
    for needed in ["tsc", "constant_tsc", "nonstop_tsc"] {
        if !has(needed) {
            return Err(ClockError::Unavailable(format!("cpu lacks `{needed}`")));
        }
    }
    Ok(())
}

impl Clock for CycleCounter {
    fn kind(&self) -> ClockKind {
        ClockKind::CycleCounter
    }

    #[inline(always)]
    fn read(&mut self) -> u64 {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_lfence, _rdtsc};
            // SAFETY: rdtsc/lfence are available on every x86-64 CPU; probe() checked the flags.
            unsafe {
                match self.fencing {
                    Fencing::Lfence => {
                        _mm_lfence();
                        let t = _rdtsc();
                        _mm_lfence();
                        t
                    }
                    Fencing::None => _rdtsc(),
                }
            }
        }
        #[cfg(not(target_arch = "x86_64"))]
        {
            unreachable!("CycleCounter::probe rejects non-x86-64 hosts")
        }
    }

    fn describe(&self) -> String {
        match self.fencing {
            Fencing::Lfence => "lfence;rdtsc;lfence".into(),
            Fencing::None => "rdtsc".into(),
        }
    }
}

/// Deterministic test double.
#[derive(Debug, Clone)]
pub struct FakeClock {
    source: FakeSource,
}

#[derive(Debug, Clone)]
enum FakeSource {
    Script { values: Vec<u64>, pos: usize },
    Step { next: u64, step: u64 },
    Ops(OpCounter),
}

impl FakeClock {
    /// Returns the scripted values in order; panics when exhausted.
    pub fn scripted(values: Vec<u64>) -> Self {
        FakeClock { source: FakeSource::Script { values, pos: 0 } }
    }

    /// `start`, `start + step`, `start + 2*step`, ...
    pub fn stepping(start: u64, step: u64) -> Self {
        FakeClock { source: FakeSource::Step { next: start, step } }
    }

    /// Reads the engine's index-operation counter, so deltas count work instead of time.
    pub fn counting_ops(counter: OpCounter) -> Self {
        FakeClock { source: FakeSource::Ops(counter) }
    }
}

impl Clock for FakeClock {
    fn kind(&self) -> ClockKind {
        ClockKind::Fake
    }

    fn read(&mut self) -> u64 {
        match &mut self.source {
            FakeSource::Script { values, pos } => {
                let v = *values.get(*pos).expect("fake clock script exhausted");
                *pos += 1;
                v
            }
            FakeSource::Step { next, step } => {
                let v = *next;
                *next += *step;
                v
            }
            FakeSource::Ops(c) => c.get(),
        }
    }

    fn describe(&self) -> String {
        match self.source {
            FakeSource::Script { .. } => "fake:script".into(),
            FakeSource::Step { .. } => "fake:step".into(),
            FakeSource::Ops(_) => "fake:engine-ops".into(),
        }
    }
}

/// Cycle-counter rate measured against wall time: `ticks / ns` ticks per nanosecond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calibration {
    pub ticks: u64,
    pub ns: u64,
    pub interval_ns: u64,
}

impl Calibration {
    pub fn ticks_per_ns(&self) -> f64 {
        self.ticks as f64 / self.ns as f64
    }

    pub fn ticks_to_ns(&self, ticks: f64) -> f64 {
        ticks * self.ns as f64 / self.ticks as f64
    }
}

pub const MIN_CALIBRATION_NS: u64 = 10_000_000;

/// Busy-waits `duration_ns` of wall time and relates elapsed ticks to elapsed ns.
pub fn calibrate_with<T: Clock, W: Clock>(ticks: &mut T, wall: &mut W, duration_ns: u64) -> Result<Calibration, ClockError> {
    if duration_ns < MIN_CALIBRATION_NS {
        return Err(ClockError::InvalidArgument(format!(
            "calibration interval {duration_ns} ns is below {MIN_CALIBRATION_NS} ns"
        )));
    }
    let w0 = wall.read();
    let t0 = ticks.read();
    loop {
        let w = wall.read();
        if w < w0 {
            return Err(ClockError::Unstable("wall clock went backwards".into()));
        }
        if w - w0 >= duration_ns {
            break;
        }
    }
    let t1 = ticks.read();
    let w1 = wall.read();
    if t1 <= t0 || w1 <= w0 {
        return Err(ClockError::Unstable(format!("non-positive deltas: ticks {t0}->{t1}, ns {w0}->{w1}")));
    }
    Ok(Calibration { ticks: t1 - t0, ns: w1 - w0, interval_ns: duration_ns })
}

pub fn calibrate(counter: &mut CycleCounter, duration_ns: u64) -> Result<Calibration, ClockError> {
    calibrate_with(counter, &mut MonotonicClock, duration_ns)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub mean_ticks: f64,
    pub median_ticks: u64,
    pub max_ticks: u64,
}

pub const MIN_OVERHEAD_SAMPLES: usize = 1_000;

/// Statistics of `n` back-to-back read pairs.
///
/// Real clocks need at least [`MIN_OVERHEAD_SAMPLES`] pairs; fakes accept any n ≥ 1.
pub fn measure_overhead<C: Clock>(clock: &mut C, n: usize) -> Result<OverheadStats, ClockError> {
    let min = if clock.kind() == ClockKind::Fake { 1 } else { MIN_OVERHEAD_SAMPLES };
    if n < min {
        return Err(ClockError::InvalidArgument(format!("need at least {min} samples, got {n}")));
    }
    let mut deltas = vec![0u64; n];
    for d in deltas.iter_mut() {
        let a = clock.read();
        let b = clock.read();
        *d = b.saturating_sub(a);
    }
    let sum: u128 = deltas.iter().map(|&d| d as u128).sum();
    let max = *deltas.iter().max().expect("n >= 1");
    let mid = n / 2;
    let (_, median, _) = deltas.select_nth_unstable(mid);
    Ok(OverheadStats { mean_ticks: sum as f64 / n as f64, median_ticks: *median, max_ticks: max })
}

/// `model name` of the first CPU, if readable.
pub fn cpu_model() -> Option<String> {
    let info = fs::read_to_string("/proc/cpuinfo").ok()?;
    info.lines()
        .find(|l| l.starts_with("model name"))
        .and_then(|l| l.split_once(':'))
        .map(|(_, v)| v.trim().to_string())
}
