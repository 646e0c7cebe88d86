//! Trial runs end to end with instrumented clocks and sinks.

use std::cell::Cell;
use std::io::{self, Write};
use std::rc::Rc;

use quietbench_core::clock::{Clock, ClockKind, FakeClock};
use quietbench_core::harness::{run_trial, Trial, TrialSpec};
use quietbench_core::trace::{export_trace, import_trace};
use quietbench_engine::{generate, QueryId, Schema, StreamSpec};

/// Fake clock that counts its reads.
struct Counting {
    reads: Rc<Cell<u64>>,
}

impl Clock for Counting {
    fn kind(&self) -> ClockKind {
        ClockKind::Fake
    }

    fn read(&mut self) -> u64 {
        let r = self.reads.get() + 1;
        self.reads.set(r);
        r * 3
    }
}

/// Sink remembering how many clock reads had happened at each write.
struct Spy {
    reads: Rc<Cell<u64>>,
    writes_at: Vec<u64>,
}

impl Write for Spy {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.writes_at.push(self.reads.get());
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[test]
fn half_million_points_without_loop_writes() {
    let events = generate(&StreamSpec::new(Schema::Finance, 100, 7, 5000)).unwrap();
    assert_eq!(events.len(), 500_000);
    let reads = Rc::new(Cell::new(0));
    let mut clock = Counting { reads: reads.clone() };
    let mut sink = Spy { reads: reads.clone(), writes_at: Vec::new() };
    let out = run_trial(TrialSpec::new(QueryId::Axf), &events, &mut clock, "load", None, &mut sink).unwrap();

    assert_eq!(out.trace.len(), 500_000);
    assert!(out.trace.deltas.iter().all(|&d| d == 3));
    let total = reads.get();
    assert_eq!(total, 1_000_000);
    assert!(!sink.writes_at.is_empty());
    for &at in &sink.writes_at {
        assert!(at == 0 || at == total, "write after {at} of {total} clock reads");
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("axf.silt");
    export_trace(&out.trace, &path).unwrap();
    assert_eq!(import_trace(&path).unwrap(), out.trace);
}

#[test]
fn op_counting_trace_matches_engine_work() {
    let events = generate(&StreamSpec::new(Schema::Finance, 50, 3, 20)).unwrap();
    let trial = Trial::prepare(TrialSpec::new(QueryId::Psp), &events).unwrap();
    let counter = trial.op_counter();
    let mut clock = FakeClock::counting_ops(counter.clone());
    let out = trial.run(&mut clock, "no-load", None, &mut io::sink()).unwrap();
    assert_eq!(out.trace.deltas.iter().sum::<u64>(), counter.get());
    assert_eq!(out.trace.clock, ClockKind::Fake);
}
