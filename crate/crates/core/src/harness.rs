//! One measurement trial: a pre-loaded stream pushed through a fresh view,
//! one timestamp pair per batch of `N` tuples, recorded into a buffer that
//! is allocated and faulted in before the first tuple.

use std::collections::BTreeMap;
use std::io::Write;

use quietbench_engine::{EngineError, Event, OpCounter, QueryId, ViewSnapshot, ViewState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Calibration, Clock};
use crate::trace::LatencyTrace;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid trial: {0}")]
    InvalidSpec(String),
    #[error("engine failed at event {index}: {source}")]
    Engine {
        index: usize,
        #[source]
        source: EngineError,
    },
    #[error("measurement integrity: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub query: QueryId,
    /// Tuples per timestamp pair.
    pub batch: usize,
    /// Leading deltas to discard as warm-up.
    pub drop_first: usize,
}

impl TrialSpec {
    pub fn new(query: QueryId) -> Self {
        TrialSpec { query, batch: 1, drop_first: 0 }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_drop_first(mut self, n: usize) -> Self {
        self.drop_first = n;
        self
    }
}

#[derive(Debug)]
pub struct TrialOutcome {
    pub trace: LatencyTrace,
    pub snapshot: ViewSnapshot,
}

/// A trial whose engine state and timestamp buffer are ready to run.
pub struct Trial<'a> {
    spec: TrialSpec,
    events: &'a [Event],
    state: ViewState,
    deltas: Vec<u64>,
}

impl<'a> Trial<'a> {
    pub fn prepare(spec: TrialSpec, events: &'a [Event]) -> Result<Self, HarnessError> {
        if spec.batch == 0 {
            return Err(HarnessError::InvalidSpec("batch size must be positive".into()));
        }
        if events.is_empty() {
            return Err(HarnessError::InvalidSpec("empty stream".into()));
        }
        if events.len() % spec.batch != 0 {
            return Err(HarnessError::InvalidSpec(format!(
                "batch size {} does not divide {} events",
                spec.batch,
                events.len()
            )));
        }
        let batches = events.len() / spec.batch;
        if spec.drop_first >= batches {
            return Err(HarnessError::InvalidSpec(format!(
                "drop_first {} leaves no samples out of {batches}",
                spec.drop_first
            )));
        }
        if let Some((i, e)) = events.iter().enumerate().find(|(_, e)| !spec.query.schema().accepts(e.kind())) {
            return Err(HarnessError::Engine {
                index: i,
                source: EngineError::TypeMismatch { query: spec.query, row: e.kind() },
            });
        }
        let mut deltas = vec![0u64; batches];
        // zeroed allocations may be mapped lazily; touch every page now
        deltas.fill(u64::MAX);
        Ok(Trial { state: ViewState::new(spec.query), spec, events, deltas })
    }

    /// Handle on the engine's index-operation count, for op-counting fake clocks.
    pub fn op_counter(&self) -> OpCounter {
        self.state.op_counter()
    }

    #[doc(hidden)]
    pub fn state_mut(&mut self) -> &mut ViewState {
        &mut self.state
    }

    /// Runs the measured loop. `log` receives progress lines before and after
    /// the loop only.
    pub fn run<C: Clock>(
        mut self,
        clock: &mut C,
        scenario: &str,
        calibration: Option<Calibration>,
        log: &mut dyn Write,
    ) -> Result<TrialOutcome, HarnessError> {
        let batch = self.spec.batch;
        let _ = writeln!(
            log,
            "trial: query={} events={} batch={} clock={}",
            self.spec.query,
            self.events.len(),
            batch,
            clock.describe()
        );

        let state = &mut self.state;
        let mut failure = None;
        for (i, (slot, chunk)) in self.deltas.iter_mut().zip(self.events.chunks_exact(batch)).enumerate() {
            let t0 = clock.read();
            for (j, e) in chunk.iter().enumerate() {
                if let Err(source) = state.apply(e) {
                    failure = Some(HarnessError::Engine { index: i * batch + j, source });
                    break;
                }
            }
            let t1 = clock.read();
            if failure.is_some() {
                break;
            }
            *slot = t1.wrapping_sub(t0);
        }

        if let Some(err) = failure {
            let _ = writeln!(log, "trial: aborted: {err}");
            return Err(err);
        }
        let _ = writeln!(log, "trial: done, {} samples", self.deltas.len());

        let mut deltas = self.deltas;
        deltas.drain(..self.spec.drop_first);
        if let Some(i) = deltas.iter().position(|&d| d == 0 || d > i64::MAX as u64) {
            return Err(HarnessError::Integrity(format!(
                "sample {} has non-positive delta {}; clock is not monotone or too coarse",
                i + self.spec.drop_first,
                deltas[i] as i64
            )));
        }
        let mut meta = BTreeMap::new();
        meta.insert("clock_read".into(), clock.describe());
        let trace = LatencyTrace {
            deltas,
            clock: clock.kind(),
            calibration,
            query: self.spec.query,
            batch: u32::try_from(batch).map_err(|_| HarnessError::InvalidSpec("batch too large".into()))?,
            drop_first: u32::try_from(self.spec.drop_first)
                .map_err(|_| HarnessError::InvalidSpec("drop_first too large".into()))?,
            total_events: self.events.len() as u64,
            scenario: scenario.to_string(),
            meta,
        };
        Ok(TrialOutcome { trace, snapshot: self.state.snapshot() })
    }
}

pub fn run_trial<C: Clock>(
    spec: TrialSpec,
    events: &[Event],
    clock: &mut C,
    scenario: &str,
    calibration: Option<Calibration>,
    log: &mut dyn Write,
) -> Result<TrialOutcome, HarnessError> {
    Trial::prepare(spec, events)?.run(clock, scenario, calibration, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::FakeClock;
    use quietbench_engine::{generate, Fixed, Schema, StreamSpec};

    fn finance(base: usize, iterations: usize) -> Vec<Event> {
        generate(&StreamSpec::new(Schema::Finance, base, 1, iterations)).unwrap()
    }

    #[test]
    fn scripted_clock_gives_exact_deltas() {
        let events = finance(10, 1);
        let mut clock = FakeClock::stepping(0, 7);
        let out = run_trial(TrialSpec::new(QueryId::C1), &events, &mut clock, "no-load", None, &mut Vec::new()).unwrap();
        assert_eq!(out.trace.deltas, vec![7; 10]);
        assert_eq!(out.snapshot.scalar(), Some(Fixed::from_int(10)));
    }

    #[test]
    fn batching_sums_per_tuple_work() {
        let events = finance(100, 20);
        let per_tuple = {
            let trial = Trial::prepare(TrialSpec::new(QueryId::Axf), &events).unwrap();
            let mut clock = FakeClock::counting_ops(trial.op_counter());
            trial.run(&mut clock, "x", None, &mut Vec::new()).unwrap().trace.deltas
        };
        let batched = {
            let trial = Trial::prepare(TrialSpec::new(QueryId::Axf).with_batch(1000), &events).unwrap();
            let mut clock = FakeClock::counting_ops(trial.op_counter());
            trial.run(&mut clock, "x", None, &mut Vec::new()).unwrap().trace.deltas
        };
        assert_eq!(batched.len(), 2);
        let sums: Vec<u64> = per_tuple.chunks(1000).map(|c| c.iter().sum()).collect();
        assert_eq!(batched, sums);
    }

    #[test]
    fn drop_first_shortens_trace() {
        let events = finance(10, 1);
        let out = run_trial(
            TrialSpec::new(QueryId::C1).with_drop_first(3),
            &events,
            &mut FakeClock::stepping(0, 2),
            "x",
            None,
            &mut Vec::new(),
        )
        .unwrap();
        assert_eq!(out.trace.len(), 7);
        assert_eq!(out.trace.drop_first, 3);
    }

    #[test]
    fn rejects_bad_specs() {
        let events = finance(10, 1);
        let err = |spec| Trial::prepare(spec, &events).err().unwrap();
        assert!(matches!(err(TrialSpec::new(QueryId::C1).with_batch(3)), HarnessError::InvalidSpec(_)));
        assert!(matches!(err(TrialSpec::new(QueryId::C1).with_batch(0)), HarnessError::InvalidSpec(_)));
        assert!(matches!(err(TrialSpec::new(QueryId::C1).with_drop_first(10)), HarnessError::InvalidSpec(_)));
        assert!(matches!(err(TrialSpec::new(QueryId::Q6)), HarnessError::Engine { index: 0, .. }));
    }

    #[test]
    fn zero_delta_is_integrity_error() {
        let events = finance(4, 1);
        let r = run_trial(TrialSpec::new(QueryId::C1), &events, &mut FakeClock::stepping(5, 0), "x", None, &mut Vec::new());
        assert!(matches!(r, Err(HarnessError::Integrity(_))));
    }

    #[test]
    fn engine_failure_aborts_trial() {
        use quietbench_engine::event::{dates, LineitemRow};
        let row = Event::Lineitem(LineitemRow {
            quantity: Fixed::ONE,
            extendedprice: Fixed::from_raw(i64::MAX / 4),
            discount: "0.06".parse().unwrap(),
            tax: Fixed::ZERO,
            returnflag: 'A',
            linestatus: 'F',
            shipdate: dates::Q6_SHIPDATE_FROM,
        });
        let events = vec![row; 200];
        let mut log = Vec::new();
        let r = run_trial(TrialSpec::new(QueryId::Q6), &events, &mut FakeClock::stepping(0, 1), "x", None, &mut log);
        assert!(matches!(r, Err(HarnessError::Engine { source: EngineError::Overflow(_), .. })));
        assert!(String::from_utf8(log).unwrap().contains("aborted"));
    }
}
