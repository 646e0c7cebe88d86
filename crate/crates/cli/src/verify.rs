//! Per-prefix differential check of the incremental engine.

use std::io::Write;

use quietbench_engine::fuzz::random_stream;
use quietbench_engine::{evaluate_oracle, generate, load_csv, EngineError, Event, QueryId, StreamSpec, ViewSnapshot, ViewState};

use crate::args::VerifyArgs;
use crate::error::{CliError, CliResult, Context, Exit};

#[derive(Debug)]
pub enum Divergence {
    /// Snapshots differ after `prefix` events.
    Mismatch { prefix: usize, expected: Box<ViewSnapshot>, got: Box<ViewSnapshot> },
    /// One side rejected event `prefix`.
    Error { prefix: usize, engine: Option<EngineError>, oracle: Option<EngineError> },
}

impl Divergence {
    pub fn prefix(&self) -> usize {
        match self {
            Divergence::Mismatch { prefix, .. } | Divergence::Error { prefix, .. } => *prefix,
        }
    }
}

/// Applies `events` one by one and compares with the oracle after each.
/// Returns the number of prefixes checked.
pub fn check_prefixes(query: QueryId, events: &[Event], inject_fault_at: Option<u64>) -> Result<usize, Divergence> {
    let mut state = ViewState::new(query);
    if let Some(n) = inject_fault_at {
        state.inject_fault_after(n);
    }
    for (i, e) in events.iter().enumerate() {
        let prefix = i + 1;
        let applied = state.apply(e);
        let oracle = evaluate_oracle(query, &events[..prefix]);
        match (applied, oracle) {
            (Ok(()), Ok(expected)) => {
                let got = state.snapshot();
                if got != expected {
                    return Err(Divergence::Mismatch { prefix, expected: Box::new(expected), got: Box::new(got) });
                }
            }
            // both sides refusing the same input (overflow) is agreement; stop there
            (Err(_), Err(_)) => return Ok(i),
            (a, o) => return Err(Divergence::Error { prefix, engine: a.err(), oracle: o.err() }),
        }
    }
    Ok(events.len())
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> CliResult {
    if args.events == 0 && args.input.is_none() {
        return Err(CliError::usage("--events must be positive"));
    }
    let events = match &args.input {
        Some(p) => load_csv(p, args.query.schema()).or_exit(Exit::Usage, "reading input stream")?,
        None if args.adversarial => random_stream(args.query, args.seed, args.events),
        None => generate(&StreamSpec::new(args.query.schema(), args.events, args.seed, 1)).or_exit(Exit::Usage, "generating stream")?,
    };
    let _ = writeln!(out, "verify: query={} events={} seed={}", args.query, events.len(), args.seed);
    match check_prefixes(args.query, &events, args.inject_fault_at) {
        Ok(n) => {
            let _ = writeln!(out, "ok: {n} prefixes match the oracle");
            Ok(())
        }
        Err(d) => {
            let detail = match &d {
                Divergence::Mismatch { prefix, expected, got } => {
                    format!("divergence at prefix {prefix}: expected {expected:?}, got {got:?}")
                }
                Divergence::Error { prefix, engine, oracle } => {
                    format!("divergence at prefix {prefix}: engine {engine:?}, oracle {oracle:?}")
                }
            };
            let _ = writeln!(out, "FAIL: {detail}");
            Err(CliError::new(Exit::Verification, anyhow::anyhow!("{detail}")))
        }
    }
}
