//! Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//!
//! Runs without the libtest harness so the lines reach the terminal. Exits
//! non-zero if any criterion fails. Criteria that need a privileged multi-core
//! host report SKIP elsewhere.

use std::cell::Cell;
use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::Command;
use std::rc::Rc;
use std::thread;
use std::time::{Duration, Instant};

use quietbench::verify::check_prefixes;
use quietbench_core::analysis::{classify_outliers, sliding_mean, spreads, DEFAULT_HIGH_QUANTILE, DEFAULT_LOW_QUANTILE};
use quietbench_core::clock::{calibrate, measure_overhead, Clock, ClockKind, CycleCounter, FakeClock, Fencing, MonotonicClock};
use quietbench_core::harness::{run_trial, Trial, TrialSpec};
use quietbench_core::report::{timeseries_svg, PlotSpec};
use quietbench_core::trace::{export_trace, import_trace};
use quietbench_core::ScenarioLabel;
use quietbench_engine::fuzz::random_stream;
use quietbench_engine::{generate, Event, QueryId, Schema, StreamSpec};
use quietbench_os::isolate::{apply_scenario, teardown, Feature, OsSnapshot, ScenarioSpec};
use quietbench_os::{current_tid, DryRunOs, FakeOs, LinuxOs, Os};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Verdict::{Fail, Pass, Skip};

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn privileged() -> bool {
    std::env::var("QUIETBENCH_PRIVILEGED_TESTS").as_deref() == Ok("1")
}

fn online() -> Vec<usize> {
    LinuxOs.online_cpus().map(|c| c.iter().collect()).unwrap_or_default()
}

const C1_STREAMS: usize = 50;
const C1_MAX_EVENTS: usize = 2000;
const C1_BUDGET: Duration = Duration::from_secs(120);

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut prefixes = 0usize;
    for q in QueryId::ALL {
        for i in 0..C1_STREAMS {
            let len = C1_MAX_EVENTS * (i + 1) / C1_STREAMS;
            let seed = 1000 * q.code() as u64 + i as u64 + 1;
            let events = random_stream(q, seed, len);
            match check_prefixes(q, &events, None) {
                Ok(n) => prefixes += n,
                Err(d) => return Fail(format!("{q} seed {seed}: divergence at prefix {}", d.prefix())),
            }
        }
    }
    let took = start.elapsed();
    check(
        took < C1_BUDGET,
        format!("6 queries x {C1_STREAMS} streams (<= {C1_MAX_EVENTS} events), {prefixes} prefixes equal, {took:.1?}"),
    )
}

fn spread_math() -> Verdict {
    let s = spreads(&[1, 2, 3, 4, 100]).unwrap();
    // sorted: 1 2 3 4 100, median is the middle element
    let exact = s.median == 3.0
        && (*s.max_spread_exact.numer(), *s.max_spread_exact.denom()) == (100, 3)
        && (*s.min_spread_exact.numer(), *s.min_spread_exact.denom()) == (3, 1);
    if !exact {
        return Fail(format!(
            "median {} max {} min {}",
            s.median, s.max_spread_exact, s.min_spread_exact
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in 0..1000 {
        let n = rng.gen_range(1..=300);
        let xs: Vec<u64> = (0..n).map(|_| rng.gen_range(1..=1_000_000)).collect();
        let k = rng.gen_range(2..=10_000u64);
        let scaled: Vec<u64> = xs.iter().map(|x| x * k).collect();
        let (a, b) = (spreads(&xs).unwrap(), spreads(&scaled).unwrap());
        if a.max_spread_exact != b.max_spread_exact || a.min_spread_exact != b.min_spread_exact {
            return Fail(format!("trace {t}: scaling by {k} changed the spreads"));
        }
    }
    Pass("[1,2,3,4,100] -> median 3, max 100/3, min 3/1; 1000 scaled traces keep exact ratios".into())
}

fn ops_per_event(q: QueryId, events: &[Event]) -> Vec<u64> {
    let trial = Trial::prepare(TrialSpec::new(q), events).unwrap();
    let mut clock = FakeClock::counting_ops(trial.op_counter());
    trial.run(&mut clock, "no-load", None, &mut io::sink()).unwrap().trace.deltas
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len() as f64
}

fn constancy() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (q, schema, base, iters) in [(QueryId::C1, Schema::Finance, 100, 5000), (QueryId::Q6, Schema::Lineitem, 10_000, 50)] {
        let events = generate(&StreamSpec::new(schema, base, 1, iters)).unwrap();
        let ops = ops_per_event(q, &events);
        let (first, last) = (mean(&ops[..10_000]), mean(&ops[ops.len() - 10_000..]));
        ok &= ops.len() == 500_000 && last <= 2.0 * first;
        notes.push(format!("{q} first {first:.2} last {last:.2}"));
    }
    for q in [QueryId::Axf, QueryId::Psp] {
        let events = generate(&StreamSpec::new(Schema::Finance, 200_000, 3, 1)).unwrap();
        let ops = ops_per_event(q, &events);
        // smallest c with ops <= c*log2(n)+c for every event, n = events applied so far
        let c = ops.iter().enumerate().map(|(i, &o)| o as f64 / ((i as f64 + 1.0).log2() + 1.0)).fold(0.0, f64::max);
        // shape: window means must follow log2(n) better than they follow n
        let windows: Vec<(f64, f64)> = ops.chunks(1000).enumerate().map(|(w, c)| ((w + 1) as f64 * 1000.0, mean(c))).collect();
        let log_rss = ols_rss(windows.iter().map(|&(n, m)| (n.log2(), m)));
        let lin_rss = ols_rss(windows.iter().copied());
        ok &= c.is_finite() && log_rss < lin_rss;
        notes.push(format!("{q} c {c:.2} (rss vs log2 n {log_rss:.1}, vs n {lin_rss:.1})"));
    }
    check(ok, notes.join("; "))
}

/// Residual sum of squares of the least-squares line through `pts`.
fn ols_rss(pts: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let n = pts.clone().count() as f64;
    let (sx, sy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxx, sxy) = pts.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (x - mx), b + (x - mx) * (y - my)));
    let slope = sxy / sxx;
    pts.map(|(x, y)| {
        let r = y - (my + slope * (x - mx));
        r * r
    })
    .sum()
}

struct Counting {
    reads: Rc<Cell<u64>>,
}

impl Clock for Counting {
    fn kind(&self) -> ClockKind {
        ClockKind::Fake
    }

    fn read(&mut self) -> u64 {
        self.reads.set(self.reads.get() + 1);
        self.reads.get() * 5
    }
}

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
        self.writes_at.push(self.reads.get());
        Ok(())
    }
}

fn plumbing() -> Verdict {
    let events = generate(&StreamSpec::new(Schema::Finance, 100, 1, 5000)).unwrap();
    let reads = Rc::new(Cell::new(0));
    let mut clock = Counting { reads: reads.clone() };
    let mut sink = Spy { reads: reads.clone(), writes_at: Vec::new() };
    let out = run_trial(TrialSpec::new(QueryId::Axf), &events, &mut clock, "no-load", None, &mut sink).unwrap();
    let total = reads.get();
    let loop_writes = sink.writes_at.iter().filter(|&&at| at != 0 && at != total).count();

    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.silt"), dir.path().join("b.silt"));
    export_trace(&out.trace, &p1).unwrap();
    let back = import_trace(&p1).unwrap();
    export_trace(&back, &p2).unwrap();
    let bit_exact = back == out.trace && fs::read(&p1).unwrap() == fs::read(&p2).unwrap();
    check(
        out.trace.len() == 500_000 && loop_writes == 0 && bit_exact,
        format!(
            "{} deltas, {} sink writes outside the loop, {loop_writes} inside, round trip bit-exact: {bit_exact}",
            out.trace.len(),
            sink.writes_at.len()
        ),
    )
}

fn clocks() -> Verdict {
    let mut tsc = match CycleCounter::probe(Fencing::Lfence) {
        Ok(c) => c,
        Err(e) => return Skip(format!("no invariant cycle counter: {e}")),
    };
    let cal = match calibrate(&mut tsc, 200_000_000) {
        Ok(c) => c,
        Err(e) => return Fail(format!("calibration: {e}")),
    };
    thread::sleep(Duration::from_secs(1));
    let cal2 = match calibrate(&mut tsc, 200_000_000) {
        Ok(c) => c,
        Err(e) => return Fail(format!("calibration: {e}")),
    };
    let drift = (cal.ticks_per_ns() - cal2.ticks_per_ns()).abs() / cal.ticks_per_ns();
    let t = measure_overhead(&mut tsc, 100_000).unwrap();
    let m = measure_overhead(&mut MonotonicClock, 100_000).unwrap();
    let tsc_ns = cal.ticks_to_ns(t.median_ticks as f64);
    let mono_ns = m.median_ticks as f64;
    check(
        tsc_ns < mono_ns && drift < 0.01,
        format!(
            "read overhead tsc {tsc_ns:.1} ns vs monotonic {mono_ns:.1} ns; calibration {:.4} vs {:.4} ticks/ns ({:.3}% apart)",
            cal.ticks_per_ns(),
            cal2.ticks_per_ns(),
            drift * 100.0
        ),
    )
}

fn qb(dir: &Path, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_quietbench"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn direction_of_effect() -> Verdict {
    let cpus = online();
    if cpus.len() < 4 || !privileged() {
        return Skip(format!(
            "needs >= 4 online CPUs and QUIETBENCH_PRIVILEGED_TESTS=1 (have {} CPUs)",
            cpus.len()
        ));
    }
    let dir = tempfile::tempdir().unwrap();
    let labels = [
        ScenarioLabel::NoLoad,
        ScenarioLabel::Load,
        ScenarioLabel::LoadFifo,
        ScenarioLabel::LoadShield,
        ScenarioLabel::LoadShieldFifo,
    ];
    let mut best = Vec::new();
    for label in labels {
        let mut runs = Vec::new();
        for k in 0..5 {
            let out = format!("{}-{k}.silt", label.as_str());
            let seed = (k + 1).to_string();
            let r = qb(
                dir.path(),
                &["run", "--query", "axfinder", "--scenario", label.as_str(), "--iterations", "500", "--seed", &seed, "-o", &out],
            );
            if let Err(e) = r {
                return Fail(e);
            }
            runs.push(spreads(&import_trace(dir.path().join(&out)).unwrap().deltas).unwrap());
        }
        let b = runs.into_iter().min_by(|a, b| a.median.total_cmp(&b.median)).unwrap();
        best.push((label, b.max_spread));
    }
    let get = |l: ScenarioLabel| best.iter().find(|(x, _)| *x == l).unwrap().1;
    let (load, shield) = (get(ScenarioLabel::Load), get(ScenarioLabel::LoadShieldFifo));
    best.sort_by(|a, b| a.1.total_cmp(&b.1));
    let order: Vec<String> = best.iter().map(|(l, s)| format!("{}={s:.1}", l.as_str())).collect();
    check(
        shield <= load,
        format!("load-shield-fifo {shield:.2} vs load {load:.2} ({:.1}x); order {}", load / shield, order.join(" < ")),
    )
}

fn tenant_impact() -> Verdict {
    let cpus = online();
    if cpus.len() > 1 && !privileged() {
        return Skip("shielding would reconfigure this multi-core host; set QUIETBENCH_PRIVILEGED_TESTS=1".into());
    }
    let target = *cpus.last().unwrap();
    let others: Vec<String> = cpus.iter().filter(|&&c| c != target).map(|c| c.to_string()).collect();
    let tenant_cpus = if others.is_empty() { target.to_string() } else { others.join(",") };
    let dir = tempfile::tempdir().unwrap();
    for label in ["load", "load-shield-fifo"] {
        let r = qb(
            dir.path(),
            &[
                "run", "--query", "c1", "--scenario", label, "--clock", "monotonic", "--iterations", "100",
                "--tenant-cpus", &tenant_cpus, "--tenant-size", "small", "--warmup-ms", "300",
                "-o", &format!("{label}.silt"),
            ],
        );
        if let Err(e) = r {
            return Fail(e);
        }
    }
    if let Err(e) = qb(
        dir.path(),
        &[
            "analyze", "load.silt", "load-shield-fifo.silt", "--tenants", "load=load.silt.json",
            "--tenants", "load-shield-fifo=load-shield-fifo.silt.json", "-o", "summary.json",
        ],
    ) {
        return Fail(e);
    }
    let s: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    let rows = s["tenant_impact"]["rows"].as_array().cloned().unwrap_or_default();
    let deltas: Vec<String> = rows
        .iter()
        .filter(|r| r["label"] == "load-shield-fifo")
        .filter_map(|r| Some(format!("{}={:+.1}%", r["workload"].as_str()?, r["relative_delta"].as_f64()? * 100.0)))
        .collect();
    let shared = if others.is_empty() { " (tenants share the measurement CPU)" } else { "" };
    check(!deltas.is_empty(), format!("throughput delta vs load{shared}: {}", deltas.join(" ")))
}

fn rendering() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let deltas: Vec<u64> = (0..500_000)
        .map(|_| match rng.gen_range(0..10_000) {
            0..=2 => rng.gen_range(5_000..50_000),
            3..=5 => rng.gen_range(10..40),
            _ => rng.gen_range(90..130),
        })
        .collect();
    let classes = classify_outliers(&deltas, DEFAULT_LOW_QUANTILE, DEFAULT_HIGH_QUANTILE).unwrap();
    let mean = sliding_mean(&deltas, 1000).unwrap();
    let spec = PlotSpec {
        deltas: &deltas,
        classification: &classes,
        mean: &mean,
        window: 1000,
        downsample: Some(50_000),
        unit: "ticks",
        title: "acceptance",
    };
    let svg = timeseries_svg(&spec).unwrap();

    // independent reading of the vector file
    let attr = |line: &str, name: &str| -> Option<String> {
        let start = line.find(&format!(" {name}=\""))? + name.len() + 3;
        Some(line[start..].split('"').next()?.to_string())
    };
    let mut drawn = BTreeSet::new();
    let mut normal = 0usize;
    for line in svg.lines().filter(|l| l.starts_with("<circle")) {
        let class = attr(line, "class").unwrap();
        let i: usize = attr(line, "data-i").unwrap().parse().unwrap();
        if class == "normal" {
            normal += 1;
        } else {
            drawn.insert((class, i));
        }
    }
    let (lo, hi) = (classes.q_low, classes.q_high);
    let expected: BTreeSet<(String, usize)> = deltas
        .iter()
        .enumerate()
        .filter_map(|(i, &d)| {
            if d < lo {
                Some(("low".to_string(), i))
            } else if d > hi {
                Some(("high".to_string(), i))
            } else {
                None
            }
        })
        .collect();
    let polylines = svg.matches("<polyline class=\"mean\"").count();
    let markers: Vec<(String, usize)> = svg
        .lines()
        .filter(|l| l.starts_with("<path class=\"marker"))
        .map(|l| (attr(l, "class").unwrap(), attr(l, "data-i").unwrap().parse().unwrap()))
        .collect();
    let min = *deltas.iter().min().unwrap();
    let max = *deltas.iter().max().unwrap();
    let first = |v: u64| deltas.iter().position(|&d| d == v).unwrap();
    let want_markers = vec![("marker min".to_string(), first(min)), ("marker max".to_string(), first(max))];
    check(
        drawn == expected && normal <= 50_000 && polylines == 1 && markers == want_markers,
        format!(
            "{} extremes of {} drawn, {normal} normal points, {polylines} mean polyline, markers {markers:?}",
            drawn.len(),
            expected.len()
        ),
    )
}

fn isolation_hygiene() -> Verdict {
    let mut notes = Vec::new();

    let mut fake = FakeOs::new(4, 6);
    let tids = fake.thread_ids();
    let before = OsSnapshot::capture(&fake, &tids);
    let spec = ScenarioSpec::from_label(ScenarioLabel::LoadShieldFifo, 3);
    let mut applied = apply_scenario(&mut fake, &spec, FakeOs::MEASURE_TID).unwrap();
    let all_applied = [Feature::Shield, Feature::IrqRedirect, Feature::Pin, Feature::Fifo]
        .iter()
        .all(|&f| applied.status(f).is_applied());
    let changed = !OsSnapshot::capture(&fake, &tids).diff(&before).is_empty();
    teardown(&mut fake, &mut applied);
    let fake_diff = OsSnapshot::capture(&fake, &tids).diff(&before);
    let fake_ok = all_applied && changed && fake_diff.is_empty();
    notes.push(format!("fake 4-cpu shield+fifo restored: {fake_ok}"));

    let tid = current_tid();
    let target = *online().last().unwrap();
    let live_before = OsSnapshot::capture(&LinuxOs, &[tid]);
    let mut dry = DryRunOs::new(&LinuxOs);
    let mut a = apply_scenario(&mut dry, &ScenarioSpec::from_label(ScenarioLabel::LoadShieldFifo, target), tid).unwrap();
    teardown(&mut dry, &mut a);
    let planned = dry.writes.len();
    let dry_diff = OsSnapshot::capture(&LinuxOs, &[tid]).diff(&live_before);
    notes.push(format!("dry run planned {planned} writes, live diff {}", dry_diff.len()));

    let mut live = vec![ScenarioLabel::LoadFifo];
    if privileged() {
        live.push(ScenarioLabel::LoadShieldFifo);
    } else {
        notes.push("live shield roundtrip needs QUIETBENCH_PRIVILEGED_TESTS=1".into());
    }
    let mut live_ok = true;
    for label in live {
        let mut os = LinuxOs;
        let before = OsSnapshot::capture(&os, &[tid]);
        let mut a = match apply_scenario(&mut os, &ScenarioSpec::from_label(label, target), tid) {
            Ok(a) => a,
            Err(e) => return Fail(format!("{}: {e}", label.as_str())),
        };
        let t = teardown(&mut os, &mut a);
        let diff = OsSnapshot::capture(&os, &[tid]).diff(&before);
        live_ok &= t.failures.is_empty() && diff.is_empty();
        notes.push(format!("live {} restored: {}", label.as_str(), t.failures.is_empty() && diff.is_empty()));
    }
    check(fake_ok && dry_diff.is_empty() && live_ok, notes.join("; "))
}

type Criterion = fn() -> Verdict;

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("spread math", spread_math),
        ("constancy/complexity", constancy),
        ("measurement plumbing", plumbing),
        ("clock behaviour", clocks),
        ("direction of effect", direction_of_effect),
        ("tenant impact", tenant_impact),
        ("rendering", rendering),
        ("isolation hygiene", isolation_hygiene),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {}: {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
