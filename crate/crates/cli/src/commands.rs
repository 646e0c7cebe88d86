use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use quietbench_core::analysis::{
    classify_outliers, compare_scenarios, detect_bands, sliding_mean, spreads, tenant_impact, SpreadSummary,
    MEDIAN_CONVENTION, QUANTILE_CONVENTION,
};
use quietbench_core::clock::{self, calibrate, Calibration, CycleCounter, FakeClock, Fencing, MonotonicClock};
use quietbench_core::harness::{HarnessError, Trial, TrialOutcome, TrialSpec};
use quietbench_core::report::{render_spread_chart, render_timeseries, write_json, write_points_csv, PlotSpec};
use quietbench_core::trace::{export_trace, import_trace, LatencyTrace, TraceError};
use quietbench_core::{TenantReport, WorkloadKind};
use quietbench_engine::{generate, load_csv, write_csv, Event, Schema, StreamSpec};
use quietbench_os::isolate::{
    apply_scenario, teardown, verify_scenario, AppliedScenario, Feature, FeatureStatus, IrqNote, ScenarioSpec,
    TeardownReport, VerificationReport,
};
use quietbench_os::{current_tid, start_tenants, CpuList, DryRunOs, LinuxOs, LoadParams, Os, TenantHandle};
use serde::Serialize;
use serde_json::json;

use crate::args::{AnalyzeArgs, ClockChoice, GenArgs, LoadArgs, PlotArgs, RunArgs, StreamArgs, TenantSize};
use crate::error::{CliError, CliResult, Context, Exit};

pub fn cmd_gen(args: &GenArgs, out: &mut dyn Write) -> CliResult {
    let spec = StreamSpec::new(args.schema, args.base, args.seed, args.iterations);
    spec.validate().map_err(CliError::usage)?;
    let events = generate(&spec).or_exit(Exit::Usage, "generating stream")?;
    match &args.output {
        Some(p) => {
            let f = fs::File::create(p).or_exit(Exit::Environment, "creating output")?;
            write_csv(io::BufWriter::new(f), args.schema, &events).or_exit(Exit::Environment, "writing CSV")?;
            let _ = writeln!(
                io::stderr(),
                "gen: {} {} tuples (seed {}) -> {}",
                events.len(),
                args.schema,
                args.seed,
                p.display()
            );
        }
        None => write_csv(out, args.schema, &events).or_exit(Exit::Environment, "writing CSV")?,
    }
    Ok(())
}

pub(crate) fn load_stream(s: &StreamArgs, schema: Schema) -> CliResult<Vec<Event>> {
    match &s.input {
        Some(p) => load_csv(p, schema).or_exit(Exit::Usage, &format!("reading {}", p.display())),
        None => {
            let spec = StreamSpec::new(schema, s.base, s.seed, s.iterations);
            spec.validate().map_err(CliError::usage)?;
            generate(&spec).or_exit(Exit::Usage, "generating stream")
        }
    }
}

pub(crate) fn parse_workloads(s: &str) -> CliResult<Vec<WorkloadKind>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(WorkloadKind::ALL.to_vec());
    }
    let kinds = s
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<WorkloadKind>().map_err(CliError::usage))
        .collect::<CliResult<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(CliError::usage("empty workload list"));
    }
    Ok(kinds)
}

fn parse_cpus(s: &str, online: &CpuList) -> CliResult<CpuList> {
    let cpus: CpuList = s.parse().map_err(CliError::usage)?;
    if let Some(c) = cpus.iter().find(|&c| !online.contains(c)) {
        return Err(CliError::usage(format!("cpu {c} is not online (online: {online})")));
    }
    Ok(cpus)
}

fn tenant_params(size: TenantSize) -> LoadParams {
    match size {
        TenantSize::Default => LoadParams::default(),
        TenantSize::Small => LoadParams::small(),
    }
}

fn read_trimmed(p: &str) -> Option<String> {
    fs::read_to_string(p).ok().map(|s| s.trim().to_string())
}

/// Kernel facts that influence noise but are not under the tool's control.
fn host_meta() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    if let Some(model) = clock::cpu_model() {
        m.insert("cpu_model".into(), model);
    }
    if let Some(r) = read_trimmed("/proc/sys/kernel/osrelease") {
        m.insert("kernel".into(), r);
    }
    if let Some(v) = read_trimmed("/proc/version") {
        let preempt = if read_trimmed("/sys/kernel/realtime").as_deref() == Some("1") || v.contains("PREEMPT_RT") {
            "rt"
        } else if v.contains("PREEMPT") {
            "preempt"
        } else {
            "none/voluntary"
        };
        m.insert("preemption".into(), preempt.into());
    }
    if let Some(c) = read_trimmed("/proc/cmdline") {
        let flags: Vec<&str> =
            c.split_whitespace().filter(|w| w.starts_with("nohz") || w.starts_with("isolcpus")).collect();
        m.insert("tick".into(), if flags.is_empty() { "periodic".into() } else { flags.join(" ") });
    }
    m
}

/// Tears the scenario down on every exit path, including panics.
struct ScenarioGuard {
    applied: Option<AppliedScenario>,
}

impl ScenarioGuard {
    fn finish(&mut self) -> Option<(AppliedScenario, TeardownReport)> {
        let mut a = self.applied.take()?;
        let r = teardown(&mut LinuxOs, &mut a);
        Some((a, r))
    }
}

impl Drop for ScenarioGuard {
    fn drop(&mut self) {
        if let Some((_, r)) = self.finish() {
            for f in r.failures {
                eprintln!("teardown: {f}");
            }
        }
    }
}

#[derive(Serialize)]
struct IsolationView<'a> {
    spec: &'a ScenarioSpec,
    tid: u32,
    achieved: &'a BTreeMap<Feature, FeatureStatus>,
    irqs_moved: &'a [u32],
    irqs_immovable: &'a [IrqNote],
    tasks_migrated: usize,
    tasks_immovable: usize,
}

impl<'a> From<&'a AppliedScenario> for IsolationView<'a> {
    fn from(a: &'a AppliedScenario) -> Self {
        IsolationView {
            spec: &a.spec,
            tid: a.tid,
            achieved: &a.achieved,
            irqs_moved: &a.irqs_moved,
            irqs_immovable: &a.irqs_immovable,
            tasks_migrated: a.tasks_migrated,
            tasks_immovable: a.tasks_immovable,
        }
    }
}

fn harness_error(e: HarnessError) -> CliError {
    match e {
        HarnessError::Integrity(_) => CliError::integrity(e),
        HarnessError::InvalidSpec(_) | HarnessError::Engine { .. } => CliError::new(Exit::Usage, e),
    }
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CliResult {
    let events = load_stream(&args.stream, args.query.schema())?;
    let trial_spec = TrialSpec::new(args.query).with_batch(args.batch).with_drop_first(args.drop_first);
    let online = LinuxOs.online_cpus().or_exit(Exit::Environment, "reading online CPUs")?;
    let target = match args.cpu {
        Some(c) if online.contains(c) => c,
        Some(c) => return Err(CliError::usage(format!("cpu {c} is not online (online: {online})"))),
        None => online.iter().last().expect("at least one CPU is online"),
    };
    let scenario = ScenarioSpec::from_label(args.scenario, target).with_priority(args.fifo_priority);
    scenario.validate().map_err(CliError::usage)?;
    let kinds = parse_workloads(&args.tenants)?;
    let tenant_cpus = match &args.tenant_cpus {
        Some(s) => parse_cpus(s, &online)?,
        None => online.without(target),
    };
    if args.clock == ClockChoice::Tsc && args.calibration_ms * 1_000_000 < clock::MIN_CALIBRATION_NS {
        return Err(CliError::usage(format!(
            "--calibration-ms must be at least {}",
            clock::MIN_CALIBRATION_NS / 1_000_000
        )));
    }
    // surfaces batch/drop-first/schema problems before anything is changed
    Trial::prepare(trial_spec.clone(), &events).map_err(harness_error)?;
    let tid = current_tid();
    let _ = writeln!(out, "run: query={} scenario={} cpu={target} seed={}", args.query, args.scenario, args.stream.seed);

    if args.dry_run {
        let live = LinuxOs;
        let mut dry = DryRunOs::new(&live);
        let mut applied = apply_scenario(&mut dry, &scenario, tid).map_err(CliError::usage)?;
        let _ = write!(out, "{}", applied.summary());
        let _ = writeln!(out, "would write:");
        for w in &dry.writes {
            let _ = writeln!(out, "  {w}");
        }
        let n = dry.writes.len();
        teardown(&mut dry, &mut applied);
        let _ = writeln!(out, "would restore:");
        for w in &dry.writes[n..] {
            let _ = writeln!(out, "  {w}");
        }
        if args.scenario.has_tenants() {
            let _ = writeln!(out, "would start tenants {kinds:?} on cpus [{tenant_cpus}]");
        }
        let _ = writeln!(out, "dry run: no changes made");
        return Ok(());
    }

    let mut clock = match args.clock {
        ClockChoice::Tsc => {
            let fencing = if args.no_fence { Fencing::None } else { Fencing::Lfence };
            Some(CycleCounter::probe(fencing).or_exit(Exit::Environment, "cycle counter")?)
        }
        _ => None,
    };

    let mut tenants: Option<TenantHandle> = None;
    if args.scenario.has_tenants() {
        if tenant_cpus.is_empty() {
            let _ = writeln!(out, "warning: no CPU left for tenants; running without load");
        } else {
            let cpus: Vec<usize> = tenant_cpus.iter().collect();
            let h = start_tenants(&kinds, &cpus, args.stream.seed, tenant_params(args.tenant_size))
                .or_exit(Exit::Environment, "starting tenants")?;
            tenants = Some(h);
            thread::sleep(Duration::from_millis(args.warmup_ms));
        }
    }

    let mut guard = ScenarioGuard { applied: None };
    let measured = (|| -> CliResult<(TrialOutcome, VerificationReport, AppliedScenario)> {
        let applied = apply_scenario(&mut LinuxOs, &scenario, tid).map_err(CliError::env)?;
        let _ = write!(out, "{}", applied.summary());
        guard.applied = Some(applied.clone());
        let verification = verify_scenario(&LinuxOs, &applied);
        for d in &verification.diffs {
            let _ = writeln!(out, "verify: {d}");
        }
        for w in &verification.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let calibration: Option<Calibration> = match clock.as_mut() {
            Some(c) => Some(calibrate(c, args.calibration_ms * 1_000_000).or_exit(Exit::Environment, "calibration")?),
            None => None,
        };
        let trial = Trial::prepare(trial_spec.clone(), &events).map_err(harness_error)?;
        let label = args.scenario.as_str();
        let mut log = io::stderr();
        let outcome = match (args.clock, clock.as_mut()) {
            (ClockChoice::Tsc, Some(c)) => trial.run(c, label, calibration, &mut log),
            (ClockChoice::Fake, _) => {
                let mut fake = FakeClock::counting_ops(trial.op_counter());
                trial.run(&mut fake, label, None, &mut log)
            }
            _ => trial.run(&mut MonotonicClock, label, None, &mut log),
        }
        .map_err(harness_error)?;
        Ok((outcome, verification, applied))
    })();
    let restored = guard.finish();
    let tenant_report: Option<TenantReport> = tenants.as_mut().map(|h| h.stop());
    let (outcome, verification, applied) = measured?;
    let (_, teardown_report) = restored.expect("scenario was applied");
    for f in &teardown_report.failures {
        let _ = writeln!(out, "teardown: {f}");
    }

    let mut trace = outcome.trace;
    trace.meta.extend(host_meta());
    trace.meta.extend(applied.metadata());
    trace.meta.insert("seed".into(), args.stream.seed.to_string());
    match &args.stream.input {
        Some(p) => trace.meta.insert("input".into(), p.display().to_string()),
        None => trace
            .meta
            .insert("input".into(), format!("generated base={} iterations={}", args.stream.base, args.stream.iterations)),
    };
    if let Some(t) = &tenant_report {
        let names: Vec<&str> = t.workloads().iter().map(|k| k.as_str()).collect();
        trace.meta.insert("tenants".into(), names.join(","));
        trace.meta.insert("tenant_cpus".into(), tenant_cpus.to_string());
    }
    export_trace(&trace, &args.output).or_exit(Exit::Environment, "writing trace")?;

    let summary = spreads(&trace.deltas).ok();
    let report_path = args.report.clone().unwrap_or_else(|| with_suffix(&args.output, ".json"));
    let report = json!({
        "seed": args.stream.seed,
        "query": args.query.as_str(),
        "scenario": args.scenario.as_str(),
        "clock": trace.clock.as_str(),
        "unit": trace.unit(),
        "trace": args.output,
        "samples": trace.len(),
        "calibration": trace.calibration,
        "isolation": IsolationView::from(&applied),
        "verification": verification,
        "teardown": teardown_report,
        "tenants": tenant_report,
        "summary": summary,
        "meta": trace.meta,
    });
    write_json(&report, &report_path).or_exit(Exit::Environment, "writing run report")?;
    let _ = writeln!(out, "trace: {} samples -> {}", trace.len(), args.output.display());
    if let Some(s) = summary {
        let _ = writeln!(
            out,
            "median {} {}, max_spread {:.3}, min_spread {:.3}",
            s.median,
            trace.unit(),
            s.max_spread,
            s.min_spread
        );
    }
    let _ = writeln!(out, "report: {}", report_path.display());
    Ok(())
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn cmd_load(args: &LoadArgs, out: &mut dyn Write) -> CliResult {
    let kinds = parse_workloads(&args.workloads)?;
    let online = LinuxOs.online_cpus().or_exit(Exit::Environment, "reading online CPUs")?;
    let cpus = match &args.cpus {
        Some(s) => parse_cpus(s, &online)?,
        None => online,
    };
    let cpu_vec: Vec<usize> = cpus.iter().collect();
    let mut h = start_tenants(&kinds, &cpu_vec, args.seed, tenant_params(args.size)).map_err(CliError::usage)?;
    thread::sleep(Duration::from_millis(args.duration_ms));
    let report = h.stop();
    match &args.output {
        Some(p) => {
            write_json(&report, p).or_exit(Exit::Environment, "writing report")?;
            let _ = writeln!(out, "load: seed {} on cpus [{cpus}] -> {}", args.seed, p.display());
        }
        None => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
    }
    Ok(())
}

pub(crate) fn read_trace(p: &Path) -> CliResult<LatencyTrace> {
    import_trace(p).map_err(|e| {
        let exit = match &e {
            TraceError::Io(io) if io.kind() == io::ErrorKind::NotFound => Exit::Usage,
            TraceError::Io(_) => Exit::Environment,
            _ => Exit::Integrity,
        };
        CliError::new(exit, anyhow::Error::new(e).context(format!("reading {}", p.display())))
    })
}

#[derive(Serialize)]
struct TraceAnalysis {
    path: PathBuf,
    scenario: String,
    query: String,
    clock: String,
    unit: String,
    seed: Option<String>,
    summary: SpreadSummary,
    outliers: serde_json::Value,
    bands: serde_json::Value,
    sliding_mean: Option<serde_json::Value>,
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> CliResult {
    let mut rows = Vec::new();
    let mut best: BTreeMap<String, SpreadSummary> = BTreeMap::new();
    for p in &args.traces {
        let t = read_trace(p)?;
        let summary = spreads(&t.deltas).or_exit(Exit::Integrity, &format!("analysing {}", p.display()))?;
        let classes = classify_outliers(&t.deltas, args.low, args.high).map_err(CliError::usage)?;
        let bin = args.bin_width.unwrap_or_else(|| ((summary.median / 50.0) as u64).max(1));
        let bands = detect_bands(&t.deltas, bin);
        let mean = if t.len() >= args.window {
            let m = sliding_mean(&t.deltas, args.window).expect("window fits");
            let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some(json!({ "window": args.window, "min": lo, "max": hi }))
        } else {
            None
        };
        // repeated runs of one scenario: the comparison keeps the quietest
        let keep = best.get(&t.scenario).map_or(true, |b| summary.max_spread < b.max_spread);
        if keep {
            best.insert(t.scenario.clone(), summary.clone());
        }
        rows.push(TraceAnalysis {
            path: p.clone(),
            scenario: t.scenario.clone(),
            query: t.query.as_str().into(),
            clock: t.clock.as_str().into(),
            unit: t.unit().into(),
            seed: t.meta.get("seed").cloned(),
            summary,
            outliers: json!({
                "low": classes.low, "high": classes.high, "normal": classes.normal,
                "q_low": classes.q_low, "q_high": classes.q_high,
                "low_level": args.low, "high_level": args.high,
            }),
            bands: json!({ "bin_width": bin, "peaks": bands }),
            sliding_mean: mean,
        });
    }
    let comparison = if best.len() >= 2 { Some(compare_scenarios(&best).expect("two or more")) } else { None };

    let mut tenant_reports = BTreeMap::new();
    for spec in &args.tenant_reports {
        let (label, path) =
            spec.split_once('=').ok_or_else(|| CliError::usage(format!("--tenants expects label=path, got `{spec}`")))?;
        let text = fs::read_to_string(path).or_exit(Exit::Usage, &format!("reading {path}"))?;
        let report = serde_json::from_str::<TenantReport>(&text)
            .or_else(|_| {
                // a run report carries the tenant report under "tenants"
                serde_json::from_str::<serde_json::Value>(&text)
                    .ok()
                    .and_then(|v| serde_json::from_value::<TenantReport>(v["tenants"].clone()).ok())
                    .ok_or(())
            })
            .map_err(|_| CliError::integrity(anyhow::anyhow!("{path} holds no tenant report")))?;
        tenant_reports.insert(label.to_string(), report);
    }
    let impact = if tenant_reports.is_empty() {
        None
    } else {
        Some(tenant_impact(&tenant_reports).map_err(CliError::usage)?)
    };

    let doc = json!({
        "conventions": { "median": MEDIAN_CONVENTION, "quantile": QUANTILE_CONVENTION },
        "traces": rows,
        "comparison": comparison,
        "tenant_impact": impact,
    });
    match &args.output {
        Some(p) => write_json(&doc, p).or_exit(Exit::Environment, "writing summary")?,
        None => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&doc).expect("summary serializes"));
        }
    }
    if args.output.is_some() {
        for r in &rows {
            let _ = writeln!(
                out,
                "{:<18} n={:<8} median={:<10} max_spread={:<10.3} min_spread={:.3}",
                r.scenario, r.summary.n, r.summary.median, r.summary.max_spread, r.summary.min_spread
            );
        }
        if let Some(c) = &comparison {
            for row in &c.rows {
                if let Some(red) = row.max_spread_reduction {
                    let _ = writeln!(out, "{:<18} max_spread reduction vs load: {red:.2}x", row.label);
                }
            }
        }
    }
    Ok(())
}

pub fn cmd_plot(args: &PlotArgs, out: &mut dyn Write) -> CliResult {
    if args.spreads {
        let mut items = Vec::new();
        for p in &args.traces {
            let t = read_trace(p)?;
            let s = spreads(&t.deltas).or_exit(Exit::Integrity, &format!("analysing {}", p.display()))?;
            items.push((t.scenario.clone(), s));
        }
        render_spread_chart(&items, &args.output).or_exit(Exit::Environment, "writing chart")?;
        let _ = writeln!(out, "spread chart ({} scenarios) -> {}", items.len(), args.output.display());
        return Ok(());
    }
    if args.traces.len() != 1 {
        return Err(CliError::usage("a time-series plot takes exactly one trace (use --spreads for several)"));
    }
    let t = read_trace(&args.traces[0])?;
    if t.is_empty() {
        return Err(CliError::integrity(anyhow::anyhow!("trace is empty")));
    }
    let classes = classify_outliers(&t.deltas, quietbench_core::analysis::DEFAULT_LOW_QUANTILE, quietbench_core::analysis::DEFAULT_HIGH_QUANTILE)
        .or_exit(Exit::Integrity, "classifying")?;
    let window = args.window.clamp(1, t.len());
    let mean = sliding_mean(&t.deltas, window).expect("window fits");
    let title = args
        .title
        .clone()
        .unwrap_or_else(|| format!("{} / {} / {} ({} samples)", t.query.as_str(), t.scenario, t.clock.as_str(), t.len()));
    let spec = PlotSpec {
        deltas: &t.deltas,
        classification: &classes,
        mean: &mean,
        window,
        downsample: Some(args.downsample),
        unit: t.unit(),
        title: &title,
    };
    render_timeseries(&spec, &args.output).or_exit(Exit::Environment, "writing plot")?;
    if let Some(p) = &args.points_csv {
        let f = fs::File::create(p).or_exit(Exit::Environment, "creating points CSV")?;
        write_points_csv(&t.deltas, &classes, f).or_exit(Exit::Environment, "writing points CSV")?;
    }
    let _ = writeln!(
        out,
        "time series: {} points ({} low, {} high extremes) -> {}",
        t.len(),
        classes.low,
        classes.high,
        args.output.display()
    );
    Ok(())
}
