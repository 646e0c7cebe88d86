//! Isolation scenarios: CPU shielding via a cgroup-v1 cpuset partition, IRQ
//! affinity steering, pinning, and SCHED_FIFO for the measurement thread.
//!
//! Each feature is applied as a unit. Its undo writes are kept on a private
//! stack while it runs; if any mandatory step fails the stack is unwound on
//! the spot and the feature is reported as degraded, so no feature is left
//! half-configured. Successful features append their undo writes to the
//! scenario's rollback plan, which teardown replays in reverse.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, ErrorKind};
use std::path::{Path, PathBuf};

use quietbench_core::ScenarioLabel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Os, OsWrite, SchedParams, CGROUP2_CONTROLLERS, CPUSET_ROOT, IRQ_ROOT};
use crate::cpulist::CpuList;

pub const DEFAULT_FIFO_PRIORITY: i32 = 80;
pub const SHIELD_SET: &str = "quietbench-shield";
pub const SYSTEM_SET: &str = "quietbench-system";

#[derive(Debug, Error)]
pub enum IsolateError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("cannot inspect system: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: ScenarioLabel,
    pub target_cpu: usize,
    pub fifo: bool,
    pub fifo_priority: i32,
    pub shield: bool,
    pub redirect_irqs: bool,
}

impl ScenarioSpec {
    pub fn from_label(label: ScenarioLabel, target_cpu: usize) -> Self {
        ScenarioSpec {
            label,
            target_cpu,
            fifo: label.fifo(),
            fifo_priority: DEFAULT_FIFO_PRIORITY,
            shield: label.shield(),
            redirect_irqs: label.shield(),
        }
    }

    pub fn with_priority(mut self, p: i32) -> Self {
        self.fifo_priority = p;
        self
    }

    pub fn validate(&self) -> Result<(), IsolateError> {
        if !(1..=98).contains(&self.fifo_priority) {
            return Err(IsolateError::InvalidSpec(format!(
                "FIFO priority {} outside 1..=98",
                self.fifo_priority
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    Shield,
    IrqRedirect,
    Pin,
    Fifo,
}

impl Feature {
    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Shield => "shield",
            Feature::IrqRedirect => "irq-redirect",
            Feature::Pin => "pin",
            Feature::Fifo => "fifo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum FeatureStatus {
    Applied { detail: String },
    Degraded { reason: String, hint: String },
    Skipped { reason: String },
}

impl FeatureStatus {
    pub fn is_applied(&self) -> bool {
        matches!(self, FeatureStatus::Applied { .. })
    }

    pub fn short(&self) -> &'static str {
        match self {
            FeatureStatus::Applied { .. } => "applied",
            FeatureStatus::Degraded { .. } => "degraded",
            FeatureStatus::Skipped { .. } => "skipped",
        }
    }
}

impl fmt::Display for FeatureStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureStatus::Applied { detail } => write!(f, "applied ({detail})"),
            FeatureStatus::Degraded { reason, hint } => write!(f, "DEGRADED: {reason}; hint: {hint}"),
            FeatureStatus::Skipped { reason } => write!(f, "skipped: {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqNote {
    pub irq: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppliedScenario {
    pub spec: ScenarioSpec,
    pub tid: u32,
    pub achieved: BTreeMap<Feature, FeatureStatus>,
    pub irqs_moved: Vec<u32>,
    pub irqs_immovable: Vec<IrqNote>,
    pub tasks_migrated: usize,
    pub tasks_immovable: usize,
    /// Undo writes; teardown performs them last to first.
    pub rollback: Vec<OsWrite>,
    pub torn_down: bool,
}

impl AppliedScenario {
    pub fn status(&self, f: Feature) -> &FeatureStatus {
        &self.achieved[&f]
    }

    /// Flat key/value facts for trace metadata.
    pub fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("target_cpu".into(), self.spec.target_cpu.to_string());
        m.insert("fifo_priority".into(), self.spec.fifo_priority.to_string());
        for (f, s) in &self.achieved {
            m.insert(format!("isolate.{}", f.as_str()), s.short().to_string());
        }
        m
    }

    pub fn summary(&self) -> String {
        let mut s = format!("scenario {} on cpu {}\n", self.spec.label, self.spec.target_cpu);
        for (f, st) in &self.achieved {
            s.push_str(&format!("  {:<13} {st}\n", f.as_str()));
        }
        s
    }
}

/// Undo stack for one feature.
struct Tx<'a> {
    os: &'a mut dyn Os,
    undo: Vec<OsWrite>,
}

impl<'a> Tx<'a> {
    fn new(os: &'a mut dyn Os) -> Self {
        Tx { os, undo: Vec::new() }
    }

    fn run(&mut self, w: OsWrite, undo: Option<OsWrite>) -> io::Result<()> {
        self.os.perform(&w)?;
        self.undo.extend(undo);
        Ok(())
    }

    fn abort(self) {
        for w in self.undo.iter().rev() {
            if let Err(e) = self.os.perform(w) {
                log::warn!("rollback of `{w}` failed: {e}");
            }
        }
    }
}

fn privilege_hint(e: &io::Error, what: &str) -> String {
    if e.kind() == ErrorKind::PermissionDenied {
        format!("run as root ({what})")
    } else {
        "check dmesg and the kernel configuration".to_string()
    }
}

fn degraded(reason: impl Into<String>, hint: impl Into<String>) -> FeatureStatus {
    FeatureStatus::Degraded { reason: reason.into(), hint: hint.into() }
}

fn skipped(reason: impl Into<String>) -> FeatureStatus {
    FeatureStatus::Skipped { reason: reason.into() }
}

fn write(path: PathBuf, value: impl Into<String>) -> OsWrite {
    OsWrite::WriteFile { path, value: value.into() }
}

fn trimmed(os: &dyn Os, p: &Path) -> io::Result<String> {
    Ok(os.read_file(p)?.trim().to_string())
}

/// Applies `spec` to thread `tid`, in the order shield, IRQs, pinning, policy.
pub fn apply_scenario(os: &mut dyn Os, spec: &ScenarioSpec, tid: u32) -> Result<AppliedScenario, IsolateError> {
    spec.validate()?;
    let online = os.online_cpus()?;
    if !online.contains(spec.target_cpu) {
        return Err(IsolateError::InvalidSpec(format!(
            "target cpu {} is not online (online: {online})",
            spec.target_cpu
        )));
    }
    let mut applied = AppliedScenario {
        spec: spec.clone(),
        tid,
        achieved: BTreeMap::new(),
        irqs_moved: Vec::new(),
        irqs_immovable: Vec::new(),
        tasks_migrated: 0,
        tasks_immovable: 0,
        rollback: Vec::new(),
        torn_down: false,
    };

    let st = if spec.shield { shield(os, spec, tid, &online, &mut applied) } else { skipped("not requested by scenario") };
    applied.achieved.insert(Feature::Shield, st);
    let st = if spec.redirect_irqs { redirect_irqs(os, spec, &online, &mut applied) } else { skipped("not requested by scenario") };
    applied.achieved.insert(Feature::IrqRedirect, st);
    let st = pin(os, spec, tid, &mut applied);
    applied.achieved.insert(Feature::Pin, st);
    let st = policy(os, spec, tid, &mut applied);
    applied.achieved.insert(Feature::Fifo, st);

    for (f, s) in &applied.achieved {
        if let FeatureStatus::Degraded { .. } = s {
            log::warn!("{}: {s}", f.as_str());
        }
    }
    Ok(applied)
}

fn shield(os: &mut dyn Os, spec: &ScenarioSpec, tid: u32, online: &CpuList, out: &mut AppliedScenario) -> FeatureStatus {
    let root = Path::new(CPUSET_ROOT);
    if !os.exists(&root.join("cpuset.cpus")) {
        if os.exists(Path::new(CGROUP2_CONTROLLERS)) {
            return skipped(
                "only a cgroup v2 hierarchy is mounted; thread-level cpuset shielding needs the v1 cpuset controller \
                 (boot with isolcpus= as an alternative)",
            );
        }
        return skipped(format!("no cpuset controller mounted at {CPUSET_ROOT}"));
    }
    let rest = online.without(spec.target_cpu);
    if rest.is_empty() {
        return degraded("only one CPU is online, nothing left to run other tasks on", "use a host with at least two CPUs");
    }
    let shield_dir = root.join(SHIELD_SET);
    let system_dir = root.join(SYSTEM_SET);
    if os.exists(&shield_dir) || os.exists(&system_dir) {
        return degraded(
            format!("leftover cpusets {SHIELD_SET}/{SYSTEM_SET} from an earlier run"),
            "move their tasks back to the root cpuset and rmdir them",
        );
    }
    let mems = match trimmed(os, &root.join("cpuset.mems")) {
        Ok(m) => m,
        Err(e) => return degraded(format!("cannot read root cpuset.mems: {e}"), privilege_hint(&e, "read cpusets")),
    };
    let tasks: Vec<u32> = match os.read_file(&root.join("tasks")) {
        Ok(s) => s.split_whitespace().filter_map(|t| t.parse().ok()).collect(),
        Err(e) => return degraded(format!("cannot read root tasks: {e}"), privilege_hint(&e, "read cpusets")),
    };
    let mut affinities = BTreeMap::new();
    for &t in &tasks {
        if let Ok(a) = os.affinity(t) {
            affinities.insert(t, a);
        }
    }

    let mut tx = Tx::new(os);
    let setup = (|| -> io::Result<()> {
        tx.run(OsWrite::MakeDir { path: system_dir.clone() }, Some(OsWrite::RemoveDir { path: system_dir.clone() }))?;
        tx.run(write(system_dir.join("cpuset.cpus"), rest.to_string()), None)?;
        tx.run(write(system_dir.join("cpuset.mems"), mems.clone()), None)?;
        tx.run(OsWrite::MakeDir { path: shield_dir.clone() }, Some(OsWrite::RemoveDir { path: shield_dir.clone() }))?;
        tx.run(write(shield_dir.join("cpuset.cpus"), spec.target_cpu.to_string()), None)?;
        tx.run(write(shield_dir.join("cpuset.mems"), mems.clone()), None)?;
        Ok(())
    })();
    if let Err(e) = setup {
        let hint = privilege_hint(&e, "cpuset management needs CAP_SYS_ADMIN");
        tx.abort();
        return degraded(format!("creating cpusets failed: {e}"), hint);
    }

    let mut migrated = 0;
    let mut immovable = 0;
    for &t in tasks.iter().filter(|&&t| t != tid) {
        let mv = write(system_dir.join("tasks"), t.to_string());
        match tx.os.perform(&mv) {
            Ok(()) => {
                migrated += 1;
                // attaching resets affinity to the cpuset's cpus; put narrower masks back
                if let Some(orig) = affinities.get(&t) {
                    tx.undo.push(OsWrite::SetAffinity { tid: t, cpus: orig.clone() });
                    let narrowed: CpuList = orig.iter().filter(|&c| rest.contains(c)).collect();
                    if !narrowed.is_empty() && narrowed != rest {
                        let _ = tx.os.perform(&OsWrite::SetAffinity { tid: t, cpus: narrowed });
                    }
                }
                tx.undo.push(write(root.join("tasks"), t.to_string()));
            }
            Err(e) if e.kind() == ErrorKind::PermissionDenied => {
                let hint = privilege_hint(&e, "moving tasks needs CAP_SYS_ADMIN");
                tx.abort();
                return degraded(format!("moving task {t} failed: {e}"), hint);
            }
            // kernel threads and exited tasks
            Err(_) => immovable += 1,
        }
    }

    if let Some(orig) = affinities.get(&tid) {
        tx.undo.push(OsWrite::SetAffinity { tid, cpus: orig.clone() });
    }
    if let Err(e) = tx.run(write(shield_dir.join("tasks"), tid.to_string()), Some(write(root.join("tasks"), tid.to_string()))) {
        let hint = privilege_hint(&e, "moving tasks needs CAP_SYS_ADMIN");
        tx.abort();
        return degraded(format!("moving measurement thread into the shield failed: {e}"), hint);
    }

    let balance = root.join("cpuset.sched_load_balance");
    let mut note = String::new();
    match trimmed(&*tx.os, &balance) {
        Ok(old) if old != "0" => {
            if tx.run(write(balance.clone(), "0"), Some(write(balance, old))).is_err() {
                note = "; root load balancing left on".into();
            }
        }
        Ok(_) => {}
        Err(_) => note = "; root load balancing not inspectable".into(),
    }

    out.tasks_migrated = migrated;
    out.tasks_immovable = immovable;
    out.rollback.append(&mut tx.undo);
    FeatureStatus::Applied {
        detail: format!(
            "cpu {} reserved, others on {rest}; {migrated} tasks moved, {immovable} immovable{note}",
            spec.target_cpu
        ),
    }
}

fn redirect_irqs(os: &mut dyn Os, spec: &ScenarioSpec, online: &CpuList, out: &mut AppliedScenario) -> FeatureStatus {
    let root = Path::new(IRQ_ROOT);
    let mut irqs: Vec<u32> = match os.list_dir(root) {
        Ok(names) => names.iter().filter_map(|n| n.parse().ok()).collect(),
        Err(e) => return skipped(format!("{IRQ_ROOT} not readable: {e}")),
    };
    irqs.sort_unstable();
    let rest = online.without(spec.target_cpu);
    if rest.is_empty() {
        return degraded("only one CPU is online, interrupts cannot go elsewhere", "use a host with at least two CPUs");
    }
    let mut tx = Tx::new(os);
    let mut moved = Vec::new();
    let mut immovable = Vec::new();
    for irq in irqs {
        let path = root.join(irq.to_string()).join("smp_affinity_list");
        let Ok(old) = trimmed(tx.os, &path) else { continue };
        let Ok(cur) = old.parse::<CpuList>() else { continue };
        if !cur.contains(spec.target_cpu) {
            continue;
        }
        let mut new: CpuList = cur.iter().filter(|&c| c != spec.target_cpu && online.contains(c)).collect();
        if new.is_empty() {
            new = rest.clone();
        }
        match tx.run(write(path.clone(), new.to_string()), Some(write(path, old))) {
            Ok(()) => moved.push(irq),
            Err(e) if e.kind() == ErrorKind::PermissionDenied => {
                let hint = privilege_hint(&e, "IRQ affinity needs root");
                tx.abort();
                return degraded(format!("writing affinity of IRQ {irq} failed: {e}"), hint);
            }
            Err(e) => immovable.push(IrqNote { irq, reason: e.to_string() }),
        }
    }
    let detail = format!("{} moved off cpu {}, {} immovable", moved.len(), spec.target_cpu, immovable.len());
    out.irqs_moved = moved;
    out.irqs_immovable = immovable;
    out.rollback.append(&mut tx.undo);
    FeatureStatus::Applied { detail }
}

fn pin(os: &mut dyn Os, spec: &ScenarioSpec, tid: u32, out: &mut AppliedScenario) -> FeatureStatus {
    let orig = match os.affinity(tid) {
        Ok(a) => a,
        Err(e) => return degraded(format!("cannot read affinity: {e}"), privilege_hint(&e, "affinity")),
    };
    let want = CpuList::single(spec.target_cpu);
    if let Err(e) = os.perform(&OsWrite::SetAffinity { tid, cpus: want }) {
        return degraded(
            format!("pinning to cpu {} failed: {e}", spec.target_cpu),
            "the thread's cpuset or container may exclude that CPU",
        );
    }
    out.rollback.push(OsWrite::SetAffinity { tid, cpus: orig });
    FeatureStatus::Applied { detail: format!("thread {tid} on cpu {}", spec.target_cpu) }
}

fn policy(os: &mut dyn Os, spec: &ScenarioSpec, tid: u32, out: &mut AppliedScenario) -> FeatureStatus {
    let orig = match os.scheduler(tid) {
        Ok(p) => p,
        Err(e) => return degraded(format!("cannot read scheduling policy: {e}"), privilege_hint(&e, "policy")),
    };
    if spec.fifo {
        let want = SchedParams::fifo(spec.fifo_priority);
        return match os.perform(&OsWrite::SetScheduler { tid, params: want }) {
            Ok(()) => {
                out.rollback.push(OsWrite::SetScheduler { tid, params: orig });
                FeatureStatus::Applied { detail: format!("SCHED_FIFO priority {}", spec.fifo_priority) }
            }
            Err(e) => degraded(
                format!("SCHED_FIFO failed: {e}"),
                if e.kind() == ErrorKind::PermissionDenied {
                    "run as root, grant CAP_SYS_NICE, or raise RLIMIT_RTPRIO".to_string()
                } else {
                    privilege_hint(&e, "")
                },
            ),
        };
    }
    // without FIFO the measurement must not outrank the tenants
    if orig.policy.is_realtime() {
        return match os.perform(&OsWrite::SetScheduler { tid, params: SchedParams::OTHER }) {
            Ok(()) => {
                out.rollback.push(OsWrite::SetScheduler { tid, params: orig });
                FeatureStatus::Applied { detail: format!("reset {orig} to SCHED_OTHER") }
            }
            Err(e) => degraded(format!("could not drop real-time policy {orig}: {e}"), "start the tool without chrt"),
        };
    }
    skipped("not requested by scenario")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Differences between live state and what was applied.
    pub diffs: Vec<String>,
    pub warnings: Vec<String>,
}

impl VerificationReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Reads live state and compares it with the applied features.
pub fn verify_scenario(os: &dyn Os, applied: &AppliedScenario) -> VerificationReport {
    let mut r = VerificationReport::default();
    let spec = &applied.spec;
    let tid = applied.tid;
    let target = spec.target_cpu;
    if applied.torn_down {
        r.diffs.push("scenario has been torn down".into());
        return r;
    }

    if applied.status(Feature::Pin).is_applied() {
        match os.affinity(tid) {
            Ok(a) if a == CpuList::single(target) => {}
            Ok(a) => r.diffs.push(format!("affinity is [{a}], expected [{target}]")),
            Err(e) => r.diffs.push(format!("affinity unreadable: {e}")),
        }
    }
    match os.scheduler(tid) {
        Ok(p) if spec.fifo && applied.status(Feature::Fifo).is_applied() => {
            if p != SchedParams::fifo(spec.fifo_priority) {
                r.diffs.push(format!("policy is {p}, expected fifo/{}", spec.fifo_priority));
            }
        }
        Ok(p) if !spec.fifo && p.policy.is_realtime() => {
            r.diffs.push(format!("policy is {p} although the scenario has no FIFO"));
        }
        Ok(_) => {}
        Err(e) => r.diffs.push(format!("policy unreadable: {e}")),
    }
    if applied.status(Feature::Shield).is_applied() {
        let root = Path::new(CPUSET_ROOT);
        match os.task_cpuset(tid) {
            Ok(c) if c == format!("/{SHIELD_SET}") => {}
            Ok(c) => r.diffs.push(format!("thread is in cpuset {c}, expected /{SHIELD_SET}")),
            Err(e) => r.diffs.push(format!("cpuset membership unreadable: {e}")),
        }
        let cpus = |dir: &str| -> Option<CpuList> { trimmed(os, &root.join(dir).join("cpuset.cpus")).ok()?.parse().ok() };
        if cpus(SHIELD_SET) != Some(CpuList::single(target)) {
            r.diffs.push(format!("{SHIELD_SET} does not hold exactly cpu {target}"));
        }
        match cpus(SYSTEM_SET) {
            Some(c) if !c.contains(target) => {}
            _ => r.diffs.push(format!("cpu {target} is still available to {SYSTEM_SET}")),
        }
    }
    if applied.status(Feature::IrqRedirect).is_applied() {
        for irq in &applied.irqs_moved {
            let p = Path::new(IRQ_ROOT).join(irq.to_string()).join("smp_affinity_list");
            match trimmed(os, &p).ok().and_then(|s| s.parse::<CpuList>().ok()) {
                Some(c) if !c.contains(target) => {}
                Some(c) => r.diffs.push(format!("IRQ {irq} affinity [{c}] includes cpu {target} again")),
                None => r.diffs.push(format!("IRQ {irq} affinity unreadable")),
            }
        }
    }

    r.warnings = host_warnings(os, target, spec.fifo);
    r
}

/// Machine-level conditions the tool deliberately leaves alone.
pub fn host_warnings(os: &dyn Os, target: usize, fifo: bool) -> Vec<String> {
    let mut w = Vec::new();
    let cpu = PathBuf::from(format!("/sys/devices/system/cpu/cpu{target}"));
    if let Ok(s) = trimmed(os, &cpu.join("topology/thread_siblings_list")) {
        if let Ok(sib) = s.parse::<CpuList>() {
            let online = os.online_cpus().unwrap_or_default();
            let others: CpuList = sib.iter().filter(|&c| c != target && online.contains(c)).collect();
            if !others.is_empty() {
                w.push(format!("SMT siblings [{others}] of cpu {target} are online"));
            }
        }
    }
    if let Ok(g) = trimmed(os, &cpu.join("cpufreq/scaling_governor")) {
        if g != "performance" {
            w.push(format!("cpu {target} frequency governor is `{g}`, not `performance`"));
        }
    }
    if trimmed(os, Path::new("/sys/devices/system/cpu/cpufreq/boost")).is_ok_and(|b| b == "1") {
        w.push("frequency boost is enabled".into());
    }
    if trimmed(os, Path::new("/sys/devices/system/cpu/intel_pstate/no_turbo")).is_ok_and(|b| b == "0") {
        w.push("turbo boost is enabled".into());
    }
    if fifo {
        if let Ok(rt) = trimmed(os, Path::new("/proc/sys/kernel/sched_rt_runtime_us")) {
            if rt != "-1" {
                w.push(format!("real-time throttling active (sched_rt_runtime_us = {rt})"));
            }
        }
    }
    w
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TeardownReport {
    pub undone: usize,
    pub failures: Vec<String>,
}

/// Replays the rollback plan. Never stops half-way; a second call does nothing.
pub fn teardown(os: &mut dyn Os, applied: &mut AppliedScenario) -> TeardownReport {
    let mut report = TeardownReport::default();
    while let Some(w) = applied.rollback.pop() {
        match os.perform(&w) {
            Ok(()) => report.undone += 1,
            Err(e) => report.failures.push(format!("{w}: {e}")),
        }
    }
    applied.torn_down = true;
    for f in &report.failures {
        log::warn!("teardown: {f}");
    }
    report
}

/// The OS state the scenarios touch, for before/after comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsSnapshot {
    pub threads: BTreeMap<u32, ThreadState>,
    pub cpuset_children: Vec<String>,
    pub root_load_balance: Option<String>,
    pub irq_affinity: BTreeMap<u32, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadState {
    pub affinity: Option<CpuList>,
    pub sched: Option<SchedParams>,
    pub cpuset: Option<String>,
}

impl OsSnapshot {
    pub fn capture(os: &dyn Os, tids: &[u32]) -> Self {
        let root = Path::new(CPUSET_ROOT);
        let threads = tids
            .iter()
            .map(|&t| {
                (
                    t,
                    ThreadState {
                        affinity: os.affinity(t).ok(),
                        sched: os.scheduler(t).ok(),
                        cpuset: os.task_cpuset(t).ok(),
                    },
                )
            })
            .collect();
        let cpuset_children = os
            .list_dir(root)
            .map(|names| names.into_iter().filter(|n| os.exists(&root.join(n).join("tasks"))).collect())
            .unwrap_or_default();
        let mut irq_affinity = BTreeMap::new();
        for n in os.list_dir(Path::new(IRQ_ROOT)).unwrap_or_default() {
            if let Ok(irq) = n.parse::<u32>() {
                if let Ok(a) = trimmed(os, &Path::new(IRQ_ROOT).join(&n).join("smp_affinity_list")) {
                    irq_affinity.insert(irq, a);
                }
            }
        }
        OsSnapshot {
            threads,
            cpuset_children,
            root_load_balance: trimmed(os, &root.join("cpuset.sched_load_balance")).ok(),
            irq_affinity,
        }
    }

    pub fn diff(&self, other: &OsSnapshot) -> Vec<String> {
        let mut d = Vec::new();
        for (t, a) in &self.threads {
            match other.threads.get(t) {
                Some(b) if a == b => {}
                Some(b) => d.push(format!("thread {t}: {a:?} -> {b:?}")),
                None => d.push(format!("thread {t} missing")),
            }
        }
        if self.cpuset_children != other.cpuset_children {
            d.push(format!("cpusets {:?} -> {:?}", self.cpuset_children, other.cpuset_children));
        }
        if self.root_load_balance != other.root_load_balance {
            d.push(format!(
                "root sched_load_balance {:?} -> {:?}",
                self.root_load_balance, other.root_load_balance
            ));
        }
        for (irq, a) in &self.irq_affinity {
            match other.irq_affinity.get(irq) {
                Some(b) if a == b => {}
                b => d.push(format!("IRQ {irq} affinity {a} -> {b:?}")),
            }
        }
        d
    }
}
