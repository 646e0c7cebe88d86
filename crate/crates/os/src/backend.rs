//! Access to the OS state that scenarios touch.
//!
//! Every mutation goes through [`Os::perform`] as an [`OsWrite`], so a
//! dry run can record writes instead of executing them and tests can run
//! the full apply/teardown logic against [`FakeOs`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cpulist::CpuList;

pub const CPU_ONLINE: &str = "/sys/devices/system/cpu/online";
pub const CPUSET_ROOT: &str = "/sys/fs/cgroup/cpuset";
pub const CGROUP2_CONTROLLERS: &str = "/sys/fs/cgroup/cgroup.controllers";
pub const IRQ_ROOT: &str = "/proc/irq";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedPolicy {
    Other,
    Fifo,
    Rr,
    Batch,
    Idle,
}

impl SchedPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedPolicy::Other => "other",
            SchedPolicy::Fifo => "fifo",
            SchedPolicy::Rr => "rr",
            SchedPolicy::Batch => "batch",
            SchedPolicy::Idle => "idle",
        }
    }

    fn to_raw(self) -> libc::c_int {
        match self {
            SchedPolicy::Other => libc::SCHED_OTHER,
            SchedPolicy::Fifo => libc::SCHED_FIFO,
            SchedPolicy::Rr => libc::SCHED_RR,
            SchedPolicy::Batch => libc::SCHED_BATCH,
            SchedPolicy::Idle => libc::SCHED_IDLE,
        }
    }

    fn from_raw(p: libc::c_int) -> Option<Self> {
        // the kernel may report SCHED_RESET_ON_FORK in the high bit
        match p & !0x4000_0000 {
            libc::SCHED_OTHER => Some(SchedPolicy::Other),
            libc::SCHED_FIFO => Some(SchedPolicy::Fifo),
            libc::SCHED_RR => Some(SchedPolicy::Rr),
            libc::SCHED_BATCH => Some(SchedPolicy::Batch),
            libc::SCHED_IDLE => Some(SchedPolicy::Idle),
            _ => None,
        }
    }

    pub fn is_realtime(self) -> bool {
        matches!(self, SchedPolicy::Fifo | SchedPolicy::Rr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedParams {
    pub policy: SchedPolicy,
    pub priority: i32,
}

impl SchedParams {
    pub const OTHER: SchedParams = SchedParams { policy: SchedPolicy::Other, priority: 0 };

    pub fn fifo(priority: i32) -> Self {
        SchedParams { policy: SchedPolicy::Fifo, priority }
    }
}

impl fmt::Display for SchedParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.policy.as_str(), self.priority)
    }
}

/// One OS mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum OsWrite {
    SetAffinity { tid: u32, cpus: CpuList },
    SetScheduler { tid: u32, params: SchedParams },
    WriteFile { path: PathBuf, value: String },
    MakeDir { path: PathBuf },
    RemoveDir { path: PathBuf },
}

impl fmt::Display for OsWrite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OsWrite::SetAffinity { tid, cpus } => write!(f, "sched_setaffinity({tid}, [{cpus}])"),
            OsWrite::SetScheduler { tid, params } => write!(f, "sched_setscheduler({tid}, {params})"),
            OsWrite::WriteFile { path, value } => write!(f, "echo {value:?} > {}", path.display()),
            OsWrite::MakeDir { path } => write!(f, "mkdir {}", path.display()),
            OsWrite::RemoveDir { path } => write!(f, "rmdir {}", path.display()),
        }
    }
}

pub trait Os {
    fn read_file(&self, path: &Path) -> io::Result<String>;
    fn list_dir(&self, path: &Path) -> io::Result<Vec<String>>;
    fn affinity(&self, tid: u32) -> io::Result<CpuList>;
    fn scheduler(&self, tid: u32) -> io::Result<SchedParams>;
    fn perform(&mut self, w: &OsWrite) -> io::Result<()>;

    fn exists(&self, path: &Path) -> bool {
        self.read_file(path).is_ok() || self.list_dir(path).is_ok()
    }

    fn online_cpus(&self) -> io::Result<CpuList> {
        self.read_file(Path::new(CPU_ONLINE))?
            .parse()
            .map_err(|e| io::Error::new(ErrorKind::InvalidData, e))
    }

    /// Cpuset path of a thread relative to the hierarchy root, e.g. `/`.
    fn task_cpuset(&self, tid: u32) -> io::Result<String> {
        Ok(self.read_file(&PathBuf::from(format!("/proc/{tid}/cpuset")))?.trim().to_string())
    }
}

/// Kernel thread id of the calling thread.
pub fn current_tid() -> u32 {
    // SAFETY: gettid has no preconditions.
    unsafe { libc::gettid() as u32 }
}

/// The running system.
#[derive(Debug, Default)]
pub struct LinuxOs;

impl Os for LinuxOs {
    fn read_file(&self, path: &Path) -> io::Result<String> {
        fs::read_to_string(path)
    }

    fn list_dir(&self, path: &Path) -> io::Result<Vec<String>> {
        let mut out = Vec::new();
        for e in fs::read_dir(path)? {
            out.push(e?.file_name().to_string_lossy().into_owned());
        }
        out.sort();
        Ok(out)
    }

    fn affinity(&self, tid: u32) -> io::Result<CpuList> {
        // SAFETY: cpu_set_t is plain data; the kernel writes at most its size.
        unsafe {
            let mut set: libc::cpu_set_t = std::mem::zeroed();
            if libc::sched_getaffinity(tid as libc::pid_t, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
                return Err(io::Error::last_os_error());
            }
            Ok((0..libc::CPU_SETSIZE as usize).filter(|&c| libc::CPU_ISSET(c, &set)).collect())
        }
    }

    fn scheduler(&self, tid: u32) -> io::Result<SchedParams> {
        // SAFETY: plain syscalls on a caller-supplied tid with a valid out pointer.
        unsafe {
            let p = libc::sched_getscheduler(tid as libc::pid_t);
            if p < 0 {
                return Err(io::Error::last_os_error());
            }
            let mut param: libc::sched_param = std::mem::zeroed();
            if libc::sched_getparam(tid as libc::pid_t, &mut param) != 0 {
                return Err(io::Error::last_os_error());
            }
            let policy = SchedPolicy::from_raw(p)
                .ok_or_else(|| io::Error::new(ErrorKind::Unsupported, format!("unknown policy {p}")))?;
            Ok(SchedParams { policy, priority: param.sched_priority })
        }
    }

    fn perform(&mut self, w: &OsWrite) -> io::Result<()> {
        match w {
            OsWrite::SetAffinity { tid, cpus } => {
                // SAFETY: see affinity().
                unsafe {
                    let mut set: libc::cpu_set_t = std::mem::zeroed();
                    for c in cpus.iter() {
                        if c >= libc::CPU_SETSIZE as usize {
                            return Err(io::Error::new(ErrorKind::InvalidInput, format!("cpu {c} out of range")));
                        }
                        libc::CPU_SET(c, &mut set);
                    }
                    if libc::sched_setaffinity(*tid as libc::pid_t, std::mem::size_of::<libc::cpu_set_t>(), &set) != 0 {
                        return Err(io::Error::last_os_error());
                    }
                }
                Ok(())
            }
            OsWrite::SetScheduler { tid, params } => {
                let param = libc::sched_param { sched_priority: params.priority };
                // SAFETY: valid pointer to an initialized sched_param.
                if unsafe { libc::sched_setscheduler(*tid as libc::pid_t, params.policy.to_raw(), &param) } != 0 {
                    return Err(io::Error::last_os_error());
                }
                Ok(())
            }
            OsWrite::WriteFile { path, value } => {
                // pseudo files: no create, no truncate, one write call
                let mut f = fs::OpenOptions::new().write(true).open(path)?;
                f.write_all(value.as_bytes())
            }
            OsWrite::MakeDir { path } => fs::create_dir(path),
            OsWrite::RemoveDir { path } => fs::remove_dir(path),
        }
    }
}

/// Passes reads through and records writes without performing them.
pub struct DryRunOs<'a> {
    inner: &'a dyn Os,
    pub writes: Vec<OsWrite>,
}

impl<'a> DryRunOs<'a> {
    pub fn new(inner: &'a dyn Os) -> Self {
        DryRunOs { inner, writes: Vec::new() }
    }
}

impl Os for DryRunOs<'_> {
    fn read_file(&self, path: &Path) -> io::Result<String> {
        self.inner.read_file(path)
    }

    fn list_dir(&self, path: &Path) -> io::Result<Vec<String>> {
        self.inner.list_dir(path)
    }

    fn affinity(&self, tid: u32) -> io::Result<CpuList> {
        self.inner.affinity(tid)
    }

    fn scheduler(&self, tid: u32) -> io::Result<SchedParams> {
        self.inner.scheduler(tid)
    }

    fn perform(&mut self, w: &OsWrite) -> io::Result<()> {
        self.writes.push(w.clone());
        Ok(())
    }

    fn task_cpuset(&self, tid: u32) -> io::Result<String> {
        self.inner.task_cpuset(tid)
    }
}

#[derive(Debug, Clone)]
struct FakeThread {
    affinity: CpuList,
    sched: SchedParams,
    /// Kernel threads refuse cpuset moves.
    kernel: bool,
}

/// In-memory model of a Linux host with a cgroup-v1 cpuset hierarchy,
/// movable and immovable IRQs, and privilege checks.
#[derive(Debug, Clone)]
pub struct FakeOs {
    files: BTreeMap<PathBuf, String>,
    dirs: BTreeSet<PathBuf>,
    threads: BTreeMap<u32, FakeThread>,
    immovable_irqs: BTreeSet<u32>,
    pub privileged: bool,
    /// Fail the n-th (0-based) successful-so-far write with EIO.
    pub fail_write_at: Option<usize>,
    pub performed: Vec<OsWrite>,
    attempts: usize,
}

impl FakeOs {
    pub const MEASURE_TID: u32 = 100;

    /// `cpus` online CPUs, one measurement thread, a few user threads, a
    /// kernel thread, and `irqs` interrupts of which the first is immovable.
    pub fn new(cpus: usize, irqs: u32) -> Self {
        assert!(cpus >= 1);
        let all: CpuList = (0..cpus).collect();
        let mut os = FakeOs {
            files: BTreeMap::new(),
            dirs: BTreeSet::new(),
            threads: BTreeMap::new(),
            immovable_irqs: BTreeSet::new(),
            privileged: true,
            fail_write_at: None,
            performed: Vec::new(),
            attempts: 0,
        };
        os.file(CPU_ONLINE, &all.to_string());
        os.dirs.insert(CPUSET_ROOT.into());
        let root = Path::new(CPUSET_ROOT);
        os.file(root.join("cpuset.cpus"), &all.to_string());
        os.file(root.join("cpuset.mems"), "0");
        os.file(root.join("cpuset.sched_load_balance"), "1");
        os.file(root.join("cpuset.cpu_exclusive"), "1");
        for (tid, kernel) in [(2, true), (Self::MEASURE_TID, false), (201, false), (202, false)] {
            os.threads.insert(tid, FakeThread { affinity: all.clone(), sched: SchedParams::OTHER, kernel });
        }
        let tids: Vec<String> = os.threads.keys().map(|t| t.to_string()).collect();
        os.file(root.join("tasks"), &tids.join("\n"));
        os.dirs.insert(IRQ_ROOT.into());
        for irq in 0..irqs {
            let d = Path::new(IRQ_ROOT).join(irq.to_string());
            os.dirs.insert(d.clone());
            os.file(d.join("smp_affinity_list"), &all.to_string());
        }
        if irqs > 0 {
            os.immovable_irqs.insert(0);
        }
        os.file(Path::new(IRQ_ROOT).join("default_smp_affinity"), "f");
        for c in 0..cpus {
            let base = PathBuf::from(format!("/sys/devices/system/cpu/cpu{c}"));
            os.file(base.join("topology/thread_siblings_list"), &c.to_string());
            os.file(base.join("cpufreq/scaling_governor"), "performance");
        }
        os
    }

    fn file(&mut self, path: impl Into<PathBuf>, value: &str) {
        self.files.insert(path.into(), format!("{value}\n"));
    }

    pub fn unprivileged(mut self) -> Self {
        self.privileged = false;
        self
    }

    pub fn set_file(&mut self, path: impl Into<PathBuf>, value: &str) {
        self.file(path, value);
    }

    /// Simulates an operator changing a thread's affinity behind our back.
    pub fn external_set_affinity(&mut self, tid: u32, cpus: CpuList) {
        if let Some(t) = self.threads.get_mut(&tid) {
            t.affinity = cpus;
        }
    }

    pub fn thread_ids(&self) -> Vec<u32> {
        self.threads.keys().copied().collect()
    }

    fn is_cpuset_path(p: &Path) -> bool {
        p.starts_with(CPUSET_ROOT)
    }

    fn cpuset_dirs(&self) -> Vec<PathBuf> {
        self.dirs.iter().filter(|d| Self::is_cpuset_path(d)).cloned().collect()
    }

    fn tasks_of(&self, dir: &Path) -> Vec<u32> {
        self.files
            .get(&dir.join("tasks"))
            .map(|s| s.split_whitespace().filter_map(|t| t.parse().ok()).collect())
            .unwrap_or_default()
    }

    fn set_tasks(&mut self, dir: &Path, tids: &[u32]) {
        let s: Vec<String> = tids.iter().map(|t| t.to_string()).collect();
        self.file(dir.join("tasks"), &s.join("\n"));
    }

    fn cpuset_cpus(&self, dir: &Path) -> CpuList {
        self.files
            .get(&dir.join("cpuset.cpus"))
            .and_then(|s| s.parse().ok())
            .unwrap_or_default()
    }

    fn denied(what: &str) -> io::Error {
        io::Error::new(ErrorKind::PermissionDenied, format!("{what}: operation not permitted"))
    }

    fn apply_write(&mut self, w: &OsWrite) -> io::Result<()> {
        match w {
            OsWrite::SetAffinity { tid, cpus } => {
                let cpuset = self.cpuset_of(*tid).ok_or_else(|| io::Error::from(ErrorKind::NotFound))?;
                let allowed = self.cpuset_cpus(&cpuset);
                if cpus.is_empty() || !cpus.is_subset(&allowed) {
                    return Err(io::Error::from_raw_os_error(libc::EINVAL));
                }
                self.threads.get_mut(tid).expect("checked").affinity = cpus.clone();
                Ok(())
            }
            OsWrite::SetScheduler { tid, params } => {
                if params.policy.is_realtime() && !self.privileged {
                    return Err(Self::denied("sched_setscheduler"));
                }
                if params.policy.is_realtime() && !(1..=99).contains(&params.priority) {
                    return Err(io::Error::from_raw_os_error(libc::EINVAL));
                }
                let t = self.threads.get_mut(tid).ok_or_else(|| io::Error::from(ErrorKind::NotFound))?;
                t.sched = *params;
                Ok(())
            }
            OsWrite::MakeDir { path } => {
                if !self.privileged {
                    return Err(Self::denied("mkdir"));
                }
                if self.dirs.contains(path) {
                    return Err(io::Error::from(ErrorKind::AlreadyExists));
                }
                self.dirs.insert(path.clone());
                if Self::is_cpuset_path(path) {
                    for f in ["cpuset.cpus", "cpuset.mems", "tasks"] {
                        self.file(path.join(f), "");
                    }
                    self.file(path.join("cpuset.cpu_exclusive"), "0");
                }
                Ok(())
            }
            OsWrite::RemoveDir { path } => {
                if !self.privileged {
                    return Err(Self::denied("rmdir"));
                }
                if !self.dirs.contains(path) {
                    return Err(io::Error::from(ErrorKind::NotFound));
                }
                if !self.tasks_of(path).is_empty() {
                    return Err(io::Error::from_raw_os_error(libc::EBUSY));
                }
                self.dirs.remove(path);
                let prefix = path.clone();
                self.files.retain(|p, _| !p.starts_with(&prefix));
                Ok(())
            }
            OsWrite::WriteFile { path, value } => {
                if !self.privileged {
                    return Err(Self::denied("write"));
                }
                if !self.files.contains_key(path) {
                    return Err(io::Error::from(ErrorKind::NotFound));
                }
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
                let dir = path.parent().expect("files live in directories").to_path_buf();
                if Self::is_cpuset_path(path) && name == "tasks" {
                    return self.move_task(&dir, value);
                }
                if path.starts_with(IRQ_ROOT) && name == "smp_affinity_list" {
                    let irq: u32 = dir.file_name().and_then(|n| n.to_str()).and_then(|n| n.parse().ok()).unwrap_or(u32::MAX);
                    if self.immovable_irqs.contains(&irq) {
                        return Err(io::Error::from_raw_os_error(libc::EIO));
                    }
                    let cpus: CpuList = value.parse().map_err(|e| io::Error::new(ErrorKind::InvalidInput, e))?;
                    if cpus.is_empty() {
                        return Err(io::Error::from_raw_os_error(libc::EINVAL));
                    }
                }
                self.file(path.clone(), value.trim());
                Ok(())
            }
        }
    }

    fn move_task(&mut self, dir: &Path, value: &str) -> io::Result<()> {
        let tid: u32 = value.trim().parse().map_err(|_| io::Error::from_raw_os_error(libc::EINVAL))?;
        let thread = self.threads.get(&tid).ok_or_else(|| io::Error::from_raw_os_error(libc::ESRCH))?;
        let target = dir.to_path_buf();
        if thread.kernel && target != Path::new(CPUSET_ROOT) {
            return Err(io::Error::from_raw_os_error(libc::EINVAL));
        }
        let cpus = self.cpuset_cpus(&target);
        if cpus.is_empty() {
            return Err(io::Error::from_raw_os_error(libc::ENOSPC));
        }
        for d in self.cpuset_dirs() {
            let mut t = self.tasks_of(&d);
            t.retain(|&x| x != tid);
            self.set_tasks(&d, &t);
        }
        let mut t = self.tasks_of(&target);
        t.push(tid);
        self.set_tasks(&target, &t);
        self.threads.get_mut(&tid).expect("exists").affinity = cpus;
        Ok(())
    }

    fn cpuset_of(&self, tid: u32) -> Option<PathBuf> {
        self.cpuset_dirs().into_iter().find(|d| self.tasks_of(d).contains(&tid))
    }
}

impl Os for FakeOs {
    fn read_file(&self, path: &Path) -> io::Result<String> {
        self.files.get(path).cloned().ok_or_else(|| io::Error::from(ErrorKind::NotFound))
    }

    fn list_dir(&self, path: &Path) -> io::Result<Vec<String>> {
        if !self.dirs.contains(path) {
            return Err(io::Error::from(ErrorKind::NotFound));
        }
        let mut names: BTreeSet<String> = BTreeSet::new();
        for p in self.files.keys().chain(self.dirs.iter()) {
            if let Ok(rest) = p.strip_prefix(path) {
                if let Some(first) = rest.components().next() {
                    names.insert(first.as_os_str().to_string_lossy().into_owned());
                }
            }
        }
        Ok(names.into_iter().collect())
    }

    fn affinity(&self, tid: u32) -> io::Result<CpuList> {
        self.threads.get(&tid).map(|t| t.affinity.clone()).ok_or_else(|| io::Error::from_raw_os_error(libc::ESRCH))
    }

    fn scheduler(&self, tid: u32) -> io::Result<SchedParams> {
        self.threads.get(&tid).map(|t| t.sched).ok_or_else(|| io::Error::from_raw_os_error(libc::ESRCH))
    }

    fn perform(&mut self, w: &OsWrite) -> io::Result<()> {
        let n = self.attempts;
        self.attempts += 1;
        if self.fail_write_at == Some(n) {
            return Err(io::Error::other("injected write failure"));
        }
        self.apply_write(w)?;
        self.performed.push(w.clone());
        Ok(())
    }

    fn task_cpuset(&self, tid: u32) -> io::Result<String> {
        let dir = self.cpuset_of(tid).ok_or_else(|| io::Error::from_raw_os_error(libc::ESRCH))?;
        let rel = dir.strip_prefix(CPUSET_ROOT).expect("cpuset dir");
        Ok(format!("/{}", rel.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fake_cpuset_moves_and_restricts() {
        let mut os = FakeOs::new(4, 3);
        let shield = Path::new(CPUSET_ROOT).join("s");
        os.perform(&OsWrite::MakeDir { path: shield.clone() }).unwrap();
        let tasks = OsWrite::WriteFile { path: shield.join("tasks"), value: "100".into() };
        assert_eq!(os.perform(&tasks).unwrap_err().raw_os_error(), Some(libc::ENOSPC));
        os.perform(&OsWrite::WriteFile { path: shield.join("cpuset.cpus"), value: "3".into() }).unwrap();
        os.perform(&tasks).unwrap();
        assert_eq!(os.task_cpuset(100).unwrap(), "/s");
        assert_eq!(os.affinity(100).unwrap(), CpuList::single(3));
        let bad = OsWrite::SetAffinity { tid: 100, cpus: CpuList::single(1) };
        assert!(os.perform(&bad).is_err());
        assert!(os.perform(&OsWrite::RemoveDir { path: shield.clone() }).is_err());
        assert!(os.list_dir(Path::new(CPUSET_ROOT)).unwrap().contains(&"s".to_string()));
    }

    #[test]
    fn fake_privileges() {
        let mut os = FakeOs::new(2, 1).unprivileged();
        let e = os.perform(&OsWrite::SetScheduler { tid: 100, params: SchedParams::fifo(80) }).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::PermissionDenied);
        os.perform(&OsWrite::SetAffinity { tid: 100, cpus: CpuList::single(1) }).unwrap();
    }

    #[test]
    fn dry_run_records_only() {
        let os = FakeOs::new(2, 1);
        let mut dry = DryRunOs::new(&os);
        dry.perform(&OsWrite::MakeDir { path: "/sys/fs/cgroup/cpuset/x".into() }).unwrap();
        assert_eq!(dry.writes.len(), 1);
        assert!(!os.exists(Path::new("/sys/fs/cgroup/cpuset/x")));
    }

    #[test]
    fn linux_reads_own_thread() {
        let os = LinuxOs;
        let tid = current_tid();
        assert!(!os.affinity(tid).unwrap().is_empty());
        os.scheduler(tid).unwrap();
        assert!(!os.online_cpus().unwrap().is_empty());
    }
}
