//! The six stress kernels. Each `step` does a short burst of work and
//! returns the number of operations completed in it.

use std::fs::{self, File, OpenOptions};
use std::hint::black_box;
use std::io::{self, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::PathBuf;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use memmap2::MmapMut;
use quietbench_core::WorkloadKind;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use crate::load::LoadParams;

pub(crate) enum Workload {
    Bsearch { sorted: Vec<u32> },
    Matmul { n: usize, a: Vec<f64>, b: Vec<f64>, c: Vec<f64> },
    Compress { block: Vec<u8>, scratch: Vec<u8> },
    Memthrash { arena: Vec<u64>, state: u64 },
    Fileio(FileIo),
    Timer(Timer),
}

pub(crate) enum InitError {
    /// The workload cannot run here; not a failure of the tool.
    Skip(String),
    Fail(String),
}

impl Workload {
    pub(crate) fn init(kind: WorkloadKind, p: &LoadParams, cpu: usize, rng: &mut ChaCha8Rng) -> Result<Self, InitError> {
        Ok(match kind {
            WorkloadKind::Bsearch => {
                let mut sorted: Vec<u32> = (0..p.bsearch_len).map(|_| rng.gen()).collect();
                sorted.sort_unstable();
                Workload::Bsearch { sorted }
            }
            WorkloadKind::Matmul => {
                let n = p.matmul_n;
                let mut fill = || (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
                Workload::Matmul { n, a: fill(), b: fill(), c: vec![0.0; n * n] }
            }
            WorkloadKind::Compress => {
                let mut block = vec![0u8; p.compress_block];
                rng.fill_bytes(&mut block);
                Workload::Compress { scratch: Vec::with_capacity(block.len() + block.len() / 8 + 64), block }
            }
            WorkloadKind::Memthrash => {
                let words = (p.thrash_bytes / 8).max(1);
                Workload::Memthrash { arena: vec![1u64; words], state: rng.gen::<u64>() | 1 }
            }
            WorkloadKind::Fileio => Workload::Fileio(FileIo::open(p, cpu)?),
            WorkloadKind::HighfreqTimer => Workload::Timer(Timer::new(p.timer_period_ns).map_err(|e| InitError::Fail(format!("timerfd: {e}")))?),
        })
    }

    pub(crate) fn step(&mut self, rng: &mut ChaCha8Rng) -> Result<u64, String> {
        match self {
            Workload::Bsearch { sorted } => {
                let mut hits = 0u64;
                for _ in 0..1024 {
                    let key: u32 = rng.gen();
                    hits += sorted.binary_search(&key).is_ok() as u64;
                }
                black_box(hits);
                Ok(1024)
            }
            Workload::Matmul { n, a, b, c } => {
                let n = *n;
                c.fill(0.0);
                for i in 0..n {
                    for k in 0..n {
                        let aik = a[i * n + k];
                        let (row, brow) = (&mut c[i * n..(i + 1) * n], &b[k * n..(k + 1) * n]);
                        for (cij, bkj) in row.iter_mut().zip(brow) {
                            *cij += aik * bkj;
                        }
                    }
                }
                black_box(&c);
                Ok(1)
            }
            Workload::Compress { block, scratch } => {
                scratch.clear();
                let mut enc = DeflateEncoder::new(std::mem::take(scratch), Compression::fast());
                enc.write_all(block).map_err(|e| e.to_string())?;
                *scratch = enc.finish().map_err(|e| e.to_string())?;
                let mut out = Vec::with_capacity(block.len());
                DeflateDecoder::new(&scratch[..]).read_to_end(&mut out).map_err(|e| e.to_string())?;
                if out.len() != block.len() {
                    return Err("decompressed size mismatch".into());
                }
                Ok(1)
            }
            Workload::Memthrash { arena, state } => {
                let len = arena.len() as u64;
                for _ in 0..4096 {
                    // xorshift; cheaper than the seeded rng and still spreads accesses
                    *state ^= *state << 13;
                    *state ^= *state >> 7;
                    *state ^= *state << 17;
                    let i = (*state % len) as usize;
                    arena[i] = arena[i].wrapping_mul(31).wrapping_add(*state);
                }
                Ok(4096)
            }
            Workload::Fileio(f) => f.step(rng).map_err(|e| e.to_string()),
            Workload::Timer(t) => t.step().map_err(|e| e.to_string()),
        }
    }

    pub(crate) fn begin_slice(&mut self) -> Result<(), String> {
        match self {
            Workload::Timer(t) => t.arm(true).map_err(|e| e.to_string()),
            _ => Ok(()),
        }
    }

    pub(crate) fn end_slice(&mut self) {
        if let Workload::Timer(t) = self {
            let _ = t.arm(false);
        }
    }

    pub(crate) fn timer(&self) -> Option<&Timer> {
        match self {
            Workload::Timer(t) => Some(t),
            _ => None,
        }
    }
}

const SEQ_CHUNK: usize = 64 * 1024;
const PAGE: usize = 4096;

pub(crate) struct FileIo {
    path: PathBuf,
    file: File,
    map: MmapMut,
    len: u64,
    cursor: u64,
    seq: Vec<u8>,
    buf: Vec<u8>,
    phase: u8,
}

impl FileIo {
    fn open(p: &LoadParams, cpu: usize) -> Result<Self, InitError> {
        let dir = p.scratch_dir();
        let path = dir.join(format!("quietbench-fileio-{}-{cpu}.dat", std::process::id()));
        let skip = |e: io::Error| InitError::Skip(format!("scratch dir {} not writable: {e}", dir.display()));
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(true).open(&path).map_err(skip)?;
        let len = (p.file_bytes as u64).max(PAGE as u64);
        if let Err(e) = file.set_len(len) {
            let _ = fs::remove_file(&path);
            return Err(skip(e));
        }
        // SAFETY: the file is private to this worker and outlives the map.
        let map = match unsafe { MmapMut::map_mut(&file) } {
            Ok(m) => m,
            Err(e) => {
                let _ = fs::remove_file(&path);
                return Err(InitError::Fail(format!("mmap: {e}")));
            }
        };
        Ok(FileIo { path, file, map, len, cursor: 0, seq: vec![0x5a; SEQ_CHUNK], buf: vec![0; PAGE], phase: 0 })
    }

    /// Rotates through a sequential write, a random read and a mapped
    /// read-modify-write; one operation each.
    fn step(&mut self, rng: &mut ChaCha8Rng) -> io::Result<u64> {
        self.phase = (self.phase + 1) % 3;
        match self.phase {
            0 => {
                let n = (SEQ_CHUNK as u64).min(self.len - self.cursor) as usize;
                self.file.write_all_at(&self.seq[..n], self.cursor)?;
                self.cursor = (self.cursor + n as u64) % self.len;
            }
            1 => {
                let pages = self.len / PAGE as u64;
                let off = rng.gen_range(0..pages) * PAGE as u64;
                self.file.read_exact_at(&mut self.buf, off)?;
                black_box(&self.buf);
            }
            _ => {
                let i = rng.gen_range(0..self.map.len());
                self.map[i] = self.map[i].wrapping_add(1);
            }
        }
        Ok(1)
    }
}

impl Drop for FileIo {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub(crate) struct Timer {
    fd: libc::c_int,
    period_ns: u64,
    armed: bool,
    pub(crate) delivered: u64,
    pub(crate) overruns: u64,
    pub(crate) armed_ns: u64,
    armed_at: Option<std::time::Instant>,
}

impl Timer {
    fn new(period_ns: u64) -> io::Result<Self> {
        // SAFETY: plain syscall, fd ownership handled by Drop.
        let fd = unsafe { libc::timerfd_create(libc::CLOCK_MONOTONIC, libc::TFD_CLOEXEC) };
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        Ok(Timer { fd, period_ns: period_ns.max(1), armed: false, delivered: 0, overruns: 0, armed_ns: 0, armed_at: None })
    }

    pub(crate) fn period_ns(&self) -> u64 {
        self.period_ns
    }

    fn arm(&mut self, on: bool) -> io::Result<()> {
        if !on && self.armed {
            // settime resets the expiration count, so collect what is pending first
            let mut pfd = libc::pollfd { fd: self.fd, events: libc::POLLIN, revents: 0 };
            let mut exp = 0u64;
            // SAFETY: poll on one valid pollfd; read of 8 bytes into a u64 only when readable.
            let ready = unsafe { libc::poll(&mut pfd, 1, 0) } > 0;
            if ready && unsafe { libc::read(self.fd, &mut exp as *mut u64 as *mut libc::c_void, 8) } == 8 {
                self.overruns += exp;
            }
            if let Some(t) = self.armed_at.take() {
                self.armed_ns += t.elapsed().as_nanos() as u64;
            }
        }
        let ts = |ns: u64| libc::timespec {
            tv_sec: (ns / 1_000_000_000) as libc::time_t,
            tv_nsec: (ns % 1_000_000_000) as libc::c_long,
        };
        let period = if on { self.period_ns } else { 0 };
        let spec = libc::itimerspec { it_interval: ts(period), it_value: ts(period) };
        // SAFETY: fd is ours; spec is a valid itimerspec.
        if unsafe { libc::timerfd_settime(self.fd, 0, &spec, std::ptr::null_mut()) } != 0 {
            return Err(io::Error::last_os_error());
        }
        if on {
            self.armed_at = Some(std::time::Instant::now());
        }
        self.armed = on;
        Ok(())
    }

    fn step(&mut self) -> io::Result<u64> {
        if !self.armed {
            return Ok(0);
        }
        let mut reads = 0;
        for _ in 0..256 {
            let mut exp = 0u64;
            // SAFETY: reading 8 bytes into a u64 from our timerfd.
            let n = unsafe { libc::read(self.fd, &mut exp as *mut u64 as *mut libc::c_void, 8) };
            if n != 8 {
                return Err(io::Error::last_os_error());
            }
            self.delivered += 1;
            self.overruns += exp.saturating_sub(1);
            reads += 1;
        }
        Ok(reads)
    }
}

impl Drop for Timer {
    fn drop(&mut self) {
        // SAFETY: closing our own fd once.
        unsafe { libc::close(self.fd) };
    }
}
