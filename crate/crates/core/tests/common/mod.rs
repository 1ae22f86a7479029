//! Test support shared by the integration tests and the acceptance runner:
//! a reference model of an NVMe namespace written independently of the
//! emulator, a seeded command generator, and executors that drive the
//! library synchronously or through a queue.

#![allow(dead_code)]

use std::cell::RefCell;
use std::collections::BTreeMap;

use crossio::{
    build_flush, build_read, build_write, build_zone_append, build_zone_finish, build_zone_report,
    build_zone_reset, Command, CommandContext, Device, ErrorCode, Queue,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

pub const SUCCESS: u16 = 0x0000;
pub const INVALID_FIELD: u16 = 0x0002;
pub const LBA_OUT_OF_RANGE: u16 = 0x0080;
pub const ZONE_BOUNDARY: u16 = 0x01B8;
pub const ZONE_FULL: u16 = 0x01B9;
pub const ZONE_INVALID_WRITE: u16 = 0x01BC;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Read { slba: u64, n: u32 },
    Write { slba: u64, n: u32, seed: u32 },
    Flush,
    Append { zslba: u64, n: u32, seed: u32 },
    Reset { zslba: u64 },
    Finish { zslba: u64 },
    Report,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub status: u16,
    pub result: u64,
    /// Bytes returned to the host (read data, zone report), empty otherwise.
    pub data: Vec<u8>,
}

/// Coarse status grouping used to compare backends that report the same
/// failure with different specific codes.
pub fn status_class(status: u16) -> &'static str {
    match status {
        0 => "ok",
        0x0080 => "range",
        s if s >> 8 == 1 && (0xB8..=0xBF).contains(&(s & 0xFF)) => "zone",
        s if s >> 8 == 2 => "media",
        _ => "generic",
    }
}

/// Deterministic fill for write payloads.
pub fn pattern(seed: u32, nbytes: usize) -> Vec<u8> {
    let mut x = seed.wrapping_mul(2654435761).wrapping_add(0x9E37_79B9) | 1;
    (0..nbytes)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 17;
            x ^= x << 5;
            x as u8
        })
        .collect()
}

/// A namespace as a flat byte array plus one write pointer per zone.
#[derive(Debug, Clone)]
pub struct Model {
    pub lba: usize,
    pub nsect: u64,
    pub zone_nsect: u64,
    pub data: Vec<u8>,
    pub wp: Vec<u64>,
}

impl Model {
    pub fn conventional(lba: usize, nsect: u64) -> Model {
        Model {
            lba,
            nsect,
            zone_nsect: 0,
            data: vec![0; lba * nsect as usize],
            wp: Vec::new(),
        }
    }

    pub fn zoned(lba: usize, nzones: u64, zone_nsect: u64) -> Model {
        Model {
            lba,
            nsect: nzones * zone_nsect,
            zone_nsect,
            data: vec![0; lba * (nzones * zone_nsect) as usize],
            wp: (0..nzones).map(|z| z * zone_nsect).collect(),
        }
    }

    pub fn is_zoned(&self) -> bool {
        self.zone_nsect > 0
    }

    fn zone_of(&self, lba: u64) -> usize {
        (lba / self.zone_nsect) as usize
    }

    fn zone_end(&self, z: usize) -> u64 {
        (z as u64 + 1) * self.zone_nsect
    }

    /// 0 empty, 1 open, 2 full.
    pub fn zone_state(&self, z: usize) -> u8 {
        let start = z as u64 * self.zone_nsect;
        if self.wp[z] == start {
            0
        } else if self.wp[z] == self.zone_end(z) {
            2
        } else {
            1
        }
    }

    fn bytes(&self, slba: u64, n: u32) -> std::ops::Range<usize> {
        slba as usize * self.lba..(slba as usize + n as usize) * self.lba
    }

    fn done(status: u16) -> Outcome {
        Outcome {
            status,
            result: 0,
            data: Vec::new(),
        }
    }

    pub fn report(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 24 * self.wp.len());
        out.extend_from_slice(&(self.wp.len() as u64).to_le_bytes());
        for z in 0..self.wp.len() {
            let mut desc = [0u8; 24];
            desc[0..8].copy_from_slice(&(z as u64 * self.zone_nsect).to_le_bytes());
            desc[8..16].copy_from_slice(&self.wp[z].to_le_bytes());
            desc[16] = self.zone_state(z);
            out.extend_from_slice(&desc);
        }
        out
    }

    pub fn apply(&mut self, op: &Op) -> Outcome {
        match *op {
            Op::Flush => Self::done(SUCCESS),
            Op::Read { slba, n } => {
                if slba + n as u64 > self.nsect {
                    return Self::done(LBA_OUT_OF_RANGE);
                }
                Outcome {
                    status: SUCCESS,
                    result: 0,
                    data: self.data[self.bytes(slba, n)].to_vec(),
                }
            }
            Op::Write { slba, n, seed } => {
                if slba + n as u64 > self.nsect {
                    return Self::done(LBA_OUT_OF_RANGE);
                }
                if self.is_zoned() {
                    let z = self.zone_of(slba);
                    if self.zone_state(z) == 2 {
                        return Self::done(ZONE_FULL);
                    }
                    if slba != self.wp[z] {
                        return Self::done(ZONE_INVALID_WRITE);
                    }
                    if slba + n as u64 > self.zone_end(z) {
                        return Self::done(ZONE_BOUNDARY);
                    }
                    self.wp[z] += n as u64;
                }
                let range = self.bytes(slba, n);
                self.data[range].copy_from_slice(&pattern(seed, n as usize * self.lba));
                Self::done(SUCCESS)
            }
            Op::Append { zslba, n, seed } => {
                if zslba >= self.nsect {
                    return Self::done(LBA_OUT_OF_RANGE);
                }
                if zslba % self.zone_nsect != 0 {
                    return Self::done(INVALID_FIELD);
                }
                let z = self.zone_of(zslba);
                if self.zone_state(z) == 2 {
                    return Self::done(ZONE_FULL);
                }
                let at = self.wp[z];
                if at + n as u64 > self.zone_end(z) {
                    return Self::done(ZONE_BOUNDARY);
                }
                self.wp[z] += n as u64;
                let range = self.bytes(at, n);
                self.data[range].copy_from_slice(&pattern(seed, n as usize * self.lba));
                Outcome {
                    status: SUCCESS,
                    result: at,
                    data: Vec::new(),
                }
            }
            Op::Reset { zslba } | Op::Finish { zslba } => {
                if zslba >= self.nsect {
                    return Self::done(LBA_OUT_OF_RANGE);
                }
                if zslba % self.zone_nsect != 0 {
                    return Self::done(INVALID_FIELD);
                }
                let z = self.zone_of(zslba);
                if matches!(op, Op::Reset { .. }) {
                    self.wp[z] = zslba;
                    let range = self.bytes(zslba, self.zone_nsect as u32);
                    self.data[range].fill(0);
                } else {
                    self.wp[z] = self.zone_end(z);
                }
                Self::done(SUCCESS)
            }
            Op::Report => Outcome {
                status: SUCCESS,
                result: 0,
                data: self.report(),
            },
        }
    }

    pub fn data_digest(&self) -> [u8; 32] {
        Sha256::digest(&self.data).into()
    }
}

/// The library command for `op` and its transfer size.
pub fn to_command(op: &Op, lba: usize, nzones: u64) -> (Command, usize) {
    match *op {
        Op::Read { slba, n } => (build_read(slba, n).unwrap(), n as usize * lba),
        Op::Write { slba, n, .. } => (build_write(slba, n).unwrap(), n as usize * lba),
        Op::Flush => (build_flush(), 0),
        Op::Append { zslba, n, .. } => (build_zone_append(zslba, n).unwrap(), n as usize * lba),
        Op::Reset { zslba } => (build_zone_reset(zslba), 0),
        Op::Finish { zslba } => (build_zone_finish(zslba), 0),
        Op::Report => (build_zone_report(), 8 + 24 * nzones as usize),
    }
}

fn fill_payload(op: &Op, buf: &mut [u8]) {
    if let Op::Write { seed, .. } | Op::Append { seed, .. } = *op {
        buf.copy_from_slice(&pattern(seed, buf.len()));
    }
}

fn outcome_of(op: &Op, status: u16, result: u64, buf: &[u8]) -> Outcome {
    let returns_data = matches!(op, Op::Read { .. } | Op::Report) && status == SUCCESS;
    Outcome {
        status,
        result,
        data: if returns_data {
            buf.to_vec()
        } else {
            Vec::new()
        },
    }
}

/// Seeded generator of command streams against a model's current state.
pub struct Generator {
    rng: ChaCha8Rng,
    pub max_blocks: u32,
    pub next_seed: u32,
}

impl Generator {
    pub fn new(seed: u64) -> Generator {
        Generator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_blocks: 16,
            next_seed: seed as u32,
        }
    }

    fn seed(&mut self) -> u32 {
        self.next_seed = self.next_seed.wrapping_add(1);
        self.next_seed
    }

    fn nblocks(&mut self) -> u32 {
        self.rng.random_range(1..=self.max_blocks)
    }

    // Mostly valid ranges, with a few that cross or start past the end.
    fn slba(&mut self, nsect: u64, n: u32) -> u64 {
        match self.rng.random_range(0..100) {
            0..=2 => nsect - self.rng.random_range(0..n as u64).min(nsect - 1),
            3 => nsect + self.rng.random_range(0..16),
            _ => self.rng.random_range(0..=nsect.saturating_sub(n as u64)),
        }
    }

    /// READ/WRITE/FLUSH only.
    pub fn block_op(&mut self, m: &Model) -> Op {
        let n = self.nblocks();
        match self.rng.random_range(0..100) {
            0..=44 => Op::Read {
                slba: self.slba(m.nsect, n),
                n,
            },
            45..=94 => {
                let slba = self.slba(m.nsect, n);
                Op::Write {
                    slba,
                    n,
                    seed: self.seed(),
                }
            }
            _ => Op::Flush,
        }
    }

    /// Zoned mix: writes mostly land on a write pointer.
    pub fn zoned_op(&mut self, m: &Model) -> Op {
        let nzones = m.wp.len() as u64;
        let z = self.rng.random_range(0..nzones);
        let zslba = z * m.zone_nsect;
        let n = self.nblocks();
        match self.rng.random_range(0..100) {
            0..=24 => Op::Read {
                slba: self.slba(m.nsect, n),
                n,
            },
            25..=49 => {
                let slba = if self.rng.random_bool(0.8) {
                    m.wp[z as usize]
                } else {
                    self.slba(m.nsect, n)
                };
                Op::Write {
                    slba,
                    n,
                    seed: self.seed(),
                }
            }
            50..=79 => {
                let zslba = if self.rng.random_bool(0.95) {
                    zslba
                } else {
                    zslba + 1
                };
                Op::Append {
                    zslba,
                    n,
                    seed: self.seed(),
                }
            }
            80..=86 => Op::Reset { zslba },
            87..=89 => Op::Finish { zslba },
            90..=94 => Op::Report,
            _ => Op::Flush,
        }
    }

    /// Generates `count` ops, advancing `model` as it goes; returns the ops
    /// together with the model's outcomes.
    pub fn stream(
        &mut self,
        model: &mut Model,
        count: usize,
        zoned: bool,
    ) -> (Vec<Op>, Vec<Outcome>) {
        let mut ops = Vec::with_capacity(count);
        let mut outcomes = Vec::with_capacity(count);
        for _ in 0..count {
            let op = if zoned {
                self.zoned_op(model)
            } else {
                self.block_op(model)
            };
            outcomes.push(model.apply(&op));
            ops.push(op);
        }
        (ops, outcomes)
    }
}

/// Runs one op through a synchronous context.
pub fn run_sync(dev: &Device, op: &Op) -> Outcome {
    let geo = dev.geometry().unwrap();
    let (cmd, nbytes) = to_command(op, geo.lba_nbytes as usize, geo.nzones as u64);
    let mut ctx = CommandContext::sync(dev);
    ctx.cmd = cmd;
    if nbytes == 0 {
        ctx.pass(None, 0).unwrap();
        return outcome_of(op, ctx.cpl.status, ctx.cpl.result, &[]);
    }
    let mut buf = dev.buf_alloc(nbytes).unwrap();
    fill_payload(op, &mut buf[..nbytes]);
    ctx.pass(Some(&mut buf), nbytes).unwrap();
    outcome_of(op, ctx.cpl.status, ctx.cpl.result, &buf[..nbytes])
}

pub fn run_sync_all(dev: &Device, ops: &[Op]) -> Vec<Outcome> {
    ops.iter().map(|op| run_sync(dev, op)).collect()
}

fn blocks_touched(op: &Op, zone_nsect: u64) -> Option<(u64, u64, bool)> {
    match *op {
        Op::Read { slba, n } => Some((slba, slba + n as u64, false)),
        Op::Write { slba, n, .. } => Some((slba, slba + n as u64, true)),
        Op::Flush => None,
        // Zone operations touch a whole zone's state.
        Op::Append { zslba, .. } | Op::Reset { zslba } | Op::Finish { zslba } => {
            let start = zslba - zslba % zone_nsect.max(1);
            Some((start, start + zone_nsect.max(1), true))
        }
        Op::Report => Some((0, u64::MAX, false)),
    }
}

fn conflicts(a: (u64, u64, bool), b: (u64, u64, bool)) -> bool {
    (a.2 || b.2) && a.0 < b.1 && b.0 < a.1
}

/// Submits `ops` through a queue of depth `qd`, retrying on BUSY/AGAIN.
///
/// With `ordered`, a command whose blocks overlap an in-flight write (or a
/// write overlapping any in-flight command) waits for it first, so results
/// match serial execution even on backends that complete out of order.
pub fn run_queue(dev: &Device, ops: &[Op], qd: u32, ordered: bool) -> Vec<Outcome> {
    let geo = dev.geometry().unwrap();
    let lba = geo.lba_nbytes as usize;
    let results: RefCell<Vec<Option<Outcome>>> = RefCell::new(vec![None; ops.len()]);
    let inflight: RefCell<BTreeMap<u64, (u64, u64, bool)>> = RefCell::new(BTreeMap::new());
    {
        let mut q = Queue::init(dev, qd, 0).unwrap();
        q.set_cb(|ctx| {
            let i = ctx.tag as usize;
            let op = &ops[i];
            let n = to_command(op, lba, geo.nzones as u64).1;
            let data = ctx.payload().map(|b| b[..n].to_vec()).unwrap_or_default();
            let prev = results.borrow_mut()[i].replace(outcome_of(
                op,
                ctx.cpl.status,
                ctx.cpl.result,
                &data,
            ));
            assert!(prev.is_none(), "completion for op {i} delivered twice");
            inflight.borrow_mut().remove(&ctx.tag);
        })
        .unwrap();
        for (i, op) in ops.iter().enumerate() {
            let (cmd, nbytes) = to_command(op, lba, geo.nzones as u64);
            let span = blocks_touched(op, geo.zone_nsect);
            if ordered {
                if let Some(span) = span {
                    while inflight
                        .borrow()
                        .values()
                        .any(|&other| conflicts(span, other))
                    {
                        if q.poke(0) == 0 {
                            std::thread::yield_now();
                        }
                    }
                }
            }
            let h = loop {
                match q.get_ctx() {
                    Ok(h) => break h,
                    Err(e) if e.code == ErrorCode::Busy => {
                        q.poke(0);
                    }
                    Err(e) => panic!("get_ctx: {e}"),
                }
            };
            let ctx = q.ctx(h).unwrap();
            ctx.cmd = cmd;
            ctx.tag = i as u64;
            if nbytes > 0 {
                let fits = ctx.payload().is_some_and(|b| b.nbytes() >= nbytes);
                if !fits {
                    ctx.set_payload(dev.buf_alloc(nbytes).unwrap());
                }
                let buf = ctx.payload_mut().unwrap();
                buf.fill(0);
                fill_payload(op, &mut buf[..nbytes]);
            }
            if let Some(span) = span {
                inflight.borrow_mut().insert(i as u64, span);
            }
            loop {
                match q.cmd_pass(h, nbytes) {
                    Ok(()) => break,
                    Err(e) if e.is_transient() => {
                        q.poke(0);
                    }
                    Err(e) => panic!("cmd_pass: {e}"),
                }
            }
        }
        q.drain().unwrap();
        q.term().unwrap();
    }
    results
        .into_inner()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or_else(|| panic!("op {i} never completed")))
        .collect()
}

/// Creates a file image of `nsect` 512-byte blocks, zero-filled.
pub fn file_image(dir: &std::path::Path, name: &str, nsect: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let f = std::fs::File::create(&path).unwrap();
    f.set_len(nsect * 512).unwrap();
    path
}

static UNIQUE: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// A ram namespace name unused by other tests in this process.
pub fn unique(prefix: &str) -> String {
    format!(
        "{prefix}-{}-{}",
        std::process::id(),
        UNIQUE.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    )
}
