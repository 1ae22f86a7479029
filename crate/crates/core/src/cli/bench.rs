//! Queue-depth micro-benchmark: one queue, one driver thread, seeded LBAs.

use std::cell::RefCell;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cmdsets::{build_read, build_write};
use crate::device::Device;
use crate::error::{ErrorCode, IoError, Result};
use crate::queue::Queue;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    RandRead,
    RandWrite,
    SeqRead,
    SeqWrite,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::RandRead => "randread",
            BenchMode::RandWrite => "randwrite",
            BenchMode::SeqRead => "seqread",
            BenchMode::SeqWrite => "seqwrite",
        }
    }

    fn is_write(self) -> bool {
        matches!(self, BenchMode::RandWrite | BenchMode::SeqWrite)
    }

    fn is_random(self) -> bool {
        matches!(self, BenchMode::RandRead | BenchMode::RandWrite)
    }
}

impl FromStr for BenchMode {
    type Err = IoError;

    fn from_str(s: &str) -> Result<BenchMode> {
        match s {
            "randread" => Ok(BenchMode::RandRead),
            "randwrite" => Ok(BenchMode::RandWrite),
            "seqread" => Ok(BenchMode::SeqRead),
            "seqwrite" => Ok(BenchMode::SeqWrite),
            _ => Err(IoError::inval(format!(
                "unknown mode {s:?}; expected randread, randwrite, seqread or seqwrite"
            ))),
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchParams {
    pub qd: u32,
    pub nblocks: u32,
    pub ops: u64,
    pub mode: BenchMode,
    pub seed: u64,
    pub trace: bool,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            qd: 32,
            nblocks: 1,
            ops: 10_000,
            mode: BenchMode::RandRead,
            seed: 0,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Percentiles {
    pub p50: u64,
    pub p99: u64,
    pub p999: u64,
    pub max: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub mode: String,
    pub qd: u32,
    pub nblocks: u32,
    pub seed: u64,
    pub ops: u64,
    pub completions: u64,
    pub errors: u64,
    pub elapsed_ns: u64,
    pub iops: f64,
    pub bytes_per_sec: f64,
    pub latency_ns: Percentiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<u64>>,
}

const BUCKETS_PER_DECADE: usize = 64;
const DECADES: usize = 7;
const LOW_NS: u64 = 1_000;

/// Log-linear latency histogram over 1 µs..10 s, 64 linear buckets per
/// decade. Values outside the range land in an underflow or overflow bucket.
#[derive(Debug, Clone)]
pub struct Histogram {
    counts: Vec<u64>,
    total: u64,
    max: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram {
            counts: vec![0; DECADES * BUCKETS_PER_DECADE + 2],
            total: 0,
            max: 0,
        }
    }
}

impl Histogram {
    pub fn new() -> Histogram {
        Histogram::default()
    }

    fn bucket(ns: u64) -> usize {
        if ns < LOW_NS {
            return 0;
        }
        let mut lo = LOW_NS;
        for decade in 0..DECADES {
            let hi = lo * 10;
            if ns < hi {
                let within = ((ns - lo) * BUCKETS_PER_DECADE as u64 / (hi - lo)) as usize;
                return 1 + decade * BUCKETS_PER_DECADE + within;
            }
            lo = hi;
        }
        DECADES * BUCKETS_PER_DECADE + 1
    }

    // Exclusive upper edge of a bucket.
    fn upper(bucket: usize) -> u64 {
        if bucket == 0 {
            return LOW_NS;
        }
        if bucket > DECADES * BUCKETS_PER_DECADE {
            return u64::MAX;
        }
        let decade = (bucket - 1) / BUCKETS_PER_DECADE;
        let within = ((bucket - 1) % BUCKETS_PER_DECADE) as u64;
        let lo = LOW_NS * 10u64.pow(decade as u32);
        lo + (within + 1) * (lo * 9) / BUCKETS_PER_DECADE as u64
    }

    pub fn record(&mut self, ns: u64) {
        self.counts[Self::bucket(ns)] += 1;
        self.total += 1;
        self.max = self.max.max(ns);
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    /// Upper edge of the bucket holding the `q` quantile, never above the
    /// recorded maximum.
    pub fn percentile(&self, q: f64) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let rank = ((q * self.total as f64).ceil() as u64).clamp(1, self.total);
        let mut seen = 0;
        for (bucket, &count) in self.counts.iter().enumerate() {
            seen += count;
            if seen >= rank {
                return Self::upper(bucket).min(self.max);
            }
        }
        self.max
    }

    pub fn percentiles(&self) -> Percentiles {
        Percentiles {
            p50: self.percentile(0.50),
            p99: self.percentile(0.99),
            p999: self.percentile(0.999),
            max: self.max,
        }
    }
}

/// The starting LBAs `bench` submits, in order.
pub fn lba_sequence(
    nsect: u64,
    nblocks: u32,
    ops: u64,
    mode: BenchMode,
    seed: u64,
) -> Result<Vec<u64>> {
    let nslots = nsect / nblocks.max(1) as u64;
    if nblocks == 0 || nslots == 0 {
        return Err(IoError::inval(format!(
            "{nblocks}-block transfers do not fit {nsect} blocks"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..ops)
        .map(|i| {
            let slot = if mode.is_random() {
                rng.random_range(0..nslots)
            } else {
                i % nslots
            };
            slot * nblocks as u64
        })
        .collect())
}

#[derive(Default)]
struct Tally {
    completions: u64,
    errors: u64,
    latency: Histogram,
}

/// Drives `params.ops` commands through one queue of depth `params.qd`.
pub fn bench(dev: &Device, params: &BenchParams) -> Result<BenchReport> {
    let geo = dev.geometry()?;
    let lbas = lba_sequence(
        geo.nsect,
        params.nblocks,
        params.ops,
        params.mode,
        params.seed,
    )?;
    let nbytes = params.nblocks as usize * geo.lba_nbytes as usize;
    let build = if params.mode.is_write() {
        build_write
    } else {
        build_read
    };

    let tally = RefCell::new(Tally::default());
    let start = Instant::now();
    let mut queue = Queue::init(dev, params.qd, 0)?;
    queue.set_cb(|ctx| {
        let mut t = tally.borrow_mut();
        t.completions += 1;
        if ctx.cpl.is_error() {
            t.errors += 1;
        }
        let now = start.elapsed().as_nanos() as u64;
        t.latency.record(now.saturating_sub(ctx.tag));
    })?;
    // Every context in the pool carries its own payload for the whole run.
    let handles = (0..params.qd)
        .map(|_| queue.get_ctx())
        .collect::<Result<Vec<_>>>()?;
    for &h in &handles {
        let mut buf = dev.buf_alloc(nbytes)?;
        if params.mode.is_write() {
            buf.fill(0xA5);
        }
        queue.ctx(h)?.set_payload(buf);
    }
    for h in handles {
        queue.ctx_put(h)?;
    }

    for &slba in &lbas {
        let cmd = build(slba, params.nblocks)?;
        let h = loop {
            match queue.get_ctx() {
                Ok(h) => break h,
                Err(e) if e.code == ErrorCode::Busy => {
                    if queue.poke(0) == 0 {
                        std::thread::yield_now();
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let ctx = queue.ctx(h)?;
        ctx.cmd = cmd;
        ctx.tag = start.elapsed().as_nanos() as u64;
        loop {
            match queue.cmd_pass(h, nbytes) {
                Ok(()) => break,
                Err(e) if e.is_transient() => {
                    if queue.poke(0) == 0 {
                        std::thread::yield_now();
                    }
                }
                Err(e) => {
                    queue.ctx_put(h)?;
                    return Err(e);
                }
            }
        }
    }
    queue.drain()?;
    let elapsed = start.elapsed();
    queue.term()?;
    drop(queue);

    let tally = tally.into_inner();
    let secs = elapsed.as_secs_f64().max(f64::MIN_POSITIVE);
    Ok(BenchReport {
        mode: params.mode.to_string(),
        qd: params.qd,
        nblocks: params.nblocks,
        seed: params.seed,
        ops: params.ops,
        completions: tally.completions,
        errors: tally.errors,
        elapsed_ns: elapsed.as_nanos() as u64,
        iops: tally.completions as f64 / secs,
        bytes_per_sec: (tally.completions * nbytes as u64) as f64 / secs,
        latency_ns: tally.latency.percentiles(),
        trace: params.trace.then_some(lbas),
    })
}
