//! Backend adapter for [`RamNamespace`](crate::ramdev::RamNamespace).
//!
//! The queue engine executes at submission time, in submission order, and
//! holds each completion back until its latency-model delay has elapsed.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{BackendDescriptor, Executed, QueueEngine, Reaped, Rejected, Submission, SyncEngine};
use crate::error::{ErrorCode, IoError, Result};
use crate::ident::{DeviceIdent, IdentClass, RamParams};
use crate::ramdev::{self, RamNamespace};
use crate::types::{Command, Geometry};

pub const NAME: &str = "ram";

/// Block count used when a `ram:` URI omits `nsect`.
pub const DEFAULT_NSECT: u64 = 8192;

pub(crate) fn descriptor() -> BackendDescriptor {
    BackendDescriptor::new(NAME, &[IdentClass::Ram])
        .with_sync(|ident, _| Ok(Arc::new(RamEngine(namespace_for(ident)?)) as Arc<dyn SyncEngine>))
        .with_async(|setup| {
            Ok(Box::new(RamQueue {
                ns: namespace_for(setup.ident)?,
                pending: VecDeque::new(),
            }) as Box<dyn QueueEngine>)
        })
}

fn geometry_from(params: &RamParams) -> Result<Geometry> {
    let nsect = params.nsect.unwrap_or(DEFAULT_NSECT);
    let lba_nbytes = 1u32 << params.lbads.unwrap_or(9);
    let geo = match params.zones {
        None => Geometry::conventional(lba_nbytes, nsect),
        Some(zones) => {
            if !nsect.is_multiple_of(zones as u64) {
                return Err(IoError::inval(format!(
                    "nsect {nsect} not divisible by {zones} zones"
                )));
            }
            Geometry::zoned(lba_nbytes, zones, nsect / zones as u64)
        }
    };
    geo.validate()?;
    Ok(geo)
}

/// Finds the namespace named by `ident`, creating it when the URI carries
/// geometry parameters. Parameters on an existing namespace must agree.
pub fn namespace_for(ident: &DeviceIdent) -> Result<Arc<RamNamespace>> {
    let DeviceIdent::Ram { name, params } = ident else {
        return Err(IoError::inval("ram backend serves ram identifiers only"));
    };
    let requested = if params.is_empty() {
        None
    } else {
        Some(geometry_from(params)?)
    };
    loop {
        if let Some(ns) = ramdev::ram_lookup(name) {
            if let Some(geo) = requested {
                if geo != ns.geometry() {
                    return Err(IoError::inval(format!(
                        "ram:{name} exists with a different geometry"
                    )));
                }
            }
            return Ok(ns);
        }
        let Some(geo) = requested else {
            return Err(IoError::new(
                ErrorCode::NoEnt,
                format!("ram:{name} does not exist"),
            ));
        };
        match ramdev::ram_create(name, geo) {
            Err(e) if e.code == ErrorCode::Exist => continue,
            other => return other,
        }
    }
}

struct RamEngine(Arc<RamNamespace>);

impl SyncEngine for RamEngine {
    fn exec(&self, cmd: &Command, payload: &mut [u8]) -> Result<Executed> {
        let (cpl, delay) = self.0.exec_timed(cmd, payload)?;
        Ok(Executed { cpl, delay })
    }
}

struct RamQueue {
    ns: Arc<RamNamespace>,
    pending: VecDeque<(Instant, Reaped)>,
}

impl QueueEngine for RamQueue {
    fn submit(&mut self, mut sub: Submission) -> std::result::Result<(), Rejected> {
        let cmd = sub.cmd;
        let (cpl, delay) = match self.ns.exec_timed(&cmd, sub.data_mut()) {
            Ok(done) => done,
            Err(err) => return Err(Rejected { err, sub }),
        };
        self.ns.begin_inflight();
        let due = Instant::now() + delay;
        let reaped = Reaped {
            tag: sub.tag,
            cpl,
            payload: sub.payload,
            transport: None,
        };
        self.pending.push_back((due, reaped));
        Ok(())
    }

    fn reap(&mut self, wait: bool, out: &mut Vec<Reaped>) -> Result<()> {
        loop {
            let now = Instant::now();
            let before = out.len();
            let mut i = 0;
            while i < self.pending.len() {
                if self.pending[i].0 <= now {
                    let (_, reaped) = self.pending.remove(i).expect("index checked");
                    self.ns.end_inflight();
                    out.push(reaped);
                } else {
                    i += 1;
                }
            }
            if !wait || out.len() > before || self.pending.is_empty() {
                return Ok(());
            }
            let next = self
                .pending
                .iter()
                .map(|(due, _)| *due)
                .min()
                .expect("non-empty");
            std::thread::sleep(
                next.saturating_duration_since(now)
                    .max(Duration::from_micros(10)),
            );
        }
    }

    fn outstanding(&self) -> usize {
        self.pending.len()
    }
}

impl Drop for RamQueue {
    fn drop(&mut self) {
        for _ in self.pending.drain(..) {
            self.ns.end_inflight();
        }
    }
}
