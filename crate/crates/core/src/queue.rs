//! Command contexts and the asynchronous queue.
//!
//! A [`CommandContext`] pairs a command with its completion. Synchronous
//! contexts are built by the caller and passed straight to the device with
//! [`CommandContext::pass`]. Asynchronous contexts come from a [`Queue`]'s
//! fixed pool and are submitted with [`Queue::cmd_pass`]. Their completions
//! reach the queue callback only while the owner calls [`Queue::poke`] or
//! [`Queue::drain`].
//!
//! Submissions are tracked in a ring of `capacity` entries that is released
//! strictly in submission order. A command that stays unfinished pins the
//! ring head, so later submissions see AGAIN even when contexts are free.
//! Retrying the same submission is always a valid recovery.

use std::collections::VecDeque;
use std::fmt;
use std::sync::atomic::Ordering;

use crate::backend::{QueueEngine, QueueSetup, Reaped, Rejected, Submission};
use crate::buffer::Buffer;
use crate::device::{Device, LIVE_QUEUES};
use crate::error::{IoError, Result};
use crate::types::{Command, Completion, Geometry};

pub const MAX_CAPACITY: u32 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdMode {
    Sync,
    Async,
}

pub struct CommandContext {
    pub cmd: Command,
    pub cpl: Completion,
    /// Caller-owned value carried unchanged to the completion callback.
    pub tag: u64,
    dev: Device,
    mode: CmdMode,
    payload: Option<Buffer>,
}

fn check_payload(dev_align: usize, payload: Option<&Buffer>, nbytes: usize) -> Result<()> {
    match payload {
        None if nbytes > 0 => Err(IoError::inval(format!(
            "{nbytes}-byte transfer without a payload"
        ))),
        None => Ok(()),
        Some(buf) => {
            if buf.nbytes() < nbytes {
                return Err(IoError::inval(format!(
                    "payload of {} bytes is smaller than {nbytes}",
                    buf.nbytes()
                )));
            }
            if !buf.is_aligned_to(dev_align) {
                return Err(IoError::inval(format!(
                    "payload is not {dev_align}-byte aligned"
                )));
            }
            Ok(())
        }
    }
}

fn validate(geo: &Geometry, cmd: &Command, payload: Option<&Buffer>, nbytes: usize) -> Result<()> {
    cmd.validate_for(geo, nbytes)?;
    check_payload(geo.buffer_alignment(), payload, nbytes)
}

impl CommandContext {
    /// A context for direct, blocking submission to `dev`.
    pub fn sync(dev: &Device) -> CommandContext {
        CommandContext::new(dev.clone(), CmdMode::Sync)
    }

    fn new(dev: Device, mode: CmdMode) -> CommandContext {
        CommandContext {
            cmd: Command::default(),
            cpl: Completion::default(),
            tag: 0,
            dev,
            mode,
            payload: None,
        }
    }

    pub fn dev(&self) -> &Device {
        &self.dev
    }

    pub fn mode(&self) -> CmdMode {
        self.mode
    }

    /// Status of the last completion; nonzero means the device failed it.
    pub fn cpl_status(&self) -> u16 {
        self.cpl.status
    }

    /// Attaches the payload used by [`Queue::cmd_pass`]. The buffer stays
    /// with the context across completion and recycling until taken.
    pub fn set_payload(&mut self, buf: Buffer) -> Option<Buffer> {
        self.payload.replace(buf)
    }

    pub fn payload(&self) -> Option<&Buffer> {
        self.payload.as_ref()
    }

    pub fn payload_mut(&mut self) -> Option<&mut Buffer> {
        self.payload.as_mut()
    }

    pub fn take_payload(&mut self) -> Option<Buffer> {
        self.payload.take()
    }

    /// Executes `self.cmd` synchronously.
    ///
    /// Returns `Ok` whenever the command reached the device, including when
    /// the device failed it: check [`cpl_status`](Self::cpl_status) too.
    pub fn pass(&mut self, payload: Option<&mut Buffer>, nbytes: usize) -> Result<()> {
        if self.mode != CmdMode::Sync {
            return Err(IoError::inval(
                "queue contexts are submitted through Queue::cmd_pass",
            ));
        }
        let geo = self.dev.geometry()?;
        validate(&geo, &self.cmd, payload.as_deref(), nbytes)?;
        let engine = self.dev.sync_engine()?;
        let data: &mut [u8] = match payload {
            Some(buf) => &mut buf[..nbytes],
            None => &mut [],
        };
        let done = engine.exec(&self.cmd, data)?;
        if !done.delay.is_zero() {
            std::thread::sleep(done.delay);
        }
        self.cpl = done.cpl;
        Ok(())
    }
}

impl fmt::Debug for CommandContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CommandContext")
            .field("cmd", &self.cmd)
            .field("cpl", &self.cpl)
            .field("tag", &self.tag)
            .field("mode", &self.mode)
            .field("payload", &self.payload)
            .finish()
    }
}

/// Refers to one context of a queue's pool. Stale handles are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CtxHandle {
    slot: u32,
    generation: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SlotState {
    Free,
    Staged,
    InFlight,
    Completed,
}

struct Slot {
    ctx: CommandContext,
    state: SlotState,
    generation: u32,
}

#[derive(Debug, Clone, Copy, Default)]
struct RingEntry {
    slot: u32,
    finished: bool,
}

/// Context pool occupancy. The four counts always sum to `capacity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueStats {
    pub capacity: u32,
    pub free: usize,
    pub staged: usize,
    pub inflight: usize,
    pub completed: usize,
}

type Callback<'cb> = Box<dyn FnMut(&mut CommandContext) + 'cb>;

pub struct Queue<'cb> {
    dev: Device,
    geometry: Geometry,
    capacity: u32,
    slots: Vec<Slot>,
    free: Vec<u32>,
    engine: Option<Box<dyn QueueEngine>>,
    callback: Option<Callback<'cb>>,
    ring: Vec<RingEntry>,
    head: u64,
    tail: u64,
    ready: VecDeque<u32>,
    scratch: Vec<Reaped>,
    outstanding: usize,
    fault: Option<IoError>,
}

impl<'cb> Queue<'cb> {
    /// Creates a queue of `capacity` contexts on `dev`'s async backend.
    ///
    /// `capacity` must be a power of two in `1..=4096`; `flags` is reserved
    /// and must be zero.
    pub fn init(dev: &Device, capacity: u32, flags: u32) -> Result<Queue<'cb>> {
        if !capacity.is_power_of_two() || capacity > MAX_CAPACITY {
            return Err(IoError::inval(format!(
                "capacity {capacity} is not a power of two in 1..={MAX_CAPACITY}"
            )));
        }
        if flags != 0 {
            return Err(IoError::inval(format!(
                "reserved flags {flags:#x} must be zero"
            )));
        }
        let geometry = dev.geometry()?;
        let sync = dev.sync_engine()?;
        let engine = dev.async_descriptor().open_queue(&QueueSetup {
            ident: dev.ident(),
            opts: dev.options(),
            geometry,
            capacity,
            sync,
        })?;
        dev.attach_queue()?;
        LIVE_QUEUES.fetch_add(1, Ordering::AcqRel);
        let slots = (0..capacity)
            .map(|_| Slot {
                ctx: CommandContext::new(dev.clone(), CmdMode::Async),
                state: SlotState::Free,
                generation: 0,
            })
            .collect();
        Ok(Queue {
            dev: dev.clone(),
            geometry,
            capacity,
            slots,
            free: (0..capacity).rev().collect(),
            engine: Some(engine),
            callback: None,
            ring: vec![RingEntry::default(); capacity as usize],
            head: 0,
            tail: 0,
            ready: VecDeque::new(),
            scratch: Vec::new(),
            outstanding: 0,
            fault: None,
        })
    }

    pub fn dev(&self) -> &Device {
        &self.dev
    }

    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    /// Submitted contexts whose completion has not been delivered yet.
    pub fn outstanding(&self) -> usize {
        self.outstanding
    }

    pub fn is_live(&self) -> bool {
        self.engine.is_some()
    }

    fn check_live(&self) -> Result<()> {
        if self.engine.is_none() {
            return Err(IoError::inval("queue has been terminated"));
        }
        Ok(())
    }

    /// Sets the callback run once per completed context, replacing any
    /// previous one. State the callback needs is captured by the closure.
    pub fn set_cb(&mut self, cb: impl FnMut(&mut CommandContext) + 'cb) -> Result<()> {
        self.check_live()?;
        self.callback = Some(Box::new(cb));
        Ok(())
    }

    /// Takes a free context, zeroing its command and completion.
    pub fn get_ctx(&mut self) -> Result<CtxHandle> {
        self.check_live()?;
        let slot = self
            .free
            .pop()
            .ok_or_else(|| IoError::busy("no free command context"))?;
        let entry = &mut self.slots[slot as usize];
        entry.state = SlotState::Staged;
        entry.ctx.cmd = Command::default();
        entry.ctx.cpl = Completion::default();
        entry.ctx.tag = 0;
        Ok(CtxHandle {
            slot,
            generation: entry.generation,
        })
    }

    fn staged_slot(&self, h: CtxHandle) -> Result<usize> {
        let slot = self
            .slots
            .get(h.slot as usize)
            .filter(|s| s.generation == h.generation)
            .ok_or_else(|| IoError::inval("stale or foreign context handle"))?;
        if slot.state != SlotState::Staged {
            return Err(IoError::inval(format!(
                "context is {:?}, not staged",
                slot.state
            )));
        }
        Ok(h.slot as usize)
    }

    /// Access to a staged context, to fill in its command and payload.
    pub fn ctx(&mut self, h: CtxHandle) -> Result<&mut CommandContext> {
        let slot = self.staged_slot(h)?;
        Ok(&mut self.slots[slot].ctx)
    }

    /// Returns a staged, unsubmitted context to the pool.
    pub fn ctx_put(&mut self, h: CtxHandle) -> Result<()> {
        let slot = self.staged_slot(h)?;
        self.recycle(slot);
        Ok(())
    }

    fn recycle(&mut self, slot: usize) {
        let entry = &mut self.slots[slot];
        entry.state = SlotState::Free;
        entry.generation = entry.generation.wrapping_add(1);
        self.free.push(slot as u32);
    }

    /// Submits a staged context with its attached payload.
    ///
    /// On BUSY or AGAIN the context stays staged and the same call may be
    /// retried. Completion is reported only through the callback.
    pub fn cmd_pass(&mut self, h: CtxHandle, nbytes: usize) -> Result<()> {
        self.check_live()?;
        let slot = self.staged_slot(h)?;
        if self.callback.is_none() {
            return Err(IoError::again("no completion callback set"));
        }
        {
            let ctx = &self.slots[slot].ctx;
            validate(&self.geometry, &ctx.cmd, ctx.payload.as_ref(), nbytes)?;
        }
        if self.ring_full() {
            self.collect(false)?;
            if self.ring_full() {
                return Err(IoError::again("submission ring full"));
            }
        }
        let seq = self.tail;
        let ctx = &mut self.slots[slot].ctx;
        let sub = Submission {
            tag: seq,
            cmd: ctx.cmd,
            payload: ctx.payload.take(),
            nbytes,
        };
        let engine = self.engine.as_mut().expect("checked live");
        if let Err(Rejected { err, sub }) = engine.submit(sub) {
            self.slots[slot].ctx.payload = sub.payload;
            return Err(err);
        }
        self.ring[(seq % self.capacity as u64) as usize] = RingEntry {
            slot: slot as u32,
            finished: false,
        };
        self.tail += 1;
        self.slots[slot].state = SlotState::InFlight;
        self.outstanding += 1;
        Ok(())
    }

    fn ring_full(&self) -> bool {
        self.tail - self.head == self.capacity as u64
    }

    fn collect(&mut self, wait: bool) -> Result<()> {
        let engine = self.engine.as_mut().expect("checked live");
        engine.reap(wait, &mut self.scratch)?;
        for reaped in self.scratch.drain(..) {
            let entry = &mut self.ring[(reaped.tag % self.capacity as u64) as usize];
            entry.finished = true;
            let slot = &mut self.slots[entry.slot as usize];
            debug_assert_eq!(slot.state, SlotState::InFlight);
            slot.ctx.cpl = reaped.cpl;
            slot.ctx.payload = reaped.payload;
            slot.state = SlotState::Completed;
            self.ready.push_back(entry.slot);
            if let Some(err) = reaped.transport {
                log::warn!("transport fault on {}: {err}", self.dev.ident().base_uri());
                self.fault.get_or_insert(err);
            }
        }
        while self.head < self.tail
            && self.ring[(self.head % self.capacity as u64) as usize].finished
        {
            self.head += 1;
        }
        Ok(())
    }

    /// Delivers up to `max` finished completions (0 means all) to the
    /// callback without blocking. Returns how many were delivered.
    pub fn poke(&mut self, max: usize) -> usize {
        if self.engine.is_none() {
            return 0;
        }
        if let Err(err) = self.collect(false) {
            self.fault.get_or_insert(err);
        }
        self.dispatch(max)
    }

    fn dispatch(&mut self, max: usize) -> usize {
        let limit = if max == 0 { usize::MAX } else { max };
        let mut delivered = 0;
        while delivered < limit {
            let Some(slot) = self.ready.pop_front() else {
                break;
            };
            let cb = self
                .callback
                .as_mut()
                .expect("submission requires a callback");
            cb(&mut self.slots[slot as usize].ctx);
            self.recycle(slot as usize);
            self.outstanding -= 1;
            delivered += 1;
        }
        delivered
    }

    /// Blocks until every submitted context has been delivered and returns
    /// how many completions this call delivered.
    ///
    /// If the backend reported a transport failure, the affected commands
    /// still complete (with a path-error status) and drain then fails with IO.
    pub fn drain(&mut self) -> Result<usize> {
        self.check_live()?;
        let mut total = 0;
        loop {
            if let Err(err) = self.collect(false) {
                self.fault.get_or_insert(err);
            }
            total += self.dispatch(0);
            if self.outstanding == 0 {
                break;
            }
            if let Err(err) = self.collect(true) {
                self.fail_inflight(&err);
                self.fault.get_or_insert(err);
            }
        }
        match self.fault.take() {
            Some(err) => Err(IoError::io(format!(
                "transport failure during drain: {}",
                err.message
            ))),
            None => Ok(total),
        }
    }

    // The engine is gone; complete whatever it still held.
    fn fail_inflight(&mut self, _err: &IoError) {
        for seq in self.head..self.tail {
            let entry = &mut self.ring[(seq % self.capacity as u64) as usize];
            if entry.finished {
                continue;
            }
            entry.finished = true;
            let slot = &mut self.slots[entry.slot as usize];
            slot.ctx.cpl = Completion::status(crate::types::status::INTERNAL_PATH_ERROR);
            slot.state = SlotState::Completed;
            self.ready.push_back(entry.slot);
        }
        self.head = self.tail;
    }

    pub fn stats(&self) -> QueueStats {
        let mut stats = QueueStats {
            capacity: self.capacity,
            free: 0,
            staged: 0,
            inflight: 0,
            completed: 0,
        };
        for slot in &self.slots {
            match slot.state {
                SlotState::Free => stats.free += 1,
                SlotState::Staged => stats.staged += 1,
                SlotState::InFlight => stats.inflight += 1,
                SlotState::Completed => stats.completed += 1,
            }
        }
        stats
    }

    /// Releases the queue. Fails with BUSY while completions are
    /// outstanding and with INVAL once already terminated.
    pub fn term(&mut self) -> Result<()> {
        self.check_live()?;
        if self.outstanding > 0 {
            return Err(IoError::busy(format!(
                "{} command(s) outstanding",
                self.outstanding
            )));
        }
        self.release();
        Ok(())
    }

    fn release(&mut self) {
        if self.engine.take().is_some() {
            self.callback = None;
            self.dev.detach_queue();
            LIVE_QUEUES.fetch_sub(1, Ordering::AcqRel);
        }
    }
}

impl Drop for Queue<'_> {
    fn drop(&mut self) {
        self.release();
    }
}

impl fmt::Debug for Queue<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Queue")
            .field("dev", &self.dev.ident().base_uri())
            .field("capacity", &self.capacity)
            .field("outstanding", &self.outstanding)
            .field("live", &self.is_live())
            .finish()
    }
}
