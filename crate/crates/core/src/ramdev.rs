//! Deterministic in-memory NVMe namespace.
//!
//! Executes the NVM and zoned command sets against a flat byte store. Zones
//! follow a three-state model (EMPTY, OPEN, FULL) derived from the write
//! pointer. A fault schedule can override the status of selected commands,
//! and an optional latency model delays when completions become visible
//! without changing the order in which commands execute.
//!
//! Namespaces are registered under a process-wide name so that
//! `ram:<name>` identifiers resolve to them.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::Duration;

use crate::digest::Digest;
use crate::error::{ErrorCode, IoError, Result};
use crate::types::{cns, status, zra, zsa, Command, Completion, Geometry, Opcode};
use crate::wire::{self, ZoneCondition, ZoneState};

/// One scheduled fault.
///
/// Matches commands with `opcode` (and, when set, a starting LBA within
/// `slba`). The `occurrence`-th match (1-based) completes with `status`
/// instead of executing. Each fault fires at most once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub opcode: Opcode,
    pub slba: Option<RangeInclusive<u64>>,
    pub occurrence: u64,
    pub status: u16,
}

impl Fault {
    pub fn new(opcode: Opcode, occurrence: u64, status: u16) -> Fault {
        Fault {
            opcode,
            slba: None,
            occurrence,
            status,
        }
    }

    pub fn in_range(mut self, slba: RangeInclusive<u64>) -> Fault {
        self.slba = Some(slba);
        self
    }

    fn matches(&self, cmd: &Command) -> bool {
        cmd.opcode == self.opcode
            && self
                .slba
                .as_ref()
                .is_none_or(|range| range.contains(&cmd.slba))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FaultSchedule {
    pub faults: Vec<Fault>,
}

impl FaultSchedule {
    pub fn new() -> FaultSchedule {
        FaultSchedule::default()
    }

    pub fn with(mut self, fault: Fault) -> FaultSchedule {
        self.faults.push(fault);
        self
    }
}

/// Artificial completion delay.
///
/// `per_command` is keyed by the 0-based execution index counted from the
/// moment the model was installed; other commands use `default`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyModel {
    pub default: Duration,
    pub per_command: BTreeMap<u64, Duration>,
}

impl LatencyModel {
    /// Delays only the first command executed after installation.
    pub fn stall_first(delay: Duration) -> LatencyModel {
        LatencyModel {
            default: Duration::ZERO,
            per_command: BTreeMap::from([(0, delay)]),
        }
    }

    fn delay_for(&self, index: u64) -> Duration {
        self.per_command
            .get(&index)
            .copied()
            .unwrap_or(self.default)
    }
}

/// Digest pair returned by [`RamNamespace::snapshot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateDigest {
    /// Hash of the logical block contents only.
    pub data: Digest,
    /// Hash of the zone descriptors (empty input for conventional namespaces).
    pub zones: Digest,
}

#[derive(Debug)]
struct ArmedFault {
    fault: Fault,
    seen: u64,
    fired: bool,
}

#[derive(Debug)]
struct RamState {
    store: Vec<u8>,
    zones: Vec<ZoneState>,
    faults: Vec<ArmedFault>,
    latency: Option<LatencyModel>,
    executed: u64,
}

#[derive(Debug)]
pub struct RamNamespace {
    name: String,
    geometry: Geometry,
    state: Mutex<RamState>,
    inflight: AtomicUsize,
}

fn registry() -> MutexGuard<'static, BTreeMap<String, Arc<RamNamespace>>> {
    static DEVICES: OnceLock<Mutex<BTreeMap<String, Arc<RamNamespace>>>> = OnceLock::new();
    DEVICES
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner())
}

/// Creates a zero-filled namespace and registers it as `ram:<name>`.
pub fn ram_create(name: &str, geometry: Geometry) -> Result<Arc<RamNamespace>> {
    geometry.validate()?;
    if name.is_empty() || name.contains(['?', '/', '&', '=']) {
        return Err(IoError::inval(format!("invalid ram device name {name:?}")));
    }
    let mut devices = registry();
    if devices.contains_key(name) {
        return Err(IoError::new(
            ErrorCode::Exist,
            format!("ram device {name:?} already exists"),
        ));
    }
    let ns = Arc::new(RamNamespace::new(name, geometry)?);
    devices.insert(name.to_string(), ns.clone());
    Ok(ns)
}

pub fn ram_lookup(name: &str) -> Option<Arc<RamNamespace>> {
    registry().get(name).cloned()
}

/// Unregisters a namespace. Open devices keep their reference alive.
pub fn ram_remove(name: &str) -> Option<Arc<RamNamespace>> {
    registry().remove(name)
}

/// Registered names in lexicographic order.
pub fn ram_names() -> Vec<String> {
    registry().keys().cloned().collect()
}

impl RamNamespace {
    /// A namespace not reachable through `ram:` identifiers.
    pub fn new(name: &str, geometry: Geometry) -> Result<RamNamespace> {
        let nbytes = usize::try_from(geometry.nbytes())
            .map_err(|_| IoError::new(ErrorCode::NoMem, "namespace too large"))?;
        let mut store = Vec::new();
        store
            .try_reserve_exact(nbytes)
            .map_err(|e| IoError::new(ErrorCode::NoMem, e.to_string()))?;
        store.resize(nbytes, 0);
        let zones = (0..geometry.nzones as u64)
            .map(|i| ZoneState {
                zslba: i * geometry.zone_nsect,
                wp: i * geometry.zone_nsect,
                state: ZoneCondition::Empty,
            })
            .collect();
        Ok(RamNamespace {
            name: name.to_string(),
            geometry,
            state: Mutex::new(RamState {
                store,
                zones,
                faults: Vec::new(),
                latency: None,
                executed: 0,
            }),
            inflight: AtomicUsize::new(0),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    fn lock(&self) -> MutexGuard<'_, RamState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Replaces the fault schedule.
    pub fn inject(&self, schedule: FaultSchedule) {
        self.lock().faults = schedule
            .faults
            .into_iter()
            .map(|fault| ArmedFault {
                fault,
                seen: 0,
                fired: false,
            })
            .collect();
    }

    /// Installs (or with `None`, removes) the latency model and restarts
    /// its execution index.
    pub fn set_latency(&self, model: Option<LatencyModel>) {
        let mut state = self.lock();
        state.latency = model;
        state.executed = 0;
    }

    pub fn zones(&self) -> Vec<ZoneState> {
        self.lock().zones.clone()
    }

    /// Digest of the block store and zone states.
    pub fn snapshot(&self) -> Result<StateDigest> {
        if self.inflight.load(Ordering::Acquire) > 0 {
            return Err(IoError::busy("commands in flight"));
        }
        let state = self.lock();
        let mut zone_bytes = vec![0u8; wire::zone_report_nbytes(state.zones.len() as u32)];
        wire::encode_zone_report(&state.zones, &mut zone_bytes);
        Ok(StateDigest {
            data: Digest::of(&state.store),
            zones: Digest::of(if state.zones.is_empty() {
                &[]
            } else {
                &zone_bytes
            }),
        })
    }

    pub(crate) fn begin_inflight(&self) {
        self.inflight.fetch_add(1, Ordering::AcqRel);
    }

    pub(crate) fn end_inflight(&self) {
        self.inflight.fetch_sub(1, Ordering::AcqRel);
    }

    /// Executes one command. `payload` must be exactly the transfer size.
    ///
    /// Only malformed commands produce an `Err`; device-level failures are
    /// reported through the returned completion.
    pub fn exec(&self, cmd: &Command, payload: &mut [u8]) -> Result<Completion> {
        self.exec_timed(cmd, payload).map(|(cpl, _)| cpl)
    }

    /// Like [`exec`](Self::exec), also returning the artificial delay the
    /// latency model assigns to this command.
    pub fn exec_timed(&self, cmd: &Command, payload: &mut [u8]) -> Result<(Completion, Duration)> {
        cmd.validate_for(&self.geometry, payload.len())?;
        let mut state = self.lock();
        let index = state.executed;
        state.executed += 1;
        let delay = state
            .latency
            .as_ref()
            .map_or(Duration::ZERO, |model| model.delay_for(index));
        let cpl = match state.take_fault(cmd) {
            Some(status) => Completion::status(status),
            None => state.apply(&self.geometry, cmd, payload),
        };
        Ok((cpl, delay))
    }
}

impl RamState {
    fn take_fault(&mut self, cmd: &Command) -> Option<u16> {
        let mut fired = None;
        for armed in self.faults.iter_mut().filter(|a| !a.fired) {
            if armed.fault.matches(cmd) {
                armed.seen += 1;
                if armed.seen == armed.fault.occurrence {
                    armed.fired = true;
                    fired = fired.or(Some(armed.fault.status));
                }
            }
        }
        fired
    }

    fn byte_range(geo: &Geometry, slba: u64, nblocks: u64) -> std::ops::Range<usize> {
        let lbs = geo.lba_nbytes as u64;
        (slba * lbs) as usize..((slba + nblocks) * lbs) as usize
    }

    fn apply(&mut self, geo: &Geometry, cmd: &Command, payload: &mut [u8]) -> Completion {
        let op = cmd.opcode;
        if op.is_block_transfer()
            && cmd.slba + cmd.nblocks() > geo.nsect
            && op != Opcode::ZONE_APPEND
        {
            return Completion::status(status::LBA_OUT_OF_RANGE);
        }
        match op {
            Opcode::READ => {
                payload
                    .copy_from_slice(&self.store[Self::byte_range(geo, cmd.slba, cmd.nblocks())]);
                Completion::ok(0)
            }
            Opcode::WRITE => {
                if geo.is_zoned() {
                    let zone = &mut self.zones[(cmd.slba / geo.zone_nsect) as usize];
                    if zone.state == ZoneCondition::Full {
                        return Completion::status(status::ZONE_IS_FULL);
                    }
                    if cmd.slba != zone.wp {
                        return Completion::status(status::ZONE_INVALID_WRITE);
                    }
                    if zone.wp + cmd.nblocks() > zone.zslba + geo.zone_nsect {
                        return Completion::status(status::ZONE_BOUNDARY_ERROR);
                    }
                    advance(zone, cmd.nblocks(), geo.zone_nsect);
                }
                self.store[Self::byte_range(geo, cmd.slba, cmd.nblocks())].copy_from_slice(payload);
                Completion::ok(0)
            }
            Opcode::FLUSH => Completion::ok(0),
            Opcode::ZONE_APPEND => {
                if cmd.slba >= geo.nsect {
                    return Completion::status(status::LBA_OUT_OF_RANGE);
                }
                if !cmd.slba.is_multiple_of(geo.zone_nsect) {
                    return Completion::status(status::INVALID_FIELD);
                }
                let zone = &mut self.zones[(cmd.slba / geo.zone_nsect) as usize];
                if zone.state == ZoneCondition::Full {
                    return Completion::status(status::ZONE_IS_FULL);
                }
                if zone.wp + cmd.nblocks() > zone.zslba + geo.zone_nsect {
                    return Completion::status(status::ZONE_BOUNDARY_ERROR);
                }
                let assigned = zone.wp;
                advance(zone, cmd.nblocks(), geo.zone_nsect);
                self.store[Self::byte_range(geo, assigned, cmd.nblocks())].copy_from_slice(payload);
                Completion::ok(assigned)
            }
            Opcode::ZONE_MGMT_SEND => {
                if cmd.slba >= geo.nsect {
                    return Completion::status(status::LBA_OUT_OF_RANGE);
                }
                if !cmd.slba.is_multiple_of(geo.zone_nsect) {
                    return Completion::status(status::INVALID_FIELD);
                }
                let index = (cmd.slba / geo.zone_nsect) as usize;
                match cmd.zm_action {
                    zsa::RESET => {
                        let zone = &mut self.zones[index];
                        zone.wp = zone.zslba;
                        zone.state = ZoneCondition::Empty;
                        let range = Self::byte_range(geo, zone.zslba, geo.zone_nsect);
                        self.store[range].fill(0);
                        Completion::ok(0)
                    }
                    zsa::FINISH => {
                        let zone = &mut self.zones[index];
                        zone.wp = zone.zslba + geo.zone_nsect;
                        zone.state = ZoneCondition::Full;
                        Completion::ok(0)
                    }
                    // Open and close carry no state in the three-state model.
                    zsa::OPEN | zsa::CLOSE => Completion::ok(0),
                    _ => Completion::status(status::INVALID_FIELD),
                }
            }
            Opcode::ZONE_MGMT_RECV => {
                if cmd.zra != zra::REPORT_ZONES {
                    return Completion::status(status::INVALID_FIELD);
                }
                wire::encode_zone_report(&self.zones, payload);
                Completion::ok(0)
            }
            Opcode::IDENTIFY => {
                if cmd.admin_cns != cns::NAMESPACE {
                    return Completion::status(status::INVALID_FIELD);
                }
                wire::encode_identify(geo, payload);
                Completion::ok(0)
            }
            Opcode::GET_LOG_PAGE => Completion::status(status::INVALID_LOG_PAGE),
            _ => Completion::status(status::INVALID_OPCODE),
        }
    }
}

fn advance(zone: &mut ZoneState, nblocks: u64, zone_nsect: u64) {
    zone.wp += nblocks;
    zone.state = if zone.wp == zone.zslba + zone_nsect {
        ZoneCondition::Full
    } else {
        ZoneCondition::Open
    };
}
