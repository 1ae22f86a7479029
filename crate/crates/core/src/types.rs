//! Command, completion and geometry vocabulary shared by every backend.

use std::fmt;

use crate::error::{IoError, Result};

/// Which NVMe queue family an opcode belongs to. Admin and I/O opcodes
/// share a numeric space (`0x02` is both READ and GET_LOG_PAGE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CommandSet {
    #[default]
    Io,
    Admin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Opcode {
    pub set: CommandSet,
    pub value: u8,
}

impl Opcode {
    pub const FLUSH: Opcode = Opcode::io(0x00);
    pub const WRITE: Opcode = Opcode::io(0x01);
    pub const READ: Opcode = Opcode::io(0x02);
    pub const ZONE_MGMT_SEND: Opcode = Opcode::io(0x79);
    pub const ZONE_MGMT_RECV: Opcode = Opcode::io(0x7A);
    pub const ZONE_APPEND: Opcode = Opcode::io(0x7D);

    pub const GET_LOG_PAGE: Opcode = Opcode::admin(0x02);
    pub const IDENTIFY: Opcode = Opcode::admin(0x06);

    const KNOWN: [Opcode; 8] = [
        Opcode::FLUSH,
        Opcode::WRITE,
        Opcode::READ,
        Opcode::ZONE_MGMT_SEND,
        Opcode::ZONE_MGMT_RECV,
        Opcode::ZONE_APPEND,
        Opcode::GET_LOG_PAGE,
        Opcode::IDENTIFY,
    ];

    pub const fn io(value: u8) -> Opcode {
        Opcode {
            set: CommandSet::Io,
            value,
        }
    }

    pub const fn admin(value: u8) -> Opcode {
        Opcode {
            set: CommandSet::Admin,
            value,
        }
    }

    pub fn is_known(self) -> bool {
        Self::KNOWN.contains(&self)
    }

    /// READ, WRITE and ZONE_APPEND move exactly `(nlb + 1)` blocks.
    pub fn is_block_transfer(self) -> bool {
        self == Opcode::READ || self == Opcode::WRITE || self == Opcode::ZONE_APPEND
    }

    pub fn is_zoned_only(self) -> bool {
        self == Opcode::ZONE_MGMT_SEND
            || self == Opcode::ZONE_MGMT_RECV
            || self == Opcode::ZONE_APPEND
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::FLUSH => "FLUSH",
            Opcode::WRITE => "WRITE",
            Opcode::READ => "READ",
            Opcode::ZONE_MGMT_SEND => "ZONE_MGMT_SEND",
            Opcode::ZONE_MGMT_RECV => "ZONE_MGMT_RECV",
            Opcode::ZONE_APPEND => "ZONE_APPEND",
            Opcode::GET_LOG_PAGE => "GET_LOG_PAGE",
            Opcode::IDENTIFY => "IDENTIFY",
            _ => "UNKNOWN",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(0x{:02x})", self.name(), self.value)
    }
}

/// Zone management send actions.
pub mod zsa {
    pub const CLOSE: u8 = 0x01;
    pub const FINISH: u8 = 0x02;
    pub const OPEN: u8 = 0x03;
    pub const RESET: u8 = 0x04;
}

/// Zone management receive actions.
pub mod zra {
    pub const REPORT_ZONES: u8 = 0x00;
}

/// Identify selectors.
pub mod cns {
    pub const NAMESPACE: u8 = 0x00;
}

/// An NVMe-style command record.
///
/// `nlb` is zero-based: a value of `n` transfers `n + 1` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Command {
    pub opcode: Opcode,
    pub nsid: u32,
    pub slba: u64,
    pub nlb: u16,
    pub admin_cns: u8,
    pub zm_action: u8,
    pub zra: u8,
}

impl Command {
    pub fn nblocks(&self) -> u64 {
        self.nlb as u64 + 1
    }

    /// Checks the LBA arithmetic invariant for block-transfer opcodes.
    pub fn check(&self) -> Result<()> {
        if self.opcode.is_block_transfer() && self.slba.checked_add(self.nblocks()).is_none() {
            return Err(IoError::inval(format!(
                "slba {:#x} + {} blocks overflows",
                self.slba,
                self.nblocks()
            )));
        }
        Ok(())
    }

    /// Submission-time checks shared by every backend: known opcode,
    /// opcode allowed for the namespace kind, and payload size.
    pub fn validate_for(&self, geo: &Geometry, nbytes: usize) -> Result<()> {
        if !self.opcode.is_known() {
            return Err(IoError::inval(format!(
                "unsupported opcode {}",
                self.opcode
            )));
        }
        self.check()?;
        if self.opcode.is_zoned_only() && !geo.is_zoned() {
            return Err(IoError::inval(format!(
                "{} requires a zoned namespace",
                self.opcode.name()
            )));
        }
        let op = self.opcode;
        if op.is_block_transfer() {
            let expected = self.nblocks() * geo.lba_nbytes as u64;
            if nbytes as u64 != expected {
                return Err(IoError::inval(format!(
                    "{} of {} blocks needs {expected} bytes, got {nbytes}",
                    op.name(),
                    self.nblocks()
                )));
            }
        } else if op == Opcode::FLUSH || op == Opcode::ZONE_MGMT_SEND {
            if nbytes != 0 {
                return Err(IoError::inval(format!("{} carries no payload", op.name())));
            }
        } else if op == Opcode::ZONE_MGMT_RECV {
            if nbytes < crate::wire::ZONE_REPORT_HEADER {
                return Err(IoError::inval("zone report payload too small"));
            }
        } else if op == Opcode::IDENTIFY {
            if nbytes < crate::wire::IDENTIFY_NBYTES {
                return Err(IoError::inval(format!(
                    "identify needs {} bytes",
                    crate::wire::IDENTIFY_NBYTES
                )));
            }
        } else if op == Opcode::GET_LOG_PAGE && nbytes == 0 {
            return Err(IoError::inval("log page payload is empty"));
        }
        Ok(())
    }
}

/// NVMe status values, encoded as `(status code type << 8) | status code`.
pub mod status {
    pub const SUCCESS: u16 = 0x0000;
    pub const INVALID_OPCODE: u16 = 0x0001;
    pub const INVALID_FIELD: u16 = 0x0002;
    pub const DATA_TRANSFER_ERROR: u16 = 0x0004;
    pub const INTERNAL_ERROR: u16 = 0x0006;
    pub const LBA_OUT_OF_RANGE: u16 = 0x0080;
    pub const INVALID_LOG_PAGE: u16 = 0x0109;

    pub const ZONE_BOUNDARY_ERROR: u16 = 0x01B8;
    pub const ZONE_IS_FULL: u16 = 0x01B9;
    pub const ZONE_IS_READ_ONLY: u16 = 0x01BA;
    pub const ZONE_IS_OFFLINE: u16 = 0x01BB;
    pub const ZONE_INVALID_WRITE: u16 = 0x01BC;
    pub const TOO_MANY_ACTIVE_ZONES: u16 = 0x01BD;
    pub const TOO_MANY_OPEN_ZONES: u16 = 0x01BE;
    pub const ZONE_INVALID_STATE_TRANSITION: u16 = 0x01BF;

    pub const WRITE_FAULT: u16 = 0x0280;
    pub const UNRECOVERED_READ_ERROR: u16 = 0x0281;

    /// Used when the host-side transport fails after a command was accepted.
    pub const INTERNAL_PATH_ERROR: u16 = 0x0300;

    pub fn sct(status: u16) -> u8 {
        ((status >> 8) & 0x7) as u8
    }

    pub fn sc(status: u16) -> u8 {
        (status & 0xff) as u8
    }
}

/// Device-reported outcome of one command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Completion {
    pub status: u16,
    pub result: u64,
}

impl Completion {
    pub const fn ok(result: u64) -> Completion {
        Completion { status: 0, result }
    }

    pub const fn status(status: u16) -> Completion {
        Completion { status, result: 0 }
    }

    pub fn is_error(&self) -> bool {
        status_is_error(self)
    }
}

pub fn status_is_error(cpl: &Completion) -> bool {
    cpl.status != status::SUCCESS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeometryKind {
    Conventional,
    Zoned,
}

impl GeometryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GeometryKind::Conventional => "conventional",
            GeometryKind::Zoned => "zoned",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Geometry {
    pub lba_nbytes: u32,
    pub nsect: u64,
    pub nzones: u32,
    pub zone_nsect: u64,
    pub kind: GeometryKind,
}

impl Geometry {
    pub fn conventional(lba_nbytes: u32, nsect: u64) -> Geometry {
        Geometry {
            lba_nbytes,
            nsect,
            nzones: 0,
            zone_nsect: 0,
            kind: GeometryKind::Conventional,
        }
    }

    pub fn zoned(lba_nbytes: u32, nzones: u32, zone_nsect: u64) -> Geometry {
        Geometry {
            lba_nbytes,
            nsect: nzones as u64 * zone_nsect,
            nzones,
            zone_nsect,
            kind: GeometryKind::Zoned,
        }
    }

    pub fn is_zoned(&self) -> bool {
        self.kind == GeometryKind::Zoned
    }

    pub fn nbytes(&self) -> u64 {
        self.nsect * self.lba_nbytes as u64
    }

    /// Alignment every payload buffer for this geometry must satisfy.
    pub fn buffer_alignment(&self) -> usize {
        (self.lba_nbytes as usize).max(4096)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lba_nbytes < 512 || !self.lba_nbytes.is_power_of_two() {
            return Err(IoError::inval(format!(
                "lba_nbytes {} is not a power of two >= 512",
                self.lba_nbytes
            )));
        }
        if self.nsect == 0 {
            return Err(IoError::inval("nsect must be positive"));
        }
        if self.nsect.checked_mul(self.lba_nbytes as u64).is_none() {
            return Err(IoError::inval("capacity overflows"));
        }
        match self.kind {
            GeometryKind::Conventional => {
                if self.nzones != 0 || self.zone_nsect != 0 {
                    return Err(IoError::inval("conventional geometry carries zones"));
                }
            }
            GeometryKind::Zoned => {
                if self.nzones == 0 || self.zone_nsect == 0 {
                    return Err(IoError::inval("zoned geometry needs zones"));
                }
                if self.nzones as u64 * self.zone_nsect != self.nsect {
                    return Err(IoError::inval("nzones * zone_nsect != nsect"));
                }
            }
        }
        Ok(())
    }
}
