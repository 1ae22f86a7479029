//! Command builders and status decoding for the NVM and zoned command sets.
//!
//! Builders take one-based block counts and produce the zero-based `nlb`
//! the wire type carries.

use std::fmt;

use crate::error::{IoError, Result};
use crate::types::{cns, status, zra, zsa, Command, Completion, Opcode};

pub const MAX_BLOCKS: u32 = 65536;

fn nlb(nblocks: u32) -> Result<u16> {
    if !(1..=MAX_BLOCKS).contains(&nblocks) {
        return Err(IoError::inval(format!(
            "block count {nblocks} outside 1..={MAX_BLOCKS}"
        )));
    }
    Ok((nblocks - 1) as u16)
}

fn transfer(opcode: Opcode, slba: u64, nblocks: u32) -> Result<Command> {
    let cmd = Command {
        opcode,
        slba,
        nlb: nlb(nblocks)?,
        ..Default::default()
    };
    cmd.check()?;
    Ok(cmd)
}

pub fn build_read(slba: u64, nblocks: u32) -> Result<Command> {
    transfer(Opcode::READ, slba, nblocks)
}

pub fn build_write(slba: u64, nblocks: u32) -> Result<Command> {
    transfer(Opcode::WRITE, slba, nblocks)
}

pub fn build_flush() -> Command {
    Command {
        opcode: Opcode::FLUSH,
        ..Default::default()
    }
}

pub fn build_identify(selector: u8) -> Command {
    Command {
        opcode: Opcode::IDENTIFY,
        admin_cns: selector,
        ..Default::default()
    }
}

/// Identify for the namespace data structure.
pub fn build_identify_ns() -> Command {
    build_identify(cns::NAMESPACE)
}

pub fn build_zone_append(zslba: u64, nblocks: u32) -> Result<Command> {
    transfer(Opcode::ZONE_APPEND, zslba, nblocks)
}

fn zone_send(zslba: u64, action: u8) -> Command {
    Command {
        opcode: Opcode::ZONE_MGMT_SEND,
        slba: zslba,
        zm_action: action,
        ..Default::default()
    }
}

pub fn build_zone_reset(zslba: u64) -> Command {
    zone_send(zslba, zsa::RESET)
}

pub fn build_zone_finish(zslba: u64) -> Command {
    zone_send(zslba, zsa::FINISH)
}

pub fn build_zone_report() -> Command {
    Command {
        opcode: Opcode::ZONE_MGMT_RECV,
        zra: zra::REPORT_ZONES,
        ..Default::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusClass {
    Success,
    Media,
    Range,
    Zone,
    Generic,
}

impl StatusClass {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusClass::Success => "success",
            StatusClass::Media => "media",
            StatusClass::Range => "range",
            StatusClass::Zone => "zone",
            StatusClass::Generic => "generic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusRecord {
    pub class: StatusClass,
    pub code: u16,
    pub text: String,
}

impl fmt::Display for StatusRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({:#06x}, {})",
            self.text,
            self.code,
            self.class.as_str()
        )
    }
}

fn describe(code: u16) -> Option<&'static str> {
    Some(match code {
        status::SUCCESS => "successful completion",
        status::INVALID_OPCODE => "invalid command opcode",
        status::INVALID_FIELD => "invalid field in command",
        status::DATA_TRANSFER_ERROR => "data transfer error",
        status::INTERNAL_ERROR => "internal error",
        status::LBA_OUT_OF_RANGE => "LBA out of range",
        status::INVALID_LOG_PAGE => "invalid log page",
        status::ZONE_BOUNDARY_ERROR => "zone boundary error",
        status::ZONE_IS_FULL => "zone is full",
        status::ZONE_IS_READ_ONLY => "zone is read only",
        status::ZONE_IS_OFFLINE => "zone is offline",
        status::ZONE_INVALID_WRITE => "zone invalid write",
        status::TOO_MANY_ACTIVE_ZONES => "too many active zones",
        status::TOO_MANY_OPEN_ZONES => "too many open zones",
        status::ZONE_INVALID_STATE_TRANSITION => "invalid zone state transition",
        status::WRITE_FAULT => "write fault",
        status::UNRECOVERED_READ_ERROR => "unrecovered read error",
        status::INTERNAL_PATH_ERROR => "internal path error",
        _ => return None,
    })
}

/// Classifies a completion status. Unknown codes are `Generic` with the raw
/// value kept in `code`.
pub fn decode_status(cpl: &Completion) -> StatusRecord {
    let code = cpl.status;
    let sct = status::sct(code);
    let sc = status::sc(code);
    let class = if code == status::SUCCESS {
        StatusClass::Success
    } else if code == status::LBA_OUT_OF_RANGE {
        StatusClass::Range
    } else if sct == 1 && (0xB8..=0xBF).contains(&sc) {
        StatusClass::Zone
    } else if sct == 2 {
        StatusClass::Media
    } else {
        StatusClass::Generic
    };
    let text = describe(code)
        .map(str::to_string)
        .unwrap_or_else(|| format!("status sct={sct:#x} sc={sc:#04x}"));
    StatusRecord { class, code, text }
}
