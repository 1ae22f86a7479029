//! Maps NVM commands onto positional file I/O for non-NVMe targets.
//!
//! The file is treated as a flat LBA image with no header.

use crate::error::{IoError, Result};
use crate::types::{status, Command, Geometry, Opcode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileOp {
    Read {
        offset: u64,
        len: usize,
    },
    Write {
        offset: u64,
        len: usize,
    },
    /// Durability sync of the whole file.
    Sync,
    /// Do not touch the file; complete with this status.
    Reject(u16),
}

pub fn shim_translate(cmd: &Command, geo: &Geometry) -> Result<FileOp> {
    let lbs = geo.lba_nbytes as u64;
    let span = |cmd: &Command| -> Option<(u64, usize)> {
        let end = cmd.slba.checked_add(cmd.nblocks())?;
        if end > geo.nsect {
            return None;
        }
        Some((cmd.slba * lbs, (cmd.nblocks() * lbs) as usize))
    };
    match cmd.opcode {
        Opcode::READ => Ok(span(cmd)
            .map_or(FileOp::Reject(status::LBA_OUT_OF_RANGE), |(offset, len)| {
                FileOp::Read { offset, len }
            })),
        Opcode::WRITE => Ok(span(cmd)
            .map_or(FileOp::Reject(status::LBA_OUT_OF_RANGE), |(offset, len)| {
                FileOp::Write { offset, len }
            })),
        Opcode::FLUSH => Ok(FileOp::Sync),
        other => Err(IoError::inval(format!(
            "{other} cannot be mapped to file I/O"
        ))),
    }
}
