//! Synchronous positional I/O on a regular file or block node.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::Arc;

use super::{shim_translate, BackendDescriptor, Executed, FileOp, SyncEngine};
use crate::error::{ErrorCode, IoError, Result};
use crate::ident::{DeviceIdent, IdentClass};
use crate::options::{Options, FILE_LBADS};
use crate::types::{cns, status, Command, Completion, Geometry, Opcode};
use crate::wire;

pub const NAME: &str = "psync";

pub(crate) fn descriptor() -> BackendDescriptor {
    BackendDescriptor::new(NAME, &[IdentClass::File]).with_sync(|ident, opts| {
        let DeviceIdent::File { path } = ident else {
            return Err(IoError::inval("psync serves file identifiers only"));
        };
        Ok(Arc::new(FileEngine::open(path, opts)?) as Arc<dyn SyncEngine>)
    })
}

/// Geometry for a flat image: `file.lbads` (default 9) and
/// `nsect = floor(size / lba_nbytes)`.
pub fn file_geometry(size: u64, opts: &Options) -> Result<Geometry> {
    let lbads = opts.get_u64(FILE_LBADS)?.unwrap_or(9);
    if !(9..=16).contains(&lbads) {
        return Err(IoError::inval(format!(
            "{FILE_LBADS}={lbads} outside 9..=16"
        )));
    }
    let geo = Geometry::conventional(1 << lbads, size >> lbads);
    if geo.nsect == 0 {
        return Err(IoError::inval(format!(
            "file of {size} bytes holds no {}-byte block",
            geo.lba_nbytes
        )));
    }
    geo.validate()?;
    Ok(geo)
}

pub(crate) fn open_file(path: &Path) -> Result<File> {
    OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => IoError::new(
                ErrorCode::NoEnt,
                format!("{}: no such file", path.display()),
            ),
            _ => IoError::from(e),
        })
}

#[derive(Debug)]
pub struct FileEngine {
    file: File,
    geometry: Geometry,
}

impl FileEngine {
    pub fn open(path: &Path, opts: &Options) -> Result<FileEngine> {
        let mut file = open_file(path)?;
        let size = file.seek(SeekFrom::End(0))?;
        let geometry = file_geometry(size, opts)?;
        Ok(FileEngine { file, geometry })
    }
}

impl SyncEngine for FileEngine {
    fn exec(&self, cmd: &Command, payload: &mut [u8]) -> Result<Executed> {
        // Identify is synthesized from the file size.
        if cmd.opcode == Opcode::IDENTIFY {
            if cmd.admin_cns != cns::NAMESPACE {
                return Ok(Executed::now(Completion::status(status::INVALID_FIELD)));
            }
            wire::encode_identify(&self.geometry, payload);
            return Ok(Executed::now(Completion::ok(0)));
        }
        if cmd.opcode == Opcode::GET_LOG_PAGE {
            return Ok(Executed::now(Completion::status(status::INVALID_LOG_PAGE)));
        }
        let cpl = match shim_translate(cmd, &self.geometry)? {
            FileOp::Read { offset, len } => {
                self.file
                    .read_exact_at(&mut payload[..len], offset)
                    .map_err(|e| {
                        IoError::io(format!("read of {len} bytes at offset {offset}: {e}"))
                    })?;
                Completion::ok(0)
            }
            FileOp::Write { offset, len } => {
                self.file
                    .write_all_at(&payload[..len], offset)
                    .map_err(|e| {
                        IoError::io(format!("write of {len} bytes at offset {offset}: {e}"))
                    })?;
                Completion::ok(0)
            }
            FileOp::Sync => {
                self.file
                    .sync_data()
                    .map_err(|e| IoError::io(format!("sync: {e}")))?;
                Completion::ok(0)
            }
            FileOp::Reject(code) => Completion::status(code),
        };
        Ok(Executed::now(cpl))
    }
}
