//! Linux io_uring queue engine over a file image, using the same
//! command-to-file mapping as the psync backend.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Seek, SeekFrom};
use std::os::fd::AsRawFd;
use std::sync::OnceLock;

use io_uring::{opcode, squeue, types, IoUring};

use super::psync::{file_geometry, open_file};
use super::{shim_translate, FileOp, QueueEngine, QueueSetup, Reaped, Rejected, Submission};
use crate::error::{IoError, Result};
use crate::ident::DeviceIdent;
use crate::types::{Completion, Geometry};

pub(super) fn probe() -> bool {
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| IoUring::new(2).is_ok())
}

pub(super) fn open(setup: &QueueSetup<'_>) -> Result<Box<dyn QueueEngine>> {
    let DeviceIdent::File { path } = setup.ident else {
        return Err(IoError::inval("io_uring serves file identifiers only"));
    };
    let mut file = open_file(path)?;
    let size = file.seek(SeekFrom::End(0))?;
    let geometry = file_geometry(size, setup.opts)?;
    let ring = IoUring::new(setup.capacity.max(2))?;
    Ok(Box::new(UringQueue {
        ring,
        file,
        geometry,
        inflight: HashMap::new(),
        ready: Vec::new(),
    }))
}

struct UringQueue {
    ring: IoUring,
    file: File,
    geometry: Geometry,
    inflight: HashMap<u64, (Submission, usize)>,
    ready: Vec<Reaped>,
}

// The ring is only touched through &mut self.
unsafe impl Send for UringQueue {}

impl UringQueue {
    fn collect(&mut self) {
        let completed: Vec<(u64, i32)> = self
            .ring
            .completion()
            .map(|cqe| (cqe.user_data(), cqe.result()))
            .collect();
        for (tag, res) in completed {
            let Some((sub, expected)) = self.inflight.remove(&tag) else {
                continue;
            };
            let result = if res < 0 {
                Err(IoError::io(format!(
                    "io_uring: {}",
                    std::io::Error::from_raw_os_error(-res)
                )))
            } else if (res as usize) < expected {
                Err(IoError::io(format!(
                    "io_uring: short transfer {res} of {expected}"
                )))
            } else {
                Ok(super::Executed::now(Completion::ok(0)))
            };
            self.ready.push(Reaped::from_exec(sub, result));
        }
    }
}

impl QueueEngine for UringQueue {
    fn submit(&mut self, mut sub: Submission) -> std::result::Result<(), Rejected> {
        let op = match shim_translate(&sub.cmd, &self.geometry) {
            Ok(op) => op,
            Err(err) => return Err(Rejected { err, sub }),
        };
        let fd = types::Fd(self.file.as_raw_fd());
        let (entry, expected): (squeue::Entry, usize) = match op {
            FileOp::Reject(code) => {
                self.ready.push(Reaped {
                    tag: sub.tag,
                    cpl: Completion::status(code),
                    payload: sub.payload,
                    transport: None,
                });
                return Ok(());
            }
            FileOp::Read { offset, len } => {
                let ptr = sub.data_mut().as_mut_ptr();
                (
                    opcode::Read::new(fd, ptr, len as u32)
                        .offset(offset)
                        .build(),
                    len,
                )
            }
            FileOp::Write { offset, len } => {
                let ptr = sub.data_mut().as_ptr();
                (
                    opcode::Write::new(fd, ptr, len as u32)
                        .offset(offset)
                        .build(),
                    len,
                )
            }
            FileOp::Sync => (
                opcode::Fsync::new(fd)
                    .flags(types::FsyncFlags::DATASYNC)
                    .build(),
                0,
            ),
        };
        let tag = sub.tag;
        // SAFETY: the payload buffer is heap memory owned by `sub`, which
        // stays in `inflight` until the matching completion is reaped.
        let pushed = unsafe { self.ring.submission().push(&entry.user_data(tag)) };
        if pushed.is_err() {
            return Err(Rejected {
                err: IoError::again("io_uring submission queue full"),
                sub,
            });
        }
        self.inflight.insert(tag, (sub, expected));
        // The entry is already on the SQ; a failed enter is retried by the
        // next submit or reap.
        if let Err(e) = self.ring.submit() {
            log::debug!("io_uring enter failed, deferring: {e}");
        }
        Ok(())
    }

    fn reap(&mut self, wait: bool, out: &mut Vec<Reaped>) -> Result<()> {
        self.collect();
        if wait && self.ready.is_empty() && !self.inflight.is_empty() {
            self.ring.submit_and_wait(1)?;
            self.collect();
        }
        out.append(&mut self.ready);
        Ok(())
    }

    fn outstanding(&self) -> usize {
        self.inflight.len() + self.ready.len()
    }
}

impl Drop for UringQueue {
    fn drop(&mut self) {
        while !self.inflight.is_empty() {
            if self.ring.submit_and_wait(1).is_err() {
                break;
            }
            self.collect();
        }
    }
}
