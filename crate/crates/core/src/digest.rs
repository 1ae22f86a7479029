use std::fmt;

use sha2::{Digest as _, Sha256};

use crate::buffer::Buffer;
use crate::device::Device;
use crate::error::Result;
use crate::queue::CommandContext;

/// SHA-256 over observable device state.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..16])
    }
}

/// Streams every logical block through synchronous READ commands and
/// hashes the result.
///
/// Works on any backend, so it equals the data half of
/// [`RamNamespace::snapshot`](crate::ramdev::RamNamespace::snapshot) when the
/// stored bytes are equal.
pub fn data_digest(dev: &Device) -> Result<Digest> {
    const CHUNK_BLOCKS: u64 = 256;
    let geo = dev.geometry()?;
    let mut hasher = Sha256::new();
    let mut buf: Option<Buffer> = None;
    let mut slba = 0;
    while slba < geo.nsect {
        let nblocks = CHUNK_BLOCKS.min(geo.nsect - slba);
        let nbytes = (nblocks * geo.lba_nbytes as u64) as usize;
        let buf = match &mut buf {
            Some(b) if b.nbytes() == nbytes => b,
            slot => slot.insert(dev.buf_alloc(nbytes)?),
        };
        let mut ctx = CommandContext::sync(dev);
        ctx.cmd = crate::cmdsets::build_read(slba, nblocks as u32)?;
        ctx.pass(Some(buf), nbytes)?;
        if ctx.cpl.is_error() {
            return Err(crate::error::IoError::io(format!(
                "read at lba {slba} failed with status {:#06x}",
                ctx.cpl.status
            )));
        }
        hasher.update(&buf[..]);
        slba += nblocks;
    }
    Ok(Digest(hasher.finalize().into()))
}
