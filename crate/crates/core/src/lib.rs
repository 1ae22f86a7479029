//! Command-centric storage I/O.
//!
//! A [`Device`] is opened from a URI (`ram:<name>?nsect=..`, `file:<path>`,
//! or a bare path) and is driven by submitting NVMe-style [`Command`]s,
//! either synchronously through a [`CommandContext`] or asynchronously
//! through a [`Queue`]. Backends are chosen per device from a registry;
//! `ram` is an in-process NVMe namespace emulator with optional zoned
//! geometry, fault injection and latency modelling.
//!
//! ```
//! use crossio::{build_write, CommandContext, Device, Options};
//!
//! let dev = Device::open("ram:doc-example?nsect=64", &Options::new()).unwrap();
//! let mut buf = dev.buf_alloc(512).unwrap();
//! buf[..5].copy_from_slice(b"hello");
//! let mut ctx = CommandContext::sync(&dev);
//! ctx.cmd = build_write(0, 1).unwrap();
//! ctx.pass(Some(&mut buf), 512).unwrap();
//! assert!(!ctx.cpl.is_error());
//! ```

pub mod backend;
pub mod buffer;
pub mod cli;
pub mod cmdsets;
pub mod device;
pub mod digest;
pub mod error;
pub mod ident;
pub mod options;
pub mod queue;
pub mod ramdev;
pub mod types;
pub mod wire;

pub use backend::{global_registry, native_available, BackendKind, BackendRegistry};
pub use buffer::Buffer;
pub use cmdsets::{
    build_flush, build_identify, build_identify_ns, build_read, build_write, build_zone_append,
    build_zone_finish, build_zone_report, build_zone_reset, decode_status, StatusClass,
    StatusRecord,
};
pub use device::{dev_enumerate, handle_counts, Device, HandleCounts};
pub use digest::{data_digest, Digest};
pub use error::{ErrorCode, IoError, Result};
pub use ident::DeviceIdent;
pub use options::{options_default, options_parse, Options};
pub use queue::{CmdMode, CommandContext, CtxHandle, Queue, QueueStats};
pub use ramdev::{Fault, FaultSchedule, LatencyModel, RamNamespace};
pub use types::{status, Command, Completion, Geometry, GeometryKind, Opcode};

/// Library version, as reported by `xio info` and language bindings.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn version() -> &'static str {
    VERSION
}
