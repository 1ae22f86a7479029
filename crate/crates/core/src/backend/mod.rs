//! Backend contract and registry.
//!
//! A backend supplies a synchronous engine (one blocking `exec` per command),
//! an asynchronous queue engine, or both. The registry holds backends in
//! priority order and resolves which one serves a device: an explicit
//! option always wins, otherwise the first backend that handles the
//! identifier's class and whose probe passes.

use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use crate::buffer::Buffer;
use crate::error::{ErrorCode, IoError, Result};
use crate::ident::{DeviceIdent, IdentClass};
use crate::options::{Options, BE_ASYNC, BE_SYNC};
use crate::types::{Command, Completion, Geometry};

pub mod psync;
pub mod ram;
pub mod shim;
pub mod thrpool;
#[cfg(all(feature = "io_uring", target_os = "linux"))]
mod uring;

pub use shim::{shim_translate, FileOp};

/// Result of synchronous execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executed {
    pub cpl: Completion,
    /// How long the completion stays invisible after execution.
    pub delay: Duration,
}

impl Executed {
    pub fn now(cpl: Completion) -> Executed {
        Executed {
            cpl,
            delay: Duration::ZERO,
        }
    }
}

/// Blocking command execution against one opened target.
///
/// Callers validate commands and payload sizes before calling `exec`; the
/// payload slice is exactly the transfer size. An `Err` means the transport
/// failed, not the device.
pub trait SyncEngine: Send + Sync {
    fn exec(&self, cmd: &Command, payload: &mut [u8]) -> Result<Executed>;
}

/// One command handed to a queue engine.
#[derive(Debug)]
pub struct Submission {
    pub tag: u64,
    pub cmd: Command,
    pub payload: Option<Buffer>,
    pub nbytes: usize,
}

impl Submission {
    /// The transfer region of the payload, empty when there is none.
    pub fn data_mut(&mut self) -> &mut [u8] {
        match &mut self.payload {
            Some(buf) => &mut buf[..self.nbytes],
            None => &mut [],
        }
    }
}

/// A finished submission returned by [`QueueEngine::reap`].
#[derive(Debug)]
pub struct Reaped {
    pub tag: u64,
    pub cpl: Completion,
    pub payload: Option<Buffer>,
    /// Set when the transport failed; `cpl` then carries a path error.
    pub transport: Option<IoError>,
}

impl Reaped {
    pub(crate) fn from_exec(sub: Submission, result: Result<Executed>) -> Reaped {
        let (cpl, transport) = match result {
            Ok(done) => (done.cpl, None),
            Err(err) => (
                Completion::status(crate::types::status::INTERNAL_PATH_ERROR),
                Some(err),
            ),
        };
        Reaped {
            tag: sub.tag,
            cpl,
            payload: sub.payload,
            transport,
        }
    }
}

/// Submission refused by an engine; the submission is handed back intact.
#[derive(Debug)]
pub struct Rejected {
    pub err: IoError,
    pub sub: Submission,
}

/// Asynchronous engine behind a [`Queue`](crate::Queue).
pub trait QueueEngine: Send {
    fn submit(&mut self, sub: Submission) -> std::result::Result<(), Rejected>;

    /// Moves finished submissions into `out`. With `wait`, blocks until at
    /// least one is available unless nothing is outstanding.
    fn reap(&mut self, wait: bool, out: &mut Vec<Reaped>) -> Result<()>;

    /// Submissions accepted but not yet returned by `reap`.
    fn outstanding(&self) -> usize;
}

/// Everything an async backend gets when a queue is created.
pub struct QueueSetup<'a> {
    pub ident: &'a DeviceIdent,
    pub opts: &'a Options,
    pub geometry: Geometry,
    pub capacity: u32,
    /// The device's synchronous engine, for backends layered on top of it.
    pub sync: Arc<dyn SyncEngine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackendKind {
    Sync,
    Async,
}

impl BackendKind {
    fn option_key(self) -> &'static str {
        match self {
            BackendKind::Sync => BE_SYNC,
            BackendKind::Async => BE_ASYNC,
        }
    }
}

pub type Probe = Arc<dyn Fn() -> bool + Send + Sync>;
pub type SyncOpener =
    Arc<dyn Fn(&DeviceIdent, &Options) -> Result<Arc<dyn SyncEngine>> + Send + Sync>;
pub type AsyncOpener = Arc<dyn Fn(&QueueSetup<'_>) -> Result<Box<dyn QueueEngine>> + Send + Sync>;

#[derive(Clone)]
pub struct BackendDescriptor {
    name: String,
    classes: Vec<IdentClass>,
    probe: Probe,
    sync: Option<SyncOpener>,
    async_: Option<AsyncOpener>,
}

impl BackendDescriptor {
    pub fn new(name: impl Into<String>, classes: &[IdentClass]) -> BackendDescriptor {
        BackendDescriptor {
            name: name.into(),
            classes: classes.to_vec(),
            probe: Arc::new(|| true),
            sync: None,
            async_: None,
        }
    }

    /// Availability check; must be free of side effects.
    pub fn with_probe(mut self, probe: impl Fn() -> bool + Send + Sync + 'static) -> Self {
        self.probe = Arc::new(probe);
        self
    }

    pub fn with_sync(
        mut self,
        open: impl Fn(&DeviceIdent, &Options) -> Result<Arc<dyn SyncEngine>> + Send + Sync + 'static,
    ) -> Self {
        self.sync = Some(Arc::new(open));
        self
    }

    pub fn with_async(
        mut self,
        open: impl Fn(&QueueSetup<'_>) -> Result<Box<dyn QueueEngine>> + Send + Sync + 'static,
    ) -> Self {
        self.async_ = Some(Arc::new(open));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[IdentClass] {
        &self.classes
    }

    pub fn supports(&self, kind: BackendKind) -> bool {
        match kind {
            BackendKind::Sync => self.sync.is_some(),
            BackendKind::Async => self.async_.is_some(),
        }
    }

    pub fn serves(&self, class: IdentClass) -> bool {
        self.classes.contains(&class)
    }

    pub fn probe(&self) -> bool {
        (self.probe)()
    }

    pub(crate) fn open_sync(
        &self,
        ident: &DeviceIdent,
        opts: &Options,
    ) -> Result<Arc<dyn SyncEngine>> {
        let open = self.sync.as_ref().ok_or_else(|| {
            IoError::inval(format!(
                "backend {} has no synchronous interface",
                self.name
            ))
        })?;
        open(ident, opts)
    }

    pub(crate) fn open_queue(&self, setup: &QueueSetup<'_>) -> Result<Box<dyn QueueEngine>> {
        let open = self.async_.as_ref().ok_or_else(|| {
            IoError::inval(format!(
                "backend {} has no asynchronous interface",
                self.name
            ))
        })?;
        open(setup)
    }
}

impl fmt::Debug for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendDescriptor")
            .field("name", &self.name)
            .field("classes", &self.classes)
            .field("sync", &self.sync.is_some())
            .field("async", &self.async_.is_some())
            .finish()
    }
}

/// Backends in priority order, highest first.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    entries: Vec<BackendDescriptor>,
}

impl BackendRegistry {
    pub fn new() -> BackendRegistry {
        BackendRegistry::default()
    }

    /// The built-in set: `ram`, `io_uring`, `psync`, `thrpool`.
    pub fn builtin() -> BackendRegistry {
        let mut registry = BackendRegistry::new();
        for desc in [
            ram::descriptor(),
            native_descriptor(),
            psync::descriptor(),
            thrpool::descriptor(),
        ] {
            registry.register(desc).expect("builtin names are unique");
        }
        registry
    }

    /// Appends at the lowest priority.
    pub fn register(&mut self, desc: BackendDescriptor) -> Result<()> {
        let at = self.entries.len();
        self.register_at(at, desc)
    }

    /// Inserts at `index` (0 is highest priority), clamped to the end.
    pub fn register_at(&mut self, index: usize, desc: BackendDescriptor) -> Result<()> {
        if self.get(desc.name()).is_some() {
            return Err(IoError::inval(format!(
                "backend {} already registered",
                desc.name()
            )));
        }
        let index = index.min(self.entries.len());
        self.entries.insert(index, desc);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BackendDescriptor> {
        self.entries.iter().find(|d| d.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Picks the backend of `kind` for `ident`.
    ///
    /// A backend named in `opts` (`be.sync` / `be.async`) is binding: unknown
    /// names give NODEV, a failing probe gives NOSYS, and an available
    /// backend that cannot serve this identifier or role gives INVAL. Without a name, the
    /// first eligible backend in priority order is chosen, or NOENT.
    pub fn resolve(
        &self,
        ident: &DeviceIdent,
        opts: &Options,
        kind: BackendKind,
    ) -> Result<&BackendDescriptor> {
        let class = ident.class();
        if let Some(name) = opts.get(kind.option_key()) {
            let desc = self.get(name).ok_or_else(|| {
                IoError::new(
                    ErrorCode::NoDev,
                    format!("backend {name:?} is not registered"),
                )
            })?;
            if !desc.probe() {
                return Err(IoError::new(
                    ErrorCode::NoSys,
                    format!("backend {name} is not available on this system"),
                ));
            }
            if !desc.supports(kind) || !desc.serves(class) {
                return Err(IoError::inval(format!(
                    "backend {name} cannot serve {} as {kind:?}",
                    ident.base_uri()
                )));
            }
            return Ok(desc);
        }
        self.entries
            .iter()
            .find(|d| d.supports(kind) && d.serves(class) && d.probe())
            .ok_or_else(|| {
                IoError::new(
                    ErrorCode::NoEnt,
                    format!("no {kind:?} backend available for {}", ident.base_uri()),
                )
            })
    }
}

/// The process-wide registry used by [`Device::open`](crate::Device::open).
pub fn global_registry() -> &'static BackendRegistry {
    static REGISTRY: OnceLock<BackendRegistry> = OnceLock::new();
    REGISTRY.get_or_init(BackendRegistry::builtin)
}

/// Name of the optional kernel-native async backend.
pub const NATIVE_BACKEND: &str = "io_uring";

/// Whether the native backend was compiled in and works on this host.
pub fn native_available() -> bool {
    #[cfg(all(feature = "io_uring", target_os = "linux"))]
    {
        uring::probe()
    }
    #[cfg(not(all(feature = "io_uring", target_os = "linux")))]
    {
        false
    }
}

fn native_descriptor() -> BackendDescriptor {
    let desc =
        BackendDescriptor::new(NATIVE_BACKEND, &[IdentClass::File]).with_probe(native_available);
    #[cfg(all(feature = "io_uring", target_os = "linux"))]
    let desc = desc.with_async(uring::open);
    #[cfg(not(all(feature = "io_uring", target_os = "linux")))]
    let desc = desc.with_async(|_| {
        Err(IoError::new(
            ErrorCode::NoSys,
            "built without the io_uring feature",
        ))
    });
    desc
}
