use std::fmt;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::backend::{
    global_registry, BackendDescriptor, BackendKind, BackendRegistry, SyncEngine,
};
use crate::buffer::Buffer;
use crate::cmdsets::build_identify_ns;
use crate::error::{IoError, Result};
use crate::ident::DeviceIdent;
use crate::options::{Options, BE_ASYNC, ENV_BACKEND};
use crate::ramdev;
use crate::types::Geometry;
use crate::wire;

static NEXT_DEVICE_ID: AtomicU64 = AtomicU64::new(1);
static OPEN_DEVICES: AtomicUsize = AtomicUsize::new(0);
pub(crate) static LIVE_QUEUES: AtomicUsize = AtomicUsize::new(0);

/// Process-wide count of open devices and live queues.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandleCounts {
    pub devices: usize,
    pub queues: usize,
}

pub fn handle_counts() -> HandleCounts {
    HandleCounts {
        devices: OPEN_DEVICES.load(Ordering::Acquire),
        queues: LIVE_QUEUES.load(Ordering::Acquire),
    }
}

struct DeviceState {
    sync: Option<Arc<dyn SyncEngine>>,
    queues: usize,
}

struct DeviceInner {
    id: u64,
    ident: DeviceIdent,
    opts: Options,
    geometry: Geometry,
    sync_backend: String,
    async_backend: BackendDescriptor,
    state: Mutex<DeviceState>,
}

impl Drop for DeviceInner {
    fn drop(&mut self) {
        let state = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        if state.sync.take().is_some() {
            OPEN_DEVICES.fetch_sub(1, Ordering::AcqRel);
        }
    }
}

/// An open device handle.
///
/// Cloning yields another handle to the same open device. The geometry is
/// read once at open through the backend's IDENTIFY path and never changes.
#[derive(Clone)]
pub struct Device {
    inner: Arc<DeviceInner>,
}

impl Device {
    /// Opens `uri` through the process-wide backend registry.
    ///
    /// When `opts` leaves `be.async` unset, the `CROSSIO_BE` environment
    /// variable supplies it.
    pub fn open(uri: &str, opts: &Options) -> Result<Device> {
        Device::open_ident(DeviceIdent::parse(uri)?, opts)
    }

    pub fn open_ident(ident: DeviceIdent, opts: &Options) -> Result<Device> {
        let mut opts = opts.clone();
        if opts.get(BE_ASYNC).is_none() {
            if let Ok(name) = std::env::var(ENV_BACKEND) {
                if !name.is_empty() {
                    opts.set(BE_ASYNC, name)?;
                }
            }
        }
        Device::open_with(global_registry(), ident, opts)
    }

    /// Opens against an explicit registry; `opts` is used as given.
    pub fn open_with(
        registry: &BackendRegistry,
        ident: DeviceIdent,
        opts: Options,
    ) -> Result<Device> {
        let sync_desc = registry.resolve(&ident, &opts, BackendKind::Sync)?;
        let async_desc = registry.resolve(&ident, &opts, BackendKind::Async)?.clone();
        let sync = sync_desc.open_sync(&ident, &opts)?;

        let mut id = vec![0u8; wire::IDENTIFY_NBYTES];
        let done = sync.exec(&build_identify_ns(), &mut id)?;
        if done.cpl.is_error() {
            return Err(IoError::io(format!(
                "identify failed with status {:#06x}",
                done.cpl.status
            )));
        }
        let geometry = wire::decode_identify(&id)?;
        geometry.validate()?;

        OPEN_DEVICES.fetch_add(1, Ordering::AcqRel);
        Ok(Device {
            inner: Arc::new(DeviceInner {
                id: NEXT_DEVICE_ID.fetch_add(1, Ordering::Relaxed),
                ident,
                opts,
                geometry,
                sync_backend: sync_desc.name().to_string(),
                async_backend: async_desc,
                state: Mutex::new(DeviceState {
                    sync: Some(sync),
                    queues: 0,
                }),
            }),
        })
    }

    fn state(&self) -> MutexGuard<'_, DeviceState> {
        self.inner.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn closed_error(&self) -> IoError {
        IoError::inval(format!("{} is closed", self.inner.ident.base_uri()))
    }

    /// Releases the backend. Fails with BUSY while queues exist; closing a
    /// closed device does nothing.
    pub fn close(&self) -> Result<()> {
        let mut state = self.state();
        if state.sync.is_none() {
            return Ok(());
        }
        if state.queues > 0 {
            return Err(IoError::busy(format!("{} live queue(s)", state.queues)));
        }
        state.sync = None;
        OPEN_DEVICES.fetch_sub(1, Ordering::AcqRel);
        Ok(())
    }

    pub fn is_open(&self) -> bool {
        self.state().sync.is_some()
    }

    pub fn geometry(&self) -> Result<Geometry> {
        if !self.is_open() {
            return Err(self.closed_error());
        }
        Ok(self.inner.geometry)
    }

    pub fn ident(&self) -> &DeviceIdent {
        &self.inner.ident
    }

    /// The options the device was opened with, after environment defaults.
    pub fn options(&self) -> &Options {
        &self.inner.opts
    }

    pub fn sync_backend(&self) -> &str {
        &self.inner.sync_backend
    }

    pub fn async_backend(&self) -> &str {
        self.inner.async_backend.name()
    }

    pub fn buffer_alignment(&self) -> usize {
        self.inner.geometry.buffer_alignment()
    }

    /// Zeroed payload buffer aligned to `max(lba_nbytes, 4096)`.
    pub fn buf_alloc(&self, nbytes: usize) -> Result<Buffer> {
        if !self.is_open() {
            return Err(self.closed_error());
        }
        Buffer::alloc(nbytes, self.buffer_alignment(), self.inner.id)
    }

    /// Returns a buffer. Buffers allocated by another device are refused.
    pub fn buf_free(&self, buf: Buffer) -> Result<()> {
        if buf.owner() != self.inner.id {
            return Err(IoError::inval("buffer was allocated by another device"));
        }
        drop(buf);
        Ok(())
    }

    pub(crate) fn sync_engine(&self) -> Result<Arc<dyn SyncEngine>> {
        self.state().sync.clone().ok_or_else(|| self.closed_error())
    }

    pub(crate) fn async_descriptor(&self) -> &BackendDescriptor {
        &self.inner.async_backend
    }

    pub(crate) fn attach_queue(&self) -> Result<()> {
        let mut state = self.state();
        if state.sync.is_none() {
            return Err(self.closed_error());
        }
        state.queues += 1;
        Ok(())
    }

    pub(crate) fn detach_queue(&self) {
        let mut state = self.state();
        state.queues = state.queues.saturating_sub(1);
    }

    pub fn same_device(&self, other: &Device) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

impl fmt::Debug for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Device")
            .field("ident", &self.inner.ident.to_string())
            .field("sync_backend", &self.inner.sync_backend)
            .field("async_backend", &self.async_backend())
            .field("geometry", &self.inner.geometry)
            .field("open", &self.is_open())
            .finish()
    }
}

/// Lists openable devices: registered ram namespaces and any NVMe namespace
/// block nodes under `/dev` this process may open, sorted by URI.
pub fn dev_enumerate() -> Vec<DeviceIdent> {
    let mut found: Vec<DeviceIdent> = ramdev::ram_names()
        .into_iter()
        .map(DeviceIdent::ram)
        .collect();
    if let Ok(entries) = std::fs::read_dir("/dev") {
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if is_nvme_namespace(name) && std::fs::File::open(entry.path()).is_ok() {
                found.push(DeviceIdent::file(entry.path()));
            }
        }
    }
    found.sort_by_key(|ident| ident.to_string());
    found
}

// nvme<ctrl>n<ns>, excluding partitions (nvme0n1p1).
fn is_nvme_namespace(name: &str) -> bool {
    let Some(rest) = name.strip_prefix("nvme") else {
        return false;
    };
    let Some((ctrl, ns)) = rest.split_once('n') else {
        return false;
    };
    !ctrl.is_empty()
        && !ns.is_empty()
        && ctrl.bytes().all(|b| b.is_ascii_digit())
        && ns.bytes().all(|b| b.is_ascii_digit())
}
