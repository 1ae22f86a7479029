//! The `xio` command-line tool.
//!
//! Every subcommand prints a single JSON document on stdout. Exit status is
//! 0 on success, 1 on a usage error and 2 on an I/O or device error.

pub mod bench;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::backend::{global_registry, BackendKind};
use crate::buffer::Buffer;
use crate::cmdsets::{
    build_read, build_write, build_zone_append, build_zone_report, build_zone_reset, decode_status,
};
use crate::device::{dev_enumerate, Device};
use crate::error::IoError;
use crate::ident::IdentClass;
use crate::options::{Options, BE_ASYNC, BE_SYNC};
use crate::queue::CommandContext;
use crate::types::{Command, GeometryKind};
use crate::wire;

pub use bench::{bench, BenchMode, BenchParams, BenchReport, Histogram};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;

// Largest single transfer issued by read/write.
const CHUNK_BLOCKS: u32 = 256;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] IoError),
    #[error("device returned status {status:#06x} ({class}): {text}")]
    Status {
        status: u16,
        class: &'static str,
        text: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Status { .. } => EXIT_IO,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "xio", version = crate::VERSION, about = "Command-centric storage I/O tool")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Args)]
struct DevArgs {
    /// Device URI: ram:<name>[?nsect=N&lbads=N&zones=N], file:<path>, or a path
    ident: String,
    /// Backend for both roles where it supports them
    #[arg(long)]
    be: Option<String>,
    /// Extra backend option, repeatable
    #[arg(long = "opt", value_name = "K=V")]
    opts: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// List openable devices (an ident given here is opened first)
    Enum { ident: Option<String> },
    /// Show device geometry and backends
    Info {
        #[command(flatten)]
        dev: DevArgs,
    },
    /// Read blocks to a file
    Read {
        #[command(flatten)]
        dev: DevArgs,
        #[arg(long, default_value_t = 0)]
        slba: u64,
        #[arg(long)]
        nblocks: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a file, zero-padded to whole blocks
    Write {
        #[command(flatten)]
        dev: DevArgs,
        #[arg(long, default_value_t = 0)]
        slba: u64,
        #[arg(long)]
        input: PathBuf,
    },
    /// Zone management
    Zone {
        #[command(subcommand)]
        action: ZoneCmd,
    },
    /// Queue-depth benchmark
    Bench {
        #[command(flatten)]
        dev: DevArgs,
        #[arg(long, default_value_t = 32)]
        qd: u32,
        #[arg(long, default_value_t = 1)]
        nblocks: u32,
        #[arg(long, default_value_t = 10_000)]
        ops: u64,
        #[arg(long, default_value = "randread")]
        mode: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include the submitted LBA sequence in the report
        #[arg(long)]
        trace: bool,
    },
}

#[derive(Debug, Subcommand)]
enum ZoneCmd {
    Report {
        #[command(flatten)]
        dev: DevArgs,
    },
    Reset {
        #[command(flatten)]
        dev: DevArgs,
        #[arg(long)]
        zslba: u64,
    },
    Append {
        #[command(flatten)]
        dev: DevArgs,
        #[arg(long)]
        zslba: u64,
        #[arg(long)]
        input: PathBuf,
    },
}

/// Runs `xio` with `args` (including the program name) and returns the
/// exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let rendered = e.render();
            if informational {
                let _ = write!(out, "{rendered}");
                return EXIT_OK;
            }
            let _ = write!(err, "{rendered}");
            return EXIT_USAGE;
        }
    };
    match execute(cli.cmd) {
        Ok(doc) => {
            let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
            if writeln!(out, "{text}").is_err() {
                return EXIT_IO;
            }
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "xio: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Cmd) -> CliResult<Value> {
    match cmd {
        Cmd::Enum { ident } => {
            let _keep = ident
                .map(|uri| Device::open(&uri, &Options::new()))
                .transpose()?;
            let devices: Vec<Value> = dev_enumerate()
                .into_iter()
                .map(|ident| {
                    let class = match ident.class() {
                        IdentClass::Ram => "ram",
                        IdentClass::File => "file",
                    };
                    json!({ "uri": ident.to_string(), "class": class })
                })
                .collect();
            Ok(json!({ "devices": devices }))
        }
        Cmd::Info { dev } => info(&open(&dev)?),
        Cmd::Read {
            dev,
            slba,
            nblocks,
            output,
        } => read(&open(&dev)?, slba, nblocks, &output),
        Cmd::Write { dev, slba, input } => write(&open(&dev)?, slba, &input),
        Cmd::Zone { action } => match action {
            ZoneCmd::Report { dev } => zone_report(&open(&dev)?),
            ZoneCmd::Reset { dev, zslba } => {
                let dev = open(&dev)?;
                pass(&dev, build_zone_reset(zslba), None, 0)?;
                Ok(json!({ "zslba": zslba, "action": "reset" }))
            }
            ZoneCmd::Append { dev, zslba, input } => zone_append(&open(&dev)?, zslba, &input),
        },
        Cmd::Bench {
            dev,
            qd,
            nblocks,
            ops,
            mode,
            seed,
            trace,
        } => {
            let mode: BenchMode = mode
                .parse()
                .map_err(|e: IoError| CliError::Usage(e.message))?;
            let dev = open(&dev)?;
            let report = bench(
                &dev,
                &BenchParams {
                    qd,
                    nblocks,
                    ops,
                    mode,
                    seed,
                    trace,
                },
            )?;
            Ok(serde_json::to_value(report).expect("report serializes"))
        }
    }
}

fn device_options(args: &DevArgs) -> CliResult<Options> {
    let mut opts = Options::new();
    if let Some(name) = &args.be {
        // A backend without a synchronous side (thrpool) only takes the async role.
        let sync_capable = global_registry()
            .get(name)
            .is_none_or(|desc| desc.supports(BackendKind::Sync));
        if sync_capable {
            opts.set(BE_SYNC, name.as_str())?;
        }
        opts.set(BE_ASYNC, name.as_str())?;
    }
    for pair in &args.opts {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--opt expects K=V, got {pair:?}")))?;
        opts.set(k, v).map_err(|e| CliError::Usage(e.message))?;
    }
    Ok(opts)
}

fn open(args: &DevArgs) -> CliResult<Device> {
    Ok(Device::open(&args.ident, &device_options(args)?)?)
}

fn pass(
    dev: &Device,
    cmd: Command,
    buf: Option<&mut Buffer>,
    nbytes: usize,
) -> CliResult<CommandContext> {
    let mut ctx = CommandContext::sync(dev);
    ctx.cmd = cmd;
    ctx.pass(buf, nbytes)?;
    if ctx.cpl.is_error() {
        let rec = decode_status(&ctx.cpl);
        return Err(CliError::Status {
            status: rec.code,
            class: rec.class.as_str(),
            text: rec.text,
        });
    }
    Ok(ctx)
}

fn info(dev: &Device) -> CliResult<Value> {
    let geo = dev.geometry()?;
    let kind = match geo.kind {
        GeometryKind::Conventional => "conventional",
        GeometryKind::Zoned => "zoned",
    };
    Ok(json!({
        "uri": dev.ident().to_string(),
        "kind": kind,
        "lba_nbytes": geo.lba_nbytes,
        "nsect": geo.nsect,
        "nbytes": geo.nbytes(),
        "nzones": geo.nzones,
        "zone_nsect": geo.zone_nsect,
        "be_sync": dev.sync_backend(),
        "be_async": dev.async_backend(),
        "version": crate::VERSION,
    }))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    let mut err = IoError::from(e);
    err.message = format!("{}: {}", path.display(), err.message);
    CliError::Io(err)
}

fn read(dev: &Device, slba: u64, nblocks: u64, output: &Path) -> CliResult<Value> {
    let lba = dev.geometry()?.lba_nbytes as usize;
    let mut file = std::fs::File::create(output).map_err(|e| io_err(output, e))?;
    let mut buf = dev.buf_alloc(CHUNK_BLOCKS as usize * lba)?;
    let mut done = 0u64;
    while done < nblocks {
        let n = (nblocks - done).min(CHUNK_BLOCKS as u64) as u32;
        let nbytes = n as usize * lba;
        pass(dev, build_read(slba + done, n)?, Some(&mut buf), nbytes)?;
        file.write_all(&buf[..nbytes])
            .map_err(|e| io_err(output, e))?;
        done += n as u64;
    }
    file.flush().map_err(|e| io_err(output, e))?;
    Ok(json!({ "slba": slba, "nblocks": nblocks, "nbytes": nblocks * lba as u64 }))
}

fn load_padded(path: &Path, lba: usize) -> CliResult<(Vec<u8>, u64)> {
    let data = std::fs::read(path).map_err(|e| io_err(path, e))?;
    if data.is_empty() {
        return Err(CliError::Usage(format!("{} is empty", path.display())));
    }
    let size = data.len() as u64;
    let mut data = data;
    data.resize(data.len().div_ceil(lba) * lba, 0);
    Ok((data, size))
}

fn write(dev: &Device, slba: u64, input: &Path) -> CliResult<Value> {
    let lba = dev.geometry()?.lba_nbytes as usize;
    let (data, size) = load_padded(input, lba)?;
    let mut buf = dev.buf_alloc(CHUNK_BLOCKS as usize * lba)?;
    let mut written = 0u64;
    for chunk in data.chunks(CHUNK_BLOCKS as usize * lba) {
        let n = (chunk.len() / lba) as u32;
        buf[..chunk.len()].copy_from_slice(chunk);
        pass(
            dev,
            build_write(slba + written, n)?,
            Some(&mut buf),
            chunk.len(),
        )?;
        written += n as u64;
    }
    Ok(json!({ "slba": slba, "nblocks": written, "nbytes": size }))
}

fn zone_report(dev: &Device) -> CliResult<Value> {
    let geo = dev.geometry()?;
    let nbytes = wire::zone_report_nbytes(geo.nzones.max(1));
    let mut buf = dev.buf_alloc(nbytes)?;
    pass(dev, build_zone_report(), Some(&mut buf), nbytes)?;
    let (nzones, zones) = wire::decode_zone_report(&buf[..nbytes])?;
    let zones: Vec<Value> = zones
        .iter()
        .map(|z| json!({ "zslba": z.zslba, "wp": z.wp, "state": z.state.as_str() }))
        .collect();
    Ok(json!({ "nzones": nzones, "zone_nsect": geo.zone_nsect, "zones": zones }))
}

fn zone_append(dev: &Device, zslba: u64, input: &Path) -> CliResult<Value> {
    let lba = dev.geometry()?.lba_nbytes as usize;
    let (data, size) = load_padded(input, lba)?;
    let nblocks = (data.len() / lba) as u32;
    let mut buf = dev.buf_alloc(data.len())?;
    buf[..data.len()].copy_from_slice(&data);
    let ctx = pass(
        dev,
        build_zone_append(zslba, nblocks)?,
        Some(&mut buf),
        data.len(),
    )?;
    Ok(json!({ "zslba": zslba, "alba": ctx.cpl.result, "nblocks": nblocks, "nbytes": size }))
}
