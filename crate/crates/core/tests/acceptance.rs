//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test --test acceptance`.

mod common;

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use crossio::backend::{BackendDescriptor, NATIVE_BACKEND};
use crossio::cli::run;
use crossio::ident::IdentClass;
use crossio::ramdev::ram_lookup;
use crossio::wire::{decode_zone_report, ZoneCondition};
use crossio::{
    build_read, build_write, data_digest, decode_status, native_available, BackendRegistry,
    Completion, Device, DeviceIdent, ErrorCode, LatencyModel, Options, Queue, StatusClass,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ram(nsect: u64, extra: &str) -> (Device, String) {
    let name = unique("acc");
    let dev = Device::open(&format!("ram:{name}?nsect={nsect}{extra}"), &Options::new()).unwrap();
    (dev, name)
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure!(took < limit, "took {took:.2?}, limit {limit:?}");
    Ok(took)
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    for seed in [101u64, 202, 303] {
        let (dev, _) = ram(8192, "");
        let mut model = Model::conventional(512, 8192);
        let mut gen = Generator::new(seed);
        for i in 0..10_000 {
            let op = gen.block_op(&model);
            let want = model.apply(&op);
            let got = run_sync(&dev, &op);
            ensure!(
                got == want,
                "seed {seed} op {i} {op:?}: got status {:#06x}, model {:#06x}",
                got.status,
                want.status
            );
        }
        ensure!(
            data_digest(&dev).unwrap().0 == model.data_digest(),
            "seed {seed}: final digest differs"
        );
    }
    Ok(format!(
        "3 seeds x 10000 commands in {:.2?}",
        within(start, Duration::from_secs(30))?
    ))
}

fn backend_equivalence() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    for seed in [101u64, 202, 303] {
        let mut model = Model::conventional(512, 8192);
        let (ops, _) = Generator::new(seed).stream(&mut model, 10_000, false);

        let (ram_dev, _) = ram(8192, "");
        let img_a = file_image(dir.path(), &format!("psync-{seed}.img"), 8192);
        let img_b = file_image(dir.path(), &format!("pool-{seed}.img"), 8192);
        let psync = Device::open(img_a.to_str().unwrap(), &Options::new()).unwrap();
        let pool_opts = Options::new().with("be.async", "thrpool").unwrap();
        let pool = Device::open(img_b.to_str().unwrap(), &pool_opts).unwrap();

        let a = run_sync_all(&ram_dev, &ops);
        let b = run_sync_all(&psync, &ops);
        let c = run_queue(&pool, &ops, 32, true);
        for i in 0..ops.len() {
            let classes = [
                status_class(a[i].status),
                status_class(b[i].status),
                status_class(c[i].status),
            ];
            ensure!(
                classes[0] == classes[1] && classes[1] == classes[2],
                "seed {seed} op {i}: classes {classes:?}"
            );
            ensure!(
                a[i].data == b[i].data && b[i].data == c[i].data,
                "seed {seed} op {i}: read data differs"
            );
        }
        let digests = [
            data_digest(&ram_dev).unwrap(),
            data_digest(&psync).unwrap(),
            data_digest(&pool).unwrap(),
        ];
        ensure!(
            digests[0] == digests[1] && digests[1] == digests[2],
            "seed {seed}: digests {digests:?}"
        );
    }
    Ok(format!(
        "ram, psync, thrpool/psync over 3 x 10000 commands in {:.2?}",
        within(start, Duration::from_secs(60))?
    ))
}

fn sync_async_equivalence() -> Outcome {
    for (label, zoned) in [("conventional", false), ("zoned", true)] {
        let extra = if zoned { "&zones=8" } else { "" };
        let (sync_dev, _) = ram(2048, extra);
        let (async_dev, _) = ram(2048, extra);
        let mut model = if zoned {
            Model::zoned(512, 8, 256)
        } else {
            Model::conventional(512, 2048)
        };
        let (ops, _) = Generator::new(7).stream(&mut model, 1000, zoned);
        let s = run_sync_all(&sync_dev, &ops);
        let a = run_queue(&async_dev, &ops, 32, false);
        for i in 0..ops.len() {
            ensure!(
                s[i] == a[i],
                "{label} op {i} {:?}: sync {:?} async {:?}",
                ops[i],
                s[i].status,
                a[i].status
            );
        }
        ensure!(
            data_digest(&sync_dev).unwrap() == data_digest(&async_dev).unwrap(),
            "{label}: digests differ"
        );
    }
    Ok("1000 commands, conventional and zoned: identical completions and digests".into())
}

fn exactly_once() -> Outcome {
    let start = Instant::now();
    let (dev, _) = ram(8192, "");
    let total = 100_000usize;
    let seen = RefCell::new(vec![0u8; total]);
    let submitted;
    let stats;
    {
        let mut q = Queue::init(&dev, 32, 0).unwrap();
        q.set_cb(|ctx| {
            assert!(!ctx.cpl.is_error());
            seen.borrow_mut()[ctx.tag as usize] += 1;
        })
        .unwrap();
        let mut n = 0usize;
        while n < total {
            let h = match q.get_ctx() {
                Ok(h) => h,
                Err(e) if e.is_transient() => {
                    q.poke(0);
                    continue;
                }
                Err(e) => return Err(format!("get_ctx: {e}")),
            };
            let ctx = q.ctx(h).unwrap();
            ctx.cmd = if n.is_multiple_of(2) {
                build_write((n % 8192) as u64, 1)
            } else {
                build_read((n % 8192) as u64, 1)
            }
            .unwrap();
            ctx.tag = n as u64;
            if ctx.payload().is_none() {
                ctx.set_payload(dev.buf_alloc(512).unwrap());
            }
            loop {
                match q.cmd_pass(h, 512) {
                    Ok(()) => break,
                    Err(e) if e.is_transient() => {
                        q.poke(0);
                    }
                    Err(e) => return Err(format!("cmd_pass: {e}")),
                }
            }
            n += 1;
        }
        q.drain().map_err(|e| format!("drain: {e}"))?;
        submitted = n;
        stats = q.stats();
        q.term().map_err(|e| format!("term: {e}"))?;
    }
    let seen = seen.into_inner();
    let callbacks: usize = seen.iter().map(|&c| c as usize).sum();
    ensure!(
        callbacks == submitted,
        "{callbacks} callbacks for {submitted} submissions"
    );
    let bad = seen.iter().filter(|&&c| c != 1).count();
    ensure!(bad == 0, "{bad} contexts lost or duplicated");
    ensure!(
        stats.free == 32,
        "free pool {} of 32 after drain",
        stats.free
    );
    Ok(format!(
        "{submitted} commands at qd 32 in {:.2?}",
        within(start, Duration::from_secs(10))?
    ))
}

fn retry_loop() -> Outcome {
    let qd = 8;
    let (dev, name) = ram(1024, "");
    ram_lookup(&name)
        .unwrap()
        .set_latency(Some(LatencyModel::stall_first(Duration::from_millis(100))));
    let done = RefCell::new(0u32);
    let mut again = 0u32;
    {
        let mut q = Queue::init(&dev, qd, 0).unwrap();
        q.set_cb(|_| *done.borrow_mut() += 1).unwrap();
        for i in 0..256u64 {
            let h = loop {
                match q.get_ctx() {
                    Ok(h) => break h,
                    Err(e) if e.is_transient() => {
                        q.poke(0);
                    }
                    Err(e) => return Err(format!("get_ctx: {e}")),
                }
            };
            let ctx = q.ctx(h).unwrap();
            ctx.cmd = build_read(i, 1).unwrap();
            if ctx.payload().is_none() {
                ctx.set_payload(dev.buf_alloc(512).unwrap());
            }
            // submit: on AGAIN, reap and go back to submit.
            loop {
                match q.cmd_pass(h, 512) {
                    Ok(()) => break,
                    Err(e) if e.code == ErrorCode::Again => {
                        again += 1;
                        q.poke(0);
                    }
                    Err(e) => return Err(format!("cmd_pass: {e}")),
                }
            }
        }
        q.drain().map_err(|e| format!("drain: {e}"))?;
    }
    ensure!(again > 0, "no AGAIN observed behind the stalled command");
    ensure!(*done.borrow() == 256, "{} of 256 completed", done.borrow());
    Ok(format!(
        "{again} AGAIN results retried; 256 of 256 completed"
    ))
}

fn zns_state_machine() -> Outcome {
    let (dev, _) = ram(4096, "&zones=4");
    let mut model = Model::zoned(512, 4, 1024);
    let zone0 = |dev: &Device| {
        let report = run_sync(dev, &Op::Report);
        let (_, zones) = decode_zone_report(&report.data).unwrap();
        zones[0]
    };
    for i in 0..1024u64 {
        let op = Op::Append {
            zslba: 0,
            n: 1,
            seed: i as u32,
        };
        let want = model.apply(&op);
        let got = run_sync(&dev, &op);
        ensure!(got == want, "append {i}: got {got:?}, model {want:?}");
        ensure!(got.result == i, "append {i} landed at {}", got.result);
        let z = zone0(&dev);
        ensure!(
            z.wp == model.wp[0],
            "append {i}: wp {} vs model {}",
            z.wp,
            model.wp[0]
        );
        ensure!(
            z.state.code() == model.zone_state(0),
            "append {i}: state {:?}",
            z.state
        );
    }
    ensure!(
        zone0(&dev).state == ZoneCondition::Full,
        "zone 0 not FULL after 1024 appends"
    );
    let over = run_sync(
        &dev,
        &Op::Append {
            zslba: 0,
            n: 1,
            seed: 0,
        },
    );
    ensure!(
        decode_status(&Completion::status(over.status)).class == StatusClass::Zone,
        "1025th append returned {:#06x}",
        over.status
    );
    ensure!(
        run_sync(&dev, &Op::Reset { zslba: 0 }).status == 0,
        "reset failed"
    );
    model.apply(&Op::Reset { zslba: 0 });
    let z = zone0(&dev);
    ensure!(
        z.state == ZoneCondition::Empty && z.wp == 0,
        "after reset: {z:?}"
    );
    ensure!(
        data_digest(&dev).unwrap().0 == model.data_digest(),
        "digest differs from model"
    );
    Ok(format!(
        "1024 appends at 0..1023, FULL, overflow status {:#06x}, reset to EMPTY",
        over.status
    ))
}

fn graceful_degradation() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let img = file_image(dir.path(), "gd.img", 64);
    let path = img.to_str().unwrap();
    let named = |name: &str| Options::new().with("be.async", name).unwrap();

    let unknown = Device::open(path, &named("no-such-backend")).unwrap_err();
    ensure!(
        unknown.code == ErrorCode::NoDev,
        "unknown backend gave {}",
        unknown.code
    );

    // A registry whose native backend probes as missing, as on a build
    // without it.
    let mut reg = BackendRegistry::new();
    reg.register(
        BackendDescriptor::new(NATIVE_BACKEND, &[IdentClass::File])
            .with_probe(|| false)
            .with_async(|_| unreachable!("probe failed")),
    )
    .unwrap();
    for desc in ["psync", "thrpool"] {
        reg.register(crossio::global_registry().get(desc).unwrap().clone())
            .unwrap();
    }
    let ident = DeviceIdent::parse(path).unwrap();
    let err = Device::open_with(&reg, ident.clone(), named(NATIVE_BACKEND)).unwrap_err();
    ensure!(
        err.code == ErrorCode::NoSys,
        "stubbed native backend gave {}",
        err.code
    );
    let fallback = Device::open_with(&reg, ident, Options::new()).unwrap();
    ensure!(
        fallback.async_backend() == "thrpool",
        "fallback chose {}",
        fallback.async_backend()
    );

    let builtin = Device::open(path, &named(NATIVE_BACKEND));
    let native = if native_available() {
        ensure!(builtin.is_ok(), "native backend available but open failed");
        "native backend present"
    } else {
        let code = builtin.map(|_| ()).unwrap_err().code;
        ensure!(code == ErrorCode::NoSys, "built-in registry gave {code}");
        "native backend absent"
    };
    Ok(format!("NOSYS for missing, NODEV for unknown ({native})"))
}

fn cli_round_trip() -> Outcome {
    let xio = |args: &[&str]| -> Result<serde_json::Value, String> {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(
            std::iter::once("xio").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        ensure!(
            code == 0,
            "xio {args:?} exited {code}: {}",
            String::from_utf8_lossy(&err)
        );
        serde_json::from_slice(&out).map_err(|e| e.to_string())
    };
    let dir = tempfile::tempdir().unwrap();
    let name = unique("acc-cli");
    xio(&["info", &format!("ram:{name}?nsect=8192")])?;
    let uri = format!("ram:{name}");
    for size in [1usize, 512, 4096, 1 << 20] {
        let f = dir.path().join(format!("f{size}"));
        let g = dir.path().join(format!("g{size}"));
        let data = pattern(size as u32 ^ 0xA5, size);
        std::fs::write(&f, &data).unwrap();
        xio(&["write", &uri, "--slba", "0", "--input", f.to_str().unwrap()])?;
        let k = size.div_ceil(512).to_string();
        xio(&[
            "read",
            &uri,
            "--slba",
            "0",
            "--nblocks",
            &k,
            "--output",
            g.to_str().unwrap(),
        ])?;
        let mut padded = data;
        padded.resize(size.div_ceil(512) * 512, 0);
        ensure!(
            std::fs::read(&g).unwrap() == padded,
            "size {size}: output differs"
        );
    }
    let report = xio(&[
        "bench",
        &uri,
        "--qd",
        "32",
        "--nblocks",
        "8",
        "--ops",
        "100000",
        "--mode",
        "randread",
    ])?;
    ensure!(
        report["ops"] == 100_000 && report["completions"] == 100_000,
        "ops/completions: {report}"
    );
    let p = |k: &str| report["latency_ns"][k].as_u64().unwrap_or(u64::MAX);
    ensure!(
        p("p50") <= p("p99") && p("p99") <= p("p999") && p("p999") <= p("max"),
        "percentiles not monotone: {}",
        report["latency_ns"]
    );
    Ok(format!(
        "sizes 1 B, 512 B, 4 KiB, 1 MiB; bench 100000 ops, p50 {} ns, max {} ns",
        p("p50"),
        p("max")
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("oracle equivalence", oracle_equivalence),
        ("backend equivalence", backend_equivalence),
        ("sync/async equivalence", sync_async_equivalence),
        ("queue exactly-once + conservation", exactly_once),
        ("retry-loop sufficiency", retry_loop),
        ("zns state machine", zns_state_machine),
        ("graceful degradation", graceful_degradation),
        ("cli round-trip", cli_round_trip),
    ];
    // Panics are reported as failures below, not as backtraces.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
