//! Asynchronous emulation over any synchronous engine using a pool of
//! worker threads.
//!
//! Workers run the blocking `exec`, wait out any latency-model delay, and
//! post the result on a completion channel. Nothing is delivered until the
//! queue owner reaps.

use std::sync::mpsc;
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel as channel;

use super::{BackendDescriptor, QueueEngine, QueueSetup, Reaped, Rejected, Submission, SyncEngine};
use crate::error::{IoError, Result};
use crate::ident::IdentClass;
use crate::options::THRPOOL_WORKERS;

pub const NAME: &str = "thrpool";
pub const DEFAULT_WORKERS: usize = 4;

pub(crate) fn descriptor() -> BackendDescriptor {
    BackendDescriptor::new(NAME, &[IdentClass::Ram, IdentClass::File])
        .with_async(|setup| Ok(Box::new(WorkerPool::start(setup)?) as Box<dyn QueueEngine>))
}

pub struct WorkerPool {
    jobs: Option<channel::Sender<Submission>>,
    done: mpsc::Receiver<Reaped>,
    workers: Vec<JoinHandle<()>>,
    outstanding: usize,
}

impl WorkerPool {
    pub fn start(setup: &QueueSetup<'_>) -> Result<WorkerPool> {
        let nworkers = match setup.opts.get_u64(THRPOOL_WORKERS)? {
            None => DEFAULT_WORKERS,
            Some(n) if (1..=256).contains(&n) => n as usize,
            Some(n) => {
                return Err(IoError::inval(format!(
                    "{THRPOOL_WORKERS}={n} outside 1..=256"
                )))
            }
        };
        let (job_tx, job_rx) = channel::bounded::<Submission>(setup.capacity as usize);
        let (done_tx, done_rx) = mpsc::channel();
        let workers = (0..nworkers)
            .map(|i| {
                let jobs = job_rx.clone();
                let done = done_tx.clone();
                let engine = setup.sync.clone();
                std::thread::Builder::new()
                    .name(format!("thrpool-{i}"))
                    .spawn(move || worker(engine, jobs, done))
                    .map_err(IoError::from)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkerPool {
            jobs: Some(job_tx),
            done: done_rx,
            workers,
            outstanding: 0,
        })
    }
}

fn worker(
    engine: Arc<dyn SyncEngine>,
    jobs: channel::Receiver<Submission>,
    done: mpsc::Sender<Reaped>,
) {
    for mut sub in jobs {
        let cmd = sub.cmd;
        let result = engine.exec(&cmd, sub.data_mut());
        if let Ok(executed) = &result {
            if !executed.delay.is_zero() {
                std::thread::sleep(executed.delay);
            }
        }
        if done.send(Reaped::from_exec(sub, result)).is_err() {
            return;
        }
    }
}

impl QueueEngine for WorkerPool {
    fn submit(&mut self, sub: Submission) -> std::result::Result<(), Rejected> {
        let jobs = self.jobs.as_ref().expect("pool running");
        match jobs.try_send(sub) {
            Ok(()) => {
                self.outstanding += 1;
                Ok(())
            }
            Err(channel::TrySendError::Full(sub)) => Err(Rejected {
                err: IoError::again("worker pool job ring full"),
                sub,
            }),
            Err(channel::TrySendError::Disconnected(sub)) => Err(Rejected {
                err: IoError::io("worker pool stopped"),
                sub,
            }),
        }
    }

    fn reap(&mut self, wait: bool, out: &mut Vec<Reaped>) -> Result<()> {
        if wait && self.outstanding > 0 {
            let first = self
                .done
                .recv()
                .map_err(|_| IoError::io("worker pool terminated unexpectedly"))?;
            self.outstanding -= 1;
            out.push(first);
        }
        while let Ok(reaped) = self.done.try_recv() {
            self.outstanding -= 1;
            out.push(reaped);
        }
        Ok(())
    }

    fn outstanding(&self) -> usize {
        self.outstanding
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.jobs.take();
        for handle in self.workers.drain(..) {
            let _ = handle.join();
        }
    }
}
