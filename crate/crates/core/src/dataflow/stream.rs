//! Instrumented bounded streams and the shared run state they report to.

use std::sync::atomic::{AtomicBool, AtomicI64, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, RecvTimeoutError, SendTimeoutError, Sender, TryRecvError, TrySendError};
use parking_lot::Mutex;

use super::graph::ValueKind;
use super::PipelineError;

const POLL: Duration = Duration::from_millis(20);

pub(crate) const STATE_RUNNING: u64 = 0;
pub(crate) const STATE_READING: u64 = 1;
pub(crate) const STATE_WRITING: u64 = 2;
pub(crate) const STATE_DONE: u64 = 3;

#[derive(Default)]
pub(crate) struct StreamStats {
    pub items: AtomicU64,
    pub max_occupancy: AtomicUsize,
    pub stalls: AtomicU64,
}

/// Run-wide state shared by all stage workers and the watchdog.
pub(crate) struct Shared {
    pub abort: AtomicBool,
    pub progress: AtomicU64,
    pub inflight: AtomicI64,
    /// Per stage: `state << 32 | stream id`.
    pub status: Vec<AtomicU64>,
    pub stage_items: Vec<AtomicU64>,
    pub streams: Vec<StreamStats>,
    pub error: Mutex<Option<PipelineError>>,
}

impl Shared {
    pub fn new(num_stages: usize, num_streams: usize) -> Self {
        Shared {
            abort: AtomicBool::new(false),
            progress: AtomicU64::new(0),
            inflight: AtomicI64::new(0),
            status: (0..num_stages).map(|_| AtomicU64::new(STATE_RUNNING)).collect(),
            stage_items: (0..num_stages).map(|_| AtomicU64::new(0)).collect(),
            streams: (0..num_streams).map(|_| StreamStats::default()).collect(),
            error: Mutex::new(None),
        }
    }

    pub fn aborted(&self) -> bool {
        self.abort.load(Ordering::Relaxed)
    }

    /// Records the first error and stops every worker.
    pub fn fail(&self, err: PipelineError) {
        let mut slot = self.error.lock();
        if slot.is_none() {
            *slot = Some(err);
        }
        self.abort.store(true, Ordering::SeqCst);
    }

    #[inline]
    pub fn tick(&self) {
        self.progress.fetch_add(1, Ordering::Relaxed);
    }

    pub fn set_status(&self, stage: usize, state: u64, stream: usize) {
        self.status[stage].store(state << 32 | stream as u64, Ordering::Relaxed);
    }
}

/// Returned by port operations when the run has been aborted.
#[derive(Debug)]
pub(crate) struct Aborted;

pub(crate) struct OutPort<V> {
    pub id: usize,
    pub kind: ValueKind,
    pub stage: usize,
    pub tx: Sender<V>,
    pub shared: Arc<Shared>,
}

impl<V> OutPort<V> {
    pub fn send(&self, v: V) -> Result<(), Aborted> {
        let stats = &self.shared.streams[self.id];
        match self.tx.try_send(v) {
            Ok(()) => {}
            Err(TrySendError::Disconnected(_)) => return Err(Aborted),
            Err(TrySendError::Full(mut v)) => {
                stats.stalls.fetch_add(1, Ordering::Relaxed);
                self.shared.set_status(self.stage, STATE_WRITING, self.id);
                loop {
                    match self.tx.send_timeout(v, POLL) {
                        Ok(()) => break,
                        Err(SendTimeoutError::Timeout(back)) => {
                            if self.shared.aborted() {
                                return Err(Aborted);
                            }
                            v = back;
                        }
                        Err(SendTimeoutError::Disconnected(_)) => return Err(Aborted),
                    }
                }
                self.shared.set_status(self.stage, STATE_RUNNING, 0);
            }
        }
        stats.items.fetch_add(1, Ordering::Relaxed);
        stats.max_occupancy.fetch_max(self.tx.len(), Ordering::Relaxed);
        self.shared.tick();
        Ok(())
    }
}

pub(crate) struct InPort<V> {
    pub id: usize,
    pub kind: ValueKind,
    pub stage: usize,
    pub rx: Receiver<V>,
    pub shared: Arc<Shared>,
}

impl<V> InPort<V> {
    /// Next value, or `None` once the producer has finished.
    pub fn recv(&self) -> Result<Option<V>, Aborted> {
        if self.shared.aborted() {
            return Err(Aborted);
        }
        let v = match self.rx.try_recv() {
            Ok(v) => v,
            Err(TryRecvError::Disconnected) => return Ok(None),
            Err(TryRecvError::Empty) => {
                self.shared.set_status(self.stage, STATE_READING, self.id);
                let v = loop {
                    match self.rx.recv_timeout(POLL) {
                        Ok(v) => break v,
                        Err(RecvTimeoutError::Timeout) => {
                            if self.shared.aborted() {
                                return Err(Aborted);
                            }
                        }
                        Err(RecvTimeoutError::Disconnected) => {
                            self.shared.set_status(self.stage, STATE_RUNNING, 0);
                            return Ok(None);
                        }
                    }
                };
                self.shared.set_status(self.stage, STATE_RUNNING, 0);
                v
            }
        };
        self.shared.tick();
        Ok(Some(v))
    }
}
