//! Concurrent staged pipeline: every assembly stage runs as a long-lived
//! worker connected to its neighbours by bounded FIFOs.

mod deadlock;
mod exec;
mod graph;
mod kernels;
mod stream;

use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reference::{AssemblyError, ConvectivePartial};
use crate::scalar::Real;

pub use deadlock::{crafted_sequence, demonstrate_deadlock, probe_depth, DeadlockReport, DepthOutcome, DepthProbe};
pub use exec::{execute, run_pipeline, run_pipeline_with_metrics, PipelineMetrics, StageMetrics, StreamMetrics};
pub use graph::{build_pipeline, SkipEdge, StageDesc, StageGraph, StageId, StageKind, StreamDesc, StreamId, ValueKind};
pub use kernels::EngineInput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub fifo_depth: usize,
    pub num_engines: usize,
    pub routing_enabled: bool,
    pub watchdog_timeout: Duration,
    /// Engines receive geometry computed on the host and skip the
    /// cartesian-derivatives stage.
    pub cartesian_on_host: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            fifo_depth: 8,
            num_engines: 1,
            routing_enabled: true,
            watchdog_timeout: Duration::from_secs(30),
            cartesian_on_host: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.fifo_depth == 0 {
            return Err(PipelineError::Config("fifo_depth must be at least 1".into()));
        }
        if self.num_engines == 0 {
            return Err(PipelineError::Config("num_engines must be at least 1".into()));
        }
        if self.watchdog_timeout.is_zero() {
            return Err(PipelineError::Config("watchdog_timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("watchdog stall: no progress for {timeout:?}\n{diagnosis}")]
    WatchdogStall { timeout: Duration, diagnosis: String },
    #[error("protocol error in {stage}: {message}")]
    Protocol { stage: String, message: String },
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("invalid stage graph: {0}")]
    Graph(String),
    #[error("stage {0} panicked")]
    Panicked(String),
}

/// Copies every value from `input` to all `outputs`, preserving order.
/// Blocks on whichever output is full. Returns the number of values read.
pub fn replicate_stream<V: Clone>(input: Receiver<V>, outputs: &[Sender<V>]) -> Result<u64, PipelineError> {
    if outputs.len() < 2 {
        return Err(PipelineError::Config(format!("replication needs at least 2 outputs, got {}", outputs.len())));
    }
    let mut n = 0;
    for v in input {
        for o in outputs {
            o.send(v.clone()).map_err(|_| PipelineError::Protocol {
                stage: "replicate".into(),
                message: "consumer hung up".into(),
            })?;
        }
        n += 1;
    }
    Ok(n)
}

/// Sums each group of `group` consecutive partials, left to right from zero.
pub fn accumulate_stage<T: Real>(
    partials: impl IntoIterator<Item = ConvectivePartial<T>>,
    group: usize,
) -> Result<Vec<ConvectivePartial<T>>, PipelineError> {
    if group == 0 {
        return Err(PipelineError::Config("group size must be at least 1".into()));
    }
    let mut out = Vec::new();
    let mut acc = ConvectivePartial::zero();
    let mut count = 0;
    for p in partials {
        acc.add_assign(&p);
        count += 1;
        if count == group {
            out.push(std::mem::replace(&mut acc, ConvectivePartial::zero()));
            count = 0;
        }
    }
    if count != 0 {
        return Err(PipelineError::Protocol {
            stage: "accumulate".into(),
            message: format!("trailing group has {count} of {group} partials"),
        });
    }
    Ok(out)
}
