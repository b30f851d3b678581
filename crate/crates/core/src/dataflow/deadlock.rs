//! Deadlock demonstration: runs a graph at small FIFO depths with a short
//! watchdog and records which configurations stall.

use std::time::Duration;

use super::graph::{build_pipeline, SkipEdge};
use super::{run_pipeline, PipelineConfig, PipelineError};
use crate::mesh::ElementInput;
use crate::reference::{ElementResult, PhysParams, Quadrature};

#[derive(Clone, Debug)]
pub enum DepthOutcome {
    Completed(Vec<ElementResult<f64>>),
    Stalled { diagnosis: String },
}

impl DepthOutcome {
    pub fn stalled(&self) -> bool {
        matches!(self, DepthOutcome::Stalled { .. })
    }
}

#[derive(Clone, Debug)]
pub struct DepthProbe {
    pub fifo_depth: usize,
    pub num_elements: usize,
    pub outcome: DepthOutcome,
}

#[derive(Clone, Debug)]
pub struct DeadlockReport {
    pub routing_enabled: bool,
    pub skip_edges: Vec<SkipEdge>,
    pub probes: Vec<DepthProbe>,
}

impl DeadlockReport {
    pub fn first_stall(&self) -> Option<&DepthProbe> {
        self.probes.iter().find(|p| p.outcome.stalled())
    }

    /// True when no probed configuration stalled.
    pub fn is_safe(&self) -> bool {
        self.first_stall().is_none()
    }
}

/// Translated unit-scale tetrahedra with distinct velocities.
pub fn crafted_sequence(n: usize) -> Vec<ElementInput<f64>> {
    (0..n)
        .map(|e| {
            let s = e as f64;
            let elcod = [
                [s, s + 1.0, s, s + 0.1],
                [0.0, 0.1, 1.0, 0.2],
                [0.0, 0.0, 0.1, 1.0],
            ];
            let elvel = [
                [0.1 * s, 1.0, -0.5, 0.25],
                [0.5, -0.25 * s, 0.75, 0.0],
                [1.0, 0.0, 0.3, -0.1 * s],
            ];
            ElementInput { elem_id: e, elvel, elcod }
        })
        .collect()
}

/// Runs `elements` once at `fifo_depth`, converting a watchdog stall into
/// [`DepthOutcome::Stalled`].
pub fn probe_depth(
    routing_enabled: bool,
    fifo_depth: usize,
    elements: &[ElementInput<f64>],
    quad: &Quadrature<f64>,
    timeout: Duration,
) -> Result<DepthOutcome, PipelineError> {
    let cfg = PipelineConfig { fifo_depth, routing_enabled, watchdog_timeout: timeout, ..PipelineConfig::default() };
    let graph = build_pipeline(&cfg)?;
    match run_pipeline(&graph, elements, &PhysParams::default(), quad) {
        Ok(r) => Ok(DepthOutcome::Completed(r)),
        Err(PipelineError::WatchdogStall { diagnosis, .. }) => Ok(DepthOutcome::Stalled { diagnosis }),
        Err(e) => Err(e),
    }
}

/// For each depth, grows the crafted sequence through `element_counts`
/// until the run stalls or the counts are exhausted.
pub fn demonstrate_deadlock(
    routing_enabled: bool,
    depths: &[usize],
    element_counts: &[usize],
    quad: &Quadrature<f64>,
    timeout: Duration,
) -> Result<DeadlockReport, PipelineError> {
    let cfg = PipelineConfig { routing_enabled, ..PipelineConfig::default() };
    let skip_edges = build_pipeline(&cfg)?.skip_edges();
    let mut probes = Vec::new();
    for &d in depths {
        for &n in element_counts {
            let outcome = probe_depth(routing_enabled, d, &crafted_sequence(n), quad, timeout)?;
            let stalled = outcome.stalled();
            probes.push(DepthProbe { fifo_depth: d, num_elements: n, outcome });
            if stalled {
                break;
            }
        }
    }
    Ok(DeadlockReport { routing_enabled, skip_edges, probes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skip_topology_stalls_at_depth_one() {
        let out = probe_depth(false, 1, &crafted_sequence(2), &Quadrature::four_point(), Duration::from_millis(300)).unwrap();
        match out {
            DepthOutcome::Stalled { diagnosis } => assert!(diagnosis.contains("waiting to write"), "{diagnosis}"),
            DepthOutcome::Completed(_) => panic!("expected a stall"),
        }
    }

    #[test]
    fn skip_topology_with_one_gauss_point_completes() {
        let out = probe_depth(false, 1, &crafted_sequence(6), &Quadrature::centroid(), Duration::from_secs(10)).unwrap();
        assert!(!out.stalled());
    }

    #[test]
    fn routed_topology_completes_at_depth_one() {
        let out = probe_depth(true, 1, &crafted_sequence(16), &Quadrature::four_point(), Duration::from_secs(10)).unwrap();
        assert!(!out.stalled());
    }
}
