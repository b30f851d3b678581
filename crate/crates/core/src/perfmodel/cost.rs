//! Slowest-stage cycle model of the hardware design variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{ELEM_DOFS, NODES_PER_ELEM};

/// Values streamed in per element (`elvel` and `elcod`).
pub const INPUT_VALUES: u64 = 2 * ELEM_DOFS as u64;
/// Values streamed out per element (`elrbu`, `eldtrho`, `elmurho`).
pub const OUTPUT_VALUES: u64 = (ELEM_DOFS + 2 * NODES_PER_ELEM) as u64;
/// Result-handling threads of the threaded built-in variant.
pub const THREADED_RESULT_WORKERS: u64 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid cost parameter {name}: {value} (must be positive)")]
    Param { name: &'static str, value: f64 },
    #[error("variant {variant:?}: {message}")]
    Variant { variant: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub clock_hz: f64,
    /// Cost of one external memory read request or write response.
    pub access_request_cycles: u64,
    pub dadd_latency_cycles: u64,
    pub stage_fill_depth: u64,
    /// Beats fused into one request when access is contiguous.
    pub burst_beats: u64,
    /// 64-bit values per memory bus beat.
    pub bus_values_per_beat: u64,
    /// Host cost, in device cycles, of gathering one input value.
    pub host_gather_cycles_per_value: f64,
    /// Host cost, in device cycles, of scattering one result value.
    pub host_result_cycles_per_value: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            clock_hz: 3.0e8,
            access_request_cycles: 69,
            dadd_latency_cycles: 7,
            stage_fill_depth: 40,
            burst_beats: 64,
            bus_values_per_beat: 8,
            host_gather_cycles_per_value: 3.0,
            host_result_cycles_per_value: 5.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("clock_hz", self.clock_hz),
            ("access_request_cycles", self.access_request_cycles as f64),
            ("dadd_latency_cycles", self.dadd_latency_cycles as f64),
            ("stage_fill_depth", self.stage_fill_depth as f64),
            ("burst_beats", self.burst_beats as f64),
            ("bus_values_per_beat", self.bus_values_per_beat as f64),
            ("host_gather_cycles_per_value", self.host_gather_cycles_per_value),
            ("host_result_cycles_per_value", self.host_result_cycles_per_value),
        ];
        match checks.into_iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            Some((name, value)) => Err(ModelError::Param { name, value }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    /// Loop iterations per element.
    pub trip_count: u64,
    pub ii: u64,
    /// Element loop inside the stage, so the pipeline stays full across
    /// elements instead of draining after each one.
    pub fused_elements: bool,
    /// External memory requests per element; zero for compute stages.
    #[serde(default)]
    pub accesses: u64,
}

impl StageSpec {
    pub fn compute(name: &str, trip_count: u64, ii: u64, fused_elements: bool) -> Self {
        StageSpec { name: name.into(), trip_count, ii, fused_elements, accesses: 0 }
    }

    pub fn memory(name: &str, trip_count: u64, ii: u64, fused_elements: bool, accesses: u64) -> Self {
        StageSpec { name: name.into(), trip_count, ii, fused_elements, accesses }
    }

    /// Pipeline depth; never shallower than one iteration.
    fn fill(&self, p: &CostParams) -> u64 {
        p.stage_fill_depth.max(self.ii)
    }

    fn cycles(&self, n: u64, contiguous: bool, p: &CostParams) -> u64 {
        if n == 0 {
            return 0;
        }
        let fill = self.fill(p);
        let compute = if self.fused_elements {
            fill + self.ii * (self.trip_count * n - 1)
        } else {
            n * (fill + self.ii * (self.trip_count - 1))
        };
        let memory = match (self.accesses, contiguous) {
            (0, _) => 0,
            (_, true) => p.access_request_cycles * (self.trip_count * n).div_ceil(p.burst_beats),
            (a, false) => p.access_request_cycles * a * n,
        };
        compute + memory
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    pub stages: Vec<StageSpec>,
    /// Dataflow region relaunched per element: stage latencies add up.
    pub restart_between_elements: bool,
    pub contiguous_access: bool,
    /// Host gathers inputs and scatters results concurrently with the device.
    pub streamed_io: bool,
    #[serde(default = "one")]
    pub engines: u64,
    #[serde(default = "one")]
    pub result_threads: u64,
    #[serde(default)]
    pub dsp_pct: Option<f64>,
    #[serde(default)]
    pub lut_pct: Option<f64>,
    /// Measured runtime on the reference hardware for 100K elements.
    #[serde(default)]
    pub measured_ms: Option<f64>,
}

fn one() -> u64 {
    1
}

impl VariantSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |message: String| Err(ModelError::Variant { variant: self.name.clone(), message });
        if self.stages.is_empty() {
            return err("no stages".into());
        }
        if self.engines == 0 {
            return err("engines must be at least 1".into());
        }
        if self.result_threads == 0 {
            return err("result_threads must be at least 1".into());
        }
        for s in &self.stages {
            if s.ii == 0 {
                return err(format!("stage {:?}: II must be at least 1", s.name));
            }
            if s.trip_count == 0 {
                return err(format!("stage {:?}: trip_count must be at least 1", s.name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageEstimate {
    pub name: String,
    pub cycles: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub variant: String,
    pub cycles: f64,
    pub seconds: f64,
    pub device_cycles: u64,
    pub host_gather_cycles: f64,
    pub host_result_cycles: f64,
    pub per_stage: Vec<StageEstimate>,
    pub measured_ms: Option<f64>,
}

/// Predicted cycles for `num_elements` elements split evenly over the
/// variant's engines.
pub fn estimate_cycles(variant: &VariantSpec, num_elements: u64, params: &CostParams) -> Result<Estimate, ModelError> {
    params.validate()?;
    variant.validate()?;
    let n = num_elements.div_ceil(variant.engines);
    let per_stage: Vec<StageEstimate> = variant
        .stages
        .iter()
        .map(|s| StageEstimate { name: s.name.clone(), cycles: s.cycles(n, variant.contiguous_access, params) })
        .collect();
    let device_cycles = if n == 0 {
        0
    } else if variant.restart_between_elements {
        per_stage.iter().map(|s| s.cycles).sum()
    } else {
        let fills: Vec<u64> = variant.stages.iter().map(|s| s.fill(params)).collect();
        let slowest = per_stage.iter().map(|s| s.cycles).max().unwrap_or(0);
        slowest + fills.iter().sum::<u64>() - fills.iter().max().copied().unwrap_or(0)
    };
    let (host_gather_cycles, host_result_cycles) = if variant.streamed_io {
        let n = num_elements as f64;
        (
            params.host_gather_cycles_per_value * (INPUT_VALUES as f64) * n,
            params.host_result_cycles_per_value * (OUTPUT_VALUES as f64) * n / variant.result_threads as f64,
        )
    } else {
        (0.0, 0.0)
    };
    let cycles = (device_cycles as f64).max(host_gather_cycles).max(host_result_cycles);
    Ok(Estimate {
        variant: variant.name.clone(),
        cycles,
        seconds: cycles / params.clock_hz,
        device_cycles,
        host_gather_cycles,
        host_result_cycles,
        per_stage,
        measured_ms: variant.measured_ms,
    })
}

/// Speedup of lowering one isolated, element-fused stage from `from_ii` to
/// `to_ii`.
pub fn ii_speedup(trip_count: u64, num_elements: u64, from_ii: u64, to_ii: u64, params: &CostParams) -> f64 {
    let single = |ii| VariantSpec {
        name: format!("ii{ii}"),
        stages: vec![StageSpec::compute("stage", trip_count, ii, true)],
        restart_between_elements: false,
        contiguous_access: true,
        streamed_io: false,
        engines: 1,
        result_threads: 1,
        dsp_pct: None,
        lut_pct: None,
        measured_ms: None,
    };
    let cycles = |ii| estimate_cycles(&single(ii), num_elements, params).map(|e| e.cycles).unwrap_or(f64::NAN);
    cycles(from_ii) / cycles(to_ii)
}

struct Ladder<'a> {
    p: &'a CostParams,
    g: u64,
}

impl Ladder<'_> {
    /// Engine stages with loops nested per element and accumulations carrying
    /// a floating-point add dependency.
    fn unpipelined(&self) -> Vec<StageSpec> {
        let (g, dadd) = (self.g, self.p.dadd_latency_cycles);
        let dofs = ELEM_DOFS as u64;
        let nodes = NODES_PER_ELEM as u64;
        vec![
            StageSpec::compute("cartesian", g * dofs, 1, false),
            StageSpec::compute("gauss_values", g * dofs, dadd, false),
            StageSpec::compute("tau", g, dadd, false),
            StageSpec::compute("matrices", g * nodes * nodes, 1, false),
            StageSpec::compute("convective", g * dofs * dofs, dadd, false),
            StageSpec::compute("viscous", g * nodes * nodes, dadd, false),
            StageSpec::compute("fold", dofs, 1, false),
        ]
    }

    /// Engine stages with outer loops pipelined at II 1.
    fn pipelined(&self, fused: bool) -> Vec<StageSpec> {
        let g = self.g;
        ["cartesian", "gauss_values", "tau", "matrices", "convective", "add", "viscous"]
            .into_iter()
            .map(|n| StageSpec::compute(n, g, 1, fused))
            .chain([StageSpec::compute("fold", 1, 1, fused)])
            .collect()
    }

    fn with_memory(&self, engine: Vec<StageSpec>, fused: bool, packed: bool) -> Vec<StageSpec> {
        let nodes = NODES_PER_ELEM as u64;
        let dadd = self.p.dadd_latency_cycles;
        // Node-indexed accesses: two 3-vectors in, three arrays out per node.
        let (reads, writes) = (2 * nodes, 3 * nodes);
        let (read_beats, write_beats) = if packed { (reads, writes) } else { (INPUT_VALUES, OUTPUT_VALUES) };
        let mut stages = vec![StageSpec::memory("read", read_beats, 1, fused, reads)];
        stages.extend(engine);
        stages.push(StageSpec::memory("write", write_beats, dadd, fused, writes));
        stages
    }

    fn streamed(&self, in_beats: u64, in_requests: u64) -> Vec<StageSpec> {
        let out_beats = OUTPUT_VALUES.div_ceil(self.p.bus_values_per_beat);
        let mut stages = vec![StageSpec::memory("stream_in", in_beats, 1, true, in_requests)];
        stages.extend(self.pipelined(true));
        stages.push(StageSpec::memory("stream_out", out_beats, 1, true, 1));
        stages
    }
}

fn variant(name: &str, stages: Vec<StageSpec>, restart: bool, contiguous: bool, streamed: bool) -> VariantSpec {
    VariantSpec {
        name: name.into(),
        stages,
        restart_between_elements: restart,
        contiguous_access: contiguous,
        streamed_io: streamed,
        engines: 1,
        result_threads: 1,
        dsp_pct: None,
        lut_pct: None,
        measured_ms: None,
    }
}

fn annotate(mut v: VariantSpec, measured_ms: f64, resources: Option<(f64, f64)>) -> VariantSpec {
    v.measured_ms = Some(measured_ms);
    if let Some((dsp, lut)) = resources {
        v.dsp_pct = Some(dsp);
        v.lut_pct = Some(lut);
    }
    v
}

/// The optimisation ladder, slowest first, for `num_gauss` quadrature points.
pub fn builtin_variants(params: &CostParams, num_gauss: u64) -> Vec<VariantSpec> {
    let l = Ladder { p: params, g: num_gauss.max(1) };
    let whole_element_in = INPUT_VALUES.div_ceil(params.bus_values_per_beat);
    let mut threaded = variant("Threaded result handling", l.streamed(1, 4), false, true, true);
    threaded.result_threads = THREADED_RESULT_WORKERS;
    vec![
        annotate(
            variant("Initial FPGA dataflow design", l.with_memory(l.unpipelined(), false, false), true, false, false),
            15714.99,
            Some((15.0, 13.0)),
        ),
        annotate(
            variant("Optimised II of loops", l.with_memory(l.pipelined(false), false, false), true, false, false),
            1508.60,
            Some((91.0, 40.0)),
        ),
        annotate(
            variant("Brought elements loop into DF functions", l.with_memory(l.pipelined(true), true, false), false, false, false),
            293.21,
            Some((91.0, 44.0)),
        ),
        annotate(
            variant("Refactored code into engine", l.with_memory(l.pipelined(true), true, true), false, false, false),
            284.04,
            Some((97.0, 48.0)),
        ),
        // One request per input variable per element, three beats of data.
        annotate(variant("Initial streaming approach", l.streamed(whole_element_in, 2), false, false, true), 97.91, None),
        // Inputs split over four ports: a whole element per beat, burst reads.
        annotate(variant("Data streamed each cycle", l.streamed(1, 4), false, true, true), 48.19, None),
        annotate(threaded, 26.67, None),
    ]
}

/// True when predicted times strictly decrease along `estimates`.
pub fn strictly_decreasing(estimates: &[Estimate]) -> bool {
    estimates.windows(2).all(|w| w[0].cycles > w[1].cycles)
}

/// True when ranking `estimates` by prediction gives the same order as
/// ranking them by the measured times they carry.
pub fn matches_measured_ranking(estimates: &[Estimate]) -> bool {
    let rank = |key: &dyn Fn(&Estimate) -> f64| {
        let mut idx: Vec<usize> = (0..estimates.len()).collect();
        idx.sort_by(|&a, &b| key(&estimates[b]).total_cmp(&key(&estimates[a])));
        idx
    };
    estimates.iter().all(|e| e.measured_ms.is_some())
        && rank(&|e| e.cycles) == rank(&|e| e.measured_ms.unwrap_or(0.0))
}
