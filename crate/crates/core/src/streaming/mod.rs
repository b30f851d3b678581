//! Host/device streaming emulation: the host gathers and packs chunks,
//! the engine computes them, and the host scatters results, with the three
//! phases overlapped through bounded queues.

mod accumulate;
mod chunks;
mod lanes;
mod offload;

use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{build_pipeline, execute, EngineInput, PipelineConfig, PipelineError, PipelineMetrics};
use crate::mesh::{GlobalOutputs, Mesh};
use crate::reference::{AssemblyError, ElementResult, Geometry, PhysParams, Quadrature};
use crate::scalar::Real;

pub use accumulate::{accumulate_results, shard_ranges, AccumulationMode};
pub use chunks::{plan_chunks, ChunkRange, ChunkSize};
pub use lanes::{
    lane_dump_bytes, pack_chunk, unpack_element, write_lane_dump, Lane, LaneDumpEntry, PackedLanes, LANE_BYTES,
    LANE_SLOTS, VALUES_PER_BANK,
};
pub use offload::host_cartesian_offload;

use accumulate::{apply_serial, apply_sharded, worker_pool, LockedOutputs};
use offload::offload_in;

pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamScheduleConfig {
    pub chunk_size: ChunkSize,
    pub accumulation_mode: AccumulationMode,
    pub host_offload_cartesian: bool,
    pub worker_count: usize,
    /// When false, each chunk is gathered, computed and scattered before the
    /// next one starts.
    pub overlap: bool,
}

impl Default for StreamScheduleConfig {
    fn default() -> Self {
        StreamScheduleConfig {
            chunk_size: ChunkSize::default(),
            accumulation_mode: AccumulationMode::default(),
            host_offload_cartesian: false,
            worker_count: default_workers(),
            overlap: true,
        }
    }
}

impl StreamScheduleConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.chunk_size == ChunkSize::Fixed(0) {
            return Err(StreamError::Config("chunk_size must be at least 1".into()));
        }
        if self.worker_count == 0 {
            return Err(StreamError::Config("worker_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid schedule: {0}")]
    Config(String),
    #[error("chunk {chunk_id}: {source}")]
    Chunk { chunk_id: usize, source: PipelineError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl StreamError {
    /// The underlying pipeline error, if any.
    pub fn pipeline_error(&self) -> Option<&PipelineError> {
        match self {
            StreamError::Chunk { source, .. } | StreamError::Pipeline(source) => Some(source),
            StreamError::Config(_) => None,
        }
    }
}

/// Timing and instrumentation of one streamed run.
#[derive(Clone, Debug, Default, Serialize)]
pub struct StreamReport {
    pub chunks: usize,
    pub chunk_size: usize,
    pub overlap: bool,
    pub wall_seconds: f64,
    /// Time the host spent gathering, packing and (if enabled) computing
    /// geometry.
    pub gather_seconds: f64,
    /// Time the host spent scattering results.
    pub scatter_seconds: f64,
    pub pipeline: PipelineMetrics,
}

struct DeviceChunk<T> {
    packed: PackedLanes<T>,
    geometry: Option<Vec<Geometry<T>>>,
}

fn engine_inputs<T: Real>(dc: DeviceChunk<T>) -> impl Iterator<Item = EngineInput<T>> + Send {
    let DeviceChunk { packed, geometry } = dc;
    let mut geometry = geometry.map(Vec::into_iter);
    (0..packed.len()).map(move |l| {
        let e = unpack_element(&packed, l);
        match geometry.as_mut() {
            Some(g) => EngineInput::WithGeometry(e, g.next().expect("one geometry per element")),
            None => EngineInput::Plain(e),
        }
    })
}

fn chunk_error(err: PipelineError, chunk_size: usize) -> StreamError {
    match err {
        PipelineError::Assembly(AssemblyError::DegenerateElement { elem_id, .. }) => {
            StreamError::Chunk { chunk_id: elem_id / chunk_size, source: err }
        }
        other => StreamError::Pipeline(other),
    }
}

fn nanos(d: Duration) -> u64 {
    d.as_nanos() as u64
}

/// Assembles `mesh` by streaming chunks through the dataflow engine.
///
/// The host gathers chunk `i + 1` while the engine computes chunk `i` and
/// results of chunk `i - 1` are scattered; queues between the phases hold at
/// most one chunk, so a slow phase blocks the ones feeding it.
pub fn run_streamed<T: Real>(
    mesh: &Mesh<T>,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
    pipeline: &PipelineConfig,
    sched: &StreamScheduleConfig,
) -> Result<(GlobalOutputs<T>, StreamReport), StreamError> {
    sched.validate()?;
    phys.validate().map_err(|e| StreamError::Config(e.to_string()))?;
    let workers = sched.worker_count;
    let size = sched.chunk_size.resolve(mesh.num_elements(), workers);
    let plan = plan_chunks(mesh.num_elements(), size);
    let cfg = PipelineConfig { cartesian_on_host: sched.host_offload_cartesian, ..pipeline.clone() };
    let graph = build_pipeline(&cfg)?;
    let pool = worker_pool(workers);
    let shards = shard_ranges(mesh.num_points(), workers);
    let (overlap, offload, mode) = (sched.overlap, sched.host_offload_cartesian, sched.accumulation_mode);
    let mut outputs = GlobalOutputs::zeros(mesh.num_points());
    let scatter_nanos = AtomicU64::new(0);
    let start = Instant::now();

    let (metrics, gather_busy, gather_err) = thread::scope(|s| {
        let (dev_tx, dev_rx) = bounded::<DeviceChunk<T>>(1);
        let (host_tx, host_rx) = bounded::<Vec<ElementResult<T>>>(1);
        let (baton_tx, baton_rx) = unbounded::<()>();
        let (plan, pool, shards, outputs, scatter_nanos) = (&plan, &pool, &shards, &mut outputs, &scatter_nanos);

        let gather = s.spawn(move || {
            let mut busy = Duration::ZERO;
            for (i, c) in plan.iter().enumerate() {
                if !overlap && i > 0 && baton_rx.recv().is_err() {
                    break;
                }
                let t = Instant::now();
                let packed = pack_chunk(mesh, c.range());
                let geometry = if offload {
                    match offload_in(&packed, quad, pool) {
                        Ok(g) => Some(g),
                        Err(e) => return (busy, Some((c.chunk_id, e))),
                    }
                } else {
                    None
                };
                busy += t.elapsed();
                if dev_tx.send(DeviceChunk { packed, geometry }).is_err() {
                    break;
                }
            }
            (busy, None)
        });

        let scatter = s.spawn(move || {
            let timed = |f: &mut dyn FnMut()| {
                let t = Instant::now();
                f();
                scatter_nanos.fetch_add(nanos(t.elapsed()), Ordering::Relaxed);
            };
            match mode {
                AccumulationMode::Serial | AccumulationMode::Sharded => {
                    for results in host_rx {
                        timed(&mut || match mode {
                            AccumulationMode::Serial => apply_serial(outputs, mesh, &results),
                            _ => apply_sharded(outputs, shards, mesh, &results, pool),
                        });
                        if !overlap {
                            let _ = baton_tx.send(());
                        }
                    }
                }
                AccumulationMode::Locked => {
                    let locked = LockedOutputs::new(outputs);
                    let shared = &locked;
                    pool.in_place_scope(|sc| {
                        for results in host_rx {
                            if overlap {
                                sc.spawn(move |_| timed(&mut || shared.apply(mesh, &results)));
                            } else {
                                timed(&mut || pool.install(|| shared.apply(mesh, &results)));
                                let _ = baton_tx.send(());
                            }
                        }
                    });
                    *outputs = locked.into_outputs();
                }
            }
        });

        let mut cur = 0;
        let mut buf = Vec::with_capacity(plan.first().map_or(0, ChunkRange::len));
        let sink = move |r: ElementResult<T>| {
            buf.push(r);
            if buf.len() == plan[cur].len() {
                cur += 1;
                let next = plan.get(cur).map_or(0, ChunkRange::len);
                let full = std::mem::replace(&mut buf, Vec::with_capacity(next));
                let _ = host_tx.send(full);
            }
        };
        let source = dev_rx.into_iter().flat_map(engine_inputs);
        let metrics = execute(&graph, phys, quad, source, sink);
        let (busy, err) = gather.join().expect("gather worker");
        scatter.join().expect("scatter worker");
        (metrics, busy, err)
    });

    if let Some((chunk_id, e)) = gather_err {
        return Err(StreamError::Chunk { chunk_id, source: PipelineError::Assembly(e) });
    }
    let pipeline_metrics = metrics.map_err(|e| chunk_error(e, size))?;
    let report = StreamReport {
        chunks: plan.len(),
        chunk_size: size,
        overlap,
        wall_seconds: start.elapsed().as_secs_f64(),
        gather_seconds: gather_busy.as_secs_f64(),
        scatter_seconds: Duration::from_nanos(scatter_nanos.load(Ordering::Relaxed)).as_secs_f64(),
        pipeline: pipeline_metrics,
    };
    Ok((outputs, report))
}

/// Assembles `mesh` as a single batch: every element is gathered, then the
/// engine runs, then results are scattered. `chunk_size` and `overlap` are
/// ignored.
pub fn run_batch<T: Real>(
    mesh: &Mesh<T>,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
    pipeline: &PipelineConfig,
    sched: &StreamScheduleConfig,
) -> Result<(GlobalOutputs<T>, PipelineMetrics), StreamError> {
    sched.validate()?;
    phys.validate().map_err(|e| StreamError::Config(e.to_string()))?;
    let cfg = PipelineConfig { cartesian_on_host: sched.host_offload_cartesian, ..pipeline.clone() };
    let graph = build_pipeline(&cfg)?;
    let pool = worker_pool(sched.worker_count);
    let packed = pack_chunk(mesh, 0..mesh.num_elements());
    let geometry = if sched.host_offload_cartesian {
        Some(offload_in(&packed, quad, &pool).map_err(PipelineError::Assembly)?)
    } else {
        None
    };
    let mut results = Vec::with_capacity(mesh.num_elements());
    let metrics = execute(&graph, phys, quad, engine_inputs(DeviceChunk { packed, geometry }), |r| results.push(r))?;
    let mut outputs = GlobalOutputs::zeros(mesh.num_points());
    accumulate_results(&mut outputs, mesh, &results, sched.accumulation_mode, sched.worker_count);
    Ok((outputs, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_synthetic_mesh, max_rel_deviation};
    use crate::reference::assemble_all;

    fn sched(mode: AccumulationMode, chunk: usize, offload: bool, overlap: bool) -> StreamScheduleConfig {
        StreamScheduleConfig {
            chunk_size: ChunkSize::Fixed(chunk),
            accumulation_mode: mode,
            host_offload_cartesian: offload,
            worker_count: 3,
            overlap,
        }
    }

    #[test]
    fn streamed_matches_reference() {
        let m = generate_synthetic_mesh(700, 200, 4).unwrap();
        let (phys, q) = (PhysParams::default(), Quadrature::four_point());
        let want = assemble_all(&m, &phys, &q).unwrap();
        let pc = PipelineConfig { num_engines: 2, ..Default::default() };
        for mode in AccumulationMode::ALL {
            for (chunk, offload, overlap) in [(128, false, true), (1000, true, true), (97, true, false)] {
                let (got, rep) = run_streamed(&m, &phys, &q, &pc, &sched(mode, chunk, offload, overlap)).unwrap();
                assert_eq!(rep.chunks, 700usize.div_ceil(chunk));
                if mode == AccumulationMode::Locked {
                    assert!(max_rel_deviation(&got, &want) <= 1e-12);
                } else {
                    assert!(got.bit_eq(&want), "{mode} {chunk}");
                }
            }
        }
    }

    #[test]
    fn batch_matches_reference() {
        let m = generate_synthetic_mesh(300, 90, 5).unwrap();
        let (phys, q) = (PhysParams::default(), Quadrature::four_point());
        let want = assemble_all(&m, &phys, &q).unwrap();
        let (got, _) =
            run_batch(&m, &phys, &q, &PipelineConfig::default(), &sched(AccumulationMode::Sharded, 1, true, true)).unwrap();
        assert!(got.bit_eq(&want));
    }

    #[test]
    fn empty_mesh() {
        let m = Mesh::new(Vec::new(), [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]], [vec![0.0; 4], vec![0.0; 4], vec![0.0; 4]])
            .unwrap();
        let (got, rep) = run_streamed(
            &m,
            &PhysParams::default(),
            &Quadrature::four_point(),
            &PipelineConfig::default(),
            &StreamScheduleConfig::default(),
        )
        .unwrap();
        assert_eq!(rep.chunks, 0);
        assert!(got.bit_eq(&GlobalOutputs::zeros(4)));
    }

    #[test]
    fn degenerate_element_names_its_chunk() {
        let m = collapse(generate_synthetic_mesh(50, 30, 3).unwrap(), 23);
        for offload in [false, true] {
            let err = run_streamed(
                &m,
                &PhysParams::default(),
                &Quadrature::four_point(),
                &PipelineConfig::default(),
                &sched(AccumulationMode::Serial, 10, offload, true),
            )
            .unwrap_err();
            match err {
                StreamError::Chunk { chunk_id, source: PipelineError::Assembly(AssemblyError::DegenerateElement { elem_id, .. }) } => {
                    assert_eq!((chunk_id, elem_id), (2, 23));
                }
                other => panic!("unexpected {other}"),
            }
        }
    }

    fn collapse(m: Mesh<f64>, elem: usize) -> Mesh<f64> {
        // Re-point the element at four fresh coplanar points.
        let mut lnods = m.lnods().to_vec();
        let (mut coord, mut veloc) = (m.coord().clone(), m.veloc().clone());
        let base = m.num_points() as u32;
        for (k, xy) in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]].into_iter().enumerate() {
            coord[0].push(xy[0]);
            coord[1].push(xy[1]);
            coord[2].push(0.5);
            for v in veloc.iter_mut() {
                v.push(0.0);
            }
            lnods[elem][k] = base + k as u32;
        }
        Mesh::new(lnods, coord, veloc).unwrap()
    }

    #[test]
    fn rejects_zero_chunk() {
        let m = generate_synthetic_mesh(5, 5, 0).unwrap();
        let s = StreamScheduleConfig { chunk_size: ChunkSize::Fixed(0), ..Default::default() };
        let r = run_streamed(&m, &PhysParams::default(), &Quadrature::four_point(), &PipelineConfig::default(), &s);
        assert!(matches!(r, Err(StreamError::Config(_))));
    }
}
