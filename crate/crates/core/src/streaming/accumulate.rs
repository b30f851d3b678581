//! Scatter-add of element results into the global arrays under three
//! disciplines.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use parking_lot::Mutex;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::mesh::{scatter_add, GlobalOutputs, Mesh, NUM_DIMS};
use crate::reference::ElementResult;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumulationMode {
    /// One worker, element order.
    Serial,
    /// Per-point locks; many workers, nondeterministic order.
    Locked,
    /// Points partitioned into contiguous shards, one worker per shard.
    #[default]
    Sharded,
}

impl AccumulationMode {
    pub const ALL: [AccumulationMode; 3] = [AccumulationMode::Serial, AccumulationMode::Locked, AccumulationMode::Sharded];

    pub fn name(self) -> &'static str {
        match self {
            AccumulationMode::Serial => "serial",
            AccumulationMode::Locked => "locked",
            AccumulationMode::Sharded => "sharded",
        }
    }
}

impl fmt::Display for AccumulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AccumulationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown accumulation mode {s:?} (expected serial, locked or sharded)"))
    }
}

/// Contiguous point ranges, one per shard.
pub fn shard_ranges(num_points: usize, shards: usize) -> Vec<Range<usize>> {
    let shards = shards.clamp(1, num_points.max(1));
    let base = num_points / shards;
    let extra = num_points % shards;
    let mut start = 0;
    (0..shards)
        .map(|s| {
            let len = base + usize::from(s < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

type Columns<'a, T> = [&'a mut [T]; 5];

fn split_columns<'a, T>(outputs: &'a mut GlobalOutputs<T>, shards: &[Range<usize>]) -> Vec<(usize, Columns<'a, T>)> {
    let [x, y, z] = &mut outputs.rhsid;
    let mut rest: Columns<'a, T> = [x, y, z, &mut outputs.dt_rho_nsi, &mut outputs.mass_rho_nsi];
    let mut out = Vec::with_capacity(shards.len());
    for r in shards {
        let cols = rest.map(|c| c.split_at_mut(r.len()));
        let (head, tail): (Vec<_>, Vec<_>) = cols.into_iter().unzip();
        rest = tail.try_into().ok().expect("five columns");
        out.push((r.start, head.try_into().ok().expect("five columns")));
    }
    out
}

fn apply_shard<T: Real>(start: usize, cols: &mut Columns<'_, T>, mesh: &Mesh<T>, results: &[ElementResult<T>]) {
    let end = start + cols[0].len();
    let lnods = mesh.lnods();
    for r in results {
        for (i, &p) in lnods[r.elem_id].iter().enumerate() {
            let p = p as usize;
            if p < start || p >= end {
                continue;
            }
            let l = p - start;
            for j in 0..NUM_DIMS {
                cols[j][l] += r.elrbu[j][i];
            }
            cols[3][l] += r.eldtrho[i];
            cols[4][l] += r.elmurho[i];
        }
    }
}

/// Global outputs behind one lock per point.
pub(crate) struct LockedOutputs<T> {
    points: Vec<Mutex<[T; 5]>>,
}

impl<T: Real> LockedOutputs<T> {
    pub fn new(outputs: &GlobalOutputs<T>) -> Self {
        let points = (0..outputs.num_points())
            .map(|p| {
                Mutex::new([
                    outputs.rhsid[0][p],
                    outputs.rhsid[1][p],
                    outputs.rhsid[2][p],
                    outputs.dt_rho_nsi[p],
                    outputs.mass_rho_nsi[p],
                ])
            })
            .collect();
        LockedOutputs { points }
    }

    pub fn apply(&self, mesh: &Mesh<T>, results: &[ElementResult<T>]) {
        let lnods = mesh.lnods();
        results.par_iter().with_min_len(64).for_each(|r| {
            for (i, &p) in lnods[r.elem_id].iter().enumerate() {
                let mut v = self.points[p as usize].lock();
                for j in 0..NUM_DIMS {
                    v[j] += r.elrbu[j][i];
                }
                v[3] += r.eldtrho[i];
                v[4] += r.elmurho[i];
            }
        });
    }

    pub fn into_outputs(self) -> GlobalOutputs<T> {
        let mut out = GlobalOutputs::zeros(self.points.len());
        for (p, m) in self.points.into_iter().enumerate() {
            let v = m.into_inner();
            for j in 0..NUM_DIMS {
                out.rhsid[j][p] = v[j];
            }
            out.dt_rho_nsi[p] = v[3];
            out.mass_rho_nsi[p] = v[4];
        }
        out
    }
}

/// Scatter with one worker per shard. Each point receives its contributions
/// in element order, so the result is bit-identical to serial scatter.
pub(crate) fn apply_sharded<T: Real>(
    outputs: &mut GlobalOutputs<T>,
    shards: &[Range<usize>],
    mesh: &Mesh<T>,
    results: &[ElementResult<T>],
    pool: &ThreadPool,
) {
    let parts = split_columns(outputs, shards);
    pool.install(|| {
        parts.into_par_iter().for_each(|(start, mut cols)| apply_shard(start, &mut cols, mesh, results));
    });
}

pub(crate) fn apply_serial<T: Real>(outputs: &mut GlobalOutputs<T>, mesh: &Mesh<T>, results: &[ElementResult<T>]) {
    for r in results {
        scatter_add(outputs, mesh, r);
    }
}

pub(crate) fn worker_pool(workers: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("host-worker-{i}"))
        .build()
        .expect("build worker pool")
}

/// Scatter-adds `results` into `outputs` using `mode` with `workers` threads.
pub fn accumulate_results<T: Real>(
    outputs: &mut GlobalOutputs<T>,
    mesh: &Mesh<T>,
    results: &[ElementResult<T>],
    mode: AccumulationMode,
    workers: usize,
) {
    match mode {
        AccumulationMode::Serial => apply_serial(outputs, mesh, results),
        AccumulationMode::Sharded => {
            let shards = shard_ranges(outputs.num_points(), workers);
            apply_sharded(outputs, &shards, mesh, results, &worker_pool(workers));
        }
        AccumulationMode::Locked => {
            let locked = LockedOutputs::new(outputs);
            worker_pool(workers).install(|| locked.apply(mesh, results));
            *outputs = locked.into_outputs();
        }
    }
}
