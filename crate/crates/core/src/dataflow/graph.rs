//! Stage graph construction and structural checks.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::Serialize;

use super::{PipelineConfig, PipelineError};

/// Kind of value carried by a stream. The declaration order is the
/// canonical order in which stages write and read their ports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Input,
    Elcod,
    Elvel,
    Geometry,
    Values,
    Tau,
    Lumped,
    Matrices,
    Partials,
    Visc,
    Accum,
    Result,
}

pub(crate) const NUM_KINDS: usize = 12;

impl ValueKind {
    pub const ALL: [ValueKind; NUM_KINDS] = [
        ValueKind::Input,
        ValueKind::Elcod,
        ValueKind::Elvel,
        ValueKind::Geometry,
        ValueKind::Values,
        ValueKind::Tau,
        ValueKind::Lumped,
        ValueKind::Matrices,
        ValueKind::Partials,
        ValueKind::Visc,
        ValueKind::Accum,
        ValueKind::Result,
    ];

    /// True for values sent once per Gauss point rather than once per element.
    pub fn per_gauss(self) -> bool {
        matches!(self, ValueKind::Geometry | ValueKind::Values | ValueKind::Tau | ValueKind::Matrices | ValueKind::Partials)
    }

    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Input => "input",
            ValueKind::Elcod => "elcod",
            ValueKind::Elvel => "elvel",
            ValueKind::Geometry => "gpcar/gpvol",
            ValueKind::Values => "gauss values",
            ValueKind::Tau => "tau",
            ValueKind::Lumped => "eldtrho/elmurho",
            ValueKind::Matrices => "agrau/wgrgr",
            ValueKind::Partials => "convective partials",
            ValueKind::Visc => "viscous coefficients",
            ValueKind::Accum => "accumulated elauu/elrbu",
            ValueKind::Result => "result",
        }
    }
}

impl fmt::Display for ValueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Distributor,
    Source,
    Cartesian,
    GaussValues,
    Tau,
    Matrices,
    Convective,
    Viscous,
    Accumulate,
    Fold,
    Replicate,
    Collector,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Distributor => "distributor",
            StageKind::Source => "input",
            StageKind::Cartesian => "cartesian_derivatives",
            StageKind::GaussValues => "gauss_point_values",
            StageKind::Tau => "tau_and_tim",
            StageKind::Matrices => "element_matrices",
            StageKind::Convective => "convective",
            StageKind::Viscous => "viscous",
            StageKind::Accumulate => "accumulate",
            StageKind::Fold => "fold",
            StageKind::Replicate => "replicate",
            StageKind::Collector => "result",
        }
    }

    /// Values read by a compute stage.
    pub fn consumes(self) -> &'static [ValueKind] {
        use ValueKind as V;
        match self {
            StageKind::Source => &[V::Input],
            StageKind::Cartesian => &[V::Elcod],
            StageKind::GaussValues => &[V::Elvel, V::Geometry],
            StageKind::Tau | StageKind::Matrices => &[V::Geometry, V::Values],
            StageKind::Convective => &[V::Geometry, V::Values, V::Tau, V::Matrices],
            StageKind::Viscous => &[V::Geometry, V::Matrices],
            StageKind::Accumulate => &[V::Partials],
            StageKind::Fold => &[V::Elvel, V::Lumped, V::Visc, V::Accum],
            StageKind::Collector => &[V::Result],
            StageKind::Distributor | StageKind::Replicate => &[],
        }
    }

    /// Values written by a compute stage. `offload` selects the input stage
    /// variant that receives precomputed geometry.
    pub fn produces(self, offload: bool) -> &'static [ValueKind] {
        use ValueKind as V;
        match self {
            StageKind::Distributor => &[V::Input],
            StageKind::Source if offload => &[V::Elvel, V::Geometry],
            StageKind::Source => &[V::Elcod, V::Elvel],
            StageKind::Cartesian => &[V::Geometry],
            StageKind::GaussValues => &[V::Values],
            StageKind::Tau => &[V::Tau, V::Lumped],
            StageKind::Matrices => &[V::Matrices],
            StageKind::Convective => &[V::Partials],
            StageKind::Viscous => &[V::Visc],
            StageKind::Accumulate => &[V::Accum],
            StageKind::Fold => &[V::Result],
            StageKind::Collector | StageKind::Replicate => &[],
        }
    }
}

pub type StageId = usize;
pub type StreamId = usize;

#[derive(Clone, Debug, Serialize)]
pub struct StageDesc {
    pub id: StageId,
    pub kind: StageKind,
    pub engine: Option<usize>,
    /// Position along an engine's chain; replicate stages share their
    /// producer's position.
    pub position: i32,
    pub inputs: Vec<StreamId>,
    pub outputs: Vec<StreamId>,
}

impl StageDesc {
    pub fn label(&self) -> String {
        match self.engine {
            Some(e) => format!("{}[{e}]", self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamDesc {
    pub id: StreamId,
    pub kind: ValueKind,
    pub capacity: usize,
    pub producer: StageId,
    pub consumer: StageId,
}

/// A stream whose value skips over at least one stage of the chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipEdge {
    pub kind: ValueKind,
    pub engine: Option<usize>,
    pub producer: &'static str,
    pub consumer: &'static str,
    pub skipped: Vec<&'static str>,
}

impl fmt::Display for SkipEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} produced by {} is consumed by {} skipping {}", self.kind, self.producer, self.consumer, self.skipped.join(", "))
    }
}

#[derive(Clone, Debug)]
pub struct StageGraph {
    pub config: PipelineConfig,
    pub stages: Vec<StageDesc>,
    pub streams: Vec<StreamDesc>,
}

fn chain(offload: bool) -> Vec<StageKind> {
    let mut c = vec![StageKind::Source];
    if !offload {
        c.push(StageKind::Cartesian);
    }
    c.extend([
        StageKind::GaussValues,
        StageKind::Tau,
        StageKind::Matrices,
        StageKind::Convective,
        StageKind::Viscous,
        StageKind::Accumulate,
        StageKind::Fold,
    ]);
    c
}

struct Builder {
    capacity: usize,
    stages: Vec<StageDesc>,
    streams: Vec<StreamDesc>,
}

impl Builder {
    fn stage(&mut self, kind: StageKind, engine: Option<usize>, position: i32) -> StageId {
        let id = self.stages.len();
        self.stages.push(StageDesc { id, kind, engine, position, inputs: vec![], outputs: vec![] });
        id
    }

    fn stream(&mut self, kind: ValueKind, producer: StageId, consumer: StageId) -> StreamId {
        let id = self.streams.len();
        self.streams.push(StreamDesc { id, kind, capacity: self.capacity, producer, consumer });
        self.stages[producer].outputs.push(id);
        self.stages[consumer].inputs.push(id);
        id
    }
}

/// Builds the engine graph for `config`.
///
/// With routing enabled, streams only connect consecutive stages and every
/// stage forwards the values its successors still need. With routing
/// disabled, each value travels directly from producer to consumer, with a
/// replicate stage wherever a value has more than one consumer.
pub fn build_pipeline(config: &PipelineConfig) -> Result<StageGraph, PipelineError> {
    config.validate()?;
    let offload = config.cartesian_on_host;
    let kinds = chain(offload);
    let last = kinds.len() as i32;
    let mut b = Builder { capacity: config.fifo_depth, stages: vec![], streams: vec![] };
    let distributor = b.stage(StageKind::Distributor, None, -1);
    let collector = b.stage(StageKind::Collector, None, last);
    for engine in 0..config.num_engines {
        let ids: Vec<StageId> = kinds.iter().enumerate().map(|(p, &k)| b.stage(k, Some(engine), p as i32)).collect();
        b.stream(ValueKind::Input, distributor, ids[0]);
        if config.routing_enabled {
            for i in 0..ids.len() - 1 {
                let mut live: Vec<ValueKind> = ValueKind::ALL
                    .into_iter()
                    .filter(|v| {
                        kinds[..=i].iter().any(|k| k.produces(offload).contains(v))
                            && kinds[i + 1..].iter().any(|k| k.consumes().contains(v))
                    })
                    .collect();
                live.sort();
                for v in live {
                    b.stream(v, ids[i], ids[i + 1]);
                }
            }
        } else {
            for (p, &k) in kinds.iter().enumerate() {
                for &v in k.produces(offload) {
                    let consumers: Vec<usize> = (p + 1..kinds.len()).filter(|&c| kinds[c].consumes().contains(&v)).collect();
                    match consumers.as_slice() {
                        [] => {}
                        [c] => {
                            b.stream(v, ids[p], ids[*c]);
                        }
                        many => {
                            let rep = b.stage(StageKind::Replicate, Some(engine), p as i32);
                            b.stream(v, ids[p], rep);
                            for &c in many {
                                b.stream(v, rep, ids[c]);
                            }
                        }
                    }
                }
            }
            // Nearest producer first.
            let origin = |b: &Builder, s: StreamId| b.stages[b.streams[s].producer].position;
            for &id in &ids {
                let mut inputs = b.stages[id].inputs.clone();
                inputs.sort_by_key(|&s| (std::cmp::Reverse(origin(&b, s)), b.streams[s].kind));
                b.stages[id].inputs = inputs;
            }
        }
        b.stream(ValueKind::Result, ids[kinds.len() - 1], collector);
    }
    let graph = StageGraph { config: config.clone(), stages: b.stages, streams: b.streams };
    graph.check_structure()?;
    Ok(graph)
}

impl StageGraph {
    pub fn stage(&self, id: StageId) -> &StageDesc {
        &self.stages[id]
    }

    pub fn stream(&self, id: StreamId) -> &StreamDesc {
        &self.streams[id]
    }

    /// Verifies single-producer/single-consumer wiring and acyclicity.
    pub fn check_structure(&self) -> Result<(), PipelineError> {
        let mut produced = vec![0usize; self.streams.len()];
        let mut consumed = vec![0usize; self.streams.len()];
        for st in &self.stages {
            for &s in &st.outputs {
                produced[s] += 1;
                if self.streams[s].producer != st.id {
                    return Err(PipelineError::Graph(format!("stream {s} lists the wrong producer")));
                }
            }
            for &s in &st.inputs {
                consumed[s] += 1;
                if self.streams[s].consumer != st.id {
                    return Err(PipelineError::Graph(format!("stream {s} lists the wrong consumer")));
                }
            }
        }
        for s in 0..self.streams.len() {
            if produced[s] != 1 || consumed[s] != 1 {
                return Err(PipelineError::Graph(format!(
                    "stream {s} has {} producers and {} consumers",
                    produced[s], consumed[s]
                )));
            }
        }
        let mut indeg: Vec<usize> = self.stages.iter().map(|s| s.inputs.len()).collect();
        let mut queue: VecDeque<StageId> = (0..self.stages.len()).filter(|&s| indeg[s] == 0).collect();
        let mut seen = 0;
        while let Some(s) = queue.pop_front() {
            seen += 1;
            for &o in &self.stages[s].outputs {
                let c = self.streams[o].consumer;
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if seen != self.stages.len() {
            return Err(PipelineError::Graph("stage graph contains a cycle".into()));
        }
        Ok(())
    }

    /// Streams whose values bypass intermediate stages. Empty for a routed
    /// graph.
    pub fn skip_edges(&self) -> Vec<SkipEdge> {
        let mut names: BTreeMap<(Option<usize>, i32), &'static str> = BTreeMap::new();
        for st in &self.stages {
            if st.kind != StageKind::Replicate {
                names.insert((st.engine, st.position), st.kind.name());
            }
        }
        let mut out = Vec::new();
        for s in &self.streams {
            let consumer = &self.stages[s.consumer];
            if consumer.kind == StageKind::Replicate {
                continue;
            }
            let producer = &self.stages[s.producer];
            let (from, to) = (producer.position, consumer.position);
            if to - from > 1 {
                let engine = consumer.engine.or(producer.engine);
                let origin = match producer.kind {
                    StageKind::Replicate => names.get(&(engine, from)).copied().unwrap_or("?"),
                    k => k.name(),
                };
                let skipped = (from + 1..to).filter_map(|p| names.get(&(engine, p)).copied()).collect();
                out.push(SkipEdge { kind: s.kind, engine, producer: origin, consumer: consumer.kind.name(), skipped });
            }
        }
        out
    }

    /// True when every stream connects consecutive stages.
    pub fn is_routed(&self) -> bool {
        self.skip_edges().is_empty()
    }

    pub fn num_engines(&self) -> usize {
        self.config.num_engines
    }

    pub fn offload(&self) -> bool {
        self.config.cartesian_on_host
    }

    /// Human-readable listing of stages and their ports.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for st in &self.stages {
            let ports = |ids: &[StreamId]| ids.iter().map(|&i| format!("#{i}:{}", self.streams[i].kind)).collect::<Vec<_>>().join(" ");
            s += &format!("{:<28} in [{}] out [{}]\n", st.label(), ports(&st.inputs), ports(&st.outputs));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn routed_graph_has_no_skips() {
        let g = build_pipeline(&PipelineConfig::default()).unwrap();
        assert!(g.is_routed());
        // stages: distributor, collector, nine chain stages
        assert_eq!(g.stages.len(), 11);
        assert!(g.stages.iter().all(|s| s.kind != StageKind::Replicate));
    }

    #[test]
    fn routed_streams_carry_live_values() {
        let g = build_pipeline(&PipelineConfig::default()).unwrap();
        let elvel_hops = g.streams.iter().filter(|s| s.kind == ValueKind::Elvel).count();
        // input -> ... -> fold passes through seven intermediate stages
        assert_eq!(elvel_hops, 8);
        let geometry_hops = g.streams.iter().filter(|s| s.kind == ValueKind::Geometry).count();
        assert_eq!(geometry_hops, 5);
    }

    #[test]
    fn skip_graph_reports_elvel_skip() {
        let cfg = PipelineConfig { routing_enabled: false, ..PipelineConfig::default() };
        let g = build_pipeline(&cfg).unwrap();
        let skips = g.skip_edges();
        assert!(skips
            .iter()
            .any(|e| e.kind == ValueKind::Elvel && e.consumer == "gauss_point_values" && e.skipped == ["cartesian_derivatives"]));
        assert!(g.stages.iter().any(|s| s.kind == StageKind::Replicate));
    }

    #[test]
    fn engines_are_disjoint_copies() {
        let cfg = PipelineConfig { num_engines: 3, ..PipelineConfig::default() };
        let g = build_pipeline(&cfg).unwrap();
        assert_eq!(g.stages.len(), 2 + 3 * 9);
        for s in &g.streams {
            let (p, c) = (&g.stages[s.producer], &g.stages[s.consumer]);
            if p.engine.is_some() && c.engine.is_some() {
                assert_eq!(p.engine, c.engine);
            }
        }
        let dist = &g.stages[0];
        assert_eq!(dist.outputs.len(), 3);
    }

    #[test]
    fn offload_graph_drops_cartesian() {
        let cfg = PipelineConfig { cartesian_on_host: true, ..PipelineConfig::default() };
        let g = build_pipeline(&cfg).unwrap();
        assert!(g.stages.iter().all(|s| s.kind != StageKind::Cartesian));
        assert!(g.is_routed());
    }

    #[test]
    fn structure_check_catches_double_consumer() {
        let mut g = build_pipeline(&PipelineConfig::default()).unwrap();
        let extra = g.streams[1].id;
        let victim = g.streams[1].consumer;
        let other = (0..g.stages.len()).find(|&s| s != victim && g.stages[s].kind == StageKind::Tau).unwrap();
        g.stages[other].inputs.push(extra);
        assert!(matches!(g.check_structure(), Err(PipelineError::Graph(_))));
    }
}
