//! Threaded executor: one worker per stage, bounded channels per stream, and
//! a watchdog that turns a lack of progress into an error.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, Select, Sender};
use serde::Serialize;

use super::graph::{StageDesc, StageGraph, StageKind, ValueKind};
use super::kernels::{compute, EngineInput, Env, KernelParams, Token};
use super::stream::{InPort, OutPort, Shared, STATE_DONE, STATE_READING, STATE_WRITING};
use super::PipelineError;
use crate::mesh::ElementInput;
use crate::reference::{cartesian_derivatives, AssemblyError, ElementResult, PhysParams, Quadrature};
use crate::scalar::Real;

#[derive(Clone, Debug, Serialize)]
pub struct StageMetrics {
    pub stage: String,
    /// Elements (or tokens, for replicate stages) processed.
    pub items: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamMetrics {
    pub id: usize,
    pub kind: ValueKind,
    pub producer: String,
    pub consumer: String,
    pub capacity: usize,
    pub items: u64,
    pub max_occupancy: usize,
    /// Sends that found the stream full and had to block.
    pub stalls: u64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct PipelineMetrics {
    pub stages: Vec<StageMetrics>,
    pub streams: Vec<StreamMetrics>,
}

impl PipelineMetrics {
    pub fn total_stalls(&self) -> u64 {
        self.streams.iter().map(|s| s.stalls).sum()
    }
}

fn snapshot(graph: &StageGraph, shared: &Shared) -> PipelineMetrics {
    PipelineMetrics {
        stages: graph
            .stages
            .iter()
            .map(|s| StageMetrics { stage: s.label(), items: shared.stage_items[s.id].load(Ordering::Relaxed) })
            .collect(),
        streams: graph
            .streams
            .iter()
            .map(|s| {
                let st = &shared.streams[s.id];
                StreamMetrics {
                    id: s.id,
                    kind: s.kind,
                    producer: graph.stage(s.producer).label(),
                    consumer: graph.stage(s.consumer).label(),
                    capacity: s.capacity,
                    items: st.items.load(Ordering::Relaxed),
                    max_occupancy: st.max_occupancy.load(Ordering::Relaxed),
                    stalls: st.stalls.load(Ordering::Relaxed),
                }
            })
            .collect(),
    }
}

fn diagnose<V>(graph: &StageGraph, shared: &Shared, probes: &[Receiver<V>]) -> String {
    let mut lines = Vec::new();
    for st in &graph.stages {
        let raw = shared.status[st.id].load(Ordering::Relaxed);
        let (state, sid) = (raw >> 32, (raw & 0xffff_ffff) as usize);
        let verb = match state {
            STATE_READING => "waiting to read",
            STATE_WRITING => "waiting to write",
            _ => continue,
        };
        let s = graph.stream(sid);
        lines.push(format!(
            "  {} {verb} stream #{sid} ({}: {} -> {}, {}/{} queued)",
            st.label(),
            s.kind,
            graph.stage(s.producer).label(),
            graph.stage(s.consumer).label(),
            probes[sid].len(),
            s.capacity
        ));
    }
    if lines.is_empty() {
        "  no stage reported a blocking operation".into()
    } else {
        lines.join("\n")
    }
}

/// Streams `source` through the graph and hands results to `sink` in
/// source order.
pub fn execute<T, I, F>(
    graph: &StageGraph,
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
    source: I,
    sink: F,
) -> Result<PipelineMetrics, PipelineError>
where
    T: Real,
    I: Iterator<Item = EngineInput<T>> + Send,
    F: FnMut(ElementResult<T>) + Send,
{
    graph.check_structure()?;
    let shared = Arc::new(Shared::new(graph.stages.len(), graph.streams.len()));
    let mut txs: Vec<Option<Sender<Token<T>>>> = Vec::with_capacity(graph.streams.len());
    let mut rxs: Vec<Option<Receiver<Token<T>>>> = Vec::with_capacity(graph.streams.len());
    let mut probes = Vec::with_capacity(graph.streams.len());
    for s in &graph.streams {
        let (tx, rx) = bounded(s.capacity);
        probes.push(rx.clone());
        txs.push(Some(tx));
        rxs.push(Some(rx));
    }
    let mut ports = Vec::with_capacity(graph.stages.len());
    for st in &graph.stages {
        let ins: Vec<InPort<Token<T>>> = st
            .inputs
            .iter()
            .map(|&s| InPort { id: s, kind: graph.stream(s).kind, stage: st.id, rx: rxs[s].take().expect("one consumer"), shared: shared.clone() })
            .collect();
        let outs: Vec<OutPort<Token<T>>> = st
            .outputs
            .iter()
            .map(|&s| OutPort { id: s, kind: graph.stream(s).kind, stage: st.id, tx: txs[s].take().expect("one producer"), shared: shared.clone() })
            .collect();
        ports.push((ins, outs));
    }
    let kp = KernelParams { phys, quad };
    let finished = AtomicBool::new(false);
    let timeout = graph.config.watchdog_timeout;
    let mut source = Some(source);
    let mut sink = Some(sink);

    thread::scope(|scope| {
        let mut handles = Vec::new();
        for (st, (ins, outs)) in graph.stages.iter().zip(ports) {
            let worker_shared = shared.clone();
            let kp = &kp;
            let body: Box<dyn FnOnce() + Send + '_> = match st.kind {
                StageKind::Distributor => {
                    let src = source.take().expect("single distributor");
                    Box::new(move || distributor(st, src, outs, &worker_shared))
                }
                StageKind::Collector => {
                    let mut sink = sink.take().expect("single collector");
                    Box::new(move || collector(st, ins, &mut sink, &worker_shared))
                }
                StageKind::Replicate => Box::new(move || replicate(st, ins, outs, &worker_shared)),
                _ => Box::new(move || compute_stage(st, ins, outs, kp, &worker_shared)),
            };
            let shared = shared.clone();
            let label = st.label();
            let h = thread::Builder::new()
                .name(label.clone())
                .spawn_scoped(scope, move || {
                    if catch_unwind(AssertUnwindSafe(body)).is_err() {
                        shared.fail(PipelineError::Panicked(label));
                    }
                })
                .expect("spawn stage worker");
            handles.push(h);
        }
        let watchdog = {
            let shared = shared.clone();
            let finished = &finished;
            let probes = &probes;
            scope.spawn(move || {
                let poll = (timeout / 20).clamp(Duration::from_millis(1), Duration::from_millis(50));
                let mut last = shared.progress.load(Ordering::Relaxed);
                let mut since = Instant::now();
                while !finished.load(Ordering::Relaxed) {
                    thread::sleep(poll);
                    let p = shared.progress.load(Ordering::Relaxed);
                    if p != last || shared.inflight.load(Ordering::Relaxed) <= 0 || shared.aborted() {
                        last = p;
                        since = Instant::now();
                        continue;
                    }
                    if since.elapsed() >= timeout {
                        let diagnosis = diagnose(graph, &shared, probes);
                        shared.fail(PipelineError::WatchdogStall { timeout, diagnosis });
                        break;
                    }
                }
            })
        };
        for h in handles {
            let _ = h.join();
        }
        finished.store(true, Ordering::Relaxed);
        let _ = watchdog.join();
    });

    if let Some(err) = shared.error.lock().take() {
        return Err(err);
    }
    Ok(snapshot(graph, &shared))
}

fn distributor<T: Real>(
    st: &StageDesc,
    source: impl Iterator<Item = EngineInput<T>>,
    outs: Vec<OutPort<Token<T>>>,
    shared: &Shared,
) {
    for (seq, input) in source.enumerate() {
        shared.inflight.fetch_add(1, Ordering::SeqCst);
        let port = &outs[seq % outs.len()];
        if port.send(Token::Input { seq: seq as u64, input: Box::new(input) }).is_err() {
            return;
        }
        shared.stage_items[st.id].fetch_add(1, Ordering::Relaxed);
    }
    shared.set_status(st.id, STATE_DONE, 0);
}

fn collector<T: Real>(
    st: &StageDesc,
    ins: Vec<InPort<Token<T>>>,
    sink: &mut (impl FnMut(ElementResult<T>) + ?Sized),
    shared: &Shared,
) {
    let mut sel = Select::new();
    for p in &ins {
        sel.recv(&p.rx);
    }
    let mut open = ins.len();
    let mut pending = BTreeMap::new();
    let mut next = 0u64;
    while open > 0 {
        let op = match sel.select_timeout(Duration::from_millis(20)) {
            Ok(op) => op,
            Err(_) => {
                if shared.aborted() {
                    return;
                }
                shared.set_status(st.id, STATE_READING, ins[0].id);
                continue;
            }
        };
        let i = op.index();
        match op.recv(&ins[i].rx) {
            Ok(Token::Result { seq, result }) => {
                shared.tick();
                pending.insert(seq, result);
                while let Some(r) = pending.remove(&next) {
                    sink(r);
                    next += 1;
                    shared.inflight.fetch_sub(1, Ordering::SeqCst);
                    shared.stage_items[st.id].fetch_add(1, Ordering::Relaxed);
                    shared.tick();
                }
            }
            Ok(other) => {
                shared.fail(PipelineError::Protocol {
                    stage: st.label(),
                    message: format!("unexpected {} token", other.kind()),
                });
                return;
            }
            Err(_) => {
                sel.remove(i);
                open -= 1;
            }
        }
    }
    if !pending.is_empty() && !shared.aborted() {
        shared.fail(PipelineError::Protocol {
            stage: st.label(),
            message: format!("{} results left in the reorder buffer", pending.len()),
        });
    }
    shared.set_status(st.id, STATE_DONE, 0);
}

fn replicate<T: Real>(st: &StageDesc, ins: Vec<InPort<Token<T>>>, outs: Vec<OutPort<Token<T>>>, shared: &Shared) {
    let input = &ins[0];
    while let Ok(Some(t)) = input.recv() {
        for o in &outs {
            if o.send(t.clone()).is_err() {
                return;
            }
        }
        shared.stage_items[st.id].fetch_add(1, Ordering::Relaxed);
    }
    shared.set_status(st.id, STATE_DONE, 0);
}

fn compute_stage<T: Real>(
    st: &StageDesc,
    ins: Vec<InPort<Token<T>>>,
    outs: Vec<OutPort<Token<T>>>,
    kp: &KernelParams<'_, T>,
    shared: &Shared,
) {
    let num_gauss = kp.quad.num_gauss();
    let offload = st.kind == StageKind::Source && outs.iter().any(|p| p.kind == ValueKind::Geometry);
    let mut env = Env::new();
    let protocol = |message: String| PipelineError::Protocol { stage: st.label(), message };
    'elements: loop {
        env.clear();
        for (pi, port) in ins.iter().enumerate() {
            let kind = port.kind;
            let n = if kind.per_gauss() { num_gauss } else { 1 };
            for j in 0..n {
                match port.recv() {
                    Err(_) => return,
                    Ok(None) if pi == 0 && j == 0 => break 'elements,
                    Ok(None) => {
                        if !shared.aborted() {
                            shared.fail(protocol(format!("stream #{} closed after {j} of {n} {kind} values", port.id)));
                        }
                        return;
                    }
                    Ok(Some(t)) => {
                        if t.kind() != kind {
                            shared.fail(protocol(format!("expected {kind} on stream #{}, got {}", port.id, t.kind())));
                            return;
                        }
                        env.push(t);
                    }
                }
            }
        }
        if st.kind == StageKind::Source {
            if let Token::Input { input, .. } = &env.get(ValueKind::Input)[0] {
                let has_geometry = matches!(**input, EngineInput::WithGeometry(..));
                if has_geometry != offload {
                    shared.fail(protocol(format!(
                        "engine expects {} input",
                        if offload { "host geometry" } else { "plain element" }
                    )));
                    return;
                }
            }
        }
        if let Err(e) = compute(st.kind, &mut env, kp) {
            shared.fail(PipelineError::Assembly(e));
            return;
        }
        for port in &outs {
            let kind = port.kind;
            for t in env.take(kind) {
                if port.send(t).is_err() {
                    return;
                }
            }
        }
        shared.stage_items[st.id].fetch_add(1, Ordering::Relaxed);
    }
    shared.set_status(st.id, STATE_DONE, 0);
}

/// Runs a batch of gathered elements through the graph. When the graph
/// expects host geometry, it is computed here first.
pub fn run_pipeline<T: Real>(
    graph: &StageGraph,
    elements: &[ElementInput<T>],
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
) -> Result<Vec<ElementResult<T>>, PipelineError> {
    run_pipeline_with_metrics(graph, elements, phys, quad).map(|(r, _)| r)
}

pub fn run_pipeline_with_metrics<T: Real>(
    graph: &StageGraph,
    elements: &[ElementInput<T>],
    phys: &PhysParams<T>,
    quad: &Quadrature<T>,
) -> Result<(Vec<ElementResult<T>>, PipelineMetrics), PipelineError> {
    let inputs = if graph.offload() {
        elements
            .iter()
            .map(|e| {
                cartesian_derivatives(&e.elcod, quad)
                    .map(|g| EngineInput::WithGeometry(*e, g))
                    .map_err(|d| AssemblyError::DegenerateElement { elem_id: e.elem_id, det: d.det })
            })
            .collect::<Result<Vec<_>, _>>()?
    } else {
        elements.iter().map(|e| EngineInput::Plain(*e)).collect()
    };
    let mut out = Vec::with_capacity(elements.len());
    let metrics = execute(graph, phys, quad, inputs.into_iter(), |r| out.push(r))?;
    Ok((out, metrics))
}
