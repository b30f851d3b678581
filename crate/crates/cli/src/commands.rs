use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use flowforge_core::dataflow::{crafted_sequence, probe_depth, DepthOutcome, PipelineConfig, PipelineMetrics};
use flowforge_core::mesh::{generate_synthetic_mesh, max_rel_deviation, save_mesh};
use flowforge_core::perfmodel::{count_flops, gflops, model_report, CostParams, VariantSpec};
use flowforge_core::streaming::{run_batch, run_streamed, AccumulationMode, StreamScheduleConfig};
use flowforge_core::{assemble_all, GlobalOutputs, Mesh, PhysParams, Quadrature};
use serde::Serialize;

use crate::args::{mesh_sizes, read_json, GenerateArgs, Mode, ModelArgs, RunConfig};
use crate::error::{CliError, EXIT_OK, EXIT_STALL, EXIT_VERIFY};
use crate::report::{write_rows, BenchRow};

/// Deviation allowed between an engine and the reference.
pub const TOLERANCE: f64 = 1e-12;
/// Elements fed to the deadlock demonstration when routing is disabled.
const DEMO_ELEMENTS: usize = 16;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable report");
    match path {
        Some(p) => {
            let mut w = create(p)?;
            writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| CliError::io(p, e))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<i32, CliError> {
    let (e, p) = mesh_sizes(args.preset, args.elements, args.points)?;
    let mesh = generate_synthetic_mesh(e, p, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    save_mesh(&mesh, &args.out).map_err(|source| CliError::Mesh { path: args.out.clone(), source })?;
    println!("{}: {} elements, {} points", args.out.display(), mesh.num_elements(), mesh.num_points());
    Ok(EXIT_OK)
}

struct Run {
    outputs: GlobalOutputs<f64>,
    metrics: Option<PipelineMetrics>,
    chunk_size: Option<usize>,
}

fn run_mode(mode: Mode, mesh: &Mesh<f64>, cfg: &RunConfig, engines: usize, accum: AccumulationMode) -> Result<Run, CliError> {
    let (phys, quad) = (PhysParams::default(), Quadrature::four_point());
    let pc = PipelineConfig { num_engines: engines, ..cfg.pipeline.clone() };
    let sc = StreamScheduleConfig {
        accumulation_mode: accum,
        host_offload_cartesian: cfg.offload_cartesian,
        ..cfg.schedule.clone()
    };
    Ok(match mode {
        Mode::Reference => Run { outputs: assemble_all(mesh, &phys, &quad)?, metrics: None, chunk_size: None },
        Mode::Pipeline => {
            let (outputs, m) = run_batch(mesh, &phys, &quad, &pc, &sc)?;
            Run { outputs, metrics: Some(m), chunk_size: None }
        }
        Mode::Streamed => {
            let (outputs, r) = run_streamed(mesh, &phys, &quad, &pc, &sc)?;
            Run { outputs, metrics: Some(r.pipeline), chunk_size: Some(r.chunk_size) }
        }
    })
}

/// Engine configurations to run for `mode`.
fn combos(mode: Mode, cfg: &RunConfig) -> Vec<(usize, AccumulationMode)> {
    if mode == Mode::Reference {
        return vec![(1, AccumulationMode::Serial)];
    }
    cfg.engines.iter().flat_map(|&e| cfg.accum.iter().map(move |&a| (e, a))).collect()
}

fn label(mode: Mode, engines: usize, accum: AccumulationMode, offload: bool) -> String {
    format!("{mode} engines={engines} accum={accum} offload={}", if offload { "on" } else { "off" })
}

#[derive(Serialize)]
struct VerifyRun {
    mode: Mode,
    engines: usize,
    accum: AccumulationMode,
    offload: bool,
    max_rel_dev: Option<f64>,
    pass: bool,
    error: Option<String>,
}

#[derive(Serialize)]
struct VerifyReport {
    elements: usize,
    points: usize,
    tolerance: f64,
    runs: Vec<VerifyRun>,
    deadlock_demo: Option<String>,
    pass: bool,
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<i32, CliError> {
    let mesh = cfg.load_mesh()?;
    let reference = match assemble_all(&mesh, &PhysParams::default(), &Quadrature::four_point()) {
        Ok(r) => r,
        Err(e) => {
            println!("FAIL reference: {e}");
            return Err(e.into());
        }
    };
    let (mut failed, mut stalled) = (false, false);
    let mut runs = Vec::new();
    for &mode in cfg.modes.iter().filter(|&&m| m != Mode::Reference) {
        for (engines, accum) in combos(mode, cfg) {
            let name = label(mode, engines, accum, cfg.offload_cartesian);
            let mut run = VerifyRun {
                mode,
                engines,
                accum,
                offload: cfg.offload_cartesian,
                max_rel_dev: None,
                pass: false,
                error: None,
            };
            match run_mode(mode, &mesh, cfg, engines, accum) {
                Ok(r) => {
                    let dev = max_rel_deviation(&r.outputs, &reference);
                    run.pass = dev <= TOLERANCE && r.outputs.all_finite();
                    run.max_rel_dev = Some(dev);
                    failed |= !run.pass;
                    println!("{} {name} max_rel_dev={dev:.3e}", if run.pass { "PASS" } else { "FAIL" });
                }
                Err(e) => {
                    if e.exit_code() == EXIT_STALL {
                        stalled = true;
                        println!("STALL {name}: {e}");
                    } else {
                        failed = true;
                        println!("FAIL {name}: {e}");
                    }
                    run.error = Some(e.to_string());
                }
            }
            runs.push(run);
        }
    }
    let mut deadlock_demo = None;
    if !cfg.pipeline.routing_enabled {
        let depth = cfg.pipeline.fifo_depth;
        let outcome = probe_depth(
            false,
            depth,
            &crafted_sequence(DEMO_ELEMENTS),
            &Quadrature::four_point(),
            cfg.pipeline.watchdog_timeout,
        )?;
        let text = match outcome {
            DepthOutcome::Stalled { diagnosis } => {
                stalled = true;
                format!("stalled at fifo depth {depth}\n{diagnosis}")
            }
            DepthOutcome::Completed(_) => format!("completed at fifo depth {depth}"),
        };
        println!("deadlock demonstration (routing disabled): {text}");
        deadlock_demo = Some(text);
    }
    let pass = !failed && !stalled;
    println!("{}", if pass { "PASS" } else { "FAIL" });
    if let Some(out) = &cfg.out {
        let report = VerifyReport {
            elements: mesh.num_elements(),
            points: mesh.num_points(),
            tolerance: TOLERANCE,
            runs,
            deadlock_demo,
            pass,
        };
        write_json(Some(out), &report)?;
    }
    Ok(if stalled {
        EXIT_STALL
    } else if failed {
        EXIT_VERIFY
    } else {
        EXIT_OK
    })
}

#[derive(Serialize)]
struct RunMetrics<'a> {
    row: &'a BenchRow,
    pipeline: Option<PipelineMetrics>,
}

pub fn cmd_bench(cfg: &RunConfig) -> Result<i32, CliError> {
    let mesh = cfg.load_mesh()?;
    let (phys, quad) = (PhysParams::default(), Quadrature::four_point());
    let flops_per_element = count_flops(&phys, &quad).measured_total as f64;
    let reference = assemble_all(&mesh, &phys, &quad)?;
    let benchmark = cfg.benchmark_name();
    let mut rows = Vec::new();
    let mut metrics = Vec::new();
    for &mode in &cfg.modes {
        for (engines, accum) in combos(mode, cfg) {
            let mut total = 0.0;
            let mut last = None;
            for _ in 0..cfg.repeats {
                let t = Instant::now();
                let run = run_mode(mode, &mesh, cfg, engines, accum)?;
                total += t.elapsed().as_secs_f64();
                last = Some(run);
            }
            let run = last.expect("repeats >= 1");
            let mean = total / cfg.repeats as f64;
            let is_ref = mode == Mode::Reference;
            let row = BenchRow {
                benchmark: benchmark.clone(),
                mode,
                engines: (!is_ref).then_some(engines),
                chunk_size: run.chunk_size,
                accum: (!is_ref).then_some(accum),
                offload: !is_ref && cfg.offload_cartesian,
                repeats: cfg.repeats,
                mean_seconds: mean,
                gflops: gflops(flops_per_element, mesh.num_elements(), mean),
                max_rel_dev: max_rel_deviation(&run.outputs, &reference),
            };
            eprintln!("{mode} engines={engines} accum={accum}: {mean:.4} s, {:.3} GFLOPS", row.gflops);
            rows.push(row);
            metrics.push(run.metrics);
        }
    }
    match &cfg.out {
        Some(p) => {
            let mut w = create(p)?;
            write_rows(&mut w, &rows).map_err(|e| CliError::io(p, e.into()))?;
            w.flush().map_err(|e| CliError::io(p, e))?;
        }
        None => write_rows(io::stdout().lock(), &rows).map_err(|e| CliError::io("<stdout>", e.into()))?,
    }
    if let Some(p) = &cfg.metrics {
        let snapshot: Vec<RunMetrics> =
            rows.iter().zip(metrics).map(|(row, pipeline)| RunMetrics { row, pipeline }).collect();
        write_json(Some(p), &snapshot)?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ModelOutput {
    model: flowforge_core::perfmodel::ModelReport,
    flops: flowforge_core::perfmodel::FlopReport,
}

pub fn cmd_model(args: &ModelArgs) -> Result<i32, CliError> {
    let params: CostParams = match &args.params {
        Some(p) => read_json(p)?,
        None => CostParams::default(),
    };
    let extra: Vec<VariantSpec> = match &args.variants {
        Some(p) => read_json(p)?,
        None => Vec::new(),
    };
    let quad = Quadrature::with_points(args.gauss as usize)
        .ok_or_else(|| CliError::Usage(format!("unsupported quadrature size {} (expected 1 or 4)", args.gauss)))?;
    let model = model_report(&params, args.gauss, args.elements, &extra)?;
    for e in &model.variants {
        let note = e.measured_ms.map_or(String::new(), |ms| format!("  (measured {ms:.2} ms)"));
        eprintln!("{:<42} {:>14.0} cycles {:>11.3} ms{note}", e.variant, e.cycles, e.seconds * 1e3);
    }
    eprintln!("ladder ordering: {}", if model.ladder_ordered { "OK" } else { "MISMATCH" });
    let ordered = model.ladder_ordered;
    let flops = count_flops(&PhysParams::default(), &quad);
    write_json(args.out.as_deref(), &ModelOutput { model, flops })?;
    Ok(if ordered { EXIT_OK } else { EXIT_VERIFY })
}
