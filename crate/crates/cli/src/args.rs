use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowforge_core::dataflow::PipelineConfig;
use flowforge_core::mesh::{generate_synthetic_mesh, load_mesh, BenchmarkPreset};
use flowforge_core::streaming::{AccumulationMode, ChunkSize, StreamScheduleConfig};
use flowforge_core::Mesh;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(name = "flowforge", version, about = "Element matrix assembly: reference, dataflow pipeline and streamed engines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic tetrahedral mesh.
    ///
    /// The 2D-named presets produce 3D tetrahedral meshes with the listed
    /// element and point counts.
    Generate(GenerateArgs),
    /// Check the pipeline and streamed engines against the reference.
    Verify(RunArgs),
    /// Time execution modes and write one CSV row per configuration.
    Bench(RunArgs),
    /// Predict cycles for the design variants and report FLOP counts.
    Model(ModelArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<BenchmarkPreset>,
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Reference,
    Pipeline,
    Streamed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Reference => "reference",
            Mode::Pipeline => "pipeline",
            Mode::Streamed => "streamed",
        })
    }
}

fn parse_accum(s: &str) -> Result<AccumulationMode, String> {
    s.parse()
}

fn parse_chunk(s: &str) -> Result<ChunkSize, String> {
    if s == "auto" {
        return Ok(ChunkSize::Auto);
    }
    match s.parse::<usize>() {
        Ok(0) => Err("chunk size must be at least 1".into()),
        Ok(n) => Ok(ChunkSize::Fixed(n)),
        Err(_) => Err(format!("expected a positive integer or \"auto\", got {s:?}")),
    }
}

fn parse_preset(s: &str) -> Result<BenchmarkPreset, String> {
    s.parse()
}

#[derive(Args, Debug, Default)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mesh file written by `generate`.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<BenchmarkPreset>,
    #[arg(long)]
    pub elements: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub mode: Vec<Mode>,
    /// Elements per chunk, or `auto`.
    #[arg(long, value_parser = parse_chunk)]
    pub chunk_size: Option<ChunkSize>,
    #[arg(long)]
    pub fifo_depth: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub engines: Vec<usize>,
    #[arg(long, value_parser = parse_accum, value_delimiter = ',')]
    pub accum: Vec<AccumulationMode>,
    #[arg(long)]
    pub offload_cartesian: bool,
    /// Connect producers directly to consumers instead of routing streams
    /// through intermediate stages.
    #[arg(long)]
    pub no_routing: bool,
    #[arg(long)]
    pub watchdog_secs: Option<f64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run gather, compute and scatter of each chunk back to back.
    #[arg(long)]
    pub no_overlap: bool,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file for per-run pipeline metrics (bench only).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 100_000)]
    pub elements: u64,
    /// Quadrature points per element.
    #[arg(long, default_value_t = 4)]
    pub gauss: u64,
    /// JSON file with cost parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// JSON file with an array of additional variants.
    #[arg(long)]
    pub variants: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Everything a verify or bench run needs; mirrors the JSON config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Option<BenchmarkPreset>,
    pub elements: Option<usize>,
    pub points: Option<usize>,
    pub mesh: Option<PathBuf>,
    pub seed: u64,
    pub modes: Vec<Mode>,
    pub engines: Vec<usize>,
    pub accum: Vec<AccumulationMode>,
    pub offload_cartesian: bool,
    pub pipeline: PipelineConfig,
    pub schedule: StreamScheduleConfig,
    pub repeats: usize,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: None,
            elements: None,
            points: None,
            mesh: None,
            seed: DEFAULT_SEED,
            modes: vec![Mode::Reference, Mode::Pipeline, Mode::Streamed],
            engines: vec![1],
            accum: vec![AccumulationMode::default()],
            offload_cartesian: false,
            pipeline: PipelineConfig::default(),
            schedule: StreamScheduleConfig::default(),
            repeats: 3,
            out: None,
            metrics: None,
        }
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Config file (if any) overlaid with command-line flags.
    pub fn from_args(args: &RunArgs) -> Result<Self, CliError> {
        let mut c: RunConfig = match &args.config {
            Some(path) => read_json(path)?,
            None => RunConfig::default(),
        };
        if args.mesh.is_some() || args.preset.is_some() || args.elements.is_some() || args.points.is_some() {
            c.mesh = args.mesh.clone();
            c.preset = args.preset;
            c.elements = args.elements;
            c.points = args.points;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if !args.mode.is_empty() {
            c.modes = args.mode.clone();
        }
        if let Some(cs) = args.chunk_size {
            c.schedule.chunk_size = cs;
        }
        if let Some(d) = args.fifo_depth {
            c.pipeline.fifo_depth = d;
        }
        if !args.engines.is_empty() {
            c.engines = args.engines.clone();
        }
        if !args.accum.is_empty() {
            c.accum = args.accum.clone();
        }
        c.offload_cartesian |= args.offload_cartesian;
        if args.no_routing {
            c.pipeline.routing_enabled = false;
        }
        if let Some(s) = args.watchdog_secs {
            if !(s.is_finite() && s > 0.0) {
                return Err(CliError::Usage(format!("watchdog must be positive, got {s}")));
            }
            c.pipeline.watchdog_timeout = Duration::from_secs_f64(s);
        }
        if let Some(w) = args.workers {
            c.schedule.worker_count = w;
        }
        if args.no_overlap {
            c.schedule.overlap = false;
        }
        if let Some(r) = args.repeats {
            c.repeats = r;
        }
        if args.out.is_some() {
            c.out = args.out.clone();
        }
        if args.metrics.is_some() {
            c.metrics = args.metrics.clone();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: &str| Err(CliError::Usage(m.into()));
        if self.repeats == 0 {
            return usage("repeats must be at least 1");
        }
        if self.modes.is_empty() || self.engines.is_empty() || self.accum.is_empty() {
            return usage("mode, engines and accum lists must not be empty");
        }
        if self.engines.contains(&0) {
            return usage("engines must be at least 1");
        }
        if self.pipeline.fifo_depth == 0 {
            return usage("fifo depth must be at least 1");
        }
        if self.schedule.worker_count == 0 {
            return usage("workers must be at least 1");
        }
        if self.schedule.chunk_size == ChunkSize::Fixed(0) {
            return usage("chunk size must be at least 1");
        }
        Ok(())
    }

    /// Label used in the `benchmark` CSV column.
    pub fn benchmark_name(&self) -> String {
        if let Some(p) = &self.mesh {
            return p.file_stem().map_or("mesh".into(), |s| s.to_string_lossy().into_owned());
        }
        match self.preset {
            Some(p) => p.name().into(),
            None => "custom".into(),
        }
    }

    pub fn load_mesh(&self) -> Result<Mesh<f64>, CliError> {
        if let Some(path) = &self.mesh {
            return load_mesh(path).map_err(|source| CliError::Mesh { path: path.clone(), source });
        }
        let (e, p) = mesh_sizes(self.preset, self.elements, self.points)?;
        generate_synthetic_mesh(e, p, self.seed).map_err(|e| CliError::Usage(e.to_string()))
    }
}

pub fn mesh_sizes(
    preset: Option<BenchmarkPreset>,
    elements: Option<usize>,
    points: Option<usize>,
) -> Result<(usize, usize), CliError> {
    match (preset, elements, points) {
        (Some(p), None, None) => Ok(p.sizes()),
        (None, Some(e), Some(p)) => Ok((e, p)),
        (Some(_), _, _) => Err(CliError::Usage("--preset cannot be combined with --elements/--points".into())),
        _ => Err(CliError::Usage("specify --mesh, --preset, or both --elements and --points".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(argv: &[&str]) -> RunArgs {
        let mut full = vec!["flowforge", "bench"];
        full.extend_from_slice(argv);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Bench(a) => a,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_override_defaults() {
        let a = run(&[
            "--preset", "cylinder2d", "--mode", "pipeline,streamed", "--engines", "1,2,3", "--accum", "serial,locked",
            "--chunk-size", "auto", "--fifo-depth", "2", "--offload-cartesian", "--repeats", "5",
        ]);
        let c = RunConfig::from_args(&a).unwrap();
        assert_eq!(c.modes, [Mode::Pipeline, Mode::Streamed]);
        assert_eq!(c.engines, [1, 2, 3]);
        assert_eq!(c.accum, [AccumulationMode::Serial, AccumulationMode::Locked]);
        assert_eq!(c.schedule.chunk_size, ChunkSize::Auto);
        assert_eq!(c.pipeline.fifo_depth, 2);
        assert!(c.offload_cartesian);
        assert_eq!(c.repeats, 5);
        assert_eq!(c.benchmark_name(), "cylinder2d");
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Cli::try_parse_from(["flowforge", "bench", "--chunk-size", "0"]).is_err());
        assert!(Cli::try_parse_from(["flowforge", "bench", "--accum", "atomic"]).is_err());
        let c = RunConfig::from_args(&run(&["--preset", "elbow", "--repeats", "0"]));
        assert!(matches!(c, Err(CliError::Usage(_))));
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"elements": 10, "points": 8, "repeats": 2, "engines": [2], "pipeline": {"fifo_depth": 4}}"#)
            .unwrap();
        let c = RunConfig::from_args(&run(&["--config", path.to_str().unwrap(), "--fifo-depth", "1"])).unwrap();
        assert_eq!((c.elements, c.points, c.repeats, c.engines.clone()), (Some(10), Some(8), 2, vec![2]));
        assert_eq!(c.pipeline.fifo_depth, 1);
        assert!(c.pipeline.routing_enabled);
        assert_eq!(c.load_mesh().unwrap().num_elements(), 10);
    }

    #[test]
    fn mesh_source_required() {
        assert!(mesh_sizes(None, Some(3), None).is_err());
        assert!(mesh_sizes(Some(BenchmarkPreset::Elbow), Some(3), None).is_err());
        assert_eq!(mesh_sizes(Some(BenchmarkPreset::Sphere100k), None, None).unwrap(), (100_000, 15768));
    }
}
