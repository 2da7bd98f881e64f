//! The `cutfront` command line: sort raw clouds, build hierarchy files,
//! serve live sessions, benchmark chunking and validate results.
//!
//! Every option can also be set through an `OMICRON_`-prefixed environment
//! variable, e.g. `OMICRON_L_MAX=8`.

pub mod bench;
pub mod input;
pub mod validate;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cutfront::persist::{
    read_hierarchy_file, write_hierarchy_file, write_sorted_stream_file, HierarchyHeader, StreamHeader,
};
use cutfront::sorter::{sort_records, ChunkedSort, DEFAULT_SORT_LEVEL};
use cutfront::{BuildConfig, FrontConfig, SharedHierarchy};
use cutfront_service::{spawn_server, AppState, Pipeline, PipelineConfig, ServiceConfig, Source, WS_PATH};
use log::info;

#[derive(Debug, Parser)]
#[command(name = "cutfront", version, about = "Streaming point-cloud level of detail")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize a raw XYZ or PLY cloud and write it as a sorted stream.
    Sort {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        sorting: SortArgs,
    },
    /// Build a hierarchy file from a sorted stream or raw cloud.
    Build {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        sorting: SortArgs,
        #[command(flatten)]
        build: BuildArgs,
    },
    /// Build while serving render-set deltas to websocket viewers.
    Serve {
        input: PathBuf,
        #[command(flatten)]
        sorting: SortArgs,
        #[command(flatten)]
        build: BuildArgs,
        /// Address to listen on.
        #[arg(long, env = "OMICRON_LISTEN", default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Front evaluations per second for each viewer.
        #[arg(long, env = "OMICRON_TICK_HZ", default_value_t = 30.0)]
        tick_hz: f64,
        /// Pause after each sorted chunk, in milliseconds.
        #[arg(long, env = "OMICRON_PACE_MS", default_value_t = 0)]
        pace_ms: u64,
        /// Stop serving after this many seconds instead of running until killed.
        #[arg(long, env = "OMICRON_DURATION_SECS")]
        duration_secs: Option<f64>,
    },
    /// Print CSV timings of sorting plus building for several chunk counts.
    Bench {
        input: PathBuf,
        /// Chunk counts to measure, comma separated.
        #[arg(long, env = "OMICRON_CHUNKS", value_delimiter = ',', default_value = "1,4,16")]
        chunks: Vec<usize>,
        /// Morton level raw input is sorted at.
        #[arg(long, env = "OMICRON_SORT_LEVEL", default_value_t = DEFAULT_SORT_LEVEL)]
        level: u8,
        #[command(flatten)]
        build: BuildArgs,
        /// Write the CSV here instead of standard output.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check a hierarchy file's structure and replay it through a fresh cut.
    Validate { input: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct SortArgs {
    /// Morton level raw input is sorted at.
    #[arg(long, env = "OMICRON_SORT_LEVEL", default_value_t = DEFAULT_SORT_LEVEL)]
    pub level: u8,
    /// Ranges raw input is sorted in; later ranges sort while earlier ones build.
    #[arg(long, env = "OMICRON_CHUNKS", default_value_t = 1)]
    pub chunks: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// Depth of the hierarchy.
    #[arg(long, env = "OMICRON_L_MAX", default_value_t = 7)]
    pub l_max: u8,
    /// Roots per worker task in a fix pass.
    #[arg(long, env = "OMICRON_WORKLIST_SIZE", default_value_t = 32)]
    pub worklist_size: usize,
    /// Fraction of the children's points a parent keeps.
    #[arg(long, env = "OMICRON_RATIO", default_value_t = 0.25)]
    pub ratio: f64,
    /// Fold sibling-less deepest leaves into their parents.
    #[arg(long, env = "OMICRON_LEAF_COLLAPSE")]
    pub leaf_collapse: bool,
    /// Worker threads; defaults to the available cores.
    #[arg(long, env = "OMICRON_THREADS")]
    pub threads: Option<usize>,
    /// Projected size in pixels above which the front refines a node.
    #[arg(long, env = "OMICRON_THRESHOLD", default_value_t = 20.0)]
    pub threshold: f64,
}

impl BuildArgs {
    pub fn config(&self) -> Result<BuildConfig> {
        let defaults = BuildConfig::default();
        let config = BuildConfig {
            l_max: self.l_max,
            worklist_size: self.worklist_size,
            parent_ratio: self.ratio,
            leaf_collapse: self.leaf_collapse,
            worker_threads: self.threads.unwrap_or(defaults.worker_threads),
            projection_threshold: self.threshold,
            ..defaults
        };
        config.check()?;
        Ok(config)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Sort { input, output, sorting } => sort(&input, &output, &sorting),
        Command::Build {
            input,
            output,
            sorting,
            build,
        } => build_file(&input, &output, &sorting, &build.config()?),
        Command::Serve {
            input,
            sorting,
            build,
            listen,
            tick_hz,
            pace_ms,
            duration_secs,
        } => {
            let service = ServiceConfig {
                tick_hz,
                front: FrontConfig {
                    threshold_pixels: build.threshold,
                    ..FrontConfig::default()
                },
            };
            let pipeline = PipelineConfig {
                build: build.config()?,
                num_chunks: sorting.chunks,
                sort_level: sorting.level,
                pace: Duration::from_millis(pace_ms),
            };
            serve(
                &input,
                pipeline,
                service,
                listen,
                duration_secs.map(Duration::from_secs_f64),
            )
        }
        Command::Bench {
            input,
            chunks,
            level,
            build,
            out,
        } => run_bench(&input, &chunks, level, &build.config()?, out.as_deref()),
        Command::Validate { input } => validate_file(&input),
    }
}

fn sort(input: &Path, output: &Path, args: &SortArgs) -> Result<()> {
    if args.chunks == 0 {
        bail!("--chunks must be at least 1");
    }
    let loaded = input::load(input, args.level)?;
    if loaded.sorted {
        bail!("{} is already a sorted stream", input.display());
    }
    let mut records = loaded.records;
    if args.chunks == 1 {
        sort_records(&mut records);
    } else {
        records = ChunkedSort::new(records, args.chunks)?.flatten().collect();
    }
    let header = StreamHeader::for_records(&records, args.level, loaded.bbox);
    write_sorted_stream_file(output, &header, &records).with_context(|| format!("writing {}", output.display()))?;
    eprintln!(
        "sorted {} points at level {} into {}",
        records.len(),
        args.level,
        output.display()
    );
    Ok(())
}

/// Prints `progress <fraction> <elapsed-ms>` whenever the fraction moves.
struct ProgressPrinter {
    start: Instant,
    last: Option<f64>,
}

impl ProgressPrinter {
    fn new() -> Self {
        ProgressPrinter {
            start: Instant::now(),
            last: None,
        }
    }

    fn update(&mut self, shared: &SharedHierarchy) {
        let f = shared.progress().fraction;
        if self.last != Some(f) {
            self.last = Some(f);
            eprintln!("progress {f:.4} {}", self.start.elapsed().as_millis());
        }
    }
}

fn source_for(input: &Path, sort_level: u8) -> Result<(Source, cutfront::persist::BoundingBox)> {
    if input::is_sorted_stream(input)? {
        let header = input::stream_header(input)?;
        Ok((Source::Sorted(input.to_path_buf()), header.bbox))
    } else {
        let loaded = input::load(input, sort_level)?;
        Ok((Source::Records(loaded.records), loaded.bbox))
    }
}

fn build_file(input: &Path, output: &Path, sorting: &SortArgs, config: &BuildConfig) -> Result<()> {
    let (source, bbox) = source_for(input, sorting.level)?;
    let pipeline = Pipeline::start(
        source,
        PipelineConfig {
            build: *config,
            num_chunks: sorting.chunks,
            sort_level: sorting.level,
            pace: Duration::ZERO,
        },
    )?;
    let shared = Arc::clone(pipeline.shared());
    let mut progress = ProgressPrinter::new();
    while !pipeline.is_finished() {
        progress.update(&shared);
        std::thread::sleep(Duration::from_millis(50));
    }
    let (root, stats) = pipeline.join()?;
    progress.update(&shared);
    let header = HierarchyHeader::new(config.l_max, 0, config.leaf_collapse, config.parent_ratio, bbox);
    let nodes =
        write_hierarchy_file(output, &header, &root).with_context(|| format!("writing {}", output.display()))?;
    let bytes = std::fs::metadata(output)?.len();
    info!("{stats:?}");
    eprintln!("wrote {nodes} nodes ({bytes} bytes) to {}", output.display());
    Ok(())
}

fn serve(
    input: &Path,
    config: PipelineConfig,
    service: ServiceConfig,
    listen: SocketAddr,
    duration: Option<Duration>,
) -> Result<()> {
    let source = if input::is_sorted_stream(input)? {
        Source::Sorted(input.to_path_buf())
    } else {
        Source::Raw(input.to_path_buf())
    };
    let runtime = tokio::runtime::Runtime::new()?;
    let pipeline = Pipeline::start(source, config)?;
    let shared = Arc::clone(pipeline.shared());
    let addr = runtime.block_on(spawn_server(listen, AppState::new(Arc::clone(&shared), service)))?;
    eprintln!("listening on ws://{addr}{WS_PATH}");
    let start = Instant::now();
    let mut progress = ProgressPrinter::new();
    let mut reported = false;
    loop {
        progress.update(&shared);
        if shared.is_complete() && !reported {
            reported = true;
            match shared.failure() {
                Some(e) => eprintln!("build failed: {e}"),
                None => eprintln!("build complete"),
            }
        }
        if duration.is_some_and(|d| start.elapsed() >= d) {
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    runtime.shutdown_timeout(Duration::from_secs(1));
    pipeline.join().map(|_| ()).or_else(|e| {
        // The failure was already reported to viewers and on stderr.
        if duration.is_some() {
            Err(e.into())
        } else {
            Ok(())
        }
    })
}

fn run_bench(input: &Path, chunks: &[usize], level: u8, config: &BuildConfig, out: Option<&Path>) -> Result<()> {
    if chunks.is_empty() || chunks.contains(&0) {
        bail!("--chunks needs positive counts");
    }
    let loaded = input::load(input, level)?;
    let mut rows = Vec::with_capacity(chunks.len());
    for &k in chunks {
        let row = bench::measure(loaded.records.clone(), *config, loaded.sort_level, k)?;
        eprintln!("{}", row.csv());
        rows.push(row);
    }
    match out {
        Some(p) => bench::write_csv(BufWriter::new(File::create(p)?), &rows)?,
        None => bench::write_csv(std::io::stdout().lock(), &rows)?,
    }
    Ok(())
}

fn validate_file(input: &Path) -> Result<()> {
    let (header, root) = read_hierarchy_file(input).with_context(|| format!("reading {}", input.display()))?;
    let report = validate::validate_tree(&header, &root);
    let mut err = std::io::stderr().lock();
    if report.ok() {
        writeln!(err, "valid: {report}")?;
        Ok(())
    } else {
        bail!("invalid hierarchy: {report}")
    }
}
