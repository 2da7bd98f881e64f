//! Input side of a session server: reads or sorts the source and feeds a
//! streaming build.

use std::path::PathBuf;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{bounded, Sender};
use cutfront::persist::{read_raw, SortedStreamReader};
use cutfront::sorter::{assign_codes, ChunkedSort, DEFAULT_SORT_LEVEL};
use cutfront::{BuildConfig, BuildStats, Node, PointRecord, Result, SharedHierarchy, StreamingBuild};
use log::info;

/// Records read from a sorted stream per chunk sent to the builder.
const STREAM_BATCH: usize = 1 << 16;

pub enum Source {
    /// A sorted stream file; its records go to the builder as they are read.
    Sorted(PathBuf),
    /// An XYZ or PLY file, normalized and sorted in chunks.
    Raw(PathBuf),
    /// Normalized points already tagged with codes, in any order.
    Records(Vec<PointRecord>),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub build: BuildConfig,
    /// Ranges the sorter splits unsorted input into.
    pub num_chunks: usize,
    pub sort_level: u8,
    /// Pause after each chunk, to watch a build on inputs that would
    /// otherwise finish before a viewer connects.
    pub pace: Duration,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            build: BuildConfig::default(),
            num_chunks: 1,
            sort_level: DEFAULT_SORT_LEVEL,
            pace: Duration::ZERO,
        }
    }
}

/// A running build and the thread feeding it.
pub struct Pipeline {
    build: StreamingBuild,
    feeder: JoinHandle<()>,
}

impl Pipeline {
    pub fn start(source: Source, config: PipelineConfig) -> Result<Self> {
        config.build.check()?;
        // Sorted streams carry their own level, checked once opened.
        if !matches!(source, Source::Sorted(_)) && config.sort_level < config.build.l_max {
            return Err(cutfront::Error::Config(format!(
                "sort level {} is shallower than the build depth {}",
                config.sort_level, config.build.l_max
            )));
        }
        let (tx, rx) = bounded(2);
        // The total is unknown until the source is opened; the feeder
        // reports progress through the shared hierarchy once it is.
        let build = StreamingBuild::spawn(config.build, rx, 0)?;
        let shared = Arc::clone(build.shared());
        let feeder = thread::Builder::new().name("cutfront-feed".into()).spawn(move || {
            if let Err(e) = feed(source, &config, &tx, &shared) {
                shared.abort(e.to_string());
            }
        })?;
        Ok(Pipeline { build, feeder })
    }

    pub fn shared(&self) -> &Arc<SharedHierarchy> {
        self.build.shared()
    }

    pub fn is_finished(&self) -> bool {
        self.build.is_finished()
    }

    pub fn join(self) -> Result<(Arc<Node>, BuildStats)> {
        let result = self.build.join();
        let _ = self.feeder.join();
        result
    }
}

fn feed(
    source: Source,
    config: &PipelineConfig,
    tx: &Sender<Vec<PointRecord>>,
    shared: &SharedHierarchy,
) -> Result<()> {
    let send = |chunk: Vec<PointRecord>| -> bool {
        let ok = tx.send(chunk).is_ok();
        if !config.pace.is_zero() {
            thread::sleep(config.pace);
        }
        ok
    };
    let sort = |records: Vec<PointRecord>| -> Result<()> {
        shared.expect_records(records.len() as u64);
        for chunk in ChunkedSort::new(records, config.num_chunks)? {
            if !send(chunk) {
                break;
            }
        }
        Ok(())
    };
    match source {
        Source::Records(records) => sort(records),
        Source::Raw(path) => {
            let cloud = read_raw(&path)?;
            info!("read {} points from {}", cloud.points.len(), path.display());
            sort(assign_codes(&cloud.points, config.sort_level)?)
        }
        Source::Sorted(path) => {
            let file = std::fs::File::open(&path)?;
            let mut reader = SortedStreamReader::new(std::io::BufReader::new(file))?;
            let level = reader.header().sort_level;
            if level < config.build.l_max {
                return Err(cutfront::Error::Config(format!(
                    "{} is sorted at level {level}, shallower than the build depth {}",
                    path.display(),
                    config.build.l_max
                )));
            }
            shared.expect_records(reader.remaining());
            loop {
                let batch = reader.read_batch(STREAM_BATCH)?;
                if batch.is_empty() || !send(batch) {
                    return Ok(());
                }
            }
        }
    }
}
