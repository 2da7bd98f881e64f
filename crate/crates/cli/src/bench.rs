//! Time to first render and to completion across chunk counts.

use std::io::Write;
use std::time::{Duration, Instant};

use anyhow::Result;
use cutfront::{BuildConfig, Front, FrontConfig, PointRecord};
use cutfront_service::{default_camera, Pipeline, PipelineConfig, Source};

pub const CSV_HEADER: &str = "chunks,first_render_ms,complete_ms,peak_nodes";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub chunks: usize,
    /// From the start of sorting until a front first has something to draw.
    pub first_render_ms: f64,
    /// From the start of sorting until the hierarchy is finished.
    pub complete_ms: f64,
    /// Largest number of subtree roots the cut held at once.
    pub peak_nodes: usize,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.3},{:.3},{}",
            self.chunks, self.first_render_ms, self.complete_ms, self.peak_nodes
        )
    }
}

/// Sorts `records` in `chunks` ranges and builds from them while a front
/// watches the whole cloud.
pub fn measure(records: Vec<PointRecord>, build: BuildConfig, sort_level: u8, chunks: usize) -> Result<BenchRow> {
    let start = Instant::now();
    let pipeline = Pipeline::start(
        Source::Records(records),
        PipelineConfig {
            build,
            num_chunks: chunks,
            sort_level,
            ..PipelineConfig::default()
        },
    )?;
    let shared = std::sync::Arc::clone(pipeline.shared());
    let cam = default_camera();
    let mut front = Front::new(
        build.l_max,
        FrontConfig {
            threshold_pixels: build.projection_threshold,
            segment_budget: build.segment_budget,
        },
    );
    let mut first_render = None;
    while first_render.is_none() {
        let done = pipeline.is_finished();
        front.evaluate(&shared, &cam)?;
        if !front.render_set(&cam).is_empty() {
            first_render = Some(start.elapsed());
        } else if done {
            break;
        } else {
            std::thread::sleep(Duration::from_micros(200));
        }
    }
    let (_, stats) = pipeline.join()?;
    let complete = start.elapsed();
    let first_render = first_render.unwrap_or(complete);
    Ok(BenchRow {
        chunks,
        first_render_ms: first_render.as_secs_f64() * 1e3,
        complete_ms: complete.as_secs_f64() * 1e3,
        peak_nodes: stats.peak_roots,
    })
}

pub fn write_csv(mut out: impl Write, rows: &[BenchRow]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv())?;
    }
    out.flush()
}
