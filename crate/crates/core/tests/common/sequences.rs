//! Randomized operation sequences over a builder and a front, checking
//! every invariant after every step.

use std::sync::Arc;

use cutfront::{BuildConfig, Builder, Front, FrontConfig, Node, PointRecord, SharedHierarchy};
use rand::Rng;

use super::{random_camera, random_cloud, seeded, sorted_records};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSpec {
    pub seed: u64,
    pub l_max: u8,
    pub points: usize,
    pub leaf_collapse: bool,
    /// Only visit the whole front, never a segment.
    pub full_only: bool,
    pub threads: usize,
}

impl SequenceSpec {
    pub fn random(seed: u64, rng: &mut impl Rng) -> Self {
        SequenceSpec {
            seed,
            l_max: rng.gen_range(2..=5),
            points: rng.gen_range(10..600),
            leaf_collapse: rng.gen_bool(0.5),
            full_only: rng.gen_bool(0.3),
            threads: rng.gen_range(1..=3),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SequenceOutcome {
    pub operations: usize,
    pub cut_checks: usize,
    pub front_checks: usize,
    pub full_evaluations: usize,
    /// Full evaluations that left the chosen level's list non-empty.
    pub emptying_failures: usize,
    pub max_latency: u64,
    pub substitutions: u64,
    pub violations: Vec<String>,
    pub tree: Option<Arc<Node>>,
}

fn check_front(front: &Front, builder: Option<&Builder>, out: &mut SequenceOutcome, step: &str) {
    out.front_checks += 1;
    let report = front.validate();
    if let Some(f) = report.first_failure() {
        out.violations
            .push(format!("{step}: front {} at {:?}", f.name, f.witness));
    }
    if let Some(b) = builder {
        if let Some(c) = front.first_volatile(|c| b.cut().is_volatile(c)) {
            out.violations.push(format!("{step}: front holds volatile node {c}"));
        }
    }
}

fn check_cut(builder: &Builder, fixed: bool, out: &mut SequenceOutcome, step: &str) {
    out.cut_checks += 1;
    let report = builder.validate();
    // Concatenate leaves missing ancestors behind until the next complete fix.
    let checked = if fixed { 5 } else { 4 };
    if let Some(c) = report.checks[..checked].iter().find(|c| !c.holds) {
        out.violations
            .push(format!("{step}: cut {} at {:?}", c.name, c.witness));
    }
}

fn evaluate(front: &mut Front, shared: &SharedHierarchy, full: bool, rng: &mut impl Rng, out: &mut SequenceOutcome) {
    let cam = random_camera(rng);
    front.set_threshold(rng.gen_range(0.5..400.0));
    front.sync(shared).expect("placeholders arrive in order");
    let budget = if full { 0 } else { rng.gen_range(1..40) };
    let e = front.evaluate_local(&cam, budget);
    if e.full {
        out.full_evaluations += 1;
        if e.level.is_some() && e.pending_after != 0 {
            out.emptying_failures += 1;
        }
    }
}

pub fn run_sequence(spec: SequenceSpec) -> SequenceOutcome {
    let mut rng = seeded(spec.seed);
    let points = random_cloud(&mut rng, spec.points);
    let records: Vec<PointRecord> = sorted_records(&points, 6);
    let config = BuildConfig {
        l_max: spec.l_max,
        worker_threads: spec.threads,
        worklist_size: rng.gen_range(1..=16),
        leaf_collapse: spec.leaf_collapse,
        ..BuildConfig::default()
    };
    let mut builder = Builder::new(config).expect("valid config");
    let mut front = Front::new(
        spec.l_max,
        FrontConfig {
            threshold_pixels: 50.0,
            segment_budget: 0,
        },
    );
    let mut out = SequenceOutcome::default();
    let mut next = 0;
    while next < records.len() {
        out.operations += 1;
        match rng.gen_range(0..4) {
            0 | 1 => {
                let k = rng.gen_range(1..=64).min(records.len() - next);
                builder.ingest(&records[next..next + k]).expect("sorted input");
                next += k;
                check_cut(&builder, false, &mut out, "concatenate");
            }
            2 => {
                let backlog = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(0..200) };
                builder.advance(backlog);
                check_cut(&builder, backlog == 0, &mut out, "fix");
            }
            _ => {
                let full = spec.full_only || rng.gen_bool(0.5);
                evaluate(&mut front, builder.shared(), full, &mut rng, &mut out);
                check_front(&front, Some(&builder), &mut out, "evaluate");
            }
        }
    }
    builder.advance(0);
    check_cut(&builder, true, &mut out, "fix");
    let shared = Arc::clone(builder.shared());
    match builder.finish() {
        Ok(root) => out.tree = Some(root),
        Err(e) => out.violations.push(format!("finish: {e}")),
    }
    // Drain: a few more random evaluations, then full ones until every
    // leaf has been substituted.
    front.sync(&shared).expect("placeholders arrive in order");
    for _ in 0..rng.gen_range(0..6) {
        evaluate(
            &mut front,
            &shared,
            spec.full_only || rng.gen_bool(0.5),
            &mut rng,
            &mut out,
        );
        check_front(&front, None, &mut out, "drain");
    }
    let mut rounds = 0;
    while front.pending_total() > 0 {
        rounds += 1;
        if rounds > spec.l_max as usize + 3 {
            out.violations
                .push(format!("{} leaves never substituted", front.pending_total()));
            break;
        }
        // The first round may only finish a segmented pass.
        let e = front.evaluate_local(&random_camera(&mut rng), 0);
        if e.full {
            out.full_evaluations += 1;
            if e.level.is_some() && e.pending_after != 0 {
                out.emptying_failures += 1;
            }
        }
        check_front(&front, None, &mut out, "drain");
    }
    if front.entries().iter().any(|e| e.is_placeholder()) {
        out.violations.push("placeholder left in a finished front".into());
    }
    out.max_latency = front.stats().max_latency;
    out.substitutions = front.stats().substitutions;
    out
}
