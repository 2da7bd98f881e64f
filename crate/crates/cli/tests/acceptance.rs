//! Acceptance run: one PASS/FAIL line per primary criterion, with the
//! tolerances pinned below. Pass a word to run only the criteria whose key
//! contains it, e.g. `cargo test -p cutfront-cli --test acceptance -- oracle`.

#[path = "../../core/tests/common/mod.rs"]
mod common;
#[path = "../../service/tests/common/mod.rs"]
mod scripted;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::sequences::{run_sequence, SequenceOutcome, SequenceSpec};
use common::{collapse_reference, diff, random_cloud, reference_octree, seeded};
use cutfront::persist::{
    normalize, read_hierarchy, read_sorted_stream, write_hierarchy, write_sorted_stream, BoundingBox, HierarchyHeader,
    StreamHeader,
};
use cutfront::sorter::{assign_codes, sort_records};
use cutfront::synthetic::{surface_cloud, uniform_cloud};
use cutfront::{build_sorted, BuildConfig, Camera, Node, Point3, PointRecord, RawPoint, Vector3};
use cutfront_cli::bench::measure;
use cutfront_service::{spawn_server, AppState, ClientMessage, Pipeline, PipelineConfig, ServiceConfig, Source};
use rand::Rng;
use scripted::{divergences, matching_session, Observed, ScriptedClient};

const ORACLE_CLOUDS: u64 = 200;
const ORACLE_POINTS: std::ops::RangeInclusive<usize> = 10..=10_000;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const SEQUENCES: u64 = 10_000;
const DETERMINISM_POINTS: usize = 1_000_000;
const DETERMINISM_THREADS: [usize; 4] = [1, 2, 4, 8];
const DETERMINISM_CHUNKS: [usize; 3] = [1, 4, 16];
const EARLY_RENDER_POINTS: usize = 1_000_000;
const EARLY_RENDER_CHUNKS: usize = 16;
const EARLY_RENDER_REPEATS: usize = 3;
const MAX_COMPLETE_SLOWDOWN: f64 = 4.0;
const FORMAT_RATIO: f64 = 0.25;
const SESSION_LENGTH: Duration = Duration::from_secs(60);

type Criterion = (&'static str, &'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(l_max: u8, threads: usize) -> BuildConfig {
    BuildConfig {
        l_max,
        worker_threads: threads,
        ..BuildConfig::default()
    }
}

fn streamed(records: Vec<PointRecord>, build: BuildConfig, chunks: usize, sort_level: u8) -> Arc<Node> {
    let pipeline = Pipeline::start(
        Source::Records(records),
        PipelineConfig {
            build,
            num_chunks: chunks,
            sort_level,
            ..PipelineConfig::default()
        },
    )
    .expect("pipeline starts");
    pipeline.join().expect("build succeeds").0
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut rng = seeded(0x0AC1E);
    for seed in 0..ORACLE_CLOUDS {
        let n = rng.gen_range(ORACLE_POINTS);
        let l_max = rng.gen_range(2..=5);
        let threads = rng.gen_range(1..=8);
        let chunks = rng.gen_range(1..=16);
        let collapse = rng.gen_bool(0.5);
        let points = random_cloud(&mut seeded(seed), n);
        let records = assign_codes(&points, 7).unwrap();
        let build = BuildConfig {
            leaf_collapse: collapse,
            worklist_size: rng.gen_range(1..=64),
            ..config(l_max, threads)
        };
        let tree = streamed(records, build, chunks, 7);
        let mut reference = reference_octree(&points, l_max, 7, 0.25);
        if collapse {
            reference = collapse_reference(reference, l_max, 0.25);
        }
        if let Some(d) = diff(&tree, &reference) {
            mismatches.push(format!(
                "cloud {seed} ({n} points, l_max {l_max}, {threads} threads, {chunks} chunks): {d}"
            ));
        }
    }
    let took = start.elapsed();
    verdict(
        mismatches.is_empty() && took < ORACLE_TIME_LIMIT,
        format!(
            "{} of {ORACLE_CLOUDS} clouds match the top-down octree in {:.1} s (limit {} s){}",
            ORACLE_CLOUDS as usize - mismatches.len(),
            took.as_secs_f64(),
            ORACLE_TIME_LIMIT.as_secs(),
            mismatches
                .first()
                .map(|m| format!("; first mismatch: {m}"))
                .unwrap_or_default()
        ),
    )
}

/// The randomized sequences shared by the invariant, latency and emptying
/// criteria, run once across all cores.
fn sequences() -> &'static [(SequenceSpec, SequenceOutcome)] {
    static RUNS: std::sync::OnceLock<Vec<(SequenceSpec, SequenceOutcome)>> = std::sync::OnceLock::new();
    RUNS.get_or_init(|| {
        let mut rng = seeded(0x5E0);
        let specs: Vec<SequenceSpec> = (0..SEQUENCES).map(|s| SequenceSpec::random(s, &mut rng)).collect();
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(specs.len()));
        let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&spec) = specs.get(i) else { break };
                    let mut out = run_sequence(spec);
                    out.tree = None;
                    results.lock().unwrap().push((spec, out));
                });
            }
        });
        let mut all = results.into_inner().unwrap();
        all.sort_by_key(|(s, _)| s.seed);
        all
    })
}

fn invariant_suite() -> Verdict {
    let runs = sequences();
    let violations: Vec<(u64, &String)> = runs
        .iter()
        .flat_map(|(s, o)| o.violations.iter().map(move |v| (s.seed, v)))
        .collect();
    let ops: usize = runs.iter().map(|(_, o)| o.operations).sum();
    let cut: usize = runs.iter().map(|(_, o)| o.cut_checks).sum();
    let front: usize = runs.iter().map(|(_, o)| o.front_checks).sum();
    verdict(
        violations.is_empty(),
        format!(
            "{} violations over {} sequences ({ops} operations, {cut} cut and {front} front checks){}",
            violations.len(),
            runs.len(),
            violations
                .first()
                .map(|(s, v)| format!("; first: seed {s}: {v}"))
                .unwrap_or_default()
        ),
    )
}

fn substitution_bound() -> Verdict {
    // Latency counts every evaluation since registration, so only runs that
    // always visit the whole front measure it in full evaluations.
    let mut worst: BTreeMap<(u8, bool), u64> = BTreeMap::new();
    let mut substitutions = 0;
    for (spec, out) in sequences().iter().filter(|(s, _)| s.full_only) {
        let w = worst.entry((spec.l_max, spec.leaf_collapse)).or_default();
        *w = (*w).max(out.max_latency);
        substitutions += out.substitutions;
    }
    // With two levels and leaf collapse, leaves sit on two levels while one
    // evaluation drains one; that case is reported but kept out of the bound.
    let out_of_scope = |l_max: u8, collapse: bool| l_max == 2 && collapse;
    let exceptions: Vec<String> = worst
        .iter()
        .filter(|(&(l, c), &w)| !out_of_scope(l, c) && w > l as u64 - 1)
        .map(|((l, c), w)| format!("l_max {l}{}: {w}", if *c { " collapsed" } else { "" }))
        .collect();
    let table: Vec<String> = worst
        .iter()
        .map(|((l, c), w)| format!("{l}{}:{w}", if *c { "c" } else { "" }))
        .collect();
    verdict(
        exceptions.is_empty(),
        format!(
            "{substitutions} substitutions, worst latency per l_max [{}] (bound l_max-1; l_max 2 collapsed reported only){}",
            table.join(" "),
            if exceptions.is_empty() { String::new() } else { format!("; over the bound: {}", exceptions.join(", ")) }
        ),
    )
}

fn single_evaluation_emptying() -> Verdict {
    let runs = sequences();
    let full: usize = runs.iter().map(|(_, o)| o.full_evaluations).sum();
    let failures: usize = runs.iter().map(|(_, o)| o.emptying_failures).sum();
    verdict(
        failures == 0 && full > 0,
        format!("{failures} of {full} full evaluations left their chosen level pending"),
    )
}

fn hierarchy_bytes(root: &Arc<Node>, l_max: u8, collapse: bool, ratio: f64) -> Vec<u8> {
    let mut buf = Vec::new();
    let header = HierarchyHeader::new(l_max, 0, collapse, ratio, BoundingBox::UNIT);
    write_hierarchy(&mut buf, &header, root).unwrap();
    buf
}

fn determinism() -> Verdict {
    let records = assign_codes(&surface_cloud(DETERMINISM_POINTS, 21), 10).unwrap();
    let mut reference: Option<Vec<u8>> = None;
    let mut differing = Vec::new();
    let mut runs = 0;
    for threads in DETERMINISM_THREADS {
        for chunks in DETERMINISM_CHUNKS {
            let root = streamed(records.clone(), config(7, threads), chunks, 10);
            let bytes = hierarchy_bytes(&root, 7, false, 0.25);
            runs += 1;
            match &reference {
                None => reference = Some(bytes),
                Some(r) if *r != bytes => differing.push(format!("{threads}t/{chunks}c")),
                Some(_) => {}
            }
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "{runs} builds of {DETERMINISM_POINTS} points, {} byte files{}",
            reference.map_or(0, |r| r.len()),
            if differing.is_empty() {
                ", all identical".to_owned()
            } else {
                format!("; differing: {}", differing.join(" "))
            }
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn early_render() -> Verdict {
    let records = assign_codes(&surface_cloud(EARLY_RENDER_POINTS, 22), 10).unwrap();
    let build = config(7, BuildConfig::default().worker_threads);
    let (mut first, mut complete) = (BTreeMap::<usize, Vec<f64>>::new(), BTreeMap::<usize, Vec<f64>>::new());
    for _ in 0..EARLY_RENDER_REPEATS {
        for chunks in [1, EARLY_RENDER_CHUNKS] {
            let row = measure(records.clone(), build, 10, chunks).expect("bench run");
            first.entry(chunks).or_default().push(row.first_render_ms);
            complete.entry(chunks).or_default().push(row.complete_ms);
        }
    }
    let f1 = median(first.remove(&1).unwrap());
    let fk = median(first.remove(&EARLY_RENDER_CHUNKS).unwrap());
    let c1 = median(complete.remove(&1).unwrap());
    let ck = median(complete.remove(&EARLY_RENDER_CHUNKS).unwrap());
    verdict(
        fk < f1 && ck <= MAX_COMPLETE_SLOWDOWN * c1,
        format!(
            "first render {fk:.0} ms with {EARLY_RENDER_CHUNKS} chunks vs {f1:.0} ms with 1 ({:.1}x earlier); \
             complete {ck:.0} vs {c1:.0} ms ({:.2}x, limit {MAX_COMPLETE_SLOWDOWN}x); medians of {EARLY_RENDER_REPEATS}",
            f1 / fk,
            ck / c1
        ),
    )
}

fn leaf_points(root: &Node) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    root.visit(&mut |n| {
        if n.children.is_empty() {
            out.extend(n.splats.iter().map(|s| s.center.map(f32::to_bits)));
        }
    });
    out.sort_unstable();
    out
}

fn lonely_deep_leaves(root: &Node, l_max: u8) -> usize {
    let mut n = 0;
    root.visit(&mut |p| {
        if p.children.len() == 1 && p.children[0].children.is_empty() && p.children[0].level() == l_max {
            n += 1;
        }
    });
    n
}

fn leaf_collapse() -> Verdict {
    let mut problems = Vec::new();
    let mut summary = Vec::new();
    for (name, points, l_max) in [
        ("surface", surface_cloud(200_000, 23), 8u8),
        ("uniform", uniform_cloud(100_000, 24), 7),
        ("clustered", random_cloud(&mut seeded(25), 50_000), 6),
    ] {
        let mut records = assign_codes(&points, 10).unwrap();
        sort_records(&mut records);
        let mut expected: Vec<[u32; 3]> = points.iter().map(|p| p.position.map(f32::to_bits)).collect();
        expected.sort_unstable();
        let plain = build_sorted(&records, config(l_max, 4), 4096).unwrap();
        let collapsed = build_sorted(
            &records,
            BuildConfig {
                leaf_collapse: true,
                ..config(l_max, 4)
            },
            4096,
        )
        .unwrap();
        let (np, nc) = (plain.node_count(), collapsed.node_count());
        let (sp, sc) = (
            hierarchy_bytes(&plain, l_max, false, 0.25).len(),
            hierarchy_bytes(&collapsed, l_max, true, 0.25).len(),
        );
        if nc >= np || sc >= sp {
            problems.push(format!("{name}: nodes {np}->{nc}, bytes {sp}->{sc}"));
        }
        let lonely = lonely_deep_leaves(&collapsed, l_max);
        if lonely > 0 {
            problems.push(format!("{name}: {lonely} sibling-less deepest leaves remain"));
        }
        if leaf_points(&collapsed) != expected || leaf_points(&plain) != expected {
            problems.push(format!("{name}: leaf points differ from the input"));
        }
        summary.push(format!("{name} nodes {np}->{nc} bytes {sp}->{sc}"));
    }
    verdict(
        problems.is_empty(),
        format!(
            "{}; point multisets conserved{}",
            summary.join(", "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    )
}

fn format_roundtrips() -> Verdict {
    let mut problems = Vec::new();
    let mut checked = 0;
    let mut sizes = Vec::new();
    let mut rng = seeded(26);
    let clouds: Vec<(String, Vec<RawPoint>, u8)> = (0..20)
        .map(|i| {
            let n = rng.gen_range(1..20_000);
            (format!("random#{i}"), random_cloud(&mut rng, n), rng.gen_range(2..=9))
        })
        .chain([
            ("surface".to_owned(), surface_cloud(300_000, 27), 7),
            ("uniform".to_owned(), uniform_cloud(200_000, 28), 7),
        ])
        .collect();
    for (name, points, l_max) in clouds {
        let cloud = normalize(points).unwrap();
        let mut records = assign_codes(&cloud.points, 10).unwrap();
        sort_records(&mut records);
        let header = StreamHeader::for_records(&records, 10, cloud.bbox);
        let mut stream = Vec::new();
        write_sorted_stream(&mut stream, &header, &records).unwrap();
        let (h2, back) = read_sorted_stream(stream.as_slice()).unwrap();
        let mut again = Vec::new();
        write_sorted_stream(&mut again, &h2, &back).unwrap();
        if again != stream {
            problems.push(format!("{name}: sorted stream changed on a roundtrip"));
        }
        for collapse in [false, true] {
            let build = BuildConfig {
                leaf_collapse: collapse,
                parent_ratio: FORMAT_RATIO,
                ..config(l_max, 4)
            };
            let root = build_sorted(&records, build, 4096).unwrap();
            let header = HierarchyHeader::new(l_max, 0, collapse, FORMAT_RATIO, cloud.bbox);
            let mut tree = Vec::new();
            write_hierarchy(&mut tree, &header, &root).unwrap();
            let (h3, back) = read_hierarchy(tree.as_slice()).unwrap();
            let mut again = Vec::new();
            write_hierarchy(&mut again, &h3, &back).unwrap();
            if again != tree {
                problems.push(format!("{name}: hierarchy changed on a roundtrip"));
            }
            if stream.len() >= tree.len() {
                problems.push(format!(
                    "{name} l_max {l_max}{}: stream {} >= hierarchy {}",
                    if collapse { " collapsed" } else { "" },
                    stream.len(),
                    tree.len()
                ));
            }
            if !name.starts_with("random") && !collapse {
                sizes.push(format!("{name} {} < {}", stream.len(), tree.len()));
            }
            checked += 1;
        }
    }
    verdict(
        problems.is_empty(),
        format!(
            "{checked} stream/hierarchy pairs byte-exact; stream vs hierarchy bytes: {}{}",
            sizes.join(", "),
            if problems.is_empty() {
                String::new()
            } else {
                format!("; problems: {}", problems.join("; "))
            }
        ),
    )
}

/// A camera path that orbits, dives in and backs out over the session.
fn steering(t: f64) -> Camera {
    let angle = t * 0.4;
    let distance = 0.35 + 2.2 * (0.5 + 0.5 * (t * 0.23).cos());
    let height = 0.5 + 0.6 * (t * 0.17).sin();
    let eye = Point3::new(0.5 + distance * angle.cos(), height, 0.5 + distance * angle.sin());
    let target = Point3::new(0.5 + 0.2 * (t * 0.31).sin(), 0.5, 0.5 + 0.2 * (t * 0.29).cos());
    Camera::look_at(eye, target, Vector3::y(), 60.0, (1280, 720)).unwrap()
}

fn service_session() -> Verdict {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let records = assign_codes(&surface_cloud(400_000, 29), 10).unwrap();
    // Paced so the build runs through roughly the first half of the session.
    let pipeline = Pipeline::start(
        Source::Records(records),
        PipelineConfig {
            build: config(7, BuildConfig::default().worker_threads),
            num_chunks: 16,
            pace: Duration::from_millis(1800),
            ..PipelineConfig::default()
        },
    )
    .unwrap();
    let observed = Observed::default();
    let state = observed.attach(AppState::new(Arc::clone(pipeline.shared()), ServiceConfig::default()));
    let client = runtime.block_on(async {
        let addr = spawn_server("127.0.0.1:0".parse().unwrap(), state).await.unwrap();
        let mut client = ScriptedClient::connect(addr).await;
        let start = Instant::now();
        let mut last_threshold = None;
        while start.elapsed() < SESSION_LENGTH && !client.closed {
            let t = start.elapsed().as_secs_f64();
            client.look(&steering(t)).await;
            let threshold = [20.0, 6.0, 20.0, 250.0, 20.0, 3.0][(t / 10.0) as usize % 6];
            if last_threshold != Some(threshold) {
                last_threshold = Some(threshold);
                client.send(&ClientMessage::SetThreshold { pixels: threshold }).await;
            }
            client.pump(Duration::from_millis(100)).await;
        }
        client.settle(Duration::from_millis(500)).await;
        client
    });
    let build_ok = pipeline.join().is_ok();
    let versions = client.history.len();
    let Some(session) = matching_session(&observed, &client) else {
        return verdict(
            false,
            format!("no server session matches the client's {versions} versions"),
        );
    };
    let bad = divergences(&observed, session, &client);
    let served = observed.sessions()[&session].len();
    verdict(
        bad.is_empty() && versions > 100 && client.completes() == 1 && build_ok && client.errors().is_empty(),
        format!(
            "{} divergent of {versions} client versions ({served} served) over {} s; complete seen {} time(s){}",
            bad.len(),
            SESSION_LENGTH.as_secs(),
            client.completes(),
            bad.first()
                .map(|v| format!("; first divergence at version {v}"))
                .unwrap_or_default()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("oracle", "oracle equivalence", oracle_equivalence),
        ("invariants", "invariant suite", invariant_suite),
        ("substitution", "substitution bound", substitution_bound),
        ("emptying", "single-evaluation emptying", single_evaluation_emptying),
        ("determinism", "determinism", determinism),
        ("early-render", "early render", early_render),
        ("collapse", "leaf collapse", leaf_collapse),
        ("formats", "format roundtrips", format_roundtrips),
        ("service", "service protocol", service_session),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (key, name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| key.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria pass", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
