//! Checks a finished hierarchy by rebuilding it from its own leaves.

use std::fmt;
use std::sync::Arc;

use cutfront::persist::HierarchyHeader;
use cutfront::{MortonCode, Node, ObliqueCut, ParentPolicy};

/// Leaves concatenated between fixes while rebuilding.
const REBUILD_BATCH: usize = 4096;

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub nodes: usize,
    pub leaves: usize,
    pub fixes: usize,
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} nodes, {} leaves, {} cut states checked",
            self.nodes, self.leaves, self.fixes
        )?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

/// Structural checks, then a replay of the leaves through a fresh cut with
/// its invariants checked after every fix; the replayed tree must equal the
/// file's.
pub fn validate_tree(header: &HierarchyHeader, root: &Arc<Node>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let l_max = header.l_max;
    let mut leaves: Vec<Arc<Node>> = Vec::new();
    for n in root.breadth_first() {
        report.nodes += 1;
        if n.level() > l_max {
            report
                .problems
                .push(format!("node {} lies below depth {l_max}", n.code));
        }
        if n.children.is_empty() {
            if n.splats.is_empty() {
                report.problems.push(format!("leaf {} has no points", n.code));
            }
            leaves.push(n);
        } else if header.leaf_collapse
            && n.children.len() == 1
            && n.children[0].children.is_empty()
            && n.children[0].level() == l_max
        {
            report
                .problems
                .push(format!("{} keeps a sibling-less deepest leaf", n.code));
        }
    }
    report.leaves = leaves.len();
    if !report.ok() {
        return report;
    }
    leaves.sort_by_key(|n| n.code.span(l_max).unwrap_or(n.code));
    let policy = ParentPolicy {
        ratio: header.ratio(),
        leaf_collapse: header.leaf_collapse,
    };
    let mut cut = match ObliqueCut::with_policy(l_max, policy) {
        Ok(c) => c,
        Err(e) => {
            report.problems.push(format!("header settings: {e}"));
            return report;
        }
    };
    for batch in leaves.chunks(REBUILD_BATCH) {
        let nodes: Vec<Node> = batch.iter().map(|n| Node::leaf(n.code, n.splats.clone())).collect();
        if let Err(e) = cut.concatenate(nodes) {
            report.problems.push(format!("replaying leaves: {e}"));
            return report;
        }
        cut.fix();
        report.fixes += 1;
        let inv = cut.validate();
        if let Some(c) = inv.first_failure() {
            report
                .problems
                .push(format!("cut invariant \"{}\" fails at {:?}", c.name, c.witness));
            return report;
        }
    }
    match cut.finish() {
        Ok(rebuilt) => {
            if let Some(d) = first_difference(&rebuilt, root) {
                report.problems.push(d);
            }
        }
        Err(e) => report.problems.push(format!("finishing the replay: {e}")),
    }
    report
}

fn first_difference(a: &Node, b: &Node) -> Option<String> {
    let at = |c: MortonCode| format!("node {c}");
    if a.code != b.code {
        return Some(format!("replay has {} where the file has {}", a.code, b.code));
    }
    if a.splats != b.splats {
        return Some(format!(
            "{} carries different points than its subtree implies",
            at(a.code)
        ));
    }
    if a.children.len() != b.children.len() {
        return Some(format!(
            "{} has {} children, replay {}",
            at(a.code),
            b.children.len(),
            a.children.len()
        ));
    }
    a.children
        .iter()
        .zip(&b.children)
        .find_map(|(x, y)| first_difference(x, y))
}
