//! Oblique hierarchy cuts.
//!
//! A cut is a delimiting deepest-level code `m_C` plus one list of disjoint
//! subtree roots per level. New deepest-level leaves are appended with
//! [`ObliqueCut::concatenate`]; [`ObliqueCut::fix`] then creates, bottom-up,
//! every ancestor whose span is at or left of `m_C`. Nodes at or left of the
//! cut are final; everything to the right is still to come.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lod::{self, Splat};
use crate::morton::{MortonCode, MAX_LEVEL};

/// An octree node. Immutable once shared.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub code: MortonCode,
    pub splats: Vec<Splat>,
    /// Ascending in Morton order; every child's parent is `code`.
    pub children: Vec<Arc<Node>>,
    /// Stand-in for a shallower leaf. Carries no splats and no children.
    pub is_placeholder: bool,
}

impl Node {
    pub fn leaf(code: MortonCode, splats: Vec<Splat>) -> Self {
        Node {
            code,
            splats,
            children: Vec::new(),
            is_placeholder: false,
        }
    }

    pub fn placeholder(code: MortonCode) -> Self {
        Node {
            code,
            splats: Vec::new(),
            children: Vec::new(),
            is_placeholder: true,
        }
    }

    pub fn level(&self) -> u8 {
        self.code.level()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty() && !self.is_placeholder
    }

    /// Nodes in this subtree, breadth-first, starting with `self`.
    pub fn breadth_first(self: &Arc<Self>) -> Vec<Arc<Node>> {
        let mut out = vec![Arc::clone(self)];
        let mut i = 0;
        while i < out.len() {
            let children = out[i].children.clone();
            out.extend(children);
            i += 1;
        }
        out
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Node)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }

    /// Mask of occupied octants, bit i set for a child in octant i.
    pub fn child_mask(&self) -> u8 {
        self.children.iter().fold(0, |m, c| m | 1 << c.code.octant())
    }
}

/// How fix fills in parent payloads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentPolicy {
    /// Fraction of the children's splats a parent keeps.
    pub ratio: f64,
    /// Fold sibling-less deepest-level leaves into their parents.
    pub leaf_collapse: bool,
}

impl Default for ParentPolicy {
    fn default() -> Self {
        ParentPolicy {
            ratio: 0.25,
            leaf_collapse: false,
        }
    }
}

impl ParentPolicy {
    pub fn check(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!(
                "parent point ratio {} outside (0, 1]",
                self.ratio
            )));
        }
        Ok(())
    }

    /// Parent node owning `children`, with its subsampled payload.
    pub fn make_parent(&self, code: MortonCode, children: Vec<Arc<Node>>) -> Node {
        let groups: Vec<&[Splat]> = children.iter().map(|c| c.splats.as_slice()).collect();
        let splats = if groups.iter().all(|g| g.is_empty()) {
            Vec::new()
        } else {
            lod::subsample_for_parent(&groups, self.ratio).expect("ratio checked at construction")
        };
        Node {
            code,
            splats,
            children,
            is_placeholder: false,
        }
    }
}

/// Bookkeeping of one complete fix: how many parents were created per level
/// and the boundary `S` of out-of-cut parents where remaining roots stop.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixPass {
    /// `(level, count)` of parents created, deepest first.
    pub created: Vec<(u8, usize)>,
    /// Parents of the roots left in the cut, ascending.
    pub boundary: Vec<MortonCode>,
}

/// One invariant's verdict, with the first offending code on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub witness: Option<MortonCode>,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantReport {
    pub checks: [InvariantCheck; 5],
}

impl InvariantReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    /// Verdict for invariant `1.n`.
    pub fn check(&self, n: usize) -> &InvariantCheck {
        &self.checks[n - 1]
    }

    /// First failing check, if any.
    pub fn first_failure(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

impl fmt::Display for InvariantReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match c.witness {
                None => writeln!(f, "{}: {}", c.name, if c.holds { "ok" } else { "FAILED" })?,
                Some(w) => writeln!(f, "{}: FAILED at {w}", c.name)?,
            }
        }
        Ok(())
    }
}

pub struct ObliqueCut {
    l_max: u8,
    m_c: Option<MortonCode>,
    sealed: bool,
    /// Root lists indexed by level, 0..=l_max.
    lists: Vec<Vec<Arc<Node>>>,
    /// Per level, the deepest-level code up to which the list is known to
    /// hold every root it will ever receive. Parents are only created for
    /// roots below this bound, so a parent never misses a late child.
    complete: Vec<Option<MortonCode>>,
    /// Shallow leaves whose placeholders are still travelling up the lists.
    shallow: BTreeMap<MortonCode, Arc<Node>>,
    policy: ParentPolicy,
}

impl fmt::Debug for ObliqueCut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sizes: Vec<usize> = self.lists.iter().map(Vec::len).collect();
        f.debug_struct("ObliqueCut")
            .field("l_max", &self.l_max)
            .field("m_c", &self.m_c)
            .field("sealed", &self.sealed)
            .field("list_sizes", &sizes)
            .finish()
    }
}

impl ObliqueCut {
    pub fn new(l_max: u8) -> Result<Self> {
        Self::with_policy(l_max, ParentPolicy::default())
    }

    pub fn with_policy(l_max: u8, policy: ParentPolicy) -> Result<Self> {
        if !(1..=MAX_LEVEL).contains(&l_max) {
            return Err(Error::Config(format!("l_max {l_max} outside 1..={MAX_LEVEL}")));
        }
        policy.check()?;
        Ok(ObliqueCut {
            l_max,
            m_c: None,
            sealed: false,
            lists: vec![Vec::new(); l_max as usize + 1],
            complete: vec![None; l_max as usize + 1],
            shallow: BTreeMap::new(),
            policy,
        })
    }

    pub fn l_max(&self) -> u8 {
        self.l_max
    }

    pub fn policy(&self) -> &ParentPolicy {
        &self.policy
    }

    /// The delimiting code, absent while nothing has been concatenated.
    pub fn m_c(&self) -> Option<MortonCode> {
        self.m_c
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn roots(&self, level: u8) -> &[Arc<Node>] {
        &self.lists[level as usize]
    }

    pub fn root_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    /// Appends new leaves to the right of the cut and advances `m_C`.
    ///
    /// Leaves must be strictly ascending by span and lie right of `m_C`.
    /// Deepest-level leaves enter the deepest list directly; a shallower leaf
    /// enters as its deepest placeholder and is held aside until fix walks
    /// the placeholder up to the leaf's own level. Ancestors of the new
    /// leaves are not created here, so invariant 1.5 fails until [`fix`].
    ///
    /// [`fix`]: ObliqueCut::fix
    pub fn concatenate(&mut self, leaves: Vec<Node>) -> Result<()> {
        if leaves.is_empty() {
            return Ok(());
        }
        if self.sealed {
            return Err(Error::Sealed);
        }
        // Validate the whole batch before touching the lists.
        let mut prev = self.m_c;
        for leaf in &leaves {
            if leaf.is_placeholder || !leaf.children.is_empty() {
                return Err(Error::domain(format!(
                    "{} is not a leaf; only leaves can be concatenated",
                    leaf.code
                )));
            }
            let key = leaf.code.span(self.l_max)?;
            if let Some(p) = prev {
                if key <= p {
                    return Err(Error::OrderViolation { prev: p, next: key });
                }
            }
            prev = Some(key);
        }
        let deepest = &mut self.lists[self.l_max as usize];
        for leaf in leaves {
            if leaf.level() == self.l_max {
                deepest.push(Arc::new(leaf));
            } else {
                let ph = leaf.code.span(self.l_max)?;
                self.shallow.insert(leaf.code, Arc::new(leaf));
                deepest.push(Arc::new(Node::placeholder(ph)));
            }
        }
        self.m_c = prev;
        self.complete[self.l_max as usize] = prev;
        Ok(())
    }

    /// Marks the end of the stream: everything is now left of the cut.
    pub fn seal(&mut self) {
        self.sealed = true;
        self.m_c = Some(MortonCode::ROOT.span(self.l_max).expect("root spans any level"));
        self.complete[self.l_max as usize] = self.m_c;
    }

    /// Number of leading roots at `level` whose parent lies inside the cut
    /// and whose siblings have all been created.
    ///
    /// After a complete bottom-up fix this is every root whose parent spans
    /// at or left of `m_C`. A level not yet revisited since the last
    /// concatenate only releases roots up to the bound of its previous visit.
    pub fn eligible_len(&self, level: u8) -> usize {
        if level == 0 {
            return 0;
        }
        let Some(m_c) = self.complete[level as usize] else {
            return 0;
        };
        let l_max = self.l_max;
        self.lists[level as usize]
            .partition_point(|r| r.code.parent_unchecked().span(l_max).expect("parent is shallower") <= m_c)
    }

    /// Removes and returns the roots at `level` whose parents can be created.
    ///
    /// The caller must install the resulting parents at `level - 1` before
    /// taking roots at any other level.
    pub fn take_eligible(&mut self, level: u8) -> Vec<Arc<Node>> {
        let n = self.eligible_len(level);
        if level > 0 {
            self.complete[level as usize - 1] = self.complete[level as usize];
        }
        self.lists[level as usize].drain(..n).collect()
    }

    /// Groups consecutive siblings in `roots` and builds their parents.
    ///
    /// Pure with respect to the cut, so disjoint slices can be processed in
    /// parallel. A sibling group split across two slices produces the same
    /// parent twice; see [`merge_duplicates`](Self::merge_duplicates).
    pub fn build_parents(&self, roots: &[Arc<Node>]) -> Vec<Arc<Node>> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < roots.len() {
            let parent = roots[i].code.parent_unchecked();
            let mut j = i + 1;
            while j < roots.len() && roots[j].code.parent_unchecked() == parent {
                j += 1;
            }
            let group = &roots[i..j];
            if group[0].is_placeholder {
                debug_assert_eq!(group.len(), 1, "placeholder shares parent {parent}");
                let node = match self.shallow.get(&parent) {
                    Some(leaf) => Arc::clone(leaf),
                    None => Arc::new(Node::placeholder(parent)),
                };
                out.push(node);
            } else {
                out.push(Arc::new(self.policy.make_parent(parent, group.to_vec())));
            }
            i = j;
        }
        out
    }

    /// Joins per-worklist parent lists, folding the duplicate parent produced
    /// where a sibling group straddled two worklists. Children of the
    /// eliminated copy move to the survivor, which comes from the earlier list.
    pub fn merge_duplicates(&self, results: Vec<Vec<Arc<Node>>>) -> Vec<Arc<Node>> {
        let mut merged: Vec<Arc<Node>> = Vec::with_capacity(results.iter().map(Vec::len).sum());
        for list in results {
            let mut iter = list.into_iter();
            if let Some(first) = iter.next() {
                match merged.last_mut() {
                    Some(last) if last.code == first.code => {
                        debug_assert!(!last.is_placeholder && !first.is_placeholder);
                        let mut children = last.children.clone();
                        children.extend(first.children.iter().cloned());
                        *last = Arc::new(self.policy.make_parent(first.code, children));
                    }
                    _ => merged.push(first),
                }
            }
            merged.extend(iter);
        }
        merged
    }

    /// Appends freshly created parents to the list at `level`.
    ///
    /// With leaf collapse on, parents of a single deepest-level leaf absorb
    /// that leaf's splats and become leaves themselves. Returns the nodes as
    /// installed.
    pub fn install_parents(&mut self, level: u8, parents: Vec<Arc<Node>>) -> Vec<Arc<Node>> {
        let collapse = self.policy.leaf_collapse && level + 1 == self.l_max;
        let parents: Vec<Arc<Node>> = parents
            .into_iter()
            .map(|p| {
                if !p.is_placeholder && p.children.is_empty() {
                    self.shallow.remove(&p.code);
                }
                match p.children.as_slice() {
                    [only] if collapse && only.is_leaf() => Arc::new(Node::leaf(p.code, only.splats.clone())),
                    _ => p,
                }
            })
            .collect();
        let list = &mut self.lists[level as usize];
        debug_assert!(
            match (list.last(), parents.first()) {
                (Some(a), Some(b)) => a.code < b.code,
                _ => true,
            },
            "parents out of order at level {level}"
        );
        list.extend(parents.iter().cloned());
        parents
    }

    /// Processes one level of a fix with a single worklist. Returns the
    /// parents installed at `level - 1`.
    pub fn fix_level(&mut self, level: u8) -> Vec<Arc<Node>> {
        let roots = self.take_eligible(level);
        if roots.is_empty() {
            return Vec::new();
        }
        let parents = self.build_parents(&roots);
        self.install_parents(level - 1, parents)
    }

    /// Creates every missing ancestor inside the cut, bottom-up.
    pub fn fix(&mut self) -> FixPass {
        let mut pass = FixPass::default();
        for level in (1..=self.l_max).rev() {
            let created = self.fix_level(level);
            if !created.is_empty() {
                pass.created.push((level - 1, created.len()));
            }
        }
        pass.boundary = self.boundary();
        pass
    }

    /// Parents of all remaining non-top roots: the boundary outside the cut.
    pub fn boundary(&self) -> Vec<MortonCode> {
        let mut s: Vec<MortonCode> = self
            .lists
            .iter()
            .flatten()
            .filter(|r| r.code != MortonCode::ROOT)
            .map(|r| r.code.parent_unchecked())
            .collect();
        s.sort();
        s.dedup();
        s
    }

    /// True when `code` is a cut root or a child of one; such nodes may
    /// still move and must stay out of the rendering front.
    pub fn is_volatile(&self, code: MortonCode) -> bool {
        let level = code.level();
        if level > self.l_max {
            return false;
        }
        let at = &self.lists[level as usize];
        if at.binary_search_by_key(&code, |r| r.code).is_ok() {
            return true;
        }
        if level == 0 {
            return false;
        }
        let parent = code.parent_unchecked();
        let above = &self.lists[level as usize - 1];
        match above.binary_search_by_key(&parent, |r| r.code) {
            Ok(i) => above[i].children.iter().any(|c| c.code == code),
            Err(_) => false,
        }
    }

    /// Checks invariants 1.1 through 1.5 without mutating the cut.
    pub fn validate(&self) -> InvariantReport {
        let mut checks = [
            ok("m_C at deepest level"),
            ok("roots at their list's level"),
            ok("subtrees disjoint"),
            ok("lists in Morton order"),
            ok("every node inside the cut is materialized"),
        ];
        if let Some(m) = self.m_c {
            if m.level() != self.l_max {
                checks[0].fail(m);
            }
        }
        for (level, list) in self.lists.iter().enumerate() {
            if let Some(r) = list.iter().find(|r| r.code.level() as usize != level) {
                checks[1].fail(r.code);
            }
            if let Some(w) = list.windows(2).find(|w| w[0].code >= w[1].code) {
                checks[3].fail(w[1].code);
            }
        }
        // 1.3: no node appears twice and no root's cell contains another root.
        let mut all: Vec<MortonCode> = Vec::new();
        for r in self.lists.iter().flatten() {
            r.visit(&mut |n| all.push(n.code));
        }
        all.sort();
        if let Some(w) = all.windows(2).find(|w| w[0] == w[1]) {
            checks[2].fail(w[0]);
        }
        if checks[2].holds {
            let mut roots: Vec<MortonCode> = self.lists.iter().flatten().map(|r| r.code).collect();
            roots.sort_by_key(|c| (c.span(self.l_max).unwrap_or(*c), std::cmp::Reverse(c.level())));
            // Sorted by span with ancestors first, a containing root sits
            // right before some root it contains.
            if let Some(w) = roots.windows(2).find(|w| w[0].contains(w[1])) {
                checks[2].fail(w[1]);
            }
        }
        // 1.5: a root whose parent spans inside the cut means that parent is missing.
        if let Some(m) = self.m_c {
            let missing = self
                .lists
                .iter()
                .flatten()
                .filter(|r| r.code != MortonCode::ROOT)
                .map(|r| r.code.parent_unchecked())
                .filter(|p| p.span(self.l_max).is_ok_and(|s| s <= m))
                .min();
            if let Some(p) = missing {
                checks[4].fail(p);
            }
        }
        InvariantReport { checks }
    }

    /// Returns the finished hierarchy once a single subtree remains.
    pub fn extract_tree(self) -> Result<Arc<Node>> {
        let roots = self.root_count();
        if roots == 0 {
            return Err(Error::EmptyHierarchy);
        }
        if roots > 1 || self.lists[0].len() != 1 {
            return Err(Error::IncompleteStream { roots });
        }
        let root = Arc::clone(&self.lists[0][0]);
        if root.is_placeholder {
            return Err(Error::IncompleteStream { roots });
        }
        Ok(root)
    }

    /// Seals the stream, runs a final fix and extracts the tree.
    pub fn finish(mut self) -> Result<Arc<Node>> {
        self.seal();
        self.fix();
        self.extract_tree()
    }

    /// Every node currently held by the cut, placeholders included.
    pub fn materialized(&self) -> Vec<Arc<Node>> {
        let mut out = Vec::new();
        for r in self.lists.iter().flatten() {
            out.extend(r.breadth_first());
        }
        out
    }
}

pub(crate) fn ok(name: &'static str) -> InvariantCheck {
    InvariantCheck {
        name,
        witness: None,
        holds: true,
    }
}

impl InvariantCheck {
    pub(crate) fn fail(&mut self, witness: MortonCode) {
        if self.holds {
            self.holds = false;
            self.witness = Some(witness);
        }
    }
}
