//! Code hierarchy graph: union-find equivalence classes, subordinate edges
//! between class representatives, cycle collapse and transitive closure.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::ids::ArtifactId;
use crate::llm::structured::RelationKind;

/// A classified pair. `Subordinate` means `a` is a subcategory of `b`;
/// `Reverse` never appears in a constructed relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CodeRelation {
    pub a: ArtifactId,
    pub b: ArtifactId,
    pub kind: RelationKind,
}

impl CodeRelation {
    /// Normalises `reverse(a, b)` to `subordinate(b, a)`.
    pub fn new(a: ArtifactId, b: ArtifactId, kind: RelationKind) -> Self {
        match kind {
            RelationKind::Reverse => Self { a: b, b: a, kind: RelationKind::Subordinate },
            k => Self { a, b, kind: k },
        }
    }
}

/// Disjoint sets over artifact ids; the root of a set is its smallest id.
#[derive(Debug, Clone, Default)]
pub struct UnionFind {
    parent: BTreeMap<ArtifactId, ArtifactId>,
}

impl UnionFind {
    pub fn new(ids: impl IntoIterator<Item = ArtifactId>) -> Self {
        Self { parent: ids.into_iter().map(|i| (i, i)).collect() }
    }

    pub fn find(&mut self, x: ArtifactId) -> ArtifactId {
        let p = *self.parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let root = self.find(p);
        self.parent.insert(x, root);
        root
    }

    /// Returns true when two distinct sets were joined.
    pub fn union(&mut self, a: ArtifactId, b: ArtifactId) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent.insert(hi, lo);
        true
    }

    pub fn classes(&mut self) -> BTreeMap<ArtifactId, BTreeSet<ArtifactId>> {
        let ids: Vec<ArtifactId> = self.parent.keys().copied().collect();
        let mut out: BTreeMap<ArtifactId, BTreeSet<ArtifactId>> = BTreeMap::new();
        for id in ids {
            let r = self.find(id);
            out.entry(r).or_default().insert(id);
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeGraph {
    pub nodes: BTreeSet<ArtifactId>,
    /// Member to class representative (the smallest id in the class).
    pub class_of: BTreeMap<ArtifactId, ArtifactId>,
    /// `(child, ancestor)` between representatives; closed under transitivity
    /// and acyclic.
    pub edges: BTreeSet<(ArtifactId, ArtifactId)>,
    /// Distinct subordinate relations pointing at each code, before classes
    /// are formed.
    pub in_degree: BTreeMap<ArtifactId, usize>,
    pub repairs: Vec<String>,
}

impl CodeGraph {
    pub fn classes(&self) -> BTreeMap<ArtifactId, BTreeSet<ArtifactId>> {
        let mut out: BTreeMap<ArtifactId, BTreeSet<ArtifactId>> = BTreeMap::new();
        for (m, r) in &self.class_of {
            out.entry(*r).or_default().insert(*m);
        }
        out
    }

    pub fn ancestors(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        self.edges.iter().filter(|(c, _)| *c == id).map(|(_, p)| *p).collect()
    }

    pub fn descendants(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        self.edges.iter().filter(|(_, p)| *p == id).map(|(c, _)| *c).collect()
    }

    /// Ancestors with no other ancestor of `id` strictly between them and `id`.
    pub fn direct_parents(&self, id: ArtifactId) -> BTreeSet<ArtifactId> {
        let anc = self.ancestors(id);
        anc.iter().copied().filter(|p| !anc.iter().any(|q| q != p && self.edges.contains(&(*q, *p)))).collect()
    }

    pub fn is_closed(&self) -> bool {
        closure(&self.edges) == self.edges
    }

    pub fn is_acyclic(&self) -> bool {
        self.edges.iter().all(|(c, p)| c != p && !self.edges.contains(&(*p, *c)))
    }
}

/// Transitive closure of a directed edge set.
pub fn closure(edges: &BTreeSet<(ArtifactId, ArtifactId)>) -> BTreeSet<(ArtifactId, ArtifactId)> {
    let mut succ: BTreeMap<ArtifactId, BTreeSet<ArtifactId>> = BTreeMap::new();
    for (a, b) in edges {
        succ.entry(*a).or_default().insert(*b);
    }
    let mut out = BTreeSet::new();
    for &start in succ.keys() {
        let mut stack: Vec<ArtifactId> = succ[&start].iter().copied().collect();
        let mut seen = BTreeSet::new();
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                continue;
            }
            out.insert((start, n));
            if let Some(next) = succ.get(&n) {
                stack.extend(next.iter().copied());
            }
        }
    }
    out
}

/// Builds the graph. Equivalences are unioned; subordinate relations become
/// edges between class representatives; any cycle merges its classes (each
/// merge is recorded in `repairs`); finally edges are transitively closed.
pub fn build_graph(nodes: impl IntoIterator<Item = ArtifactId>, relations: &[CodeRelation]) -> CodeGraph {
    let nodes: BTreeSet<ArtifactId> = nodes.into_iter().collect();
    let mut uf = UnionFind::new(nodes.iter().copied());
    let mut in_degree: BTreeMap<ArtifactId, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    let mut seen_sub = BTreeSet::new();
    for r in relations {
        match r.kind {
            RelationKind::Equivalent => {
                uf.union(r.a, r.b);
            }
            RelationKind::Subordinate | RelationKind::Reverse if r.a != r.b => {
                let (c, p) = if r.kind == RelationKind::Reverse { (r.b, r.a) } else { (r.a, r.b) };
                if seen_sub.insert((c, p)) {
                    *in_degree.entry(p).or_default() += 1;
                }
            }
            _ => {}
        }
    }
    let mut repairs = Vec::new();
    let edges = loop {
        let mut e = BTreeSet::new();
        for &(c, p) in &seen_sub {
            let (rc, rp) = (uf.find(c), uf.find(p));
            if rc != rp {
                e.insert((rc, rp));
            }
        }
        let closed = closure(&e);
        let cyclic: Vec<(ArtifactId, ArtifactId)> =
            closed.iter().filter(|(a, b)| a < b && closed.contains(&(*b, *a))).copied().collect();
        if cyclic.is_empty() {
            break closed;
        }
        for (a, b) in cyclic {
            if uf.union(a, b) {
                let msg = format!("subordinate cycle between {a} and {b}; merged into one class");
                tracing::info!("{msg}");
                repairs.push(msg);
            }
        }
    };
    let class_of = nodes.iter().map(|n| (*n, uf.find(*n))).collect();
    CodeGraph { nodes, class_of, edges, in_degree, repairs }
}
