//! Maximal garbage-set computation for a key-join cycle, the long-cycle
//! decision procedure on k-partite graphs it relies on, and brute-force
//! oracles for both.
//!
//! A garbage set is a union of blocks over the cycle's relations whose
//! removal provably never changes the certain answer: some repair of the
//! removed blocks prevents every embedding of the query from using them in
//! a cycle position. Garbage facts are exactly what the compiled deletion
//! rules identify, so this module doubles as the reference semantics for
//! that program.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::mgraph::{chook_graph, n_embeddings_of, one_embeddings_of, Embedding, MCycle};
use crate::model::{
    eval_bcq, BlockKey, Constant, Database, Fact, ModelError, Query, DEFAULT_REPAIR_CAP,
};

/// Largest number of candidate blocks the exhaustive garbage oracle accepts.
pub const GARBAGE_ORACLE_BLOCK_CAP: usize = 12;

/// Largest vertex count the brute-force long-cycle search accepts.
pub const BRUTE_LONGCYCLE_VERTEX_CAP: usize = 14;

/// A directed graph whose vertices carry part labels `0..k-1` and whose
/// edges run from part `i` to part `i+1 mod k`. Instances of the long-cycle
/// decision problem additionally require every edge to lie on a directed
/// cycle of length `k` and the graph to be weakly connected; those two
/// conditions are checked by [`longcycle`], not at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KPartiteGraph {
    k: usize,
    parts: Vec<usize>,
    labels: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl KPartiteGraph {
    /// Builds a graph with default vertex labels `v0, v1, ...`.
    pub fn new(
        k: usize,
        parts: Vec<usize>,
        edges: BTreeSet<(usize, usize)>,
    ) -> Result<KPartiteGraph, ModelError> {
        let labels = (0..parts.len()).map(|i| format!("v{i}")).collect();
        KPartiteGraph::with_labels(k, parts, labels, edges)
    }

    pub fn with_labels(
        k: usize,
        parts: Vec<usize>,
        labels: Vec<String>,
        edges: BTreeSet<(usize, usize)>,
    ) -> Result<KPartiteGraph, ModelError> {
        if k < 2 {
            return Err(ModelError::Precondition {
                reason: format!("part count must be at least 2, got {k}"),
            });
        }
        if labels.len() != parts.len() {
            return Err(ModelError::Precondition {
                reason: "one label per vertex required".to_string(),
            });
        }
        if let Some(bad) = parts.iter().find(|&&p| p >= k) {
            return Err(ModelError::Precondition {
                reason: format!("part label {bad} out of range 0..{k}"),
            });
        }
        for &(u, v) in &edges {
            if u >= parts.len() || v >= parts.len() {
                return Err(ModelError::Precondition {
                    reason: format!("edge ({u}, {v}) mentions an unknown vertex"),
                });
            }
            if parts[v] != (parts[u] + 1) % k {
                return Err(ModelError::Precondition {
                    reason: format!(
                        "edge ({u}, {v}) runs from part {} to part {}, not to the next part",
                        parts[u], parts[v]
                    ),
                });
            }
        }
        Ok(KPartiteGraph { k, parts, labels, edges })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertex_count(&self) -> usize {
        self.parts.len()
    }

    pub fn part(&self, v: usize) -> usize {
        self.parts[v]
    }

    pub fn label(&self, v: usize) -> &str {
        &self.labels[v]
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn successors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |(a, _)| *a == v).map(|(_, b)| *b)
    }

    /// All directed cycles of length `k`, each anchored at its part-0
    /// vertex. In a graph of this shape such a cycle visits every part
    /// exactly once, so the vertices are automatically distinct.
    pub fn k_cycles(&self) -> Vec<Vec<usize>> {
        let mut found = Vec::new();
        for start in 0..self.vertex_count() {
            if self.parts[start] != 0 {
                continue;
            }
            let mut path = vec![start];
            self.k_cycle_dfs(start, &mut path, &mut found);
        }
        found.sort();
        found
    }

    fn k_cycle_dfs(&self, start: usize, path: &mut Vec<usize>, found: &mut Vec<Vec<usize>>) {
        let last = *path.last().expect("path never empty");
        if path.len() == self.k {
            if self.edges.contains(&(last, start)) {
                found.push(path.clone());
            }
            return;
        }
        for next in self.successors(last) {
            path.push(next);
            self.k_cycle_dfs(start, path, found);
            path.pop();
        }
    }

    /// Vertex sets of the weakly connected components.
    pub fn weak_components(&self) -> Vec<BTreeSet<usize>> {
        let n = self.vertex_count();
        let mut parent: Vec<usize> = (0..n).collect();
        for &(u, v) in &self.edges {
            let (ru, rv) = (uf_find(&mut parent, u), uf_find(&mut parent, v));
            if ru != rv {
                parent[ru] = rv;
            }
        }
        let mut comps: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for v in 0..n {
            let root = uf_find(&mut parent, v);
            comps.entry(root).or_default().insert(v);
        }
        comps.into_values().collect()
    }

    /// Checks the long-cycle instance invariants: every edge on a directed
    /// k-cycle and the graph weakly connected.
    fn validate_instance(&self) -> Result<(), ModelError> {
        let mut covered: BTreeSet<(usize, usize)> = BTreeSet::new();
        for cycle in self.k_cycles() {
            for i in 0..self.k {
                covered.insert((cycle[i], cycle[(i + 1) % self.k]));
            }
        }
        if let Some(&(u, v)) = self.edges.iter().find(|e| !covered.contains(e)) {
            return Err(ModelError::Precondition {
                reason: format!(
                    "edge ({}, {}) lies on no directed cycle of length {}",
                    self.labels[u], self.labels[v], self.k
                ),
            });
        }
        if self.vertex_count() > 0 && self.weak_components().len() > 1 {
            return Err(ModelError::Precondition {
                reason: "graph is not weakly connected".to_string(),
            });
        }
        Ok(())
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph k_partite {\n");
        for v in 0..self.vertex_count() {
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{} (part {})\"];",
                v, self.labels[v], self.parts[v]
            );
        }
        for (u, v) in &self.edges {
            let _ = writeln!(out, "  \"{u}\" -> \"{v}\";");
        }
        out.push_str("}\n");
        out
    }
}

fn uf_find(parent: &mut Vec<usize>, x: usize) -> usize {
    if parent[x] != x {
        let root = uf_find(parent, parent[x]);
        parent[x] = root;
    }
    parent[x]
}

/// Undirected intersection graph of the k-cycles of a k-partite graph:
/// one vertex per k-cycle, an edge whenever two cycles share a vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectionGraph {
    cycles: Vec<Vec<usize>>,
    edges: BTreeSet<(usize, usize)>,
}

impl IntersectionGraph {
    /// The k-cycles, in the order used for vertex indices.
    pub fn cycles(&self) -> &[Vec<usize>] {
        &self.cycles
    }

    pub fn vertex_count(&self) -> usize {
        self.cycles.len()
    }

    /// Edges as index pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        i != j && self.edges.contains(&(a, b))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.vertex_count()).filter(|&j| self.adjacent(i, j)).collect()
    }
}

/// Builds the intersection graph of all k-cycles of `g`.
pub fn kcycle_intersection_graph(g: &KPartiteGraph, k: usize) -> IntersectionGraph {
    assert_eq!(k, g.k(), "part count mismatch");
    let cycles = g.k_cycles();
    let sets: Vec<BTreeSet<usize>> =
        cycles.iter().map(|c| c.iter().copied().collect()).collect();
    let mut edges = BTreeSet::new();
    for i in 0..cycles.len() {
        for j in (i + 1)..cycles.len() {
            if !sets[i].is_disjoint(&sets[j]) {
                edges.insert((i, j));
            }
        }
    }
    IntersectionGraph { cycles, edges }
}

/// Decides whether a long-cycle instance has an elementary directed cycle
/// of length at least `2k`.
///
/// The test combines a bounded search for elementary cycles of length `nk`
/// with `2 <= n <= 2k-3` and a chordless-cycle test on the k-cycle
/// intersection graph; together these two branches are equivalent to the
/// existence of any elementary cycle of length `>= 2k` on valid instances.
/// Instance invariants (every edge on a k-cycle, weak connectivity) are
/// checked first and violations are reported as errors.
pub fn longcycle(g: &KPartiteGraph, k: usize) -> Result<bool, ModelError> {
    if k != g.k() {
        return Err(ModelError::Precondition {
            reason: format!("instance has part count {}, expected {k}", g.k()),
        });
    }
    g.validate_instance()?;
    // Branch 1: elementary cycles of bounded multiplicity.
    for n in 2..=(2 * k).saturating_sub(3) {
        if has_elementary_cycle_of_length(g, n * k) {
            return Ok(true);
        }
    }
    // Branch 2: longer cycles exist iff the k-cycle intersection graph has
    // a chordless cycle of length at least 2k.
    let ig = kcycle_intersection_graph(g, k);
    Ok(has_long_chordless_cycle(&ig, k))
}

/// DFS for one elementary directed cycle of exactly `len` vertices,
/// anchored at its least part-0 vertex.
fn has_elementary_cycle_of_length(g: &KPartiteGraph, len: usize) -> bool {
    for start in 0..g.vertex_count() {
        if g.part(start) != 0 {
            continue;
        }
        let mut path = vec![start];
        if exact_cycle_dfs(g, start, len, &mut path) {
            return true;
        }
    }
    false
}

fn exact_cycle_dfs(g: &KPartiteGraph, start: usize, len: usize, path: &mut Vec<usize>) -> bool {
    let last = *path.last().expect("path never empty");
    if path.len() == len {
        return g.edges().contains(&(last, start));
    }
    for next in g.successors(last) {
        // Anchor each cycle at its least part-0 vertex.
        if g.part(next) == 0 && next <= start {
            continue;
        }
        if path.contains(&next) {
            continue;
        }
        path.push(next);
        if exact_cycle_dfs(g, start, len, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Decides whether the intersection graph has a chordless cycle of length
/// at least `2k`: search for a path `(P1, ..., P_2k)` whose two length-(2k-1)
/// prefixes and suffixes are chordless, then close it either by the edge
/// `(P1, P_2k)` or through a connecting path that avoids the closed
/// neighborhood of the interior vertices.
fn has_long_chordless_cycle(ig: &IntersectionGraph, k: usize) -> bool {
    let m = 2 * k;
    let n = ig.vertex_count();
    if n < m {
        return false;
    }
    let mut adj = vec![vec![false; n]; n];
    for &(i, j) in ig.edges() {
        adj[i][j] = true;
        adj[j][i] = true;
    }
    let mut path = Vec::with_capacity(m);
    for p1 in 0..n {
        path.push(p1);
        if chordless_path_dfs(&adj, m, &mut path) {
            return true;
        }
        path.pop();
    }
    false
}

fn chordless_path_dfs(adj: &[Vec<bool>], m: usize, path: &mut Vec<usize>) -> bool {
    if path.len() == m {
        return closes_long_cycle(adj, path);
    }
    let n = adj.len();
    let last = *path.last().expect("path never empty");
    let at_final = path.len() + 1 == m;
    'next: for v in 0..n {
        if !adj[last][v] || path.contains(&v) {
            continue;
        }
        // Chordlessness of both length-(2k-1) subpaths: the new vertex must
        // be non-adjacent to every earlier vertex except its predecessor,
        // with the pair (P1, P_2k) exempted.
        for (i, &u) in path[..path.len() - 1].iter().enumerate() {
            if adj[u][v] && !(at_final && i == 0) {
                continue 'next;
            }
        }
        path.push(v);
        if chordless_path_dfs(adj, m, path) {
            return true;
        }
        path.pop();
    }
    false
}

fn closes_long_cycle(adj: &[Vec<bool>], path: &[usize]) -> bool {
    let n = adj.len();
    let p1 = path[0];
    let pm = *path.last().expect("nonempty");
    if adj[p1][pm] {
        return true;
    }
    // H: vertices neither in nor adjacent to the path interior.
    let interior = &path[1..path.len() - 1];
    let in_h: Vec<bool> = (0..n)
        .map(|v| !interior.iter().any(|&u| u == v || adj[u][v]))
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if !in_h[i] {
            continue;
        }
        for j in (i + 1)..n {
            if in_h[j] && adj[i][j] {
                let (ri, rj) = (uf_find(&mut parent, i), uf_find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let ends_a: Vec<usize> = (0..n).filter(|&v| in_h[v] && adj[p1][v]).collect();
    let ends_b: Vec<usize> = (0..n).filter(|&v| in_h[v] && adj[pm][v]).collect();
    for &a in &ends_a {
        for &b in &ends_b {
            if uf_find(&mut parent, a) == uf_find(&mut parent, b) {
                return true;
            }
        }
    }
    false
}

/// Exhaustive search for an elementary directed cycle of length at least
/// `2k`, used as the testing oracle for [`longcycle`]. Every cycle of a
/// k-partite graph passes through part 0, so anchoring there is complete.
pub fn brute_longcycle(g: &KPartiteGraph, k: usize) -> Result<bool, ModelError> {
    if k != g.k() {
        return Err(ModelError::Precondition {
            reason: format!("instance has part count {}, expected {k}", g.k()),
        });
    }
    if g.vertex_count() > BRUTE_LONGCYCLE_VERTEX_CAP {
        return Err(ModelError::CapExceeded {
            what: "brute-force long-cycle vertex count".to_string(),
            cap: BRUTE_LONGCYCLE_VERTEX_CAP,
        });
    }
    for start in 0..g.vertex_count() {
        if g.part(start) != 0 {
            continue;
        }
        let mut path = vec![start];
        if any_long_cycle_dfs(g, start, 2 * k, &mut path) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn any_long_cycle_dfs(
    g: &KPartiteGraph,
    start: usize,
    min_len: usize,
    path: &mut Vec<usize>,
) -> bool {
    let last = *path.last().expect("path never empty");
    if path.len() >= min_len && g.edges().contains(&(last, start)) {
        return true;
    }
    for next in g.successors(last) {
        if next == start || path.contains(&next) {
            continue;
        }
        path.push(next);
        if any_long_cycle_dfs(g, start, min_len, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// One strong component of the cycle's fact graph that survives garbage
/// removal, together with the single-turn embeddings it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurvivingComponent {
    /// Least key (packed to one value) among the component's facts over the
    /// cycle's first relation; a deterministic label for the component.
    pub id: Constant,
    pub facts: BTreeSet<Fact>,
    /// Relevant single-turn embeddings whose facts lie in this component.
    pub embeddings: BTreeSet<Embedding>,
}

/// Result of the garbage fixpoint: the removable blocks and the structure
/// of what survives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GarbageReport {
    pub garbage_blocks: BTreeSet<BlockKey>,
    pub surviving_components: Vec<SurvivingComponent>,
}

impl GarbageReport {
    pub fn is_garbage(&self, fact: &Fact) -> bool {
        self.garbage_blocks.contains(&fact.block_key())
    }

    pub fn garbage_fact_count(&self, db: &Database) -> usize {
        db.facts().filter(|f| self.is_garbage(f)).count()
    }

    /// The database with all garbage blocks removed.
    pub fn remainder(&self, db: &Database) -> Database {
        db.without_blocks(&self.garbage_blocks)
    }
}

/// Computes the maximal garbage set for a key-join cycle as the least
/// fixpoint of five conditions on the cycle's fact graph: facts with no
/// outgoing edge, facts of single-turn embeddings no full query embedding
/// covers, facts of multi-turn embeddings (found directly for small
/// multiplicities and per strong component through the long-cycle test on
/// the component's block structure), closure over the embeddings a garbage
/// fact lies on, and closure under key-equality.
pub fn maximal_garbage_set(q: &Query, cycle: &MCycle, db: &Database) -> GarbageReport {
    let k = cycle.k();
    let chg = chook_graph(q, cycle, db);
    let (relevant, irrelevant) = one_embeddings_of(q, &chg, db);
    let components = chg.strong_components();

    let mut seeds: BTreeSet<Fact> = BTreeSet::new();
    // Condition 1: facts with zero outdegree can never start a cycle turn.
    for fact in chg.vertices() {
        if chg.out_degree(fact) == 0 {
            seeds.insert(fact.clone());
        }
    }
    // Condition 2: single-turn embeddings not covered by a full embedding.
    for emb in &irrelevant {
        seeds.extend(emb.facts.iter().cloned());
    }
    // Condition 3, bounded multiplicities: direct multi-turn embeddings.
    for n in 2..=(2 * k).saturating_sub(3) {
        for emb in n_embeddings_of(q, &chg, db, n) {
            seeds.extend(emb.facts.iter().cloned());
        }
    }
    // Condition 3, per component: a strong component contains a multi-turn
    // embedding exactly when the block structure of its relevant embeddings
    // has an elementary cycle of length at least 2k.
    for component in &components {
        let embs: Vec<&Embedding> =
            relevant.iter().filter(|e| component.contains(&e.facts[0])).collect();
        if embs.is_empty() {
            continue;
        }
        let instance = embedding_block_instance(cycle, &embs);
        let long = longcycle(&instance, k)
            .expect("block structure of a strong component is a valid instance");
        if long {
            seeds.extend(component.iter().cloned());
        }
    }

    // Conditions 4 and 5: close over embeddings and blocks, block-level.
    let mut garbage_blocks: BTreeSet<BlockKey> =
        seeds.iter().map(Fact::block_key).collect();
    loop {
        let mut grew = false;
        for emb in &relevant {
            if emb.facts.iter().any(|f| garbage_blocks.contains(&f.block_key())) {
                for fact in &emb.facts {
                    grew |= garbage_blocks.insert(fact.block_key());
                }
            }
        }
        if !grew {
            break;
        }
    }

    // Garbage membership is constant on strong components.
    for component in &components {
        let inside = component
            .iter()
            .filter(|f| garbage_blocks.contains(&f.block_key()))
            .count();
        assert!(
            inside == 0 || inside == component.len(),
            "garbage splits a strong component"
        );
    }

    let surviving_components = survivors(q, cycle, db, &garbage_blocks);
    GarbageReport { garbage_blocks, surviving_components }
}

/// The block structure induced by a set of relevant embeddings: one vertex
/// per block, one edge per consecutive pair on each embedding.
fn embedding_block_instance(cycle: &MCycle, embs: &[&Embedding]) -> KPartiteGraph {
    let k = cycle.k();
    let mut blocks: BTreeSet<BlockKey> = BTreeSet::new();
    for emb in embs {
        blocks.extend(emb.facts.iter().map(Fact::block_key));
    }
    let blocks: Vec<BlockKey> = blocks.into_iter().collect();
    let index: BTreeMap<&BlockKey, usize> =
        blocks.iter().enumerate().map(|(i, b)| (b, i)).collect();
    let parts: Vec<usize> = blocks
        .iter()
        .map(|b| cycle.part_of(&b.relation).expect("block comes from a cycle relation"))
        .collect();
    let labels: Vec<String> = blocks.iter().map(|b| b.to_string()).collect();
    let mut edges = BTreeSet::new();
    for emb in embs {
        for i in 0..k {
            let from = index[&emb.facts[i].block_key()];
            let to = index[&emb.facts[(i + 1) % k].block_key()];
            edges.insert((from, to));
        }
    }
    KPartiteGraph::with_labels(k, parts, labels, edges)
        .expect("embedding blocks alternate through the cycle's parts")
}

/// Recomputes the cycle's fact graph after garbage removal and packages its
/// strong components, asserting the structure the fixpoint guarantees:
/// components are isolated and every surviving fact lies on a relevant
/// embedding.
fn survivors(
    q: &Query,
    cycle: &MCycle,
    db: &Database,
    garbage_blocks: &BTreeSet<BlockKey>,
) -> Vec<SurvivingComponent> {
    let remainder = db.without_blocks(garbage_blocks);
    let chg = chook_graph(q, cycle, &remainder);
    let (relevant, irrelevant) = one_embeddings_of(q, &chg, &remainder);
    assert!(
        irrelevant.is_empty(),
        "an uncovered single-turn embedding survived garbage removal"
    );
    let covered: BTreeSet<&Fact> = relevant.iter().flat_map(|e| e.facts.iter()).collect();
    for fact in chg.vertices() {
        assert!(
            covered.contains(fact),
            "surviving fact {fact} lies on no relevant embedding"
        );
    }
    assert!(
        chg.components_are_isolated(),
        "an edge crosses between surviving strong components"
    );
    let mut out = Vec::new();
    for facts in chg.strong_components() {
        let embeddings: BTreeSet<Embedding> = relevant
            .iter()
            .filter(|e| facts.contains(&e.facts[0]))
            .cloned()
            .collect();
        let id = facts
            .iter()
            .filter(|f| cycle.part_of(&f.relation) == Some(0))
            .map(|f| Constant::pack(f.key.clone()))
            .min()
            .expect("every surviving component contains the first cycle relation");
        out.push(SurvivingComponent { id, facts, embeddings });
    }
    out.sort_by(|a, b| (&a.id, &a.facts).cmp(&(&b.id, &b.facts)));
    out
}

/// Exhaustive reference for the maximal garbage set, straight from the
/// definition: a block union `o` over the chosen relations is a garbage set
/// when some repair `r` of `o` lets no query embedding into
/// `(db without o) union r` place a chosen relation's atom on a fact of
/// `r`. The maximal garbage set is the union of all garbage sets.
pub fn garbage_oracle(
    q: &Query,
    q0: &BTreeSet<String>,
    db: &Database,
) -> Result<BTreeSet<BlockKey>, ModelError> {
    for name in q0 {
        if q.atom(name).is_none() {
            return Err(ModelError::UnknownRelation { relation: name.clone() });
        }
    }
    let candidate_blocks: Vec<BlockKey> = db
        .blocks()
        .into_keys()
        .filter(|bk| q0.contains(&bk.relation))
        .collect();
    if candidate_blocks.len() > GARBAGE_ORACLE_BLOCK_CAP {
        return Err(ModelError::CapExceeded {
            what: "candidate blocks for the garbage oracle".to_string(),
            cap: GARBAGE_ORACLE_BLOCK_CAP,
        });
    }
    let mut maximal: BTreeSet<BlockKey> = BTreeSet::new();
    for mask in 0usize..(1 << candidate_blocks.len()) {
        let chosen: BTreeSet<BlockKey> = candidate_blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, b)| b.clone())
            .collect();
        if chosen.iter().all(|b| maximal.contains(b)) {
            continue; // cannot enlarge the union
        }
        if is_garbage_set(q, q0, db, &chosen)? {
            maximal.extend(chosen);
        }
    }
    Ok(maximal)
}

fn is_garbage_set(
    q: &Query,
    q0: &BTreeSet<String>,
    db: &Database,
    blocks: &BTreeSet<BlockKey>,
) -> Result<bool, ModelError> {
    let removed = Database::new(
        db.facts().filter(|f| blocks.contains(&f.block_key())).cloned(),
    );
    let rest = db.without_blocks(blocks);
    for repair in removed.enumerate_repairs(DEFAULT_REPAIR_CAP)? {
        let candidate = rest.union(&repair);
        let (_, valuations) = eval_bcq(q, &candidate);
        let no_leak = valuations.iter().all(|theta| {
            q0.iter().all(|name| {
                let image = theta.apply_atom(q.atom(name).expect("checked above"));
                !repair.contains(&image)
            })
        });
        if no_leak {
            return Ok(true);
        }
    }
    Ok(false)
}
