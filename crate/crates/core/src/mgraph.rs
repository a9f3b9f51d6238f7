//! Schema-level key-join graph over query atoms, cycle selection inside the
//! attack graph's initial strong components, and the data-level graphs a
//! cycle induces on a database: the hook graph over facts, its restriction to
//! one cycle, the block-quotient graph, and cycle embeddings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::attack::attack_graph;
use crate::fd::{fd_closure, fds_of};
use crate::model::{eval_bcq, BlockKey, Database, Fact, ModelError, Query, Valuation};
use crate::saturate::is_saturated;

/// Directed graph over the atoms of a query with an edge `F -> G` whenever
/// the key dependencies of the consistent atoms force the variables of `F`
/// to determine the key of `G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MGraph {
    vertices: Vec<String>,
    edges: BTreeSet<(String, String)>,
}

impl MGraph {
    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn has_edge(&self, from: &str, to: &str) -> bool {
        self.edges.contains(&(from.to_string(), to.to_string()))
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph join_graph {\n");
        for v in &self.vertices {
            let _ = writeln!(out, "  \"{v}\";");
        }
        for (from, to) in &self.edges {
            let _ = writeln!(out, "  \"{from}\" -> \"{to}\";");
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the key-join graph of a query.
pub fn m_graph(q: &Query) -> MGraph {
    let cfds = fds_of(q.catoms());
    let vertices: Vec<String> = q.atoms().iter().map(|a| a.name().to_string()).collect();
    let mut edges = BTreeSet::new();
    for f in q.atoms() {
        let reach = fd_closure(&f.vars(), &cfds);
        for g in q.atoms() {
            if f.name() != g.name() && g.key_vars().is_subset(&reach) {
                edges.insert((f.name().to_string(), g.name().to_string()));
            }
        }
    }
    MGraph { vertices, edges }
}

/// An elementary cycle `F_0 -> F_1 -> ... -> F_{k-1} -> F_0` in the key-join
/// graph, stored in canonical rotation (first atom has the least name).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MCycle {
    atoms: Vec<String>,
}

impl MCycle {
    /// Validates that the given atom sequence is an elementary cycle of the
    /// query's key-join graph and stores it in canonical rotation.
    pub fn new(q: &Query, atoms: Vec<String>) -> Result<MCycle, ModelError> {
        if atoms.len() < 2 {
            return Err(ModelError::Precondition {
                reason: format!("cycle needs at least 2 atoms, got {}", atoms.len()),
            });
        }
        let distinct: BTreeSet<&String> = atoms.iter().collect();
        if distinct.len() != atoms.len() {
            return Err(ModelError::Precondition {
                reason: "cycle atoms must be distinct".to_string(),
            });
        }
        for name in &atoms {
            if q.atom(name).is_none() {
                return Err(ModelError::UnknownRelation { relation: name.clone() });
            }
        }
        let mg = m_graph(q);
        for i in 0..atoms.len() {
            let from = &atoms[i];
            let to = &atoms[(i + 1) % atoms.len()];
            if !mg.has_edge(from, to) {
                return Err(ModelError::Precondition {
                    reason: format!("{from} -> {to} is not a key-join edge"),
                });
            }
        }
        Ok(MCycle { atoms: canonical_rotation(atoms) })
    }

    /// Cycle length, written `k` throughout this crate.
    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    /// Atom names in cycle order, starting from the least name.
    pub fn atoms(&self) -> &[String] {
        &self.atoms
    }

    pub fn contains(&self, name: &str) -> bool {
        self.atoms.iter().any(|a| a == name)
    }

    /// Position of a relation on the cycle, if it lies on it.
    pub fn part_of(&self, relation: &str) -> Option<usize> {
        self.atoms.iter().position(|a| a == relation)
    }
}

impl std::fmt::Display for MCycle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} -> {}", self.atoms.join(" -> "), self.atoms[0])
    }
}

fn canonical_rotation(atoms: Vec<String>) -> Vec<String> {
    let start = atoms
        .iter()
        .enumerate()
        .min_by_key(|(_, name)| name.clone())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut rotated = Vec::with_capacity(atoms.len());
    for i in 0..atoms.len() {
        rotated.push(atoms[(start + i) % atoms.len()].clone());
    }
    rotated
}

/// Finds a shortest elementary cycle of the key-join graph that lies fully
/// inside one initial strong component of the attack graph.
///
/// Preconditions: the query is saturated, its attack graph has no strong
/// cycle, and every inconsistency-prone atom is attacked. Under these
/// conditions a cycle is guaranteed whenever some initial strong component
/// has two or more atoms; `Ok(None)` is returned when no such component
/// exists (for instance when every atom is of consistent mode).
pub fn find_mcycle(q: &Query) -> Result<Option<MCycle>, ModelError> {
    if !is_saturated(q) {
        return Err(ModelError::Precondition { reason: "query is not saturated".to_string() });
    }
    let ag = attack_graph(q);
    if ag.has_strong_cycle() {
        return Err(ModelError::Precondition {
            reason: "attack graph has a strong cycle".to_string(),
        });
    }
    let unattacked = ag.unattacked();
    for atom in q.iatoms() {
        if unattacked.contains(atom.name()) {
            return Err(ModelError::Precondition {
                reason: format!("atom {} is unattacked", atom.name()),
            });
        }
    }
    let mg = m_graph(q);
    let mut best: Option<Vec<String>> = None;
    let mut saw_big_component = false;
    for component in ag.initial_strong_components() {
        if component.len() < 2 {
            continue;
        }
        saw_big_component = true;
        if let Some(cycle) = shortest_cycle_within(&mg, &component) {
            let better = match &best {
                None => true,
                Some(cur) => (cycle.len(), &cycle) < (cur.len(), cur),
            };
            if better {
                best = Some(cycle);
            }
        }
    }
    match best {
        Some(atoms) => Ok(Some(MCycle::new(q, atoms)?)),
        None if saw_big_component => Err(ModelError::Precondition {
            reason: "no key-join cycle inside any initial strong component".to_string(),
        }),
        None => Ok(None),
    }
}

/// All elementary cycles within `allowed`, canonicalized to start at their
/// least vertex; returns the lexicographically least among the shortest.
fn shortest_cycle_within(mg: &MGraph, allowed: &BTreeSet<String>) -> Option<Vec<String>> {
    let mut best: Option<Vec<String>> = None;
    let verts: Vec<&String> = allowed.iter().collect();
    for start in &verts {
        let mut path = vec![(*start).clone()];
        dfs_cycles(mg, allowed, start, &mut path, &mut best);
    }
    best
}

fn dfs_cycles(
    mg: &MGraph,
    allowed: &BTreeSet<String>,
    start: &str,
    path: &mut Vec<String>,
    best: &mut Option<Vec<String>>,
) {
    let last = path.last().expect("path never empty").clone();
    if path.len() >= 2 && mg.has_edge(&last, start) {
        let better = match &*best {
            None => true,
            Some(cur) => (path.len(), &*path) < (cur.len(), cur),
        };
        if better {
            *best = Some(path.clone());
        }
    }
    if let Some(cur) = &*best {
        if path.len() + 1 >= cur.len() {
            return;
        }
    }
    for next in allowed.iter() {
        // Canonical start: only extend with vertices greater than the start,
        // so each cycle is enumerated exactly once, from its least vertex.
        if next.as_str() <= start || path.contains(next) {
            continue;
        }
        if mg.has_edge(&last, next) {
            path.push(next.clone());
            dfs_cycles(mg, allowed, start, path, best);
            path.pop();
        }
    }
}

/// Data-level instantiation of the key-join graph: an edge `A -> B` between
/// facts records that some full embedding of the query maps `F` to `A` and
/// `G` to a fact key-equal to `B`, for a key-join edge `F -> G`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HookGraph {
    vertices: BTreeSet<Fact>,
    edges: BTreeSet<(Fact, Fact)>,
}

impl HookGraph {
    pub fn vertices(&self) -> &BTreeSet<Fact> {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<(Fact, Fact)> {
        &self.edges
    }

    pub fn to_dot(&self) -> String {
        fact_graph_dot("hook_graph", &self.edges, &self.vertices)
    }
}

/// Builds the hook graph of a database under a query, using every key-join
/// edge of the query.
pub fn hook_graph(q: &Query, db: &Database) -> HookGraph {
    let mg = m_graph(q);
    let edge_pairs: Vec<(String, String)> = mg.edges().iter().cloned().collect();
    let edges = hook_edges(q, db, &edge_pairs);
    let vertices: BTreeSet<Fact> = db.facts().cloned().collect();
    assert_hook_invariants(&edges, db);
    HookGraph { vertices, edges }
}

/// The hook graph restricted to the facts of one key-join cycle and to the
/// cycle's own edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CHookGraph {
    cycle: MCycle,
    vertices: BTreeSet<Fact>,
    edges: BTreeSet<(Fact, Fact)>,
}

impl CHookGraph {
    pub fn cycle(&self) -> &MCycle {
        &self.cycle
    }

    pub fn vertices(&self) -> &BTreeSet<Fact> {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<(Fact, Fact)> {
        &self.edges
    }

    pub fn has_edge(&self, from: &Fact, to: &Fact) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    pub fn successors<'a>(&'a self, from: &'a Fact) -> impl Iterator<Item = &'a Fact> {
        self.edges.iter().filter(move |(a, _)| a == from).map(|(_, b)| b)
    }

    pub fn out_degree(&self, from: &Fact) -> usize {
        self.successors(from).count()
    }

    /// Position of a fact's relation on the underlying cycle.
    pub fn part(&self, fact: &Fact) -> Option<usize> {
        self.cycle.part_of(&fact.relation)
    }

    /// Strong components of the graph, each a set of facts, in a
    /// deterministic order.
    pub fn strong_components(&self) -> Vec<BTreeSet<Fact>> {
        let verts: Vec<&Fact> = self.vertices.iter().collect();
        let index: BTreeMap<&Fact, usize> =
            verts.iter().enumerate().map(|(i, f)| (*f, i)).collect();
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); verts.len()];
        for (a, b) in &self.edges {
            succ[index[a]].push(index[b]);
        }
        let comps = tarjan(verts.len(), &succ);
        let mut out: Vec<BTreeSet<Fact>> = comps
            .into_iter()
            .map(|c| c.into_iter().map(|i| verts[i].clone()).collect())
            .collect();
        out.sort();
        out
    }

    /// True when no edge leaves or enters any strong component, i.e. the
    /// graph is a disjoint union of its strong components.
    pub fn components_are_isolated(&self) -> bool {
        let comps = self.strong_components();
        let comp_of: BTreeMap<&Fact, usize> = comps
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.iter().map(move |f| (f, i)))
            .collect();
        self.edges.iter().all(|(a, b)| comp_of[a] == comp_of[b])
    }

    pub fn to_dot(&self) -> String {
        fact_graph_dot("cycle_hook_graph", &self.edges, &self.vertices)
    }
}

/// Builds the hook graph restricted to one cycle of the key-join graph.
pub fn chook_graph(q: &Query, cycle: &MCycle, db: &Database) -> CHookGraph {
    let k = cycle.k();
    let mut edge_pairs = Vec::with_capacity(k);
    for i in 0..k {
        edge_pairs.push((cycle.atoms()[i].clone(), cycle.atoms()[(i + 1) % k].clone()));
    }
    let edges = hook_edges(q, db, &edge_pairs);
    let vertices: BTreeSet<Fact> = db
        .facts()
        .filter(|f| cycle.contains(&f.relation))
        .cloned()
        .collect();
    assert_hook_invariants(&edges, db);
    CHookGraph { cycle: cycle.clone(), vertices, edges }
}

fn hook_edges(
    q: &Query,
    db: &Database,
    atom_pairs: &[(String, String)],
) -> BTreeSet<(Fact, Fact)> {
    let (_, valuations) = eval_bcq(q, db);
    let blocks = db.blocks();
    let mut edges = BTreeSet::new();
    for theta in &valuations {
        for (from, to) in atom_pairs {
            let a = ground(theta, q, from);
            let b0 = ground(theta, q, to);
            for b in blocks.get(&b0.block_key()).map(Vec::as_slice).unwrap_or(&[]) {
                edges.insert((a.clone(), b.clone()));
            }
        }
    }
    edges
}

fn ground(theta: &Valuation, q: &Query, atom_name: &str) -> Fact {
    theta.apply_atom(q.atom(atom_name).expect("atom name comes from the query"))
}

/// Every hook edge is invariant under key-equality of its target, and all
/// hook successors of a fact within one relation are key-equal.
fn assert_hook_invariants(edges: &BTreeSet<(Fact, Fact)>, db: &Database) {
    let mut succ_block: BTreeMap<(&Fact, &str), &Fact> = BTreeMap::new();
    for (a, b) in edges {
        if let Some(prev) = succ_block.insert((a, b.relation.as_str()), b) {
            assert_eq!(
                prev.block_key(),
                b.block_key(),
                "hook successors of {a} over {} are not key-equal",
                b.relation
            );
        }
    }
    for (a, b) in edges {
        for sibling in db.block(&b.block_key()) {
            assert!(
                edges.contains(&(a.clone(), sibling.clone())),
                "hook edge {a} -> {b} is not block-invariant"
            );
        }
    }
}

fn fact_graph_dot(
    name: &str,
    edges: &BTreeSet<(Fact, Fact)>,
    vertices: &BTreeSet<Fact>,
) -> String {
    let mut out = format!("digraph {name} {{\n");
    for v in vertices {
        let _ = writeln!(out, "  \"{}\";", dot_escape(&v.to_string()));
    }
    for (a, b) in edges {
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\";",
            dot_escape(&a.to_string()),
            dot_escape(&b.to_string())
        );
    }
    out.push_str("}\n");
    out
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Quotient of a cycle-restricted hook graph under key-equality: vertices
/// are blocks, and an edge connects two blocks whenever some facts inside
/// them are connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockQuotientGraph {
    k: usize,
    vertices: BTreeSet<BlockKey>,
    edges: BTreeSet<(BlockKey, BlockKey)>,
    parts: BTreeMap<BlockKey, usize>,
}

impl BlockQuotientGraph {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn vertices(&self) -> &BTreeSet<BlockKey> {
        &self.vertices
    }

    pub fn edges(&self) -> &BTreeSet<(BlockKey, BlockKey)> {
        &self.edges
    }

    /// Position on the underlying cycle of the relation this block belongs to.
    pub fn part(&self, block: &BlockKey) -> Option<usize> {
        self.parts.get(block).copied()
    }

    pub fn successors<'a>(&'a self, from: &'a BlockKey) -> impl Iterator<Item = &'a BlockKey> {
        self.edges.iter().filter(move |(a, _)| a == from).map(|(_, b)| b)
    }

    /// All elementary directed cycles of the given length, each starting at
    /// its least block.
    pub fn elementary_cycles(&self, len: usize) -> Vec<Vec<BlockKey>> {
        let mut found = Vec::new();
        for start in &self.vertices {
            let mut path = vec![start.clone()];
            self.cycle_dfs(start, &mut path, len, &mut found);
        }
        found.sort();
        found
    }

    fn cycle_dfs(
        &self,
        start: &BlockKey,
        path: &mut Vec<BlockKey>,
        len: usize,
        found: &mut Vec<Vec<BlockKey>>,
    ) {
        let last = path.last().expect("path never empty").clone();
        if path.len() == len {
            if self.edges.contains(&(last, start.clone())) {
                found.push(path.clone());
            }
            return;
        }
        for next in self.successors(&last) {
            if next <= start || path.contains(next) {
                continue;
            }
            path.push(next.clone());
            self.cycle_dfs(start, path, len, found);
            path.pop();
        }
    }

    /// Number of weakly connected components.
    pub fn weak_component_count(&self) -> usize {
        let verts: Vec<&BlockKey> = self.vertices.iter().collect();
        let index: BTreeMap<&BlockKey, usize> =
            verts.iter().enumerate().map(|(i, b)| (*b, i)).collect();
        let mut parent: Vec<usize> = (0..verts.len()).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let root = find(parent, parent[x]);
                parent[x] = root;
            }
            parent[x]
        }
        for (a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, index[a]), find(&mut parent, index[b]));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        (0..verts.len()).map(|i| find(&mut parent, i)).collect::<BTreeSet<_>>().len()
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph block_quotient {\n");
        for v in &self.vertices {
            let _ = writeln!(out, "  \"{}\";", dot_escape(&v.to_string()));
        }
        for (a, b) in &self.edges {
            let _ = writeln!(
                out,
                "  \"{}\" -> \"{}\";",
                dot_escape(&a.to_string()),
                dot_escape(&b.to_string())
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the block-quotient graph of a cycle-restricted hook graph.
pub fn block_quotient(chg: &CHookGraph) -> BlockQuotientGraph {
    let mut vertices = BTreeSet::new();
    let mut parts = BTreeMap::new();
    for fact in chg.vertices() {
        let bk = fact.block_key();
        if let Some(part) = chg.part(fact) {
            parts.insert(bk.clone(), part);
        }
        vertices.insert(bk);
    }
    let edges = chg
        .edges()
        .iter()
        .map(|(a, b)| (a.block_key(), b.block_key()))
        .collect();
    BlockQuotientGraph { k: chg.cycle().k(), vertices, edges, parts }
}

/// An elementary cycle of facts in a cycle-restricted hook graph whose length
/// is `n` times the cycle length and which contains no two distinct
/// key-equal facts. Facts are stored in traversal order, starting at the
/// least fact of the cycle's first relation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Embedding {
    pub facts: Vec<Fact>,
    pub n: usize,
    /// For `n == 1`: whether some full query embedding covers all facts.
    pub relevant: bool,
}

impl Embedding {
    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }
}

/// All single-turn embeddings of the cycle, split into those covered by a
/// full query embedding and the rest.
pub fn one_embeddings(
    q: &Query,
    cycle: &MCycle,
    db: &Database,
) -> (BTreeSet<Embedding>, BTreeSet<Embedding>) {
    let chg = chook_graph(q, cycle, db);
    one_embeddings_of(q, &chg, db)
}

/// As [`one_embeddings`], over an already-built graph.
pub fn one_embeddings_of(
    q: &Query,
    chg: &CHookGraph,
    db: &Database,
) -> (BTreeSet<Embedding>, BTreeSet<Embedding>) {
    let covered = full_embedding_images(q, chg.cycle(), db);
    let mut relevant = BTreeSet::new();
    let mut irrelevant = BTreeSet::new();
    for facts in cycle_search(chg, 1) {
        let is_relevant = covered.contains(&facts);
        let emb = Embedding { facts, n: 1, relevant: is_relevant };
        if is_relevant {
            relevant.insert(emb);
        } else {
            irrelevant.insert(emb);
        }
    }
    (relevant, irrelevant)
}

/// The fact images of the cycle's atoms under every full query embedding,
/// in cycle order.
fn full_embedding_images(q: &Query, cycle: &MCycle, db: &Database) -> BTreeSet<Vec<Fact>> {
    let (_, valuations) = eval_bcq(q, db);
    valuations
        .iter()
        .map(|theta| cycle.atoms().iter().map(|name| ground(theta, q, name)).collect())
        .collect()
}

/// All embeddings of multiplicity `n`: elementary cycles of `n * k` facts
/// without two distinct key-equal facts.
pub fn n_embeddings(q: &Query, cycle: &MCycle, db: &Database, n: usize) -> BTreeSet<Embedding> {
    let chg = chook_graph(q, cycle, db);
    n_embeddings_of(q, &chg, db, n)
}

/// As [`n_embeddings`], over an already-built graph.
pub fn n_embeddings_of(
    q: &Query,
    chg: &CHookGraph,
    db: &Database,
    n: usize,
) -> BTreeSet<Embedding> {
    if n == 0 {
        return BTreeSet::new();
    }
    let covered = if n == 1 {
        full_embedding_images(q, chg.cycle(), db)
    } else {
        BTreeSet::new()
    };
    cycle_search(chg, n)
        .into_iter()
        .map(|facts| {
            let relevant = n == 1 && covered.contains(&facts);
            Embedding { facts, n, relevant }
        })
        .collect()
}

/// Enumerates elementary cycles of length `n * k` whose blocks are pairwise
/// distinct, each reported once, starting at its least first-relation fact.
fn cycle_search(chg: &CHookGraph, n: usize) -> BTreeSet<Vec<Fact>> {
    let target = n * chg.cycle().k();
    let mut found = BTreeSet::new();
    let part0: Vec<&Fact> = chg
        .vertices()
        .iter()
        .filter(|f| chg.part(f) == Some(0))
        .collect();
    for start in &part0 {
        let mut path = vec![(*start).clone()];
        let mut blocks: BTreeSet<BlockKey> = BTreeSet::new();
        blocks.insert(start.block_key());
        embed_dfs(chg, start, target, &mut path, &mut blocks, &mut found);
    }
    found
}

fn embed_dfs(
    chg: &CHookGraph,
    start: &Fact,
    target: usize,
    path: &mut Vec<Fact>,
    blocks: &mut BTreeSet<BlockKey>,
    found: &mut BTreeSet<Vec<Fact>>,
) {
    let last = path.last().expect("path never empty").clone();
    if path.len() == target {
        if chg.has_edge(&last, start) {
            found.insert(path.clone());
        }
        return;
    }
    for next in chg.successors(&last) {
        // Start canonically at the least fact of the first relation, and
        // keep at most one fact per block: this enforces both elementarity
        // and the ban on distinct key-equal facts.
        if chg.part(next) == Some(0) && next <= start {
            continue;
        }
        if blocks.contains(&next.block_key()) {
            continue;
        }
        path.push(next.clone());
        blocks.insert(next.block_key());
        embed_dfs(chg, start, target, path, blocks, found);
        let popped = path.pop().expect("pushed above");
        blocks.remove(&popped.block_key());
    }
}

/// Iterative strongly-connected-components over an adjacency list,
/// returning components as index sets.
pub(crate) fn tarjan(n: usize, succ: &[Vec<usize>]) -> Vec<Vec<usize>> {
    #[derive(Clone)]
    struct NodeState {
        index: Option<usize>,
        lowlink: usize,
        on_stack: bool,
    }
    let mut state = vec![NodeState { index: None, lowlink: 0, on_stack: false }; n];
    let mut stack: Vec<usize> = Vec::new();
    let mut next_index = 0usize;
    let mut components = Vec::new();
    // Explicit DFS frames: (vertex, next successor position).
    for root in 0..n {
        if state[root].index.is_some() {
            continue;
        }
        let mut frames: Vec<(usize, usize)> = vec![(root, 0)];
        while let Some(&(v, pos)) = frames.last() {
            if pos == 0 {
                state[v].index = Some(next_index);
                state[v].lowlink = next_index;
                next_index += 1;
                stack.push(v);
                state[v].on_stack = true;
            }
            if let Some(&w) = succ[v].get(pos) {
                frames.last_mut().expect("nonempty").1 = pos + 1;
                if state[w].index.is_none() {
                    frames.push((w, 0));
                } else if state[w].on_stack {
                    state[v].lowlink = state[v].lowlink.min(state[w].index.expect("visited"));
                }
            } else {
                frames.pop();
                if let Some(&(parent, _)) = frames.last() {
                    let low = state[v].lowlink;
                    state[parent].lowlink = state[parent].lowlink.min(low);
                }
                if state[v].lowlink == state[v].index.expect("assigned") {
                    let mut component = Vec::new();
                    while let Some(w) = stack.pop() {
                        state[w].on_stack = false;
                        component.push(w);
                        if w == v {
                            break;
                        }
                    }
                    components.push(component);
                }
            }
        }
    }
    components
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Constant;
    use crate::text::{parse_database, parse_query};

    fn c3() -> Query {
        parse_query("q :- R(x | y), S(y | z), T(z | x).").unwrap()
    }

    fn dbgt(q: &Query) -> Database {
        parse_database(
            "R(a1 | b1). R(a1 | b2). R(a2 | b2).\n\
             S(b1 | c1). S(b2 | c1). S(b2 | c2).\n\
             T(c1 | a1). T(c1 | a2). T(c2 | a1).",
            q,
        )
        .unwrap()
    }

    fn q1() -> Query {
        parse_query(
            "q :- R(x | y), S(y | z), U(y, z, w | x), T1(z | w), T2(z | w), Tc@c(z | w).",
        )
        .unwrap()
    }

    fn dbq1(q: &Query) -> Database {
        parse_database(
            "S(I | 1). S(I | 2). S(I | 3).\n\
             Tc(1 | a). Tc(2 | b).\n\
             T1(1 | a). T1(2 | b).\n\
             T2(1 | a). T2(2 | b).\n\
             U(I, 1, a | chi). U(I, 2, b | chi).\n\
             R(chi | I).",
            q,
        )
        .unwrap()
    }

    fn rs() -> Query {
        parse_query("q :- R(x | y, z), S(y | x, z).").unwrap()
    }

    fn dbrs(q: &Query) -> Database {
        parse_database(
            "R(a | 1, alpha). R(b | 1, beta). R(b | 2, beta). R(c | 3, beta).\n\
             S(1 | a, alpha). S(1 | b, beta). S(2 | b, beta). S(3 | c, beta).",
            q,
        )
        .unwrap()
    }

    fn fact(rel: &str, key: &[&str], value: &[&str]) -> Fact {
        let conv = |s: &&str| -> Constant {
            s.parse::<i64>().map(Constant::Int).unwrap_or_else(|_| Constant::text(s))
        };
        Fact {
            relation: rel.to_string(),
            key: key.iter().map(conv).collect(),
            value: value.iter().map(conv).collect(),
        }
    }

    fn edge_set(pairs: &[(&str, &str)]) -> BTreeSet<(String, String)> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn join_graph_of_three_cycle_is_the_cycle() {
        let g = m_graph(&c3());
        assert_eq!(*g.edges(), edge_set(&[("R", "S"), ("S", "T"), ("T", "R")]));
    }

    #[test]
    fn join_graph_of_six_atom_query() {
        let g = m_graph(&q1());
        assert!(g.has_edge("S", "U"));
        let expected = edge_set(&[
            ("R", "S"),
            ("S", "U"),
            ("S", "T1"),
            ("S", "T2"),
            ("S", "Tc"),
            ("U", "R"),
            ("U", "S"),
            ("U", "T1"),
            ("U", "T2"),
            ("U", "Tc"),
            ("T1", "T2"),
            ("T1", "Tc"),
            ("T2", "T1"),
            ("T2", "Tc"),
            ("Tc", "T1"),
            ("Tc", "T2"),
        ]);
        assert_eq!(*g.edges(), expected);
        // The subgraph induced by the initial strong component is cyclic.
        assert!(g.has_edge("S", "U") && g.has_edge("U", "S"));
    }

    #[test]
    fn join_graph_of_disjoint_atoms_has_no_edges() {
        let q = parse_query("q :- R(x | y), S(u | v).").unwrap();
        assert!(m_graph(&q).edges().is_empty());
    }

    #[test]
    fn cycle_validation_and_canonical_rotation() {
        let q = c3();
        let cycle = MCycle::new(&q, vec!["S".into(), "T".into(), "R".into()]).unwrap();
        assert_eq!(cycle.atoms(), ["R", "S", "T"]);
        assert_eq!(cycle.k(), 3);
        assert!(MCycle::new(&q, vec!["R".into(), "T".into(), "S".into()]).is_err());
        assert!(MCycle::new(&q, vec!["R".into()]).is_err());
        assert!(MCycle::new(&q, vec!["R".into(), "R".into()]).is_err());
        assert!(MCycle::new(&q, vec!["R".into(), "X".into()]).is_err());
    }

    #[test]
    fn find_cycle_in_three_cycle_query() {
        let cycle = find_mcycle(&c3()).unwrap().unwrap();
        assert_eq!(cycle.atoms(), ["R", "S", "T"]);
    }

    #[test]
    fn find_cycle_in_six_atom_query_prefers_shortest() {
        let cycle = find_mcycle(&q1()).unwrap().unwrap();
        assert_eq!(cycle.atoms(), ["S", "U"]);
    }

    #[test]
    fn find_cycle_rejects_unattacked_inconsistent_atom() {
        let q = parse_query("q :- R(x | y), S(y | z).").unwrap();
        let err = find_mcycle(&q).unwrap_err();
        assert!(matches!(err, ModelError::Precondition { .. }));
    }

    #[test]
    fn find_cycle_on_fully_consistent_query_is_none() {
        let q = parse_query("q :- R@c(x | y), S@c(y | x).").unwrap();
        assert!(find_mcycle(&q).unwrap().is_none());
    }

    #[test]
    fn hook_graph_of_guided_tour_database() {
        let q = c3();
        let db = dbgt(&q);
        let g = hook_graph(&q, &db);
        assert_eq!(g.vertices().len(), 9);
        assert_eq!(g.edges().len(), 15);
        let outside_triangle =
            (fact("S", &["b1"], &["c1"]), fact("T", &["c1"], &["a2"]));
        assert!(g.edges().contains(&outside_triangle));
    }

    #[test]
    fn cycle_restriction_matches_full_graph_when_cycle_covers_it() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let chg = chook_graph(&q, &cycle, &db);
        let full = hook_graph(&q, &db);
        assert_eq!(chg.edges(), full.edges());
        assert_eq!(chg.vertices().len(), 9);
    }

    #[test]
    fn cycle_restriction_on_six_atom_query() {
        let q = q1();
        let db = dbq1(&q);
        let cycle = MCycle::new(&q, vec!["R".into(), "S".into(), "U".into()]).unwrap();
        let chg = chook_graph(&q, &cycle, &db);
        let expected: BTreeSet<(Fact, Fact)> = [
            (fact("R", &["chi"], &["I"]), fact("S", &["I"], &["1"])),
            (fact("R", &["chi"], &["I"]), fact("S", &["I"], &["2"])),
            (fact("R", &["chi"], &["I"]), fact("S", &["I"], &["3"])),
            (fact("S", &["I"], &["1"]), fact("U", &["I", "1", "a"], &["chi"])),
            (fact("S", &["I"], &["2"]), fact("U", &["I", "2", "b"], &["chi"])),
            (fact("U", &["I", "1", "a"], &["chi"]), fact("R", &["chi"], &["I"])),
            (fact("U", &["I", "2", "b"], &["chi"]), fact("R", &["chi"], &["I"])),
        ]
        .into_iter()
        .collect();
        assert_eq!(*chg.edges(), expected);
        assert_eq!(chg.out_degree(&fact("S", &["I"], &["3"])), 0);
    }

    #[test]
    fn quotient_of_guided_tour_database() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let quotient = block_quotient(&chook_graph(&q, &cycle, &db));
        assert_eq!(quotient.vertices().len(), 6);
        assert_eq!(quotient.edges().len(), 9);
        assert_eq!(quotient.elementary_cycles(3).len(), 4);
        let six = quotient.elementary_cycles(6);
        assert_eq!(six.len(), 1, "expected a unique elementary cycle of length 6");
        let names: Vec<String> = six[0].iter().map(|b| b.to_string()).collect();
        assert_eq!(
            names,
            [
                "R(\"a1\" | *)",
                "S(\"b1\" | *)",
                "T(\"c1\" | *)",
                "R(\"a2\" | *)",
                "S(\"b2\" | *)",
                "T(\"c2\" | *)"
            ]
        );
    }

    #[test]
    fn quotient_of_consistent_database_is_isomorphic() {
        let q = c3();
        let db = parse_database("R(a1 | b1). S(b1 | c1). T(c1 | a1).", &q).unwrap();
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let chg = chook_graph(&q, &cycle, &db);
        let quotient = block_quotient(&chg);
        assert_eq!(quotient.vertices().len(), chg.vertices().len());
        assert_eq!(quotient.edges().len(), chg.edges().len());
    }

    #[test]
    fn quotient_of_two_component_database() {
        let q = rs();
        let db = dbrs(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let quotient = block_quotient(&chook_graph(&q, &cycle, &db));
        assert_eq!(quotient.weak_component_count(), 2);
    }

    #[test]
    fn one_embeddings_of_guided_tour_database() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let (relevant, irrelevant) = one_embeddings(&q, &cycle, &db);
        assert_eq!(relevant.len(), 4);
        assert!(irrelevant.is_empty());
    }

    #[test]
    fn one_embeddings_of_two_component_database() {
        let q = rs();
        let db = dbrs(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let (relevant, irrelevant) = one_embeddings(&q, &cycle, &db);
        assert_eq!(relevant.len(), 4);
        assert!(irrelevant.is_empty());
        let first = relevant.iter().next().unwrap();
        assert_eq!(
            first.facts,
            vec![
                fact("R", &["a"], &["1", "alpha"]),
                fact("S", &["1"], &["a", "alpha"])
            ]
        );
    }

    #[test]
    fn mixed_embeddings_split_into_relevant_and_irrelevant() {
        let q = rs();
        let db = parse_database(
            "R(a | b, 1). R(a | b, 2). S(b | a, 1). S(b | a, 2).",
            &q,
        )
        .unwrap();
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let (relevant, irrelevant) = one_embeddings(&q, &cycle, &db);
        assert_eq!(relevant.len(), 2);
        assert_eq!(irrelevant.len(), 2);
        for emb in &irrelevant {
            let z_values: BTreeSet<&Constant> =
                emb.facts.iter().map(|f| &f.value[1]).collect();
            assert_eq!(z_values.len(), 2, "irrelevant pair mixes the two chains");
        }
    }

    #[test]
    fn double_embedding_of_guided_tour_database() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let twos = n_embeddings(&q, &cycle, &db, 2);
        assert_eq!(twos.len(), 1);
        let outer = twos.iter().next().unwrap();
        assert_eq!(
            outer.facts,
            vec![
                fact("R", &["a1"], &["b1"]),
                fact("S", &["b1"], &["c1"]),
                fact("T", &["c1"], &["a2"]),
                fact("R", &["a2"], &["b2"]),
                fact("S", &["b2"], &["c2"]),
                fact("T", &["c2"], &["a1"]),
            ]
        );
        assert!(!outer.relevant);
        // No embedding may contain two distinct key-equal facts.
        assert!(!outer.contains(&fact("R", &["a1"], &["b2"])));
    }

    #[test]
    fn embeddings_beyond_vertex_budget_are_empty() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        assert!(n_embeddings(&q, &cycle, &db, 3).is_empty());
        assert!(n_embeddings(&q, &cycle, &db, 4).is_empty());
    }

    #[test]
    fn dot_exports_name_their_graphs() {
        let q = c3();
        let db = dbgt(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        assert!(m_graph(&q).to_dot().starts_with("digraph join_graph"));
        assert!(hook_graph(&q, &db).to_dot().contains("R(\\\"a1\\\" | \\\"b1\\\")"));
        let chg = chook_graph(&q, &cycle, &db);
        assert!(chg.to_dot().starts_with("digraph cycle_hook_graph"));
        assert!(block_quotient(&chg).to_dot().contains("R(\\\"a1\\\" | *)"));
    }

    #[test]
    fn strong_components_of_two_component_database() {
        let q = rs();
        let db = dbrs(&q);
        let cycle = find_mcycle(&q).unwrap().unwrap();
        let chg = chook_graph(&q, &cycle, &db);
        let comps = chg.strong_components();
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].len() + comps[1].len(), 8);
        assert!(chg.components_are_isolated());
    }
}
