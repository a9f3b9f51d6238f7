//! Seeded random instance generation for differential testing.
//!
//! Everything here is deterministic in the seed. Queries stay within the
//! differential-suite envelope — at most six atoms, arity at most four —
//! and databases keep blocks small so the repair oracle stays feasible.
//! Three query shapes are mixed 40/40/20: key-join queries (never hard),
//! queries with a planted key-join cycle (exercising garbage collection
//! and cycle collapse), and unrestricted queries (anything, including
//! hard ones).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{classify_complexity, has_key_join_property, Complexity};
use crate::garbage::KPartiteGraph;
use crate::model::{Atom, Constant, Database, Fact, Mode, Query, RelationSchema, Term};

/// Bounds every generated instance respects.
#[derive(Debug, Clone)]
pub struct GenLimits {
    pub max_atoms: usize,
    pub max_arity: usize,
    pub max_blocks: usize,
    pub max_block_size: usize,
    /// Size of the constant pool facts draw from; smaller pools join more.
    pub pool: usize,
}

impl Default for GenLimits {
    fn default() -> Self {
        GenLimits { max_atoms: 6, max_arity: 4, max_blocks: 3, max_block_size: 3, pool: 4 }
    }
}

/// The three query shapes the generator mixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryShape {
    KeyJoin,
    PlantedCycle,
    Unrestricted,
}

/// One seeded (query, database) pair: shape odds 40/40/20.
pub fn gen_instance(seed: u64, limits: &GenLimits) -> (Query, Database) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = match rng.gen_range(0..10) {
        0..=3 => QueryShape::KeyJoin,
        4..=7 => QueryShape::PlantedCycle,
        _ => QueryShape::Unrestricted,
    };
    let q = gen_query(&mut rng, shape, limits);
    let db = gen_database(&mut rng, &q, limits);
    (q, db)
}

/// Like [`gen_instance`], but resamples until the query avoids the hard
/// class, so the result always has a compiled pipeline.
pub fn gen_logspace_instance(seed: u64, limits: &GenLimits) -> (Query, Database) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let shape = match rng.gen_range(0..10) {
            0..=3 => QueryShape::KeyJoin,
            4..=7 => QueryShape::PlantedCycle,
            _ => QueryShape::Unrestricted,
        };
        let q = gen_query(&mut rng, shape, limits);
        if classify_complexity(&q) != Complexity::CoNpComplete {
            let db = gen_database(&mut rng, &q, limits);
            return (q, db);
        }
    }
}

/// A random query of the requested shape.
pub fn gen_query(rng: &mut ChaCha8Rng, shape: QueryShape, limits: &GenLimits) -> Query {
    match shape {
        QueryShape::KeyJoin => gen_key_join_query(rng, limits),
        QueryShape::PlantedCycle => gen_planted_cycle_query(rng, limits),
        QueryShape::Unrestricted => gen_unrestricted_query(rng, limits),
    }
}

fn schema(name: &str, arity: usize, key_len: usize, mode: Mode) -> RelationSchema {
    RelationSchema::new(name, arity, key_len, mode).expect("generator keeps signatures legal")
}

fn pool_constant(rng: &mut ChaCha8Rng, limits: &GenLimits) -> Constant {
    if rng.gen_bool(0.3) {
        Constant::Int(rng.gen_range(0..limits.pool as i64))
    } else {
        Constant::text(&format!("d{}", rng.gen_range(0..limits.pool)))
    }
}

/// Key-join queries are built as chains: every atom owns a private key and
/// joins at most one earlier atom by embedding that atom's full key into
/// its value positions. Any two atoms then share nothing or exactly one
/// key, which is the defining shape of the class.
pub fn gen_key_join_query(rng: &mut ChaCha8Rng, limits: &GenLimits) -> Query {
    let m = rng.gen_range(1..=limits.max_atoms);
    let mut atoms = Vec::new();
    let mut keys: Vec<Vec<String>> = Vec::new();
    // Each key variable may be referenced by at most one later atom.
    let mut referenced: BTreeSet<usize> = BTreeSet::new();
    let mut fresh = 0usize;
    for i in 0..m {
        let key_len = if rng.gen_bool(0.25) { 2 } else { 1 };
        let key_vars: Vec<String> = (0..key_len)
            .map(|j| format!("k{i}{}", (b'a' + j as u8) as char))
            .collect();
        let partner = if i > 0 && rng.gen_bool(0.75) {
            (0..i).filter(|j| !referenced.contains(j)).last()
        } else {
            None
        };
        let borrowed: Vec<String> = match partner {
            Some(j) => {
                referenced.insert(j);
                keys[j].clone()
            }
            None => Vec::new(),
        };
        let extra = rng.gen_range(0..=limits.max_arity.saturating_sub(key_len + borrowed.len()));
        let mut value: Vec<Term> = borrowed.iter().map(|v| Term::Var(v.clone())).collect();
        for _ in 0..extra {
            if rng.gen_bool(0.2) {
                value.push(Term::Const(pool_constant(rng, limits)));
            } else {
                value.push(Term::Var(format!("p{fresh}")));
                fresh += 1;
            }
        }
        let mode = if rng.gen_bool(0.2) { Mode::C } else { Mode::I };
        let arity = key_len + value.len();
        let atom = Atom::new(
            schema(&format!("R{i}"), arity, key_len, mode),
            key_vars.iter().map(|v| Term::Var(v.clone())).collect(),
            value,
        )
        .expect("arities match by construction");
        atoms.push(atom);
        keys.push(key_vars);
    }
    let q = Query::new(atoms).expect("relation names are distinct by construction");
    debug_assert!(has_key_join_property(&q), "chain construction must stay key-join");
    q
}

/// Queries with a planted key-join cycle `R0 -> R1 -> ... -> R0`, plus a
/// few optional satellite atoms hanging off the cycle variables, and
/// sometimes a disjoint four-atom kernel whose dependency u -> w is
/// internal, forcing a saturation stage.
pub fn gen_planted_cycle_query(rng: &mut ChaCha8Rng, limits: &GenLimits) -> Query {
    let k = if rng.gen_bool(0.5) { 2 } else { 3 };
    let plant_saturation = k + 2 <= limits.max_atoms && rng.gen_bool(0.3);
    let mut atoms = Vec::new();
    let mut fresh = 0usize;
    for i in 0..k {
        let next = format!("x{}", (i + 1) % k);
        let mut value = vec![Term::Var(next)];
        let extra = rng.gen_range(0..=limits.max_arity.saturating_sub(2).min(2));
        for _ in 0..extra {
            if rng.gen_bool(0.25) {
                value.push(Term::Const(pool_constant(rng, limits)));
            } else {
                value.push(Term::Var(format!("p{fresh}")));
                fresh += 1;
            }
        }
        atoms.push(
            Atom::new(
                schema(&format!("R{i}"), 1 + value.len(), 1, Mode::I),
                vec![Term::Var(format!("x{i}"))],
                value,
            )
            .expect("arities match by construction"),
        );
    }
    if plant_saturation {
        // Twin copies over the same variables: each supplies u -> w when
        // the other is dropped, so neither attacks anything, yet the
        // dependency is not a consequence of consistent atoms. Saturation
        // must materialize it.
        for name in ["P1", "P2"] {
            atoms.push(
                Atom::new(
                    schema(name, 2, 1, Mode::I),
                    vec![Term::Var("u".to_string())],
                    vec![Term::Var("w".to_string())],
                )
                .expect("arities match by construction"),
            );
        }
        return Query::new(atoms).expect("relation names are distinct by construction");
    }
    let extras = rng.gen_range(0..=limits.max_atoms.saturating_sub(k).min(3));
    for e in 0..extras {
        // Satellites are consistent or hang below the cycle without
        // attacking it, keeping most planted instances in the easy class.
        let anchor = format!("x{}", rng.gen_range(0..k));
        let (key, value, mode) = if rng.gen_bool(0.5) {
            (vec![Term::Var(anchor)], vec![Term::Var(format!("p{fresh}"))], Mode::C)
        } else {
            (vec![Term::Var(anchor), Term::Var(format!("p{fresh}"))], Vec::new(), Mode::I)
        };
        fresh += 1;
        let arity = key.len() + value.len();
        let key_len = key.len();
        atoms.push(
            Atom::new(schema(&format!("A{e}"), arity, key_len, mode), key, value)
                .expect("arities match by construction"),
        );
    }
    Query::new(atoms).expect("relation names are distinct by construction")
}

/// Anything goes: random arities, random variable sharing, random modes.
/// May well land in the hard class.
pub fn gen_unrestricted_query(rng: &mut ChaCha8Rng, limits: &GenLimits) -> Query {
    let m = rng.gen_range(1..=limits.max_atoms);
    let shared: Vec<String> = (0..4).map(|i| format!("x{i}")).collect();
    let mut fresh = 0usize;
    let mut atoms = Vec::new();
    for i in 0..m {
        let arity = rng.gen_range(1..=limits.max_arity);
        let key_len = rng.gen_range(1..=arity);
        let mut terms = Vec::new();
        for _ in 0..arity {
            let roll: f64 = rng.gen();
            if roll < 0.55 {
                terms.push(Term::Var(shared[rng.gen_range(0..shared.len())].clone()));
            } else if roll < 0.85 {
                terms.push(Term::Var(format!("p{fresh}")));
                fresh += 1;
            } else {
                terms.push(Term::Const(pool_constant(rng, limits)));
            }
        }
        let value = terms.split_off(key_len);
        let mode = if rng.gen_bool(0.15) { Mode::C } else { Mode::I };
        atoms.push(
            Atom::new(schema(&format!("R{i}"), arity, key_len, mode), terms, value)
                .expect("arities match by construction"),
        );
    }
    Query::new(atoms).expect("relation names are distinct by construction")
}

/// A random database for `q`: every relation gets a few blocks over a
/// small constant pool, and relations marked consistent get one fact per
/// block so the mark is honest.
pub fn gen_database(rng: &mut ChaCha8Rng, q: &Query, limits: &GenLimits) -> Database {
    let mut facts = BTreeSet::new();
    for atom in q.atoms() {
        let blocks = rng.gen_range(0..=limits.max_blocks);
        let value_len = atom.schema.arity - atom.schema.key_len;
        let mut seen_keys = BTreeSet::new();
        for _ in 0..blocks {
            let key: Vec<Constant> =
                (0..atom.schema.key_len).map(|_| pool_constant(rng, limits)).collect();
            if !seen_keys.insert(key.clone()) {
                continue;
            }
            let size = if atom.is_consistent() {
                1
            } else {
                rng.gen_range(1..=limits.max_block_size)
            };
            for _ in 0..size {
                let value: Vec<Constant> =
                    (0..value_len).map(|_| pool_constant(rng, limits)).collect();
                facts.insert(Fact { relation: atom.name().to_string(), key: key.clone(), value });
            }
        }
    }
    Database::new(facts)
}

/// A random valid instance for the long-cycle decision problem: random
/// edges between consecutive parts, pruned to those lying on a cycle
/// through all parts, restricted to the largest weakly connected
/// component. Returns `None` when pruning leaves nothing.
pub fn gen_kpartite(rng: &mut ChaCha8Rng, k: usize, per_part: usize) -> Option<KPartiteGraph> {
    let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=per_part)).collect();
    let mut parts = Vec::new();
    for (p, &s) in sizes.iter().enumerate() {
        parts.extend(std::iter::repeat(p).take(s));
    }
    let n = parts.len();
    // Vary density per instance so both polarities of the answer occur.
    let edge_p = rng.gen_range(0.25..0.95);
    let mut edges = BTreeSet::new();
    for u in 0..n {
        for v in 0..n {
            if parts[v] == (parts[u] + 1) % k && rng.gen_bool(edge_p) {
                edges.insert((u, v));
            }
        }
    }
    // Keep only edges on k-cycles.
    let g = KPartiteGraph::new(k, parts.clone(), edges).ok()?;
    let mut covered = BTreeSet::new();
    for cycle in g.k_cycles() {
        for i in 0..k {
            covered.insert((cycle[i], cycle[(i + 1) % k]));
        }
    }
    if covered.is_empty() {
        return None;
    }
    let g = KPartiteGraph::new(k, parts.clone(), covered).ok()?;
    // Restrict to the largest weak component with edges.
    let comp = g.weak_components().into_iter().max_by_key(|c| c.len())?;
    let keep: Vec<usize> = comp.into_iter().collect();
    let rename: BTreeMap<usize, usize> =
        keep.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let new_parts: Vec<usize> = keep.iter().map(|&v| parts[v]).collect();
    let new_edges: BTreeSet<(usize, usize)> = g
        .edges()
        .iter()
        .filter(|(u, v)| rename.contains_key(u) && rename.contains_key(v))
        .map(|(u, v)| (rename[u], rename[v]))
        .collect();
    if new_edges.is_empty() {
        return None;
    }
    KPartiteGraph::new(k, new_parts, new_edges).ok()
}
