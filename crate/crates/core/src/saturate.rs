//! Saturation: materializing internal functional dependencies.
//!
//! A dependency `Z -> w` is *internal* to a query when (1) some sequential
//! proof derives it using only atoms that attack no variable of `Z ∪ {w}`,
//! and (2) `Z` fits inside a single atom. A query is *saturated* when every
//! internal dependency is already entailed by its consistent atoms.
//!
//! Saturating a query adds a fresh consistent atom `N(z⃗ | w)` per missing
//! internal dependency. At the data level each addition is matched by a
//! *purification* pass — remove the host atom's blocks touched by pairs of
//! embeddings that agree on `Z` but disagree on `w` — followed by
//! materializing the `N` facts from embeddings into the purified database.
//! One pass reaches the fixpoint: removing blocks only destroys embeddings,
//! so no new violating pair can appear afterwards.
//!
//! When `Z` is empty (all-constant keys can derive variables from nothing),
//! the fresh atom gets the constant `0` as its key so that every relation
//! keeps a nonempty key; the dependency it carries is still `{} -> w`.

use crate::attack::attacks_variable;
use crate::fd::{
    entails, fds_of, sequential_proof_over, FunctionalDependency, SequentialProof,
};
use crate::model::{
    eval_bcq, Atom, Constant, Database, Fact, Mode, ModelError, Query, RelationSchema, Term,
};
use std::collections::BTreeSet;

/// One saturation step: the dependency, an attack-free proof for it, the
/// host atom whose variables cover `Z`, and the fresh atom added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturationStage {
    pub fd: FunctionalDependency,
    pub proof: SequentialProof,
    pub host: String,
    pub atom: Atom,
}

/// The saturated query along with the ordered stages that produced it.
/// Stage `i` was computed against `original` extended by stages `0..i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaturationResult {
    pub original: Query,
    pub query: Query,
    pub stages: Vec<SaturationStage>,
}

impl SaturationResult {
    /// The query as of the start of stage `i` (so `stage_query(0)` is the
    /// original and `stage_query(stages.len())` is the saturated query).
    pub fn stage_query(&self, i: usize) -> Query {
        let mut q = self.original.clone();
        for s in &self.stages[..i] {
            q = q.with_atom(s.atom.clone()).expect("fresh names cannot collide");
        }
        q
    }
}

/// All internal dependencies of `q` (entailed-by-consistent-atoms ones
/// included), each with an attack-free proof and a host atom. One entry per
/// distinct `(Z, w)`, in sorted order.
pub fn internal_fds(q: &Query) -> Vec<(FunctionalDependency, SequentialProof, String)> {
    // Precompute which atoms attack which variables.
    let vars: Vec<String> = q.vars().into_iter().collect();
    let attack_map: Vec<(String, BTreeSet<String>)> = q
        .atoms()
        .iter()
        .map(|a| {
            let attacked: BTreeSet<String> = vars
                .iter()
                .filter(|x| attacks_variable(a, x, q))
                .cloned()
                .collect();
            (a.name().to_string(), attacked)
        })
        .collect();

    let mut seen: BTreeSet<(Vec<String>, String)> = BTreeSet::new();
    let mut out = Vec::new();
    for host in q.atoms() {
        let host_vars: Vec<String> = host.vars().into_iter().collect();
        // All subsets of the host atom's variables, empty set included.
        for mask in 0..(1u32 << host_vars.len()) {
            let z: BTreeSet<String> = host_vars
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| v.clone())
                .collect();
            for w in &vars {
                if z.contains(w) {
                    continue;
                }
                let key = (z.iter().cloned().collect::<Vec<_>>(), w.clone());
                if seen.contains(&key) {
                    continue;
                }
                // Atoms allowed in an attack-free proof: those attacking no
                // variable of Z ∪ {w}.
                let allowed: Vec<&Atom> = q
                    .atoms()
                    .iter()
                    .filter(|a| {
                        let (_, attacked) = attack_map
                            .iter()
                            .find(|(n, _)| n == a.name())
                            .expect("atom present");
                        !attacked.contains(w) && attacked.is_disjoint(&z)
                    })
                    .collect();
                if let Some(proof) = sequential_proof_over(&allowed, &z, w) {
                    if proof.atoms.is_empty() {
                        continue; // trivial: w ∈ Z, filtered above anyway
                    }
                    seen.insert(key);
                    out.push((
                        FunctionalDependency::new(z.iter().cloned(), [w.clone()]),
                        proof,
                        host.name().to_string(),
                    ));
                }
            }
        }
    }
    out.sort_by(|a, b| (&a.0, &a.2).cmp(&(&b.0, &b.2)));
    out
}

/// Whether every internal dependency is entailed by the consistent atoms.
pub fn is_saturated(q: &Query) -> bool {
    let cfds = fds_of(q.catoms());
    internal_fds(q)
        .iter()
        .all(|(fd, _, _)| entails(&cfds, &fd.lhs, &fd.rhs))
}

fn next_fresh_index(q: &Query) -> usize {
    q.atoms()
        .iter()
        .filter_map(|a| a.name().strip_prefix("N__sat").and_then(|s| s.parse::<usize>().ok()))
        .max()
        .map_or(1, |n| n + 1)
}

/// Saturate the query: repeatedly add a fresh consistent atom for the
/// sorted-first internal dependency not yet entailed by consistent atoms.
pub fn saturate(q: &Query) -> SaturationResult {
    let original = q.clone();
    let mut query = q.clone();
    let mut stages = Vec::new();
    let mut index = next_fresh_index(q);
    loop {
        let cfds = fds_of(query.catoms());
        // Smallest left-hand side first: adding tight dependencies early
        // makes wider ones entailed, keeping the extension small.
        let mut candidates: Vec<_> = internal_fds(&query)
            .into_iter()
            .filter(|(fd, _, _)| !entails(&cfds, &fd.lhs, &fd.rhs))
            .collect();
        candidates.sort_by_key(|(fd, _, _)| (fd.lhs.len(), fd.lhs.clone(), fd.rhs.clone()));
        let Some((fd, proof, host)) = candidates.into_iter().next() else { break };
        let name = format!("N__sat{index}");
        index += 1;
        let key: Vec<Term> = if fd.lhs.is_empty() {
            vec![Term::Const(Constant::Int(0))]
        } else {
            fd.lhs.iter().map(|v| Term::var(v)).collect()
        };
        let w = fd.rhs.iter().next().expect("rhs is a single variable").clone();
        let schema = RelationSchema::new(&name, key.len() + 1, key.len(), Mode::C)
            .expect("key fits arity");
        let atom = Atom::new(schema, key, vec![Term::var(&w)]).expect("shape matches schema");
        query = query.with_atom(atom.clone()).expect("fresh name cannot collide");
        stages.push(SaturationStage { fd, proof, host, atom });
    }
    SaturationResult { original, query, stages }
}

/// Apply one stage's purification to a database over the stage's query:
/// remove every host-atom block touched by a pair of embeddings that agree
/// on `Z` but differ on `w`, then materialize the stage's consistent atom
/// from embeddings into the purified database.
pub fn purify_stage(
    stage_query: &Query,
    stage: &SaturationStage,
    db: &Database,
) -> Result<Database, ModelError> {
    let host = stage_query
        .atom(&stage.host)
        .ok_or_else(|| ModelError::UnknownRelation { relation: stage.host.clone() })?;
    let w = stage.fd.rhs.iter().next().expect("rhs is a single variable");
    let (_, embeddings) = eval_bcq(stage_query, db);
    let mut doomed = BTreeSet::new();
    for (i, b1) in embeddings.iter().enumerate() {
        for b2 in &embeddings[i + 1..] {
            let agree_z = stage.fd.lhs.iter().all(|z| b1.get(z) == b2.get(z));
            if agree_z && b1.get(w) != b2.get(w) {
                doomed.insert(b1.apply_atom(host).block_key());
                doomed.insert(b2.apply_atom(host).block_key());
            }
        }
    }
    let purified = db.without_blocks(&doomed);
    let (_, clean) = eval_bcq(stage_query, &purified);
    let n_facts: BTreeSet<Fact> = clean
        .iter()
        .map(|b| Fact {
            relation: stage.atom.name().to_string(),
            key: stage.atom.key.iter().map(|t| b.apply_term(t)).collect(),
            value: vec![b.apply_term(&Term::var(w))],
        })
        .collect();
    Ok(purified.union(&Database::new(n_facts)))
}

/// Replay every saturation stage over a database for the original query,
/// producing a database for the saturated query with the same certain
/// answer.
pub fn saturate_database(result: &SaturationResult, db: &Database) -> Result<Database, ModelError> {
    let mut current = db.clone();
    for (i, stage) in result.stages.iter().enumerate() {
        current = purify_stage(&result.stage_query(i), stage, &current)?;
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DEFAULT_REPAIR_CAP;
    use crate::text::{parse_database, parse_query};

    fn qsat() -> Query {
        parse_query("q :- S1(z | u), S2(u | w), R1(z | u2), R2(u2 | w), T1(u | v), T2(v | w).")
            .unwrap()
    }

    #[test]
    fn qsat_has_internal_z_to_w() {
        let q = qsat();
        let found = internal_fds(&q);
        let z_to_w = found.iter().find(|(fd, _, _)| {
            fd.lhs.iter().collect::<Vec<_>>() == ["z"] && fd.rhs.iter().collect::<Vec<_>>() == ["w"]
        });
        let (_, proof, _) = z_to_w.expect("z -> w must be internal");
        let names: Vec<&str> = proof.atoms.iter().map(|a| a.name()).collect();
        assert!(
            names == ["S1", "S2"] || names == ["R1", "R2"],
            "attack-free two-step chain expected, got {names:?}"
        );
        assert!(!is_saturated(&q));
    }

    #[test]
    fn qsat_saturation_adds_z_to_w() {
        let q = qsat();
        let result = saturate(&q);
        assert!(is_saturated(&result.query));
        let added: Vec<String> = result.stages.iter().map(|s| s.fd.to_string()).collect();
        assert!(
            added.iter().any(|s| s == "{z} -> {w}"),
            "stages must include z -> w, got {added:?}"
        );
        for stage in &result.stages {
            assert_eq!(stage.atom.schema.mode, Mode::C);
        }
        // Saturating again is a no-op.
        let again = saturate(&result.query);
        assert!(again.stages.is_empty());
        assert_eq!(again.query, result.query);
    }

    #[test]
    fn three_cycle_is_already_saturated() {
        let q = parse_query("q :- R(x | y), S(y | z), T(z | x).").unwrap();
        assert!(internal_fds(&q).is_empty());
        assert!(is_saturated(&q));
        let result = saturate(&q);
        assert!(result.stages.is_empty());
        assert_eq!(result.query, q);
    }

    #[test]
    fn q1_is_already_saturated() {
        let q = parse_query(
            "q :- R(x | y), S(y | z), U(y, z, w | x), T1(z | w), T2(z | w), Tc@c(z | w).",
        )
        .unwrap();
        assert!(is_saturated(&q));
    }

    #[test]
    fn purification_removes_conflicting_blocks() {
        // Two embeddings agree on z = 1 but differ on w. The z -> w stage is
        // hosted by R1 (sorted-first atom containing z), so the R1-block
        // with key 1 disappears and no N-fact survives for z = 1. The third
        // embedding with z = 2 is untouched.
        let q = qsat();
        let result = saturate(&q);
        let zw = result
            .stages
            .iter()
            .find(|s| s.fd.to_string() == "{z} -> {w}")
            .expect("z -> w stage exists");
        assert_eq!(zw.host, "R1");
        let db = parse_database(
            "S1(1 | u1)\nS2(u1 | wa)\nR1(1 | v1)\nR2(v1 | wa)\nT1(u1 | t)\nT2(t | wa)\n\
             S1(1 | u2)\nS2(u2 | wb)\nR1(1 | v2)\nR2(v2 | wb)\nT1(u2 | t2)\nT2(t2 | wb)\n\
             S1(2 | u3)\nS2(u3 | wc)\nR1(2 | v3)\nR2(v3 | wc)\nT1(u3 | t3)\nT2(t3 | wc)\n",
            &q,
        )
        .unwrap();
        let out = saturate_database(&result, &db).unwrap();
        assert!(out.relation("R1").all(|f| f.key[0] == Constant::Int(2)));
        // S1 keeps its key-1 block: only the host's blocks are removed.
        assert!(out.relation("S1").any(|f| f.key[0] == Constant::Int(1)));
        let n_facts: Vec<&Fact> = out.relation(zw.atom.name()).collect();
        assert_eq!(n_facts.len(), 1);
        assert_eq!(n_facts[0].key[0], Constant::Int(2));
        assert_eq!(n_facts[0].value[0], Constant::text("wc"));
    }

    #[test]
    fn saturation_preserves_certain_answer() {
        // Brute-force check on small databases: certain answer of q over db
        // equals certain answer of saturated q over the transformed db.
        let q = qsat();
        let result = saturate(&q);
        let dbs = [
            "S1(1 | u1)\nS2(u1 | wa)\nR1(1 | v1)\nR2(v1 | wa)\nT1(u1 | t)\nT2(t | wa)\n",
            "S1(1 | u1)\nS1(1 | u2)\nS2(u1 | wa)\nS2(u2 | wa)\nR1(1 | v1)\nR2(v1 | wa)\n\
             T1(u1 | t)\nT1(u2 | t)\nT2(t | wa)\n",
            "S1(1 | u1)\nS2(u1 | wa)\nS2(u1 | wb)\nR1(1 | v1)\nR2(v1 | wa)\nT1(u1 | t)\nT2(t | wa)\n",
        ];
        for src in dbs {
            let db = parse_database(src, &q).unwrap();
            let certain_before = db
                .enumerate_repairs(DEFAULT_REPAIR_CAP)
                .unwrap()
                .all(|r| eval_bcq(&q, &r).0);
            let db2 = saturate_database(&result, &db).unwrap();
            let certain_after = db2
                .enumerate_repairs(DEFAULT_REPAIR_CAP)
                .unwrap()
                .all(|r| eval_bcq(&result.query, &r).0);
            assert_eq!(certain_before, certain_after, "db:\n{src}");
        }
    }
}
