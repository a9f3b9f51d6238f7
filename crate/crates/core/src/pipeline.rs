//! Direct certain-answer evaluation.
//!
//! [`certain_answer_oracle`] enumerates every repair — exponential, but
//! unarguable. [`certain_answer_direct`] follows the same recursion the
//! Datalog compiler emits, working on the data directly: saturate and
//! purify, branch over the blocks of an unattacked inconsistent atom, or
//! collapse one key-join cycle via its maximal garbage set and
//! [`reduce_once`]. The two must always agree; the compiled program is the
//! third voice in that choir.

use std::collections::{BTreeMap, BTreeSet};

use crate::attack::{attack_graph, classify_complexity, Complexity};
use crate::codegen::default_reduction_spec;
use crate::garbage::maximal_garbage_set;
use crate::mgraph::{find_mcycle, MCycle};
use crate::model::{
    eval_bcq, match_fact, Atom, Constant, Database, Fact, ModelError, Query, Term, Valuation,
    DEFAULT_REPAIR_CAP,
};
use crate::saturate::{purify_stage, saturate};

/// Answers by brute force: true iff every repair satisfies the query.
pub fn certain_answer_oracle(q: &Query, db: &Database, cap: u64) -> Result<bool, ModelError> {
    let mut repairs = db.enumerate_repairs(cap)?;
    Ok(repairs.all(|r| eval_bcq(q, &r).0))
}

/// A replayable record of one direct evaluation.
#[derive(Debug, Clone)]
pub struct CertainAnswerTrace {
    pub answer: bool,
    /// One line per stage, in execution order.
    pub steps: Vec<String>,
    /// True when a strong attack cycle forced repair enumeration.
    pub oracle_fallback: bool,
}

impl std::fmt::Display for CertainAnswerTrace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for step in &self.steps {
            writeln!(f, "{step}")?;
        }
        write!(f, "answer: {}", self.answer)
    }
}

/// Evaluates the certain answer by the recursive strategy. Queries with a
/// strong attack cycle fall back to repair enumeration, flagged in the
/// trace.
pub fn certain_answer_direct(q: &Query, db: &Database) -> Result<CertainAnswerTrace, ModelError> {
    let mut steps = Vec::new();
    let mut oracle_fallback = false;
    let answer = evaluate_level(q, db, &mut steps, &mut oracle_fallback)?;
    Ok(CertainAnswerTrace { answer, steps, oracle_fallback })
}

fn evaluate_level(
    q: &Query,
    db: &Database,
    steps: &mut Vec<String>,
    oracle_fallback: &mut bool,
) -> Result<bool, ModelError> {
    if classify_complexity(q) == Complexity::CoNpComplete {
        *oracle_fallback = true;
        steps.push("fallback: strong attack cycle, enumerating repairs".to_string());
        return certain_answer_oracle(q, db, DEFAULT_REPAIR_CAP);
    }

    // Materialize internal dependencies, purging the blocks that break
    // them; the certain answer is unchanged.
    let sat = saturate(q);
    let mut db = db.clone();
    for (j, stage) in sat.stages.iter().enumerate() {
        db = purify_stage(&sat.stage_query(j), stage, &db)?;
        steps.push(format!(
            "saturation: materialized {} hosted by {}",
            stage.fd, stage.host
        ));
    }
    let q = sat.query;

    // Only consistent atoms left: the instance is its own single repair.
    if q.iatoms().next().is_none() {
        let answer = eval_bcq(&q, &db).0;
        steps.push(format!("base: matched consistent atoms -> {answer}"));
        return Ok(answer);
    }

    // An unattacked inconsistent atom can be resolved block by block: the
    // answer is true iff some block matches the atom in full and every one
    // of its facts leaves a certainly-true residual query.
    let graph = attack_graph(&q);
    let unattacked = graph.unattacked();
    let mut candidates: Vec<&Atom> = q
        .iatoms()
        .filter(|a| unattacked.contains(a.name()))
        .collect();
    candidates.sort_by_key(|a| {
        let all_const = a.key.iter().all(|t| matches!(t, Term::Const(_)));
        (!all_const, a.name().to_string())
    });
    if let Some(&target) = candidates.first() {
        let target = target.clone();
        steps.push(format!("grounding: branching over blocks of {}", target.name()));
        let blocks = db.blocks();
        for (bk, facts) in blocks.iter().filter(|(bk, _)| bk.relation == target.name()) {
            let mut all_ok = true;
            for fact in facts {
                let Some(theta) = match_fact(&target, fact, &Valuation::new()) else {
                    all_ok = false;
                    break;
                };
                let residual_ok = if q.atoms().len() == 1 {
                    true
                } else {
                    let residual = substitute(&q.without(target.name())?, &theta)?;
                    evaluate_level(&residual, &db, steps, oracle_fallback)?
                };
                if !residual_ok {
                    all_ok = false;
                    break;
                }
            }
            if all_ok {
                steps.push(format!("grounding: block {bk} certain"));
                return Ok(true);
            }
        }
        steps.push("grounding: no block certain".to_string());
        return Ok(false);
    }

    // Every inconsistent atom attacked, no strong cycle: a key-join cycle
    // exists. Scrub its garbage, collapse its components, recurse.
    let cycle = find_mcycle(&q)?.ok_or_else(|| ModelError::Precondition {
        reason: "all inconsistent atoms attacked but no key-join cycle found".to_string(),
    })?;
    let report = maximal_garbage_set(&q, &cycle, &db);
    steps.push(format!(
        "garbage: cycle {} deletes {} blocks",
        cycle.atoms().join(" -> "),
        report.garbage_blocks.len()
    ));
    let kept = report.remainder(&db);
    let (reduced, reduced_db) = reduce_once(&q, &cycle, &kept)?;
    assert!(
        !attack_graph(&reduced).has_strong_cycle(),
        "cycle collapse must preserve the absence of strong attack cycles"
    );
    assert!(
        reduced.iatoms().count() < q.iatoms().count(),
        "cycle collapse must strictly reduce the inconsistent atom count"
    );
    steps.push(format!(
        "reduction: collapsed {} into identifier relations",
        cycle.atoms().join(" -> ")
    ));
    evaluate_level(&reduced, &reduced_db, steps, oracle_fallback)
}

/// Collapses one key-join cycle at the data level. Expects the maximal
/// garbage set to be gone already. Each query match restricted to the
/// cycle's variables becomes a vertex; two vertices sharing the block of
/// any cycle position are connected; every connected component is named by
/// its least first-position key. Returns the rewritten query and the
/// database over the remaining relations plus the fresh identifier
/// relations.
pub fn reduce_once(
    q: &Query,
    cycle: &MCycle,
    db: &Database,
) -> Result<(Query, Database), ModelError> {
    let spec = default_reduction_spec(q, cycle)?;
    let parts: Vec<&Atom> = cycle
        .atoms()
        .iter()
        .map(|name| {
            q.atom(name).ok_or_else(|| ModelError::Precondition {
                reason: format!("cycle atom {name} is not part of the query"),
            })
        })
        .collect::<Result<_, _>>()?;

    // Vertices: match restrictions to the cycle's variables, deduplicated.
    let (_, matches) = eval_bcq(q, db);
    let mut rows: Vec<Vec<Constant>> = Vec::new();
    let mut keys_of: Vec<Vec<Constant>> = Vec::new();
    let mut seen_rows: BTreeMap<Vec<Constant>, usize> = BTreeMap::new();
    for theta in &matches {
        let row: Vec<Constant> =
            spec.t_atom.value.iter().map(|t| theta.apply_term(t)).collect();
        if seen_rows.contains_key(&row) {
            continue;
        }
        seen_rows.insert(row.clone(), rows.len());
        rows.push(row);
        keys_of.push(
            parts
                .iter()
                .map(|part| {
                    Constant::pack(part.key.iter().map(|t| theta.apply_term(t)).collect())
                })
                .collect(),
        );
    }

    // Union-find over shared position blocks.
    let mut parent: Vec<usize> = (0..rows.len()).collect();
    fn find(parent: &mut Vec<usize>, v: usize) -> usize {
        if parent[v] != v {
            let root = find(parent, parent[v]);
            parent[v] = root;
        }
        parent[v]
    }
    let mut by_block: BTreeMap<(usize, Constant), usize> = BTreeMap::new();
    for v in 0..rows.len() {
        for (i, key) in keys_of[v].iter().enumerate() {
            match by_block.get(&(i, key.clone())) {
                Some(&w) => {
                    let (rv, rw) = (find(&mut parent, v), find(&mut parent, w));
                    parent[rv.max(rw)] = rv.min(rw);
                }
                None => {
                    by_block.insert((i, key.clone()), v);
                }
            }
        }
    }

    // Component identifiers: the least first-position key in the component.
    let mut id_of_root: BTreeMap<usize, Constant> = BTreeMap::new();
    for v in 0..rows.len() {
        let root = find(&mut parent, v);
        let candidate = keys_of[v][0].clone();
        match id_of_root.get(&root) {
            Some(cur) if *cur <= candidate => {}
            _ => {
                id_of_root.insert(root, candidate);
            }
        }
    }

    let mut facts: BTreeSet<Fact> = BTreeSet::new();
    for v in 0..rows.len() {
        let root = find(&mut parent, v);
        let id = id_of_root[&root].clone();
        facts.insert(Fact {
            relation: spec.t_atom.name().to_string(),
            key: vec![id.clone()],
            value: rows[v].clone(),
        });
        for (i, n_atom) in spec.n_atoms.iter().enumerate() {
            let theta_row = &keys_of[v][i];
            let key_cols = match (parts[i].key.len(), theta_row) {
                (1, c) => vec![c.clone()],
                (_, Constant::Tuple(cols)) => cols.clone(),
                _ => unreachable!("packed key shape follows the key arity"),
            };
            facts.insert(Fact {
                relation: n_atom.name().to_string(),
                key: key_cols,
                value: vec![id.clone()],
            });
        }
    }

    let mut shared = db.clone();
    for relation in cycle.atoms() {
        shared = shared.without_relation(relation);
    }
    Ok((spec.reduced, shared.union(&Database::new(facts))))
}

fn substitute(q: &Query, theta: &Valuation) -> Result<Query, ModelError> {
    let subst = |terms: &[Term]| -> Vec<Term> {
        terms
            .iter()
            .map(|t| match t {
                Term::Var(v) => match theta.get(v) {
                    Some(c) => Term::Const(c.clone()),
                    None => t.clone(),
                },
                Term::Const(_) => t.clone(),
            })
            .collect()
    };
    let atoms = q
        .atoms()
        .iter()
        .map(|a| Atom::new(a.schema.clone(), subst(&a.key), subst(&a.value)))
        .collect::<Result<Vec<_>, _>>()?;
    Query::new(atoms)
}
