//! Functional dependencies at the query level.
//!
//! Every atom `F` of a query induces the dependency `key(F) -> vars(F)`.
//! Reasoning about which variables determine which is the basis for the
//! attack graph, for saturation, and for the join graph over consistent
//! atoms. Beyond plain closure we compute *sequential proofs*: orderings of
//! atoms that derive `Z -> w` step by step, each step keyed by previously
//! seen variables.

use crate::model::{Atom, Query};
use std::collections::BTreeSet;
use std::fmt;

/// A functional dependency between variable sets.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FunctionalDependency {
    pub lhs: BTreeSet<String>,
    pub rhs: BTreeSet<String>,
}

impl FunctionalDependency {
    pub fn new(
        lhs: impl IntoIterator<Item = String>,
        rhs: impl IntoIterator<Item = String>,
    ) -> Self {
        FunctionalDependency { lhs: lhs.into_iter().collect(), rhs: rhs.into_iter().collect() }
    }
}

impl fmt::Display for FunctionalDependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |s: &BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(",");
        write!(f, "{{{}}} -> {{{}}}", side(&self.lhs), side(&self.rhs))
    }
}

/// The dependency `key(F) -> vars(F)` of one atom.
pub fn fd_of(atom: &Atom) -> FunctionalDependency {
    FunctionalDependency { lhs: atom.key_vars(), rhs: atom.vars() }
}

/// The dependency set of a collection of atoms.
pub fn fds_of<'a>(atoms: impl IntoIterator<Item = &'a Atom>) -> Vec<FunctionalDependency> {
    atoms.into_iter().map(fd_of).collect()
}

/// Closure of a variable set under a dependency set.
pub fn fd_closure(start: &BTreeSet<String>, fds: &[FunctionalDependency]) -> BTreeSet<String> {
    let mut closed = start.clone();
    loop {
        let before = closed.len();
        for fd in fds {
            if fd.lhs.is_subset(&closed) {
                closed.extend(fd.rhs.iter().cloned());
            }
        }
        if closed.len() == before {
            return closed;
        }
    }
}

/// Whether the dependency set entails `lhs -> rhs`.
pub fn entails(fds: &[FunctionalDependency], lhs: &BTreeSet<String>, rhs: &BTreeSet<String>) -> bool {
    rhs.is_subset(&fd_closure(lhs, fds))
}

/// A witness that the query derives `Z -> w` one atom at a time: atoms
/// `F_1, ..., F_n` such that each `key(F_i)` is contained in `Z` plus the
/// variables of earlier atoms, and `w` occurs in some `F_i` (or in `Z`
/// itself, in which case the sequence is empty).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequentialProof {
    pub atoms: Vec<Atom>,
}

impl SequentialProof {
    /// All variables occurring in the proof's atoms.
    pub fn vars(&self) -> BTreeSet<String> {
        self.atoms.iter().flat_map(|a| a.vars()).collect()
    }
}

/// Find a sequential proof of `Z -> w` using the atoms of `q`, or None if no
/// proof exists. The proof is minimized: no atom can be dropped while the
/// remainder still derives `w` (a fixpoint of single-atom removals, pruned
/// from the back first so later redundant steps go before earlier ones).
pub fn sequential_proof(q: &Query, z: &BTreeSet<String>, w: &str) -> Option<SequentialProof> {
    let atoms: Vec<&Atom> = q.atoms().iter().collect();
    sequential_proof_over(&atoms, z, w)
}

/// As [`sequential_proof`], but over an explicit atom pool (used when the
/// proof must avoid particular atoms).
pub fn sequential_proof_over(
    pool: &[&Atom],
    z: &BTreeSet<String>,
    w: &str,
) -> Option<SequentialProof> {
    // Greedy forward pass in relation-name order: add any atom whose key is
    // covered, until w appears or nothing more can be added.
    let mut seq: Vec<&Atom> = Vec::new();
    let mut seen: BTreeSet<String> = z.clone();
    if seen.contains(w) {
        return Some(SequentialProof { atoms: Vec::new() });
    }
    let mut used: BTreeSet<&str> = BTreeSet::new();
    loop {
        if seen.contains(w) {
            break;
        }
        let next = pool.iter().find(|a| {
            !used.contains(a.name()) && a.key_vars().is_subset(&seen)
        });
        match next {
            Some(a) => {
                used.insert(a.name());
                seen.extend(a.vars());
                seq.push(a);
            }
            None => return None,
        }
    }
    // Backward prune to a minimal subsequence. Dropping an atom is allowed
    // when the remaining sequence is still a valid derivation of w.
    let valid = |seq: &[&Atom]| -> bool {
        let mut seen = z.clone();
        for a in seq {
            if !a.key_vars().is_subset(&seen) {
                return false;
            }
            seen.extend(a.vars());
        }
        seen.contains(w)
    };
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..seq.len()).rev() {
            let mut shorter = seq.clone();
            shorter.remove(i);
            if valid(&shorter) {
                seq = shorter;
                changed = true;
                break;
            }
        }
    }
    Some(SequentialProof { atoms: seq.into_iter().cloned().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_query;

    fn vars(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn closure_walks_chains() {
        let q = parse_query("q :- R(x | y), S(y | z), T(z | x).").unwrap();
        let fds = fds_of(q.atoms());
        assert_eq!(fd_closure(&vars(&["x"]), &fds), vars(&["x", "y", "z"]));
        assert!(entails(&fds, &vars(&["y"]), &vars(&["x"])));
        assert!(!entails(&fds, &vars(&["x"]), &vars(&["w"])));
    }

    #[test]
    fn closure_without_relevant_fds_is_identity() {
        let q = parse_query("q :- R(x | y), S(z | y).").unwrap();
        let fds = fds_of(q.atoms());
        assert_eq!(fd_closure(&vars(&["y"]), &fds), vars(&["y"]));
    }

    #[test]
    fn sequential_proof_empty_when_target_in_source() {
        let q = parse_query("q :- R(x | y).").unwrap();
        let p = sequential_proof(&q, &vars(&["x"]), "x").unwrap();
        assert!(p.atoms.is_empty());
    }

    #[test]
    fn sequential_proof_follows_chain() {
        let q = parse_query("q :- R(x | y), S(y | z), T(z | w).").unwrap();
        let p = sequential_proof(&q, &vars(&["x"]), "w").unwrap();
        let names: Vec<&str> = p.atoms.iter().map(|a| a.name()).collect();
        assert_eq!(names, vec!["R", "S", "T"]);
        assert!(sequential_proof(&q, &vars(&["z"]), "y").is_none());
    }

    #[test]
    fn sequential_proof_prunes_redundant_atoms() {
        // Both R and A cover y from x, but only S is needed after either;
        // the pruned proof must not contain both starters.
        let q = parse_query("q :- A(x | y), R(x | y), S(y | w).").unwrap();
        let p = sequential_proof(&q, &vars(&["x"]), "w").unwrap();
        assert_eq!(p.atoms.len(), 2);
        assert_eq!(p.atoms[1].name(), "S");
    }

    #[test]
    fn sequential_proof_on_two_atom_join() {
        // Derives z -> u2 -> w via R1, R2.
        let q =
            parse_query("q :- S1(z | u), S2(u | w), R1(z | u2), R2(u2 | w), T1(u | v), T2(v | w).")
                .unwrap();
        let p = sequential_proof(&q, &vars(&["z"]), "w").unwrap();
        // Greedy picks R1, R2 (alphabetically before S1/S2) and pruning keeps
        // exactly a two-step chain.
        assert_eq!(p.atoms.len(), 2);
        let names: BTreeSet<&str> = p.atoms.iter().map(|a| a.name()).collect();
        assert!(names == ["R1", "R2"].into_iter().collect::<BTreeSet<_>>()
            || names == ["S1", "S2"].into_iter().collect::<BTreeSet<_>>());
    }
}
