//! Intermediate representation, validation, text format, and semi-naive
//! evaluation of stratified Datalog with negation and min-aggregation.
//!
//! Programs are sequences of strata. Validation reports three structural
//! properties: stratified (negative dependencies only on strictly lower
//! strata, each derived predicate defined in exactly one stratum), linear
//! (at most one same-stratum positive literal per rule body), and symmetric
//! (every recursive rule's head/recursive-literal swap is also a rule).
//! Evaluation computes a per-stratum least fixpoint by semi-naive
//! iteration; rules whose head carries a `min(...)` group are evaluated
//! once, after the stratum's other rules have completed, keeping per group
//! the least value tuple under the chosen constant order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::model::{Constant, Database, ModelError};

/// A term in a rule: variable, constant, or a tuple of terms which grounds
/// to a packed value (a single component stays bare, two or more become a
/// tuple constant).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum DlTerm {
    Var(String),
    Const(Constant),
    Tuple(Vec<DlTerm>),
}

impl DlTerm {
    pub fn var(name: &str) -> DlTerm {
        DlTerm::Var(name.to_string())
    }

    pub fn int(n: i64) -> DlTerm {
        DlTerm::Const(Constant::Int(n))
    }

    /// Variables mentioned by this term, in order of first occurrence.
    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            DlTerm::Var(v) => {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
            DlTerm::Const(_) => {}
            DlTerm::Tuple(items) => {
                for item in items {
                    item.collect_vars(out);
                }
            }
        }
    }

    fn rename(&self, map: &BTreeMap<String, String>) -> DlTerm {
        match self {
            DlTerm::Var(v) => DlTerm::Var(map.get(v).cloned().unwrap_or_else(|| v.clone())),
            DlTerm::Const(c) => DlTerm::Const(c.clone()),
            DlTerm::Tuple(items) => DlTerm::Tuple(items.iter().map(|t| t.rename(map)).collect()),
        }
    }
}

impl fmt::Display for DlTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DlTerm::Var(v) => write!(f, "{v}"),
            DlTerm::Const(c) => write!(f, "{c}"),
            DlTerm::Tuple(items) => {
                write!(f, "(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{item}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A predicate application.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DlAtom {
    pub predicate: String,
    pub args: Vec<DlTerm>,
}

impl DlAtom {
    pub fn new(predicate: &str, args: Vec<DlTerm>) -> DlAtom {
        DlAtom { predicate: predicate.to_string(), args }
    }

    fn collect_vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        for arg in &self.args {
            arg.collect_vars(out);
        }
    }

    fn rename(&self, map: &BTreeMap<String, String>) -> DlAtom {
        DlAtom {
            predicate: self.predicate.clone(),
            args: self.args.iter().map(|t| t.rename(map)).collect(),
        }
    }
}

impl fmt::Display for DlAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.predicate)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{arg}")?;
        }
        write!(f, ")")
    }
}

/// A body literal: positive or negated atom, or a built-in (dis)equality.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Literal {
    Pos(DlAtom),
    Neg(DlAtom),
    Eq(DlTerm, DlTerm),
    Neq(DlTerm, DlTerm),
}

impl Literal {
    fn rename(&self, map: &BTreeMap<String, String>) -> Literal {
        match self {
            Literal::Pos(a) => Literal::Pos(a.rename(map)),
            Literal::Neg(a) => Literal::Neg(a.rename(map)),
            Literal::Eq(a, b) => Literal::Eq(a.rename(map), b.rename(map)),
            Literal::Neq(a, b) => Literal::Neq(a.rename(map), b.rename(map)),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "!{a}"),
            Literal::Eq(a, b) => write!(f, "{a} = {b}"),
            Literal::Neq(a, b) => write!(f, "{a} != {b}"),
        }
    }
}

/// A rule. When `min_split` is `Some(l)`, the head's arguments from
/// position `l` onward form a `min(...)` group: the rule groups derived
/// tuples by the first `l` positions and keeps, per group, the least value
/// of the remaining positions.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rule {
    pub head: DlAtom,
    pub min_split: Option<usize>,
    pub body: Vec<Literal>,
}

impl Rule {
    pub fn new(head: DlAtom, body: Vec<Literal>) -> Rule {
        Rule { head, min_split: None, body }
    }

    pub fn with_min(head: DlAtom, split: usize, body: Vec<Literal>) -> Rule {
        Rule { head, min_split: Some(split), body }
    }

    /// Renames variables to `_0, _1, ...` in order of first occurrence
    /// (head first, then body), for structural comparison.
    fn canonical(&self) -> Rule {
        let mut order: Vec<&str> = Vec::new();
        self.head.collect_vars(&mut order);
        for lit in &self.body {
            match lit {
                Literal::Pos(a) | Literal::Neg(a) => a.collect_vars(&mut order),
                Literal::Eq(a, b) | Literal::Neq(a, b) => {
                    a.collect_vars(&mut order);
                    b.collect_vars(&mut order);
                }
            }
        }
        let map: BTreeMap<String, String> = order
            .iter()
            .enumerate()
            .map(|(i, v)| (v.to_string(), format!("_{i}")))
            .collect();
        Rule {
            head: self.head.rename(&map),
            min_split: self.min_split,
            body: self.body.iter().map(|l| l.rename(&map)).collect(),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.min_split {
            None => write!(f, "{}", self.head)?,
            Some(split) => {
                write!(f, "{}(", self.head.predicate)?;
                for (i, arg) in self.head.args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    if i == split {
                        write!(f, "min(")?;
                    }
                    write!(f, "{arg}")?;
                }
                write!(f, "))")?;
            }
        }
        if !self.body.is_empty() {
            write!(f, " :- ")?;
            for (i, lit) in self.body.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{lit}")?;
            }
        }
        write!(f, ".")
    }
}

/// A stratified program: rule sets evaluated in order, with an optional
/// `key: value` manifest carried as leading comments of the text format.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Program {
    pub strata: Vec<Vec<Rule>>,
    pub manifest: Vec<(String, String)>,
}

impl Program {
    pub fn new(strata: Vec<Vec<Rule>>) -> Program {
        Program { strata, manifest: Vec::new() }
    }

    pub fn push_manifest(&mut self, key: &str, value: &str) {
        self.manifest.push((key.to_string(), value.to_string()));
    }

    pub fn manifest_value(&self, key: &str) -> Option<&str> {
        self.manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.strata.iter().flatten()
    }

    /// Stratum index of each derived predicate (predicates that appear in
    /// some head). Predicates defined in several strata map to their first
    /// one here; validation reports them.
    pub fn derived_strata(&self) -> BTreeMap<String, usize> {
        let mut map = BTreeMap::new();
        for (i, stratum) in self.strata.iter().enumerate() {
            for rule in stratum {
                map.entry(rule.head.predicate.clone()).or_insert(i);
            }
        }
        map
    }

    /// Predicates that are never derived: the program's input relations.
    pub fn edb_predicates(&self) -> BTreeSet<String> {
        let derived = self.derived_strata();
        let mut out = BTreeSet::new();
        for rule in self.rules() {
            for lit in &rule.body {
                if let Literal::Pos(a) | Literal::Neg(a) = lit {
                    if !derived.contains_key(&a.predicate) {
                        out.insert(a.predicate.clone());
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (key, value) in &self.manifest {
            writeln!(f, "# {key}: {value}")?;
        }
        for (i, stratum) in self.strata.iter().enumerate() {
            writeln!(f, "@stratum {i}")?;
            for rule in stratum {
                writeln!(f, "{rule}")?;
            }
        }
        Ok(())
    }
}

/// Outcome of structural validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub stratified: bool,
    pub linear: bool,
    pub symmetric: bool,
    pub errors: Vec<String>,
}

impl ValidationReport {
    /// True when the program has all three properties and no errors.
    pub fn clean(&self) -> bool {
        self.stratified && self.linear && self.symmetric && self.errors.is_empty()
    }
}

fn literal_vars(lit: &Literal) -> Vec<&str> {
    let mut out = Vec::new();
    match lit {
        Literal::Pos(a) | Literal::Neg(a) => a.collect_vars(&mut out),
        Literal::Eq(a, b) | Literal::Neq(a, b) => {
            a.collect_vars(&mut out);
            b.collect_vars(&mut out);
        }
    }
    out
}

/// Validates a program: declared stratification, range restriction, arity
/// consistency, min-rule placement, linearity, and symmetry. Symmetry
/// compares rules after canonical variable renaming, with body literal
/// order preserved (generated symmetric pairs keep their literal
/// positions).
pub fn validate(p: &Program) -> ValidationReport {
    let mut errors: Vec<String> = Vec::new();
    let mut stratified = true;

    // Each derived predicate defined in exactly one stratum.
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, stratum) in p.strata.iter().enumerate() {
        for rule in stratum {
            let pred = rule.head.predicate.as_str();
            if let Some(&j) = seen.get(pred) {
                if j != i {
                    stratified = false;
                    errors.push(format!("predicate {pred} is defined in strata {j} and {i}"));
                }
            } else {
                seen.insert(pred, i);
            }
        }
    }
    let derived = p.derived_strata();

    // Arity consistency across every occurrence.
    let mut arities: BTreeMap<String, usize> = BTreeMap::new();
    let mut check_arity = |atom: &DlAtom, errors: &mut Vec<String>| {
        match arities.get(&atom.predicate) {
            None => {
                arities.insert(atom.predicate.clone(), atom.args.len());
            }
            Some(&n) if n != atom.args.len() => {
                errors.push(format!(
                    "predicate {} used with arities {n} and {}",
                    atom.predicate,
                    atom.args.len()
                ));
            }
            Some(_) => {}
        }
    };

    let mut linear = true;
    for (i, stratum) in p.strata.iter().enumerate() {
        let min_defined: BTreeSet<&str> = stratum
            .iter()
            .filter(|r| r.min_split.is_some())
            .map(|r| r.head.predicate.as_str())
            .collect();
        for rule in stratum {
            check_arity(&rule.head, &mut errors);
            let mut positive_vars: BTreeSet<&str> = BTreeSet::new();
            for lit in &rule.body {
                if let Literal::Pos(a) = lit {
                    let mut vs = Vec::new();
                    a.collect_vars(&mut vs);
                    positive_vars.extend(vs);
                }
            }
            // Range restriction.
            let mut head_vars = Vec::new();
            rule.head.collect_vars(&mut head_vars);
            for v in head_vars {
                if !positive_vars.contains(v) {
                    errors.push(format!(
                        "rule for {}: head variable {v} not bound by a positive literal",
                        rule.head.predicate
                    ));
                }
            }
            for lit in &rule.body {
                let needs_check = !matches!(lit, Literal::Pos(_));
                if needs_check {
                    for v in literal_vars(lit) {
                        if !positive_vars.contains(v) {
                            errors.push(format!(
                                "rule for {}: variable {v} in {lit} not bound by a positive literal",
                                rule.head.predicate
                            ));
                        }
                    }
                }
            }
            // Dependency direction and linearity.
            let mut same_stratum_positives = 0usize;
            for lit in &rule.body {
                match lit {
                    Literal::Pos(a) => {
                        check_arity(a, &mut errors);
                        if let Some(&j) = derived.get(&a.predicate) {
                            if j > i {
                                stratified = false;
                                errors.push(format!(
                                    "rule for {} in stratum {i} reads {} from later stratum {j}",
                                    rule.head.predicate, a.predicate
                                ));
                            } else if j == i {
                                same_stratum_positives += 1;
                            }
                        }
                    }
                    Literal::Neg(a) => {
                        check_arity(a, &mut errors);
                        if let Some(&j) = derived.get(&a.predicate) {
                            if j >= i {
                                stratified = false;
                                errors.push(format!(
                                    "rule for {} in stratum {i} negates {} of stratum {j}",
                                    rule.head.predicate, a.predicate
                                ));
                            }
                        }
                    }
                    Literal::Eq(..) | Literal::Neq(..) => {}
                }
            }
            if same_stratum_positives > 1 {
                linear = false;
            }
            // Min-rule placement: a min rule runs once after its stratum's
            // fixpoint, so it must not feed itself or read another
            // same-stratum min head (that order would be unspecified).
            if let Some(split) = rule.min_split {
                if split >= rule.head.args.len() {
                    errors.push(format!(
                        "min rule for {}: empty min group",
                        rule.head.predicate
                    ));
                }
                for lit in &rule.body {
                    if let Literal::Pos(a) | Literal::Neg(a) = lit {
                        if a.predicate == rule.head.predicate {
                            errors.push(format!(
                                "min rule for {} is recursive",
                                rule.head.predicate
                            ));
                        } else if min_defined.contains(a.predicate.as_str()) {
                            errors.push(format!(
                                "min rule for {} reads same-stratum min head {}",
                                rule.head.predicate, a.predicate
                            ));
                        }
                    }
                }
            }
        }
        // A min-defined predicate must not also have ordinary rules.
        let plain_preds: BTreeSet<&str> = stratum
            .iter()
            .filter(|r| r.min_split.is_none())
            .map(|r| r.head.predicate.as_str())
            .collect();
        for pred in min_defined.intersection(&plain_preds) {
            errors.push(format!(
                "predicate {pred} mixes min rules with ordinary rules"
            ));
        }
    }

    // Symmetry: each recursive rule's head/recursive-literal swap present.
    let mut symmetric = linear;
    if linear {
        'outer: for (i, stratum) in p.strata.iter().enumerate() {
            let canon: BTreeSet<Rule> = stratum.iter().map(Rule::canonical).collect();
            for rule in stratum {
                if rule.min_split.is_some() {
                    continue;
                }
                let rec_pos = rule.body.iter().position(|lit| {
                    matches!(lit, Literal::Pos(a) if derived.get(&a.predicate) == Some(&i))
                });
                let Some(pos) = rec_pos else { continue };
                let Literal::Pos(rec_atom) = &rule.body[pos] else { unreachable!() };
                let mut swapped = rule.clone();
                swapped.head = rec_atom.clone();
                swapped.body[pos] = Literal::Pos(rule.head.clone());
                if !canon.contains(&swapped.canonical()) {
                    symmetric = false;
                    break 'outer;
                }
            }
        }
    }

    ValidationReport { stratified, linear, symmetric, errors }
}

/// Arranges rules into strata automatically. Mutually recursive predicates
/// (dependency-graph strong components) share a stratum; every dependency
/// across components gets its own boundary, so non-recursive reads never
/// count against a rule's linearity. Negative or min dependencies inside a
/// component make the rule set unstratifiable. Stratum numbers come out
/// gap-free.
pub fn stratify(rules: Vec<Rule>) -> Result<Program, ModelError> {
    let derived: BTreeSet<String> =
        rules.iter().map(|r| r.head.predicate.clone()).collect();
    let preds: Vec<&str> = derived.iter().map(|s| s.as_str()).collect();
    let index: BTreeMap<&str, usize> =
        preds.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    // Edge (from, to, strict): `to`'s rules read `from`.
    let mut edges: BTreeSet<(usize, usize, bool)> = BTreeSet::new();
    for rule in &rules {
        let to = index[rule.head.predicate.as_str()];
        for lit in &rule.body {
            let (atom, strict) = match lit {
                Literal::Pos(a) => (a, rule.min_split.is_some()),
                Literal::Neg(a) => (a, true),
                Literal::Eq(..) | Literal::Neq(..) => continue,
            };
            if let Some(&from) = index.get(atom.predicate.as_str()) {
                edges.insert((from, to, strict));
            }
        }
    }
    let succ: Vec<Vec<usize>> = {
        let mut s = vec![Vec::new(); preds.len()];
        for &(from, to, _) in &edges {
            if from != to {
                s[from].push(to);
            }
        }
        s
    };
    let components = crate::mgraph::tarjan(preds.len(), &succ);
    let mut component_of = vec![0usize; preds.len()];
    for (c, members) in components.iter().enumerate() {
        for &v in members {
            component_of[v] = c;
        }
    }
    for &(from, to, strict) in &edges {
        if component_of[from] == component_of[to] && strict {
            return Err(ModelError::Precondition {
                reason: format!(
                    "unstratifiable: {} and {} are mutually recursive through \
                     a negative or min dependency",
                    preds[from], preds[to]
                ),
            });
        }
    }
    // Longest path over the component graph; every cross-component
    // dependency advances the stratum.
    let mut level = vec![0usize; components.len()];
    loop {
        let mut changed = false;
        for &(from, to, _) in &edges {
            let (cf, ct) = (component_of[from], component_of[to]);
            if cf != ct && level[ct] < level[cf] + 1 {
                level[ct] = level[cf] + 1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut used: Vec<usize> = rules
        .iter()
        .map(|r| level[component_of[index[r.head.predicate.as_str()]]])
        .collect();
    let mut distinct: Vec<usize> = used.clone();
    distinct.sort_unstable();
    distinct.dedup();
    for l in &mut used {
        *l = distinct.binary_search(l).expect("level came from the same list");
    }
    let mut strata: Vec<Vec<Rule>> = vec![Vec::new(); distinct.len().max(1)];
    for (rule, stratum) in rules.into_iter().zip(used) {
        strata[stratum].push(rule);
    }
    Ok(Program::new(strata))
}

/// Constant order used by min groups. `Reversed` flips every comparison;
/// programs without min are unaffected by the choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstOrder {
    Natural,
    Reversed,
}

impl ConstOrder {
    fn less(&self, a: &[Constant], b: &[Constant]) -> bool {
        match self {
            ConstOrder::Natural => a < b,
            ConstOrder::Reversed => b < a,
        }
    }
}

/// A relation store: tuples per predicate.
pub type Store = BTreeMap<String, BTreeSet<Vec<Constant>>>;

/// Converts a database to a store: one tuple per fact, key columns first.
pub fn database_store(db: &Database) -> Store {
    let mut store = Store::new();
    for fact in db.facts() {
        let tuple: Vec<Constant> =
            fact.key.iter().chain(fact.value.iter()).cloned().collect();
        store.entry(fact.relation.clone()).or_default().insert(tuple);
    }
    store
}

/// Evaluates a stratified program over an input store. Each stratum runs
/// to its least fixpoint by semi-naive iteration; min rules run once after
/// that fixpoint. Rejects programs whose validation reports errors or a
/// stratification violation.
pub fn evaluate(p: &Program, edb: &Store, order: ConstOrder) -> Result<Store, ModelError> {
    let report = validate(p);
    if !report.stratified || !report.errors.is_empty() {
        return Err(ModelError::Precondition {
            reason: format!("program rejected: {}", report.errors.join("; ")),
        });
    }
    let derived = p.derived_strata();
    let mut store = edb.clone();
    for pred in derived.keys() {
        store.entry(pred.clone()).or_default();
    }
    for (i, stratum) in p.strata.iter().enumerate() {
        let plain: Vec<&Rule> = stratum.iter().filter(|r| r.min_split.is_none()).collect();
        let min_rules: Vec<&Rule> = stratum.iter().filter(|r| r.min_split.is_some()).collect();

        // Round 0: every rule against the full store.
        let mut delta = Store::new();
        for rule in &plain {
            for tuple in fire_rule(rule, &store, None) {
                if store.entry(rule.head.predicate.clone()).or_default().insert(tuple.clone()) {
                    delta.entry(rule.head.predicate.clone()).or_default().insert(tuple);
                }
            }
        }
        // Semi-naive rounds: one body position at a time reads the delta.
        while delta.values().any(|s| !s.is_empty()) {
            let mut next_delta = Store::new();
            for rule in &plain {
                let rec_positions: Vec<usize> = rule
                    .body
                    .iter()
                    .enumerate()
                    .filter(|(_, lit)| {
                        matches!(lit, Literal::Pos(a) if derived.get(&a.predicate) == Some(&i))
                    })
                    .map(|(j, _)| j)
                    .collect();
                for pos in rec_positions {
                    for tuple in fire_rule(rule, &store, Some((pos, &delta))) {
                        if store
                            .entry(rule.head.predicate.clone())
                            .or_default()
                            .insert(tuple.clone())
                        {
                            next_delta
                                .entry(rule.head.predicate.clone())
                                .or_default()
                                .insert(tuple);
                        }
                    }
                }
            }
            delta = next_delta;
        }
        // Min rules: group and keep the least value tuple.
        for rule in &min_rules {
            let split = rule.min_split.expect("filtered on min_split");
            let mut best: BTreeMap<Vec<Constant>, Vec<Constant>> = BTreeMap::new();
            for tuple in fire_rule(rule, &store, None) {
                let group = tuple[..split].to_vec();
                let value = tuple[split..].to_vec();
                match best.get(&group) {
                    Some(cur) if !order.less(&value, cur) => {}
                    _ => {
                        best.insert(group, value);
                    }
                }
            }
            let target = store.entry(rule.head.predicate.clone()).or_default();
            for (group, value) in best {
                let mut tuple = group;
                tuple.extend(value);
                target.insert(tuple);
            }
        }
    }
    Ok(store)
}

/// Naive fixpoint evaluation, used as a testing oracle for [`evaluate`].
pub fn evaluate_naive(p: &Program, edb: &Store, order: ConstOrder) -> Result<Store, ModelError> {
    let report = validate(p);
    if !report.stratified || !report.errors.is_empty() {
        return Err(ModelError::Precondition {
            reason: format!("program rejected: {}", report.errors.join("; ")),
        });
    }
    let mut store = edb.clone();
    for pred in p.derived_strata().keys() {
        store.entry(pred.clone()).or_default();
    }
    for stratum in &p.strata {
        loop {
            let mut grew = false;
            for rule in stratum.iter().filter(|r| r.min_split.is_none()) {
                for tuple in fire_rule(rule, &store, None) {
                    grew |= store
                        .entry(rule.head.predicate.clone())
                        .or_default()
                        .insert(tuple);
                }
            }
            if !grew {
                break;
            }
        }
        for rule in stratum.iter().filter(|r| r.min_split.is_some()) {
            let split = rule.min_split.expect("filtered on min_split");
            let mut best: BTreeMap<Vec<Constant>, Vec<Constant>> = BTreeMap::new();
            for tuple in fire_rule(rule, &store, None) {
                let group = tuple[..split].to_vec();
                let value = tuple[split..].to_vec();
                match best.get(&group) {
                    Some(cur) if !order.less(&value, cur) => {}
                    _ => {
                        best.insert(group, value);
                    }
                }
            }
            let target = store.entry(rule.head.predicate.clone()).or_default();
            for (group, value) in best {
                let mut tuple = group;
                tuple.extend(value);
                target.insert(tuple);
            }
        }
    }
    Ok(store)
}

type Binding = BTreeMap<String, Constant>;

/// All head tuples a rule derives against a store. When `delta_at` is
/// given, that body position matches only the delta store.
fn fire_rule(rule: &Rule, store: &Store, delta_at: Option<(usize, &Store)>) -> Vec<Vec<Constant>> {
    let positives: Vec<(usize, &DlAtom)> = rule
        .body
        .iter()
        .enumerate()
        .filter_map(|(j, lit)| match lit {
            Literal::Pos(a) => Some((j, a)),
            _ => None,
        })
        .collect();
    let mut bindings: Vec<Binding> = vec![Binding::new()];
    for (j, atom) in &positives {
        let source = match delta_at {
            Some((pos, delta)) if pos == *j => delta,
            _ => store,
        };
        let empty = BTreeSet::new();
        let tuples = source.get(&atom.predicate).unwrap_or(&empty);
        let mut next = Vec::new();
        for binding in &bindings {
            for tuple in tuples {
                if tuple.len() != atom.args.len() {
                    continue;
                }
                if let Some(extended) = match_atom(atom, tuple, binding) {
                    if satisfies_ground_constraints(rule, &extended, store) {
                        next.push(extended);
                    }
                }
            }
        }
        bindings = next;
        if bindings.is_empty() {
            return Vec::new();
        }
    }
    let mut out = Vec::new();
    'bindings: for binding in &bindings {
        for lit in &rule.body {
            match lit {
                Literal::Pos(_) => {}
                Literal::Neg(atom) => {
                    let tuple: Vec<Constant> =
                        atom.args.iter().map(|t| ground_term(t, binding)).collect();
                    if store.get(&atom.predicate).is_some_and(|s| s.contains(&tuple)) {
                        continue 'bindings;
                    }
                }
                Literal::Eq(a, b) => {
                    if ground_term(a, binding) != ground_term(b, binding) {
                        continue 'bindings;
                    }
                }
                Literal::Neq(a, b) => {
                    if ground_term(a, binding) == ground_term(b, binding) {
                        continue 'bindings;
                    }
                }
            }
        }
        out.push(rule.head.args.iter().map(|t| ground_term(t, binding)).collect());
    }
    out
}

/// Checks every negation and comparison literal whose variables are already
/// bound, so partial joins are pruned as early as possible. Literals with
/// unbound variables are skipped here and rechecked once the join completes;
/// negated predicates always live in earlier strata, so their stores are
/// final by the time this runs.
fn satisfies_ground_constraints(rule: &Rule, binding: &Binding, store: &Store) -> bool {
    for lit in &rule.body {
        match lit {
            Literal::Pos(_) => {}
            Literal::Neg(atom) => {
                let tuple: Option<Vec<Constant>> =
                    atom.args.iter().map(|t| try_ground_term(t, binding)).collect();
                if let Some(tuple) = tuple {
                    if store.get(&atom.predicate).is_some_and(|s| s.contains(&tuple)) {
                        return false;
                    }
                }
            }
            Literal::Eq(a, b) => {
                if let (Some(a), Some(b)) =
                    (try_ground_term(a, binding), try_ground_term(b, binding))
                {
                    if a != b {
                        return false;
                    }
                }
            }
            Literal::Neq(a, b) => {
                if let (Some(a), Some(b)) =
                    (try_ground_term(a, binding), try_ground_term(b, binding))
                {
                    if a == b {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn try_ground_term(term: &DlTerm, binding: &Binding) -> Option<Constant> {
    match term {
        DlTerm::Var(v) => binding.get(v).cloned(),
        DlTerm::Const(c) => Some(c.clone()),
        DlTerm::Tuple(items) => {
            let values: Option<Vec<Constant>> =
                items.iter().map(|t| try_ground_term(t, binding)).collect();
            values.map(Constant::pack)
        }
    }
}

fn match_atom(atom: &DlAtom, tuple: &[Constant], binding: &Binding) -> Option<Binding> {
    let mut extended = binding.clone();
    for (term, value) in atom.args.iter().zip(tuple) {
        if !match_term(term, value, &mut extended) {
            return None;
        }
    }
    Some(extended)
}

fn match_term(term: &DlTerm, value: &Constant, binding: &mut Binding) -> bool {
    match term {
        DlTerm::Var(v) => match binding.get(v) {
            Some(bound) => bound == value,
            None => {
                binding.insert(v.clone(), value.clone());
                true
            }
        },
        DlTerm::Const(c) => c == value,
        DlTerm::Tuple(items) if items.len() == 1 => match_term(&items[0], value, binding),
        DlTerm::Tuple(items) => match value {
            Constant::Tuple(values) if values.len() == items.len() => items
                .iter()
                .zip(values)
                .all(|(t, v)| match_term(t, v, binding)),
            _ => false,
        },
    }
}

fn ground_term(term: &DlTerm, binding: &Binding) -> Constant {
    match term {
        DlTerm::Var(v) => binding
            .get(v)
            .unwrap_or_else(|| panic!("unbound variable {v}; program not range-restricted"))
            .clone(),
        DlTerm::Const(c) => c.clone(),
        DlTerm::Tuple(items) => {
            Constant::pack(items.iter().map(|t| ground_term(t, binding)).collect())
        }
    }
}

// ---------------------------------------------------------------------
// Text format
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Implies,
    Bang,
    Eq,
    Neq,
    Stratum,
}

struct Lexer<'a> {
    src: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer { src, chars: src.char_indices().peekable(), line: 1, col: 1 }
    }

    fn error(&self, msg: &str) -> ModelError {
        ModelError::Parse { line: self.line, col: self.col, msg: msg.to_string() }
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn tokens(&mut self) -> Result<Vec<(Token, usize, usize)>, ModelError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c == '#' {
                    while let Some(c) = self.bump() {
                        if c == '\n' {
                            break;
                        }
                    }
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else { break };
            let token = match c {
                '(' => {
                    self.bump();
                    Token::LParen
                }
                ')' => {
                    self.bump();
                    Token::RParen
                }
                ',' => {
                    self.bump();
                    Token::Comma
                }
                '.' => {
                    self.bump();
                    Token::Dot
                }
                '@' => {
                    self.bump();
                    let word = self.ident_tail();
                    if word != "stratum" {
                        return Err(self.error(&format!("unknown directive @{word}")));
                    }
                    Token::Stratum
                }
                '!' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        Token::Neq
                    } else {
                        Token::Bang
                    }
                }
                '=' => {
                    self.bump();
                    Token::Eq
                }
                ':' => {
                    self.bump();
                    if self.peek() == Some('-') {
                        self.bump();
                        Token::Implies
                    } else {
                        return Err(self.error("expected :- "));
                    }
                }
                '"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None => return Err(self.error("unterminated string")),
                            Some('"') => break,
                            Some('\\') => match self.bump() {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                _ => return Err(self.error("bad escape")),
                            },
                            Some(c) => s.push(c),
                        }
                    }
                    Token::Str(s)
                }
                '-' => {
                    self.bump();
                    let digits = self.digit_tail();
                    if digits.is_empty() {
                        return Err(self.error("expected digits after -"));
                    }
                    Token::Int(-digits.parse::<i64>().map_err(|_| self.error("bad integer"))?)
                }
                c if c.is_ascii_digit() => {
                    let digits = self.digit_tail();
                    Token::Int(digits.parse::<i64>().map_err(|_| self.error("bad integer"))?)
                }
                c if c.is_alphabetic() || c == '_' => Token::Ident(self.ident_tail()),
                other => return Err(self.error(&format!("unexpected character {other:?}"))),
            };
            out.push((token, line, col));
        }
        Ok(out)
    }

    fn ident_tail(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn digit_tail(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }
}

struct Parser {
    tokens: Vec<(Token, usize, usize)>,
    pos: usize,
}

impl Parser {
    fn error_at(&self, msg: &str) -> ModelError {
        let (line, col) = self
            .tokens
            .get(self.pos)
            .map(|&(_, l, c)| (l, c))
            .or_else(|| self.tokens.last().map(|&(_, l, c)| (l, c)))
            .unwrap_or((1, 1));
        ModelError::Parse { line, col, msg: msg.to_string() }
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _, _)| t)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, token: &Token, what: &str) -> Result<(), ModelError> {
        match self.peek() {
            Some(t) if t == token => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_at(&format!("expected {what}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ModelError> {
        match self.next() {
            Some(Token::Ident(s)) => Ok(s),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error_at(&format!("expected {what}")))
            }
        }
    }

    fn program(&mut self) -> Result<Vec<Vec<Rule>>, ModelError> {
        let mut strata: Vec<Vec<Rule>> = Vec::new();
        while let Some(token) = self.peek() {
            match token {
                Token::Stratum => {
                    self.pos += 1;
                    let n = match self.next() {
                        Some(Token::Int(n)) if n >= 0 => n as usize,
                        _ => return Err(self.error_at("expected stratum number")),
                    };
                    if n != strata.len() {
                        return Err(self.error_at(&format!(
                            "stratum {n} out of order; expected {}",
                            strata.len()
                        )));
                    }
                    strata.push(Vec::new());
                }
                _ => {
                    if strata.is_empty() {
                        strata.push(Vec::new());
                    }
                    let rule = self.rule()?;
                    strata.last_mut().expect("pushed above").push(rule);
                }
            }
        }
        Ok(strata)
    }

    fn rule(&mut self) -> Result<Rule, ModelError> {
        let (head, min_split) = self.head_atom()?;
        let mut body = Vec::new();
        if self.peek() == Some(&Token::Implies) {
            self.pos += 1;
            loop {
                body.push(self.literal()?);
                match self.peek() {
                    Some(Token::Comma) => {
                        self.pos += 1;
                    }
                    _ => break,
                }
            }
        }
        self.expect(&Token::Dot, "'.' at end of rule")?;
        Ok(Rule { head, min_split, body })
    }

    fn head_atom(&mut self) -> Result<(DlAtom, Option<usize>), ModelError> {
        let predicate = self.ident("predicate name")?;
        self.expect(&Token::LParen, "'('")?;
        let mut args = Vec::new();
        let mut min_split = None;
        if self.peek() != Some(&Token::RParen) {
            loop {
                if let Some(Token::Ident(name)) = self.peek() {
                    if name == "min" && self.tokens.get(self.pos + 1).map(|(t, _, _)| t)
                        == Some(&Token::LParen)
                    {
                        if min_split.is_some() {
                            return Err(self.error_at("second min group in head"));
                        }
                        min_split = Some(args.len());
                        self.pos += 2;
                        loop {
                            args.push(self.term()?);
                            match self.peek() {
                                Some(Token::Comma) => {
                                    self.pos += 1;
                                }
                                _ => break,
                            }
                        }
                        self.expect(&Token::RParen, "')' closing min group")?;
                        break; // min group must be the final arguments
                    }
                }
                args.push(self.term()?);
                match self.peek() {
                    Some(Token::Comma) => {
                        self.pos += 1;
                    }
                    _ => break,
                }
            }
        }
        self.expect(&Token::RParen, "')'")?;
        Ok((DlAtom { predicate, args }, min_split))
    }

    fn atom(&mut self) -> Result<DlAtom, ModelError> {
        let predicate = self.ident("predicate name")?;
        self.expect(&Token::LParen, "'('")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Token::RParen) {
            loop {
                args.push(self.term()?);
                match self.peek() {
                    Some(Token::Comma) => {
                        self.pos += 1;
                    }
                    _ => break,
                }
            }
        }
        self.expect(&Token::RParen, "')'")?;
        Ok(DlAtom { predicate, args })
    }

    fn literal(&mut self) -> Result<Literal, ModelError> {
        match self.peek() {
            Some(Token::Bang) => {
                self.pos += 1;
                Ok(Literal::Neg(self.atom()?))
            }
            Some(Token::Ident(_))
                if self.tokens.get(self.pos + 1).map(|(t, _, _)| t) == Some(&Token::LParen) =>
            {
                Ok(Literal::Pos(self.atom()?))
            }
            _ => {
                let lhs = self.term()?;
                match self.next() {
                    Some(Token::Eq) => Ok(Literal::Eq(lhs, self.term()?)),
                    Some(Token::Neq) => Ok(Literal::Neq(lhs, self.term()?)),
                    _ => {
                        self.pos = self.pos.saturating_sub(1);
                        Err(self.error_at("expected = or != after term"))
                    }
                }
            }
        }
    }

    fn term(&mut self) -> Result<DlTerm, ModelError> {
        match self.next() {
            Some(Token::Ident(name)) => Ok(DlTerm::Var(name)),
            Some(Token::Int(n)) => Ok(DlTerm::Const(Constant::Int(n))),
            Some(Token::Str(s)) => Ok(DlTerm::Const(Constant::Text(s))),
            Some(Token::LParen) => {
                let mut items = Vec::new();
                loop {
                    items.push(self.term()?);
                    match self.peek() {
                        Some(Token::Comma) => {
                            self.pos += 1;
                        }
                        _ => break,
                    }
                }
                self.expect(&Token::RParen, "')' closing tuple")?;
                Ok(DlTerm::Tuple(items))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                Err(self.error_at("expected term"))
            }
        }
    }
}

/// Parses the text format: optional leading `# key: value` manifest lines,
/// then `@stratum N` sections of rules.
pub fn parse_program(src: &str) -> Result<Program, ModelError> {
    // Capture manifest lines: leading comments of the form `# key: value`.
    let mut manifest = Vec::new();
    for line in src.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some(comment) = trimmed.strip_prefix('#') else { break };
        if let Some((key, value)) = comment.split_once(':') {
            manifest.push((key.trim().to_string(), value.trim().to_string()));
        }
    }
    let tokens = Lexer::new(src).tokens()?;
    let mut parser = Parser { tokens, pos: 0 };
    let strata = parser.program()?;
    Ok(Program { strata, manifest })
}

/// Prints the text format; `parse_program` reads it back structurally
/// unchanged.
pub fn print_program(p: &Program) -> String {
    p.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> Constant {
        Constant::text(s)
    }

    fn store_of(pairs: &[(&str, &[&[i64]])]) -> Store {
        let mut s = Store::new();
        for (pred, tuples) in pairs {
            let set: BTreeSet<Vec<Constant>> = tuples
                .iter()
                .map(|t| t.iter().map(|&n| Constant::Int(n)).collect())
                .collect();
            s.insert(pred.to_string(), set);
        }
        s
    }

    #[test]
    fn round_trip_covers_the_whole_grammar() {
        let src = "\
# goal: Ans\n\
# stage: demo\n\
@stratum 0\n\
Edge(x, y) :- In(x, y), x != y.\n\
Path(x, y) :- Edge(x, y).\n\
Path(x, y) :- Path(x, z), Edge(z, y).\n\
Path(x, y) :- Edge(x, z), Path(z, y).\n\
@stratum 1\n\
Best(x, min(y)) :- Path(x, y).\n\
@stratum 2\n\
Pair(x, (y, z)) :- Path(x, y), Path(x, z), y = y.\n\
Ans() :- Pair(x, w), !Best(x, x), w != (x, x).\n\
Seed(0, \"a\").\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.manifest_value("goal"), Some("Ans"));
        assert_eq!(p.strata.len(), 3);
        let printed = print_program(&p);
        let again = parse_program(&printed).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn parse_reports_positions() {
        let err = parse_program("P(x :- Q(x).").unwrap_err();
        assert!(matches!(err, ModelError::Parse { .. }));
        let err = parse_program("@stratum 1\nP(x).").unwrap_err();
        let ModelError::Parse { msg, .. } = err else { panic!("expected parse error") };
        assert!(msg.contains("out of order"));
    }

    #[test]
    fn negation_parses_into_a_negative_literal() {
        let p = parse_program("Ans(x) :- R(x, y), !S(y).").unwrap();
        let rule = &p.strata[0][0];
        assert_eq!(rule.body.len(), 2);
        assert!(matches!(rule.body[1], Literal::Neg(_)));
    }

    #[test]
    fn symmetric_pair_is_recognized() {
        let p = parse_program(
            "Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Link(z, y).\n\
             Trans(x, z) :- Trans(x, y), Link(z, y).\n",
        )
        .unwrap();
        // The second and third rules are each other's head/recursive-literal
        // swap (the third is the second with head and Trans literal
        // exchanged, written with its own variable names).
        let report = validate(&p);
        assert!(report.stratified);
        assert!(report.linear);
        assert!(report.symmetric, "swap pair should be symmetric");
        assert!(report.errors.is_empty());
    }

    #[test]
    fn transitive_closure_alone_is_not_symmetric() {
        let p = parse_program(
            "Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Link(z, y).\n",
        )
        .unwrap();
        let report = validate(&p);
        assert!(report.stratified && report.linear);
        assert!(!report.symmetric);
    }

    #[test]
    fn two_recursive_literals_break_linearity() {
        let p = parse_program(
            "Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Trans(z, y).\n",
        )
        .unwrap();
        let report = validate(&p);
        assert!(report.stratified);
        assert!(!report.linear);
        assert!(!report.symmetric);
    }

    #[test]
    fn same_stratum_negation_is_rejected() {
        let p = parse_program("P(x) :- R(x), !Q(x).\nQ(x) :- R(x), !P(x).").unwrap();
        let report = validate(&p);
        assert!(!report.stratified);
        assert!(!report.errors.is_empty());
        assert!(evaluate(&p, &Store::new(), ConstOrder::Natural).is_err());
    }

    #[test]
    fn range_restriction_violations_are_reported() {
        let p = parse_program("P(x, y) :- R(x).").unwrap();
        let report = validate(&p);
        assert!(report.errors.iter().any(|e| e.contains("head variable y")));
        let p = parse_program("P(x) :- R(x), !S(y).").unwrap();
        assert!(!validate(&p).errors.is_empty());
        let p = parse_program("P(x) :- R(x), x != z.").unwrap();
        assert!(!validate(&p).errors.is_empty());
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let p = parse_program("P(x) :- R(x, y).\nQ(x) :- R(x).").unwrap();
        assert!(validate(&p).errors.iter().any(|e| e.contains("arities")));
    }

    #[test]
    fn recursive_min_rule_is_rejected() {
        let p = parse_program("Best(x, min(y)) :- Best(x, y).").unwrap();
        assert!(!validate(&p).errors.is_empty());
    }

    #[test]
    fn min_keeps_the_least_value_per_group() {
        let p = parse_program("@stratum 0\nIdentifiedBy(x, min(y)) :- Trans(x, y).").unwrap();
        let mut edb = Store::new();
        let pairs = [("a", "a"), ("a", "b"), ("b", "a"), ("b", "b")];
        edb.insert(
            "Trans".to_string(),
            pairs.iter().map(|(x, y)| vec![text(x), text(y)]).collect(),
        );
        let out = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        let expected: BTreeSet<Vec<Constant>> =
            [vec![text("a"), text("a")], vec![text("b"), text("a")]].into_iter().collect();
        assert_eq!(out["IdentifiedBy"], expected);
        let out = evaluate(&p, &edb, ConstOrder::Reversed).unwrap();
        let expected: BTreeSet<Vec<Constant>> =
            [vec![text("a"), text("b")], vec![text("b"), text("b")]].into_iter().collect();
        assert_eq!(out["IdentifiedBy"], expected);
    }

    #[test]
    fn closure_is_computed_and_matches_naive() {
        let p = parse_program(
            "Path(x, y) :- Edge(x, y).\n\
             Path(x, y) :- Path(x, z), Edge(z, y).\n\
             Path(x, z) :- Path(x, y), Edge(z, y).\n",
        )
        .unwrap();
        // A chain 1 -> 2 -> 3 -> 4 plus a back edge 4 -> 1.
        let edb = store_of(&[("Edge", &[&[1, 2], &[2, 3], &[3, 4], &[4, 1]])]);
        let semi = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        let naive = evaluate_naive(&p, &edb, ConstOrder::Natural).unwrap();
        assert_eq!(semi, naive);
        assert_eq!(semi["Path"].len(), 16);
    }

    #[test]
    fn negation_reads_the_completed_lower_stratum() {
        let p = parse_program(
            "@stratum 0\n\
             Reach(x) :- Start(x).\n\
             Reach(y) :- Reach(x), Edge(x, y).\n\
             @stratum 1\n\
             Unreached(x) :- Node(x), !Reach(x).\n",
        )
        .unwrap();
        let mut edb = store_of(&[
            ("Edge", &[&[1, 2], &[3, 4]]),
            ("Start", &[&[1]]),
            ("Node", &[&[1], &[2], &[3], &[4]]),
        ]);
        let out = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        assert_eq!(out["Unreached"], store_of(&[("U", &[&[3], &[4]])])["U"]);
        // Adding an EDB fact grows the first stratum monotonically and
        // shrinks nothing it already derived.
        let before = out["Reach"].clone();
        edb.get_mut("Edge").unwrap().insert(vec![Constant::Int(2), Constant::Int(3)]);
        let out = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        assert!(out["Reach"].is_superset(&before));
        assert!(out["Reach"].len() > before.len());
        assert_eq!(out["Unreached"], store_of(&[("U", &[] as &[&[i64]])])["U"]);
    }

    #[test]
    fn empty_edb_gives_empty_idb() {
        let p = parse_program("P(x) :- R(x).\nQ(x) :- P(x).").unwrap();
        let out = evaluate(&p, &Store::new(), ConstOrder::Natural).unwrap();
        assert!(out.get("P").map_or(true, |s| s.is_empty()));
        assert!(out.get("Q").map_or(true, |s| s.is_empty()));
    }

    #[test]
    fn ground_rules_fire_once() {
        let p = parse_program("Seed(1, \"a\").\nCopy(x, y) :- Seed(x, y).").unwrap();
        let out = evaluate(&p, &Store::new(), ConstOrder::Natural).unwrap();
        assert_eq!(out["Copy"].len(), 1);
        assert!(out["Copy"].contains(&vec![Constant::Int(1), text("a")]));
    }

    #[test]
    fn tuple_terms_pack_and_unpack() {
        let p = parse_program(
            "Packed((x, y)) :- In(x, y).\n\
             Out(x, y) :- Packed((x, y)).\n",
        )
        .unwrap();
        let edb = store_of(&[("In", &[&[1, 2], &[3, 4]])]);
        let out = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        assert_eq!(out["Out"], edb["In"]);
        assert!(out["Packed"]
            .contains(&vec![Constant::Tuple(vec![Constant::Int(1), Constant::Int(2)])]));
    }

    #[test]
    fn order_choice_only_affects_min() {
        let p = parse_program(
            "Path(x, y) :- Edge(x, y).\n\
             Path(x, y) :- Path(x, z), Edge(z, y).\n\
             Path(x, z) :- Path(x, y), Edge(z, y).\n\
             @stratum 1\n\
             Blocked(x) :- Node(x), !Path(x, x).\n",
        )
        .unwrap();
        let edb = store_of(&[
            ("Edge", &[&[1, 2], &[2, 1], &[2, 3]]),
            ("Node", &[&[1], &[2], &[3]]),
        ]);
        let natural = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        let reversed = evaluate(&p, &edb, ConstOrder::Reversed).unwrap();
        assert_eq!(natural, reversed);
    }

    #[test]
    fn zero_ary_goal_predicates_work() {
        let p = parse_program(
            "@stratum 0\nHit() :- R(x).\n@stratum 1\nMiss() :- !Hit().",
        )
        .unwrap();
        let out = evaluate(&p, &store_of(&[("R", &[&[7]])]), ConstOrder::Natural).unwrap();
        assert_eq!(out["Hit"].len(), 1);
        assert!(out.get("Miss").map_or(true, |s| s.is_empty()));
        let out = evaluate(&p, &Store::new(), ConstOrder::Natural).unwrap();
        assert!(out.get("Hit").map_or(true, |s| s.is_empty()));
        assert_eq!(out["Miss"].len(), 1);
    }

    #[test]
    fn database_store_concatenates_key_and_value() {
        use crate::text::{parse_database, parse_query};
        let q = parse_query("q :- R(x | y, z).").unwrap();
        let db = parse_database("R(a | 1, b).", &q).unwrap();
        let store = database_store(&db);
        assert_eq!(
            store["R"],
            [vec![text("a"), Constant::Int(1), text("b")]].into_iter().collect()
        );
    }

    #[test]
    fn min_rule_may_read_plain_heads_of_its_own_stratum() {
        // The min rule runs once after the stratum's fixpoint, so it sees
        // the completed Trans relation even in a single-stratum program.
        let p = parse_program(
            "Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Link(z, y).\n\
             Trans(x, z) :- Trans(x, y), Link(z, y).\n\
             Best(x, min(y)) :- Trans(x, y).\n",
        )
        .unwrap();
        let report = validate(&p);
        assert!(report.stratified, "errors: {:?}", report.errors);
        assert!(report.errors.is_empty(), "errors: {:?}", report.errors);
        let edb = store_of(&[("Link", &[&[1, 2], &[2, 3]])]);
        let out = evaluate(&p, &edb, ConstOrder::Natural).unwrap();
        assert_eq!(
            out["Trans"],
            store_of(&[("T", &[&[1, 1], &[1, 2], &[1, 3], &[2, 1], &[2, 2], &[2, 3]])])["T"]
        );
        assert_eq!(out["Best"], store_of(&[("B", &[&[1, 1], &[2, 1]])])["B"]);
    }

    #[test]
    fn min_rule_reading_another_min_head_in_stratum_is_rejected() {
        let p = parse_program(
            "A(x, min(y)) :- In(x, y).\n\
             B(x, min(y)) :- A(x, y).\n",
        )
        .unwrap();
        assert!(validate(&p).errors.iter().any(|e| e.contains("min head")));
    }

    #[test]
    fn validation_passes_on_a_min_pipeline_shape() {
        let p = parse_program(
            "@stratum 0\n\
             Link(x, y) :- Keep(x, y).\n\
             @stratum 1\n\
             Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Link(z, y).\n\
             Trans(x, z) :- Trans(x, y), Link(z, y).\n\
             @stratum 2\n\
             IdentifiedBy(x, min(y)) :- Trans(x, y).\n",
        )
        .unwrap();
        let report = validate(&p);
        assert!(report.clean(), "errors: {:?}", report.errors);
    }

    #[test]
    fn stratify_layers_every_cross_component_dependency() {
        // Flat rule list; stratify must discover the layering on its own.
        let flat = parse_program(
            "Good(x) :- Edge(x, y).\n\
             Del(x) :- Edge(x, y), !Good(x).\n\
             Del(x) :- Edge(x, y), Del(y).\n\
             Del(y) :- Edge(x, y), Del(x).\n\
             Keep(x) :- Node(x), !Del(x).\n",
        )
        .unwrap();
        let p = stratify(flat.rules().cloned().collect()).unwrap();
        let strata = p.derived_strata();
        assert_eq!(strata["Good"], 0);
        assert_eq!(strata["Del"], 1);
        assert_eq!(strata["Keep"], 2);
        assert!(validate(&p).clean());
    }

    #[test]
    fn stratify_keeps_mutual_recursion_together_and_numbers_gap_free() {
        let flat = parse_program(
            "A(x) :- Base(x).\n\
             A(x) :- Edge(x, y), B(y).\n\
             B(y) :- Edge(x, y), A(x).\n\
             Far(x) :- A(x), Seed(x).\n",
        )
        .unwrap();
        let p = stratify(flat.rules().cloned().collect()).unwrap();
        let strata = p.derived_strata();
        assert_eq!(strata["A"], strata["B"]);
        assert_eq!(strata["Far"], strata["A"] + 1);
        assert_eq!(p.strata.len(), 2);
    }

    #[test]
    fn stratify_rejects_negation_inside_a_recursive_component() {
        let flat = parse_program(
            "Win(x) :- Move(x, y), !Win(y).\n",
        )
        .unwrap();
        let err = stratify(flat.rules().cloned().collect()).unwrap_err();
        assert!(err.to_string().contains("unstratifiable"), "{err}");
    }

    #[test]
    fn stratify_separates_min_from_its_source() {
        let mut rules: Vec<Rule> = parse_program(
            "Trans(x, y) :- Link(x, y).\n\
             Trans(x, y) :- Trans(x, z), Link(z, y).\n\
             Trans(x, z) :- Trans(x, y), Link(z, y).\n",
        )
        .unwrap()
        .rules()
        .cloned()
        .collect();
        rules.push(Rule::with_min(
            DlAtom::new("Best", vec![DlTerm::var("x"), DlTerm::var("y")]),
            1,
            vec![Literal::Pos(DlAtom::new(
                "Trans",
                vec![DlTerm::var("x"), DlTerm::var("y")],
            ))],
        ));
        let p = stratify(rules).unwrap();
        let strata = p.derived_strata();
        assert_eq!(strata["Trans"], 0);
        assert_eq!(strata["Best"], 1);
        assert!(validate(&p).clean());
    }
}
