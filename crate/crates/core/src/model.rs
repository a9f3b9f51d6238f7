//! Domain model: constants, terms, relation schemas, atoms, queries, facts,
//! databases, blocks, repair enumeration, and Boolean conjunctive query
//! evaluation.
//!
//! A relation schema `[n, k]` has arity `n` and primary key positions
//! `1..=k`. A relation is either known to be consistent (`Mode::C`, at most
//! one fact per key) or possibly inconsistent (`Mode::I`). A *block* is a
//! maximal set of facts of one relation that agree on the key; a *repair*
//! picks exactly one fact from every block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// A ground value. The derived order — integers before texts before tuples,
/// each compared naturally — is the one total order used everywhere a least
/// element must be chosen deterministically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Constant {
    Int(i64),
    Text(String),
    /// Composite value, used to pack multi-column keys into a single column.
    Tuple(Vec<Constant>),
}

impl Constant {
    pub fn text(s: &str) -> Constant {
        Constant::Text(s.to_string())
    }

    /// Pack a key tuple into a single value: a 1-tuple stays a bare value.
    pub fn pack(mut values: Vec<Constant>) -> Constant {
        if values.len() == 1 {
            values.pop().unwrap()
        } else {
            Constant::Tuple(values)
        }
    }
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Int(n) => write!(f, "{n}"),
            Constant::Text(s) => {
                write!(f, "\"")?;
                for c in s.chars() {
                    match c {
                        '"' => write!(f, "\\\"")?,
                        '\\' => write!(f, "\\\\")?,
                        _ => write!(f, "{c}")?,
                    }
                }
                write!(f, "\"")
            }
            Constant::Tuple(items) => {
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

/// A term in a query atom: a variable or a constant.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Var(String),
    Const(Constant),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{c}"),
        }
    }
}

/// Consistency mode of a relation: `C` relations satisfy their key (one fact
/// per block), `I` relations may not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    C,
    I,
}

/// Relation schema `[arity, key_len]` plus mode. `1 <= key_len <= arity`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationSchema {
    pub name: String,
    pub arity: usize,
    pub key_len: usize,
    pub mode: Mode,
}

impl RelationSchema {
    pub fn new(name: &str, arity: usize, key_len: usize, mode: Mode) -> Result<Self, ModelError> {
        if key_len == 0 || key_len > arity {
            return Err(ModelError::BadSignature {
                relation: name.to_string(),
                arity,
                key_len,
            });
        }
        Ok(RelationSchema { name: name.to_string(), arity, key_len, mode })
    }
}

/// A query atom: a relation schema applied to key terms and value terms.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Atom {
    pub schema: RelationSchema,
    pub key: Vec<Term>,
    pub value: Vec<Term>,
}

impl Atom {
    pub fn new(schema: RelationSchema, key: Vec<Term>, value: Vec<Term>) -> Result<Self, ModelError> {
        if key.len() != schema.key_len || key.len() + value.len() != schema.arity {
            return Err(ModelError::ArityMismatch {
                relation: schema.name.clone(),
                expected: (schema.key_len, schema.arity),
                got: (key.len(), key.len() + value.len()),
            });
        }
        Ok(Atom { schema, key, value })
    }

    pub fn name(&self) -> &str {
        &self.schema.name
    }

    pub fn is_consistent(&self) -> bool {
        self.schema.mode == Mode::C
    }

    /// All terms, key first.
    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.key.iter().chain(self.value.iter())
    }

    /// Variables of the key positions.
    pub fn key_vars(&self) -> BTreeSet<String> {
        self.key.iter().filter_map(|t| t.as_var().map(str::to_string)).collect()
    }

    /// All variables of the atom.
    pub fn vars(&self) -> BTreeSet<String> {
        self.terms().filter_map(|t| t.as_var().map(str::to_string)).collect()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.schema.name)?;
        if self.schema.mode == Mode::C {
            write!(f, "@c")?;
        }
        write!(f, "(")?;
        for (i, t) in self.key.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{t}")?;
        }
        write!(f, " |")?;
        for (i, t) in self.value.iter().enumerate() {
            write!(f, "{}", if i > 0 { ", " } else { " " })?;
            write!(f, "{t}")?;
        }
        write!(f, ")")
    }
}

/// A self-join-free Boolean conjunctive query: a set of atoms over pairwise
/// distinct relation names, kept sorted by relation name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Query {
    atoms: Vec<Atom>,
}

impl Query {
    pub fn new(mut atoms: Vec<Atom>) -> Result<Self, ModelError> {
        if atoms.is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        atoms.sort_by(|a, b| a.schema.name.cmp(&b.schema.name));
        for w in atoms.windows(2) {
            if w[0].schema.name == w[1].schema.name {
                return Err(ModelError::SelfJoin { relation: w[0].schema.name.clone() });
            }
        }
        Ok(Query { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, name: &str) -> Option<&Atom> {
        self.atoms.iter().find(|a| a.schema.name == name)
    }

    /// Atoms of consistent relations.
    pub fn catoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| a.is_consistent())
    }

    /// Atoms of possibly-inconsistent relations.
    pub fn iatoms(&self) -> impl Iterator<Item = &Atom> {
        self.atoms.iter().filter(|a| !a.is_consistent())
    }

    pub fn vars(&self) -> BTreeSet<String> {
        self.atoms.iter().flat_map(|a| a.vars()).collect()
    }

    pub fn schemas(&self) -> BTreeMap<String, RelationSchema> {
        self.atoms.iter().map(|a| (a.schema.name.clone(), a.schema.clone())).collect()
    }

    /// The query with one atom removed.
    pub fn without(&self, name: &str) -> Result<Query, ModelError> {
        let atoms: Vec<Atom> =
            self.atoms.iter().filter(|a| a.schema.name != name).cloned().collect();
        Query::new(atoms)
    }

    /// The query extended with a fresh atom.
    pub fn with_atom(&self, atom: Atom) -> Result<Query, ModelError> {
        let mut atoms = self.atoms.clone();
        atoms.push(atom);
        Query::new(atoms)
    }

    /// Substitute constants for variables (used when grounding).
    pub fn substitute(&self, binding: &BTreeMap<String, Constant>) -> Query {
        let atoms = self
            .atoms
            .iter()
            .map(|a| {
                let sub = |t: &Term| match t {
                    Term::Var(v) => match binding.get(v) {
                        Some(c) => Term::Const(c.clone()),
                        None => t.clone(),
                    },
                    Term::Const(_) => t.clone(),
                };
                Atom {
                    schema: a.schema.clone(),
                    key: a.key.iter().map(sub).collect(),
                    value: a.value.iter().map(sub).collect(),
                }
            })
            .collect();
        Query { atoms }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "q :- ")?;
        for (i, a) in self.atoms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ".")
    }
}

/// A ground fact, values split into key part and value part.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fact {
    pub relation: String,
    pub key: Vec<Constant>,
    pub value: Vec<Constant>,
}

impl Fact {
    pub fn block_key(&self) -> BlockKey {
        BlockKey { relation: self.relation.clone(), key: self.key.clone() }
    }

    pub fn values(&self) -> impl Iterator<Item = &Constant> {
        self.key.iter().chain(self.value.iter())
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, c) in self.key.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, " |")?;
        for (i, c) in self.value.iter().enumerate() {
            write!(f, "{}", if i > 0 { ", " } else { " " })?;
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Identifies a block: relation name plus key tuple.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub relation: String,
    pub key: Vec<Constant>,
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.relation)?;
        for (i, c) in self.key.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, " | *)")
    }
}

/// An immutable set of facts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Database {
    facts: BTreeSet<Fact>,
}

impl Database {
    pub fn new(facts: impl IntoIterator<Item = Fact>) -> Database {
        Database { facts: facts.into_iter().collect() }
    }

    /// Construct and check against the schemas: arities must match and
    /// consistent relations must have one fact per block. Facts of relations
    /// absent from the schema map are rejected.
    pub fn validated(
        facts: impl IntoIterator<Item = Fact>,
        schemas: &BTreeMap<String, RelationSchema>,
    ) -> Result<Database, ModelError> {
        let db = Database::new(facts);
        for fact in &db.facts {
            let schema = schemas
                .get(&fact.relation)
                .ok_or_else(|| ModelError::UnknownRelation { relation: fact.relation.clone() })?;
            if fact.key.len() != schema.key_len
                || fact.key.len() + fact.value.len() != schema.arity
            {
                return Err(ModelError::ArityMismatch {
                    relation: fact.relation.clone(),
                    expected: (schema.key_len, schema.arity),
                    got: (fact.key.len(), fact.key.len() + fact.value.len()),
                });
            }
        }
        for (bk, facts) in db.blocks() {
            if facts.len() > 1 {
                if let Some(schema) = schemas.get(&bk.relation) {
                    if schema.mode == Mode::C {
                        return Err(ModelError::InconsistentConsistentRelation { block: bk });
                    }
                }
            }
        }
        Ok(db)
    }

    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.facts.iter()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.facts.contains(fact)
    }

    pub fn relation<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Fact> {
        self.facts.iter().filter(move |f| f.relation == name)
    }

    /// Facts grouped by relation name.
    pub fn relations(&self) -> BTreeMap<&str, Vec<&Fact>> {
        let mut map: BTreeMap<&str, Vec<&Fact>> = BTreeMap::new();
        for f in &self.facts {
            map.entry(f.relation.as_str()).or_default().push(f);
        }
        map
    }

    /// The block partition: every fact appears in exactly one block.
    pub fn blocks(&self) -> BTreeMap<BlockKey, Vec<Fact>> {
        let mut map: BTreeMap<BlockKey, Vec<Fact>> = BTreeMap::new();
        for f in &self.facts {
            map.entry(f.block_key()).or_default().push(f.clone());
        }
        map
    }

    pub fn block(&self, bk: &BlockKey) -> Vec<Fact> {
        self.facts
            .iter()
            .filter(|f| f.relation == bk.relation && f.key == bk.key)
            .cloned()
            .collect()
    }

    /// Database without the given blocks.
    pub fn without_blocks(&self, blocks: &BTreeSet<BlockKey>) -> Database {
        Database {
            facts: self.facts.iter().filter(|f| !blocks.contains(&f.block_key())).cloned().collect(),
        }
    }

    /// Database without all facts of one relation.
    pub fn without_relation(&self, name: &str) -> Database {
        Database { facts: self.facts.iter().filter(|f| f.relation != name).cloned().collect() }
    }

    pub fn union(&self, other: &Database) -> Database {
        Database { facts: self.facts.union(&other.facts).cloned().collect() }
    }

    /// Every repair of this database, as a lazy stream. A repair keeps
    /// exactly one fact from each block. Errors if the repair count exceeds
    /// `cap`.
    pub fn enumerate_repairs(&self, cap: u64) -> Result<Repairs, ModelError> {
        let blocks: Vec<Vec<Fact>> = self.blocks().into_values().collect();
        let mut count: u64 = 1;
        for b in &blocks {
            count = count.saturating_mul(b.len() as u64);
            if count > cap {
                return Err(ModelError::RepairCapExceeded { cap });
            }
        }
        Ok(Repairs { blocks, indices: None, done: false })
    }

    /// The number of repairs, saturating at u64::MAX.
    pub fn repair_count(&self) -> u64 {
        self.blocks().values().fold(1u64, |acc, b| acc.saturating_mul(b.len() as u64))
    }
}

/// Default ceiling for repair enumeration.
pub const DEFAULT_REPAIR_CAP: u64 = 1 << 20;

/// Iterator over all repairs of a database, in block-odometer order.
pub struct Repairs {
    blocks: Vec<Vec<Fact>>,
    indices: Option<Vec<usize>>,
    done: bool,
}

impl Iterator for Repairs {
    type Item = Database;

    fn next(&mut self) -> Option<Database> {
        if self.done {
            return None;
        }
        match &mut self.indices {
            None => {
                // First repair: index 0 in every block (the empty database
                // has exactly one repair, the empty set).
                self.indices = Some(vec![0; self.blocks.len()]);
            }
            Some(indices) => {
                let mut pos = 0;
                loop {
                    if pos == self.blocks.len() {
                        self.done = true;
                        return None;
                    }
                    indices[pos] += 1;
                    if indices[pos] < self.blocks[pos].len() {
                        break;
                    }
                    indices[pos] = 0;
                    pos += 1;
                }
            }
        }
        let indices = self.indices.as_ref().unwrap();
        Some(Database::new(
            self.blocks.iter().zip(indices).map(|(b, &i)| b[i].clone()),
        ))
    }
}

/// A (total or partial) assignment of constants to variables. Applying it
/// outside its domain is an error for ground operations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Valuation {
    map: BTreeMap<String, Constant>,
}

impl Valuation {
    pub fn new() -> Valuation {
        Valuation::default()
    }

    pub fn from_map(map: BTreeMap<String, Constant>) -> Valuation {
        Valuation { map }
    }

    pub fn get(&self, var: &str) -> Option<&Constant> {
        self.map.get(var)
    }

    pub fn bind(&mut self, var: &str, value: Constant) {
        self.map.insert(var.to_string(), value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Constant)> {
        self.map.iter()
    }

    pub fn as_map(&self) -> &BTreeMap<String, Constant> {
        &self.map
    }

    /// Apply to a term; the term must be ground under this valuation.
    pub fn apply_term(&self, term: &Term) -> Constant {
        match term {
            Term::Const(c) => c.clone(),
            Term::Var(v) => self
                .map
                .get(v)
                .unwrap_or_else(|| panic!("valuation does not bind variable {v}"))
                .clone(),
        }
    }

    /// Apply to an atom, producing the fact it denotes.
    pub fn apply_atom(&self, atom: &Atom) -> Fact {
        Fact {
            relation: atom.schema.name.clone(),
            key: atom.key.iter().map(|t| self.apply_term(t)).collect(),
            value: atom.value.iter().map(|t| self.apply_term(t)).collect(),
        }
    }

    /// Restriction to a variable set.
    pub fn restrict(&self, vars: &BTreeSet<String>) -> Valuation {
        Valuation {
            map: self.map.iter().filter(|(v, _)| vars.contains(*v)).map(|(v, c)| (v.clone(), c.clone())).collect(),
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (v, c)) in self.map.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v} -> {c}")?;
        }
        write!(f, "}}")
    }
}

/// Match a fact against an atom's term patterns, extending `binding`.
/// Returns None if the fact does not fit (constants or already-bound
/// variables disagree).
pub fn match_fact(atom: &Atom, fact: &Fact, binding: &Valuation) -> Option<Valuation> {
    if fact.relation != atom.schema.name
        || fact.key.len() != atom.key.len()
        || fact.value.len() != atom.value.len()
    {
        return None;
    }
    let mut out = binding.clone();
    for (term, value) in atom.terms().zip(fact.values()) {
        match term {
            Term::Const(c) => {
                if c != value {
                    return None;
                }
            }
            Term::Var(v) => match out.get(v) {
                Some(bound) => {
                    if bound != value {
                        return None;
                    }
                }
                None => out.bind(v, value.clone()),
            },
        }
    }
    Some(out)
}

/// Evaluate a Boolean conjunctive query: whether some valuation embeds every
/// atom into the database, together with all such valuations (total on
/// vars(q)), in sorted order.
pub fn eval_bcq(q: &Query, db: &Database) -> (bool, Vec<Valuation>) {
    let relations = db.relations();
    // Greedy join order: most already-bound variables first, then smallest
    // relation, then name. Purely a performance choice; results are sorted.
    let mut remaining: Vec<&Atom> = q.atoms().iter().collect();
    let mut order: Vec<&Atom> = Vec::new();
    let mut bound: BTreeSet<String> = BTreeSet::new();
    while !remaining.is_empty() {
        let (idx, _) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, a)| {
                let vars = a.vars();
                let joined = vars.intersection(&bound).count();
                let size = relations.get(a.name()).map_or(0, |v| v.len());
                (usize::MAX - joined, size, a.schema.name.clone())
            })
            .unwrap();
        let atom = remaining.remove(idx);
        bound.extend(atom.vars());
        order.push(atom);
    }

    let mut results: BTreeSet<Valuation> = BTreeSet::new();
    let empty: Vec<&Fact> = Vec::new();
    fn descend(
        order: &[&Atom],
        relations: &BTreeMap<&str, Vec<&Fact>>,
        empty: &Vec<&Fact>,
        binding: Valuation,
        results: &mut BTreeSet<Valuation>,
    ) {
        match order.split_first() {
            None => {
                results.insert(binding);
            }
            Some((atom, rest)) => {
                let candidates = relations.get(atom.name()).unwrap_or(empty);
                for fact in candidates {
                    if let Some(next) = match_fact(atom, fact, &binding) {
                        descend(rest, relations, empty, next, results);
                    }
                }
            }
        }
    }
    descend(&order, &relations, &empty, Valuation::new(), &mut results);
    let list: Vec<Valuation> = results.into_iter().collect();
    (!list.is_empty(), list)
}

/// Errors from model construction and parsing.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("relation {relation} has invalid signature [{arity},{key_len}]: need 1 <= key <= arity")]
    BadSignature { relation: String, arity: usize, key_len: usize },
    #[error("relation {relation}: expected key/arity {expected:?}, got {got:?}")]
    ArityMismatch { relation: String, expected: (usize, usize), got: (usize, usize) },
    #[error("query mentions relation {relation} twice (queries must be self-join-free)")]
    SelfJoin { relation: String },
    #[error("query has no atoms")]
    EmptyQuery,
    #[error("fact over relation {relation} not declared by the query")]
    UnknownRelation { relation: String },
    #[error("consistent relation has a multi-fact block {block}")]
    InconsistentConsistentRelation { block: BlockKey },
    #[error("repair count exceeds cap {cap}")]
    RepairCapExceeded { cap: u64 },
    #[error("precondition violated: {reason}")]
    Precondition { reason: String },
    #[error("{what} exceeds cap {cap}")]
    CapExceeded { what: String, cap: usize },
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
}
