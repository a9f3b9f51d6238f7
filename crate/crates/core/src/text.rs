//! Text formats for queries and databases.
//!
//! Query files hold one rule:
//!
//! ```text
//! # payment joined through account
//! q :- R(x | y), S@c(y, "flag" | z), T(z | x).
//! ```
//!
//! Each atom lists key terms, a `|`, then value terms. `@c` marks a relation
//! known to be consistent; the default is possibly inconsistent (`@i` may be
//! written explicitly). Lowercase/uppercase identifiers are variables inside
//! queries; quoted strings and integers are constants.
//!
//! Database files hold one fact per line over the same syntax, except that
//! bare identifiers denote text constants:
//!
//! ```text
//! R(a1 | b1)
//! S(b1 | c1)
//! ```
//!
//! Trailing periods on facts are optional. `#` starts a comment. Identifiers
//! containing `__` are rejected: that infix is reserved for generated names.

use crate::model::{
    Atom, Constant, Database, Fact, Mode, ModelError, Query, RelationSchema, Term,
};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Punct(char),
    /// The `:-` arrow.
    Arrow,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0, line: 1, col: 1 }
    }

    fn err(&self, msg: impl Into<String>) -> ModelError {
        ModelError::Parse { line: self.line, col: self.col, msg: msg.into() }
    }

    fn bump(&mut self) -> Option<u8> {
        let b = *self.src.get(self.pos)?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(b)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ModelError> {
        let mut out = Vec::new();
        loop {
            // Skip whitespace and comments.
            loop {
                match self.peek() {
                    Some(b) if b.is_ascii_whitespace() => {
                        self.bump();
                    }
                    Some(b'#') => {
                        while let Some(b) = self.peek() {
                            if b == b'\n' {
                                break;
                            }
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(b) = self.peek() else { break };
            let tok = match b {
                b'(' | b')' | b',' | b'|' | b'.' | b'@' => {
                    self.bump();
                    Tok::Punct(b as char)
                }
                b':' => {
                    self.bump();
                    if self.peek() == Some(b'-') {
                        self.bump();
                        Tok::Arrow
                    } else {
                        return Err(self.err("expected '-' after ':'"));
                    }
                }
                b'"' => {
                    self.bump();
                    let mut s = String::new();
                    loop {
                        match self.bump() {
                            None | Some(b'\n') => {
                                return Err(self.err("unterminated string literal"))
                            }
                            Some(b'"') => break,
                            Some(b'\\') => match self.bump() {
                                Some(b'"') => s.push('"'),
                                Some(b'\\') => s.push('\\'),
                                _ => return Err(self.err("bad escape in string literal")),
                            },
                            Some(c) => s.push(c as char),
                        }
                    }
                    Tok::Str(s)
                }
                b'-' | b'0'..=b'9' => {
                    let mut s = String::new();
                    s.push(self.bump().unwrap() as char);
                    while let Some(c) = self.peek() {
                        if c.is_ascii_digit() {
                            s.push(self.bump().unwrap() as char);
                        } else {
                            break;
                        }
                    }
                    match s.parse::<i64>() {
                        Ok(n) => Tok::Int(n),
                        Err(_) => return Err(self.err(format!("bad integer literal '{s}'"))),
                    }
                }
                b if b.is_ascii_alphabetic() || b == b'_' => {
                    let mut s = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            s.push(self.bump().unwrap() as char);
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(s)
                }
                other => {
                    return Err(self.err(format!("unexpected character '{}'", other as char)))
                }
            };
            out.push(Spanned { tok, line, col });
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    /// Whether bare identifiers denote variables (queries) or text constants
    /// (databases).
    idents_are_vars: bool,
}

impl Parser {
    fn err_at(&self, msg: impl Into<String>) -> ModelError {
        let (line, col) = self
            .toks
            .get(self.pos)
            .map(|s| (s.line, s.col))
            .or_else(|| self.toks.last().map(|s| (s.line, s.col + 1)))
            .unwrap_or((1, 1));
        ModelError::Parse { line, col, msg: msg.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ModelError> {
        match self.peek() {
            Some(Tok::Punct(p)) if *p == c => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err_at(format!("expected '{c}'"))),
        }
    }

    fn ident(&mut self) -> Result<String, ModelError> {
        match self.peek() {
            Some(Tok::Ident(_)) => {
                let Some(Tok::Ident(s)) = self.bump() else { unreachable!() };
                if s.contains("__") {
                    return Err(self.err_at(format!(
                        "identifier '{s}' contains '__', which is reserved for generated names"
                    )));
                }
                Ok(s)
            }
            _ => Err(self.err_at("expected an identifier")),
        }
    }

    fn term(&mut self) -> Result<Term, ModelError> {
        match self.peek() {
            Some(Tok::Int(_)) => {
                let Some(Tok::Int(n)) = self.bump() else { unreachable!() };
                Ok(Term::Const(Constant::Int(n)))
            }
            Some(Tok::Str(_)) => {
                let Some(Tok::Str(s)) = self.bump() else { unreachable!() };
                Ok(Term::Const(Constant::Text(s)))
            }
            Some(Tok::Ident(_)) => {
                let name = self.ident()?;
                if self.idents_are_vars {
                    Ok(Term::Var(name))
                } else {
                    Ok(Term::Const(Constant::Text(name)))
                }
            }
            _ => Err(self.err_at("expected a term")),
        }
    }

    /// `Name[@c|@i] ( t, ... | t, ... )` — returns name, mode, keys, values.
    fn atom_shape(&mut self) -> Result<(String, Mode, Vec<Term>, Vec<Term>), ModelError> {
        let name = self.ident()?;
        let mode = if self.peek() == Some(&Tok::Punct('@')) {
            self.bump();
            match self.ident()?.as_str() {
                "c" => Mode::C,
                "i" => Mode::I,
                other => return Err(self.err_at(format!("unknown mode '@{other}' (use @c or @i)"))),
            }
        } else {
            Mode::I
        };
        self.expect_punct('(')?;
        let mut key = Vec::new();
        loop {
            key.push(self.term()?);
            match self.peek() {
                Some(Tok::Punct(',')) => {
                    self.bump();
                }
                Some(Tok::Punct('|')) => break,
                _ => return Err(self.err_at("expected ',' or '|' in key positions")),
            }
        }
        self.expect_punct('|')?;
        let mut value = Vec::new();
        if self.peek() != Some(&Tok::Punct(')')) {
            loop {
                value.push(self.term()?);
                match self.peek() {
                    Some(Tok::Punct(',')) => {
                        self.bump();
                    }
                    Some(Tok::Punct(')')) => break,
                    _ => return Err(self.err_at("expected ',' or ')' in value positions")),
                }
            }
        }
        self.expect_punct(')')?;
        Ok((name, mode, key, value))
    }
}

/// Parse a query file: `q :- Atom, Atom, ... .`
pub fn parse_query(src: &str) -> Result<Query, ModelError> {
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser { toks, pos: 0, idents_are_vars: true };
    let head = p.ident()?;
    if head != "q" {
        return Err(p.err_at(format!("query head must be 'q', found '{head}'")));
    }
    match p.bump() {
        Some(Tok::Arrow) => {}
        _ => return Err(p.err_at("expected ':-' after query head")),
    }
    let mut atoms = Vec::new();
    loop {
        let (name, mode, key, value) = p.atom_shape()?;
        let schema = RelationSchema::new(&name, key.len() + value.len(), key.len(), mode)?;
        atoms.push(Atom::new(schema, key, value)?);
        match p.bump() {
            Some(Tok::Punct(',')) => continue,
            Some(Tok::Punct('.')) => break,
            _ => return Err(p.err_at("expected ',' or '.' after atom")),
        }
    }
    if p.peek().is_some() {
        return Err(p.err_at("trailing input after query"));
    }
    Query::new(atoms)
}

/// Parse a database file against a query's schemas. Bare identifiers are
/// text constants. Mode annotations on facts are accepted and checked
/// against the schema if present.
pub fn parse_database(src: &str, q: &Query) -> Result<Database, ModelError> {
    let schemas = q.schemas();
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser { toks, pos: 0, idents_are_vars: false };
    let mut facts = Vec::new();
    while p.peek().is_some() {
        let (name, mode, key, value) = p.atom_shape()?;
        if p.peek() == Some(&Tok::Punct('.')) {
            p.bump();
        }
        let schema = schemas
            .get(&name)
            .ok_or(ModelError::UnknownRelation { relation: name.clone() })?;
        if mode == Mode::C && schema.mode != Mode::C {
            return Err(p.err_at(format!("fact for {name} marked @c but the query declares it @i")));
        }
        let ground = |ts: Vec<Term>| -> Result<Vec<Constant>, ModelError> {
            ts.into_iter()
                .map(|t| match t {
                    Term::Const(c) => Ok(c),
                    Term::Var(v) => Err(ModelError::Parse {
                        line: 0,
                        col: 0,
                        msg: format!("unexpected variable {v} in fact"),
                    }),
                })
                .collect()
        };
        facts.push(Fact { relation: name, key: ground(key)?, value: ground(value)? });
    }
    Database::validated(facts, &schemas)
}

/// Render a database in the `.facts` format, one fact per line, text
/// constants printed bare when they are safe identifiers.
pub fn format_database(db: &Database) -> String {
    fn constant(c: &Constant) -> String {
        match c {
            Constant::Text(s)
                if !s.is_empty()
                    && !s.contains("__")
                    && s.bytes().next().is_some_and(|b| b.is_ascii_alphabetic() || b == b'_')
                    && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') =>
            {
                s.clone()
            }
            Constant::Tuple(items) => {
                // Tuples only arise in generated intermediate databases; fall
                // back to the display form, which the parser does not accept.
                format!("({})", items.iter().map(constant).collect::<Vec<_>>().join(", "))
            }
            other => other.to_string(),
        }
    }
    let mut out = String::new();
    for f in db.facts() {
        out.push_str(&f.relation);
        out.push('(');
        let keys: Vec<String> = f.key.iter().map(constant).collect();
        out.push_str(&keys.join(", "));
        out.push_str(" |");
        for (i, v) in f.value.iter().enumerate() {
            out.push_str(if i > 0 { ", " } else { " " });
            out.push_str(&constant(v));
        }
        out.push_str(")\n");
    }
    out
}

/// Build a fresh schema map from independent relation declarations, used by
/// tests that need databases without a query.
pub fn schemas_of(pairs: &[(&str, usize, usize, Mode)]) -> BTreeMap<String, RelationSchema> {
    pairs
        .iter()
        .map(|(name, arity, key, mode)| {
            (name.to_string(), RelationSchema::new(name, *arity, *key, *mode).unwrap())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::eval_bcq;

    #[test]
    fn parses_three_cycle_query() {
        let q = parse_query("q :- R(x | y), S(y | z), T(z | x).").unwrap();
        assert_eq!(q.atoms().len(), 3);
        let r = q.atom("R").unwrap();
        assert_eq!(r.schema.arity, 2);
        assert_eq!(r.schema.key_len, 1);
        assert_eq!(r.schema.mode, Mode::I);
        assert_eq!(q.to_string(), "q :- R(x | y), S(y | z), T(z | x).");
    }

    #[test]
    fn parses_modes_constants_and_comments() {
        let q = parse_query(
            "# watched pair\nq :- Movies(m | t, 1963, d), Directors@c(d | \"Hitchcock\", b).",
        )
        .unwrap();
        let movies = q.atom("Movies").unwrap();
        assert_eq!(movies.value[1], Term::Const(Constant::Int(1963)));
        let dirs = q.atom("Directors").unwrap();
        assert_eq!(dirs.schema.mode, Mode::C);
        assert_eq!(dirs.value[0], Term::Const(Constant::text("Hitchcock")));
        let printed = q.to_string();
        assert!(printed.contains("Directors@c(d | \"Hitchcock\", b)"));
        let reparsed = parse_query(&printed).unwrap();
        assert_eq!(reparsed, q);
    }

    #[test]
    fn parses_empty_value_side() {
        let q = parse_query("q :- R(x, y |).").unwrap();
        let r = q.atom("R").unwrap();
        assert_eq!(r.schema.arity, 2);
        assert_eq!(r.schema.key_len, 2);
        assert!(r.value.is_empty());
        assert_eq!(parse_query(&q.to_string()).unwrap(), q);
    }

    #[test]
    fn rejects_reserved_infix() {
        let err = parse_query("q :- R(x__0 | y).").unwrap_err();
        assert!(matches!(err, ModelError::Parse { .. }));
    }

    #[test]
    fn rejects_unknown_relation_in_facts() {
        let q = parse_query("q :- R(x | y).").unwrap();
        let err = parse_database("Z(a | b)", &q).unwrap_err();
        assert_eq!(err, ModelError::UnknownRelation { relation: "Z".to_string() });
    }

    #[test]
    fn facts_round_trip_and_evaluate() {
        let q = parse_query("q :- R(x | y), S(y | z), T(z | x).").unwrap();
        let src = "R(a1 | b1)\nR(a1 | b2)\nS(b1 | c1)\nT(c1 | a1)\n";
        let db = parse_database(src, &q).unwrap();
        assert_eq!(db.len(), 4);
        assert_eq!(db.blocks().len(), 3);
        let printed = format_database(&db);
        let reparsed = parse_database(&printed, &q).unwrap();
        assert_eq!(reparsed, db);
        let (sat, vals) = eval_bcq(&q, &db);
        assert!(sat);
        assert_eq!(vals.len(), 1);
        assert_eq!(vals[0].get("x"), Some(&Constant::text("a1")));
    }

    #[test]
    fn consistent_relation_with_dupes_rejected() {
        let q = parse_query("q :- R@c(x | y).").unwrap();
        let err = parse_database("R(a | b)\nR(a | c)\n", &q).unwrap_err();
        assert!(matches!(err, ModelError::InconsistentConsistentRelation { .. }));
    }

    #[test]
    fn error_positions_are_reported() {
        let err = parse_query("q :- R(x | y)\n  S(y | z).").unwrap_err();
        match err {
            ModelError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parses_integer_and_quoted_facts() {
        let q = parse_query("q :- R(x | y).").unwrap();
        let db = parse_database("R(1 | \"two words\")\nR(-3 | ok)", &q).unwrap();
        let mut kinds: Vec<Constant> = db.facts().map(|f| f.key[0].clone()).collect();
        kinds.sort();
        assert_eq!(kinds, vec![Constant::Int(-3), Constant::Int(1)]);
        let printed = format_database(&db);
        assert!(printed.contains("\"two words\""));
        assert_eq!(parse_database(&printed, &q).unwrap(), db);
    }
}
