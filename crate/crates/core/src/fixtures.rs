//! The shipped example corpus, embedded so tests and docs never depend on
//! working-directory layout. The same files live under `fixtures/` at the
//! repository root for command-line use.

/// Three-atom cycle query; the classic just-beyond-first-order example.
pub const C3_QUERY: &str = include_str!("../../../fixtures/c3.cqa");
/// Nine facts on which [`C3_QUERY`] is certainly false.
pub const C3_FACTS: &str = include_str!("../../../fixtures/c3.facts");
/// Six-atom query with a weakly cyclic attack graph.
pub const Q1_QUERY: &str = include_str!("../../../fixtures/q1.cqa");
/// Twelve facts on which [`Q1_QUERY`] is certainly false.
pub const Q1_FACTS: &str = include_str!("../../../fixtures/q1.facts");
/// Two-atom cycle query with mutual key references.
pub const RS_QUERY: &str = include_str!("../../../fixtures/rs.cqa");
/// Eight facts forming two components; [`RS_QUERY`] is certainly true.
pub const RS_FACTS: &str = include_str!("../../../fixtures/rs.facts");
/// Query whose saturation materializes two internal dependencies.
pub const SAT_QUERY: &str = include_str!("../../../fixtures/sat.cqa");
/// Key-join query over a movie schema.
pub const MOV_QUERY: &str = include_str!("../../../fixtures/mov.cqa");
/// Two atoms joined on a value position: the canonical hard query.
pub const HARD_QUERY: &str = include_str!("../../../fixtures/hard.cqa");
