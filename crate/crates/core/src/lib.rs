//! Consistent query answering under primary keys.
//!
//! Given a self-join-free Boolean conjunctive query whose relations carry
//! primary keys, this crate decides how hard it is to answer the query over
//! databases that may violate those keys — where the *certain answer* is true
//! iff every repair (one fact per key-equal block) satisfies the query — and,
//! for the tractable cases, compiles the question into symmetric stratified
//! Datalog with min aggregation. Reference evaluators (repair enumeration and
//! a direct recursive decision procedure) back every compiled program.

pub mod attack;
pub mod codegen;
pub mod datalog;
pub mod fd;
pub mod fixtures;
pub mod garbage;
pub mod gen;
pub mod mgraph;
pub mod model;
pub mod pipeline;
pub mod saturate;
pub mod text;

pub use model::{
    eval_bcq, Atom, BlockKey, Constant, Database, Fact, Mode, ModelError, Query, RelationSchema,
    Term, Valuation, DEFAULT_REPAIR_CAP,
};
pub use text::{format_database, parse_database, parse_query};
