//! Command-line front end: classification, compilation, evaluation,
//! oracles, graph export, instance generation, and differential checking.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use cqa_core::attack::{attack_graph, classify_complexity, has_key_join_property, Complexity};
use cqa_core::codegen::{compose_pipeline, EqEncoding};
use cqa_core::datalog::{evaluate, parse_program, ConstOrder, Program, Store};
use cqa_core::gen::{gen_database, gen_instance, gen_query, GenLimits, QueryShape};
use cqa_core::mgraph::{block_quotient, chook_graph, find_mcycle, hook_graph, m_graph};
use cqa_core::model::{Database, Query, DEFAULT_REPAIR_CAP};
use cqa_core::pipeline::{certain_answer_direct, certain_answer_oracle};
use cqa_core::saturate::saturate;
use cqa_core::text::{parse_database, parse_query};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Certain query answering under primary keys.
#[derive(Parser)]
#[command(name = "cqa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphKind {
    /// Atom-level attack graph of the query.
    Attack,
    /// Key-reachability graph whose cycles drive the rewriting.
    Mgraph,
    /// Fact-level join graph of the database.
    Hook,
    /// Hook graph restricted to one key-join cycle.
    Chook,
    /// Block quotient of the restricted hook graph.
    Quotient,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    KeyJoin,
    PlantedCycle,
    Unrestricted,
    /// 40% key-join, 40% planted cycle, 20% unrestricted.
    Mixed,
}

#[derive(Subcommand)]
enum Command {
    /// Report the complexity class of a query; exit 0 for first-order,
    /// 1 for logspace-but-not-first-order, 2 for coNP-complete, 3 on error.
    Classify {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
    },
    /// Compile a query into a stratified Datalog program with min-choice.
    Rewrite {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
        /// Encode block equality through per-relation predicates instead
        /// of built-in (dis)equality literals.
        #[arg(long)]
        faithful: bool,
    },
    /// Evaluate the certain answer by the direct recursive strategy.
    Eval {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 'd', long = "data")]
        data: PathBuf,
        /// Print the stage-by-stage trace before the answer.
        #[arg(long)]
        trace: bool,
    },
    /// Evaluate the certain answer by enumerating every repair.
    Oracle {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 'd', long = "data")]
        data: PathBuf,
        /// Abort if the database has more repairs than this.
        #[arg(long, default_value_t = DEFAULT_REPAIR_CAP)]
        cap: u64,
    },
    /// Run a Datalog program file against a facts file.
    Run {
        /// Program file (as produced by `rewrite`).
        program: PathBuf,
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 'd', long = "data")]
        data: PathBuf,
        /// Evaluate with the constant order reversed.
        #[arg(long)]
        reversed: bool,
    },
    /// Print one of the analysis graphs in DOT format.
    Graph {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        /// Facts file; required for the fact-level graphs.
        #[arg(short = 'd', long = "data")]
        data: Option<PathBuf>,
        #[arg(long = "kind", value_enum)]
        kind: GraphKind,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Generate a seeded random (query, database) pair.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ShapeArg::Mixed)]
        shape: ShapeArg,
        /// Maximum number of atoms in the query.
        #[arg(long, default_value_t = 6)]
        atoms: usize,
        /// Maximum relation arity.
        #[arg(long, default_value_t = 4)]
        arity: usize,
        /// Maximum blocks per relation.
        #[arg(long, default_value_t = 3)]
        blocks: usize,
        /// Maximum facts per block.
        #[arg(long, default_value_t = 3)]
        block_size: usize,
        /// Write BASE.cqa and BASE.facts instead of printing.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Check direct, compiled, and oracle answers against each other over
    /// seeded instances; exits nonzero with a shrunk counterexample on the
    /// first disagreement.
    Diff {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = DEFAULT_REPAIR_CAP)]
        cap: u64,
        /// Use per-relation equality predicates in the compiled program.
        #[arg(long)]
        faithful: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Classify { query } => match cmd_classify(&query) {
            Ok(class) => ExitCode::from(match class {
                Complexity::FirstOrder => 0,
                Complexity::LspaceNotFo => 1,
                Complexity::CoNpComplete => 2,
            }),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(3)
            }
        },
        Command::Diff { seed, count, cap, faithful } => {
            match cmd_diff(seed, count, cap, encoding(faithful)) {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::FAILURE,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::FAILURE
                }
            }
        }
        other => match dispatch(other) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Classify { .. } | Command::Diff { .. } => unreachable!("handled in main"),
        Command::Rewrite { query, out, faithful } => cmd_rewrite(&query, out, encoding(faithful)),
        Command::Eval { query, data, trace } => cmd_eval(&query, &data, trace),
        Command::Oracle { query, data, cap } => cmd_oracle(&query, &data, cap),
        Command::Run { program, query, data, reversed } => {
            cmd_run(&program, &query, &data, reversed)
        }
        Command::Graph { query, data, kind, out } => cmd_graph(&query, data, kind, out),
        Command::Gen { seed, shape, atoms, arity, blocks, block_size, out } => {
            let limits = GenLimits {
                max_atoms: atoms,
                max_arity: arity,
                max_blocks: blocks,
                max_block_size: block_size,
                ..GenLimits::default()
            };
            cmd_gen(seed, shape, &limits, out)
        }
    }
}

fn encoding(faithful: bool) -> EqEncoding {
    if faithful {
        EqEncoding::Faithful
    } else {
        EqEncoding::Builtin
    }
}

fn load_query(path: &Path) -> Result<Query> {
    let src = fs::read_to_string(path)
        .with_context(|| format!("reading query file {}", path.display()))?;
    parse_query(&src).with_context(|| format!("parsing query file {}", path.display()))
}

fn load_database(path: &Path, q: &Query) -> Result<Database> {
    let src = fs::read_to_string(path)
        .with_context(|| format!("reading facts file {}", path.display()))?;
    parse_database(&src, q).with_context(|| format!("parsing facts file {}", path.display()))
}

fn write_out(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_classify(path: &Path) -> Result<Complexity> {
    let q = load_query(path)?;
    let class = classify_complexity(&q);
    let graph = attack_graph(&q);
    println!("class: {class}");
    println!("key-join: {}", has_key_join_property(&q));
    if graph.edges.is_empty() {
        println!("attacks: none");
    } else {
        println!("attacks:");
        for e in &graph.edges {
            println!("  {e}");
        }
    }
    let sat = saturate(&q);
    if sat.stages.is_empty() {
        println!("saturation: query is saturated");
    } else {
        for stage in &sat.stages {
            println!("saturation: {} internal, hosted by {}", stage.fd, stage.host);
        }
    }
    Ok(class)
}

fn cmd_rewrite(path: &Path, out: Option<PathBuf>, encoding: EqEncoding) -> Result<()> {
    let q = load_query(path)?;
    let pp = compose_pipeline(&q, encoding)
        .with_context(|| format!("compiling {}", path.display()))?;
    write_out(out, &pp.program.to_string())
}

fn cmd_eval(qpath: &Path, dpath: &Path, trace: bool) -> Result<()> {
    let q = load_query(qpath)?;
    let db = load_database(dpath, &q)?;
    let result = certain_answer_direct(&q, &db)?;
    if trace {
        for step in &result.steps {
            println!("{step}");
        }
    }
    println!("{}", result.answer);
    Ok(())
}

fn cmd_oracle(qpath: &Path, dpath: &Path, cap: u64) -> Result<()> {
    let q = load_query(qpath)?;
    let db = load_database(dpath, &q)?;
    println!("{}", certain_answer_oracle(&q, &db, cap)?);
    Ok(())
}

fn edb_store(db: &Database) -> Store {
    let mut store = Store::new();
    for f in db.facts() {
        store.entry(f.relation.clone()).or_default().insert(f.values().cloned().collect());
    }
    store
}

fn cmd_run(ppath: &Path, qpath: &Path, dpath: &Path, reversed: bool) -> Result<()> {
    let src = fs::read_to_string(ppath)
        .with_context(|| format!("reading program file {}", ppath.display()))?;
    let program: Program = parse_program(&src)
        .with_context(|| format!("parsing program file {}", ppath.display()))?;
    let q = load_query(qpath)?;
    let db = load_database(dpath, &q)?;
    let order = if reversed { ConstOrder::Reversed } else { ConstOrder::Natural };
    let out = evaluate(&program, &edb_store(&db), order)?;
    match program.manifest_value("goal") {
        Some(goal) => {
            let hit = out.get(goal).is_some_and(|s| !s.is_empty());
            println!("{hit}");
        }
        None => {
            for (pred, tuples) in &out {
                println!("{pred}: {} tuples", tuples.len());
            }
        }
    }
    Ok(())
}

fn cmd_graph(
    qpath: &Path,
    dpath: Option<PathBuf>,
    kind: GraphKind,
    out: Option<PathBuf>,
) -> Result<()> {
    let q = load_query(qpath)?;
    let need_data = || -> Result<Database> {
        let dpath = dpath
            .as_ref()
            .context("this graph kind needs a facts file (-d)")?;
        load_database(dpath, &q)
    };
    let need_cycle = || {
        find_mcycle(&q)?.ok_or_else(|| {
            anyhow::anyhow!("the query has no key-join cycle to restrict to")
        })
    };
    let dot = match kind {
        GraphKind::Attack => attack_graph(&q).to_dot(),
        GraphKind::Mgraph => m_graph(&q).to_dot(),
        GraphKind::Hook => hook_graph(&q, &need_data()?).to_dot(),
        GraphKind::Chook => chook_graph(&q, &need_cycle()?, &need_data()?).to_dot(),
        GraphKind::Quotient => {
            block_quotient(&chook_graph(&q, &need_cycle()?, &need_data()?)).to_dot()
        }
    };
    write_out(out, &dot)
}

fn render_instance(q: &Query, db: &Database) -> (String, String) {
    let query_text = format!("{q}\n");
    let mut facts_text = String::new();
    for f in db.facts() {
        facts_text.push_str(&format!("{f}.\n"));
    }
    (query_text, facts_text)
}

fn cmd_gen(seed: u64, shape: ShapeArg, limits: &GenLimits, out: Option<PathBuf>) -> Result<()> {
    let (q, db) = match shape {
        ShapeArg::Mixed => gen_instance(seed, limits),
        other => {
            let shape = match other {
                ShapeArg::KeyJoin => QueryShape::KeyJoin,
                ShapeArg::PlantedCycle => QueryShape::PlantedCycle,
                ShapeArg::Unrestricted => QueryShape::Unrestricted,
                ShapeArg::Mixed => unreachable!(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = gen_query(&mut rng, shape, limits);
            let db = gen_database(&mut rng, &q, limits);
            (q, db)
        }
    };
    let (query_text, facts_text) = render_instance(&q, &db);
    match out {
        Some(base) => {
            let qfile = base.with_extension("cqa");
            let dfile = base.with_extension("facts");
            fs::write(&qfile, &query_text)
                .with_context(|| format!("writing {}", qfile.display()))?;
            fs::write(&dfile, &facts_text)
                .with_context(|| format!("writing {}", dfile.display()))?;
            println!("wrote {} and {}", qfile.display(), dfile.display());
        }
        None => {
            print!("# query\n{query_text}# facts\n{facts_text}");
        }
    }
    Ok(())
}

/// Greedily drops blocks while the three answers still disagree, then
/// prints the smallest disagreeing instance found.
fn shrink_disagreement(
    q: &Query,
    db: &Database,
    cap: u64,
    encoding: EqEncoding,
) -> Result<Database> {
    let mut current = db.clone();
    loop {
        let mut shrunk = false;
        let blocks: Vec<_> = current.blocks().keys().cloned().collect();
        for bk in blocks {
            let candidate = current.without_blocks(&BTreeSet::from([bk]));
            if candidate.facts().count() == 0 {
                continue;
            }
            if !answers_agree(q, &candidate, cap, encoding)? {
                current = candidate;
                shrunk = true;
                break;
            }
        }
        if !shrunk {
            return Ok(current);
        }
    }
}

fn answers_agree(q: &Query, db: &Database, cap: u64, encoding: EqEncoding) -> Result<bool> {
    let oracle = certain_answer_oracle(q, db, cap)?;
    let direct = certain_answer_direct(q, db)?.answer;
    let compiled = match compose_pipeline(q, encoding) {
        Ok(pp) => {
            let out = evaluate(&pp.program, &edb_store(db), ConstOrder::Natural)?;
            out.get(&pp.goal).is_some_and(|s| !s.is_empty())
        }
        Err(_) => direct, // hard queries have no compiled pipeline
    };
    Ok(oracle == direct && direct == compiled)
}

fn cmd_diff(seed: u64, count: u64, cap: u64, encoding: EqEncoding) -> Result<bool> {
    let limits = GenLimits::default();
    for i in 0..count {
        let instance_seed = seed.wrapping_add(i);
        let (q, db) = gen_instance(instance_seed, &limits);
        match answers_agree(&q, &db, cap, encoding) {
            Ok(true) => {}
            Ok(false) => {
                let small = shrink_disagreement(&q, &db, cap, encoding)?;
                let (query_text, facts_text) = render_instance(&q, &small);
                eprintln!("disagreement at seed {instance_seed}:");
                eprint!("# query\n{query_text}# facts\n{facts_text}");
                let oracle = certain_answer_oracle(&q, &small, cap)?;
                let direct = certain_answer_direct(&q, &small)?.answer;
                eprintln!("oracle: {oracle}");
                eprintln!("direct: {direct}");
                return Ok(false);
            }
            Err(e) => {
                // Caps are part of the contract: report and continue.
                eprintln!("seed {instance_seed}: skipped ({e})");
            }
        }
    }
    println!("{count} instances agree");
    Ok(true)
}
