//! Acceptance suite: one test per release criterion, each printing a
//! single PASS line (run with `--nocapture` to see them all). Every
//! numeric tolerance and corpus size here is a release gate; loosening
//! one is a release decision, not a test fix.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use cqa_core::attack::{
    attack_graph, classify_complexity, has_key_join_property, Complexity,
};
use cqa_core::codegen::{
    compose_pipeline, emit_garbage_program, emit_reduction_program, EqEncoding,
};
use cqa_core::datalog::{evaluate, validate, ConstOrder, Store};
use cqa_core::fixtures;
use cqa_core::garbage::{brute_longcycle, garbage_oracle, longcycle, maximal_garbage_set};
use cqa_core::gen::{gen_key_join_query, gen_kpartite, gen_logspace_instance, GenLimits};
use cqa_core::mgraph::{block_quotient, chook_graph, find_mcycle, m_graph};
use cqa_core::model::{BlockKey, Database, ModelError, Query, DEFAULT_REPAIR_CAP};
use cqa_core::pipeline::{certain_answer_direct, certain_answer_oracle, reduce_once};
use cqa_core::saturate::{saturate, saturate_database};
use cqa_core::text::{parse_database, parse_query};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn edb(db: &Database) -> Store {
    let mut store = Store::new();
    for f in db.facts() {
        store.entry(f.relation.clone()).or_default().insert(f.values().cloned().collect());
    }
    store
}

fn compiled_answer(q: &Query, db: &Database, encoding: EqEncoding, order: ConstOrder) -> bool {
    let pp = compose_pipeline(q, encoding).expect("corpus queries compile");
    let out = evaluate(&pp.program, &edb(db), order).expect("compiled programs evaluate");
    out.get(&pp.goal).is_some_and(|s| !s.is_empty())
}

/// The differential corpus: the first `n` seeds, deterministic, never in
/// the hard class.
fn corpus(n: u64) -> impl Iterator<Item = (u64, Query, Database)> {
    let limits = GenLimits::default();
    (0..n).map(move |seed| {
        let (q, db) = gen_logspace_instance(seed, &limits);
        (seed, q, db)
    })
}

#[test]
fn criterion_1_worked_example_structures() {
    let start = Instant::now();

    // (a) Attack graph and key-reachability graph of the six-atom query.
    let q1 = parse_query(fixtures::Q1_QUERY).unwrap();
    let g = attack_graph(&q1);
    let edges: BTreeSet<(String, String)> =
        g.edges.iter().map(|e| (e.from.clone(), e.to.clone())).collect();
    let want_attacks: BTreeSet<(String, String)> = [
        ("R", "S"),
        ("R", "T1"),
        ("R", "T2"),
        ("R", "Tc"),
        ("R", "U"),
        ("S", "R"),
        ("S", "T1"),
        ("S", "T2"),
        ("S", "Tc"),
        ("S", "U"),
        ("U", "R"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(edges, want_attacks, "attack edge set drifted");
    assert!(g.edges.iter().all(|e| !e.strong), "all attacks must be weak");
    let r_to_u = g.edge("R", "U").expect("R must attack U");
    assert_eq!(r_to_u.witness, vec![("y".to_string(), "U".to_string())]);
    let initial = g.initial_strong_components();
    let want_initial: BTreeSet<String> =
        ["R", "S", "U"].into_iter().map(str::to_string).collect();
    assert_eq!(initial, vec![want_initial]);

    let m = m_graph(&q1);
    let want_m: BTreeSet<(String, String)> = [
        ("R", "S"),
        ("S", "T1"),
        ("S", "T2"),
        ("S", "Tc"),
        ("S", "U"),
        ("T1", "T2"),
        ("T1", "Tc"),
        ("T2", "T1"),
        ("T2", "Tc"),
        ("Tc", "T1"),
        ("Tc", "T2"),
        ("U", "R"),
        ("U", "S"),
        ("U", "T1"),
        ("U", "T2"),
        ("U", "Tc"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(*m.edges(), want_m, "key-reachability edge set drifted");

    // (b) Fact-level structures of the nine-fact database.
    let c3 = parse_query(fixtures::C3_QUERY).unwrap();
    let db = parse_database(fixtures::C3_FACTS, &c3).unwrap();
    let cycle = find_mcycle(&c3).unwrap().unwrap();
    let chg = chook_graph(&c3, &cycle, &db);
    assert_eq!(chg.vertices().len(), 9);
    assert_eq!(chg.edges().len(), 15);
    let quotient = block_quotient(&chg);
    assert_eq!(quotient.vertices().len(), 6);
    assert_eq!(quotient.edges().len(), 9);
    assert_eq!(quotient.elementary_cycles(3).len(), 4);
    let six = quotient.elementary_cycles(6);
    assert_eq!(six.len(), 1, "the quotient must have a unique 6-cycle");
    let names: Vec<String> = six[0].iter().map(|b| b.to_string()).collect();
    assert_eq!(
        names,
        [
            "R(\"a1\" | *)",
            "S(\"b1\" | *)",
            "T(\"c1\" | *)",
            "R(\"a2\" | *)",
            "S(\"b2\" | *)",
            "T(\"c2\" | *)"
        ]
    );

    // (c) Identifier tables of the two-atom cycle, byte for byte.
    let rs = parse_query(fixtures::RS_QUERY).unwrap();
    let db = parse_database(fixtures::RS_FACTS, &rs).unwrap();
    let cycle = find_mcycle(&rs).unwrap().unwrap();
    assert!(maximal_garbage_set(&rs, &cycle, &db).garbage_blocks.is_empty());
    let (reduced, db2) = reduce_once(&rs, &cycle, &db).unwrap();
    assert_eq!(reduced.to_string(), "q :- N1@c(x | u), N2@c(y | u), T(u | x, y, z).");
    let rendered: String = db2.facts().map(|f| format!("{f}.\n")).collect();
    assert_eq!(
        rendered,
        "N1(\"a\" | \"a\").\n\
         N1(\"b\" | \"a\").\n\
         N1(\"c\" | \"c\").\n\
         N2(1 | \"a\").\n\
         N2(2 | \"a\").\n\
         N2(3 | \"c\").\n\
         T(\"a\" | \"a\", 1, \"alpha\").\n\
         T(\"a\" | \"b\", 1, \"beta\").\n\
         T(\"a\" | \"b\", 2, \"beta\").\n\
         T(\"c\" | \"c\", 3, \"beta\").\n",
        "identifier tables drifted"
    );

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(3), "took {elapsed:?}, budget 3 s");
    println!("criterion 1: PASS — worked-example graphs and identifier tables exact ({elapsed:?})");
}

#[test]
fn criterion_2_nine_fact_semantics() {
    let start = Instant::now();
    let c3 = parse_query(fixtures::C3_QUERY).unwrap();
    let db = parse_database(fixtures::C3_FACTS, &c3).unwrap();
    let cycle = find_mcycle(&c3).unwrap().unwrap();
    let report = maximal_garbage_set(&c3, &cycle, &db);
    assert_eq!(report.garbage_fact_count(&db), 9, "all nine facts are garbage");
    assert_eq!(db.enumerate_repairs(DEFAULT_REPAIR_CAP).unwrap().count(), 8);
    assert!(!certain_answer_oracle(&c3, &db, DEFAULT_REPAIR_CAP).unwrap());
    assert!(!certain_answer_direct(&c3, &db).unwrap().answer);
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}, budget 1 s");
    println!("criterion 2: PASS — nine-fact database: 9 garbage facts, 8 repairs, certainly false ({elapsed:?})");
}

#[test]
fn criterion_3_three_way_differential_suite() {
    let start = Instant::now();
    let mut compared = 0u64;
    for (seed, q, db) in corpus(1000) {
        let oracle = match certain_answer_oracle(&q, &db, DEFAULT_REPAIR_CAP) {
            Ok(v) => v,
            Err(ModelError::CapExceeded { .. }) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        let direct = certain_answer_direct(&q, &db).unwrap();
        assert!(!direct.oracle_fallback, "seed {seed}: corpus must stay out of the hard class");
        assert_eq!(direct.answer, oracle, "seed {seed}: direct vs oracle\n{q}");
        let compiled = compiled_answer(&q, &db, EqEncoding::Faithful, ConstOrder::Natural);
        assert_eq!(compiled, oracle, "seed {seed}: compiled vs oracle\n{q}");
        compared += 1;
    }
    assert!(compared >= 1000, "only {compared} instances fit under the repair cap");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}, budget 10 min");
    println!("criterion 3: PASS — {compared} instances, direct = compiled = oracle ({elapsed:?})");
}

#[test]
fn criterion_4_garbage_three_ways() {
    let start = Instant::now();
    let (mut datalog_checked, mut oracle_checked) = (0u64, 0u64);
    for (seed, q, db) in corpus(1000) {
        let sat = saturate(&q);
        let db = saturate_database(&sat, &db).unwrap();
        let q = sat.query;
        let Some(cycle) = find_mcycle(&q).ok().flatten() else { continue };
        let report = maximal_garbage_set(&q, &cycle, &db);
        let program = emit_garbage_program(&q, &cycle, EqEncoding::Faithful).unwrap();
        let out = evaluate(&program, &edb(&db), ConstOrder::Natural).unwrap();
        let mut datalog_blocks: BTreeSet<BlockKey> = BTreeSet::new();
        for rel in cycle.atoms() {
            for row in out.get(&format!("del_{rel}")).into_iter().flatten() {
                datalog_blocks.insert(BlockKey { relation: rel.clone(), key: row.clone() });
            }
        }
        assert_eq!(
            datalog_blocks, report.garbage_blocks,
            "seed {seed}: compiled deletions vs direct fixpoint\n{q}"
        );
        datalog_checked += 1;
        let names: BTreeSet<String> = cycle.atoms().iter().cloned().collect();
        match garbage_oracle(&q, &names, &db) {
            Ok(blocks) => {
                assert_eq!(
                    blocks, report.garbage_blocks,
                    "seed {seed}: exhaustive oracle vs direct fixpoint\n{q}"
                );
                oracle_checked += 1;
            }
            Err(ModelError::CapExceeded { .. }) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(datalog_checked >= 200, "only {datalog_checked} cycle instances in the corpus");
    assert!(oracle_checked >= 150, "only {oracle_checked} instances under the oracle block cap");
    let elapsed = start.elapsed();
    println!("criterion 4: PASS — garbage agreed on {datalog_checked} compiled / {oracle_checked} exhaustive checks ({elapsed:?})");
}

#[test]
fn criterion_5_long_cycle_decision() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c6f6e67);
    let mut checked = 0u64;
    let mut positive = 0u64;
    for k in [2usize, 3] {
        let per_part = if k == 2 { 6 } else { 4 };
        let goal = 250;
        let mut done = 0;
        while done < goal {
            let Some(g) = gen_kpartite(&mut rng, k, per_part) else { continue };
            if g.vertex_count() > 12 {
                continue;
            }
            let fast = longcycle(&g, k).expect("generated instances are valid");
            let brute = brute_longcycle(&g, k).expect("within the vertex cap");
            assert_eq!(fast, brute, "disagreement on\n{}", g.to_dot());
            done += 1;
            checked += 1;
            positive += u64::from(fast);
        }
    }
    assert!(checked >= 500);
    assert!(positive > 50, "generator must produce positive instances");
    assert!(positive < checked, "generator must produce negative instances");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}, budget 1 min");
    println!("criterion 5: PASS — {checked} long-cycle instances agree with brute force ({elapsed:?})");
}

#[test]
fn criterion_6_every_emitted_program_validates() {
    let start = Instant::now();
    let mut programs = 0u64;
    let mut check = |program: &cqa_core::datalog::Program| {
        let v = validate(program);
        assert!(v.stratified && v.linear && v.symmetric, "validator rejected:\n{program}");
        programs += 1;
    };
    for (_, q, _) in corpus(300) {
        for encoding in [EqEncoding::Faithful, EqEncoding::Builtin] {
            check(&compose_pipeline(&q, encoding).unwrap().program);
        }
        let sat = saturate(&q);
        if let Some(cycle) = find_mcycle(&sat.query).ok().flatten() {
            for encoding in [EqEncoding::Faithful, EqEncoding::Builtin] {
                check(&emit_garbage_program(&sat.query, &cycle, encoding).unwrap());
                check(&emit_reduction_program(&sat.query, &cycle, encoding).unwrap().0);
            }
        }
    }
    for src in [fixtures::C3_QUERY, fixtures::Q1_QUERY, fixtures::RS_QUERY, fixtures::MOV_QUERY] {
        let q = parse_query(src).unwrap();
        for encoding in [EqEncoding::Faithful, EqEncoding::Builtin] {
            check(&compose_pipeline(&q, encoding).unwrap().program);
        }
    }
    assert!(programs >= 600, "only {programs} programs checked");
    let elapsed = start.elapsed();
    println!("criterion 6: PASS — {programs} emitted programs stratified, linear, symmetric ({elapsed:?})");
}

#[test]
fn criterion_7_key_join_queries_compile() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b65796a);
    let limits = GenLimits::default();
    for i in 0..200 {
        let q = gen_key_join_query(&mut rng, &limits);
        assert!(has_key_join_property(&q), "instance {i} lost the property: {q}");
        let class = classify_complexity(&q);
        assert_ne!(class, Complexity::CoNpComplete, "instance {i} classified hard: {q}");
        compose_pipeline(&q, EqEncoding::Faithful)
            .unwrap_or_else(|e| panic!("instance {i} refused: {e}\n{q}"));
    }
    let elapsed = start.elapsed();
    println!("criterion 7: PASS — 200 key-join queries never hard, all compile ({elapsed:?})");
}

#[test]
fn criterion_8_saturation_and_collapse_preserve_everything() {
    let start = Instant::now();
    let (mut saturations, mut collapses) = (0u64, 0u64);
    for (seed, q, db) in corpus(600) {
        let sat = saturate(&q);
        assert!(
            !attack_graph(&sat.query).has_strong_cycle(),
            "seed {seed}: saturation introduced a strong cycle\n{q}"
        );
        let db_sat = saturate_database(&sat, &db).unwrap();
        if !sat.stages.is_empty() {
            match certain_answer_oracle(&q, &db, DEFAULT_REPAIR_CAP) {
                Ok(before) => {
                    let after =
                        certain_answer_oracle(&sat.query, &db_sat, DEFAULT_REPAIR_CAP).unwrap();
                    assert_eq!(before, after, "seed {seed}: purification changed the answer\n{q}");
                    saturations += 1;
                }
                Err(ModelError::CapExceeded { .. }) => {}
                Err(e) => panic!("seed {seed}: {e}"),
            }
        }
        let Some(cycle) = find_mcycle(&sat.query).ok().flatten() else { continue };
        let report = maximal_garbage_set(&sat.query, &cycle, &db_sat);
        let kept = report.remainder(&db_sat);
        let (reduced, reduced_db) = reduce_once(&sat.query, &cycle, &kept).unwrap();
        assert!(
            !attack_graph(&reduced).has_strong_cycle(),
            "seed {seed}: cycle collapse introduced a strong cycle\n{q}"
        );
        assert!(
            reduced.iatoms().count() < sat.query.iatoms().count(),
            "seed {seed}: cycle collapse must shrink the inconsistent part"
        );
        match certain_answer_oracle(&sat.query, &kept, DEFAULT_REPAIR_CAP) {
            Ok(before) => {
                let after = certain_answer_oracle(&reduced, &reduced_db, DEFAULT_REPAIR_CAP)
                    .unwrap();
                assert_eq!(before, after, "seed {seed}: cycle collapse changed the answer\n{q}");
                collapses += 1;
            }
            Err(ModelError::CapExceeded { .. }) => {}
            Err(e) => panic!("seed {seed}: {e}"),
        }
    }
    assert!(saturations >= 50, "only {saturations} saturating instances in the corpus");
    assert!(collapses >= 100, "only {collapses} collapse instances in the corpus");
    let elapsed = start.elapsed();
    println!("criterion 8: PASS — {saturations} saturations and {collapses} cycle collapses preserve class and answer ({elapsed:?})");
}

#[test]
fn criterion_9_order_invariance() {
    let start = Instant::now();
    let mut compared = 0u64;
    for (seed, q, db) in corpus(1000) {
        let natural = compiled_answer(&q, &db, EqEncoding::Faithful, ConstOrder::Natural);
        let reversed = compiled_answer(&q, &db, EqEncoding::Faithful, ConstOrder::Reversed);
        assert_eq!(natural, reversed, "seed {seed}: constant order changed the answer\n{q}");
        compared += 1;
    }
    assert_eq!(compared, 1000);
    let elapsed = start.elapsed();
    println!("criterion 9: PASS — 1000 instances answer identically under both constant orders ({elapsed:?})");
}
