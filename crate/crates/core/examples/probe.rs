use cqa_core::attack::attack_graph;
use cqa_core::codegen::{compose_pipeline, emit_garbage_program, EqEncoding};
use cqa_core::datalog::{evaluate, ConstOrder, Store};
use cqa_core::garbage::{garbage_oracle, maximal_garbage_set};
use cqa_core::gen::{gen_logspace_instance, GenLimits};
use cqa_core::mgraph::find_mcycle;
use cqa_core::model::{BlockKey, Database, ModelError};
use cqa_core::pipeline::{certain_answer_oracle, reduce_once};
use cqa_core::saturate::{saturate, saturate_database};
use std::collections::BTreeSet;
use std::time::Instant;

fn edb(db: &Database) -> Store {
    let mut store = Store::new();
    for f in db.facts() {
        store.entry(f.relation.clone()).or_default().insert(f.values().cloned().collect());
    }
    store
}

fn main() {
    let limits = GenLimits::default();
    let cap: u64 = 1 << 20;
    let start = Instant::now();
    let (mut with_cycle, mut oracle_checked, mut sat_nontrivial, mut reduced_count) = (0, 0, 0, 0);
    for seed in 0..300u64 {
        let (q, db) = gen_logspace_instance(seed, &limits);

        // Criterion 8: saturation preserves the class and the answer.
        let sat = saturate(&q);
        assert!(!attack_graph(&sat.query).has_strong_cycle(), "saturation broke the class at {seed}");
        let db_sat = saturate_database(&sat, &db).unwrap();
        if !sat.stages.is_empty() {
            sat_nontrivial += 1;
            let before = match certain_answer_oracle(&q, &db, cap) {
                Ok(v) => v, Err(ModelError::CapExceeded { .. }) => continue, Err(e) => panic!("{e}"),
            };
            let after = certain_answer_oracle(&sat.query, &db_sat, cap).unwrap();
            assert_eq!(before, after, "purification changed the answer at {seed}");
        }

        // Criterion 4: garbage three ways, on the saturated instance.
        let Some(cycle) = find_mcycle(&sat.query).ok().flatten() else { continue };
        with_cycle += 1;
        let report = maximal_garbage_set(&sat.query, &cycle, &db_sat);
        let gp = emit_garbage_program(&sat.query, &cycle, EqEncoding::Faithful).unwrap();
        let out = evaluate(&gp, &edb(&db_sat), ConstOrder::Natural).unwrap();
        let mut datalog_blocks: BTreeSet<BlockKey> = BTreeSet::new();
        for rel in cycle.atoms() {
            if let Some(rows) = out.get(&format!("del_{rel}")) {
                for row in rows {
                    datalog_blocks.insert(BlockKey { relation: rel.clone(), key: row.clone() });
                }
            }
        }
        assert_eq!(datalog_blocks, report.garbage_blocks, "datalog vs fixpoint at {seed}");
        let names: BTreeSet<String> = cycle.atoms().iter().cloned().collect();
        match garbage_oracle(&sat.query, &names, &db_sat) {
            Ok(oracle_blocks) => {
                oracle_checked += 1;
                assert_eq!(oracle_blocks, report.garbage_blocks, "oracle vs fixpoint at {seed}");
            }
            Err(ModelError::CapExceeded { .. }) => {}
            Err(e) => panic!("{e}"),
        }

        // Criterion 8 (cycle collapse): reduction preserves class and answer.
        let kept = report.remainder(&db_sat);
        let (reduced, reduced_db) = reduce_once(&sat.query, &cycle, &kept).unwrap();
        assert!(!attack_graph(&reduced).has_strong_cycle(), "reduction broke the class at {seed}");
        reduced_count += 1;
        let before = match certain_answer_oracle(&sat.query, &kept, cap) {
            Ok(v) => v, Err(ModelError::CapExceeded { .. }) => continue, Err(e) => panic!("{e}"),
        };
        let after = certain_answer_oracle(&reduced, &reduced_db, cap).unwrap();
        assert_eq!(before, after, "reduction changed the answer at {seed}");

        // Criterion 9: compiled answers are order-invariant.
        let pp = compose_pipeline(&q, EqEncoding::Faithful).unwrap();
        let natural = evaluate(&pp.program, &edb(&db), ConstOrder::Natural).unwrap();
        let reversed = evaluate(&pp.program, &edb(&db), ConstOrder::Reversed).unwrap();
        assert_eq!(
            natural.get(&pp.goal).is_some_and(|s| !s.is_empty()),
            reversed.get(&pp.goal).is_some_and(|s| !s.is_empty()),
            "order changed the answer at {seed}"
        );
    }
    println!(
        "300 seeds in {:.1}s: {} cycles, {} garbage-oracle checks, {} saturations, {} reductions",
        start.elapsed().as_secs_f64(), with_cycle, oracle_checked, sat_nontrivial, reduced_count
    );
}
