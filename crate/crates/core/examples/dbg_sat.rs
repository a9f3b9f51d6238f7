use cqa_core::saturate::{saturate, saturate_database};
use cqa_core::text::{parse_database, parse_query, format_database};
use cqa_core::model::eval_bcq;
fn main() {
    let q = parse_query("q :- S1(z | u), S2(u | w), R1(z | u2), R2(u2 | w), T1(u | v), T2(v | w).").unwrap();
    let r = saturate(&q);
    let db = parse_database(
        "S1(1 | u1)\nS2(u1 | wa)\nR1(1 | v1)\nR2(v1 | wa)\nT1(u1 | t)\nT2(t | wa)\n\
         S1(1 | u2)\nS2(u2 | wb)\nR1(1 | v2)\nR2(v2 | wb)\nT1(u2 | t2)\nT2(t2 | wb)\n\
         S1(2 | u3)\nS2(u3 | wc)\nR1(2 | v3)\nR2(v3 | wc)\nT1(u3 | t3)\nT2(t3 | wc)\n",
        &q,
    ).unwrap();
    let (_, embs) = eval_bcq(&q, &db);
    println!("embeddings over q: {}", embs.len());
    for e in &embs { println!("  {e}"); }
    let out = saturate_database(&r, &db).unwrap();
    println!("final db:\n{}", format_database(&out));
}
