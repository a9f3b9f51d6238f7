use cqa_core::mgraph::find_mcycle;
use cqa_core::pipeline::reduce_once;
use cqa_core::text::{parse_database, parse_query};
fn main() {
    let q = parse_query(cqa_core::fixtures::RS_QUERY).unwrap();
    let db = parse_database(cqa_core::fixtures::RS_FACTS, &q).unwrap();
    let cycle = find_mcycle(&q).unwrap().unwrap();
    let (reduced, db2) = reduce_once(&q, &cycle, &db).unwrap();
    println!("reduced: {reduced}");
    for f in db2.facts() { println!("{f}."); }
}
