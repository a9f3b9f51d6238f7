use cqa_core::attack::{attack_graph, classify_complexity};
use cqa_core::saturate::saturate;
use cqa_core::text::parse_query;

fn main() {
    let q = parse_query(
        "q :- S1(z | u), S2(u | w), R1(z | u2), R2(u2 | w), T1(u | v), T2(v | w).",
    )
    .unwrap();
    let g = attack_graph(&q);
    println!("raw query attack graph:\n{}", g.to_dot());
    println!("raw class: {:?}", classify_complexity(&q));
    let sat = saturate(&q);
    println!("saturation stages: {}", sat.stages.len());
    for s in &sat.stages {
        println!("  stage: fd={} host={} atom={}", s.fd, s.host, s.atom.name());
    }
    let g2 = attack_graph(&sat.query);
    println!("saturated attack graph:\n{}", g2.to_dot());
    println!("saturated class: {:?}", classify_complexity(&sat.query));
}
