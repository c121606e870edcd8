mod common;

use std::collections::BTreeSet;

use common::nets::*;
use multiswitch::apps::net::{compile_net, evaluate, evaluate_topological, reconfigure, Link, NetError, NetSpec, Rewrite};
use multiswitch::MachineShape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn wide() -> MachineShape {
    MachineShape::uniform(16, 4, 4).unwrap()
}

const AND_JOIN: &str = "
node A 1 or
node B 1 or
node C 2 and  # joins A and B
link A C 0
link B C 1
input A B
output C
";

#[test]
fn and_node_needs_both_inputs() {
    let spec = NetSpec::parse(AND_JOIN).unwrap();
    let net = compile_net(&spec, &MachineShape::default()).unwrap();
    assert_eq!(net.run(&set(&["A", "B"])).unwrap().fired, set(&["A", "B", "C"]));
    assert_eq!(net.run(&set(&["A"])).unwrap().fired, set(&["A"]));
    assert_eq!(net.run(&set(&[])).unwrap().fired, set(&[]));
}

#[test]
fn spec_text_round_trips() {
    let spec = NetSpec::parse(AND_JOIN).unwrap();
    assert_eq!(NetSpec::parse(&spec.to_string()).unwrap(), spec);
}

#[test]
fn bad_specs_are_rejected() {
    assert!(matches!(NetSpec::parse("node A 1 xor"), Err(NetError::Parse { line: 1, .. })));
    assert!(matches!(NetSpec::parse("node A 1 or\nlink A B 0"), Err(NetError::Spec(_))));
    assert!(matches!(NetSpec::parse("node A 1 or\nlink A A 1"), Err(NetError::Spec(_))));
    assert!(matches!(NetSpec::parse("node A 0 or"), Err(NetError::Spec(_))));
    assert!(matches!(NetSpec::parse("wire A B"), Err(NetError::Parse { .. })));
}

#[test]
fn cycle_fires_each_node_once() {
    let spec = NetSpec::parse("node A 2 or\nnode B 1 or\nlink A B 0\nlink B A 1\ninput A").unwrap();
    let net = compile_net(&spec, &MachineShape::default()).unwrap();
    for _ in 0..3 {
        let epoch = net.run(&set(&["A"])).unwrap();
        assert_eq!(epoch.order, ["A", "B"]);
    }
    assert!(evaluate_topological(&spec, &set(&["A"])).is_none());
    assert_eq!(evaluate(&spec, &set(&["A"])), set(&["A", "B"]));
}

#[test]
fn too_many_nodes_is_a_capacity_error() {
    let text: String = (0..3).map(|i| format!("node n{i} 1 or\n")).collect();
    let spec = NetSpec::parse(&text).unwrap();
    let small = MachineShape::uniform(2, 4, 2).unwrap();
    assert!(matches!(compile_net(&spec, &small), Err(NetError::Capacity(_))));
}

#[test]
fn promote_fires_on_stimulus() {
    let spec = NetSpec::parse(AND_JOIN).unwrap();
    let top = reconfigure(&spec, &[Rewrite::Promote("C".into())]).unwrap();
    assert!(top.links.is_empty());
    let net = compile_net(&top, &MachineShape::default()).unwrap();
    assert_eq!(net.run(&set(&["C"])).unwrap().fired, set(&["C"]));
}

#[test]
fn empty_swap_list_is_identity() {
    let spec = NetSpec::parse(AND_JOIN).unwrap();
    assert_eq!(reconfigure(&spec, &[]).unwrap(), spec);
}

#[test]
fn dangling_rewrite_is_rejected() {
    let spec = NetSpec::parse(AND_JOIN).unwrap();
    assert!(reconfigure(&spec, &[Rewrite::AddLink(Link::new("A", "Z", 0))]).is_err());
    assert!(reconfigure(&spec, &[Rewrite::RemoveLink(Link::new("C", "A", 0))]).is_err());
    assert!(reconfigure(&spec, &[Rewrite::Promote("Z".into())]).is_err());
}

#[test]
fn random_graphs_match_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let spec = random_graph(&mut rng, 10);
        let net = compile_net(&spec, &wide()).unwrap();
        for _ in 0..5 {
            let s = random_stimulus(&mut rng, &spec);
            assert_eq!(net.run(&s).unwrap().fired, evaluate(&spec, &s), "{spec}\nstimulus {s:?}");
        }
    }
}

#[test]
fn topological_and_fixpoint_agree_on_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let spec = random_dag(&mut rng, 16);
        for s in all_stimuli(&spec).into_iter().take(32) {
            assert_eq!(evaluate_topological(&spec, &s).unwrap(), evaluate(&spec, &s));
        }
    }
}
