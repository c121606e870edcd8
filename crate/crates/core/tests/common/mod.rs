#![allow(dead_code)]

use std::path::PathBuf;

use multiswitch::lang::{compile, CompileOptions, Compiled, Mode, Policy};
use multiswitch::vm::{Machine, RunResult, Value};
use multiswitch::MachineShape;

pub fn program_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

pub fn source(name: &str) -> String {
    std::fs::read_to_string(program_dir().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Every corpus program that is expected to terminate.
pub fn corpus() -> Vec<(String, String)> {
    let mut v: Vec<_> = std::fs::read_dir(program_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "msl"))
        .filter(|p| !p.ends_with("infinite_loop.msl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    v.sort();
    v
}

pub fn build(src: &str, mode: Mode, shape: &MachineShape, policy: Policy) -> Compiled {
    let opts = CompileOptions { mode, policy, shape: shape.clone(), ..Default::default() };
    compile(src, &opts).unwrap_or_else(|e| panic!("compile ({mode}): {e}"))
}

pub fn run(compiled: &Compiled, shape: &MachineShape) -> RunResult {
    let m = Machine::load(compiled.program.clone(), shape).expect("load");
    m.run_with_limit(100_000).expect("run")
}

pub fn run_src(src: &str, mode: Mode, shape: &MachineShape) -> RunResult {
    run(&build(src, mode, shape, Policy::Page), shape)
}

pub fn text(values: &[Value]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

pub mod nets {
    use std::collections::BTreeSet;

    use multiswitch::apps::net::{Link, NetSpec, Node};
    use multiswitch::GateKind;
    use rand::Rng;

    fn name(i: usize) -> String {
        format!("n{i}")
    }

    /// Every DAG on 1..=`max` nodes with edges running from lower to higher
    /// index, each in three kind patterns. Each edge gets its own input line
    /// and roots are the inputs.
    pub fn all_small_dags(max: usize) -> Vec<NetSpec> {
        let mut out = Vec::new();
        for n in 1..=max {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|j| (0..j).map(move |i| (i, j))).collect();
            for mask in 0u32..(1 << pairs.len()) {
                let edges: Vec<(usize, usize)> =
                    pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
                let mixed = mask as usize % (1 << n);
                for variant in 0..3 {
                    let kind = |i: usize| match variant {
                        0 => GateKind::And,
                        1 => GateKind::Or,
                        _ if mixed >> i & 1 == 1 => GateKind::Or,
                        _ => GateKind::And,
                    };
                    out.push(layered(n, &edges, kind));
                }
            }
        }
        out
    }

    fn layered(n: usize, edges: &[(usize, usize)], kind: impl Fn(usize) -> GateKind) -> NetSpec {
        let mut spec = NetSpec::default();
        for j in 0..n {
            let parents: Vec<usize> = edges.iter().filter(|e| e.1 == j).map(|e| e.0).collect();
            spec.nodes.push(Node { name: name(j), arity: parents.len().max(1), kind: kind(j) });
            for (line, &p) in parents.iter().enumerate() {
                spec.links.push(Link::new(&name(p), &name(j), line));
            }
            if parents.is_empty() {
                spec.inputs.push(name(j));
            }
        }
        spec.outputs.push(name(n - 1));
        spec
    }

    /// Random DAG with 1..=`max` nodes. Lines may have several feeders or
    /// none, and some interior nodes are inputs too.
    pub fn random_dag(rng: &mut impl Rng, max: usize) -> NetSpec {
        let n = rng.gen_range(1..=max);
        let mut spec = NetSpec::default();
        for j in 0..n {
            let arity = rng.gen_range(1..=3);
            let kind = if rng.gen_bool(0.5) { GateKind::And } else { GateKind::Or };
            spec.nodes.push(Node { name: name(j), arity, kind });
            if j > 0 {
                for line in 0..arity {
                    for _ in 0..rng.gen_range(0..=2) {
                        let p = rng.gen_range(0..j);
                        spec.links.push(Link::new(&name(p), &name(j), line));
                    }
                }
            }
            let fed = spec.links.iter().any(|l| l.to == name(j));
            if !fed || rng.gen_bool(0.2) {
                spec.inputs.push(name(j));
            }
        }
        spec
    }

    /// Random graph that may contain cycles.
    pub fn random_graph(rng: &mut impl Rng, max: usize) -> NetSpec {
        let mut spec = random_dag(rng, max);
        let n = spec.nodes.len();
        for _ in 0..rng.gen_range(0..=n) {
            let from = rng.gen_range(0..n);
            let to = rng.gen_range(0..n);
            let line = rng.gen_range(0..spec.nodes[to].arity);
            spec.links.push(Link::new(&name(from), &name(to), line));
        }
        spec
    }

    pub fn all_stimuli(spec: &NetSpec) -> Vec<BTreeSet<String>> {
        let k = spec.inputs.len();
        (0u32..1 << k)
            .map(|m| (0..k).filter(|b| m >> b & 1 == 1).map(|b| spec.inputs[b].clone()).collect())
            .collect()
    }

    pub fn random_stimulus(rng: &mut impl Rng, spec: &NetSpec) -> BTreeSet<String> {
        spec.inputs.iter().filter(|_| rng.gen_bool(0.5)).cloned().collect()
    }
}
