//! Networks whose nodes are multi-switches.
//!
//! Text format, one item per line, `#` starts a comment:
//!
//! ```text
//! node A 1 or
//! node B 1 or
//! node C 2 and
//! link A C 0
//! link B C 1
//! input A B
//! output C
//! ```
//!
//! A stimulus raises every line of a stimulated input node that no link
//! feeds. A node fires at most once per epoch: its relay thread clears the
//! node's target before driving the linked lines, so later firings in the
//! same epoch start nothing. One machine run is one epoch.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::gate::{eval_gate, GateKind};
use crate::isa::{Assembly, CmpOp, Instruction, IsaError, Program, Reg};
use crate::lang::{allocate, CapacityError, Demand, Policy};
use crate::shape::MachineShape;
use crate::vm::{Machine, RunMetrics, VmError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("net line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("net spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Vm(#[from] VmError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub name: String,
    pub arity: usize,
    pub kind: GateKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Link {
    pub from: String,
    pub to: String,
    pub line: usize,
}

impl Link {
    pub fn new(from: &str, to: &str, line: usize) -> Self {
        Link { from: from.into(), to: to.into(), line }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NetSpec {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

fn kind_name(k: GateKind) -> &'static str {
    match k {
        GateKind::And => "and",
        GateKind::Or => "or",
    }
}

impl fmt::Display for NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for n in &self.nodes {
            writeln!(f, "node {} {} {}", n.name, n.arity, kind_name(n.kind))?;
        }
        for l in &self.links {
            writeln!(f, "link {} {} {}", l.from, l.to, l.line)?;
        }
        if !self.inputs.is_empty() {
            writeln!(f, "input {}", self.inputs.join(" "))?;
        }
        if !self.outputs.is_empty() {
            writeln!(f, "output {}", self.outputs.join(" "))?;
        }
        Ok(())
    }
}

impl NetSpec {
    pub fn parse(text: &str) -> Result<NetSpec, NetError> {
        let mut spec = NetSpec::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |msg: String| NetError::Parse { line, msg };
            let body = raw.split('#').next().unwrap_or("");
            let words: Vec<&str> = body.split_whitespace().collect();
            let Some((&head, rest)) = words.split_first() else { continue };
            let num = |s: &str| s.parse::<usize>().map_err(|_| err(format!("`{s}` is not a number")));
            match head {
                "node" => {
                    let [name, arity, kind] = rest else {
                        return Err(err("expected `node NAME ARITY KIND`".into()));
                    };
                    let kind = match kind.to_ascii_lowercase().as_str() {
                        "and" => GateKind::And,
                        "or" => GateKind::Or,
                        other => return Err(err(format!("unknown node kind `{other}`"))),
                    };
                    spec.nodes.push(Node { name: name.to_string(), arity: num(arity)?, kind });
                }
                "link" => {
                    let [from, to, l] = rest else {
                        return Err(err("expected `link FROM TO LINE`".into()));
                    };
                    spec.links.push(Link::new(from, to, num(l)?));
                }
                "input" => spec.inputs.extend(rest.iter().map(|s| s.to_string())),
                "output" => spec.outputs.extend(rest.iter().map(|s| s.to_string())),
                other => return Err(err(format!("unknown item `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    fn index(&self, name: &str) -> Result<usize, NetError> {
        self.nodes.iter().position(|n| n.name == name).ok_or_else(|| NetError::Spec(format!("no node `{name}`")))
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(&n.name) {
                return Err(NetError::Spec(format!("node `{}` defined twice", n.name)));
            }
            if n.arity == 0 {
                return Err(NetError::Spec(format!("node `{}` has arity 0", n.name)));
            }
        }
        for l in &self.links {
            self.index(&l.from)?;
            let to = &self.nodes[self.index(&l.to)?];
            if l.line >= to.arity {
                return Err(NetError::Spec(format!(
                    "link {} -> {} uses line {} but `{}` has arity {}",
                    l.from, l.to, l.line, to.name, to.arity
                )));
            }
        }
        for name in self.inputs.iter().chain(&self.outputs) {
            self.index(name)?;
        }
        Ok(())
    }

    /// Lines of `node` that no link feeds; a stimulus raises these.
    fn free_lines(&self, node: &Node) -> Vec<usize> {
        (0..node.arity).filter(|&l| !self.links.iter().any(|k| k.to == node.name && k.line == l)).collect()
    }

    fn line_high(&self, node: &Node, line: usize, stimulus: &BTreeSet<String>, fired: &BTreeSet<String>) -> bool {
        let stimulated = self.inputs.contains(&node.name) && stimulus.contains(&node.name);
        let fed = self.links.iter().filter(|k| k.to == node.name && k.line == line);
        let mut any_link = false;
        for k in fed {
            any_link = true;
            if fired.contains(&k.from) {
                return true;
            }
        }
        stimulated && !any_link
    }

    fn fires(&self, node: &Node, stimulus: &BTreeSet<String>, fired: &BTreeSet<String>) -> bool {
        let lines: Vec<bool> = (0..node.arity).map(|l| self.line_high(node, l, stimulus, fired)).collect();
        eval_gate(node.kind, &lines).expect("arity checked")
    }
}

/// Nodes that fire in one epoch, as the least fixpoint of the firing rule.
/// Works on any graph.
pub fn evaluate(spec: &NetSpec, stimulus: &BTreeSet<String>) -> BTreeSet<String> {
    let mut fired = BTreeSet::new();
    loop {
        let next: Vec<String> = spec
            .nodes
            .iter()
            .filter(|n| !fired.contains(&n.name) && spec.fires(n, stimulus, &fired))
            .map(|n| n.name.clone())
            .collect();
        if next.is_empty() {
            return fired;
        }
        fired.extend(next);
    }
}

/// Same rule, evaluated once per node in topological order. `None` when
/// the graph has a cycle.
pub fn evaluate_topological(spec: &NetSpec, stimulus: &BTreeSet<String>) -> Option<BTreeSet<String>> {
    let mut indegree: BTreeMap<&str, usize> = spec.nodes.iter().map(|n| (n.name.as_str(), 0)).collect();
    for l in &spec.links {
        *indegree.get_mut(l.to.as_str())? += 1;
    }
    let mut ready: VecDeque<&str> = spec.nodes.iter().map(|n| n.name.as_str()).filter(|n| indegree[n] == 0).collect();
    let mut fired = BTreeSet::new();
    let mut done = 0;
    while let Some(name) = ready.pop_front() {
        done += 1;
        let node = spec.node(name)?;
        if spec.fires(node, stimulus, &fired) {
            fired.insert(name.to_string());
        }
        for l in spec.links.iter().filter(|l| l.from == name) {
            let d = indegree.get_mut(l.to.as_str())?;
            *d -= 1;
            if *d == 0 {
                ready.push_back(&l.to);
            }
        }
    }
    (done == spec.nodes.len()).then_some(fired)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rewrite {
    AddLink(Link),
    RemoveLink(Link),
    /// Moves an existing link to a new destination line.
    Retarget { link: Link, to: String, line: usize },
    /// Cuts every link into the node and makes it an input, so it fires
    /// straight from the stimulus.
    Promote(String),
}

/// Applies `swaps` in order and returns the rewritten spec.
pub fn reconfigure(spec: &NetSpec, swaps: &[Rewrite]) -> Result<NetSpec, NetError> {
    let mut s = spec.clone();
    for swap in swaps {
        match swap {
            Rewrite::AddLink(l) => s.links.push(l.clone()),
            Rewrite::RemoveLink(l) | Rewrite::Retarget { link: l, .. } => {
                let pos = s
                    .links
                    .iter()
                    .position(|k| k == l)
                    .ok_or_else(|| NetError::Spec(format!("no link {} -> {} line {}", l.from, l.to, l.line)))?;
                s.links.remove(pos);
                if let Rewrite::Retarget { to, line, .. } = swap {
                    s.links.push(Link { from: l.from.clone(), to: to.clone(), line: *line });
                }
            }
            Rewrite::Promote(name) => {
                s.index(name)?;
                s.links.retain(|k| &k.to != name);
                if !s.inputs.contains(name) {
                    s.inputs.push(name.clone());
                }
            }
        }
        s.validate()?;
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct CompiledNet {
    pub program: Program,
    /// The caller's shape with enough processors for every relay at once.
    pub shape: MachineShape,
    /// Physical switch of each node, in node order.
    pub switches: Vec<usize>,
    /// Stimulus flag address of each input node.
    pub flags: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct Epoch {
    pub fired: BTreeSet<String>,
    /// Firing order as printed by the relays.
    pub order: Vec<String>,
    pub metrics: RunMetrics,
}

/// One switch per node; no paging. A node needs a switch with at least
/// `arity` lines.
pub fn compile_net(spec: &NetSpec, shape: &MachineShape) -> Result<CompiledNet, NetError> {
    spec.validate()?;
    let demands: Vec<Demand> = spec
        .nodes
        .iter()
        .map(|n| Demand { lifetime: Some((0, 1)), ..Demand::new(n.name.clone(), n.arity.max(1)) })
        .collect();
    let table = allocate(&demands, shape, Policy::BestFit)?;
    let sw: Vec<usize> = spec.nodes.iter().map(|n| table.get(&n.name).expect("allocated").placement.switch()).collect();
    let r = |i: usize| Reg::new(i).expect("register");
    let mut asm = Assembly::new();
    for (i, n) in spec.nodes.iter().enumerate() {
        let s = sw[i] as u16;
        asm.push(Instruction::MsReset { sw: s });
        asm.push(Instruction::MsArity { sw: s, arity: n.arity as u16, kind: n.kind });
        asm.push_to(Instruction::MsAct { sw: s, line: 0, addr: 0 }, format!("relay{i}"));
    }
    let mut flags = BTreeMap::new();
    asm.push(Instruction::LoadI { rd: r(2), imm: 0 });
    for name in &spec.inputs {
        let i = spec.index(name)?;
        let addr = flags.len();
        flags.insert(name.clone(), addr);
        asm.push(Instruction::Load { rd: r(1), addr: addr as u16 });
        asm.push(Instruction::Cmp { op: CmpOp::Eq, rd: r(3), ra: r(1), rb: r(2) });
        asm.push_to(Instruction::JmpIf { rs: r(3), addr: 0 }, format!("skip{i}"));
        for l in spec.free_lines(&spec.nodes[i]) {
            asm.push(Instruction::MsIn { sw: sw[i] as u16, line: l as u16 });
        }
        asm.label(format!("skip{i}"));
    }
    asm.push(Instruction::ThEnd);
    for (i, n) in spec.nodes.iter().enumerate() {
        asm.label(format!("relay{i}"));
        asm.push(Instruction::MsAct { sw: sw[i] as u16, line: 0, addr: 0 });
        for l in spec.links.iter().filter(|l| l.from == n.name) {
            let to = spec.index(&l.to)?;
            asm.push(Instruction::MsIn { sw: sw[to] as u16, line: l.line as u16 });
        }
        let s = asm.intern(&n.name);
        asm.push(Instruction::PrintS { index: s });
        asm.push(Instruction::ThEnd);
    }
    let program = asm.link()?;
    let shape = shape.clone().with_procs(shape.procs.max(spec.nodes.len() + 1));
    Ok(CompiledNet { program, shape, switches: sw, flags })
}

impl CompiledNet {
    /// Runs one epoch with the given input nodes stimulated.
    pub fn run(&self, stimulus: &BTreeSet<String>) -> Result<Epoch, NetError> {
        let mut m = Machine::load(self.program.clone(), &self.shape)?;
        for name in stimulus {
            let addr = self.flags.get(name).ok_or_else(|| NetError::Spec(format!("`{name}` is not an input")))?;
            m.poke(*addr, 1);
        }
        // every node fires at most once, so this bound is generous
        let limit = 64 + 8 * self.program.len() as u64;
        let r = m.run_with_limit(limit)?;
        let order: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
        Ok(Epoch { fired: order.iter().cloned().collect(), order, metrics: r.metrics })
    }
}
