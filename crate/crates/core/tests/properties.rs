mod common;

use std::collections::BTreeSet;

use common::*;
use multiswitch::isa::{assemble, disassemble, CmpOp, Instruction, Program, Reg};
use multiswitch::lang::{allocate, Demand, Mode, Placement, Policy, Role};
use multiswitch::vm::{Machine, RunOutcome};
use multiswitch::{eval_gate, Addr, GateKind, MachineShape, MultiSwitch};
use proptest::prelude::*;

fn kind() -> impl Strategy<Value = GateKind> {
    prop_oneof![Just(GateKind::And), Just(GateKind::Or)]
}

fn reg() -> impl Strategy<Value = Reg> {
    (0usize..16).prop_map(|i| Reg::new(i).unwrap())
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Lt),
        Just(CmpOp::Gt),
        Just(CmpOp::Le),
        Just(CmpOp::Ge)
    ]
}

const STRINGS: [&str; 3] = ["plain", "with space; and \"quotes\"", "tab\there"];

fn instruction(len: usize) -> impl Strategy<Value = Instruction> {
    use Instruction::*;
    let code = 1..=len as Addr;
    let target = prop_oneof![Just(0 as Addr), 1..=len as Addr];
    let sw = 0u16..64;
    let line = 0u16..64;
    prop_oneof![
        sw.clone().prop_map(|sw| MsReset { sw }),
        (sw.clone(), 1u16..64, kind()).prop_map(|(sw, arity, kind)| MsArity { sw, arity, kind }),
        (sw.clone(), line.clone()).prop_map(|(sw, line)| MsIn { sw, line }),
        sw.clone().prop_map(|sw| MsOff { sw }),
        (sw.clone(), line.clone(), target.clone()).prop_map(|(sw, line, addr)| MsAct { sw, line, addr }),
        (sw.clone(), target).prop_map(|(sw, addr)| MsFalse { sw, addr }),
        (sw.clone(), line.clone(), 0u16..8, reg()).prop_map(|(sw, line, field, rd)| MsRes { sw, line, field, rd }),
        (sw, line, 0u16..8, reg()).prop_map(|(sw, line, field, rs)| MsPut { sw, line, field, rs }),
        (reg(), any::<i16>()).prop_map(|(rd, imm)| LoadI { rd, imm }),
        (reg(), reg()).prop_map(|(rd, rs)| Mov { rd, rs }),
        (reg(), reg(), reg()).prop_map(|(rd, ra, rb)| Add { rd, ra, rb }),
        (reg(), reg(), reg()).prop_map(|(rd, ra, rb)| Sub { rd, ra, rb }),
        (reg(), reg(), reg()).prop_map(|(rd, ra, rb)| And { rd, ra, rb }),
        (reg(), reg(), reg()).prop_map(|(rd, ra, rb)| Or { rd, ra, rb }),
        (reg(), any::<u16>()).prop_map(|(rd, addr)| Load { rd, addr }),
        (reg(), any::<u16>()).prop_map(|(rs, addr)| Store { rs, addr }),
        (cmp_op(), reg(), reg(), reg()).prop_map(|(op, rd, ra, rb)| Cmp { op, rd, ra, rb }),
        code.clone().prop_map(|addr| Jmp { addr }),
        (reg(), code).prop_map(|(rs, addr)| JmpIf { rs, addr }),
        reg().prop_map(|rs| Print { rs }),
        (0u16..STRINGS.len() as u16).prop_map(|index| PrintS { index }),
        any::<u16>().prop_map(|addr| Poll { addr }),
        Just(ThEnd),
        Just(Halt),
    ]
}

fn program() -> impl Strategy<Value = Program> {
    (1usize..40).prop_flat_map(|n| (prop::collection::vec(instruction(n), n), 1..=n as Addr)).prop_map(|(code, entry)| {
        Program { code, entry, strings: STRINGS.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    })
}

proptest! {
    #[test]
    fn gate_equals_fold(k in kind(), xs in prop::collection::vec(any::<bool>(), 1..=16)) {
        let folded = xs[1..].iter().fold(xs[0], |a, &b| if k == GateKind::And { a && b } else { a || b });
        prop_assert_eq!(eval_gate(k, &xs).unwrap(), folded);
    }

    #[test]
    fn switch_config_survives_save_and_load(
        size in 2usize..12,
        k in kind(),
        seed in prop::collection::vec((0usize..12, 1u16..500), 0..12),
        arity_pick in 0usize..12,
    ) {
        let arity = arity_pick % size + 1;
        let mut s = MultiSwitch::new(size, arity, k).unwrap();
        for (line, addr) in seed {
            if line < size {
                s.set_target(line, addr).unwrap();
            }
        }
        s.set_false_target(9);
        let cfg = s.save_config();
        let mut other = MultiSwitch::new(size, 1, GateKind::And).unwrap();
        other.load_config(&cfg).unwrap();
        prop_assert_eq!(other.save_config(), cfg);
        prop_assert_eq!(other.targets(), s.targets());
        prop_assert_eq!(other.arity(), arity);
    }
}

fn resolved(p: &Program) -> Vec<String> {
    p.code
        .iter()
        .map(|i| match i {
            Instruction::PrintS { index } => format!("PRINTS {:?}", p.strings[*index as usize]),
            other => format!("{other:?}"),
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encoding_and_assembly_round_trip(p in program()) {
        let bytes = p.to_bytes().unwrap();
        let back = Program::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.code, &p.code);
        prop_assert_eq!(back.entry, p.entry);
        prop_assert_eq!(&back.strings, &p.strings);
        for instr in &p.code {
            let words = instr.encode();
            let (decoded, used) = Instruction::decode(&words).unwrap();
            prop_assert_eq!(decoded, *instr);
            prop_assert_eq!(used, words.len());
        }
        let text = disassemble(&p);
        let again = assemble(&text).unwrap();
        // the assembler renumbers strings in order of use
        prop_assert_eq!(resolved(&again), resolved(&p));
        prop_assert_eq!(again.entry, p.entry);
    }
}

fn demand() -> impl Strategy<Value = Demand> {
    (1usize..9, any::<bool>(), 0usize..20, 1usize..6).prop_map(|(lines, spawner, start, len)| Demand {
        name: String::new(),
        lines,
        role: if spawner { Role::Spawner } else { Role::Joiner },
        lifetime: Some((start, start + len)),
    })
}

fn policy() -> impl Strategy<Value = Policy> {
    prop_oneof![Just(Policy::BestFit), Just(Policy::Gang), Just(Policy::Page)]
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

proptest! {
    #[test]
    fn allocation_never_double_books(
        mut demands in prop::collection::vec(demand(), 1..10),
        sizes in prop::collection::vec(2usize..9, 1..8),
        p in policy(),
    ) {
        for (i, d) in demands.iter_mut().enumerate() {
            d.name = format!("d{i}");
        }
        let shape = MachineShape::new(sizes.clone(), 4).unwrap();
        let Ok(table) = allocate(&demands, &shape, p) else { return Ok(()) };
        prop_assert_eq!(table.entries.len(), demands.len());
        let used = |pl: &Placement| -> BTreeSet<usize> {
            match pl {
                Placement::Single(s) => [*s].into(),
                Placement::Gang(g) => std::iter::once(g.top).chain(g.subs.iter().map(|s| s.0)).collect(),
            }
        };
        for e in &table.entries {
            match &e.placement {
                Placement::Single(s) => prop_assert!(e.lines <= sizes[*s], "{} lines on size {}", e.lines, sizes[*s]),
                Placement::Gang(g) => {
                    prop_assert!(p >= Policy::Gang && e.role == Role::Joiner);
                    prop_assert_eq!(g.arity(), e.lines);
                    prop_assert!(g.top_arity() <= sizes[g.top]);
                    for &(s, n) in &g.subs {
                        prop_assert!(n <= sizes[s]);
                    }
                }
            }
        }
        for (i, a) in table.entries.iter().enumerate() {
            for b in &table.entries[i + 1..] {
                let shared = !used(&a.placement).is_disjoint(&used(&b.placement));
                if shared {
                    prop_assert!(p == Policy::Page, "{} and {} share a switch under {p}", a.name, b.name);
                    prop_assert!(!overlap(a.lifetime, b.lifetime), "{} and {} overlap", a.name, b.name);
                }
            }
        }
    }
}

fn join_source(lengths: &[usize]) -> String {
    let names: Vec<String> = (0..lengths.len()).map(|i| format!("w{i}")).collect();
    let mut src = format!("declare mswitch j;\nj({});\nprint(\"after\");\n", names.join(", "));
    for (name, &n) in names.iter().zip(lengths) {
        let body: Vec<String> = (0..n).map(|k| format!("print(\"{name}.{k}\")")).collect();
        src += &format!("proc {name} {{ {} }}\n", body.join("; "));
    }
    src
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn continuation_waits_for_every_worker(
        lengths in prop::collection::vec(1usize..12, 1..=8),
        procs in 1usize..=8,
    ) {
        let shape = MachineShape::default().with_procs(procs);
        let c = build(&join_source(&lengths), Mode::MSwitch, &shape, Policy::Page);
        prop_assert_eq!(c.report.mode, Mode::MSwitch);
        let mut m = Machine::load(c.program, &shape).unwrap();
        m.set_trace(true);
        let r = m.run().unwrap();
        prop_assert_eq!(&r.outcome, &RunOutcome::Completed);
        let threads = r.machine.threads();
        let after = r.output.iter().find(|o| o.value.to_string() == "after").unwrap();
        let cont = &threads[after.thread];
        let worker_ids: BTreeSet<usize> = threads.iter().filter(|t| t.origin.is_some() && t.id != cont.id).map(|t| t.id).collect();
        prop_assert!(worker_ids.len() >= lengths.len());
        let last_in = r.machine.trace().iter().filter(|t| worker_ids.contains(&t.thread) && t.opcode == "MSIN").map(|t| t.cycle).max().unwrap();
        prop_assert!(cont.first_cycle.unwrap() > last_in);
        for o in &r.output {
            if o.thread != cont.id && o.thread != 0 {
                prop_assert!(o.cycle < after.cycle);
            }
        }
        let stamps: BTreeSet<_> = threads.iter().filter(|t| worker_ids.contains(&t.id)).map(|t| t.spawn_cycle).collect();
        prop_assert_eq!(stamps.len(), 1);
    }

    #[test]
    fn runs_are_deterministic(lengths in prop::collection::vec(1usize..8, 1..=6), procs in 1usize..=8) {
        let shape = MachineShape::default().with_procs(procs);
        let src = join_source(&lengths);
        let go = |mode| {
            let c = build(&src, mode, &shape, Policy::Page);
            let mut m = Machine::load(c.program, &shape).unwrap();
            m.set_trace(true);
            m.run().unwrap()
        };
        for mode in Mode::ALL {
            let (a, b) = (go(mode), go(mode));
            prop_assert_eq!(a.machine.trace_text(), b.machine.trace_text());
            prop_assert_eq!(&a.metrics, &b.metrics);
            prop_assert_eq!(a.values(), b.values());
        }
        prop_assert_eq!(text(&go(Mode::MSwitch).canonical_output()), text(&go(Mode::Sequential).canonical_output()));
    }
}
