mod common;

use common::*;
use multiswitch::isa::{assemble, Program, ResultBinding, ResultLocation};
use multiswitch::lang::{Mode, Policy};
use multiswitch::vm::{Machine, RunOutcome, VmError};
use multiswitch::MachineShape;

const EXAMPLE_7: &str = r#"
id# = 42;
declare mswitch ms1;
ms1(db-search-a[ id#, name]), (db-search-b[ id#, address]);
print(ms1.db-search-a.name, ms1.db-search-b.address);

proc db-search-a[id#, name] { name = id# + 100; return TRUE }
proc db-search-b[id#, address] { address = id# + 200; return TRUE }
"#;

fn shape(sizes: &[usize], procs: usize) -> MachineShape {
    MachineShape::new(sizes.to_vec(), procs).unwrap()
}

#[test]
fn load_starts_one_thread_at_cycle_zero() {
    let s = shape(&[4], 4);
    let src = "a = 1; x = 1; declare mswitch ms1;\nif(a==x) then ms1(process-a, process-b, process-c)";
    let c = build(src, Mode::MSwitch, &s, Policy::Page);
    let m = Machine::load(c.program, &s).unwrap();
    assert_eq!(m.threads().len(), 1);
    assert_eq!(m.cycle(), 0);
    assert!(m.switches().iter().all(|sw| !sw.is_waiting()));
}

#[test]
fn load_rejects_missing_switch() {
    let p = assemble("MSIN 0, 0\nTHEND").unwrap();
    let err = Machine::load(p, &MachineShape { sizes: vec![], procs: 1 }).unwrap_err();
    assert!(matches!(err, VmError::Load(_)), "{err:?}");
}

#[test]
fn load_rejects_undersized_switch() {
    let p = assemble("MSIN 0, 5\nTHEND").unwrap();
    assert!(matches!(Machine::load(p, &shape(&[4], 1)), Err(VmError::Load(_))));
}

#[test]
fn empty_program_halts_on_first_step() {
    let mut m = Machine::load(Program::new(vec![]), &shape(&[4], 1)).unwrap();
    assert!(m.step_cycle().unwrap());
    assert!(!m.is_runnable());
    let r = Machine::load(Program::new(vec![]), &shape(&[4], 1)).unwrap().run().unwrap();
    assert_eq!(r.outcome, RunOutcome::Halted);
    assert_eq!(r.metrics.cycles, 1);
}

#[test]
fn single_thread_runs_one_instruction_per_cycle() {
    let p = assemble("LOADI r1, 1\nLOADI r2, 2\nADD r3, r1, r2\nPRINT r3\nTHEND").unwrap();
    let r = Machine::load(p, &shape(&[4], 4)).unwrap().run().unwrap();
    assert_eq!(r.metrics.cycles, 5);
    assert_eq!(r.metrics.max_parallel, 1);
    assert_eq!(text(&r.values()), ["3"]);
}

#[test]
fn fired_target_past_end_of_code_traps() {
    let src = "MSRESET 0\nMSARITY 0, 1, AND\nMSACT 0, 0, 99\nMSIN 0, 0\nTHEND";
    let p = assemble(src).unwrap();
    let err = Machine::load(p, &shape(&[4], 1)).unwrap().run().unwrap_err();
    match err {
        VmError::Trap { thread, reason, .. } => {
            assert_eq!(thread, 0);
            assert!(reason.contains("99"), "{reason}");
        }
        other => panic!("expected trap, got {other:?}"),
    }
}

#[test]
fn cycle_limit_is_a_timeout() {
    let p = assemble("L: JMP L").unwrap();
    let err = Machine::load(p, &shape(&[4], 1)).unwrap().run_with_limit(10).unwrap_err();
    assert_eq!(err, VmError::Timeout { limit: 10 });
}

#[test]
fn example_7_returned_parameters() {
    let s = MachineShape::default();
    let r = run(&build(EXAMPLE_7, Mode::MSwitch, &s, Policy::Page), &s);
    assert_eq!(r.outcome, RunOutcome::Completed);
    assert_eq!(text(&r.values()), ["142", "242"]);
    let m = &r.machine;
    assert_eq!(m.read_result_field("ms1", "db-search-a", "name").unwrap(), 142);
    assert_eq!(m.read_result_field("ms1", "db-search-b", "address").unwrap(), 242);
    assert_eq!(m.read_result("ms1", "db-search-a", 0).unwrap(), 1);
    assert!(matches!(m.read_result("ms1", "nope", 0), Err(VmError::UnknownName(_))));
}

#[test]
fn result_before_firing_is_not_ready() {
    let s = MachineShape::default();
    let c = build(EXAMPLE_7, Mode::MSwitch, &s, Policy::Page);
    let m = Machine::load(c.program, &s).unwrap();
    assert!(matches!(m.read_result("ms1", "db-search-a", 0), Err(VmError::NotReady(_))));
}

#[test]
fn status_after_bypass_is_false() {
    let mut p = assemble("MSRESET 0\nMSARITY 0, 2, AND\nMSIN 0, 0\nMSOFF 0\nTHEND").unwrap();
    p.results.push(ResultBinding {
        switch: "j".into(),
        target: "t".into(),
        fields: vec![],
        location: ResultLocation::Switch { sw: 0, line: 1 },
    });
    let r = Machine::load(p, &shape(&[4], 1)).unwrap().run().unwrap();
    assert_eq!(r.outcome, RunOutcome::Completed);
    assert_eq!(r.metrics.bypasses, 1);
    assert_eq!(r.machine.read_result("j", "t", 0).unwrap(), 0);
}

#[test]
fn unfinished_join_is_reported_as_stall() {
    let p = assemble("MSRESET 0\nMSARITY 0, 2, AND\nMSIN 0, 0\nTHEND").unwrap();
    let r = Machine::load(p, &shape(&[4], 1)).unwrap().run().unwrap();
    assert_eq!(r.outcome, RunOutcome::Stalled { waiting: vec![0] });
}

#[test]
fn fan_out_shares_spawn_cycle() {
    let src = "\
MSRESET 0
MSARITY 0, 1, AND
MSACT 0, 0, a
MSACT 0, 1, b
MSACT 0, 2, c
MSACT 0, 3, d
MSIN 0, 0
THEND
a: PRINTS \"a\"
THEND
b: PRINTS \"b\"
THEND
c: PRINTS \"c\"
THEND
d: PRINTS \"d\"
THEND";
    let p = assemble(src).unwrap();
    let r = Machine::load(p, &shape(&[4], 2)).unwrap().run().unwrap();
    let spawn = r.metrics.fan_out_of(4).expect("a 4-way spawn");
    assert_eq!(spawn.threads.len(), 4);
    let cycles: Vec<_> = spawn.threads.iter().map(|&t| r.machine.threads()[t].spawn_cycle).collect();
    assert!(cycles.iter().all(|&c| c == Some(spawn.cycle)));
    // only two processors, so the four threads start over two cycles
    let firsts: Vec<_> = spawn.threads.iter().map(|&t| r.machine.threads()[t].first_cycle.unwrap()).collect();
    assert_eq!(firsts, [spawn.cycle + 1, spawn.cycle + 1, spawn.cycle + 2, spawn.cycle + 2]);
}

#[test]
fn trace_lines_have_four_fields() {
    let p = assemble("LOADI r1, 7\nPRINT r1\nTHEND").unwrap();
    let mut m = Machine::load(p, &shape(&[4], 1)).unwrap();
    m.set_trace(true);
    let r = m.run().unwrap();
    assert_eq!(r.machine.trace_text(), "0,0,1,LOADI\n1,0,2,PRINT\n2,0,3,THEND\n");
}
