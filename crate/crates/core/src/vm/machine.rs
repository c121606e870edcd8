use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::gate::{FireEvent, GateKind, MultiSwitch, ResultStatus};
use crate::isa::{Instruction, Program, ResultLocation, NUM_REGS};
use crate::shape::MachineShape;
use crate::{Addr, Word};

use super::metrics::{RunMetrics, SpawnRecord};
use super::VmError;

pub const DEFAULT_MAX_CYCLES: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreadStatus {
    Runnable,
    Done,
}

/// One level of parallel-phase nesting: the firing that started a thread and
/// the position of the thread among that firing's targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseStep {
    pub cycle: u64,
    pub firing: u64,
    pub line: u16,
}

#[derive(Debug, Clone)]
pub struct Thread {
    pub id: usize,
    pub pc: Addr,
    pub regs: [Word; NUM_REGS],
    pub status: ThreadStatus,
    /// Cycle of the event that started this thread (`None` for the entry thread).
    pub spawn_cycle: Option<u64>,
    pub first_cycle: Option<u64>,
    pub last_cycle: Option<u64>,
    pub executed: u64,
    /// Switch and target index that started the thread.
    pub origin: Option<(usize, usize)>,
    phase: Vec<PhaseStep>,
}

impl Thread {
    fn new(id: usize, pc: Addr, spawn_cycle: Option<u64>, phase: Vec<PhaseStep>) -> Self {
        Thread {
            id,
            pc,
            regs: [0; NUM_REGS],
            status: ThreadStatus::Runnable,
            spawn_cycle,
            first_cycle: None,
            last_cycle: None,
            executed: 0,
            origin: None,
            phase,
        }
    }

    pub fn phase(&self) -> &[PhaseStep] {
        &self.phase
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Value {
    Int(Word),
    Str(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub cycle: u64,
    pub thread: usize,
    pub value: Value,
    pub phase: Vec<PhaseStep>,
}

/// Phase steps, then the record's own cycle and thread.
type SortKey = Vec<(u64, u8, u64, u16, usize)>;

impl OutputRecord {
    fn sort_key(&self) -> SortKey {
        let mut key: Vec<_> = self.phase.iter().map(|p| (p.cycle, 1, p.firing, p.line, 0)).collect();
        key.push((self.cycle, 0, 0, 0, self.thread));
        key
    }
}

/// Output with every parallel phase laid out by target index, as if the
/// phase's threads had run one after another. Outputs of a single thread
/// keep their order.
pub fn canonical_output(records: &[OutputRecord]) -> Vec<Value> {
    let mut keyed: Vec<(SortKey, usize)> =
        records.iter().enumerate().map(|(i, r)| (r.sort_key(), i)).collect();
    keyed.sort_by(|a, b| match a.0.cmp(&b.0) {
        Ordering::Equal => a.1.cmp(&b.1),
        o => o,
    });
    keyed.into_iter().map(|(_, i)| records[i].value.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub thread: usize,
    pub pc: Addr,
    pub opcode: &'static str,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.cycle, self.thread, self.pc, self.opcode)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    /// Every thread reached THEND.
    Completed,
    Halted,
    /// No thread is runnable but these switches still hold raised inputs.
    Stalled { waiting: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub output: Vec<OutputRecord>,
    pub metrics: RunMetrics,
    pub machine: Machine,
}

impl RunResult {
    pub fn values(&self) -> Vec<Value> {
        self.output.iter().map(|o| o.value.clone()).collect()
    }

    pub fn canonical_output(&self) -> Vec<Value> {
        canonical_output(&self.output)
    }
}

#[derive(Debug, Clone)]
pub struct Machine {
    program: Arc<Program>,
    shape: MachineShape,
    switches: Vec<MultiSwitch>,
    /// Phase of the thread that last configured each switch.
    owner_phase: Vec<Vec<PhaseStep>>,
    last_signaler: Vec<Option<usize>>,
    /// Set once a switch fires or is bypassed; cleared by reconfiguration.
    /// Inputs that arrive afterwards are stale and do not count as a stall.
    resolved: Vec<bool>,
    memory: Vec<Word>,
    threads: Vec<Thread>,
    cursor: usize,
    cycle: u64,
    firings: u64,
    halted: bool,
    metrics: RunMetrics,
    output: Vec<OutputRecord>,
    trace: Option<Vec<TraceRecord>>,
}

impl Machine {
    pub fn load(program: impl Into<Arc<Program>>, shape: &MachineShape) -> Result<Machine, VmError> {
        let program: Arc<Program> = program.into();
        shape.validate().map_err(|e| VmError::Load(e.to_string()))?;
        program.validate().map_err(|e| VmError::Load(e.to_string()))?;
        for (sw, &need) in program.switch_demands().iter().enumerate() {
            if need == 0 {
                continue;
            }
            match shape.sizes.get(sw) {
                None => {
                    return Err(VmError::Load(format!(
                        "program uses switch {sw} but the machine has {} switch(es)",
                        shape.sizes.len()
                    )))
                }
                Some(&size) if size < need => {
                    return Err(VmError::Load(format!("switch {sw} has size {size}, program needs {need} lines")))
                }
                _ => {}
            }
        }
        let switches = shape
            .sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| MultiSwitch::with_id(i, s, 1, GateKind::And).expect("validated shape"))
            .collect();
        let n = shape.sizes.len();
        let threads = vec![Thread::new(0, program.entry.max(1), None, Vec::new())];
        let metrics = RunMetrics { threads: 1, ..Default::default() };
        Ok(Machine {
            memory: vec![0; program.data_size()],
            program,
            shape: shape.clone(),
            switches,
            owner_phase: vec![Vec::new(); n],
            last_signaler: vec![None; n],
            resolved: vec![false; n],
            threads,
            cursor: 0,
            cycle: 0,
            firings: 0,
            halted: false,
            metrics,
            output: Vec::new(),
            trace: None,
        })
    }

    pub fn set_trace(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn trace_text(&self) -> String {
        self.trace().iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn shape(&self) -> &MachineShape {
        &self.shape
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn switches(&self) -> &[MultiSwitch] {
        &self.switches
    }

    pub fn memory(&self) -> &[Word] {
        &self.memory
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn output(&self) -> &[OutputRecord] {
        &self.output
    }

    /// Writes a data word before (or between) cycles, growing memory if needed.
    pub fn poke(&mut self, addr: usize, value: Word) {
        if self.memory.len() <= addr {
            self.memory.resize(addr + 1, 0);
        }
        self.memory[addr] = value;
    }

    pub fn is_runnable(&self) -> bool {
        !self.halted && self.threads.iter().any(|t| t.status == ThreadStatus::Runnable)
    }

    fn select(&self) -> Vec<usize> {
        let p = self.shape.procs;
        let runnable = |t: &&Thread| t.status == ThreadStatus::Runnable;
        let after = self.threads[self.cursor.min(self.threads.len())..].iter().filter(runnable);
        let before = self.threads[..self.cursor.min(self.threads.len())].iter().filter(runnable);
        after.chain(before).take(p).map(|t| t.id).collect()
    }

    /// Runs one cycle: up to P threads execute one instruction each, then
    /// every switch is evaluated. Returns false when nothing was runnable.
    pub fn step_cycle(&mut self) -> Result<bool, VmError> {
        if !self.is_runnable() {
            return Ok(false);
        }
        let chosen = self.select();
        self.metrics.max_parallel = self.metrics.max_parallel.max(chosen.len() as u64);
        for &tid in &chosen {
            if self.halted {
                break;
            }
            self.execute(tid)?;
        }
        if let Some(&last) = chosen.last() {
            self.cursor = last + 1;
        }
        self.evaluate_switches()?;
        self.cycle += 1;
        self.metrics.cycles = self.cycle;
        Ok(true)
    }

    fn trap(&self, tid: usize, pc: Addr, kind: impl Into<String>) -> VmError {
        VmError::Trap { thread: tid, pc, cycle: self.cycle, reason: kind.into() }
    }

    fn switch_mut(&mut self, tid: usize, pc: Addr, sw: u16) -> Result<&mut MultiSwitch, VmError> {
        let n = self.switches.len();
        if sw as usize >= n {
            return Err(self.trap(tid, pc, format!("switch {sw} does not exist ({n} present)")));
        }
        Ok(&mut self.switches[sw as usize])
    }

    fn mem_index(&self, tid: usize, pc: Addr, addr: u16) -> Result<usize, VmError> {
        if (addr as usize) < self.memory.len() {
            Ok(addr as usize)
        } else {
            Err(self.trap(tid, pc, format!("data address {addr} outside memory")))
        }
    }

    fn execute(&mut self, tid: usize) -> Result<(), VmError> {
        let cycle = self.cycle;
        let pc = self.threads[tid].pc;
        let Some(&instr) = self.program.fetch(pc) else {
            // running off the end of code ends the thread
            let t = &mut self.threads[tid];
            t.status = ThreadStatus::Done;
            // an empty image behaves as a lone HALT
            self.halted |= self.program.is_empty();
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRecord { cycle, thread: tid, pc, opcode: "END" });
            }
            return Ok(());
        };
        {
            let t = &mut self.threads[tid];
            t.first_cycle.get_or_insert(cycle);
            t.last_cycle = Some(cycle);
            t.executed += 1;
        }
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord { cycle, thread: tid, pc, opcode: instr.mnemonic() });
        }
        let class = instr.class();
        self.metrics.count(class);
        if class == crate::isa::InstrClass::Comparison {
            self.metrics.note_comparison_cycle(cycle);
        }

        let mut next = pc.wrapping_add(1);
        let gate_err = |m: &Machine, e: crate::gate::GateError| m.trap(tid, pc, e.to_string());
        use Instruction::*;
        match instr {
            MsReset { sw } => {
                self.switch_mut(tid, pc, sw)?.reset();
                self.resolved[sw as usize] = false;
                self.owner_phase[sw as usize] = self.threads[tid].phase.clone();
            }
            MsArity { sw, arity, kind } => {
                let r = self.switch_mut(tid, pc, sw)?.set_shape(arity as usize, kind);
                r.map_err(|e| gate_err(self, e))?;
                self.resolved[sw as usize] = false;
                self.owner_phase[sw as usize] = self.threads[tid].phase.clone();
            }
            MsIn { sw, line } => {
                let r = self.switch_mut(tid, pc, sw)?.drive_input(line as usize);
                r.map_err(|e| gate_err(self, e))?;
                self.last_signaler[sw as usize] = Some(tid);
            }
            MsOff { sw } => {
                self.switch_mut(tid, pc, sw)?.drive_bypass();
                self.last_signaler[sw as usize] = Some(tid);
            }
            MsAct { sw, line, addr } => {
                let r = self.switch_mut(tid, pc, sw)?.set_target(line as usize, addr);
                r.map_err(|e| gate_err(self, e))?;
            }
            MsFalse { sw, addr } => self.switch_mut(tid, pc, sw)?.set_false_target(addr),
            MsRes { sw, line, field, rd } => {
                let s = self.switch_mut(tid, pc, sw)?;
                let rec = s.result(line as usize).map_err(|e| e.to_string());
                let value = match rec {
                    Err(e) => return Err(self.trap(tid, pc, e)),
                    Ok(r) if r.status == ResultStatus::Pending => {
                        return Err(self.trap(tid, pc, format!("result {sw}.{line} not ready")))
                    }
                    Ok(r) if field == 0 => (r.status == ResultStatus::True) as Word,
                    Ok(r) => r.payload.get(field as usize - 1).copied().unwrap_or(0),
                };
                self.threads[tid].regs[rd.index()] = value;
            }
            MsPut { sw, line, field, rs } => {
                let v = self.threads[tid].regs[rs.index()];
                let s = self.switch_mut(tid, pc, sw)?;
                let r = if field == 0 { s.set_status(line as usize, v != 0) } else { s.set_payload(line as usize, field as usize - 1, v) };
                r.map_err(|e| gate_err(self, e))?;
            }
            LoadI { rd, imm } => self.threads[tid].regs[rd.index()] = imm as Word,
            Mov { rd, rs } => {
                let t = &mut self.threads[tid];
                t.regs[rd.index()] = t.regs[rs.index()];
            }
            Add { rd, ra, rb } | Sub { rd, ra, rb } | And { rd, ra, rb } | Or { rd, ra, rb } => {
                let t = &mut self.threads[tid];
                let (a, b) = (t.regs[ra.index()], t.regs[rb.index()]);
                t.regs[rd.index()] = match instr {
                    Add { .. } => a.wrapping_add(b),
                    Sub { .. } => a.wrapping_sub(b),
                    And { .. } => a & b,
                    _ => a | b,
                };
            }
            Load { rd, addr } => {
                let i = self.mem_index(tid, pc, addr)?;
                self.threads[tid].regs[rd.index()] = self.memory[i];
            }
            Store { rs, addr } => {
                let i = self.mem_index(tid, pc, addr)?;
                self.memory[i] = self.threads[tid].regs[rs.index()];
            }
            Cmp { op, rd, ra, rb } => {
                let t = &mut self.threads[tid];
                t.regs[rd.index()] = op.eval(t.regs[ra.index()], t.regs[rb.index()]) as Word;
            }
            Jmp { addr } => next = addr,
            JmpIf { rs, addr } => {
                if self.threads[tid].regs[rs.index()] != 0 {
                    next = addr;
                }
            }
            Print { rs } => {
                let v = Value::Int(self.threads[tid].regs[rs.index()]);
                self.emit(tid, v);
            }
            PrintS { index } => {
                let s = self.program.strings.get(index as usize).cloned();
                match s {
                    Some(s) => self.emit(tid, Value::Str(s)),
                    None => return Err(self.trap(tid, pc, format!("string #{index} not defined"))),
                }
            }
            Poll { addr } => {
                let i = self.mem_index(tid, pc, addr)?;
                if self.memory[i] == 0 {
                    next = pc;
                }
            }
            ThEnd => self.threads[tid].status = ThreadStatus::Done,
            Halt => {
                self.halted = true;
                self.threads.iter_mut().for_each(|t| t.status = ThreadStatus::Done);
            }
        }
        self.threads[tid].pc = next;
        Ok(())
    }

    fn emit(&mut self, tid: usize, value: Value) {
        self.output.push(OutputRecord {
            cycle: self.cycle,
            thread: tid,
            value,
            phase: self.threads[tid].phase.clone(),
        });
    }

    fn spawn(&mut self, addr: Addr, sw: usize, index: usize, phase: Vec<PhaseStep>) -> Result<usize, VmError> {
        if !self.program.is_code_addr(addr) {
            let tid = self.last_signaler[sw].unwrap_or(0);
            let pc = self.threads.get(tid).map(|t| t.pc).unwrap_or(0);
            return Err(VmError::Trap {
                thread: tid,
                pc,
                cycle: self.cycle,
                reason: format!("switch {sw} fired to invalid address {addr}"),
            });
        }
        let id = self.threads.len();
        let mut t = Thread::new(id, addr, Some(self.cycle), phase);
        t.origin = Some((sw, index));
        self.threads.push(t);
        self.metrics.threads += 1;
        Ok(id)
    }

    fn evaluate_switches(&mut self) -> Result<(), VmError> {
        for sw in 0..self.switches.len() {
            if !self.switches[sw].is_waiting() {
                continue;
            }
            let event = self.switches[sw].step();
            if event != FireEvent::Idle {
                self.resolved[sw] = true;
            }
            match event {
                FireEvent::Idle => {}
                FireEvent::Fired(targets) => {
                    self.firings += 1;
                    self.metrics.firings += 1;
                    let firing = self.firings;
                    let fan = targets.len() > 1;
                    let mut started = Vec::with_capacity(targets.len());
                    for (i, addr) in targets.into_iter().enumerate() {
                        let mut phase = self.owner_phase[sw].clone();
                        if fan {
                            phase.push(PhaseStep { cycle: self.cycle, firing, line: i as u16 });
                        }
                        started.push(self.spawn(addr, sw, i, phase)?);
                    }
                    if started.len() > 1 {
                        self.metrics.parallel_phases += 1;
                    }
                    if !started.is_empty() {
                        self.metrics.spawns.push(SpawnRecord { cycle: self.cycle, switch: sw, threads: started, bypass: false });
                    }
                }
                FireEvent::False(target) => {
                    self.metrics.bypasses += 1;
                    if let Some(addr) = target {
                        let phase = self.owner_phase[sw].clone();
                        let id = self.spawn(addr, sw, 0, phase)?;
                        self.metrics.spawns.push(SpawnRecord { cycle: self.cycle, switch: sw, threads: vec![id], bypass: true });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn run(self) -> Result<RunResult, VmError> {
        self.run_with_limit(DEFAULT_MAX_CYCLES)
    }

    pub fn run_with_limit(mut self, max_cycles: u64) -> Result<RunResult, VmError> {
        while self.is_runnable() {
            if self.cycle >= max_cycles {
                return Err(VmError::Timeout { limit: max_cycles });
            }
            self.step_cycle()?;
        }
        let outcome = if self.halted {
            RunOutcome::Halted
        } else {
            let waiting: Vec<usize> =
                self.switches.iter().filter(|s| s.is_waiting() && !self.resolved[s.id()]).map(|s| s.id()).collect();
            if waiting.is_empty() {
                RunOutcome::Completed
            } else {
                RunOutcome::Stalled { waiting }
            }
        };
        Ok(RunResult { outcome, output: self.output.clone(), metrics: self.metrics.clone(), machine: self })
    }

    /// Reads field `field` of the result record bound to `switch.target`
    /// (field 0 is the status, 1 for TRUE and 0 for FALSE).
    pub fn read_result(&self, switch: &str, target: &str, field: usize) -> Result<Word, VmError> {
        let binding = self
            .program
            .results
            .iter()
            .rev()
            .find(|b| b.switch == switch && b.target == target)
            .ok_or_else(|| VmError::UnknownName(format!("{switch}.{target}")))?;
        match binding.location {
            ResultLocation::Switch { sw, line } => {
                let s = self.switches.get(sw as usize).ok_or_else(|| VmError::UnknownName(format!("switch {sw}")))?;
                let rec = s.result(line as usize).map_err(|e| VmError::UnknownName(e.to_string()))?;
                match rec.status {
                    ResultStatus::Pending => Err(VmError::NotReady(format!("{switch}.{target}"))),
                    st if field == 0 => Ok((st == ResultStatus::True) as Word),
                    _ => Ok(rec.payload.get(field - 1).copied().unwrap_or(0)),
                }
            }
            ResultLocation::Memory { status, payload } => {
                let addr = if field == 0 { status as usize } else { payload as usize + field - 1 };
                Ok(self.memory.get(addr).copied().unwrap_or(0))
            }
        }
    }

    /// Like [`Machine::read_result`] but names the payload field.
    pub fn read_result_field(&self, switch: &str, target: &str, field: &str) -> Result<Word, VmError> {
        let binding = self
            .program
            .results
            .iter()
            .rev()
            .find(|b| b.switch == switch && b.target == target)
            .ok_or_else(|| VmError::UnknownName(format!("{switch}.{target}")))?;
        let idx = binding
            .fields
            .iter()
            .position(|f| f == field)
            .ok_or_else(|| VmError::UnknownName(format!("{switch}.{target}.{field}")))?;
        self.read_result(switch, target, idx + 1)
    }
}
