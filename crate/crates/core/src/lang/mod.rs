//! MSL: a small imperative language with `mswitch` calls, and its compiler.
//!
//! ```text
//! declare mswitch ms1;
//! ms1(db-search-a[id#, name]), (db-search-b[id#, address]);
//! print(ms1.db-search-a.name, ms1.db-search-b.address);
//! ```

pub mod alloc;
pub mod ast;
mod lexer;
mod lower;
mod parser;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::isa::{InstrClass, Instruction, IsaError, Program};
use crate::shape::MachineShape;

pub use alloc::{
    allocate, plan_gang, AllocationTable, Assignment, CapacityError, Demand, GangPlan, PageEvent, Placement, Policy,
    Residency, Role,
};
pub use ast::{Ast, Pos};
pub use lexer::{lex, Tok, Token};
pub use lower::{link_plain, lower, materialize, Ir, Logical};
pub use parser::parse;
pub use stats::{analyze_branching, analyze_branching_with, BranchStats};

/// Conditions with at least this many conjuncts become parallel comparisons.
pub const DEFAULT_FUSE_THRESHOLD: usize = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompileError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("undeclared name `{name}` at {pos}")]
    Undeclared { name: String, pos: Pos },
    #[error("error at {pos}: {msg}")]
    Semantic { pos: Pos, msg: String },
    #[error(transparent)]
    Capacity(#[from] CapacityError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error("internal compiler error: {0}")]
    Internal(String),
}

impl CompileError {
    pub(crate) fn syntax(pos: Pos, msg: impl Into<String>) -> Self {
        CompileError::Syntax { pos, msg: msg.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    /// Spawner and joiner switches.
    MSwitch,
    /// Straight-line code, no switch instructions.
    Sequential,
    /// Switch spawns, but joins through done flags and a polling parent.
    BaselinePoll,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::MSwitch, Mode::Sequential, Mode::BaselinePoll];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::MSwitch => "mswitch",
            Mode::Sequential => "sequential",
            Mode::BaselinePoll => "baseline-poll",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mswitch" => Ok(Mode::MSwitch),
            "sequential" | "seq" => Ok(Mode::Sequential),
            "baseline-poll" | "poll" => Ok(Mode::BaselinePoll),
            _ => Err(format!("unknown mode `{s}` (expected mswitch, sequential or baseline-poll)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompileOptions {
    pub mode: Mode,
    /// Most permissive allocation policy to try.
    pub policy: Policy,
    pub shape: MachineShape,
    pub fuse_threshold: usize,
    /// Fall back to sequential code when no policy fits the shape.
    pub fallback: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        CompileOptions {
            mode: Mode::MSwitch,
            policy: Policy::Page,
            shape: MachineShape::default(),
            fuse_threshold: DEFAULT_FUSE_THRESHOLD,
            fallback: true,
        }
    }
}

impl CompileOptions {
    pub fn new(mode: Mode, shape: MachineShape) -> Self {
        CompileOptions { mode, shape, ..Default::default() }
    }

    pub fn policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    pub fn no_fallback(mut self) -> Self {
        self.fallback = false;
        self
    }
}

/// Instruction counts of the emitted program.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StaticCounts {
    pub instructions: usize,
    pub comparisons: usize,
    pub conditional_jumps: usize,
    /// A comparison immediately followed by a conditional jump on its result.
    pub compare_branch_pairs: usize,
    pub ms_ops: usize,
    pub polls: usize,
    /// Join constructs: joiner switches or polling joins.
    pub joins: usize,
    pub fused_ifs: usize,
}

impl StaticCounts {
    pub fn of(program: &Program) -> Self {
        let mut c = StaticCounts { instructions: program.code.len(), ..Default::default() };
        for (i, instr) in program.code.iter().enumerate() {
            match instr.class() {
                InstrClass::Comparison => c.comparisons += 1,
                InstrClass::MsOp => c.ms_ops += 1,
                InstrClass::Poll => c.polls += 1,
                _ => {}
            }
            if let Instruction::JmpIf { rs, .. } = instr {
                c.conditional_jumps += 1;
                if let Some(Instruction::Cmp { rd, .. }) = i.checked_sub(1).map(|p| &program.code[p]) {
                    if rd == rs {
                        c.compare_branch_pairs += 1;
                    }
                }
            }
        }
        c
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompileReport {
    pub requested_mode: Mode,
    pub mode: Mode,
    pub policy: Option<Policy>,
    pub allocation: Option<AllocationTable>,
    /// Capacity failures of the policies tried before the one that worked.
    pub attempts: Vec<String>,
    pub fallback: Option<String>,
    pub stats: BranchStats,
    pub counts: StaticCounts,
}

impl fmt::Display for CompileReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mode={} (requested {})", self.mode, self.requested_mode)?;
        if let Some(p) = self.policy {
            writeln!(f, "policy={p}")?;
        }
        for a in &self.attempts {
            writeln!(f, "rejected: {a}")?;
        }
        if let Some(fb) = &self.fallback {
            writeln!(f, "fallback: {fb}")?;
        }
        let c = &self.counts;
        writeln!(
            f,
            "instructions={} comparisons={} conditional_jumps={} compare_branch_pairs={} ms_ops={} polls={} joins={} fused_ifs={}",
            c.instructions, c.comparisons, c.conditional_jumps, c.compare_branch_pairs, c.ms_ops, c.polls, c.joins, c.fused_ifs
        )?;
        write!(f, "{}", self.stats)?;
        if let Some(t) = &self.allocation {
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub program: Program,
    pub report: CompileReport,
}

pub fn compile(src: &str, opts: &CompileOptions) -> Result<Compiled, CompileError> {
    let ast = parse(src)?;
    compile_ast(&ast, opts)
}

/// Lowers, allocates and links. Allocation policies are tried from the
/// strictest up to `opts.policy`; if none fits, the whole program is
/// recompiled sequentially (unless fallback is disabled).
pub fn compile_ast(ast: &Ast, opts: &CompileOptions) -> Result<Compiled, CompileError> {
    let stats = analyze_branching_with(ast, opts.fuse_threshold);
    let ir = lower(ast, opts.mode, opts.fuse_threshold)?;
    let mut report = CompileReport {
        requested_mode: opts.mode,
        mode: opts.mode,
        policy: None,
        allocation: None,
        attempts: Vec::new(),
        fallback: None,
        stats,
        counts: StaticCounts::default(),
    };
    let demands: Vec<Demand> = ir.demands().into_iter().map(|(_, d)| d).collect();
    let finish = |program: Program, mut report: CompileReport, ir: &Ir| {
        report.counts = StaticCounts { joins: ir.joins, fused_ifs: ir.fused_ifs, ..StaticCounts::of(&program) };
        Compiled { program, report }
    };
    if demands.is_empty() {
        let program = link_plain(&ir)?;
        return Ok(finish(program, report, &ir));
    }
    let mut last_err = None;
    for policy in opts.policy.ladder() {
        match allocate(&demands, &opts.shape, policy) {
            Ok(table) => {
                let program = materialize(&ir, &table)?;
                report.policy = Some(policy);
                report.allocation = Some(table);
                return Ok(finish(program, report, &ir));
            }
            Err(e) => {
                report.attempts.push(e.to_string());
                last_err = Some(e);
            }
        }
    }
    let err = last_err.expect("ladder is never empty");
    if !opts.fallback {
        return Err(err.into());
    }
    let seq = lower(ast, Mode::Sequential, opts.fuse_threshold)?;
    let program = link_plain(&seq)?;
    report.mode = Mode::Sequential;
    report.fallback = Some(format!("{err}; compiled sequentially"));
    Ok(finish(program, report, &seq))
}
