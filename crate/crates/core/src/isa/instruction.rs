use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gate::GateKind;
use crate::Addr;

use super::IsaError;

pub const NUM_REGS: usize = 16;

/// General-purpose register index, `r0`..`r15`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: usize) -> Result<Self, IsaError> {
        if index < NUM_REGS {
            Ok(Reg(index as u8))
        } else {
            Err(IsaError::Operand(format!("register r{index} out of range")))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Ge => CmpOp::Lt,
        }
    }

    const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Gt, CmpOp::Le, CmpOp::Ge];

    fn offset(self) -> u16 {
        CmpOp::ALL.iter().position(|&c| c == self).unwrap() as u16
    }
}

/// Coarse instruction classes used by the run metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InstrClass {
    Comparison,
    Jump,
    MsOp,
    Poll,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    // multi-switch operations
    MsReset { sw: u16 },
    MsArity { sw: u16, arity: u16, kind: GateKind },
    MsIn { sw: u16, line: u16 },
    MsOff { sw: u16 },
    MsAct { sw: u16, line: u16, addr: Addr },
    MsFalse { sw: u16, addr: Addr },
    MsRes { sw: u16, line: u16, field: u16, rd: Reg },
    MsPut { sw: u16, line: u16, field: u16, rs: Reg },
    // general
    LoadI { rd: Reg, imm: i16 },
    Mov { rd: Reg, rs: Reg },
    Add { rd: Reg, ra: Reg, rb: Reg },
    Sub { rd: Reg, ra: Reg, rb: Reg },
    And { rd: Reg, ra: Reg, rb: Reg },
    Or { rd: Reg, ra: Reg, rb: Reg },
    Load { rd: Reg, addr: u16 },
    Store { rs: Reg, addr: u16 },
    Cmp { op: CmpOp, rd: Reg, ra: Reg, rb: Reg },
    Jmp { addr: Addr },
    JmpIf { rs: Reg, addr: Addr },
    Print { rs: Reg },
    PrintS { index: u16 },
    Poll { addr: u16 },
    ThEnd,
    Halt,
}

pub mod opcode {
    pub const LOADI: u16 = 0x01;
    pub const MOV: u16 = 0x02;
    pub const ADD: u16 = 0x03;
    pub const SUB: u16 = 0x04;
    pub const AND: u16 = 0x05;
    pub const OR: u16 = 0x06;
    pub const LOAD: u16 = 0x07;
    pub const STORE: u16 = 0x08;
    pub const MSRESET: u16 = 0x10;
    pub const MSARITY: u16 = 0x11;
    pub const MSIN: u16 = 0x12;
    pub const MSOFF: u16 = 0x13;
    pub const MSACT: u16 = 0x14;
    pub const MSFALSE: u16 = 0x15;
    pub const MSRES: u16 = 0x16;
    pub const MSPUT: u16 = 0x17;
    pub const CMP_BASE: u16 = 0x20;
    pub const JMP: u16 = 0x30;
    pub const JMPIF: u16 = 0x31;
    pub const PRINT: u16 = 0x40;
    pub const PRINTS: u16 = 0x41;
    pub const POLL: u16 = 0x50;
    pub const THEND: u16 = 0x60;
    pub const HALT: u16 = 0x61;
}

impl Instruction {
    pub fn mnemonic(&self) -> &'static str {
        use Instruction::*;
        match self {
            MsReset { .. } => "MSRESET",
            MsArity { .. } => "MSARITY",
            MsIn { .. } => "MSIN",
            MsOff { .. } => "MSOFF",
            MsAct { .. } => "MSACT",
            MsFalse { .. } => "MSFALSE",
            MsRes { .. } => "MSRES",
            MsPut { .. } => "MSPUT",
            LoadI { .. } => "LOADI",
            Mov { .. } => "MOV",
            Add { .. } => "ADD",
            Sub { .. } => "SUB",
            And { .. } => "AND",
            Or { .. } => "OR",
            Load { .. } => "LOAD",
            Store { .. } => "STORE",
            Cmp { op, .. } => match op {
                CmpOp::Eq => "CMPEQ",
                CmpOp::Ne => "CMPNE",
                CmpOp::Lt => "CMPLT",
                CmpOp::Gt => "CMPGT",
                CmpOp::Le => "CMPLE",
                CmpOp::Ge => "CMPGE",
            },
            Jmp { .. } => "JMP",
            JmpIf { .. } => "JMPIF",
            Print { .. } => "PRINT",
            PrintS { .. } => "PRINTS",
            Poll { .. } => "POLL",
            ThEnd => "THEND",
            Halt => "HALT",
        }
    }

    pub fn class(&self) -> InstrClass {
        use Instruction::*;
        match self {
            MsReset { .. } | MsArity { .. } | MsIn { .. } | MsOff { .. } | MsAct { .. } | MsFalse { .. }
            | MsRes { .. } | MsPut { .. } => InstrClass::MsOp,
            Cmp { .. } => InstrClass::Comparison,
            Jmp { .. } | JmpIf { .. } => InstrClass::Jump,
            Poll { .. } => InstrClass::Poll,
            _ => InstrClass::Other,
        }
    }

    pub fn is_ms_op(&self) -> bool {
        self.class() == InstrClass::MsOp
    }

    /// Switch index referenced by a multi-switch instruction.
    pub fn switch(&self) -> Option<u16> {
        use Instruction::*;
        match *self {
            MsReset { sw } | MsArity { sw, .. } | MsIn { sw, .. } | MsOff { sw } | MsAct { sw, .. }
            | MsFalse { sw, .. } | MsRes { sw, .. } | MsPut { sw, .. } => Some(sw),
            _ => None,
        }
    }

    /// Number of lines this instruction needs on its switch.
    pub fn lines_needed(&self) -> usize {
        use Instruction::*;
        match *self {
            MsArity { arity, .. } => arity as usize,
            MsIn { line, .. } | MsAct { line, .. } | MsRes { line, .. } | MsPut { line, .. } => line as usize + 1,
            _ => 0,
        }
    }

    /// Code addresses this instruction refers to (0 is the null sentinel and
    /// is not reported).
    pub fn code_refs(&self) -> Option<Addr> {
        use Instruction::*;
        match *self {
            MsAct { addr, .. } | MsFalse { addr, .. } | Jmp { addr } | JmpIf { addr, .. } if addr != 0 => Some(addr),
            _ => None,
        }
    }

    pub fn with_code_ref(self, new: Addr) -> Self {
        use Instruction::*;
        match self {
            MsAct { sw, line, .. } => MsAct { sw, line, addr: new },
            MsFalse { sw, .. } => MsFalse { sw, addr: new },
            Jmp { .. } => Jmp { addr: new },
            JmpIf { rs, .. } => JmpIf { rs, addr: new },
            other => other,
        }
    }

    /// Data memory address touched, if any.
    pub fn data_ref(&self) -> Option<u16> {
        use Instruction::*;
        match *self {
            Load { addr, .. } | Store { addr, .. } | Poll { addr } => Some(addr),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u16> {
        use opcode as op;
        use Instruction::*;
        let r = |x: Reg| x.0 as u16;
        match *self {
            MsReset { sw } => vec![op::MSRESET, sw],
            MsArity { sw, arity, kind } => vec![op::MSARITY, sw, arity, kind.code()],
            MsIn { sw, line } => vec![op::MSIN, sw, line],
            MsOff { sw } => vec![op::MSOFF, sw],
            MsAct { sw, line, addr } => vec![op::MSACT, sw, line, addr],
            MsFalse { sw, addr } => vec![op::MSFALSE, sw, addr],
            MsRes { sw, line, field, rd } => vec![op::MSRES, sw, line, field, r(rd)],
            MsPut { sw, line, field, rs } => vec![op::MSPUT, sw, line, field, r(rs)],
            LoadI { rd, imm } => vec![op::LOADI, r(rd), imm as u16],
            Mov { rd, rs } => vec![op::MOV, r(rd), r(rs)],
            Add { rd, ra, rb } => vec![op::ADD, r(rd), r(ra), r(rb)],
            Sub { rd, ra, rb } => vec![op::SUB, r(rd), r(ra), r(rb)],
            And { rd, ra, rb } => vec![op::AND, r(rd), r(ra), r(rb)],
            Or { rd, ra, rb } => vec![op::OR, r(rd), r(ra), r(rb)],
            Load { rd, addr } => vec![op::LOAD, r(rd), addr],
            Store { rs, addr } => vec![op::STORE, r(rs), addr],
            Cmp { op: c, rd, ra, rb } => vec![op::CMP_BASE + c.offset(), r(rd), r(ra), r(rb)],
            Jmp { addr } => vec![op::JMP, addr],
            JmpIf { rs, addr } => vec![op::JMPIF, r(rs), addr],
            Print { rs } => vec![op::PRINT, r(rs)],
            PrintS { index } => vec![op::PRINTS, index],
            Poll { addr } => vec![op::POLL, addr],
            ThEnd => vec![op::THEND],
            Halt => vec![op::HALT],
        }
    }

    /// Decodes one instruction from the front of `words`, returning it and
    /// the number of words consumed.
    pub fn decode(words: &[u16]) -> Result<(Instruction, usize), IsaError> {
        use opcode as op;
        use Instruction::*;
        let Some(&opc) = words.first() else {
            return Err(IsaError::Decode("empty word stream".into()));
        };
        let arity = match opc {
            op::THEND | op::HALT => 0,
            op::MSRESET | op::MSOFF | op::JMP | op::PRINT | op::PRINTS | op::POLL => 1,
            op::MSIN | op::MSFALSE | op::LOADI | op::MOV | op::LOAD | op::STORE | op::JMPIF => 2,
            op::MSARITY | op::MSACT | op::ADD | op::SUB | op::AND | op::OR => 3,
            c if (op::CMP_BASE..op::CMP_BASE + 6).contains(&c) => 3,
            op::MSRES | op::MSPUT => 4,
            other => return Err(IsaError::Decode(format!("unknown opcode 0x{other:02X}"))),
        };
        if words.len() < 1 + arity {
            return Err(IsaError::Decode(format!("truncated instruction for opcode 0x{opc:02X}")));
        }
        let a = &words[1..=arity];
        let reg = |w: u16| Reg::new(w as usize).map_err(|_| IsaError::Decode(format!("bad register {w}")));
        let instr = match opc {
            op::MSRESET => MsReset { sw: a[0] },
            op::MSARITY => MsArity {
                sw: a[0],
                arity: a[1],
                kind: GateKind::from_code(a[2]).ok_or_else(|| IsaError::Decode(format!("bad gate kind {}", a[2])))?,
            },
            op::MSIN => MsIn { sw: a[0], line: a[1] },
            op::MSOFF => MsOff { sw: a[0] },
            op::MSACT => MsAct { sw: a[0], line: a[1], addr: a[2] },
            op::MSFALSE => MsFalse { sw: a[0], addr: a[1] },
            op::MSRES => MsRes { sw: a[0], line: a[1], field: a[2], rd: reg(a[3])? },
            op::MSPUT => MsPut { sw: a[0], line: a[1], field: a[2], rs: reg(a[3])? },
            op::LOADI => LoadI { rd: reg(a[0])?, imm: a[1] as i16 },
            op::MOV => Mov { rd: reg(a[0])?, rs: reg(a[1])? },
            op::ADD => Add { rd: reg(a[0])?, ra: reg(a[1])?, rb: reg(a[2])? },
            op::SUB => Sub { rd: reg(a[0])?, ra: reg(a[1])?, rb: reg(a[2])? },
            op::AND => And { rd: reg(a[0])?, ra: reg(a[1])?, rb: reg(a[2])? },
            op::OR => Or { rd: reg(a[0])?, ra: reg(a[1])?, rb: reg(a[2])? },
            op::LOAD => Load { rd: reg(a[0])?, addr: a[1] },
            op::STORE => Store { rs: reg(a[0])?, addr: a[1] },
            op::JMP => Jmp { addr: a[0] },
            op::JMPIF => JmpIf { rs: reg(a[0])?, addr: a[1] },
            op::PRINT => Print { rs: reg(a[0])? },
            op::PRINTS => PrintS { index: a[0] },
            op::POLL => Poll { addr: a[0] },
            op::THEND => ThEnd,
            op::HALT => Halt,
            c => Cmp { op: CmpOp::ALL[(c - op::CMP_BASE) as usize], rd: reg(a[0])?, ra: reg(a[1])?, rb: reg(a[2])? },
        };
        Ok((instr, 1 + arity))
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Instruction::*;
        let m = self.mnemonic();
        match *self {
            MsReset { sw } | MsOff { sw } => write!(f, "{m} {sw}"),
            MsArity { sw, arity, kind } => write!(f, "{m} {sw}, {arity}, {kind}"),
            MsIn { sw, line } => write!(f, "{m} {sw}, {line}"),
            MsAct { sw, line, addr } => write!(f, "{m} {sw}, {line}, {addr}"),
            MsFalse { sw, addr } => write!(f, "{m} {sw}, {addr}"),
            MsRes { sw, line, field, rd } => write!(f, "{m} {sw}, {line}, {field}, {rd}"),
            MsPut { sw, line, field, rs } => write!(f, "{m} {sw}, {line}, {field}, {rs}"),
            LoadI { rd, imm } => write!(f, "{m} {rd}, {imm}"),
            Mov { rd, rs } => write!(f, "{m} {rd}, {rs}"),
            Add { rd, ra, rb } | Sub { rd, ra, rb } | And { rd, ra, rb } | Or { rd, ra, rb } | Cmp { rd, ra, rb, .. } => {
                write!(f, "{m} {rd}, {ra}, {rb}")
            }
            Load { rd, addr } => write!(f, "{m} {rd}, {addr}"),
            Store { rs, addr } => write!(f, "{m} {rs}, {addr}"),
            Jmp { addr } => write!(f, "{m} {addr}"),
            JmpIf { rs, addr } => write!(f, "{m} {rs}, {addr}"),
            Print { rs } => write!(f, "{m} {rs}"),
            PrintS { index } => write!(f, "{m} {index}"),
            Poll { addr } => write!(f, "{m} {addr}"),
            ThEnd | Halt => f.write_str(m),
        }
    }
}
