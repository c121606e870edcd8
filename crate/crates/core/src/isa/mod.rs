//! Instruction set: the multi-switch opcodes plus a small general-purpose
//! core, their 16-bit word encoding, the `MSW1` binary container and a
//! two-pass assembler.

mod asm;
mod instruction;
mod program;

use thiserror::Error;

pub use asm::{assemble, disassemble, parse as parse_assembly, AsmInstr, AsmItem, Assembly};
pub use instruction::{opcode, CmpOp, InstrClass, Instruction, Reg, NUM_REGS};
pub use program::{Program, ResultBinding, ResultLocation, FORMAT_VERSION, MAGIC};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("encoding error: {0}")]
    Operand(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("assembly error at line {line}: {msg}")]
    Asm { line: usize, msg: String },
}
