//! Toolchain for a computer built around multi-switches: N-input threshold
//! gates whose firing can start several threads at once or join several
//! threads into one.
//!
//! * [`gate`] and [`voltage`]: behavioral and threshold models of one switch.
//! * [`isa`]: instruction set, encoding, assembler.
//! * [`lang`]: the MSL front end, lowering, switch allocation and branch
//!   statistics.
//! * [`vm`]: deterministic cycle-stepped machine with run metrics.
//! * [`apps`]: neural-net and multi-index record store demos.

pub mod apps;
pub mod gate;
pub mod isa;
pub mod lang;
pub mod shape;
pub mod vm;
pub mod voltage;

/// Machine word held in registers, memory and result payloads.
pub type Word = i64;
/// Code address. 0 is the null sentinel.
pub type Addr = u16;

pub use gate::{eval_gate, FireEvent, GateKind, MultiSwitch, SwitchConfig};
pub use isa::{Instruction, Program};
pub use shape::MachineShape;
pub use voltage::{eval_voltage, ThresholdGate};

pub type ThresholdGateF32 = ThresholdGate<f32>;
pub type ThresholdGateF64 = ThresholdGate<f64>;
/// Exact rational voltages.
pub type ThresholdGateExact = ThresholdGate<num_rational::Ratio<i64>>;
