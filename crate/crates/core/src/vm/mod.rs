//! Deterministic cycle-stepped machine over a bank of multi-switches.

mod machine;
mod metrics;

use thiserror::Error;

pub use machine::{
    canonical_output, Machine, OutputRecord, PhaseStep, RunOutcome, RunResult, Thread, ThreadStatus, TraceRecord,
    Value, DEFAULT_MAX_CYCLES,
};
pub use metrics::{RunMetrics, SpawnRecord};

use crate::Addr;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VmError {
    #[error("load error: {0}")]
    Load(String),
    #[error("trap in thread {thread} at pc {pc} (cycle {cycle}): {reason}")]
    Trap { thread: usize, pc: Addr, cycle: u64, reason: String },
    #[error("timeout: cycle limit {limit} exceeded")]
    Timeout { limit: u64 },
    #[error("result not ready: {0}")]
    NotReady(String),
    #[error("unknown name: {0}")]
    UnknownName(String),
}
