//! Behavioral model of a single multi-switch gate.
//!
//! A switch has `size` physical lines. A logical use configures an `arity`
//! and a gate kind; firing looks only at lines `[0, arity)`. When it fires it
//! emits every nonzero address in its target table. A dedicated bypass input
//! forces a FALSE outcome, which keeps a joiner from waiting forever on a
//! contributor that failed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Addr, Word};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    And,
    Or,
}

impl GateKind {
    pub fn code(self) -> u16 {
        match self {
            GateKind::And => 0,
            GateKind::Or => 1,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            0 => Some(GateKind::And),
            1 => Some(GateKind::Or),
            _ => None,
        }
    }
}

impl std::fmt::Display for GateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateKind::And => f.write_str("AND"),
            GateKind::Or => f.write_str("OR"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GateError {
    #[error("shape error: arity {arity} does not fit a switch of size {size}")]
    Shape { arity: usize, size: usize },
    #[error("line {line} out of range for a switch of size {size}")]
    Line { line: usize, size: usize },
    #[error("gate evaluated with no inputs")]
    EmptyInput,
    #[error("input level is neither 0 nor the unit voltage")]
    Level,
    #[error("voltage model parameters must be positive")]
    Parameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultStatus {
    Pending,
    True,
    False,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub status: ResultStatus,
    pub payload: Vec<Word>,
}

impl ResultRecord {
    fn pending() -> Self {
        ResultRecord { status: ResultStatus::Pending, payload: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FireEvent {
    Idle,
    /// Nonzero targets, in line order.
    Fired(Vec<Addr>),
    /// Bypass outcome; carries the false target when one is configured.
    False(Option<Addr>),
}

/// Configuration snapshot: everything except input, bypass and result state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchConfig {
    pub arity: usize,
    pub kind: GateKind,
    pub targets: Vec<Addr>,
    pub false_target: Addr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiSwitch {
    id: usize,
    size: usize,
    arity: usize,
    kind: GateKind,
    inputs: Vec<bool>,
    bypass: bool,
    targets: Vec<Addr>,
    false_target: Addr,
    results: Vec<ResultRecord>,
}

impl MultiSwitch {
    pub fn new(size: usize, arity: usize, kind: GateKind) -> Result<Self, GateError> {
        Self::with_id(0, size, arity, kind)
    }

    pub fn with_id(id: usize, size: usize, arity: usize, kind: GateKind) -> Result<Self, GateError> {
        if size < 2 || arity < 1 || arity > size {
            return Err(GateError::Shape { arity, size });
        }
        Ok(MultiSwitch {
            id,
            size,
            arity,
            kind,
            inputs: vec![false; size],
            bypass: false,
            targets: vec![0; size],
            false_target: 0,
            results: vec![ResultRecord::pending(); size],
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn arity(&self) -> usize {
        self.arity
    }
    pub fn kind(&self) -> GateKind {
        self.kind
    }
    pub fn inputs(&self) -> &[bool] {
        &self.inputs
    }
    pub fn bypass(&self) -> bool {
        self.bypass
    }
    pub fn targets(&self) -> &[Addr] {
        &self.targets
    }
    pub fn false_target(&self) -> Addr {
        self.false_target
    }
    pub fn results(&self) -> &[ResultRecord] {
        &self.results
    }

    /// True when some input or the bypass is raised but the switch has not
    /// fired yet.
    pub fn is_waiting(&self) -> bool {
        self.bypass || self.inputs.iter().any(|&b| b)
    }

    fn check_line(&self, line: usize) -> Result<(), GateError> {
        if line >= self.size {
            Err(GateError::Line { line, size: self.size })
        } else {
            Ok(())
        }
    }

    pub fn set_shape(&mut self, arity: usize, kind: GateKind) -> Result<(), GateError> {
        if arity < 1 || arity > self.size {
            return Err(GateError::Shape { arity, size: self.size });
        }
        self.arity = arity;
        self.kind = kind;
        Ok(())
    }

    pub fn drive_input(&mut self, line: usize) -> Result<(), GateError> {
        self.check_line(line)?;
        self.inputs[line] = true;
        Ok(())
    }

    pub fn drive_bypass(&mut self) {
        self.bypass = true;
    }

    pub fn set_target(&mut self, line: usize, addr: Addr) -> Result<(), GateError> {
        self.check_line(line)?;
        self.targets[line] = addr;
        Ok(())
    }

    pub fn set_false_target(&mut self, addr: Addr) {
        self.false_target = addr;
    }

    pub fn result(&self, line: usize) -> Result<&ResultRecord, GateError> {
        self.check_line(line)?;
        Ok(&self.results[line])
    }

    pub fn set_status(&mut self, line: usize, ok: bool) -> Result<(), GateError> {
        self.check_line(line)?;
        self.results[line].status = if ok { ResultStatus::True } else { ResultStatus::False };
        Ok(())
    }

    /// Writes payload field `index` (0-based) of the result on `line`,
    /// growing the payload with zeros as needed.
    pub fn set_payload(&mut self, line: usize, index: usize, value: Word) -> Result<(), GateError> {
        self.check_line(line)?;
        let payload = &mut self.results[line].payload;
        if payload.len() <= index {
            payload.resize(index + 1, 0);
        }
        payload[index] = value;
        Ok(())
    }

    fn clear_transient(&mut self) {
        self.inputs.iter_mut().for_each(|b| *b = false);
        self.bypass = false;
    }

    /// Evaluates the switch at the end of a cycle.
    pub fn step(&mut self) -> FireEvent {
        if self.bypass {
            self.clear_transient();
            for r in &mut self.results {
                if r.status == ResultStatus::Pending {
                    r.status = ResultStatus::False;
                }
            }
            let ft = (self.false_target != 0).then_some(self.false_target);
            return FireEvent::False(ft);
        }
        let high = self.inputs[..self.arity].iter().filter(|&&b| b).count();
        let fire = match self.kind {
            GateKind::And => high == self.arity,
            GateKind::Or => high > 0,
        };
        if !fire {
            return FireEvent::Idle;
        }
        self.clear_transient();
        FireEvent::Fired(self.targets.iter().copied().filter(|&a| a != 0).collect())
    }

    /// Zeroes inputs, bypass, targets, false target and results. Shape is kept.
    pub fn reset(&mut self) {
        self.clear_transient();
        self.targets.iter_mut().for_each(|a| *a = 0);
        self.false_target = 0;
        self.results.iter_mut().for_each(|r| *r = ResultRecord::pending());
    }

    pub fn save_config(&self) -> SwitchConfig {
        SwitchConfig {
            arity: self.arity,
            kind: self.kind,
            targets: self.targets.clone(),
            false_target: self.false_target,
        }
    }

    pub fn load_config(&mut self, cfg: &SwitchConfig) -> Result<(), GateError> {
        if cfg.arity < 1 || cfg.arity > self.size || cfg.targets.len() > self.size {
            return Err(GateError::Shape { arity: cfg.arity.max(cfg.targets.len()), size: self.size });
        }
        self.arity = cfg.arity;
        self.kind = cfg.kind;
        self.targets = cfg.targets.clone();
        self.targets.resize(self.size, 0);
        self.false_target = cfg.false_target;
        self.clear_transient();
        self.results.iter_mut().for_each(|r| *r = ResultRecord::pending());
        Ok(())
    }
}

/// N-input AND/OR evaluated in one step, not as a cascade of 2-input gates.
pub fn eval_gate(kind: GateKind, inputs: &[bool]) -> Result<bool, GateError> {
    if inputs.is_empty() {
        return Err(GateError::EmptyInput);
    }
    Ok(match kind {
        GateKind::And => inputs.iter().all(|&b| b),
        GateKind::Or => inputs.iter().any(|&b| b),
    })
}
