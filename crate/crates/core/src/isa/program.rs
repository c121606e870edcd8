use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::Addr;

use super::{Instruction, IsaError};

pub const MAGIC: &[u8; 4] = b"MSW1";
pub const FORMAT_VERSION: u16 = 1;

/// Where a compiled program keeps the result record of one mswitch target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultLocation {
    /// Result slot `line` of physical switch `sw`.
    Switch { sw: u16, line: u16 },
    /// Status word at `status`, payload fields from `payload` upward.
    Memory { status: u16, payload: u16 },
}

/// Compiler metadata naming a result record: `switch.target.field`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultBinding {
    pub switch: String,
    pub target: String,
    /// Payload field names; field index `i + 1` reads `fields[i]`.
    pub fields: Vec<String>,
    pub location: ResultLocation,
}

/// Executable image. Code addresses start at 1; address 0 is the null
/// sentinel and never names an instruction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub code: Vec<Instruction>,
    pub entry: Addr,
    pub strings: Vec<String>,
    pub symbols: BTreeMap<String, Addr>,
    pub results: Vec<ResultBinding>,
}

impl Program {
    pub fn new(code: Vec<Instruction>) -> Self {
        Program { code, entry: 1, ..Default::default() }
    }

    pub fn fetch(&self, addr: Addr) -> Option<&Instruction> {
        if addr == 0 {
            return None;
        }
        self.code.get(addr as usize - 1)
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    pub fn is_code_addr(&self, addr: Addr) -> bool {
        addr >= 1 && (addr as usize) <= self.code.len()
    }

    /// Minimum size of each physical switch the program touches, indexed by
    /// switch number. Unused switches report 0.
    pub fn switch_demands(&self) -> Vec<usize> {
        let mut demands: Vec<usize> = Vec::new();
        let mut touch = |sw: u16, lines: usize| {
            let sw = sw as usize;
            if demands.len() <= sw {
                demands.resize(sw + 1, 0);
            }
            demands[sw] = demands[sw].max(lines.max(1));
        };
        for i in &self.code {
            if let Some(sw) = i.switch() {
                touch(sw, i.lines_needed());
            }
        }
        for r in &self.results {
            if let ResultLocation::Switch { sw, line } = r.location {
                touch(sw, line as usize + 1);
            }
        }
        demands
    }

    /// Words of data memory the program addresses.
    pub fn data_size(&self) -> usize {
        let mut size = 0usize;
        for i in &self.code {
            if let Some(a) = i.data_ref() {
                size = size.max(a as usize + 1);
            }
        }
        for r in &self.results {
            if let ResultLocation::Memory { status, payload } = r.location {
                size = size.max(status as usize + 1).max(payload as usize + r.fields.len());
            }
        }
        size
    }

    /// Checks that every jump lands inside the program and every string
    /// index exists. Switch targets are checked by the machine when they fire.
    pub fn validate(&self) -> Result<(), IsaError> {
        if self.code.len() > u16::MAX as usize {
            return Err(IsaError::Operand("program exceeds 65535 instructions".into()));
        }
        if !self.code.is_empty() && !self.is_code_addr(self.entry) {
            return Err(IsaError::Operand(format!("entry {} outside code", self.entry)));
        }
        for (idx, i) in self.code.iter().enumerate() {
            if let Some(a) = i.code_refs() {
                let switch_target = matches!(i, Instruction::MsAct { .. } | Instruction::MsFalse { .. });
                if !switch_target && !self.is_code_addr(a) {
                    return Err(IsaError::Operand(format!("address {a} at {} outside code", idx + 1)));
                }
            }
            if let Instruction::PrintS { index } = i {
                if *index as usize >= self.strings.len() {
                    return Err(IsaError::Operand(format!("string #{index} at {} not defined", idx + 1)));
                }
            }
        }
        Ok(())
    }

    pub fn words(&self) -> Vec<u16> {
        self.code.iter().flat_map(|i| i.encode()).collect()
    }

    /// Serializes to the `MSW1` container.
    pub fn to_bytes(&self) -> Result<Vec<u8>, IsaError> {
        let mut words: Vec<u16> = vec![FORMAT_VERSION, self.entry];
        let count = u16::try_from(self.code.len()).map_err(|_| IsaError::Operand("too many instructions".into()))?;
        let nstr = u16::try_from(self.strings.len()).map_err(|_| IsaError::Operand("too many strings".into()))?;
        words.push(count);
        words.push(nstr);
        for s in &self.strings {
            let bytes = s.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| IsaError::Operand("string too long".into()))?;
            words.push(len);
            for pair in bytes.chunks(2) {
                let lo = pair[0] as u16;
                let hi = pair.get(1).copied().unwrap_or(0) as u16;
                words.push(lo | hi << 8);
            }
        }
        words.extend(self.words());
        let mut out = MAGIC.to_vec();
        for w in words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Program, IsaError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(IsaError::Decode("missing MSW1 magic".into()));
        }
        let body = &bytes[4..];
        if !body.len().is_multiple_of(2) {
            return Err(IsaError::Decode("odd byte count in word stream".into()));
        }
        let words: Vec<u16> = body.chunks(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let mut pos = 0usize;
        let mut next = |what: &str| -> Result<u16, IsaError> {
            let w = words.get(pos).copied().ok_or_else(|| IsaError::Decode(format!("truncated header ({what})")))?;
            pos += 1;
            Ok(w)
        };
        let version = next("version")?;
        if version != FORMAT_VERSION {
            return Err(IsaError::Decode(format!("unsupported format version {version}")));
        }
        let entry = next("entry")?;
        let count = next("instruction count")? as usize;
        let nstr = next("string count")? as usize;
        let mut strings = Vec::with_capacity(nstr);
        for _ in 0..nstr {
            let len = next("string length")? as usize;
            let mut raw = Vec::with_capacity(len + 1);
            for _ in 0..len.div_ceil(2) {
                let w = next("string data")?;
                raw.push((w & 0xFF) as u8);
                raw.push((w >> 8) as u8);
            }
            raw.truncate(len);
            strings.push(String::from_utf8(raw).map_err(|_| IsaError::Decode("string is not UTF-8".into()))?);
        }
        let mut code = Vec::with_capacity(count);
        let mut rest = &words[pos..];
        while code.len() < count {
            let (instr, used) = Instruction::decode(rest)?;
            code.push(instr);
            rest = &rest[used..];
        }
        if !rest.is_empty() {
            return Err(IsaError::Decode(format!("{} trailing words after code", rest.len())));
        }
        let p = Program { code, entry, strings, ..Default::default() };
        p.validate()?;
        Ok(p)
    }
}
