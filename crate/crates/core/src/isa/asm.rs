//! Two-pass assembler and disassembler for the textual program format.
//!
//! ```text
//! ; comment
//! .entry main
//! main:   MSRESET 0
//!         MSACT 0, 0, worker     ; code operands may be labels
//!         PRINTS "done"
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::gate::GateKind;
use crate::Addr;

use super::{CmpOp, Instruction, IsaError, Program, Reg};

/// An instruction whose code-address operand may still be symbolic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmInstr {
    pub instr: Instruction,
    pub target: Option<String>,
}

impl From<Instruction> for AsmInstr {
    fn from(instr: Instruction) -> Self {
        AsmInstr { instr, target: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmItem {
    Label(String),
    Instr(AsmInstr, usize),
}

/// Assembler input after parsing: labels, instructions and the string pool.
#[derive(Debug, Clone, Default)]
pub struct Assembly {
    pub items: Vec<AsmItem>,
    pub strings: Vec<String>,
    pub entry: Option<String>,
}

impl Assembly {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(&mut self, name: impl Into<String>) {
        self.items.push(AsmItem::Label(name.into()));
    }

    pub fn push(&mut self, instr: Instruction) {
        self.items.push(AsmItem::Instr(instr.into(), 0));
    }

    /// Pushes an instruction whose code operand is resolved from `label`.
    pub fn push_to(&mut self, instr: Instruction, label: impl Into<String>) {
        self.items.push(AsmItem::Instr(AsmInstr { instr, target: Some(label.into()) }, 0));
    }

    pub fn intern(&mut self, s: &str) -> u16 {
        if let Some(i) = self.strings.iter().position(|x| x == s) {
            return i as u16;
        }
        self.strings.push(s.to_string());
        (self.strings.len() - 1) as u16
    }

    pub fn extend(&mut self, other: Assembly) {
        // string indices in `other` are rebased into ours
        let remap: Vec<u16> = other.strings.iter().map(|s| self.intern(s)).collect();
        for item in other.items {
            match item {
                AsmItem::Instr(mut ai, line) => {
                    if let Instruction::PrintS { index } = ai.instr {
                        ai.instr = Instruction::PrintS { index: remap[index as usize] };
                    }
                    self.items.push(AsmItem::Instr(ai, line));
                }
                label => self.items.push(label),
            }
        }
    }

    pub fn instr_count(&self) -> usize {
        self.items.iter().filter(|i| matches!(i, AsmItem::Instr(..))).count()
    }

    /// Second pass: assigns addresses and resolves symbolic operands.
    pub fn link(&self) -> Result<Program, IsaError> {
        let mut symbols: BTreeMap<String, Addr> = BTreeMap::new();
        let mut addr: usize = 1;
        let mut label_line: BTreeMap<&str, usize> = BTreeMap::new();
        for (idx, item) in self.items.iter().enumerate() {
            match item {
                AsmItem::Label(name) => {
                    let line = self.line_after(idx);
                    if symbols.contains_key(name) {
                        return Err(IsaError::Asm { line, msg: format!("duplicate label `{name}`") });
                    }
                    label_line.insert(name, line);
                    let a = u16::try_from(addr).map_err(|_| IsaError::Asm { line, msg: "program too large".into() })?;
                    symbols.insert(name.clone(), a);
                }
                AsmItem::Instr(..) => addr += 1,
            }
        }
        if addr - 1 > u16::MAX as usize {
            return Err(IsaError::Asm { line: 0, msg: "program exceeds 65535 instructions".into() });
        }
        let mut code = Vec::with_capacity(addr - 1);
        for item in &self.items {
            if let AsmItem::Instr(ai, line) = item {
                let instr = match &ai.target {
                    None => ai.instr,
                    Some(name) => {
                        let a = symbols
                            .get(name)
                            .ok_or_else(|| IsaError::Asm { line: *line, msg: format!("undefined label `{name}`") })?;
                        ai.instr.with_code_ref(*a)
                    }
                };
                code.push(instr);
            }
        }
        let entry = match &self.entry {
            None => 1,
            Some(name) => *symbols
                .get(name)
                .ok_or_else(|| IsaError::Asm { line: 0, msg: format!("undefined entry label `{name}`") })?,
        };
        let program = Program { code, entry, strings: self.strings.clone(), symbols, results: Vec::new() };
        program.validate().map_err(|e| IsaError::Asm { line: 0, msg: e.to_string() })?;
        Ok(program)
    }

    fn line_after(&self, idx: usize) -> usize {
        self.items[idx..]
            .iter()
            .find_map(|i| match i {
                AsmItem::Instr(_, l) => Some(*l),
                _ => None,
            })
            .unwrap_or(0)
    }
}

fn err(line: usize, msg: impl Into<String>) -> IsaError {
    IsaError::Asm { line, msg: msg.into() }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || "_.$#-@".contains(c))
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            '\\' if in_str && !escaped => {
                escaped = true;
                continue;
            }
            '"' if !escaped => in_str = !in_str,
            ';' if !in_str => return &line[..i],
            _ => {}
        }
        escaped = false;
    }
    line
}

fn split_operands(s: &str, line: usize) -> Result<Vec<String>, IsaError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    for c in s.chars() {
        if in_str {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            ',' => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    if in_str {
        return Err(err(line, "unterminated string"));
    }
    let last = cur.trim().to_string();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    if out.iter().any(|o| o.is_empty()) {
        return Err(err(line, "empty operand"));
    }
    Ok(out)
}

fn parse_number(s: &str, line: usize) -> Result<i64, IsaError> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| err(line, format!("malformed operand `{s}`")))?;
    Ok(if neg { -v } else { v })
}

fn word(s: &str, line: usize) -> Result<u16, IsaError> {
    let v = parse_number(s, line)?;
    u16::try_from(v).map_err(|_| err(line, format!("operand `{s}` does not fit in 16 bits")))
}

fn reg(s: &str, line: usize) -> Result<Reg, IsaError> {
    let idx = s
        .strip_prefix('r')
        .or_else(|| s.strip_prefix('R'))
        .and_then(|n| n.parse::<usize>().ok())
        .ok_or_else(|| err(line, format!("expected register, found `{s}`")))?;
    Reg::new(idx).map_err(|e| err(line, e.to_string()))
}

fn unescape(s: &str, line: usize) -> Result<String, IsaError> {
    let inner = s
        .strip_prefix('"')
        .and_then(|t| t.strip_suffix('"'))
        .ok_or_else(|| err(line, format!("malformed string `{s}`")))?;
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('\\') => out.push('\\'),
                Some('"') => out.push('"'),
                _ => return Err(err(line, "bad escape in string")),
            }
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// A code operand is either a literal address or a label.
fn code_operand(s: &str, line: usize) -> Result<(Addr, Option<String>), IsaError> {
    if s.starts_with(|c: char| c.is_ascii_digit() || c == '-') {
        Ok((word(s, line)?, None))
    } else if is_ident(s) {
        Ok((0, Some(s.to_string())))
    } else {
        Err(err(line, format!("malformed operand `{s}`")))
    }
}

fn parse_instr(asm: &mut Assembly, mnemonic: &str, ops: &[String], line: usize) -> Result<AsmInstr, IsaError> {
    use Instruction::*;
    let m = mnemonic.to_ascii_uppercase();
    let expect = |n: usize| -> Result<(), IsaError> {
        if ops.len() != n {
            Err(err(line, format!("{m} takes {n} operand(s), found {}", ops.len())))
        } else {
            Ok(())
        }
    };
    let plain = |i: Instruction| Ok(AsmInstr { instr: i, target: None });
    let cmp = |op: CmpOp| -> Result<AsmInstr, IsaError> {
        expect(3)?;
        plain(Cmp { op, rd: reg(&ops[0], line)?, ra: reg(&ops[1], line)?, rb: reg(&ops[2], line)? })
    };
    match m.as_str() {
        "MSRESET" => {
            expect(1)?;
            plain(MsReset { sw: word(&ops[0], line)? })
        }
        "MSARITY" => {
            expect(3)?;
            let kind = match ops[2].to_ascii_uppercase().as_str() {
                "AND" | "0" => GateKind::And,
                "OR" | "1" => GateKind::Or,
                other => return Err(err(line, format!("unknown gate kind `{other}`"))),
            };
            plain(MsArity { sw: word(&ops[0], line)?, arity: word(&ops[1], line)?, kind })
        }
        "MSIN" => {
            expect(2)?;
            plain(MsIn { sw: word(&ops[0], line)?, line: word(&ops[1], line)? })
        }
        "MSOFF" => {
            expect(1)?;
            plain(MsOff { sw: word(&ops[0], line)? })
        }
        "MSACT" => {
            expect(3)?;
            let (addr, target) = code_operand(&ops[2], line)?;
            Ok(AsmInstr { instr: MsAct { sw: word(&ops[0], line)?, line: word(&ops[1], line)?, addr }, target })
        }
        "MSFALSE" => {
            expect(2)?;
            let (addr, target) = code_operand(&ops[1], line)?;
            Ok(AsmInstr { instr: MsFalse { sw: word(&ops[0], line)?, addr }, target })
        }
        "MSRES" | "MSPUT" => {
            expect(4)?;
            let (sw, l, field, r) = (word(&ops[0], line)?, word(&ops[1], line)?, word(&ops[2], line)?, reg(&ops[3], line)?);
            if m == "MSRES" {
                plain(MsRes { sw, line: l, field, rd: r })
            } else {
                plain(MsPut { sw, line: l, field, rs: r })
            }
        }
        "LOADI" => {
            expect(2)?;
            let v = parse_number(&ops[1], line)?;
            let imm = i16::try_from(v).map_err(|_| err(line, format!("immediate `{}` does not fit in 16 bits", ops[1])))?;
            plain(LoadI { rd: reg(&ops[0], line)?, imm })
        }
        "MOV" => {
            expect(2)?;
            plain(Mov { rd: reg(&ops[0], line)?, rs: reg(&ops[1], line)? })
        }
        "ADD" | "SUB" | "AND" | "OR" => {
            expect(3)?;
            let (rd, ra, rb) = (reg(&ops[0], line)?, reg(&ops[1], line)?, reg(&ops[2], line)?);
            plain(match m.as_str() {
                "ADD" => Add { rd, ra, rb },
                "SUB" => Sub { rd, ra, rb },
                "AND" => And { rd, ra, rb },
                _ => Or { rd, ra, rb },
            })
        }
        "LOAD" => {
            expect(2)?;
            plain(Load { rd: reg(&ops[0], line)?, addr: word(&ops[1], line)? })
        }
        "STORE" => {
            expect(2)?;
            plain(Store { rs: reg(&ops[0], line)?, addr: word(&ops[1], line)? })
        }
        "CMPEQ" => cmp(CmpOp::Eq),
        "CMPNE" => cmp(CmpOp::Ne),
        "CMPLT" => cmp(CmpOp::Lt),
        "CMPGT" => cmp(CmpOp::Gt),
        "CMPLE" => cmp(CmpOp::Le),
        "CMPGE" => cmp(CmpOp::Ge),
        "JMP" => {
            expect(1)?;
            let (addr, target) = code_operand(&ops[0], line)?;
            Ok(AsmInstr { instr: Jmp { addr }, target })
        }
        "JMPIF" => {
            expect(2)?;
            let (addr, target) = code_operand(&ops[1], line)?;
            Ok(AsmInstr { instr: JmpIf { rs: reg(&ops[0], line)?, addr }, target })
        }
        "PRINT" => {
            expect(1)?;
            plain(Print { rs: reg(&ops[0], line)? })
        }
        "PRINTS" => {
            expect(1)?;
            let index = if ops[0].starts_with('"') {
                let s = unescape(&ops[0], line)?;
                asm.intern(&s)
            } else {
                word(&ops[0], line)?
            };
            plain(PrintS { index })
        }
        "POLL" => {
            expect(1)?;
            plain(Poll { addr: word(&ops[0], line)? })
        }
        "THEND" => {
            expect(0)?;
            plain(ThEnd)
        }
        "HALT" => {
            expect(0)?;
            plain(Halt)
        }
        other => Err(err(line, format!("unknown mnemonic `{other}`"))),
    }
}

/// Parses assembly text (first pass). Line numbers in errors are 1-based.
pub fn parse(text: &str) -> Result<Assembly, IsaError> {
    let mut asm = Assembly::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let mut rest = strip_comment(raw).trim();
        if rest.is_empty() {
            continue;
        }
        if let Some(dir) = rest.strip_prefix(".entry") {
            let name = dir.trim();
            if !is_ident(name) {
                return Err(err(line, format!("malformed entry label `{name}`")));
            }
            asm.entry = Some(name.to_string());
            continue;
        }
        // leading labels
        while let Some(colon) = rest.find(':') {
            let head = rest[..colon].trim();
            if head.contains(char::is_whitespace) || head.contains('"') {
                break;
            }
            if !is_ident(head) {
                return Err(err(line, format!("malformed label `{head}`")));
            }
            asm.label(head);
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (mnemonic, operands) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        let ops = split_operands(operands, line)?;
        let ai = parse_instr(&mut asm, mnemonic, &ops, line)?;
        asm.items.push(AsmItem::Instr(ai, line));
    }
    Ok(asm)
}

pub fn assemble(text: &str) -> Result<Program, IsaError> {
    parse(text)?.link()
}

/// Renders a program as assembly text. Every referenced code address gets a
/// generated `L<addr>` label.
pub fn disassemble(p: &Program) -> String {
    use std::collections::BTreeSet;
    let mut targets: BTreeSet<Addr> = p.code.iter().filter_map(|i| i.code_refs()).collect();
    if p.entry != 1 && p.is_code_addr(p.entry) {
        targets.insert(p.entry);
    }
    let mut out = String::new();
    if p.entry != 1 && p.is_code_addr(p.entry) {
        writeln!(out, ".entry L{}", p.entry).unwrap();
    }
    for (idx, instr) in p.code.iter().enumerate() {
        let addr = (idx + 1) as Addr;
        let label = if targets.contains(&addr) { format!("L{addr}:") } else { String::new() };
        let body = match *instr {
            Instruction::MsAct { sw, line, addr } if addr != 0 => format!("MSACT {sw}, {line}, L{addr}"),
            Instruction::MsFalse { sw, addr } if addr != 0 => format!("MSFALSE {sw}, L{addr}"),
            Instruction::Jmp { addr } if addr != 0 => format!("JMP L{addr}"),
            Instruction::JmpIf { rs, addr } if addr != 0 => format!("JMPIF {rs}, L{addr}"),
            Instruction::PrintS { index } => match p.strings.get(index as usize) {
                Some(s) => format!("PRINTS {}", escape(s)),
                None => format!("PRINTS {index}"),
            },
            other => other.to_string(),
        };
        writeln!(out, "{label:<8}{body}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_loop() {
        let p = assemble("L: JMP L").unwrap();
        assert_eq!(p.code, vec![Instruction::Jmp { addr: 1 }]);
        assert_eq!(p.symbols["L"], 1);
    }

    #[test]
    fn forward_label_in_msact() {
        let src = "MSACT 0, 0, Lbl\nTHEND\nTHEND\nTHEND\nTHEND\nTHEND\nLbl: HALT\n";
        let p = assemble(src).unwrap();
        assert_eq!(p.code[0], Instruction::MsAct { sw: 0, line: 0, addr: 7 });
    }

    #[test]
    fn undefined_label_is_named() {
        let e = assemble("JMP nowhere").unwrap_err();
        assert_eq!(e, IsaError::Asm { line: 1, msg: "undefined label `nowhere`".into() });
    }

    #[test]
    fn duplicate_label() {
        let e = assemble("a: THEND\na: THEND").unwrap_err();
        assert!(matches!(e, IsaError::Asm { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn malformed_operands() {
        assert!(matches!(assemble("MSIN 1"), Err(IsaError::Asm { line: 1, .. })));
        assert!(matches!(assemble("\nMSIN 1, 70000"), Err(IsaError::Asm { line: 2, .. })));
        assert!(matches!(assemble("LOADI r1, 40000"), Err(IsaError::Asm { .. })));
        assert!(matches!(assemble("PRINT r16"), Err(IsaError::Asm { .. })));
        assert!(matches!(assemble("FROB 1"), Err(IsaError::Asm { .. })));
    }

    #[test]
    fn comments_hex_and_strings() {
        let p = assemble("; header\n  LOADI r1, 0x10 ; sixteen\n PRINTS \"a;b\\\"c\"\nTHEND").unwrap();
        assert_eq!(p.code[0], Instruction::LoadI { rd: Reg::new(1).unwrap(), imm: 16 });
        assert_eq!(p.strings, vec!["a;b\"c".to_string()]);
    }

    #[test]
    fn disassembly_reassembles() {
        let src = ".entry start\nw: PRINTS \"x\"\nTHEND\nstart: MSRESET 0\nMSARITY 0, 1, AND\nMSACT 0, 0, w\nMSACT 0, 1, 0\nMSIN 0, 0\nTHEND";
        let p = assemble(src).unwrap();
        let text = disassemble(&p);
        let q = assemble(&text).unwrap();
        assert_eq!(p.code, q.code);
        assert_eq!(p.entry, q.entry);
        assert_eq!(p.strings, q.strings);
    }
}
