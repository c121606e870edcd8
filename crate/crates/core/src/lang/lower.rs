//! Lowering from the AST to a symbolic assembly in which every switch
//! operand names a logical switch, and materialization of that assembly
//! onto physical switches.

use std::collections::BTreeMap;

use serde::Serialize;

use super::alloc::{AllocationTable, Demand, Placement, Role};
use super::ast::*;
use super::{CompileError, Mode};
use crate::gate::GateKind;
use crate::isa::{AsmInstr, AsmItem, Assembly, CmpOp, Instruction, Program, Reg, ResultBinding, ResultLocation};

/// A switch as the compiler sees it: one lifetime of a declared name, or a
/// compiler temporary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Logical {
    pub name: String,
    pub role: Role,
    pub lines: usize,
    pub first: Option<usize>,
    pub last: Option<usize>,
}

impl Logical {
    pub fn is_used(&self) -> bool {
        self.first.is_some()
    }

    pub fn lifetime(&self) -> Option<(usize, usize)> {
        Some((self.first?, self.last? + 1))
    }
}

#[derive(Debug, Clone)]
pub struct Ir {
    pub mode: Mode,
    pub asm: Assembly,
    pub logical: Vec<Logical>,
    /// Result bindings; switch locations hold logical ids.
    pub results: Vec<ResultBinding>,
    pub joins: usize,
    pub fused_ifs: usize,
}

impl Ir {
    /// Demands for every used logical switch, with the logical id of each.
    pub fn demands(&self) -> Vec<(usize, Demand)> {
        self.logical
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let (a, b) = l.lifetime()?;
                let d = Demand { name: l.name.clone(), lines: l.lines.max(1), role: l.role, lifetime: None };
                Some((i, d.with_lifetime(a, b)))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct TargetInfo {
    name: String,
    line: usize,
    fields: Vec<String>,
    mem: Option<(u16, u16)>,
}

#[derive(Debug, Clone)]
struct SwState {
    logical: usize,
    has_call: bool,
    lifetime_no: usize,
    targets: Vec<TargetInfo>,
}

struct RetCtx {
    label: Option<String>,
    status: Option<u16>,
}

#[derive(Default)]
struct LabelScope {
    /// source label -> (assembly label, labeled statement)
    map: BTreeMap<String, String>,
}

/// Stores a target's payload words and status where the mode keeps results.
type Publish<'p, T> = dyn Fn(&mut T, &[u16], Option<u16>) + 'p;

struct Lowerer<'a> {
    procs: BTreeMap<&'a str, &'a ProcDef>,
    mode: Mode,
    fuse: usize,
    bufs: Vec<Assembly>,
    deferred: Vec<Assembly>,
    globals: BTreeMap<String, u16>,
    frames: Vec<BTreeMap<String, u16>>,
    next_addr: usize,
    label_scopes: Vec<LabelScope>,
    label_stmts: Vec<BTreeMap<String, &'a Stmt>>,
    label_points: BTreeMap<String, usize>,
    switch_scopes: Vec<BTreeMap<String, SwState>>,
    lifetimes_seen: BTreeMap<String, usize>,
    logical: Vec<Logical>,
    regions: Vec<(usize, Vec<usize>)>,
    loops: Vec<(usize, usize)>,
    point: usize,
    counter: usize,
    inline_stack: Vec<String>,
    rets: Vec<RetCtx>,
    results: Vec<ResultBinding>,
    joins: usize,
    fused_ifs: usize,
}

fn reg(i: usize) -> Reg {
    Reg::new(i).expect("register index checked by caller")
}

fn sem<T>(pos: Pos, msg: impl Into<String>) -> Result<T, CompileError> {
    Err(CompileError::Semantic { pos, msg: msg.into() })
}

fn expr_pos(e: &Expr) -> Pos {
    match e {
        Expr::Var(_, p) | Expr::Result { pos: p, .. } => *p,
        Expr::MsCall(c) => c.pos,
        Expr::Bin(_, l, _) => expr_pos(l),
        _ => Pos::default(),
    }
}

fn has_return_value(stmts: &[Stmt]) -> bool {
    let mut found = false;
    for s in stmts {
        s.walk(&mut |s| {
            if matches!(s, Stmt::Return { value: Some(_), .. }) {
                found = true;
            }
        });
    }
    found
}

/// Lowers a parsed program. Conditions with at least `fuse` conjuncts
/// become parallel comparisons in the switch-based modes.
pub fn lower(ast: &Ast, mode: Mode, fuse: usize) -> Result<Ir, CompileError> {
    let mut procs = BTreeMap::new();
    for p in &ast.procs {
        if procs.insert(p.name.as_str(), p).is_some() {
            return sem(p.pos, format!("procedure `{}` defined twice", p.name));
        }
    }
    let mut l = Lowerer {
        procs,
        mode,
        fuse: fuse.max(2),
        bufs: vec![Assembly::new()],
        deferred: Vec::new(),
        globals: BTreeMap::new(),
        frames: Vec::new(),
        next_addr: 0,
        label_scopes: Vec::new(),
        label_stmts: Vec::new(),
        label_points: BTreeMap::new(),
        switch_scopes: vec![BTreeMap::new()],
        lifetimes_seen: BTreeMap::new(),
        logical: Vec::new(),
        regions: Vec::new(),
        loops: Vec::new(),
        point: 0,
        counter: 0,
        inline_stack: Vec::new(),
        rets: vec![RetCtx { label: None, status: None }],
        results: Vec::new(),
        joins: 0,
        fused_ifs: 0,
    };
    l.enter_labels(&ast.body)?;
    for s in &ast.body {
        l.stmt(s)?;
    }
    l.emit(Instruction::ThEnd);
    l.finish_lifetimes();
    let mut asm = l.bufs.pop().expect("main buffer");
    for d in std::mem::take(&mut l.deferred) {
        asm.extend(d);
    }
    Ok(Ir { mode, asm, logical: l.logical, results: l.results, joins: l.joins, fused_ifs: l.fused_ifs })
}

impl<'a> Lowerer<'a> {
    fn fresh(&mut self, what: &str) -> String {
        self.counter += 1;
        format!("{what}.{}", self.counter)
    }

    fn out(&mut self) -> &mut Assembly {
        self.bufs.last_mut().expect("output buffer")
    }

    fn emit(&mut self, i: Instruction) {
        self.out().push(i);
    }

    fn emit_to(&mut self, i: Instruction, label: &str) {
        self.out().push_to(i, label);
    }

    fn label(&mut self, name: &str) {
        self.out().label(name);
    }

    fn touch(&mut self, lsw: usize) {
        let p = self.point;
        let l = &mut self.logical[lsw];
        l.first = Some(l.first.map_or(p, |f| f.min(p)));
        l.last = Some(l.last.map_or(p, |f| f.max(p)));
    }

    /// Emits a switch instruction whose `sw` operand is logical switch `lsw`.
    fn ms(&mut self, lsw: usize, i: Instruction) {
        self.touch(lsw);
        self.emit(i);
    }

    fn ms_to(&mut self, lsw: usize, i: Instruction, label: &str) {
        self.touch(lsw);
        self.emit_to(i, label);
    }

    fn new_logical(&mut self, name: String, role: Role, lines: usize) -> usize {
        self.logical.push(Logical { name, role, lines, first: None, last: None });
        let id = self.logical.len() - 1;
        for r in &mut self.regions {
            r.1.push(id);
        }
        id
    }

    fn new_lifetime(&mut self, name: &str) -> SwState {
        let n = self.lifetimes_seen.entry(name.to_string()).or_insert(0);
        *n += 1;
        let n = *n;
        let label = if n == 1 { name.to_string() } else { format!("{name}#{n}") };
        let id = self.new_logical(label, Role::Spawner, 1);
        SwState { logical: id, has_call: false, lifetime_no: n, targets: Vec::new() }
    }

    fn temp_switch(&mut self, what: &str, role: Role, lines: usize) -> usize {
        self.counter += 1;
        let name = format!("${what}{}", self.counter);
        self.new_logical(name, role, lines)
    }

    fn region_begin(&mut self) {
        self.regions.push((self.point, Vec::new()));
    }

    /// Switches created while lowering parallel threads stay live for the
    /// whole parallel region, since sibling threads run concurrently.
    fn region_end(&mut self) {
        let (start, created) = self.regions.pop().expect("open region");
        let end = self.point;
        for id in created {
            let l = &mut self.logical[id];
            if let (Some(f), Some(la)) = (l.first, l.last) {
                l.first = Some(f.min(start));
                l.last = Some(la.max(end));
            }
        }
    }

    /// A backward `goto` makes everything live anywhere inside the loop
    /// live for the whole loop.
    fn finish_lifetimes(&mut self) {
        let mut changed = true;
        while changed {
            changed = false;
            for &(a, b) in &self.loops {
                for l in &mut self.logical {
                    let (Some(f), Some(la)) = (l.first, l.last) else { continue };
                    if f <= b && a <= la && (f > a || la < b) {
                        l.first = Some(f.min(a));
                        l.last = Some(la.max(b));
                        changed = true;
                    }
                }
            }
        }
    }

    fn alloc_words(&mut self, n: usize, pos: Pos) -> Result<u16, CompileError> {
        let a = self.next_addr;
        self.next_addr += n;
        if self.next_addr > u16::MAX as usize {
            return sem(pos, "data memory exhausted");
        }
        Ok(a as u16)
    }

    fn var_addr(&mut self, name: &str, pos: Pos) -> Result<u16, CompileError> {
        if let Some(f) = self.frames.last() {
            if let Some(&a) = f.get(name) {
                return Ok(a);
            }
        }
        if let Some(&a) = self.globals.get(name) {
            return Ok(a);
        }
        let a = self.alloc_words(1, pos)?;
        self.globals.insert(name.to_string(), a);
        Ok(a)
    }

    fn switch_state(&mut self, name: &str, pos: Pos) -> Result<&mut SwState, CompileError> {
        let idx = self.switch_scopes.iter().rposition(|s| s.contains_key(name));
        match idx {
            Some(i) => Ok(self.switch_scopes[i].get_mut(name).expect("present")),
            None => Err(CompileError::Undeclared { name: name.to_string(), pos }),
        }
    }

    // ---- labels -------------------------------------------------------

    fn enter_labels(&mut self, body: &'a [Stmt]) -> Result<(), CompileError> {
        let mut scope = LabelScope::default();
        let mut stmts = BTreeMap::new();
        let mut dup = None;
        for s in body {
            s.walk(&mut |s| {
                if let Stmt::Labeled { label, stmt, pos } = s {
                    if scope.map.contains_key(label) {
                        dup.get_or_insert((label.clone(), *pos));
                    }
                    scope.map.insert(label.clone(), String::new());
                    stmts.insert(label.clone(), stmt.as_ref());
                }
            });
        }
        if let Some((label, pos)) = dup {
            return sem(pos, format!("label `{label}` defined twice"));
        }
        let names: Vec<String> = scope.map.keys().cloned().collect();
        for n in names {
            let fresh = self.fresh(&n);
            scope.map.insert(n, fresh);
        }
        self.label_scopes.push(scope);
        self.label_stmts.push(stmts);
        Ok(())
    }

    fn exit_labels(&mut self) {
        self.label_scopes.pop();
        self.label_stmts.pop();
    }

    fn user_label(&self, name: &str) -> Option<String> {
        self.label_scopes.last().and_then(|s| s.map.get(name).cloned())
    }

    // ---- statements ---------------------------------------------------

    fn stmt(&mut self, s: &'a Stmt) -> Result<(), CompileError> {
        self.point += 1;
        match s {
            Stmt::Empty => {}
            Stmt::Block(b) => {
                for s in b {
                    self.stmt(s)?;
                }
            }
            Stmt::Declare { names, .. } => {
                for n in names {
                    let st = self.new_lifetime(n);
                    self.switch_scopes.last_mut().expect("scope").insert(n.clone(), st);
                }
            }
            Stmt::MsReset { name, pos } => {
                let st = self.switch_state(name, *pos)?.clone();
                let st = if st.has_call {
                    let fresh = self.new_lifetime(name);
                    *self.switch_state(name, *pos)? = fresh.clone();
                    fresh
                } else {
                    st
                };
                if self.mode != Mode::Sequential {
                    self.ms(st.logical, Instruction::MsReset { sw: st.logical as u16 });
                }
            }
            Stmt::MsCall(c) => {
                self.mscall(c, false)?;
            }
            Stmt::If { cond, then, els, pos } => self.if_stmt(cond, then, els.as_deref(), *pos)?,
            Stmt::Assign { name, value, pos } => {
                let v = self.hoist(value)?;
                self.eval(&v, 0)?;
                let a = self.var_addr(name, *pos)?;
                self.emit(Instruction::Store { rs: reg(0), addr: a });
            }
            Stmt::Print { args, .. } => {
                let args = args.iter().map(|a| self.hoist(a)).collect::<Result<Vec<_>, _>>()?;
                self.print_args(&args)?;
            }
            Stmt::Call { name, args, pos } => {
                let args = args.iter().map(|a| self.hoist(a)).collect::<Result<Vec<_>, _>>()?;
                self.call_stmt(name, &args, *pos)?;
            }
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(v) => Some(self.hoist(v)?),
                    None => None,
                };
                let (label, status) = {
                    let r = self.rets.last().expect("return context");
                    (r.label.clone(), r.status)
                };
                if let (Some(v), Some(st)) = (v, status) {
                    self.eval(&v, 0)?;
                    self.emit(Instruction::Store { rs: reg(0), addr: st });
                }
                match label {
                    Some(l) => self.emit_to(Instruction::Jmp { addr: 0 }, &l),
                    None => self.emit(Instruction::ThEnd),
                }
            }
            Stmt::Labeled { label, stmt, pos } => {
                let asm = self.user_label(label).ok_or_else(|| CompileError::Semantic {
                    pos: *pos,
                    msg: format!("label `{label}` is not visible here"),
                })?;
                self.label(&asm);
                self.label_points.insert(asm, self.point);
                self.stmt(stmt)?;
            }
            Stmt::Goto { label, pos } => {
                let asm = self
                    .user_label(label)
                    .ok_or_else(|| CompileError::Semantic { pos: *pos, msg: format!("unknown label `{label}`") })?;
                if let Some(&p) = self.label_points.get(&asm) {
                    self.loops.push((p, self.point));
                }
                self.emit_to(Instruction::Jmp { addr: 0 }, &asm);
            }
        }
        Ok(())
    }

    fn print_args(&mut self, args: &[Expr]) -> Result<(), CompileError> {
        for a in args {
            if let Expr::Str(s) = a {
                let idx = self.out().intern(s);
                self.emit(Instruction::PrintS { index: idx });
            } else {
                self.eval(a, 0)?;
                self.emit(Instruction::Print { rs: reg(0) });
            }
        }
        Ok(())
    }

    /// Inline expansion of a procedure called as a statement. Final
    /// parameter values are copied back into variable arguments.
    fn call_stmt(&mut self, name: &str, args: &[Expr], pos: Pos) -> Result<(), CompileError> {
        let proc = *self.procs.get(name).ok_or_else(|| CompileError::Undeclared { name: name.into(), pos })?;
        let ret = self.fresh("ret");
        let slots = self.enter_proc(proc, args, pos)?;
        let status = if has_return_value(&proc.body) { Some(self.alloc_words(1, pos)?) } else { None };
        self.rets.push(RetCtx { label: Some(ret.clone()), status });
        self.proc_body(proc)?;
        self.rets.pop();
        self.label(&ret);
        self.exit_proc();
        for (a, slot) in args.iter().zip(&slots) {
            if let Expr::Var(v, vpos) = a {
                self.emit(Instruction::Load { rd: reg(0), addr: *slot });
                let addr = self.var_addr(v, *vpos)?;
                self.emit(Instruction::Store { rs: reg(0), addr });
            }
        }
        Ok(())
    }

    /// Opens a fresh frame for `proc` and copies the arguments in.
    fn enter_proc(&mut self, proc: &ProcDef, args: &[Expr], pos: Pos) -> Result<Vec<u16>, CompileError> {
        if self.inline_stack.iter().any(|n| n == &proc.name) {
            return sem(pos, format!("recursive call of `{}` cannot be expanded", proc.name));
        }
        if args.len() > proc.params.len() {
            return sem(pos, format!("`{}` takes {} argument(s), got {}", proc.name, proc.params.len(), args.len()));
        }
        let mut frame = BTreeMap::new();
        let mut slots = Vec::new();
        for p in &proc.params {
            let a = self.alloc_words(1, pos)?;
            frame.insert(p.clone(), a);
            slots.push(a);
        }
        // arguments are evaluated in the caller's frame
        for (a, &slot) in args.iter().zip(&slots) {
            if matches!(a, Expr::Str(_)) {
                return sem(pos, "strings cannot be passed as arguments");
            }
            self.eval(a, 0)?;
            self.emit(Instruction::Store { rs: reg(0), addr: slot });
        }
        // missing trailing arguments start at 0
        if args.len() < slots.len() {
            self.emit(Instruction::LoadI { rd: reg(0), imm: 0 });
            for &slot in &slots[args.len()..] {
                self.emit(Instruction::Store { rs: reg(0), addr: slot });
            }
        }
        self.frames.push(frame);
        self.inline_stack.push(proc.name.clone());
        Ok(slots)
    }

    fn exit_proc(&mut self) {
        self.frames.pop();
        self.inline_stack.pop();
    }

    /// Lowers a procedure body with its own label and switch scopes; only
    /// globally declared switches stay visible.
    fn proc_body(&mut self, proc: &'a ProcDef) -> Result<(), CompileError> {
        let saved: Vec<_> = self.switch_scopes.drain(1..).collect();
        self.switch_scopes.push(BTreeMap::new());
        self.enter_labels(&proc.body)?;
        let r = proc.body.iter().try_for_each(|s| self.stmt(s));
        self.exit_labels();
        self.switch_scopes.truncate(1);
        self.switch_scopes.extend(saved);
        r
    }

    // ---- expressions ----------------------------------------------------

    /// Runs every mswitch call inside `e` and replaces it by the variable
    /// holding its combined status.
    fn hoist(&mut self, e: &'a Expr) -> Result<Expr, CompileError> {
        Ok(match e {
            Expr::MsCall(c) => {
                let addr = self.mscall(c, true)?.expect("value requested");
                let name = format!("$v{addr}");
                self.globals.insert(name.clone(), addr);
                Expr::Var(name, c.pos)
            }
            Expr::Bin(op, l, r) => Expr::Bin(*op, Box::new(self.hoist(l)?), Box::new(self.hoist(r)?)),
            other => other.clone(),
        })
    }

    fn eval(&mut self, e: &Expr, r: usize) -> Result<(), CompileError> {
        if r + 2 >= crate::isa::NUM_REGS {
            return sem(expr_pos(e), "expression too deeply nested");
        }
        match e {
            Expr::Int(v) => {
                let imm = i16::try_from(*v).map_err(|_| CompileError::Semantic {
                    pos: expr_pos(e),
                    msg: format!("integer {v} outside the 16-bit immediate range"),
                })?;
                self.emit(Instruction::LoadI { rd: reg(r), imm });
            }
            Expr::Bool(b) => self.emit(Instruction::LoadI { rd: reg(r), imm: *b as i16 }),
            Expr::Str(_) => return sem(expr_pos(e), "a string is not a value here"),
            Expr::Var(name, pos) => {
                let a = self.var_addr(name, *pos)?;
                self.emit(Instruction::Load { rd: reg(r), addr: a });
            }
            Expr::Result { switch, target, field, pos } => {
                let st = self.switch_state(switch, *pos)?.clone();
                let Some(t) = st.targets.iter().rev().find(|t| &t.name == target) else {
                    return sem(*pos, format!("`{switch}` has no target `{target}` in its current lifetime"));
                };
                let idx = match field {
                    None => 0,
                    Some(f) => match t.fields.iter().position(|x| x == f) {
                        Some(i) => i + 1,
                        None => return sem(*pos, format!("target `{switch}.{target}` has no field `{f}`")),
                    },
                };
                match t.mem {
                    Some((status, payload)) => {
                        let addr = if idx == 0 { status } else { payload + idx as u16 - 1 };
                        self.emit(Instruction::Load { rd: reg(r), addr });
                    }
                    None => {
                        let i = Instruction::MsRes { sw: st.logical as u16, line: t.line as u16, field: idx as u16, rd: reg(r) };
                        self.ms(st.logical, i);
                    }
                }
            }
            Expr::MsCall(c) => return sem(c.pos, "mswitch call in an unsupported position"),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add | BinOp::Sub | BinOp::Cmp(_) => {
                    self.eval(a, r)?;
                    self.eval(b, r + 1)?;
                    let (rd, ra, rb) = (reg(r), reg(r), reg(r + 1));
                    self.emit(match op {
                        BinOp::Add => Instruction::Add { rd, ra, rb },
                        BinOp::Sub => Instruction::Sub { rd, ra, rb },
                        BinOp::Cmp(op) => Instruction::Cmp { op: *op, rd, ra, rb },
                        _ => unreachable!(),
                    });
                }
                BinOp::And | BinOp::Or => {
                    self.eval_bool(a, r)?;
                    self.eval_bool(b, r + 1)?;
                    let (rd, ra, rb) = (reg(r), reg(r), reg(r + 1));
                    self.emit(if *op == BinOp::And { Instruction::And { rd, ra, rb } } else { Instruction::Or { rd, ra, rb } });
                }
            },
        }
        Ok(())
    }

    /// Evaluates `e` as 0 or 1.
    fn eval_bool(&mut self, e: &Expr, r: usize) -> Result<(), CompileError> {
        self.eval(e, r)?;
        if !e.is_boolean() {
            self.emit(Instruction::LoadI { rd: reg(r + 1), imm: 0 });
            self.emit(Instruction::Cmp { op: CmpOp::Ne, rd: reg(r), ra: reg(r), rb: reg(r + 1) });
        }
        Ok(())
    }

    /// Code leaving operands in r0/r1 so that one comparison with the
    /// returned relation tests conjunct `e` for truth.
    fn cond_operands(&mut self, e: &Expr) -> Result<CmpOp, CompileError> {
        match e {
            Expr::Bin(BinOp::Cmp(op), a, b) => {
                self.eval(a, 0)?;
                self.eval(b, 1)?;
                Ok(*op)
            }
            _ => {
                self.eval(e, 0)?;
                self.emit(Instruction::LoadI { rd: reg(1), imm: 0 });
                Ok(CmpOp::Ne)
            }
        }
    }

    /// Jumps to `target` when `e` is false.
    fn branch_false(&mut self, e: &Expr, target: &str) -> Result<(), CompileError> {
        match e {
            Expr::Bool(true) => {}
            Expr::Bool(false) => self.emit_to(Instruction::Jmp { addr: 0 }, target),
            _ => {
                let op = self.cond_operands(e)?;
                self.emit(Instruction::Cmp { op: op.negate(), rd: reg(0), ra: reg(0), rb: reg(1) });
                self.emit_to(Instruction::JmpIf { rs: reg(0), addr: 0 }, target);
            }
        }
        Ok(())
    }

    fn if_stmt(&mut self, cond: &'a Expr, then: &'a Stmt, els: Option<&'a Stmt>, _pos: Pos) -> Result<(), CompileError> {
        let cond = self.hoist(cond)?;
        let after = self.fresh("endif");
        let else_l = if els.is_some() { self.fresh("else") } else { after.clone() };
        let conj: Vec<Expr> = cond.conjuncts().into_iter().cloned().collect();
        let then_l = self.fresh("then");
        let fused = conj.len() >= self.fuse;
        self.fused_ifs += fused as usize;
        match self.mode {
            Mode::MSwitch if fused => self.fused_mswitch(&conj, &then_l, &else_l)?,
            Mode::BaselinePoll if fused => self.fused_poll(&conj, &else_l)?,
            // a cascade of tests, one per conjunct
            _ => {
                for c in &conj {
                    self.branch_false(c, &else_l)?;
                }
            }
        }
        self.label(&then_l);
        self.stmt(then)?;
        if let Some(e) = els {
            self.emit_to(Instruction::Jmp { addr: 0 }, &after);
            self.label(&else_l);
            self.stmt(e)?;
        }
        self.label(&after);
        Ok(())
    }

    /// Comparator code for each conjunct, padded with no-ops so every
    /// comparison issues in the same cycle.
    fn comparator_code(&mut self, conj: &[Expr]) -> Result<Vec<(Assembly, CmpOp)>, CompileError> {
        let mut out = Vec::new();
        for c in conj {
            self.bufs.push(Assembly::new());
            let op = self.cond_operands(c)?;
            out.push((self.bufs.pop().expect("scratch"), op));
        }
        let longest = out.iter().map(|(a, _)| a.instr_count()).max().unwrap_or(0);
        for (a, _) in &mut out {
            for _ in a.instr_count()..longest {
                a.items.insert(0, AsmItem::Instr(AsmInstr::from(Instruction::Mov { rd: reg(0), rs: reg(0) }), 0));
            }
        }
        Ok(out)
    }

    /// One thread per conjunct; the parent is comparator 0. A true
    /// comparison raises its joiner line, a false one drives the bypass.
    fn fused_mswitch(&mut self, conj: &[Expr], then_l: &str, else_l: &str) -> Result<(), CompileError> {
        let c = conj.len();
        let j = self.temp_switch("join", Role::Joiner, c);
        let sp = self.temp_switch("spawn", Role::Spawner, c - 1);
        self.joins += 1;
        let code = self.comparator_code(conj)?;
        self.region_begin();
        let (jw, sw) = (j as u16, sp as u16);
        self.ms(j, Instruction::MsReset { sw: jw });
        self.ms(j, Instruction::MsArity { sw: jw, arity: c as u16, kind: GateKind::And });
        self.ms_to(j, Instruction::MsAct { sw: jw, line: 0, addr: 0 }, then_l);
        self.ms_to(j, Instruction::MsFalse { sw: jw, addr: 0 }, else_l);
        self.ms(sp, Instruction::MsReset { sw });
        self.ms(sp, Instruction::MsArity { sw, arity: 1, kind: GateKind::And });
        let labels: Vec<String> = (1..c).map(|_| self.fresh("cmp")).collect();
        for (i, l) in labels.iter().enumerate() {
            self.ms_to(sp, Instruction::MsAct { sw, line: i as u16, addr: 0 }, l);
        }
        self.ms(sp, Instruction::MsIn { sw, line: 0 });
        for (i, (asm, op)) in code.into_iter().enumerate() {
            if i > 0 {
                self.bufs.push(Assembly::new());
                self.label(&labels[i - 1]);
            }
            let off = self.fresh("off");
            self.out().extend(asm);
            self.emit(Instruction::Cmp { op: op.negate(), rd: reg(0), ra: reg(0), rb: reg(1) });
            self.emit_to(Instruction::JmpIf { rs: reg(0), addr: 0 }, &off);
            self.ms(j, Instruction::MsIn { sw: jw, line: i as u16 });
            self.emit(Instruction::ThEnd);
            self.label(&off);
            self.ms(j, Instruction::MsOff { sw: jw });
            self.emit(Instruction::ThEnd);
            if i > 0 {
                let b = self.bufs.pop().expect("comparator");
                self.deferred.push(b);
            }
        }
        self.region_end();
        Ok(())
    }

    /// Semaphore-style baseline: comparators publish a result word and a
    /// done flag; the parent polls every flag and then tests the results.
    fn fused_poll(&mut self, conj: &[Expr], else_l: &str) -> Result<(), CompileError> {
        let c = conj.len();
        let sp = self.temp_switch("spawn", Role::Spawner, c - 1);
        self.joins += 1;
        let code = self.comparator_code(conj)?;
        let flags = self.alloc_words(2 * (c - 1), Pos::default())?;
        let done = |i: usize| flags + 2 * (i as u16 - 1);
        self.region_begin();
        self.emit(Instruction::LoadI { rd: reg(0), imm: 0 });
        for i in 1..c {
            self.emit(Instruction::Store { rs: reg(0), addr: done(i) });
        }
        let sw = sp as u16;
        self.ms(sp, Instruction::MsReset { sw });
        self.ms(sp, Instruction::MsArity { sw, arity: 1, kind: GateKind::And });
        let labels: Vec<String> = (1..c).map(|_| self.fresh("cmp")).collect();
        for (i, l) in labels.iter().enumerate() {
            self.ms_to(sp, Instruction::MsAct { sw, line: i as u16, addr: 0 }, l);
        }
        self.ms(sp, Instruction::MsIn { sw, line: 0 });
        for (i, (asm, op)) in code.into_iter().enumerate() {
            if i == 0 {
                self.out().extend(asm);
                self.emit(Instruction::Cmp { op, rd: reg(0), ra: reg(0), rb: reg(1) });
                continue;
            }
            self.bufs.push(Assembly::new());
            self.label(&labels[i - 1]);
            self.out().extend(asm);
            self.emit(Instruction::Cmp { op, rd: reg(0), ra: reg(0), rb: reg(1) });
            self.emit(Instruction::Store { rs: reg(0), addr: done(i) + 1 });
            self.emit(Instruction::LoadI { rd: reg(0), imm: 1 });
            self.emit(Instruction::Store { rs: reg(0), addr: done(i) });
            self.emit(Instruction::ThEnd);
            let b = self.bufs.pop().expect("comparator");
            self.deferred.push(b);
        }
        for i in 1..c {
            self.emit(Instruction::Poll { addr: done(i) });
        }
        for i in 1..c {
            self.emit(Instruction::Load { rd: reg(1), addr: done(i) + 1 });
            self.emit(Instruction::And { rd: reg(0), ra: reg(0), rb: reg(1) });
        }
        self.emit(Instruction::LoadI { rd: reg(1), imm: 0 });
        self.emit(Instruction::Cmp { op: CmpOp::Eq, rd: reg(0), ra: reg(0), rb: reg(1) });
        self.emit_to(Instruction::JmpIf { rs: reg(0), addr: 0 }, else_l);
        self.region_end();
        Ok(())
    }

    // ---- mswitch calls --------------------------------------------------

    /// Payload field names of a target.
    fn target_fields(&self, t: &Target) -> Vec<String> {
        if self.label_stmts.last().is_some_and(|m| m.contains_key(&t.callee)) {
            return Vec::new();
        }
        let params = self.procs.get(t.callee.as_str()).map(|p| p.params.clone());
        t.args
            .iter()
            .enumerate()
            .map(|(i, a)| match a {
                Expr::Var(n, _) => n.clone(),
                _ => params.as_ref().and_then(|p| p.get(i).cloned()).unwrap_or_else(|| format!("arg{}", i + 1)),
            })
            .collect()
    }

    /// Lowers one mswitch call. Returns the address holding the AND of the
    /// target statuses when `want_value` is set.
    fn mscall(&mut self, c: &'a MsCall, want_value: bool) -> Result<Option<u16>, CompileError> {
        let k = c.targets.len();
        let infos: Vec<TargetInfo> = c
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| TargetInfo { name: t.callee.clone(), line: i, fields: self.target_fields(t), mem: None })
            .collect();
        let (s, lifetime_no) = {
            let st = self.switch_state(&c.switch, c.pos)?;
            st.has_call = true;
            (st.logical, st.lifetime_no)
        };
        let _ = lifetime_no;
        self.logical[s].lines = self.logical[s].lines.max(k);
        let mut infos = infos;
        if self.mode == Mode::Sequential {
            for t in &mut infos {
                let status = self.alloc_words(1 + t.fields.len(), c.pos)?;
                t.mem = Some((status, status + 1));
            }
        }
        for t in &infos {
            let location = match t.mem {
                Some((status, payload)) => ResultLocation::Memory { status, payload },
                None => ResultLocation::Switch { sw: s as u16, line: t.line as u16 },
            };
            self.results.push(ResultBinding {
                switch: c.switch.clone(),
                target: t.name.clone(),
                fields: t.fields.clone(),
                location,
            });
        }
        self.switch_state(&c.switch, c.pos)?.targets = infos.clone();

        match self.mode {
            Mode::Sequential => {
                for (t, info) in c.targets.iter().zip(&infos) {
                    let (status, payload) = info.mem.expect("memory result");
                    self.target_body(t, &|l: &mut Self, fields: &[u16], st: Option<u16>| {
                        for (i, &f) in fields.iter().enumerate() {
                            l.emit(Instruction::Load { rd: reg(0), addr: f });
                            l.emit(Instruction::Store { rs: reg(0), addr: payload + i as u16 });
                        }
                        l.status_to_r0(st);
                        l.emit(Instruction::Store { rs: reg(0), addr: status });
                    })?;
                }
            }
            Mode::MSwitch | Mode::BaselinePoll => {
                let sw = s as u16;
                let join = if self.mode == Mode::MSwitch { Some(self.temp_switch("join", Role::Joiner, k)) } else { None };
                let flags = if join.is_none() { Some(self.alloc_words(k, c.pos)?) } else { None };
                self.joins += 1;
                let cont = self.fresh("cont");
                let labels: Vec<String> = (0..k).map(|_| self.fresh("child")).collect();
                if let Some(j) = join {
                    let jw = j as u16;
                    self.ms(j, Instruction::MsReset { sw: jw });
                    self.ms(j, Instruction::MsArity { sw: jw, arity: k as u16, kind: GateKind::And });
                    self.ms_to(j, Instruction::MsAct { sw: jw, line: 0, addr: 0 }, &cont);
                }
                if let Some(f) = flags {
                    self.emit(Instruction::LoadI { rd: reg(0), imm: 0 });
                    for i in 0..k {
                        self.emit(Instruction::Store { rs: reg(0), addr: f + i as u16 });
                    }
                }
                self.ms(s, Instruction::MsReset { sw });
                self.ms(s, Instruction::MsArity { sw, arity: 1, kind: GateKind::And });
                for (i, l) in labels.iter().enumerate() {
                    self.ms_to(s, Instruction::MsAct { sw, line: i as u16, addr: 0 }, l);
                }
                self.ms(s, Instruction::MsIn { sw, line: 0 });
                match flags {
                    None => self.emit(Instruction::ThEnd),
                    Some(f) => {
                        for i in 0..k {
                            self.emit(Instruction::Poll { addr: f + i as u16 });
                        }
                    }
                }
                self.label(&cont);
                self.region_begin();
                for (i, t) in c.targets.iter().enumerate() {
                    self.bufs.push(Assembly::new());
                    self.label(&labels[i]);
                    let line = i as u16;
                    self.target_body(t, &|l: &mut Self, fields: &[u16], st: Option<u16>| {
                        for (fi, &f) in fields.iter().enumerate() {
                            l.emit(Instruction::Load { rd: reg(0), addr: f });
                            l.ms(s, Instruction::MsPut { sw, line, field: fi as u16 + 1, rs: reg(0) });
                        }
                        l.status_to_r0(st);
                        l.ms(s, Instruction::MsPut { sw, line, field: 0, rs: reg(0) });
                        match (join, flags) {
                            (Some(j), _) => l.ms(j, Instruction::MsIn { sw: j as u16, line }),
                            (None, Some(f)) => {
                                l.emit(Instruction::LoadI { rd: reg(0), imm: 1 });
                                l.emit(Instruction::Store { rs: reg(0), addr: f + line });
                            }
                            (None, None) => unreachable!(),
                        }
                        l.emit(Instruction::ThEnd);
                    })?;
                    let b = self.bufs.pop().expect("child");
                    self.deferred.push(b);
                }
                self.region_end();
            }
        }

        if !want_value {
            return Ok(None);
        }
        let dest = self.alloc_words(1, c.pos)?;
        self.emit(Instruction::LoadI { rd: reg(0), imm: 1 });
        for info in &infos {
            match info.mem {
                Some((status, _)) => self.emit(Instruction::Load { rd: reg(1), addr: status }),
                None => {
                    self.ms(s, Instruction::MsRes { sw: s as u16, line: info.line as u16, field: 0, rd: reg(1) })
                }
            }
            self.emit(Instruction::And { rd: reg(0), ra: reg(0), rb: reg(1) });
        }
        self.emit(Instruction::Store { rs: reg(0), addr: dest });
        Ok(Some(dest))
    }

    fn status_to_r0(&mut self, status: Option<u16>) {
        match status {
            Some(a) => self.emit(Instruction::Load { rd: reg(0), addr: a }),
            None => self.emit(Instruction::LoadI { rd: reg(0), imm: 1 }),
        }
    }

    /// Body of one target followed by `publish(fields, status)`, which
    /// stores the payload words and status wherever the mode keeps results.
    fn target_body(
        &mut self,
        t: &'a Target,
        publish: &Publish<'_, Self>,
    ) -> Result<(), CompileError> {
        let ret = self.fresh("ret");
        let label_stmt = self.label_stmts.last().and_then(|m| m.get(&t.callee).copied());
        if let Some(stmt) = label_stmt {
            if !t.args.is_empty() {
                return sem(t.pos, format!("label target `{}` takes no arguments", t.callee));
            }
            let status = if has_return_value(std::slice::from_ref(stmt)) { Some(self.alloc_words(1, t.pos)?) } else { None };
            if let Some(a) = status {
                self.emit(Instruction::LoadI { rd: reg(0), imm: 1 });
                self.emit(Instruction::Store { rs: reg(0), addr: a });
            }
            self.rets.push(RetCtx { label: Some(ret.clone()), status });
            self.enter_labels(std::slice::from_ref(stmt))?;
            let r = self.stmt(stmt);
            self.exit_labels();
            self.rets.pop();
            r?;
            self.label(&ret);
            publish(self, &[], status);
            return Ok(());
        }
        if let Some(&proc) = self.procs.get(t.callee.as_str()) {
            let hoisted = t.args.clone();
            let slots = self.enter_proc(proc, &hoisted, t.pos)?;
            let status = if has_return_value(&proc.body) { Some(self.alloc_words(1, t.pos)?) } else { None };
            if let Some(a) = status {
                self.emit(Instruction::LoadI { rd: reg(0), imm: 1 });
                self.emit(Instruction::Store { rs: reg(0), addr: a });
            }
            self.rets.push(RetCtx { label: Some(ret.clone()), status });
            let r = self.proc_body(proc);
            self.rets.pop();
            r?;
            self.label(&ret);
            publish(self, &slots, status);
            self.exit_proc();
            return Ok(());
        }
        // builtin print, or an external process modeled as a stub that
        // announces itself and echoes its arguments
        if t.callee != "print" {
            let idx = self.out().intern(&t.callee);
            self.emit(Instruction::PrintS { index: idx });
        }
        self.print_args(&t.args)?;
        let mut slots = Vec::new();
        for a in &t.args {
            let slot = self.alloc_words(1, t.pos)?;
            if !matches!(a, Expr::Str(_)) {
                self.eval(a, 0)?;
                self.emit(Instruction::Store { rs: reg(0), addr: slot });
            }
            slots.push(slot);
        }
        self.label(&ret);
        publish(self, &slots, None);
        Ok(())
    }
}

// ---- materialization ----------------------------------------------------

fn with_switch(i: Instruction, sw: u16) -> Instruction {
    use Instruction::*;
    match i {
        MsReset { .. } => MsReset { sw },
        MsArity { arity, kind, .. } => MsArity { sw, arity, kind },
        MsIn { line, .. } => MsIn { sw, line },
        MsOff { .. } => MsOff { sw },
        MsAct { line, addr, .. } => MsAct { sw, line, addr },
        MsFalse { addr, .. } => MsFalse { sw, addr },
        MsRes { line, field, rd, .. } => MsRes { sw, line, field, rd },
        MsPut { line, field, rs, .. } => MsPut { sw, line, field, rs },
        other => other,
    }
}

/// Rewrites logical switch operands to physical ones and links the result.
/// Ganged joiners expand into their sub-joins plus relay threads.
pub fn materialize(ir: &Ir, table: &AllocationTable) -> Result<Program, CompileError> {
    let demands = ir.demands();
    let mut place: BTreeMap<usize, &Placement> = BTreeMap::new();
    for ((lid, d), e) in demands.iter().zip(&table.entries) {
        debug_assert_eq!(d.name, e.name);
        place.insert(*lid, &e.placement);
    }
    let mut asm = Assembly { items: Vec::new(), strings: ir.asm.strings.clone(), entry: ir.asm.entry.clone() };
    let relay = |lid: usize, k: usize| format!("$relay.{lid}.{k}");
    for item in &ir.asm.items {
        let AsmItem::Instr(ai, line) = item else {
            asm.items.push(item.clone());
            continue;
        };
        let Some(lsw) = ai.instr.switch() else {
            asm.items.push(item.clone());
            continue;
        };
        let lid = lsw as usize;
        let p = place.get(&lid).ok_or_else(|| CompileError::Internal(format!("logical switch {lid} not placed")))?;
        let push = |asm: &mut Assembly, instr: Instruction, target: Option<String>| {
            asm.items.push(AsmItem::Instr(AsmInstr { instr, target }, *line));
        };
        match p {
            Placement::Single(sw) => push(&mut asm, with_switch(ai.instr, *sw as u16), ai.target.clone()),
            Placement::Gang(g) => {
                let top = g.top as u16;
                match ai.instr {
                    Instruction::MsReset { .. } => {
                        push(&mut asm, Instruction::MsReset { sw: top }, None);
                        for &(s, _) in &g.subs {
                            push(&mut asm, Instruction::MsReset { sw: s as u16 }, None);
                        }
                    }
                    Instruction::MsArity { kind, .. } => {
                        push(&mut asm, Instruction::MsArity { sw: top, arity: g.top_arity() as u16, kind }, None);
                        for (k, &(s, n)) in g.subs.iter().enumerate() {
                            push(&mut asm, Instruction::MsArity { sw: s as u16, arity: n as u16, kind }, None);
                            push(&mut asm, Instruction::MsAct { sw: s as u16, line: 0, addr: 0 }, Some(relay(lid, k)));
                        }
                    }
                    Instruction::MsIn { line: l, .. } => {
                        let (s, pl) = g
                            .place(l as usize)
                            .ok_or_else(|| CompileError::Internal(format!("line {l} outside gang plan")))?;
                        push(&mut asm, Instruction::MsIn { sw: s as u16, line: pl as u16 }, None);
                    }
                    other => push(&mut asm, with_switch(other, top), ai.target.clone()),
                }
            }
        }
    }
    for (&lid, p) in &place {
        if let Placement::Gang(g) = p {
            for k in 0..g.subs.len() {
                asm.label(relay(lid, k));
                asm.push(Instruction::MsIn { sw: g.top as u16, line: (g.direct + k) as u16 });
                asm.push(Instruction::ThEnd);
            }
        }
    }
    let mut program = asm.link()?;
    program.results = ir
        .results
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let ResultLocation::Switch { sw, line } = r.location {
                let phys = match place.get(&(sw as usize)) {
                    Some(Placement::Single(p)) => *p,
                    Some(Placement::Gang(g)) => g.top,
                    None => sw as usize,
                };
                r.location = ResultLocation::Switch { sw: phys as u16, line };
            }
            r
        })
        .collect();
    Ok(program)
}

/// Links an IR that uses no switches.
pub fn link_plain(ir: &Ir) -> Result<Program, CompileError> {
    if ir.logical.iter().any(|l| l.is_used()) {
        return Err(CompileError::Internal("program uses switches but no allocation was given".into()));
    }
    let mut program = ir.asm.link()?;
    program.results = ir.results.clone();
    Ok(program)
}
