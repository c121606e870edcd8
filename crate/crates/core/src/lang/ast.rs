use std::fmt;

use crate::isa::CmpOp;
use crate::Word;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Ast {
    pub procs: Vec<ProcDef>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
    pub pos: Pos,
}

/// One mswitch target: `callee(args)[params]`, with args and params joined
/// into a single argument list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Target {
    pub callee: String,
    pub args: Vec<Expr>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsCall {
    pub switch: String,
    pub targets: Vec<Target>,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Cmp(CmpOp),
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(Word),
    Str(String),
    Bool(bool),
    Var(String, Pos),
    /// `switch.target` (status) or `switch.target.field`.
    Result { switch: String, target: String, field: Option<String>, pos: Pos },
    MsCall(MsCall),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    /// Conjuncts of a top-level `and` chain.
    pub fn conjuncts(&self) -> Vec<&Expr> {
        match self {
            Expr::Bin(BinOp::And, l, r) => {
                let mut v = l.conjuncts();
                v.extend(r.conjuncts());
                v
            }
            e => vec![e],
        }
    }

    pub fn contains_mscall(&self) -> bool {
        match self {
            Expr::MsCall(_) => true,
            Expr::Bin(_, l, r) => l.contains_mscall() || r.contains_mscall(),
            _ => false,
        }
    }

    /// True for expressions whose value is always 0 or 1.
    pub fn is_boolean(&self) -> bool {
        matches!(self, Expr::Bool(_) | Expr::Bin(BinOp::Cmp(_) | BinOp::And | BinOp::Or, ..))
            || matches!(self, Expr::Result { field: None, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Declare { names: Vec<String>, pos: Pos },
    MsReset { name: String, pos: Pos },
    MsCall(MsCall),
    If { cond: Expr, then: Box<Stmt>, els: Option<Box<Stmt>>, pos: Pos },
    Assign { name: String, value: Expr, pos: Pos },
    Print { args: Vec<Expr>, pos: Pos },
    Call { name: String, args: Vec<Expr>, pos: Pos },
    Return { value: Option<Expr>, pos: Pos },
    Labeled { label: String, stmt: Box<Stmt>, pos: Pos },
    Goto { label: String, pos: Pos },
    Block(Vec<Stmt>),
    Empty,
}

impl Stmt {
    /// Visits this statement and every nested one, depth first.
    pub fn walk<'a>(&'a self, f: &mut dyn FnMut(&'a Stmt)) {
        f(self);
        match self {
            Stmt::If { then, els, .. } => {
                then.walk(f);
                if let Some(e) = els {
                    e.walk(f);
                }
            }
            Stmt::Labeled { stmt, .. } => stmt.walk(f),
            Stmt::Block(b) => b.iter().for_each(|s| s.walk(f)),
            _ => {}
        }
    }
}

/// Every mswitch call in `stmt` that is not inside a nested statement,
/// including calls embedded in expressions.
pub fn stmt_mscalls(stmt: &Stmt) -> Vec<&MsCall> {
    fn expr<'a>(e: &'a Expr, out: &mut Vec<&'a MsCall>) {
        match e {
            Expr::MsCall(c) => out.push(c),
            Expr::Bin(_, l, r) => {
                expr(l, out);
                expr(r, out);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    match stmt {
        Stmt::MsCall(c) => out.push(c),
        Stmt::If { cond, .. } => expr(cond, &mut out),
        Stmt::Assign { value, .. } => expr(value, &mut out),
        Stmt::Print { args, .. } | Stmt::Call { args, .. } => args.iter().for_each(|a| expr(a, &mut out)),
        Stmt::Return { value: Some(v), .. } => expr(v, &mut out),
        _ => {}
    }
    out
}
