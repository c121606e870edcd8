use std::collections::BTreeSet;

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::CompileError;
use crate::isa::CmpOp;

/// Parses MSL source. Procedure names are collected first so calls may
/// precede definitions; mswitch names must be declared before use.
pub fn parse(src: &str) -> Result<Ast, CompileError> {
    let toks = lex(src)?;
    let mut procs = BTreeSet::new();
    for w in toks.windows(2) {
        if let (Tok::Ident(k), Tok::Ident(name)) = (&w[0].tok, &w[1].tok) {
            if k == "proc" {
                procs.insert(name.clone());
            }
        }
    }
    let mut p = Parser { toks, i: 0, procs, switches: vec![BTreeSet::new()] };
    p.program()
}

struct Parser {
    toks: Vec<Token>,
    i: usize,
    procs: BTreeSet<String>,
    switches: Vec<BTreeSet<String>>,
}

const KEYWORDS: &[&str] = &[
    "declare", "mswitch", "msreset", "if", "then", "else", "proc", "return", "goto", "and", "or", "AND", "OR", "TRUE",
    "FALSE", "true", "false",
];

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.i].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.i + n).min(self.toks.len() - 1)].tok
    }

    fn pos(&self) -> Pos {
        self.toks[self.i].pos
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.i].clone();
        if self.i < self.toks.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.next();
            true
        } else {
            false
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, CompileError> {
        Err(CompileError::syntax(self.pos(), msg))
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), CompileError> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.err(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, CompileError> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected {what}, found {}", describe(&t))),
        }
    }

    fn is_switch(&self, name: &str) -> bool {
        self.switches.iter().any(|s| s.contains(name))
    }

    fn check_switch(&self, name: &str, pos: Pos) -> Result<(), CompileError> {
        if self.is_switch(name) {
            Ok(())
        } else {
            Err(CompileError::Undeclared { name: name.to_string(), pos })
        }
    }

    fn program(&mut self) -> Result<Ast, CompileError> {
        let mut ast = Ast::default();
        while *self.peek() != Tok::Eof {
            if self.is_kw("proc") {
                ast.procs.push(self.proc_def()?);
            } else {
                ast.body.push(self.stmt()?);
            }
        }
        Ok(ast)
    }

    fn proc_def(&mut self) -> Result<ProcDef, CompileError> {
        let pos = self.pos();
        self.next();
        let name = self.ident("procedure name")?;
        let mut params = Vec::new();
        let close = match self.peek() {
            Tok::LBracket => Some(Tok::RBracket),
            Tok::LParen => Some(Tok::RParen),
            _ => None,
        };
        if let Some(close) = close {
            self.next();
            while *self.peek() != close {
                params.push(self.ident("parameter name")?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
            self.expect(close, "closing bracket")?;
        }
        if *self.peek() != Tok::LBrace {
            return self.err("expected `{` to open procedure body");
        }
        self.switches.push(BTreeSet::new());
        let body = match self.stmt()? {
            Stmt::Block(b) => b,
            s => vec![s],
        };
        self.switches.pop();
        Ok(ProcDef { name, params, body, pos })
    }

    fn end_stmt(&mut self) {
        self.eat(&Tok::Semi);
    }

    fn stmt(&mut self) -> Result<Stmt, CompileError> {
        let pos = self.pos();
        let s = match self.peek().clone() {
            Tok::Semi => {
                self.next();
                return Ok(Stmt::Empty);
            }
            Tok::LBrace => {
                self.next();
                let mut body = Vec::new();
                while *self.peek() != Tok::RBrace {
                    if *self.peek() == Tok::Eof {
                        return self.err("unclosed `{`");
                    }
                    body.push(self.stmt()?);
                }
                self.next();
                return Ok(Stmt::Block(body));
            }
            Tok::Ident(kw) => match kw.as_str() {
                "declare" => {
                    self.next();
                    if !self.is_kw("mswitch") {
                        return self.err("expected `mswitch` after `declare`");
                    }
                    self.next();
                    let mut names = vec![self.ident("mswitch name")?];
                    while self.eat(&Tok::Comma) {
                        names.push(self.ident("mswitch name")?);
                    }
                    let scope = self.switches.last_mut().expect("scope");
                    scope.extend(names.iter().cloned());
                    Stmt::Declare { names, pos }
                }
                "msreset" => {
                    self.next();
                    self.expect(Tok::LParen, "`(`")?;
                    let npos = self.pos();
                    let name = self.ident("mswitch name")?;
                    self.check_switch(&name, npos)?;
                    self.expect(Tok::RParen, "`)`")?;
                    Stmt::MsReset { name, pos }
                }
                "if" => {
                    self.next();
                    let cond = self.expr()?;
                    if self.is_kw("then") {
                        self.next();
                    }
                    let then = Box::new(self.stmt()?);
                    let els = if self.is_kw("else") {
                        self.next();
                        Some(Box::new(self.stmt()?))
                    } else {
                        None
                    };
                    return Ok(Stmt::If { cond, then, els, pos });
                }
                "return" => {
                    self.next();
                    let value = match self.peek() {
                        Tok::Semi | Tok::RBrace | Tok::Eof => None,
                        _ => Some(self.expr()?),
                    };
                    Stmt::Return { value, pos }
                }
                "goto" => {
                    self.next();
                    let label = self.ident("label")?;
                    Stmt::Goto { label, pos }
                }
                "print" => {
                    self.next();
                    let args = self.arg_list()?;
                    Stmt::Print { args, pos }
                }
                "proc" => return self.err("procedures may only be defined at top level"),
                _ if KEYWORDS.contains(&kw.as_str()) => return self.err(format!("unexpected keyword `{kw}`")),
                _ => {
                    self.next();
                    match self.peek() {
                        Tok::Colon => {
                            self.next();
                            let stmt = match self.peek() {
                                Tok::RBrace | Tok::Eof => Stmt::Empty,
                                _ => self.stmt()?,
                            };
                            return Ok(Stmt::Labeled { label: kw, stmt: Box::new(stmt), pos });
                        }
                        Tok::Assign => {
                            self.next();
                            let value = self.expr()?;
                            Stmt::Assign { name: kw, value, pos }
                        }
                        Tok::LParen if self.is_switch(&kw) => Stmt::MsCall(self.mscall(kw, pos)?),
                        Tok::LParen if self.procs.contains(&kw) => {
                            let args = self.arg_list()?;
                            Stmt::Call { name: kw, args, pos }
                        }
                        Tok::LParen => return Err(CompileError::Undeclared { name: kw, pos }),
                        t => return self.err(format!("expected `=`, `(` or `:` after `{kw}`, found {}", describe(t))),
                    }
                }
            },
            t => return self.err(format!("expected a statement, found {}", describe(&t))),
        };
        self.end_stmt();
        Ok(s)
    }

    /// `( item, item, ... )` where an item may carry a `[params]` suffix.
    fn arg_list(&mut self) -> Result<Vec<Expr>, CompileError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        while *self.peek() != Tok::RParen {
            args.push(self.expr()?);
            if *self.peek() == Tok::LBracket {
                args.extend(self.params()?);
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(args)
    }

    /// `[ p, p, ... ]`. Adjacent identifiers form one name (`dept-a prtr`).
    fn params(&mut self) -> Result<Vec<Expr>, CompileError> {
        self.expect(Tok::LBracket, "`[`")?;
        let mut out = Vec::new();
        while *self.peek() != Tok::RBracket {
            let is_multi = matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Ident(_));
            if is_multi {
                let pos = self.pos();
                let mut words = Vec::new();
                while let Tok::Ident(w) = self.peek().clone() {
                    words.push(w);
                    self.next();
                }
                out.push(Expr::Var(words.join(" "), pos));
            } else {
                out.push(self.expr()?);
            }
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RBracket, "`]`")?;
        Ok(out)
    }

    fn mscall(&mut self, switch: String, pos: Pos) -> Result<MsCall, CompileError> {
        let mut targets = self.target_group()?;
        // the `ms1(a), (b)` form continues the target list
        while *self.peek() == Tok::Comma && *self.peek_at(1) == Tok::LParen {
            self.next();
            targets.extend(self.target_group()?);
        }
        if targets.is_empty() {
            return Err(CompileError::Semantic { pos, msg: format!("mswitch `{switch}` called with no targets") });
        }
        Ok(MsCall { switch, targets, pos })
    }

    fn target_group(&mut self) -> Result<Vec<Target>, CompileError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut out = Vec::new();
        while *self.peek() != Tok::RParen {
            out.push(self.target()?);
            if !self.eat(&Tok::Comma) {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(out)
    }

    fn target(&mut self) -> Result<Target, CompileError> {
        let pos = self.pos();
        let callee = match self.peek().clone() {
            Tok::Ident(s) if s == "print" || !KEYWORDS.contains(&s.as_str()) => {
                self.next();
                s
            }
            t => return self.err(format!("expected a target, found {}", describe(&t))),
        };
        if self.is_switch(&callee) && *self.peek() == Tok::LParen {
            return Err(CompileError::Semantic {
                pos,
                msg: format!("mswitch `{callee}` cannot be used as a target of another mswitch"),
            });
        }
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            args = self.arg_list()?;
        }
        if *self.peek() == Tok::LBracket {
            args.extend(self.params()?);
        }
        Ok(Target { callee, args, pos })
    }

    pub fn expr(&mut self) -> Result<Expr, CompileError> {
        let mut l = self.and_expr()?;
        while self.is_kw("or") || self.is_kw("OR") || *self.peek() == Tok::OrOr {
            self.next();
            let r = self.and_expr()?;
            l = Expr::Bin(BinOp::Or, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn and_expr(&mut self) -> Result<Expr, CompileError> {
        let mut l = self.rel_expr()?;
        while self.is_kw("and") || self.is_kw("AND") || *self.peek() == Tok::AndAnd {
            self.next();
            let r = self.rel_expr()?;
            l = Expr::Bin(BinOp::And, Box::new(l), Box::new(r));
        }
        Ok(l)
    }

    fn rel_expr(&mut self) -> Result<Expr, CompileError> {
        let l = self.add_expr()?;
        let op = match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Gt => CmpOp::Gt,
            Tok::Le => CmpOp::Le,
            Tok::Ge => CmpOp::Ge,
            _ => return Ok(l),
        };
        self.next();
        let r = self.add_expr()?;
        Ok(Expr::Bin(BinOp::Cmp(op), Box::new(l), Box::new(r)))
    }

    fn add_expr(&mut self) -> Result<Expr, CompileError> {
        let mut l = self.primary()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(l),
            };
            self.next();
            let r = self.primary()?;
            l = Expr::Bin(op, Box::new(l), Box::new(r));
        }
    }

    fn primary(&mut self) -> Result<Expr, CompileError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.next();
                Ok(Expr::Int(v))
            }
            Tok::Minus => {
                self.next();
                match self.peek().clone() {
                    Tok::Int(v) => {
                        self.next();
                        Ok(Expr::Int(-v))
                    }
                    _ => self.err("expected a number after unary `-`"),
                }
            }
            Tok::Str(s) => {
                self.next();
                Ok(Expr::Str(s))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(s) if matches!(s.as_str(), "TRUE" | "true") => {
                self.next();
                Ok(Expr::Bool(true))
            }
            Tok::Ident(s) if matches!(s.as_str(), "FALSE" | "false") => {
                self.next();
                Ok(Expr::Bool(false))
            }
            Tok::Ident(_) => {
                let name = self.ident("expression")?;
                match self.peek() {
                    Tok::LParen if self.is_switch(&name) => Ok(Expr::MsCall(self.mscall(name, pos)?)),
                    Tok::LParen => Err(CompileError::Undeclared { name, pos }),
                    Tok::Dot => {
                        self.check_switch(&name, pos)?;
                        self.next();
                        let target = self.target_name()?;
                        let field = if self.eat(&Tok::Dot) { Some(self.ident("field name")?) } else { None };
                        Ok(Expr::Result { switch: name, target, field, pos })
                    }
                    _ => Ok(Expr::Var(name, pos)),
                }
            }
            t => self.err(format!("expected an expression, found {}", describe(&t))),
        }
    }

    fn target_name(&mut self) -> Result<String, CompileError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            t => self.err(format!("expected a target name, found {}", describe(&t))),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(v) => format!("`{v}`"),
        Tok::Str(_) => "a string".into(),
        Tok::Eof => "end of input".into(),
        other => {
            let sym = match other {
                Tok::LParen => "(",
                Tok::RParen => ")",
                Tok::LBracket => "[",
                Tok::RBracket => "]",
                Tok::LBrace => "{",
                Tok::RBrace => "}",
                Tok::Comma => ",",
                Tok::Semi => ";",
                Tok::Dot => ".",
                Tok::Colon => ":",
                Tok::Assign => "=",
                Tok::Eq => "==",
                Tok::Ne => "!=",
                Tok::Lt => "<",
                Tok::Gt => ">",
                Tok::Le => "<=",
                Tok::Ge => ">=",
                Tok::Plus => "+",
                Tok::Minus => "-",
                Tok::AndAnd => "&&",
                Tok::OrOr => "||",
                _ => unreachable!(),
            };
            format!("`{sym}`")
        }
    }
}
