//! A small expression language for user-defined combiners.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | name | name '(' args ')' | '(' expr ')'
//! ```
//!
//! `q(row, field)` reads the linear-stage output; other names are parameters.
//! Functions: exp, log, sqrt, abs, min, max.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::fusion::{Combiner, QView};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    fn parse(name: &str) -> Option<(Self, usize)> {
        Some(match name {
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Param(String),
    Q { row: usize, field: usize },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Param(p) => f.write_str(p),
            Expr::Q { row, field } => write!(f, "q({row},{field})"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl Expr {
    /// Every `q(row, field)` reference in evaluation order.
    pub fn q_refs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Q { row, field } = e {
                out.push((*row, *field));
            }
        });
        out
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    fn count_ops(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if matches!(e, Expr::Neg(_) | Expr::Bin(..) | Expr::Call(..)) {
                n += 1;
            }
        });
        n
    }

    /// Resolve parameters and check `q` references against an `n_rows x n_fields` Q.
    pub fn bind(
        &self,
        params: &BTreeMap<String, f64>,
        n_rows: usize,
        n_fields: usize,
    ) -> Result<Expr> {
        Ok(match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Param(p) => Expr::Num(
                *params
                    .get(p)
                    .ok_or_else(|| Error::Config(format!("unknown parameter '{p}'")))?,
            ),
            Expr::Q { row, field } => {
                if *row >= n_rows || *field >= n_fields {
                    return Err(Error::Config(format!(
                        "q({row},{field}) outside Q of {n_rows} rows x {n_fields} fields"
                    )));
                }
                self.clone()
            }
            Expr::Neg(e) => Expr::Neg(Box::new(e.bind(params, n_rows, n_fields)?)),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.bind(params, n_rows, n_fields)?),
                Box::new(b.bind(params, n_rows, n_fields)?),
            ),
            Expr::Call(func, args) => Expr::Call(
                *func,
                args.iter()
                    .map(|a| a.bind(params, n_rows, n_fields))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    /// Evaluate a bound expression. Unbound parameters evaluate to NaN.
    pub fn eval<T: Real>(&self, q: &QView<'_, T>) -> T {
        match self {
            Expr::Num(v) => T::from_f64_lossy(*v),
            Expr::Param(_) => T::nan(),
            Expr::Q { row, field } => q.get(*row, *field),
            Expr::Neg(e) => -e.eval(q),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.eval(q), b.eval(q));
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                }
            }
            Expr::Call(func, args) => {
                let x = args[0].eval(q);
                match func {
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                    Func::Sqrt => x.sqrt(),
                    Func::Abs => x.abs(),
                    Func::Min => x.min(args[1].eval(q)),
                    Func::Max => x.max(args[1].eval(q)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

fn syntax(text: &str, at: usize, message: impl Into<String>) -> Error {
    let before = &text[..at.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s = &text[start..i];
            let v: f64 = s
                .parse()
                .map_err(|_| syntax(text, start, format!("bad number '{s}'")))?;
            toks.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            toks.push((Tok::Ident(text[start..i].to_string()), start));
        } else if "+-*/^(),".contains(c) {
            toks.push((Tok::Sym(c), i));
            i += 1;
        } else {
            return Err(syntax(text, i, format!("unexpected character '{c}'")));
        }
    }
    Ok(toks)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.text.len(), |t| t.1)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(syntax(self.text, self.here(), format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            return Ok(Expr::Bin(
                BinOp::Pow,
                Box::new(base),
                Box::new(self.unary()?),
            ));
        }
        Ok(base)
    }

    fn index(&mut self) -> Result<usize> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => {
                self.pos += 1;
                Ok(v as usize)
            }
            _ => Err(syntax(
                self.text,
                at,
                "expected a non-negative integer index",
            )),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "q" {
                    self.expect('(')?;
                    let row = self.index()?;
                    self.expect(',')?;
                    let field = self.index()?;
                    self.expect(')')?;
                    return Ok(Expr::Q { row, field });
                }
                if self.peek() != Some(&Tok::Sym('(')) {
                    return Ok(Expr::Param(name));
                }
                let (func, arity) = Func::parse(&name)
                    .ok_or_else(|| syntax(self.text, at, format!("unknown function '{name}'")))?;
                self.expect('(')?;
                let mut args = vec![self.expr()?];
                while self.eat(',') {
                    args.push(self.expr()?);
                }
                self.expect(')')?;
                if args.len() != arity {
                    return Err(syntax(
                        self.text,
                        at,
                        format!("{name} takes {arity} argument(s), got {}", args.len()),
                    ));
                }
                Ok(Expr::Call(func, args))
            }
            Some(Tok::Sym(c)) => Err(syntax(self.text, at, format!("unexpected '{c}'"))),
            None => Err(syntax(self.text, at, "unexpected end of expression")),
        }
    }
}

pub fn parse_phi_expression(text: &str) -> Result<Expr> {
    let mut p = Parser {
        text,
        toks: tokenize(text)?,
        pos: 0,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(syntax(text, p.here(), "trailing input"));
    }
    Ok(e)
}

/// Combiner evaluating one bound expression per output field.
#[derive(Debug, Clone)]
pub struct ExprCombiner {
    exprs: Vec<Expr>,
}

impl ExprCombiner {
    pub fn new(
        sources: &[String],
        params: &BTreeMap<String, f64>,
        n_rows: usize,
        n_fields: usize,
    ) -> Result<Self> {
        if sources.len() != n_fields {
            return Err(Error::Config(format!(
                "{} phi expressions for {n_fields} fields",
                sources.len()
            )));
        }
        let exprs = sources
            .iter()
            .map(|s| parse_phi_expression(s)?.bind(params, n_rows, n_fields))
            .collect::<Result<_>>()?;
        Ok(Self { exprs })
    }
}

impl<T: Real> Combiner<T> for ExprCombiner {
    fn name(&self) -> &str {
        "expression"
    }

    fn uses(&self, _n_rows: usize, _n_fields: usize) -> Vec<(usize, usize)> {
        self.exprs.iter().flat_map(Expr::q_refs).collect()
    }

    fn eval(&self, q: QView<'_, T>, _center: [usize; 3], out: &mut [T]) {
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = e.eval(&q);
        }
    }

    fn flops(&self) -> usize {
        self.exprs.iter().map(Expr::count_ops).sum()
    }
}
