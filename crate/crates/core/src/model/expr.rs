//! Rate expressions.
//!
//! A closed arithmetic language over the state variables `x1 .. xd` and
//! named scalar parameters. Supported nodes are constants, variables,
//! parameters, `+ - * /`, unary minus and integer powers (`x1^2`,
//! `x2^-1`). Expressions are parsed once, bound against a parameter table
//! and then either interpreted (derivatives) or compiled to a small stack
//! program for the simulation hot path.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Position of a token inside the source text, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: Pos, msg: String },
    #[error("unknown name `{name}` at {pos}")]
    UnknownName { name: String, pos: Pos },
    #[error("expression nesting too deep (max stack {max})")]
    TooDeep { max: usize },
    #[error("division by zero while evaluating `{expr}`")]
    DivisionByZero { expr: String },
}

/// Bound expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based state variable index (`x1` is `Var(0)`).
    Var(usize),
    Param { name: String, value: f64 },
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    /// Plain evaluation; IEEE semantics, so division by zero yields
    /// infinities or NaN and is caught by the caller's finiteness check.
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => y[*i],
            Expr::Param { value, .. } => *value,
            Expr::Neg(a) => -a.eval(y),
            Expr::Add(a, b) => a.eval(y) + b.eval(y),
            Expr::Sub(a, b) => a.eval(y) - b.eval(y),
            Expr::Mul(a, b) => a.eval(y) * b.eval(y),
            Expr::Div(a, b) => a.eval(y) / b.eval(y),
            Expr::Pow(a, k) => a.eval(y).powi(*k),
        }
    }

    /// Evaluation that reports an exact zero denominator instead of
    /// producing a non-finite value.
    pub fn eval_checked(&self, y: &[f64]) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => y[*i],
            Expr::Param { value, .. } => *value,
            Expr::Neg(a) => -a.eval_checked(y)?,
            Expr::Add(a, b) => a.eval_checked(y)? + b.eval_checked(y)?,
            Expr::Sub(a, b) => a.eval_checked(y)? - b.eval_checked(y)?,
            Expr::Mul(a, b) => a.eval_checked(y)? * b.eval_checked(y)?,
            Expr::Div(a, b) => {
                let den = b.eval_checked(y)?;
                if den == 0.0 {
                    return Err(ExprError::DivisionByZero {
                        expr: self.to_string(),
                    });
                }
                a.eval_checked(y)? / den
            }
            Expr::Pow(a, k) => {
                let base = a.eval_checked(y)?;
                if *k < 0 && base == 0.0 {
                    return Err(ExprError::DivisionByZero {
                        expr: self.to_string(),
                    });
                }
                base.powi(*k)
            }
        })
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn derivative(&self, var: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) | Param { .. } => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(var)),
            Add(a, b) => add(a.derivative(var), b.derivative(var)),
            Sub(a, b) => sub(a.derivative(var), b.derivative(var)),
            Mul(a, b) => add(
                mul(a.derivative(var), (**b).clone()),
                mul((**a).clone(), b.derivative(var)),
            ),
            Div(a, b) => {
                // (a'b - ab') / b^2
                let num = sub(
                    mul(a.derivative(var), (**b).clone()),
                    mul((**a).clone(), b.derivative(var)),
                );
                div(num, pow((**b).clone(), 2))
            }
            Pow(a, k) => {
                if *k == 0 {
                    Const(0.0)
                } else {
                    mul(
                        mul(Const(f64::from(*k)), pow((**a).clone(), k - 1)),
                        a.derivative(var),
                    )
                }
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Param { .. } => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) => a.is_constant(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.is_constant() && b.is_constant()
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

// Smart constructors used by differentiation: they drop the 0 and 1
// identities so derivative trees of polynomial rates stay small.
fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), _) if *x == 0.0 => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) | (_, Expr::Const(x)) if *x == 0.0 => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, k: i32) -> Expr {
    match k {
        0 => Expr::Const(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), k),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| -> fmt::Result {
            if e.precedence() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Param { name, .. } => write!(f, "{name}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, 4)
            }
            Expr::Add(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " + ")?;
                wrap(f, b, 2)
            }
            Expr::Sub(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " - ")?;
                wrap(f, b, 2)
            }
            Expr::Mul(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "*")?;
                wrap(f, b, 3)
            }
            Expr::Div(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "/")?;
                wrap(f, b, 3)
            }
            Expr::Pow(a, k) => {
                wrap(f, a, 5)?;
                write!(f, "^{k}")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer / parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    idx: usize,
    line: usize,
    col0: usize,
}

impl<'a> Lexer<'a> {
    fn pos(&self, idx: usize) -> Pos {
        Pos {
            line: self.line,
            col: self.col0 + idx,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ExprError> {
        let mut out = Vec::new();
        while self.idx < self.src.len() {
            let c = self.src[self.idx] as char;
            let start = self.idx;
            if c.is_ascii_whitespace() {
                self.idx += 1;
                continue;
            }
            if c.is_ascii_digit() || c == '.' {
                while self.idx < self.src.len() {
                    let ch = self.src[self.idx] as char;
                    let prev = if self.idx > start {
                        self.src[self.idx - 1] as char
                    } else {
                        ' '
                    };
                    let exp_sign = (ch == '+' || ch == '-') && (prev == 'e' || prev == 'E');
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                        self.idx += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.idx]).unwrap_or("");
                let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    pos: self.pos(start),
                    msg: format!("malformed number `{text}`"),
                })?;
                out.push((Tok::Num(value), self.pos(start)));
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                while self.idx < self.src.len() {
                    let ch = self.src[self.idx] as char;
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        self.idx += 1;
                    } else {
                        break;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.idx]).unwrap_or("");
                out.push((Tok::Ident(text.to_string()), self.pos(start)));
                continue;
            }
            let tok = match c {
                '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                _ => {
                    return Err(ExprError::Syntax {
                        pos: self.pos(start),
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push((tok, self.pos(start)));
            self.idx += 1;
        }
        Ok(out)
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, Pos)>,
    idx: usize,
    end: Pos,
    dim: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.idx).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek() {
            let op = *op;
            self.idx += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek() {
            let op = *op;
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.idx += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.idx += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.idx += 1;
            let mut sign = 1i32;
            match self.peek() {
                Some(Tok::Op('-')) => {
                    sign = -1;
                    self.idx += 1;
                }
                Some(Tok::Op('+')) => self.idx += 1,
                _ => {}
            }
            let k = match self.peek() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= 64.0 => *v as i32,
                _ => return self.err("exponent must be an integer literal with |k| <= 64"),
            };
            self.idx += 1;
            if let Some(Tok::Op('^')) = self.peek() {
                return self.err("chained powers are ambiguous; use parentheses");
            }
            return Ok(Expr::Pow(Box::new(base), sign * k));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.pos();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.idx += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(name)) => {
                self.idx += 1;
                if let Some(value) = self.params.get(&name) {
                    return Ok(Expr::Param { name, value: *value });
                }
                if let Some(k) = variable_index(&name) {
                    if k >= 1 && k <= self.dim {
                        return Ok(Expr::Var(k - 1));
                    }
                }
                Err(ExprError::UnknownName { name, pos })
            }
            Some(Tok::LParen) => {
                self.idx += 1;
                let e = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.idx += 1;
                Ok(e)
            }
            Some(_) => self.err("expected a number, name or `(`"),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// `x3` -> `Some(3)`.
pub fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parse and bind `src`. `line`/`col` locate the first byte of `src` in the
/// enclosing document, so errors point into the config file.
pub fn parse_expr(
    src: &str,
    dim: usize,
    params: &BTreeMap<String, f64>,
    line: usize,
    col: usize,
) -> Result<Expr, ExprError> {
    let lexer = Lexer {
        src: src.as_bytes(),
        idx: 0,
        line,
        col0: col,
    };
    let toks = lexer.tokens()?;
    let end = Pos {
        line,
        col: col + src.len(),
    };
    if toks.is_empty() {
        return Err(ExprError::Syntax {
            pos: end,
            msg: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        idx: 0,
        end,
        dim,
        params,
    };
    let e = p.expr()?;
    if p.idx != p.toks.len() {
        return p.err("trailing input after expression");
    }
    Ok(e)
}

// ---------------------------------------------------------------------------
// Compiled form

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowI(i32),
}

pub const MAX_STACK: usize = 32;

/// Postfix program for one expression. Evaluation uses a fixed-size stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
}

impl Program {
    pub fn compile(expr: &Expr) -> Result<Self, ExprError> {
        let mut ops = Vec::new();
        let depth = emit(expr, &mut ops);
        if depth > MAX_STACK {
            return Err(ExprError::TooDeep { max: MAX_STACK });
        }
        Ok(Program { ops })
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        let mut stack = [0.0f64; MAX_STACK];
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = y[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::PowI(k) => stack[sp - 1] = stack[sp - 1].powi(k),
                Op::Add => {
                    sp -= 1;
                    stack[sp - 1] += stack[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    stack[sp - 1] -= stack[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    stack[sp - 1] *= stack[sp];
                }
                Op::Div => {
                    sp -= 1;
                    stack[sp - 1] /= stack[sp];
                }
            }
        }
        stack[0]
    }
}

/// Emits postfix code, folding constant subtrees. Returns the stack depth
/// needed by the emitted code.
fn emit(e: &Expr, ops: &mut Vec<Op>) -> usize {
    if e.is_constant() {
        ops.push(Op::Const(e.eval(&[])));
        return 1;
    }
    match e {
        Expr::Const(c) => {
            ops.push(Op::Const(*c));
            1
        }
        Expr::Param { value, .. } => {
            ops.push(Op::Const(*value));
            1
        }
        Expr::Var(i) => {
            ops.push(Op::Var(*i));
            1
        }
        Expr::Neg(a) => {
            let d = emit(a, ops);
            ops.push(Op::Neg);
            d
        }
        Expr::Pow(a, k) => {
            let d = emit(a, ops);
            ops.push(Op::PowI(*k));
            d
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
            let da = emit(a, ops);
            let db = emit(b, ops);
            ops.push(match e {
                Expr::Add(..) => Op::Add,
                Expr::Sub(..) => Op::Sub,
                Expr::Mul(..) => Op::Mul,
                _ => Op::Div,
            });
            da.max(db + 1)
        }
    }
}

/// A bound rate expression together with its gradient.
#[derive(Debug, Clone)]
pub struct RateExpr {
    source: String,
    expr: Expr,
    gradient: Vec<Expr>,
    program: Program,
}

impl RateExpr {
    pub fn new(source: impl Into<String>, expr: Expr, dim: usize) -> Result<Self, ExprError> {
        let program = Program::compile(&expr)?;
        let gradient = (0..dim).map(|i| expr.derivative(i)).collect();
        Ok(RateExpr {
            source: source.into(),
            expr,
            gradient,
            program,
        })
    }

    pub fn parse(
        src: &str,
        dim: usize,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self, ExprError> {
        let expr = parse_expr(src, dim, params, 1, 1)?;
        Self::new(src.trim(), expr, dim)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn gradient_exprs(&self) -> &[Expr] {
        &self.gradient
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.program.eval(y)
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>, ExprError> {
        self.gradient.iter().map(|g| g.eval_checked(y)).collect()
    }

    /// True when every partial derivative is a constant expression.
    pub fn is_affine(&self) -> bool {
        self.gradient.iter().all(Expr::is_constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BTreeMap<String, f64> {
        [("a".to_string(), 2.0), ("g".to_string(), 0.5)]
            .into_iter()
            .collect()
    }

    fn parse(src: &str) -> Result<Expr, ExprError> {
        parse_expr(src, 2, &params(), 1, 1)
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse("1 - 2 - 3").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), -4.0);
        let e = parse("2 * 3 ^ 2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 18.0);
        let e = parse("-x1^2").unwrap();
        assert_eq!(e.eval(&[3.0, 0.0]), -9.0);
        let e = parse("8 / 4 / 2").unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]), 1.0);
        let e = parse("a*x1*x2 + g*(x2 - 1)").unwrap();
        assert_eq!(e.eval(&[0.5, 2.0]), 2.0 + 0.5);
    }

    #[test]
    fn negative_and_scientific_literals() {
        let e = parse("1.5e-1 * x1^-1").unwrap();
        assert!((e.eval(&[0.5, 0.0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn unknown_names_are_reported_with_position() {
        match parse("a * q") {
            Err(ExprError::UnknownName { name, pos }) => {
                assert_eq!(name, "q");
                assert_eq!(pos, Pos { line: 1, col: 5 });
            }
            other => panic!("unexpected {other:?}"),
        }
        // x3 is not a variable when d = 2
        assert!(matches!(parse("x3"), Err(ExprError::UnknownName { .. })));
    }

    #[test]
    fn rejects_trailing_garbage_and_bad_powers() {
        assert!(matches!(parse("x1 x2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x1 ^ 0.5"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x1 ^ 2 ^ 2"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(x1"), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x1 $"), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn derivative_of_mass_action_terms() {
        let e = parse("a*x1*x2").unwrap();
        let d1 = e.derivative(0);
        let d2 = e.derivative(1);
        assert_eq!(d1.eval(&[0.5, 3.0]), 6.0);
        assert_eq!(d2.eval(&[0.5, 3.0]), 1.0);
        assert_eq!(parse("g").unwrap().derivative(0), Expr::Const(0.0));
    }

    #[test]
    fn derivative_of_quotient_and_negative_power() {
        let e = parse("x1 / (1 + x2)").unwrap();
        let y = [2.0, 3.0];
        assert!((e.derivative(0).eval(&y) - 0.25).abs() < 1e-15);
        assert!((e.derivative(1).eval(&y) + 2.0 / 16.0).abs() < 1e-15);
        let e = parse("x1^-2").unwrap();
        assert!((e.derivative(0).eval(&[2.0, 0.0]) + 0.25).abs() < 1e-15);
    }

    #[test]
    fn checked_evaluation_flags_zero_denominators() {
        let e = parse("1 / x1").unwrap();
        assert!(matches!(
            e.derivative(0).eval_checked(&[0.0, 1.0]),
            Err(ExprError::DivisionByZero { .. })
        ));
        let e = parse("x1^-1").unwrap();
        assert!(e.eval_checked(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn compiled_program_matches_tree() {
        for src in ["a*x1*x2", "g*x2", "3", "-(x1 - x2)^3 / (2 + x1)", "x1^-2 * a - g"] {
            let e = parse(src).unwrap();
            let p = Program::compile(&e).unwrap();
            for y in [[0.3, 1.7], [2.0, -0.5], [1.0, 1.0]] {
                let a = e.eval(&y);
                let b = p.eval(&y);
                assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{src}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn display_round_trips_through_parser() {
        for src in ["a*x1*x2", "x1 - (x2 - 1)", "-x1^2 / (x2 + g)", "(x1 + x2)^-3"] {
            let e = parse(src).unwrap();
            let again = parse(&e.to_string()).unwrap();
            for y in [[0.3, 1.7], [2.0, 0.5]] {
                assert_eq!(e.eval(&y), again.eval(&y), "{src} -> {e}");
            }
        }
    }

    #[test]
    fn deep_nesting_is_rejected_at_compile_time() {
        // Right-nested products need one stack slot per level.
        let mut right = String::from("x1");
        for _ in 0..40 {
            right = format!("x2 * ({right})");
        }
        let e = parse(&right).unwrap();
        assert!(matches!(Program::compile(&e), Err(ExprError::TooDeep { .. })));
    }
}
