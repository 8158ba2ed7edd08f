//! Drift expression mini-language.
//!
//! Grammar (recursive descent, left-associative binary operators):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | 't' | 'x' index | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | tanh | abs
//! ```
//!
//! State variables are `x1 .. xd`. The Unicode minus sign `−` is accepted as
//! `-`. Columns in errors are 1-based character positions.

use std::fmt;

use crate::dual::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
            Func::Tanh => x.tanh(),
            Func::Abs => x.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Time,
    /// Zero-based state coordinate.
    State(usize),
    Neg(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        /// Column of the operator, reported on division by zero.
        column: usize,
    },
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval<S: Scalar>(&self, t: S, x: &[S]) -> Result<S> {
        Ok(match self {
            Expr::Const(c) => S::constant(*c),
            Expr::Time => t,
            Expr::State(k) => x[*k],
            Expr::Neg(e) => -e.eval(t, x)?,
            Expr::Binary {
                op,
                lhs,
                rhs,
                column,
            } => {
                let a = lhs.eval(t, x)?;
                let b = rhs.eval(t, x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b.value() == 0.0 {
                            return Err(Error::DivisionByZero { column: *column });
                        }
                        a / b
                    }
                }
            }
            Expr::Call(f, e) => f.apply(e.eval(t, x)?),
        })
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(e) | Expr::Call(_, e) => e.visit(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.visit(f);
                rhs.visit(f);
            }
            _ => {}
        }
    }
}

/// A parsed drift component together with its source text.
#[derive(Debug, Clone)]
pub struct DriftExpr {
    source: String,
    root: Expr,
}

impl PartialEq for DriftExpr {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

impl fmt::Display for DriftExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl DriftExpr {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn eval<S: Scalar>(&self, t: S, x: &[S]) -> Result<S> {
        self.root.eval(t, x)
    }

    pub fn uses_time(&self) -> bool {
        let mut found = false;
        self.root.visit(&mut |e| found |= matches!(e, Expr::Time));
        found
    }

    /// Highest state index referenced, 1-based (0 if none).
    pub fn state_arity(&self) -> usize {
        let mut max = 0;
        self.root.visit(&mut |e| {
            if let Expr::State(k) = e {
                max = max.max(k + 1);
            }
        });
        max
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

struct Token {
    tok: Tok,
    column: usize,
}

fn syntax(column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: 1,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' | '−' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, column });
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit: String = chars[start..i].iter().collect();
            let value = lit
                .parse::<f64>()
                .map_err(|_| syntax(column, format!("malformed number `{lit}`")))?;
            out.push(Token {
                tok: Tok::Num(value),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else {
            return Err(syntax(column, format!("unexpected character `{c}`")));
        }
    }
    out.push(Token {
        tok: Tok::End,
        column: chars.len() + 1,
    });
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> &Token {
        let t = &self.tokens[self.pos];
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            let column = self.bump().column;
            let rhs = self.term()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                column,
            };
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            let column = self.bump().column;
            let rhs = self.unary()?;
            lhs = Expr::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
                column,
            };
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        let Token { tok, column } = {
            let t = self.bump();
            Token {
                tok: t.tok.clone(),
                column: t.column,
            }
        };
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect_close(column)?;
                Ok(inner)
            }
            Tok::Ident(name) => self.identifier(&name, column),
            Tok::End => Err(syntax(column, "unexpected end of expression")),
            Tok::RParen => Err(syntax(column, "unbalanced `)`")),
            other => Err(syntax(column, format!("unexpected token {other:?}"))),
        }
    }

    fn identifier(&mut self, name: &str, column: usize) -> Result<Expr> {
        if name == "t" {
            return Ok(Expr::Time);
        }
        if let Some(idx) = name.strip_prefix('x') {
            if let Ok(k) = idx.parse::<usize>() {
                if k >= 1 && !idx.starts_with('0') {
                    return Ok(Expr::State(k - 1));
                }
            }
        }
        let Some(func) = Func::from_name(name) else {
            return Err(syntax(column, format!("unknown identifier `{name}`")));
        };
        if self.peek().tok != Tok::LParen {
            return Err(syntax(
                self.peek().column,
                format!("function `{name}` expects `(`"),
            ));
        }
        let open = self.bump().column;
        if self.peek().tok == Tok::RParen {
            return Err(syntax(
                self.peek().column,
                format!("function `{name}` takes exactly 1 argument, got 0"),
            ));
        }
        let arg = self.expr()?;
        if self.peek().tok == Tok::Comma {
            return Err(syntax(
                self.peek().column,
                format!("function `{name}` takes exactly 1 argument"),
            ));
        }
        self.expect_close(open)?;
        Ok(Expr::Call(func, Box::new(arg)))
    }

    fn expect_close(&mut self, open_column: usize) -> Result<()> {
        match self.peek().tok {
            Tok::RParen => {
                self.bump();
                Ok(())
            }
            _ => Err(syntax(
                open_column,
                "unbalanced `(`: missing closing parenthesis",
            )),
        }
    }
}

pub fn parse_drift_expr(text: &str) -> Result<DriftExpr> {
    if text.trim().is_empty() {
        return Err(syntax(1, "empty expression"));
    }
    let mut parser = Parser {
        tokens: lex(text)?,
        pos: 0,
    };
    let root = parser.expr()?;
    let end = parser.peek();
    match end.tok {
        Tok::End => Ok(DriftExpr {
            source: text.to_string(),
            root,
        }),
        Tok::RParen => Err(syntax(end.column, "unbalanced `)`")),
        _ => Err(syntax(end.column, "unexpected trailing input")),
    }
}
