//! Arithmetic expression evaluator.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := postfix ('^' unary)?
//! postfix := primary '%'*
//! primary := number | '(' expr ')'
//! ```
//!
//! `^` is right associative and binds tighter than unary minus, so `-2^2`
//! is `-4` and `2^3^2` is `512`. `x%` means `x / 100`. `×` and `÷` are
//! accepted for `*` and `/`.

use std::fmt;

use serde_json::{json, Value};
use thiserror::Error;

use super::{ParamSpec, ParamType, Tool, ToolArgs, ToolError, ToolSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalcError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("division by zero at column {column}")]
    DivisionByZero { column: usize },
    #[error("domain error at column {column}: {message}")]
    Domain { column: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Parsed expression. `column` fields point at the operator (1-based).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Neg(Box<Expr>),
    Percent(Box<Expr>),
    Binary {
        op: BinOp,
        column: usize,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Percent(e) => write!(f, "({e}%)"),
            Expr::Binary { op, lhs, rhs, .. } => write!(f, "({lhs} {} {rhs})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok {
    Num(f64),
    Op(char),
    Open,
    Close,
    Percent,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, CalcError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        match c {
            c if c.is_whitespace() => {
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                let mut dot = false;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    if chars[i] == '.' {
                        if dot {
                            return Err(CalcError::Syntax {
                                column: i + 1,
                                message: "second decimal point in number".into(),
                            });
                        }
                        dot = true;
                    }
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse::<f64>().map_err(|_| CalcError::Syntax {
                    column,
                    message: format!("invalid number `{text}`"),
                })?;
                out.push((Tok::Num(v), column));
            }
            '+' | '-' | '*' | '/' | '^' => {
                out.push((Tok::Op(c), column));
                i += 1;
            }
            '×' => {
                out.push((Tok::Op('*'), column));
                i += 1;
            }
            '÷' => {
                out.push((Tok::Op('/'), column));
                i += 1;
            }
            '(' => {
                out.push((Tok::Open, column));
                i += 1;
            }
            ')' => {
                out.push((Tok::Close, column));
                i += 1;
            }
            '%' => {
                out.push((Tok::Percent, column));
                i += 1;
            }
            other => {
                return Err(CalcError::Syntax {
                    column,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<Tok> {
        self.toks.get(self.pos).map(|t| t.0)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.1)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, CalcError> {
        Err(CalcError::Syntax {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, CalcError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let column = self.column();
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary {
                op,
                column,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, CalcError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let column = self.column();
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary {
                op,
                column,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, CalcError> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, CalcError> {
        let base = self.postfix()?;
        if let Some(Tok::Op('^')) = self.peek() {
            let column = self.column();
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Binary {
                op: BinOp::Pow,
                column,
                lhs: Box::new(base),
                rhs: Box::new(exp),
            });
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<Expr, CalcError> {
        let mut e = self.primary()?;
        while let Some(Tok::Percent) = self.peek() {
            self.pos += 1;
            e = Expr::Percent(Box::new(e));
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Expr, CalcError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Open) => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(Tok::Close) {
                    return self.error("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Tok::Close) => self.error("unexpected `)`"),
            Some(Tok::Percent) => self.error("unexpected `%`"),
            Some(Tok::Op(c)) => self.error(format!("unexpected operator `{c}`")),
            None => self.error("unexpected end of expression"),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, CalcError> {
    if src.trim().is_empty() {
        return Err(CalcError::Empty);
    }
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.chars().count() + 1,
    };
    let e = p.expr()?;
    if p.pos < p.toks.len() {
        return p.error("unexpected trailing input");
    }
    Ok(e)
}

pub fn eval(e: &Expr) -> Result<f64, CalcError> {
    match e {
        Expr::Num(v) => Ok(*v),
        Expr::Neg(inner) => Ok(-eval(inner)?),
        Expr::Percent(inner) => Ok(eval(inner)? / 100.0),
        Expr::Binary {
            op,
            column,
            lhs,
            rhs,
        } => {
            let (a, b) = (eval(lhs)?, eval(rhs)?);
            let column = *column;
            let v = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(CalcError::DivisionByZero { column });
                    }
                    a / b
                }
                BinOp::Pow => {
                    if a == 0.0 && b < 0.0 {
                        return Err(CalcError::Domain {
                            column,
                            message: "zero raised to a negative power".into(),
                        });
                    }
                    if a < 0.0 && b.fract() != 0.0 {
                        return Err(CalcError::Domain {
                            column,
                            message: "negative base with a fractional exponent".into(),
                        });
                    }
                    a.powf(b)
                }
            };
            if !v.is_finite() {
                return Err(CalcError::Domain {
                    column,
                    message: "result overflows".into(),
                });
            }
            Ok(v)
        }
    }
}

pub fn evaluate(src: &str) -> Result<f64, CalcError> {
    eval(&parse(src)?)
}

/// Rounds to 15 significant digits and prints the shortest form, so
/// `0.1 + 0.2` shows as `0.3`.
pub fn format_number(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.14e}").parse().unwrap_or(v);
    format!("{rounded}")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Calculator;

impl Tool for Calculator {
    fn spec(&self) -> ToolSpec {
        ToolSpec {
            name: "calculator".into(),
            description:
                "Evaluate an arithmetic expression with + - * / ^, parentheses and % (x% = x/100)."
                    .into(),
            params: vec![ParamSpec::required("expression", ParamType::String)],
        }
    }

    fn call(&self, args: &ToolArgs) -> Result<Value, ToolError> {
        let expr = args["expression"].as_str().unwrap_or_default();
        let v = evaluate(expr).map_err(|e| ToolError::Failed(e.to_string()))?;
        Ok(json!({"expression": expr, "value": v, "display": format_number(v)}))
    }
}
