//! Coefficient expressions over `t`, `x` and `z`.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! sum     = product (("+" | "-") product)*
//! product = unary (("*" | "/") unary)*
//! unary   = "-" unary | power
//! power   = atom ("^" unary)?
//! atom    = number | var | func "(" sum ("," sum)* ")" | "(" sum ")"
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so `-x^2`
//! is `-(x^2)`. `indicator(a, b)` is 1 when `a <= x <= b`.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("column {column}: {message}")]
pub struct ExprError {
    /// 1-based character column.
    pub column: usize,
    pub message: String,
}

fn err<T>(column: usize, message: impl Into<String>) -> Result<T, ExprError> {
    Err(ExprError {
        column,
        message: message.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    Z,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Func {
    Abs,
    Sign,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Min,
    Max,
    Indicator,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "abs" => (Func::Abs, 1),
            "sign" => (Func::Sign, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "indicator" => (Func::Indicator, 2),
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(char, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
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
            let text: String = chars[start..i].iter().collect();
            match text.parse::<f64>() {
                Ok(v) => out.push((Tok::Num(v), col)),
                Err(_) => return err(col, format!("malformed number '{text}'")),
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        let tok = match c {
            '+' | '*' | '/' | '^' => Tok::Op(c),
            // accept the typographic minus sign too
            '-' | '\u{2212}' => Tok::Op('-'),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => return err(col, format!("unexpected character '{c}'")),
        };
        out.push((tok, col));
        i += 1;
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn col(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            err(self.col(), format!("expected {what}"))
        }
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        while let Tok::Op(op @ ('+' | '-')) = *self.peek() {
            self.bump();
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(op @ ('*' | '/')) = *self.peek() {
            self.bump();
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            return Ok(Node::Bin('^', Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let (tok, col) = self.bump();
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.sum()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let var = match name.as_str() {
                    "t" => Some(Var::T),
                    "x" => Some(Var::X),
                    "z" => Some(Var::Z),
                    _ => None,
                };
                if let Some(v) = var {
                    if !self.allowed.contains(&v) {
                        return err(col, format!("variable '{name}' is not available here"));
                    }
                    return Ok(Node::Var(v));
                }
                let Some((f, arity)) = Func::lookup(&name) else {
                    return err(col, format!("unknown name '{name}'"));
                };
                self.expect(Tok::LParen, &format!("'(' after {name}"))?;
                let mut args = vec![self.sum()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.sum()?);
                }
                if args.len() != arity {
                    return err(
                        col,
                        format!("{name} takes {arity} argument(s), got {}", args.len()),
                    );
                }
                self.expect(Tok::RParen, "')'")?;
                if f == Func::Indicator && !self.allowed.contains(&Var::X) {
                    return err(col, "indicator refers to x, which is not available here");
                }
                Ok(Node::Call(f, args))
            }
            Tok::End => err(col, "unexpected end of expression"),
            Tok::Op(c) => err(col, format!("unexpected operator '{c}'")),
            Tok::RParen => err(col, "unexpected ')'"),
            Tok::Comma => err(col, "unexpected ','"),
        }
    }
}

/// A parsed expression.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    /// Parses `src`, rejecting variables outside `allowed`.
    pub fn parse(src: &str, allowed: &[Var]) -> Result<Self, ExprError> {
        let mut p = Parser {
            toks: lex(src)?,
            pos: 0,
            allowed,
        };
        let root = p.sum()?;
        if *p.peek() != Tok::End {
            return err(p.col(), "unexpected trailing input");
        }
        Ok(Self {
            root,
            source: src.to_string(),
        })
    }

    pub fn eval(&self, t: f64, x: f64, z: f64) -> f64 {
        eval(&self.root, t, x, z)
    }

    pub fn uses(&self, v: Var) -> bool {
        uses(&self.root, v)
    }

    /// `Some(s)` when the expression is `s * z` or `z * s` with `s` free of
    /// `z`, so that the jump coefficient is linear in the mark.
    pub fn linear_in_z(&self) -> Option<Expr> {
        if let Node::Bin('*', a, b) = &self.root {
            let coeff = match (&**a, &**b) {
                (s, Node::Var(Var::Z)) | (Node::Var(Var::Z), s) if !uses(s, Var::Z) => s.clone(),
                _ => return None,
            };
            return Some(Expr {
                root: coeff,
                source: format!("({}) / z", self.source),
            });
        }
        None
    }
}

fn uses(n: &Node, v: Var) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(w) => *w == v,
        Node::Neg(a) => uses(a, v),
        Node::Bin(_, a, b) => uses(a, v) || uses(b, v),
        Node::Call(f, args) => {
            (*f == Func::Indicator && v == Var::X) || args.iter().any(|a| uses(a, v))
        }
    }
}

fn eval(n: &Node, t: f64, x: f64, z: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(Var::T) => t,
        Node::Var(Var::X) => x,
        Node::Var(Var::Z) => z,
        Node::Neg(a) => -eval(a, t, x, z),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, t, x, z), eval(b, t, x, z));
            match op {
                '+' => a + b,
                '-' => a - b,
                '*' => a * b,
                '/' => a / b,
                _ => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], t, x, z);
            match f {
                Func::Abs => a.abs(),
                Func::Sign => {
                    if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Min => a.min(eval(&args[1], t, x, z)),
                Func::Max => a.max(eval(&args[1], t, x, z)),
                Func::Indicator => {
                    let b = eval(&args[1], t, x, z);
                    if a <= x && x <= b {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: &[Var] = &[Var::T, Var::X, Var::Z];

    fn at(src: &str, x: f64, z: f64) -> f64 {
        Expr::parse(src, ALL).unwrap().eval(0.0, x, z)
    }

    #[test]
    fn worked_values() {
        assert_eq!(at("-x", 3.0, 0.0), -3.0);
        assert_eq!(at("sign(x)*abs(x)^(-0.5)*indicator(-1,1)", 0.25, 0.0), 2.0);
        assert_eq!(at("0.5*abs(x)^0.5*z", 4.0, 3.0), 3.0);
    }

    #[test]
    fn precedence() {
        assert_eq!(at("-x^2", 3.0, 0.0), -9.0);
        assert_eq!(at("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(at("1 - 2 - 3", 0.0, 0.0), -4.0);
        assert_eq!(at("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(at("2 * -x", 1.5, 0.0), -3.0);
        assert_eq!(at("2^-1", 0.0, 0.0), 0.5);
        assert_eq!(at("1.5e1 + 2E-1", 0.0, 0.0), 15.2);
        assert_eq!(at("max(x, min(1, z))", -1.0, 4.0), 1.0);
        assert_eq!(at("\u{2212}x", 2.0, 0.0), -2.0);
        assert_eq!(at("indicator(-1, 1)", 1.0, 0.0), 1.0);
        assert_eq!(at("indicator(-1, 1)", 1.5, 0.0), 0.0);
    }

    #[test]
    fn errors_carry_columns() {
        let e = Expr::parse("x + * 2", ALL).unwrap_err();
        assert_eq!(e.column, 5);
        let e = Expr::parse("sin(x", ALL).unwrap_err();
        assert_eq!(e.column, 6);
        let e = Expr::parse("2 * foo(x)", ALL).unwrap_err();
        assert_eq!(e.column, 5);
        let e = Expr::parse("x $ 1", ALL).unwrap_err();
        assert_eq!(e.column, 3);
        let e = Expr::parse("min(x)", ALL).unwrap_err();
        assert_eq!(e.column, 1);
        let e = Expr::parse("-x + z", &[Var::T, Var::X]).unwrap_err();
        assert_eq!(e.column, 6);
        let e = Expr::parse("(x) 2", ALL).unwrap_err();
        assert_eq!(
            (e.column, e.message.as_str()),
            (5, "unexpected trailing input")
        );
    }

    #[test]
    fn linear_mark_detection() {
        let e = Expr::parse("0.5*abs(x)^0.5*z", ALL).unwrap();
        let s = e.linear_in_z().unwrap();
        assert_eq!(s.eval(0.0, 4.0, 99.0), 1.0);
        assert!(Expr::parse("z*z", ALL).unwrap().linear_in_z().is_none());
        assert!(Expr::parse("sin(z)", ALL).unwrap().linear_in_z().is_none());
        assert!(Expr::parse("z * (2 + sin(x)) / 3", ALL)
            .unwrap()
            .linear_in_z()
            .is_none());
    }
}
