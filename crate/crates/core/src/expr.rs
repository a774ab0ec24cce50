//! Parser for user-supplied mappings.
//!
//! Two input forms are accepted:
//!
//! * `catalog:NAME` or `catalog:NAME(param=value, ...)` — a built-in map;
//! * a comma-separated list of n coordinate expressions in the variables
//!   `x1..xn` and `|x|`, e.g. `x1*exp(1-1/|x|), x2*exp(1-1/|x|)`.
//!
//! Expressions support `+ - * / ^`, parentheses, numeric literals and the
//! functions `exp`, `log`, `pow`, `sin`, `cos`, `sqrt`. Parse failures
//! report a byte position into the input.

use std::sync::Arc;

use nalgebra::DVector;

use crate::mapping::{catalog_get, MappingSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
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
    Pow,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }

    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "pow" => Func::Pow,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Parsed scalar expression in x1..xn and |x|.
#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    /// zero-based coordinate index
    Coord(usize),
    NormX,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Coord(i) => x[*i],
            Expr::NormX => x.norm(),
            Expr::Neg(e) => -e.eval(x),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Pow => a.powf(args[1].eval(x)),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Sqrt => a.sqrt(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    NormX,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eq,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Next token with its starting byte position; None at end of input.
    fn next(&mut self) -> Result<Option<(Tok, usize)>> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'/' => {
                self.pos += 1;
                Tok::Slash
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            b',' => {
                self.pos += 1;
                Tok::Comma
            }
            b'=' => {
                self.pos += 1;
                Tok::Eq
            }
            b'|' => {
                if self.src[self.pos..].starts_with(b"|x|") {
                    self.pos += 3;
                    Tok::NormX
                } else {
                    return Err(Error::Parse {
                        position: start,
                        message: "expected `|x|`".into(),
                    });
                }
            }
            b'0'..=b'9' | b'.' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_digit() || self.src[end] == b'.')
                {
                    end += 1;
                }
                // exponent part
                if end < self.src.len() && (self.src[end] | 0x20) == b'e' {
                    let mut e = end + 1;
                    if e < self.src.len() && (self.src[e] == b'+' || self.src[e] == b'-') {
                        e += 1;
                    }
                    if e < self.src.len() && self.src[e].is_ascii_digit() {
                        while e < self.src.len() && self.src[e].is_ascii_digit() {
                            e += 1;
                        }
                        end = e;
                    }
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                let value: f64 = text.parse().map_err(|_| Error::Parse {
                    position: start,
                    message: format!("bad number literal `{text}`"),
                })?;
                self.pos = end;
                Tok::Num(value)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let mut end = self.pos;
                while end < self.src.len()
                    && (self.src[end].is_ascii_alphanumeric() || self.src[end] == b'_')
                {
                    end += 1;
                }
                let text = std::str::from_utf8(&self.src[self.pos..end]).unwrap();
                self.pos = end;
                Tok::Ident(text.to_string())
            }
            other => {
                return Err(Error::Parse {
                    position: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((tok, start)))
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    /// byte length of the input, used as the error position at end
    end: usize,
    idx: usize,
    n: usize,
}

impl Parser {
    fn new(src: &str, n: usize) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let mut toks = Vec::new();
        while let Some(t) = lexer.next()? {
            toks.push(t);
        }
        Ok(Self {
            toks,
            end: src.len(),
            idx: 0,
            n,
        })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(t, _)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.idx).map(|&(_, p)| p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(t, _)| t.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, tok: &Tok, what: &str) -> Result<()> {
        if self.peek() == Some(tok) {
            self.idx += 1;
            Ok(())
        } else {
            Err(Error::Parse {
                position: self.pos(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.idx += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.idx += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.idx += 1;
            // right-associative exponent
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let pos = self.pos();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Num(v)),
            Some(Tok::NormX) => Ok(Expr::NormX),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if let Some(func) = Func::lookup(&name) {
                    self.expect(&Tok::LParen, "`(` after function name")?;
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.idx += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(&Tok::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        return Err(Error::Parse {
                            position: pos,
                            message: format!(
                                "`{name}` takes {} argument(s), got {}",
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(i) = rest.parse::<usize>() {
                        if 1 <= i && i <= self.n {
                            return Ok(Expr::Coord(i - 1));
                        }
                        return Err(Error::Parse {
                            position: pos,
                            message: format!(
                                "coordinate `{name}` out of range for dimension {}",
                                self.n
                            ),
                        });
                    }
                }
                Err(Error::Parse {
                    position: pos,
                    message: format!("unknown identifier `{name}`"),
                })
            }
            _ => Err(Error::Parse {
                position: pos,
                message: "expected a number, coordinate, `|x|` or `(`".into(),
            }),
        }
    }
}

/// Parse one scalar expression; the whole input must be consumed.
pub fn parse_expr(src: &str, n: usize) -> Result<Expr> {
    let mut p = Parser::new(src, n)?;
    let e = p.expr()?;
    if p.peek().is_some() {
        return Err(Error::Parse {
            position: p.pos(),
            message: "trailing input after expression".into(),
        });
    }
    Ok(e)
}

/// Parse a comma-separated list of exactly n coordinate expressions.
pub fn parse_components(src: &str, n: usize) -> Result<Vec<Expr>> {
    let mut p = Parser::new(src, n)?;
    let mut comps = vec![p.expr()?];
    while p.peek() == Some(&Tok::Comma) {
        p.idx += 1;
        comps.push(p.expr()?);
    }
    if p.peek().is_some() {
        return Err(Error::Parse {
            position: p.pos(),
            message: "trailing input after component list".into(),
        });
    }
    if comps.len() != n {
        return Err(Error::Parse {
            position: p.end,
            message: format!("expected {n} components, got {}", comps.len()),
        });
    }
    Ok(comps)
}

/// Parse `catalog:NAME` / `catalog:NAME(k=v, ...)` or a component list into
/// a mapping specification. Expression maps use finite-difference Jacobians.
pub fn parse_map(src: &str, n: usize) -> Result<MappingSpec> {
    let trimmed = src.trim();
    if let Some(rest) = trimmed.strip_prefix("catalog:") {
        return parse_catalog(rest, n);
    }
    let comps = parse_components(trimmed, n)?;
    let label = format!("expr[{trimmed}]");
    let eval = Arc::new(move |x: &DVector<f64>| {
        DVector::from_iterator(comps.len(), comps.iter().map(|c| c.eval(x)))
    });
    MappingSpec::new(n, label, Vec::new(), eval, None)
}

fn parse_catalog(rest: &str, n: usize) -> Result<MappingSpec> {
    let rest = rest.trim();
    let (name, params) = match rest.find('(') {
        None => (rest, Vec::new()),
        Some(open) => {
            let name = rest[..open].trim();
            let inner = rest[open + 1..].strip_suffix(')').ok_or(Error::Parse {
                position: rest.len(),
                message: "expected `)` closing the parameter list".into(),
            })?;
            let mut params = Vec::new();
            for piece in inner.split(',') {
                let piece = piece.trim();
                if piece.is_empty() {
                    continue;
                }
                let (key, value) = piece.split_once('=').ok_or(Error::Parse {
                    position: open,
                    message: format!("expected `key=value`, got `{piece}`"),
                })?;
                let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
                    position: open,
                    message: format!("bad numeric value `{}`", value.trim()),
                })?;
                params.push((key.trim().to_string(), value));
            }
            (name, params)
        }
    };
    catalog_get(name, n, &params)
}
