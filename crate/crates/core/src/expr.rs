//! A small arithmetic language for coefficient functions.
//!
//! Expressions are stored together with their source text, so they serialize
//! as plain JSON strings. The grammar is given in the repository README.
//! Variables are `x1, x2, ...` (state components, `x` is an alias of `x1`)
//! and `t` (time).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Abs,
    Min,
    Max,
    Sqrt,
    Exp,
    Log,
    Pos,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "abs" => (Func::Abs, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            "sqrt" => (Func::Sqrt, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "pos" => (Func::Pos, 1),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Time,
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn eval(&self, x: &[f64], t: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var(i) => x[*i],
            Node::Time => t,
            Node::Neg(a) => -a.eval(x, t),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, t), b.eval(x, t));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => {
                        if b == 2.0 {
                            a * a
                        } else {
                            a.powf(b)
                        }
                    }
                }
            }
            Node::Call(f, args) => {
                let a = args[0].eval(x, t);
                match f {
                    Func::Abs => a.abs(),
                    Func::Min => a.min(args[1].eval(x, t)),
                    Func::Max => a.max(args[1].eval(x, t)),
                    Func::Sqrt => a.sqrt(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Pos => a.max(0.0),
                }
            }
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Var(i) => Some(*i),
            Node::Num(_) | Node::Time => None,
            Node::Neg(a) => a.max_var(),
            Node::Bin(_, a, b) => a.max_var().max(b.max_var()),
            Node::Call(_, args) => args.iter().filter_map(Node::max_var).max(),
        }
    }

    fn uses_time(&self) -> bool {
        match self {
            Node::Time => true,
            Node::Num(_) | Node::Var(_) => false,
            Node::Neg(a) => a.uses_time(),
            Node::Bin(_, a, b) => a.uses_time() || b.uses_time(),
            Node::Call(_, args) => args.iter().any(Node::uses_time),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // expr := term (("+" | "-") term)*
    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // term := unary (("*" | "/") unary)*
    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // unary := "-" unary | power
    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    // power := atom ("^" unary)?   (right associative)
    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => self.err(format!("unexpected character '{}'", c as char)),
            None => self.err("unexpected end of input"),
        }
    }

    fn number(&mut self) -> Result<Node> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_digit() || b[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < b.len() && (b[self.pos] == b'e' || b[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < b.len() && (b[self.pos] == b'+' || b[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < b.len() && b[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) => Ok(Node::Num(v)),
            Err(_) => {
                self.pos = start;
                self.err(format!("bad number '{text}'"))
            }
        }
    }

    fn ident(&mut self) -> Result<Node> {
        let start = self.pos;
        let b = self.bytes;
        while self.pos < b.len() && (b[self.pos].is_ascii_alphanumeric() || b[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if name == "t" {
            return Ok(Node::Time);
        }
        if name == "x" {
            return Ok(Node::Var(0));
        }
        if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
            if idx == 0 {
                self.pos = start;
                return self.err("state variables are numbered from x1");
            }
            return Ok(Node::Var(idx - 1));
        }
        if let Some((f, arity)) = Func::lookup(name) {
            if !self.eat(b'(') {
                return self.err(format!("expected '(' after {name}"));
            }
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return self.err("expected ')'");
            }
            if args.len() != arity {
                return self.err(format!(
                    "{name} takes {arity} argument(s), got {}",
                    args.len()
                ));
            }
            return Ok(Node::Call(f, args));
        }
        self.pos = start;
        self.err(format!("unknown identifier '{name}'"))
    }
}

/// A parsed scalar expression in the state variables and time.
#[derive(Clone)]
pub struct Expr {
    src: String,
    node: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let node = p.expr()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        Ok(Expr {
            src: src.to_string(),
            node,
        })
    }

    pub fn constant(v: f64) -> Self {
        Expr {
            src: format!("{v:?}"),
            node: Node::Num(v),
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.node.eval(x, 0.0)
    }

    pub fn eval_at(&self, x: &[f64], t: f64) -> f64 {
        self.node.eval(x, t)
    }

    /// Number of state components referenced (highest `xi` index).
    pub fn arity(&self) -> usize {
        self.node.max_var().map_or(0, |i| i + 1)
    }

    pub fn uses_time(&self) -> bool {
        self.node.uses_time()
    }

    /// Literal constant value, if the expression is a bare number.
    pub fn as_constant(&self) -> Option<f64> {
        match self.node {
            Node::Num(v) => Some(v),
            Node::Neg(ref a) => match **a {
                Node::Num(v) => Some(-v),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Rewrites identifiers of the source text (variables and function
    /// names) with `f`, keeping those for which it returns `None`.
    pub fn rewrite_idents(&self, f: impl Fn(&str) -> Option<String>) -> Result<Expr> {
        let mut out = String::with_capacity(self.src.len() + 16);
        let mut chars = self.src.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if c.is_ascii_alphabetic() || c == '_' {
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                let ident = &self.src[i..end];
                match f(ident) {
                    Some(r) => out.push_str(&r),
                    None => out.push_str(ident),
                }
            } else {
                out.push(c);
            }
        }
        Expr::parse(&out)
    }

    /// `amplitude * e(scale * t)`.
    pub fn rescaled(&self, amplitude: f64, scale: f64) -> Expr {
        let inner = self
            .rewrite_idents(|id| (id == "t").then(|| format!("({scale:?} * t)")))
            .expect("substituting a parenthesized term keeps the expression well formed");
        Expr::parse(&format!("{amplitude:?} * ({inner})")).expect("well formed")
    }

    /// The expression with every state variable `xi` replaced by `g(xi)`
    /// for a unary function name `g` of the language.
    pub fn wrap_vars(&self, g: &str) -> Result<Expr> {
        self.rewrite_idents(|id| {
            let is_var = id == "x"
                || (id.len() > 1
                    && id.starts_with('x')
                    && id[1..].chars().all(|c| c.is_ascii_digit()));
            is_var.then(|| format!("{g}({id})"))
        })
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.src)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.node == other.node
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Num(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => Expr::parse(&s).map_err(serde::de::Error::custom),
            Raw::Num(v) => Ok(Expr::constant(v)),
        }
    }
}

/// A vector of scalar expressions, one per output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VectorExpr(pub Vec<Expr>);

impl VectorExpr {
    pub fn parse<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        items
            .iter()
            .map(|s| Expr::parse(s.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(VectorExpr)
    }

    pub fn zeros(k: usize) -> Self {
        VectorExpr(vec![Expr::constant(0.0); k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Expr::is_zero)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.0) {
            *o = e.eval(x);
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|e| e.eval(x)).collect()
    }

    pub fn arity(&self) -> usize {
        self.0.iter().map(Expr::arity).max().unwrap_or(0)
    }
}

/// A row-major matrix of scalar expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixExpr(pub Vec<Vec<Expr>>);

impl MatrixExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        MatrixExpr(vec![vec![Expr::constant(0.0); cols]; rows])
    }

    pub fn rows(&self) -> usize {
        self.0.len()
    }

    pub fn cols(&self) -> usize {
        self.0.first().map_or(0, Vec::len)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(Expr::is_zero)
    }

    pub fn eval(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows(), self.cols(), |i, j| self.0[i][j].eval(x))
    }

    pub fn arity(&self) -> usize {
        self.0.iter().flatten().map(Expr::arity).max().unwrap_or(0)
    }

    pub fn is_rectangular(&self) -> bool {
        let c = self.cols();
        self.0.iter().all(|r| r.len() == c)
    }
}
