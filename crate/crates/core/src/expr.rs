//! Scalar expressions in `t`, `x`, `y` for boundary data and gaps.
//!
//! Supports `+ - * / ^`, parentheses, `pi`, and the functions `sin`, `cos`,
//! `exp`, `sqrt`, `abs`, `min`, `max` and the Heaviside step `H` (with
//! `H(0) = 0`). A product with an exactly zero factor is zero, so
//! `sqrt(1 - t)*H(1 - t)` is defined for all `t`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Num(f64),
    T,
    X,
    Y,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Heaviside,
    Min,
    Max,
}

#[derive(Clone, PartialEq)]
pub struct Expr {
    src: String,
    root: Node,
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

impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Expr::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Expr(format!("{msg} at offset {} in '{}'", self.pos, String::from_utf8_lossy(self.s)))
    }

    fn skip(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip();
        self.s.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        let base = self.atom()?;
        if self.eat(b'^') {
            return Ok(Node::Pow(Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.s.len() {
                    let c = self.s[self.pos];
                    let exp_sign = (c == b'-' || c == b'+') && matches!(self.s[self.pos - 1], b'e' | b'E');
                    if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
                let txt = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
                txt.parse::<f64>().map(Node::Num).map_err(|_| self.err("bad number"))
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap().to_string();
                if self.eat(b'(') {
                    let func = match name.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "abs" => Func::Abs,
                        "H" | "heaviside" => Func::Heaviside,
                        "min" => Func::Min,
                        "max" => Func::Max,
                        _ => return Err(self.err(&format!("unknown function '{name}'"))),
                    };
                    let mut args = vec![self.expr()?];
                    while self.eat(b',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    let want = if matches!(func, Func::Min | Func::Max) { 2 } else { 1 };
                    if args.len() != want {
                        return Err(self.err(&format!("'{name}' takes {want} argument(s)")));
                    }
                    return Ok(Node::Call(func, args));
                }
                match name.as_str() {
                    "t" => Ok(Node::T),
                    "x" => Ok(Node::X),
                    "y" => Ok(Node::Y),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    _ => Err(self.err(&format!("unknown variable '{name}'"))),
                }
            }
            _ => Err(self.err("unexpected token")),
        }
    }
}

fn eval(n: &Node, t: f64, x: f64, y: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::T => t,
        Node::X => x,
        Node::Y => y,
        Node::Neg(a) => -eval(a, t, x, y),
        Node::Add(a, b) => eval(a, t, x, y) + eval(b, t, x, y),
        Node::Sub(a, b) => eval(a, t, x, y) - eval(b, t, x, y),
        Node::Mul(a, b) => {
            let u = eval(a, t, x, y);
            let v = eval(b, t, x, y);
            if u == 0.0 || v == 0.0 {
                0.0
            } else {
                u * v
            }
        }
        Node::Div(a, b) => eval(a, t, x, y) / eval(b, t, x, y),
        Node::Pow(a, b) => eval(a, t, x, y).powf(eval(b, t, x, y)),
        Node::Call(f, args) => {
            let u = eval(&args[0], t, x, y);
            match f {
                Func::Sin => u.sin(),
                Func::Cos => u.cos(),
                Func::Exp => u.exp(),
                Func::Sqrt => u.sqrt(),
                Func::Abs => u.abs(),
                Func::Heaviside => {
                    if u > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                Func::Min => u.min(eval(&args[1], t, x, y)),
                Func::Max => u.max(eval(&args[1], t, x, y)),
            }
        }
    }
}

fn collect_steps<'a>(n: &'a Node, out: &mut Vec<&'a Node>) {
    match n {
        Node::Num(_) | Node::T | Node::X | Node::Y => {}
        Node::Neg(a) => collect_steps(a, out),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            collect_steps(a, out);
            collect_steps(b, out);
        }
        Node::Call(f, args) => {
            if matches!(f, Func::Heaviside | Func::Abs | Func::Min | Func::Max) {
                out.push(n);
            }
            for a in args {
                collect_steps(a, out);
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser { s: src.as_bytes(), pos: 0 };
        let root = p.expr()?;
        if p.peek().is_some() {
            return Err(p.err("trailing input"));
        }
        Ok(Expr { src: src.to_string(), root })
    }

    pub fn constant(v: f64) -> Self {
        Expr { src: format!("{v:e}"), root: Node::Num(v) }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        eval(&self.root, t, x, y)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Num(v) if v == 0.0)
    }

    /// Times in `(t0, t1)` where a step, kink or switch argument changes sign
    /// at the point `(x, y)`, located by sampling and bisection.
    pub fn time_breakpoints(&self, t0: f64, t1: f64, x: f64, y: f64) -> Vec<f64> {
        let mut nodes = Vec::new();
        collect_steps(&self.root, &mut nodes);
        let mut out = Vec::new();
        const SAMPLES: usize = 16;
        for n in nodes {
            let Node::Call(f, args) = n else { continue };
            let arg = |t: f64| match f {
                Func::Min | Func::Max => eval(&args[0], t, x, y) - eval(&args[1], t, x, y),
                _ => eval(&args[0], t, x, y),
            };
            let mut ta = t0;
            let mut fa = arg(ta);
            for k in 1..=SAMPLES {
                let tb = t0 + (t1 - t0) * k as f64 / SAMPLES as f64;
                let fb = arg(tb);
                if fa == 0.0 && ta > t0 {
                    out.push(ta);
                } else if fa * fb < 0.0 {
                    let (mut lo, mut hi, mut flo) = (ta, tb, fa);
                    for _ in 0..200 {
                        let m = 0.5 * (lo + hi);
                        let fm = arg(m);
                        if (fm > 0.0) == (flo > 0.0) && fm != 0.0 {
                            lo = m;
                            flo = fm;
                        } else {
                            hi = m;
                        }
                        if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                            break;
                        }
                    }
                    out.push(0.5 * (lo + hi));
                }
                ta = tb;
                fa = fb;
            }
        }
        out.retain(|&t| t > t0 && t < t1);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        out
    }
}
