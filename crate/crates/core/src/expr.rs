//! Target functions `φ(x, y)` written as expressions, e.g. `x^2+y^2` or
//! `sin(x)*cos(y+1)`.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//! func  := sin | cos | exp | log | sqrt
//! ```
//!
//! Exponents must evaluate to constants. Values and derivatives up to second
//! order are computed with forward-mode jets.

use std::fmt;

use crate::poly::Poly2;

pub const MAX_INPUT_LEN: usize = 4096;
pub const MAX_DEPTH: usize = 64;
/// Largest integer exponent expanded when converting to a polynomial.
pub const MAX_POLY_EXPONENT: u32 = 32;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ExprError {
    #[error("empty expression")]
    Empty,
    #[error("expression longer than {MAX_INPUT_LEN} bytes")]
    TooLong,
    #[error("nesting deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("unexpected {found} at offset {pos}")]
    Unexpected { pos: usize, found: String },
    #[error("unknown identifier '{name}' at offset {pos}")]
    UnknownIdent { pos: usize, name: String },
    #[error("invalid number at offset {pos}")]
    BadNumber { pos: usize },
    #[error("exponent at offset {pos} must be a constant")]
    NonConstantExponent { pos: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    Y,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

/// Value, gradient and Hessian of a function of `(x, y)` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub dx: f64,
    pub dy: f64,
    pub dxx: f64,
    pub dxy: f64,
    pub dyy: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Self {
        Self { v, dx: 0.0, dy: 0.0, dxx: 0.0, dxy: 0.0, dyy: 0.0 }
    }

    pub fn x(x: f64) -> Self {
        Self { dx: 1.0, ..Self::constant(x) }
    }

    pub fn y(y: f64) -> Self {
        Self { dy: 1.0, ..Self::constant(y) }
    }

    pub fn grad(&self) -> [f64; 2] {
        [self.dx, self.dy]
    }

    pub fn hessian(&self) -> [[f64; 2]; 2] {
        [[self.dxx, self.dxy], [self.dxy, self.dyy]]
    }

    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            dx: self.dx + o.dx,
            dy: self.dy + o.dy,
            dxx: self.dxx + o.dxx,
            dxy: self.dxy + o.dxy,
            dyy: self.dyy + o.dyy,
        }
    }

    fn scale(self, a: f64) -> Self {
        Self { v: a * self.v, dx: a * self.dx, dy: a * self.dy, dxx: a * self.dxx, dxy: a * self.dxy, dyy: a * self.dyy }
    }

    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            dx: self.dx * o.v + self.v * o.dx,
            dy: self.dy * o.v + self.v * o.dy,
            dxx: self.dxx * o.v + 2.0 * self.dx * o.dx + self.v * o.dxx,
            dxy: self.dxy * o.v + self.dx * o.dy + self.dy * o.dx + self.v * o.dxy,
            dyy: self.dyy * o.v + 2.0 * self.dy * o.dy + self.v * o.dyy,
        }
    }

    /// `f(self)` given `f`, `f'` and `f''` at `self.v`.
    fn chain(self, f: f64, f1: f64, f2: f64) -> Self {
        Self {
            v: f,
            dx: f1 * self.dx,
            dy: f1 * self.dy,
            dxx: f2 * self.dx * self.dx + f1 * self.dxx,
            dxy: f2 * self.dx * self.dy + f1 * self.dxy,
            dyy: f2 * self.dy * self.dy + f1 * self.dyy,
        }
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }

    fn powf(self, e: f64) -> Self {
        if e == 0.0 {
            return Self::constant(1.0);
        }
        let a = self.v;
        let (f, f1, f2) = if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
            let k = e as i32;
            (a.powi(k), e * a.powi(k - 1), e * (e - 1.0) * a.powi(k - 2))
        } else {
            (a.powf(e), e * a.powf(e - 1.0), e * (e - 1.0) * a.powf(e - 2.0))
        };
        self.chain(f, f1, if e == 1.0 { 0.0 } else { f2 })
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        if src.len() > MAX_INPUT_LEN {
            return Err(ExprError::TooLong);
        }
        let mut p = Parser { s: src.as_bytes(), pos: 0, depth: 0 };
        p.skip_ws();
        if p.pos == p.s.len() {
            return Err(ExprError::Empty);
        }
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.s.len() {
            return Err(p.unexpected());
        }
        Ok(e)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::Y => y,
            Expr::Neg(a) => -a.eval(x, y),
            Expr::Add(a, b) => a.eval(x, y) + b.eval(x, y),
            Expr::Sub(a, b) => a.eval(x, y) - b.eval(x, y),
            Expr::Mul(a, b) => a.eval(x, y) * b.eval(x, y),
            Expr::Div(a, b) => a.eval(x, y) / b.eval(x, y),
            Expr::Pow(a, e) => {
                let v = a.eval(x, y);
                if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
                    v.powi(*e as i32)
                } else {
                    v.powf(*e)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, y);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Log => v.ln(),
                    Func::Sqrt => v.sqrt(),
                }
            }
        }
    }

    pub fn jet(&self, x: f64, y: f64) -> Jet2 {
        match self {
            Expr::Const(c) => Jet2::constant(*c),
            Expr::X => Jet2::x(x),
            Expr::Y => Jet2::y(y),
            Expr::Neg(a) => a.jet(x, y).scale(-1.0),
            Expr::Add(a, b) => a.jet(x, y).add(b.jet(x, y)),
            Expr::Sub(a, b) => a.jet(x, y).add(b.jet(x, y).scale(-1.0)),
            Expr::Mul(a, b) => a.jet(x, y).mul(b.jet(x, y)),
            Expr::Div(a, b) => a.jet(x, y).mul(b.jet(x, y).recip()),
            Expr::Pow(a, e) => a.jet(x, y).powf(*e),
            Expr::Call(f, a) => {
                let j = a.jet(x, y);
                let v = j.v;
                match f {
                    Func::Sin => j.chain(v.sin(), v.cos(), -v.sin()),
                    Func::Cos => j.chain(v.cos(), -v.sin(), -v.cos()),
                    Func::Exp => j.chain(v.exp(), v.exp(), v.exp()),
                    Func::Log => j.chain(v.ln(), 1.0 / v, -1.0 / (v * v)),
                    Func::Sqrt => {
                        let s = v.sqrt();
                        j.chain(s, 0.5 / s, -0.25 / (s * v))
                    }
                }
            }
        }
    }

    /// Exact expansion when the expression is a polynomial in `x, y`.
    pub fn to_poly(&self) -> Option<Poly2> {
        match self {
            Expr::Const(c) => Some(Poly2::constant(*c)),
            Expr::X => Some(Poly2::u()),
            Expr::Y => Some(Poly2::v()),
            Expr::Neg(a) => Some(a.to_poly()?.scale(-1.0)),
            Expr::Add(a, b) => Some(a.to_poly()?.add(&b.to_poly()?)),
            Expr::Sub(a, b) => Some(a.to_poly()?.sub(&b.to_poly()?)),
            Expr::Mul(a, b) => Some(a.to_poly()?.mul(&b.to_poly()?)),
            Expr::Div(a, b) => match b.constant_value() {
                Some(c) if c != 0.0 => Some(a.to_poly()?.scale(1.0 / c)),
                _ => None,
            },
            Expr::Pow(a, e) => {
                if *e >= 0.0 && e.fract() == 0.0 && *e <= MAX_POLY_EXPONENT as f64 {
                    Some(a.to_poly()?.pow(*e as u32))
                } else {
                    None
                }
            }
            Expr::Call(..) => self.constant_value().map(Poly2::constant),
        }
    }

    /// Value if the expression does not depend on `x` or `y`.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::X | Expr::Y => None,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => {
                a.constant_value()?;
                Some(self.eval(0.0, 0.0))
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.constant_value()?;
                b.constant_value()?;
                Some(self.eval(0.0, 0.0))
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::X => f.write_str("x"),
            Expr::Y => f.write_str("y"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a}+{b})"),
            Expr::Sub(a, b) => write!(f, "({a}-{b})"),
            Expr::Mul(a, b) => write!(f, "({a}*{b})"),
            Expr::Div(a, b) => write!(f, "({a}/{b})"),
            Expr::Pow(a, e) => write!(f, "({a}^{e})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Log => "log",
                    Func::Sqrt => "sqrt",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn unexpected(&self) -> ExprError {
        let found = match self.s.get(self.pos) {
            None => "end of input".to_string(),
            Some(c) if c.is_ascii_graphic() => format!("'{}'", *c as char),
            Some(c) => format!("byte 0x{c:02x}"),
        };
        ExprError::Unexpected { pos: self.pos, found }
    }

    fn enter(&mut self) -> Result<(), ExprError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(ExprError::TooDeep)
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == b'+' { Expr::Add(lhs.into(), rhs.into()) } else { Expr::Sub(lhs.into(), rhs.into()) };
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == b'*' { Expr::Mul(lhs.into(), rhs.into()) } else { Expr::Div(lhs.into(), rhs.into()) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        self.enter()?;
        let e = if self.peek() == Some(b'-') {
            self.pos += 1;
            Expr::Neg(self.unary()?.into())
        } else {
            self.power()?
        };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let at = self.pos;
            let exp = self.unary()?;
            let e = exp.constant_value().ok_or(ExprError::NonConstantExponent { pos: at })?;
            return Ok(Expr::Pow(base.into(), e));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
                let func = match name {
                    "x" => return Ok(Expr::X),
                    "y" => return Ok(Expr::Y),
                    "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    "log" => Func::Log,
                    "sqrt" => Func::Sqrt,
                    _ => return Err(ExprError::UnknownIdent { pos: start, name: name.to_string() }),
                };
                if self.peek() != Some(b'(') {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                let arg = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.unexpected());
                }
                self.pos += 1;
                Ok(Expr::Call(func, arg.into()))
            }
            _ => Err(self.unexpected()),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_digit() || self.s[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.s.len() && matches!(self.s[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.s.len() && matches!(self.s[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.s[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Expr::Const).map_err(|_| ExprError::BadNumber { pos: start })
    }
}
