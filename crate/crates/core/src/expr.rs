//! Payoff and driver expressions.
//!
//! A closed arithmetic grammar over the state `x` (`x1`, `x2` in two
//! dimensions), the value `y` and time `t`:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := factor (("*" | "/") factor)*
//! factor := ["-"] atom
//! atom   := number | "x" | "x1" | "x2" | "y" | "t"
//!         | func "(" expr ("," expr)* ")" | "(" expr ")"
//! func   := max | min | exp | log | abs | pow | sin | cos
//! ```
//!
//! `pow` takes an integer literal exponent. `max` and `min` accept two or
//! more arguments. Whitespace is insignificant.

use std::fmt;

use crate::error::{Error, Result};

/// Variables an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    /// State component (0-based). `x` and `x1` both denote component 0.
    X(usize),
    Y,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Abs,
    Sin,
    Cos,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldExpr {
    Num(f64),
    Var(Var),
    Neg(Box<FieldExpr>),
    Add(Box<FieldExpr>, Box<FieldExpr>),
    Sub(Box<FieldExpr>, Box<FieldExpr>),
    Mul(Box<FieldExpr>, Box<FieldExpr>),
    Div(Box<FieldExpr>, Box<FieldExpr>),
    Max(Vec<FieldExpr>),
    Min(Vec<FieldExpr>),
    Pow(Box<FieldExpr>, i32),
    Call(Func, Box<FieldExpr>),
}

/// Evaluation point. Missing entries make references to them an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct Point<'a> {
    pub t: Option<f64>,
    pub x: &'a [f64],
    pub y: Option<f64>,
}

impl<'a> Point<'a> {
    pub fn x(x: &'a [f64]) -> Self {
        Point { t: None, x, y: None }
    }

    pub fn txy(t: f64, x: &'a [f64], y: f64) -> Self {
        Point {
            t: Some(t),
            x,
            y: Some(y),
        }
    }
}

impl FieldExpr {
    pub fn parse(text: &str) -> Result<FieldExpr> {
        let mut p = Parser::new(text);
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.error(&["+", "-", "*", "/", "end of input"]));
        }
        Ok(e)
    }

    pub fn num(v: f64) -> FieldExpr {
        FieldExpr::Num(v)
    }

    pub fn x() -> FieldExpr {
        FieldExpr::Var(Var::X(0))
    }

    pub fn y() -> FieldExpr {
        FieldExpr::Var(Var::Y)
    }

    pub fn zero() -> FieldExpr {
        FieldExpr::Num(0.0)
    }

    /// Evaluates the expression at a point in double precision.
    pub fn eval(&self, p: &Point<'_>) -> Result<f64> {
        let v = match self {
            FieldExpr::Num(v) => *v,
            FieldExpr::Var(var) => match *var {
                Var::X(k) => *p
                    .x
                    .get(k)
                    .ok_or_else(|| Error::UnboundVariable(var_name(*var)))?,
                Var::Y => p.y.ok_or_else(|| Error::UnboundVariable("y".into()))?,
                Var::T => p.t.ok_or_else(|| Error::UnboundVariable("t".into()))?,
            },
            FieldExpr::Neg(a) => -a.eval(p)?,
            FieldExpr::Add(a, b) => a.eval(p)? + b.eval(p)?,
            FieldExpr::Sub(a, b) => a.eval(p)? - b.eval(p)?,
            FieldExpr::Mul(a, b) => a.eval(p)? * b.eval(p)?,
            FieldExpr::Div(a, b) => {
                let num = a.eval(p)?;
                let den = b.eval(p)?;
                if den == 0.0 {
                    return Err(Error::Domain("division by zero".into()));
                }
                num / den
            }
            FieldExpr::Max(args) => {
                let mut m = f64::NEG_INFINITY;
                for a in args {
                    m = m.max(a.eval(p)?);
                }
                m
            }
            FieldExpr::Min(args) => {
                let mut m = f64::INFINITY;
                for a in args {
                    m = m.min(a.eval(p)?);
                }
                m
            }
            FieldExpr::Pow(a, k) => {
                let base = a.eval(p)?;
                if base == 0.0 && *k < 0 {
                    return Err(Error::Domain("zero raised to a negative power".into()));
                }
                base.powi(*k)
            }
            FieldExpr::Call(f, a) => {
                let v = a.eval(p)?;
                match f {
                    Func::Exp => v.exp(),
                    Func::Log => {
                        if v <= 0.0 {
                            return Err(Error::Domain(format!("log of nonpositive value {v}")));
                        }
                        v.ln()
                    }
                    Func::Abs => v.abs(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite result in `{self}`")));
        }
        Ok(v)
    }

    /// Convenience: evaluate at a one-dimensional state with no value or time.
    pub fn eval_x(&self, x: f64) -> Result<f64> {
        self.eval(&Point::x(&[x]))
    }

    pub fn uses(&self, var: Var) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if let FieldExpr::Var(v) = e {
                if *v == var {
                    found = true;
                }
            }
        });
        found
    }

    /// Highest state component referenced, plus one.
    pub fn state_arity(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let FieldExpr::Var(Var::X(k)) = e {
                n = n.max(k + 1);
            }
        });
        n
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FieldExpr::Num(v) if *v == 0.0)
    }

    /// Sub-expressions whose sign changes locate kinks of the expression:
    /// `a - b` for every pair of `max`/`min` arguments and `a` for `abs(a)`.
    pub fn switch_functions(&self) -> Vec<FieldExpr> {
        let mut out = Vec::new();
        self.visit(&mut |e| match e {
            FieldExpr::Max(args) | FieldExpr::Min(args) => {
                for i in 0..args.len() {
                    for j in i + 1..args.len() {
                        out.push(FieldExpr::Sub(
                            Box::new(args[i].clone()),
                            Box::new(args[j].clone()),
                        ));
                    }
                }
            }
            FieldExpr::Call(Func::Abs, a) => out.push((**a).clone()),
            _ => {}
        });
        out
    }

    fn visit(&self, f: &mut dyn FnMut(&FieldExpr)) {
        f(self);
        match self {
            FieldExpr::Num(_) | FieldExpr::Var(_) => {}
            FieldExpr::Neg(a) | FieldExpr::Pow(a, _) | FieldExpr::Call(_, a) => a.visit(f),
            FieldExpr::Add(a, b)
            | FieldExpr::Sub(a, b)
            | FieldExpr::Mul(a, b)
            | FieldExpr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            FieldExpr::Max(args) | FieldExpr::Min(args) => {
                for a in args {
                    a.visit(f);
                }
            }
        }
    }

    /// Replaces every occurrence of `x` (component 0) by `sub`.
    pub fn substitute_x(&self, sub: &FieldExpr) -> FieldExpr {
        let rec = |e: &FieldExpr| Box::new(e.substitute_x(sub));
        match self {
            FieldExpr::Var(Var::X(0)) => sub.clone(),
            FieldExpr::Num(_) | FieldExpr::Var(_) => self.clone(),
            FieldExpr::Neg(a) => FieldExpr::Neg(rec(a)),
            FieldExpr::Add(a, b) => FieldExpr::Add(rec(a), rec(b)),
            FieldExpr::Sub(a, b) => FieldExpr::Sub(rec(a), rec(b)),
            FieldExpr::Mul(a, b) => FieldExpr::Mul(rec(a), rec(b)),
            FieldExpr::Div(a, b) => FieldExpr::Div(rec(a), rec(b)),
            FieldExpr::Max(args) => FieldExpr::Max(args.iter().map(|a| a.substitute_x(sub)).collect()),
            FieldExpr::Min(args) => FieldExpr::Min(args.iter().map(|a| a.substitute_x(sub)).collect()),
            FieldExpr::Pow(a, k) => FieldExpr::Pow(rec(a), *k),
            FieldExpr::Call(f, a) => FieldExpr::Call(*f, rec(a)),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            FieldExpr::Add(..) | FieldExpr::Sub(..) => 1,
            FieldExpr::Mul(..) | FieldExpr::Div(..) => 2,
            FieldExpr::Neg(_) => 3,
            _ => 4,
        }
    }
}

fn var_name(v: Var) -> String {
    match v {
        Var::X(0) => "x".into(),
        Var::X(k) => format!("x{}", k + 1),
        Var::Y => "y".into(),
        Var::T => "t".into(),
    }
}

/// Canonical printer: minimal parentheses, left-associative binary operators.
/// `parse(e.to_string()) == e` for every parsed expression.
impl fmt::Display for FieldExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &FieldExpr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        fn args(f: &mut fmt::Formatter<'_>, name: &str, a: &[FieldExpr]) -> fmt::Result {
            write!(f, "{name}(")?;
            for (i, e) in a.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{e}")?;
            }
            write!(f, ")")
        }
        match self {
            FieldExpr::Num(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            FieldExpr::Var(v) => write!(f, "{}", var_name(*v)),
            FieldExpr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 4)
            }
            FieldExpr::Add(a, b) | FieldExpr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, "{}", if matches!(self, FieldExpr::Add(..)) { "+" } else { "-" })?;
                child(f, b, 2)
            }
            FieldExpr::Mul(a, b) | FieldExpr::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, "{}", if matches!(self, FieldExpr::Mul(..)) { "*" } else { "/" })?;
                child(f, b, 3)
            }
            FieldExpr::Max(a) => args(f, "max", a),
            FieldExpr::Min(a) => args(f, "min", a),
            FieldExpr::Pow(a, k) => write!(f, "pow({a},{k})"),
            FieldExpr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

impl std::str::FromStr for FieldExpr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FieldExpr::parse(s)
    }
}

impl serde::Serialize for FieldExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for FieldExpr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FieldExpr::parse(&s).map_err(serde::de::Error::custom)
    }
}

struct Parser<'s> {
    src: &'s [u8],
    pos: usize,
}

impl<'s> Parser<'s> {
    fn new(text: &'s str) -> Self {
        Parser {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn error(&mut self, expected: &[&str]) -> Error {
        self.skip_ws();
        let found = match self.src.get(self.pos) {
            None => "end of input".to_string(),
            Some(_) => {
                let rest = String::from_utf8_lossy(&self.src[self.pos..]);
                let tok: String = rest.chars().take(8).collect();
                format!("`{tok}`")
            }
        };
        Error::Parse {
            position: self.pos,
            found,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<FieldExpr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = FieldExpr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = FieldExpr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<FieldExpr> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat(b'*') {
                lhs = FieldExpr::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat(b'/') {
                lhs = FieldExpr::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<FieldExpr> {
        if self.eat(b'-') {
            Ok(FieldExpr::Neg(Box::new(self.atom()?)))
        } else {
            self.atom()
        }
    }

    fn atom(&mut self) -> Result<FieldExpr> {
        const ATOM: &[&str] = &["number", "x", "x1", "x2", "y", "t", "function", "("];
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error(&[")"]));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                match ident {
                    "x" | "x1" => Ok(FieldExpr::Var(Var::X(0))),
                    "x2" => Ok(FieldExpr::Var(Var::X(1))),
                    "y" => Ok(FieldExpr::Var(Var::Y)),
                    "t" => Ok(FieldExpr::Var(Var::T)),
                    "max" | "min" | "exp" | "log" | "abs" | "pow" | "sin" | "cos" => {
                        self.call(ident, start)
                    }
                    _ => {
                        self.pos = start;
                        Err(self.error(ATOM))
                    }
                }
            }
            _ => Err(self.error(ATOM)),
        }
    }

    fn call(&mut self, name: &str, start: usize) -> Result<FieldExpr> {
        if !self.eat(b'(') {
            return Err(self.error(&["("]));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.error(&[",", ")"]));
        }
        let nargs = args.len();
        let arity_error = |expected: &str| Error::Parse {
            position: start,
            found: format!("{name} with {nargs} argument(s)"),
            expected: vec![expected.to_string()],
        };
        let unary = |f: Func, mut args: Vec<FieldExpr>| -> Result<FieldExpr> {
            if args.len() != 1 {
                return Err(arity_error("exactly one argument"));
            }
            Ok(FieldExpr::Call(f, Box::new(args.pop().unwrap())))
        };
        match name {
            "max" | "min" => {
                if args.len() < 2 {
                    return Err(arity_error("at least two arguments"));
                }
                Ok(if name == "max" {
                    FieldExpr::Max(args)
                } else {
                    FieldExpr::Min(args)
                })
            }
            "pow" => {
                if args.len() != 2 {
                    return Err(arity_error("two arguments"));
                }
                let k = integer_literal(&args[1]).ok_or_else(|| Error::Parse {
                    position: start,
                    found: format!("exponent `{}`", args[1]),
                    expected: vec!["integer literal exponent".into()],
                })?;
                let base = args.swap_remove(0);
                Ok(FieldExpr::Pow(Box::new(base), k))
            }
            "exp" => unary(Func::Exp, args),
            "log" => unary(Func::Log, args),
            "abs" => unary(Func::Abs, args),
            "sin" => unary(Func::Sin, args),
            "cos" => unary(Func::Cos, args),
            _ => unreachable!("caller matched the function table"),
        }
    }

    fn number(&mut self) -> Result<FieldExpr> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.error(&["number"]));
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(FieldExpr::Num).map_err(|_| {
            self.pos = start;
            self.error(&["number"])
        })
    }
}

fn integer_literal(e: &FieldExpr) -> Option<i32> {
    match e {
        FieldExpr::Num(v) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => Some(*v as i32),
        FieldExpr::Neg(a) => integer_literal(a).map(|k| -k),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64) -> f64 {
        FieldExpr::parse(s).unwrap().eval_x(x).unwrap()
    }

    #[test]
    fn payoff_examples() {
        assert_eq!(ev("max(x-100,0)", 105.0), 5.0);
        assert_eq!(ev("x", -3.0), -3.0);
        assert_eq!(ev("max(x-90,0)-2*max(x-100,0)+max(x-110,0)", 100.0), 10.0);
        assert_eq!(ev("x*x", 3.0), 9.0);
        assert_eq!(ev("exp(x)", 0.0), 1.0);
    }

    #[test]
    fn value_variable() {
        let e = FieldExpr::parse("y").unwrap();
        let p = Point {
            t: None,
            x: &[],
            y: Some(2.5),
        };
        assert_eq!(e.eval(&p).unwrap(), 2.5);
    }

    #[test]
    fn precedence_and_unary_minus() {
        assert_eq!(ev("2+3*x", 2.0), 8.0);
        assert_eq!(ev("-x*2", 3.0), -6.0);
        assert_eq!(ev("10-4-3", 0.0), 3.0);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("pow(x,3)", 2.0), 8.0);
        assert_eq!(ev("pow(x,-1)", 4.0), 0.25);
        assert_eq!(ev("min(x, 1, -2)", 0.0), -2.0);
        assert_eq!(ev(" abs( - x ) ", 1.5), 1.5);
    }

    #[test]
    fn errors_carry_position_and_expectations() {
        match FieldExpr::parse("max(x-1,").unwrap_err() {
            Error::Parse { position, expected, .. } => {
                assert_eq!(position, 8);
                assert!(expected.contains(&"number".to_string()));
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(matches!(FieldExpr::parse("foo(x)"), Err(Error::Parse { position: 0, .. })));
        assert!(matches!(FieldExpr::parse("x +"), Err(Error::Parse { .. })));
        assert!(matches!(FieldExpr::parse("pow(x, 1.5)"), Err(Error::Parse { .. })));
        assert!(matches!(FieldExpr::parse("exp(x, 1)"), Err(Error::Parse { .. })));
        assert!(matches!(FieldExpr::parse("max(x)"), Err(Error::Parse { .. })));
        assert!(matches!(FieldExpr::parse("(x"), Err(Error::Parse { .. })));
        assert!(matches!(FieldExpr::parse("x y"), Err(Error::Parse { .. })));
    }

    #[test]
    fn evaluation_errors() {
        let e = FieldExpr::parse("log(x)").unwrap();
        assert!(matches!(e.eval_x(0.0), Err(Error::Domain(_))));
        let e = FieldExpr::parse("y+1").unwrap();
        assert!(matches!(e.eval_x(0.0), Err(Error::UnboundVariable(v)) if v == "y"));
        let e = FieldExpr::parse("x2").unwrap();
        assert!(matches!(e.eval_x(0.0), Err(Error::UnboundVariable(v)) if v == "x2"));
        let e = FieldExpr::parse("1/x").unwrap();
        assert!(matches!(e.eval_x(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn canonical_printing() {
        let cases = [
            ("max(x-90,0)-2*max(x-100,0)+max(x-110,0)", "max(x-90,0)-2*max(x-100,0)+max(x-110,0)"),
            ("x-(y-1)", "x-(y-1)"),
            ("(x-y)-1", "x-y-1"),
            ("x/(2*y)", "x/(2*y)"),
            ("-(x+1)", "-(x+1)"),
            ("- 3 * x", "-3*x"),
            ("x1 * x2", "x*x2"),
            ("0.1*cos(y)", "0.1*cos(y)"),
        ];
        for (src, want) in cases {
            let e = FieldExpr::parse(src).unwrap();
            assert_eq!(e.to_string(), want);
            assert_eq!(FieldExpr::parse(&e.to_string()).unwrap(), e);
        }
    }

    #[test]
    fn switch_functions_cover_kinks() {
        let e = FieldExpr::parse("max(x-1,0)+abs(x+2)").unwrap();
        let s = e.switch_functions();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].eval_x(1.0).unwrap(), 0.0);
        assert_eq!(s[1].eval_x(-2.0).unwrap(), 0.0);
    }

    #[test]
    fn variable_queries() {
        let e = FieldExpr::parse("-0.05*y+0.1*cos(y)").unwrap();
        assert!(e.uses(Var::Y));
        assert!(!e.uses(Var::X(0)));
        assert_eq!(FieldExpr::parse("x2+x").unwrap().state_arity(), 2);
        assert!(FieldExpr::parse("0").unwrap().is_zero());
    }
}
