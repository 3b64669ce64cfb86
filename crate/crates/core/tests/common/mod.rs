//! Shared test helpers: random expression generation and independent
//! oracles for expression evaluation and point-in-polygon.

#![allow(dead_code)]

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;

pub const VARIABLES: [&str; 5] = ["a", "b", "c", "d", "e"];

pub fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    f()
}

#[derive(Debug, Clone)]
pub enum Expr {
    Var(&'static str),
    Num(String),
    Bin(&'static str, Box<Expr>, Box<Expr>),
}

pub fn precedence(op: &str) -> u8 {
    match op {
        "*" | "/" => 5,
        "+" | "-" => 4,
        ">" | "<" | ">=" | "<=" | "==" | "!=" => 3,
        "&" => 2,
        "|" => 1,
        other => panic!("not an operator: {other}"),
    }
}

fn literal(rng: &mut impl Rng) -> String {
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..20).to_string(),
        1 => format!("{}.{}", rng.gen_range(0..100), rng.gen_range(0..10)),
        2 => ["0", "1", "3", "22.1", "25.3", "0.5"]
            .choose(rng)
            .unwrap()
            .to_string(),
        _ => format!("{:.3}", rng.gen_range(0.0..50.0)),
    }
}

fn numeric(rng: &mut impl Rng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.35) {
        return if rng.gen_bool(0.6) {
            Expr::Var(VARIABLES.choose(rng).unwrap())
        } else {
            Expr::Num(literal(rng))
        };
    }
    let op = ["+", "-", "*", "/"].choose(rng).unwrap();
    Expr::Bin(
        op,
        Box::new(numeric(rng, depth - 1)),
        Box::new(numeric(rng, depth - 1)),
    )
}

fn boolean(rng: &mut impl Rng, depth: u32) -> Expr {
    if depth <= 1 || rng.gen_bool(0.4) {
        let op = [">", "<", ">=", "<=", "==", "!="].choose(rng).unwrap();
        let d = depth.saturating_sub(1).min(3);
        return Expr::Bin(op, Box::new(numeric(rng, d)), Box::new(numeric(rng, d)));
    }
    let op = ["&", "|"].choose(rng).unwrap();
    Expr::Bin(
        op,
        Box::new(boolean(rng, depth - 1)),
        Box::new(boolean(rng, depth - 1)),
    )
}

fn any_typed(rng: &mut impl Rng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.3) {
        return numeric(rng, 0);
    }
    let ops = [
        "+", "-", "*", "/", ">", "<", ">=", "<=", "==", "!=", "&", "|",
    ];
    let op = ops.choose(rng).unwrap();
    Expr::Bin(
        op,
        Box::new(any_typed(rng, depth - 1)),
        Box::new(any_typed(rng, depth - 1)),
    )
}

/// A random expression of depth at most `max_depth`: mostly well-typed
/// predicates, some numeric, some with arbitrary operand types.
pub fn random_expr(rng: &mut impl Rng, max_depth: u32) -> Expr {
    match rng.gen_range(0..10) {
        0 => numeric(rng, max_depth),
        1 => any_typed(rng, max_depth),
        _ => boolean(rng, max_depth),
    }
}

/// Renders with the brackets precedence requires, plus random redundant
/// ones and random spacing.
pub fn render(expr: &Expr, rng: &mut impl Rng) -> String {
    fn go(expr: &Expr, parent: u8, right: bool, rng: &mut impl Rng, out: &mut String) {
        match expr {
            Expr::Var(v) => out.push_str(v),
            Expr::Num(n) => out.push_str(n),
            Expr::Bin(op, l, r) => {
                let p = precedence(op);
                let needed = p < parent || (p == parent && right);
                let bracket = needed || rng.gen_bool(0.15);
                if bracket {
                    out.push('(');
                }
                go(l, p, false, rng, out);
                let space = if rng.gen_bool(0.7) { " " } else { "" };
                out.push_str(space);
                out.push_str(op);
                out.push_str(space);
                go(r, p, true, rng, out);
                if bracket {
                    out.push(')');
                }
            }
        }
    }
    let mut out = String::new();
    go(expr, 0, false, rng, &mut out);
    out
}

pub fn depth(expr: &Expr) -> u32 {
    match expr {
        Expr::Bin(_, l, r) => 1 + depth(l).max(depth(r)),
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleValue {
    Bool(bool),
    Num(f64),
}

/// Recursive-descent parser and evaluator, written independently of the
/// engine's shunting-yard pipeline.
pub struct Oracle<'a> {
    chars: Vec<char>,
    pos: usize,
    vars: &'a HashMap<String, f64>,
}

impl<'a> Oracle<'a> {
    pub fn eval(text: &str, vars: &'a HashMap<String, f64>) -> Result<OracleValue, String> {
        let mut p = Oracle {
            chars: text.chars().collect(),
            pos: 0,
            vars,
        };
        let v = p.or()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(format!("trailing input at {}", p.pos));
        }
        Ok(v)
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, symbol: &str) -> bool {
        self.skip_ws();
        let s: Vec<char> = symbol.chars().collect();
        if self.chars[self.pos..].starts_with(&s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn or(&mut self) -> Result<OracleValue, String> {
        let mut lhs = self.and()?;
        while self.eat("|") {
            let rhs = self.and()?;
            lhs = match (lhs, rhs) {
                (OracleValue::Bool(a), OracleValue::Bool(b)) => OracleValue::Bool(a || b),
                _ => return Err("| needs booleans".into()),
            };
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<OracleValue, String> {
        let mut lhs = self.comparison()?;
        while self.eat("&") {
            let rhs = self.comparison()?;
            lhs = match (lhs, rhs) {
                (OracleValue::Bool(a), OracleValue::Bool(b)) => OracleValue::Bool(a && b),
                _ => return Err("& needs booleans".into()),
            };
        }
        Ok(lhs)
    }

    fn comparison(&mut self) -> Result<OracleValue, String> {
        let mut lhs = self.additive()?;
        loop {
            // two-character operators first
            let op = [">=", "<=", "==", "!=", ">", "<"]
                .into_iter()
                .find(|op| self.eat(op));
            let Some(op) = op else { return Ok(lhs) };
            let rhs = self.additive()?;
            lhs = match (lhs, rhs) {
                (OracleValue::Num(a), OracleValue::Num(b)) => OracleValue::Bool(match op {
                    ">" => a > b,
                    "<" => a < b,
                    ">=" => a >= b,
                    "<=" => a <= b,
                    "==" => a == b,
                    _ => a != b,
                }),
                (OracleValue::Bool(a), OracleValue::Bool(b)) if op == "==" => {
                    OracleValue::Bool(a == b)
                }
                (OracleValue::Bool(a), OracleValue::Bool(b)) if op == "!=" => {
                    OracleValue::Bool(a != b)
                }
                _ => return Err(format!("{op} type mismatch")),
            };
        }
    }

    fn additive(&mut self) -> Result<OracleValue, String> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = if self.eat("+") {
                '+'
            } else if self.eat("-") {
                '-'
            } else {
                return Ok(lhs);
            };
            let rhs = self.multiplicative()?;
            lhs = match (lhs, rhs) {
                (OracleValue::Num(a), OracleValue::Num(b)) => {
                    OracleValue::Num(if op == '+' { a + b } else { a - b })
                }
                _ => return Err("arithmetic on booleans".into()),
            };
        }
    }

    fn multiplicative(&mut self) -> Result<OracleValue, String> {
        let mut lhs = self.primary()?;
        loop {
            let op = if self.eat("*") {
                '*'
            } else if self.eat("/") {
                '/'
            } else {
                return Ok(lhs);
            };
            let rhs = self.primary()?;
            lhs = match (lhs, rhs) {
                (OracleValue::Num(_), OracleValue::Num(b)) if op == '/' && b == 0.0 => {
                    return Err("division by zero".into())
                }
                (OracleValue::Num(a), OracleValue::Num(b)) => {
                    OracleValue::Num(if op == '*' { a * b } else { a / b })
                }
                _ => return Err("arithmetic on booleans".into()),
            };
        }
    }

    fn primary(&mut self) -> Result<OracleValue, String> {
        if self.eat("(") {
            let v = self.or()?;
            if !self.eat(")") {
                return Err("missing )".into());
            }
            return Ok(v);
        }
        self.skip_ws();
        let start = self.pos;
        let c = *self.chars.get(self.pos).ok_or("unexpected end")?;
        if c.is_ascii_digit() || c == '.' {
            while self
                .chars
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_digit() || *c == '.')
            {
                self.pos += 1;
            }
            let s: String = self.chars[start..self.pos].iter().collect();
            return s.parse().map(OracleValue::Num).map_err(|e| e.to_string());
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while self
                .chars
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_')
            {
                self.pos += 1;
            }
            let s: String = self.chars[start..self.pos].iter().collect();
            return self
                .vars
                .get(&s)
                .copied()
                .map(OracleValue::Num)
                .ok_or(format!("unknown variable {s}"));
        }
        Err(format!("unexpected {c}"))
    }
}

/// Crossing-number point-in-polygon (the classic PNPOLY loop).
pub fn pnpoly(x: f64, y: f64, polygon: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = polygon.len() - 1;
    for i in 0..polygon.len() {
        let (xi, yi) = polygon[i];
        let (xj, yj) = polygon[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Distance from a point to the polygon boundary.
pub fn boundary_distance(x: f64, y: f64, polygon: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..polygon.len() {
        let (ax, ay) = polygon[i];
        let (bx, by) = polygon[(i + 1) % polygon.len()];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((x - ax) * dx + (y - ay) * dy) / len2).clamp(0.0, 1.0)
        };
        let (px, py) = (ax + t * dx, ay + t * dy);
        best = best.min(((x - px).powi(2) + (y - py).powi(2)).sqrt());
    }
    best
}
