//! Arithmetic expressions on the right-hand side of a rule.
//!
//! Grammar (usual precedence, left associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | 'true' | 'false' | string | ident | call | '(' expr ')'
//! call   := ident '(' expr (',' expr)* ')'
//! ```

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Str(String),
    Ident(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    FloorSqrt,
    Round,
    Floor,
    Ceil,
    Max,
    Min,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "floor_sqrt" => Func::FloorSqrt,
            "round" => Func::Round,
            "floor" => Func::Floor,
            "ceil" => Func::Ceil,
            "max" => Func::Max,
            "min" => Func::Min,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }

    pub fn apply(self, args: &[f64]) -> f64 {
        match self {
            Func::FloorSqrt => floor_sqrt(args[0]),
            Func::Round => round_half_up(args[0]),
            Func::Floor => args[0].floor(),
            Func::Ceil => args[0].ceil(),
            Func::Max => args[0].max(args[1]),
            Func::Min => args[0].min(args[1]),
        }
    }
}

/// Integer square root of `floor(x)`; negative and non-finite inputs give NaN.
pub fn floor_sqrt(x: f64) -> f64 {
    if !x.is_finite() || x < 0.0 {
        return f64::NAN;
    }
    (x.floor() as u64).isqrt() as f64
}

/// Rounds halves towards positive infinity (5.5 -> 6, -5.5 -> -5).
pub fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Str(s) => write!(f, "{s:?}"),
            Expr::Ident(s) => f.write_str(s),
            Expr::Neg(e) => write!(f, "-{e}"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({l} {sym} {r})")
            }
            Expr::Call(func, args) => {
                let name = match func {
                    Func::FloorSqrt => "floor_sqrt",
                    Func::Round => "round",
                    Func::Floor => "floor",
                    Func::Ceil => "ceil",
                    Func::Max => "max",
                    Func::Min => "min",
                };
                write!(f, "{name}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '-' || chars[i] == '+') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| format!("bad number `{s}`"))?));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if c == '"' {
            let start = i + 1;
            i += 1;
            while i < chars.len() && chars[i] != '"' {
                i += 1;
            }
            if i == chars.len() {
                return Err("unterminated string".into());
            }
            out.push(Tok::Str(chars[start..i].iter().collect()));
            i += 1;
        } else if "+-*/(),".contains(c) {
            out.push(Tok::Sym(c));
            i += 1;
        } else {
            return Err(format!("unexpected character `{c}`"));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, String> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym('+') {
                BinOp::Add
            } else if self.eat_sym('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym('*') {
                BinOp::Mul
            } else if self.eat_sym('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat_sym('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, String> {
        let tok = self.peek().cloned().ok_or("unexpected end of expression")?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                if !self.eat_sym(')') {
                    return Err("expected `)`".into());
                }
                Ok(e)
            }
            Tok::Sym(c) => Err(format!("unexpected `{c}`")),
            Tok::Ident(name) => match name.as_str() {
                "true" => Ok(Expr::Bool(true)),
                "false" => Ok(Expr::Bool(false)),
                _ if self.peek() == Some(&Tok::Sym('(')) => {
                    let func = Func::from_name(&name).ok_or_else(|| format!("unknown function `{name}`"))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat_sym(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat_sym(')') {
                        return Err("expected `)`".into());
                    }
                    if args.len() != func.arity() {
                        return Err(format!("`{name}` takes {} argument(s)", func.arity()));
                    }
                    Ok(Expr::Call(func, args))
                }
                _ => Ok(Expr::Ident(name)),
            },
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, String> {
    let toks = tokenize(src)?;
    if toks.is_empty() {
        return Err("empty expression".into());
    }
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err("trailing input after expression".into());
    }
    Ok(e)
}

impl Expr {
    /// Identifiers referenced anywhere in the expression.
    pub fn idents(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_idents(&mut out);
        out
    }

    fn collect_idents<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Ident(s) => out.push(s),
            Expr::Neg(e) => e.collect_idents(out),
            Expr::Bin(_, l, r) => {
                l.collect_idents(out);
                r.collect_idents(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_idents(out)),
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let e = parse_expr("1 + 2 * 3 - 4 / 2").unwrap();
        assert_eq!(e.to_string(), "((1 + (2 * 3)) - (4 / 2))");
    }

    #[test]
    fn calls_and_idents() {
        let e = parse_expr("max(1, round(sample_thickness / 10))").unwrap();
        assert_eq!(e.idents(), vec!["sample_thickness"]);
        assert!(parse_expr("max(1)").is_err());
        assert!(parse_expr("sqrt(4)").is_err());
        assert!(parse_expr("1 +").is_err());
        assert!(parse_expr("(1").is_err());
    }

    #[test]
    fn rounding_helpers() {
        assert_eq!(round_half_up(5.5), 6.0);
        assert_eq!(round_half_up(5.49), 5.0);
        assert_eq!(floor_sqrt(16384.0), 128.0);
        assert_eq!(floor_sqrt(16383.0), 127.0);
        assert!(floor_sqrt(-1.0).is_nan());
    }
}
