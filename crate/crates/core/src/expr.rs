//! Tiny arithmetic expression language for potentials.
//!
//! Grammar: `+ - * / ^`, unary minus, parentheses, numbers, constants `pi`, `e`,
//! variables `x1` (longitudinal) and `xp` (transverse), and the functions
//! `sin cos tan exp ln sqrt abs tanh cosh sinh step min max`.
//! `^` is right-associative and binds tighter than unary minus.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X1,
    Xp,
    Neg(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Tanh,
    Cosh,
    Sinh,
    Step,
    Min,
    Max,
}

impl Func {
    fn from_name(s: &str) -> Option<(Func, usize)> {
        Some(match s {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "tan" => (Func::Tan, 1),
            "exp" => (Func::Exp, 1),
            "ln" | "log" => (Func::Ln, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "tanh" => (Func::Tanh, 1),
            "cosh" => (Func::Cosh, 1),
            "sinh" => (Func::Sinh, 1),
            "step" => (Func::Step, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

/// A parsed expression in the variables `x1` and `xp`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    uses_xp: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let ch = chars[i];
        if ch.is_whitespace() {
            i += 1;
        } else if ch.is_ascii_digit() || ch == '.' {
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
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Expression(format!("bad number '{text}'")))?;
            out.push(Tok::Num(v));
        } else if ch.is_ascii_alphabetic() || ch == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(ch) {
            out.push(Tok::Sym(ch));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character '{ch}'")));
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

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Expression(format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::Sym('(')) {
                    let (f, arity) = Func::from_name(&name)
                        .ok_or_else(|| Error::Expression(format!("unknown function '{name}'")))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(Error::Expression(format!(
                            "function '{name}' takes {arity} argument(s), got {}",
                            args.len()
                        )));
                    }
                    return Ok(Node::Call(f, args));
                }
                match name.as_str() {
                    "x1" | "x" => Ok(Node::X1),
                    "xp" => Ok(Node::Xp),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => Err(Error::Expression(format!("unknown identifier '{name}'"))),
                }
            }
            Some(t) => Err(Error::Expression(format!("unexpected token {t:?}"))),
            None => Err(Error::Expression("unexpected end of input".into())),
        }
    }
}

fn mentions_xp(n: &Node) -> bool {
    match n {
        Node::Xp => true,
        Node::Num(_) | Node::X1 => false,
        Node::Neg(a) => mentions_xp(a),
        Node::Bin(_, a, b) => mentions_xp(a) || mentions_xp(b),
        Node::Call(_, args) => args.iter().any(mentions_xp),
    }
}

fn eval(n: &Node, x1: f64, xp: f64) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::X1 => x1,
        Node::Xp => xp,
        Node::Neg(a) => -eval(a, x1, xp),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, x1, xp), eval(b, x1, xp));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
                Op::Pow => a.powf(b),
            }
        }
        Node::Call(f, args) => {
            let a = eval(&args[0], x1, xp);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Tanh => a.tanh(),
                Func::Cosh => a.cosh(),
                Func::Sinh => a.sinh(),
                Func::Step => {
                    if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        0.0
                    } else {
                        0.5
                    }
                }
                Func::Min => a.min(eval(&args[1], x1, xp)),
                Func::Max => a.max(eval(&args[1], x1, xp)),
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let toks = tokenize(src)?;
        if toks.is_empty() {
            return Err(Error::Expression("empty expression".into()));
        }
        let mut p = Parser { toks, pos: 0 };
        let root = p.expr()?;
        if p.pos != p.toks.len() {
            return Err(Error::Expression(format!(
                "trailing input after position {}",
                p.pos
            )));
        }
        let uses_xp = mentions_xp(&root);
        Ok(Self { root, uses_xp })
    }

    pub fn eval(&self, x1: f64, xp: f64) -> f64 {
        eval(&self.root, x1, xp)
    }

    /// True if the expression depends on the transverse variable.
    pub fn uses_xp(&self) -> bool {
        self.uses_xp
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x1: f64, xp: f64) -> f64 {
        Expr::parse(s).unwrap().eval(x1, xp)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0, 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2 ^ 2", 0.0, 0.0), -4.0);
        assert_eq!(ev("(1 - 2) - 3", 0.0, 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0, 0.0), 1.0);
        assert_eq!(ev("2 * -3", 0.0, 0.0), -6.0);
    }

    #[test]
    fn variables_constants_functions() {
        assert!((ev("sin(pi/2) + cos(0) + exp(0)", 0.0, 0.0) - 3.0).abs() < 1e-15);
        assert_eq!(ev("x1 * xp", 2.0, 3.0), 6.0);
        assert!((ev("e", 0.0, 0.0) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("step(x1)", 0.0, 0.0), 0.5);
        assert_eq!(ev("-2*step(1-abs(x1))", 0.5, 0.0), -2.0);
        assert_eq!(ev("max(x1, 2)", 1.0, 0.0), 2.0);
        assert_eq!(ev("1.5e-1 * 2E1", 0.0, 0.0), 3.0);
    }

    #[test]
    fn detects_transverse_dependence() {
        assert!(Expr::parse("sin(xp)").unwrap().uses_xp());
        assert!(!Expr::parse("x1^2").unwrap().uses_xp());
    }

    #[test]
    fn rejects_malformed() {
        for s in ["", "1 +", "sin 1", "foo(1)", "y", "(1", "1 2", "max(1)", "3 $ 4"] {
            assert!(Expr::parse(s).is_err(), "{s}");
        }
    }
}
