//! Recursive-descent parser. Precedence, lowest to highest:
//! ternary `?:`, comparisons, `+ -`, `* /`, unary minus, `^` (right
//! associative, base restricted to atoms). Rolling windows must be positive
//! integer literals.

use super::ast::{BinOp, CrossFn, Expr, FieldRef, TsFn, TsPairFn, UnaryFn};
use super::lex::{lex, Tok, TokKind};
use super::AlphaError;
use crate::panel::PanelField;

pub fn parse(source: &str) -> Result<Expr, AlphaError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let expr = p.ternary()?;
    p.expect_kind(&TokKind::Eof, "end of input")?;
    Ok(expr)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokKind) -> bool {
        if &self.peek().kind == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn error(&self, expected: &str) -> AlphaError {
        let t = self.peek();
        AlphaError::Syntax {
            offset: t.offset,
            found: t.kind.describe(),
            expected: expected.into(),
        }
    }

    fn expect_kind(&mut self, kind: &TokKind, expected: &str) -> Result<(), AlphaError> {
        if self.eat(kind) {
            Ok(())
        } else {
            Err(self.error(expected))
        }
    }

    fn ternary(&mut self) -> Result<Expr, AlphaError> {
        let cond = self.comparison()?;
        if self.eat(&TokKind::Question) {
            let then = self.ternary()?;
            self.expect_kind(&TokKind::Colon, "`:`")?;
            let other = self.ternary()?;
            Ok(Expr::Ternary(
                Box::new(cond),
                Box::new(then),
                Box::new(other),
            ))
        } else {
            Ok(cond)
        }
    }

    fn comparison(&mut self) -> Result<Expr, AlphaError> {
        let mut lhs = self.additive()?;
        loop {
            let op = match self.peek().kind {
                TokKind::Lt => BinOp::Lt,
                TokKind::Le => BinOp::Le,
                TokKind::Gt => BinOp::Gt,
                TokKind::Ge => BinOp::Ge,
                TokKind::EqEq => BinOp::Eq,
                TokKind::Ne => BinOp::Ne,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.additive()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn additive(&mut self) -> Result<Expr, AlphaError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek().kind {
                TokKind::Plus => BinOp::Add,
                TokKind::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, AlphaError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().kind {
                TokKind::Star => BinOp::Mul,
                TokKind::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, AlphaError> {
        if self.eat(&TokKind::Minus) {
            let inner = self.unary()?;
            Ok(Expr::Unary(UnaryFn::Neg, Box::new(inner)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, AlphaError> {
        let base = self.atom()?;
        if self.eat(&TokKind::Caret) {
            // Right associative; the exponent admits a leading minus.
            let exp = self.unary()?;
            Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, AlphaError> {
        match self.peek().kind.clone() {
            TokKind::Number(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            TokKind::LParen => {
                self.bump();
                let inner = self.ternary()?;
                self.expect_kind(&TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                let offset = self.peek().offset;
                self.bump();
                if self.peek().kind == TokKind::LParen {
                    self.call(&name, offset)
                } else {
                    field_ref(&name, offset).map(Expr::Field)
                }
            }
            _ => Err(self.error("an expression")),
        }
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr, AlphaError> {
        self.expect_kind(&TokKind::LParen, "`(`")?;
        if name == "indneutralize" {
            let x = self.ternary()?;
            self.expect_kind(&TokKind::Comma, "`,`")?;
            match self.peek().kind.clone() {
                TokKind::Ident(g) if g == "industry" => {
                    self.bump();
                }
                _ => return Err(self.error("`industry` (the only grouping field)")),
            }
            self.expect_kind(&TokKind::RParen, "`)`")?;
            return Ok(Expr::IndNeutralize(Box::new(x)));
        }

        let args = self.call_args()?;
        let arity = |want: usize| -> Result<(), AlphaError> {
            if args.len() == want {
                Ok(())
            } else {
                Err(AlphaError::Arity {
                    offset,
                    name: name.to_string(),
                    want,
                    got: args.len(),
                })
            }
        };

        let unary_fn = |f: UnaryFn, args: Vec<(Expr, usize)>| {
            let (x, _) = args.into_iter().next().unwrap();
            Expr::Unary(f, Box::new(x))
        };

        match name {
            "rank" | "scale" => {
                arity(1)?;
                let f = if name == "rank" { CrossFn::Rank } else { CrossFn::Scale };
                let (x, _) = args.into_iter().next().unwrap();
                Ok(Expr::Cross(f, Box::new(x)))
            }
            "log" => {
                arity(1)?;
                Ok(unary_fn(UnaryFn::Log, args))
            }
            "abs" => {
                arity(1)?;
                Ok(unary_fn(UnaryFn::Abs, args))
            }
            "sign" => {
                arity(1)?;
                Ok(unary_fn(UnaryFn::Sign, args))
            }
            "signedpower" => {
                arity(2)?;
                let mut it = args.into_iter();
                let (x, _) = it.next().unwrap();
                let (a, _) = it.next().unwrap();
                Ok(Expr::SignedPower(Box::new(x), Box::new(a)))
            }
            "delay" | "delta" | "ts_min" | "ts_max" | "ts_argmin" | "ts_argmax" | "ts_rank"
            | "ts_sum" | "ts_product" | "ts_stddev" | "decay_linear" => {
                arity(2)?;
                let f = match name {
                    "delay" => TsFn::Delay,
                    "delta" => TsFn::Delta,
                    "ts_min" => TsFn::Min,
                    "ts_max" => TsFn::Max,
                    "ts_argmin" => TsFn::ArgMin,
                    "ts_argmax" => TsFn::ArgMax,
                    "ts_rank" => TsFn::Rank,
                    "ts_sum" => TsFn::Sum,
                    "ts_product" => TsFn::Product,
                    "ts_stddev" => TsFn::Stddev,
                    _ => TsFn::DecayLinear,
                };
                let mut it = args.into_iter();
                let (x, _) = it.next().unwrap();
                let d = window(it.next().unwrap())?;
                Ok(Expr::Ts(f, Box::new(x), d))
            }
            "correlation" | "covariance" => {
                arity(3)?;
                let f = if name == "correlation" {
                    TsPairFn::Correlation
                } else {
                    TsPairFn::Covariance
                };
                let mut it = args.into_iter();
                let (x, _) = it.next().unwrap();
                let (y, _) = it.next().unwrap();
                let d = window(it.next().unwrap())?;
                Ok(Expr::TsPair(f, Box::new(x), Box::new(y), d))
            }
            _ => Err(AlphaError::UnknownFunction {
                offset,
                name: name.to_string(),
            }),
        }
    }

    fn call_args(&mut self) -> Result<Vec<(Expr, usize)>, AlphaError> {
        let mut args = Vec::new();
        if !self.eat(&TokKind::RParen) {
            loop {
                let offset = self.peek().offset;
                args.push((self.ternary()?, offset));
                if self.eat(&TokKind::RParen) {
                    break;
                }
                self.expect_kind(&TokKind::Comma, "`,` or `)`")?;
            }
        }
        Ok(args)
    }
}

fn window((arg, offset): (Expr, usize)) -> Result<usize, AlphaError> {
    const MAX_WINDOW: f64 = 1e9;
    if let Expr::Const(v) = arg {
        if v.fract() == 0.0 && (1.0..=MAX_WINDOW).contains(&v) {
            return Ok(v as usize);
        }
    }
    Err(AlphaError::Window { offset })
}

fn field_ref(name: &str, offset: usize) -> Result<FieldRef, AlphaError> {
    if let Some(f) = PanelField::from_name(name) {
        return Ok(FieldRef::Panel(f));
    }
    if let Some(digits) = name.strip_prefix("adv") {
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            let n: usize = digits.parse().map_err(|_| AlphaError::Window { offset })?;
            if n >= 1 {
                return Ok(FieldRef::Adv(n));
            }
            return Err(AlphaError::Window { offset });
        }
    }
    Err(AlphaError::UnknownField {
        offset,
        name: name.to_string(),
    })
}
