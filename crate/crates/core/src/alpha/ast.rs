//! Expression trees for the alpha language and their canonical textual form.

use std::fmt;

use crate::panel::PanelField;

/// A panel field reference, either raw or the derived dollar-volume average.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRef {
    Panel(PanelField),
    /// adv{n}: trailing n-day mean of close * volume, including today.
    Adv(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Neg,
    Log,
    Abs,
    Sign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Cross-sectional operators: applied per date across tickers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossFn {
    Rank,
    Scale,
}

/// Single-input rolling operators over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsFn {
    Delay,
    Delta,
    Min,
    Max,
    ArgMin,
    ArgMax,
    Rank,
    Sum,
    Product,
    Stddev,
    DecayLinear,
}

/// Two-input rolling operators over a trailing window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsPairFn {
    Correlation,
    Covariance,
}

/// Parsed alpha expression. Windows are validated to be >= 1 at parse time.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Field(FieldRef),
    Unary(UnaryFn, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// signedpower(x, a) = sign(x) * |x|^a, elementwise.
    SignedPower(Box<Expr>, Box<Expr>),
    Cross(CrossFn, Box<Expr>),
    /// Subtract the per-(date, industry group) mean.
    IndNeutralize(Box<Expr>),
    Ts(TsFn, Box<Expr>, usize),
    TsPair(TsPairFn, Box<Expr>, Box<Expr>, usize),
    /// cond ? then : else, selected pointwise; nonzero condition is true.
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
        }
    }
}

impl TsFn {
    pub fn name(self) -> &'static str {
        match self {
            TsFn::Delay => "delay",
            TsFn::Delta => "delta",
            TsFn::Min => "ts_min",
            TsFn::Max => "ts_max",
            TsFn::ArgMin => "ts_argmin",
            TsFn::ArgMax => "ts_argmax",
            TsFn::Rank => "ts_rank",
            TsFn::Sum => "ts_sum",
            TsFn::Product => "ts_product",
            TsFn::Stddev => "ts_stddev",
            TsFn::DecayLinear => "decay_linear",
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldRef::Panel(p) => f.write_str(p.name()),
            FieldRef::Adv(n) => write!(f, "adv{n}"),
        }
    }
}

// Precedence levels, lowest to highest. The printer threads the enclosing
// level through so the output carries exactly the parentheses the grammar
// needs to reparse into the same tree.
const PREC_TERNARY: u8 = 0;
const PREC_CMP: u8 = 1;
const PREC_ADD: u8 = 2;
const PREC_MUL: u8 = 3;
const PREC_UNARY: u8 = 4;
const PREC_POW_BASE: u8 = 5;

fn prec_of(e: &Expr) -> u8 {
    match e {
        Expr::Ternary(..) => PREC_TERNARY,
        Expr::Binary(op, ..) => match op {
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge | BinOp::Eq | BinOp::Ne => PREC_CMP,
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div => PREC_MUL,
            BinOp::Pow => PREC_POW_BASE,
        },
        Expr::Unary(UnaryFn::Neg, _) => PREC_UNARY,
        _ => u8::MAX,
    }
}

fn write_prec(e: &Expr, min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let own = prec_of(e);
    let parens = own < min;
    if parens {
        f.write_str("(")?;
    }
    match e {
        Expr::Const(c) => write!(f, "{c}")?,
        Expr::Field(fr) => write!(f, "{fr}")?,
        Expr::Unary(UnaryFn::Neg, x) => {
            f.write_str("-")?;
            write_prec(x, PREC_UNARY, f)?;
        }
        Expr::Unary(func, x) => {
            let name = match func {
                UnaryFn::Log => "log",
                UnaryFn::Abs => "abs",
                UnaryFn::Sign => "sign",
                UnaryFn::Neg => unreachable!(),
            };
            write!(f, "{name}({x})")?;
        }
        Expr::Binary(BinOp::Pow, a, b) => {
            // The base is an atom in the grammar; the exponent may carry a
            // leading minus.
            write_prec(a, PREC_POW_BASE + 1, f)?;
            f.write_str(" ^ ")?;
            write_prec(b, PREC_UNARY, f)?;
        }
        Expr::Binary(op, a, b) => {
            write_prec(a, own, f)?;
            write!(f, " {} ", op.symbol())?;
            write_prec(b, own + 1, f)?;
        }
        Expr::SignedPower(x, a) => write!(f, "signedpower({x}, {a})")?,
        Expr::Cross(func, x) => {
            let name = match func {
                CrossFn::Rank => "rank",
                CrossFn::Scale => "scale",
            };
            write!(f, "{name}({x})")?;
        }
        Expr::IndNeutralize(x) => write!(f, "indneutralize({x}, industry)")?,
        Expr::Ts(func, x, d) => write!(f, "{}({x}, {d})", func.name())?,
        Expr::TsPair(func, x, y, d) => {
            let name = match func {
                TsPairFn::Correlation => "correlation",
                TsPairFn::Covariance => "covariance",
            };
            write!(f, "{name}({x}, {y}, {d})")?;
        }
        Expr::Ternary(c, a, b) => {
            write_prec(c, PREC_CMP, f)?;
            f.write_str(" ? ")?;
            write_prec(a, PREC_TERNARY, f)?;
            f.write_str(" : ")?;
            write_prec(b, PREC_TERNARY, f)?;
        }
    }
    if parens {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_prec(self, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: f64) -> Box<Expr> {
        Box::new(Expr::Const(v))
    }

    #[test]
    fn printer_inserts_required_parens_only() {
        let close = Box::new(Expr::Field(FieldRef::Panel(PanelField::Close)));
        let sub = Expr::Binary(
            BinOp::Mul,
            c(2.0),
            Box::new(Expr::Binary(BinOp::Add, close.clone(), c(1.0))),
        );
        assert_eq!(sub.to_string(), "2 * (close + 1)");

        let left_assoc = Expr::Binary(
            BinOp::Sub,
            Box::new(Expr::Binary(BinOp::Sub, c(1.0), c(2.0))),
            c(3.0),
        );
        assert_eq!(left_assoc.to_string(), "1 - 2 - 3");

        let right_nested = Expr::Binary(
            BinOp::Sub,
            c(1.0),
            Box::new(Expr::Binary(BinOp::Sub, c(2.0), c(3.0))),
        );
        assert_eq!(right_nested.to_string(), "1 - (2 - 3)");

        let neg_pow = Expr::Unary(
            UnaryFn::Neg,
            Box::new(Expr::Binary(BinOp::Pow, c(2.0), c(3.0))),
        );
        assert_eq!(neg_pow.to_string(), "-2 ^ 3");

        let pow_of_neg = Expr::Binary(BinOp::Pow, Box::new(Expr::Unary(UnaryFn::Neg, c(2.0))), c(3.0));
        assert_eq!(pow_of_neg.to_string(), "(-2) ^ 3");
    }

    #[test]
    fn ternary_prints_with_branch_parens() {
        let close = Box::new(Expr::Field(FieldRef::Panel(PanelField::Close)));
        let open = Box::new(Expr::Field(FieldRef::Panel(PanelField::Open)));
        let t = Expr::Ternary(
            Box::new(Expr::Binary(BinOp::Gt, close, open)),
            c(1.0),
            Box::new(Expr::Unary(UnaryFn::Neg, c(1.0))),
        );
        assert_eq!(t.to_string(), "close > open ? 1 : -1");

        let sum = Expr::Binary(BinOp::Add, Box::new(t), c(0.5));
        assert_eq!(sum.to_string(), "(close > open ? 1 : -1) + 0.5");
    }
}
