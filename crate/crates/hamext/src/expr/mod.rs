//! Symbolic scalar expressions.
//!
//! An [`Expr`] is an immutable tree over exact Gaussian-rational literals,
//! named symbols, field operations, rational powers, and a fixed function
//! set: `sin`, `cos`, `sinh`, `cosh`, `exp`, plus the curvature-tagged pair
//!
//! ```text
//! Sk(kappa, x) = sin(sqrt(kappa) x)/sqrt(kappa)    Ck(kappa, x) = cos(sqrt(kappa) x)
//! ```
//!
//! which degenerate to `x` and `1` at `kappa = 0` and continue analytically
//! to complex `kappa` (both are entire in `kappa`, so the branch of the
//! square root is immaterial). Division is represented as multiplication by
//! a `-1` power and `sqrt` as the rational power `1/2`; all powers carry
//! exact rational exponents, so differentiation never needs a logarithm.
//!
//! Submodules provide parsing ([`parse`]), deterministic printing, exact
//! differentiation ([`diff`]), complex evaluation with optional compilation
//! ([`eval`]), and the canonical normal form ([`normal`]) used for symbolic
//! equality certificates.

mod diff;
mod eval;
mod normal;
mod parse;
mod print;
mod rational;

pub use eval::{Binding, Compiled};
pub use normal::{equiv, normalize, normalizes_to_zero};
pub use parse::{parse_expression, parse_with_symbols};
pub use rational::{Rat, QC};

use num_bigint::BigInt;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Interned symbol name. Equality and ordering are by name, so two symbols
/// with the same spelling are the same symbol regardless of where they were
/// created.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol(Arc<str>);

impl Symbol {
    pub fn new(name: &str) -> Self {
        Symbol(Arc::from(name))
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Function heads available in the tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Func {
    Sin,
    Cos,
    Sinh,
    Cosh,
    Exp,
    /// `Sk(kappa, x)`: two arguments, curvature first.
    Sk,
    /// `Ck(kappa, x) = d/dx Sk(kappa, x)`.
    Ck,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Exp => "exp",
            Func::Sk => "Sk",
            Func::Ck => "Ck",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Sk | Func::Ck => 2,
            _ => 1,
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "exp" => Func::Exp,
            "Sk" => Func::Sk,
            "Ck" => Func::Ck,
            _ => return None,
        })
    }
}

/// Immutable symbolic expression tree.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expr {
    /// Exact complex-rational literal.
    Num(QC),
    Sym(Symbol),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    /// Base raised to an exact rational exponent.
    Pow(Box<Expr>, Rat),
    Fun(Func, Vec<Expr>),
}

/// Errors from parsing, evaluation, or normalization of expressions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("malformed number at byte {offset}: {message}")]
    MalformedNumber { offset: usize, message: String },
    #[error("unbalanced parentheses at byte {offset}")]
    UnbalancedParens { offset: usize },
    #[error("invalid exponent at byte {offset}: {message}")]
    InvalidExponent { offset: usize, message: String },
    #[error("division by zero while evaluating `{context}`")]
    DivisionByZero { context: String },
    #[error("unbound symbol `{name}` during evaluation")]
    UnboundSymbol { name: String },
    #[error("wrong arity for {func}: expected {expected}, got {got}")]
    Arity {
        func: &'static str,
        expected: usize,
        got: usize,
    },
}

impl Expr {
    // ----- constructors ---------------------------------------------------

    pub fn int(n: i64) -> Self {
        Expr::Num(QC::from_int(n))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Expr::Num(QC::ratio(num, den))
    }

    pub fn num(q: QC) -> Self {
        Expr::Num(q)
    }

    pub fn imag() -> Self {
        Expr::Num(QC::i())
    }

    /// Exact rational literal carrying the full binary value of `x`.
    ///
    /// Non-finite inputs have no rational counterpart and panic; callers
    /// sampling numeric data are expected to filter those out first.
    pub fn num_f64(x: f64) -> Self {
        let r = Rat::from_float(x)
            .unwrap_or_else(|| panic!("cannot represent non-finite {x} as a rational literal"));
        Expr::Num(QC::from_rat(r))
    }

    /// Parse a source literal that is known at compile time to be valid.
    ///
    /// Panics on malformed input, so it is only for string constants embedded
    /// in the library itself; user-facing input goes through [`parse_expression`].
    pub fn parse_static(src: &str) -> Self {
        parse_expression(src).unwrap_or_else(|e| panic!("invalid builtin expression `{src}`: {e}"))
    }

    pub fn zero() -> Self {
        Expr::int(0)
    }

    pub fn one() -> Self {
        Expr::int(1)
    }

    pub fn sym(s: &Symbol) -> Self {
        Expr::Sym(s.clone())
    }

    pub fn var(name: &str) -> Self {
        Expr::Sym(Symbol::new(name))
    }

    pub fn add(terms: Vec<Expr>) -> Self {
        match terms.len() {
            0 => Expr::zero(),
            1 => terms.into_iter().next().unwrap(),
            _ => Expr::Add(terms),
        }
    }

    pub fn mul(factors: Vec<Expr>) -> Self {
        match factors.len() {
            0 => Expr::one(),
            1 => factors.into_iter().next().unwrap(),
            _ => Expr::Mul(factors),
        }
    }

    pub fn neg(self) -> Self {
        Expr::mul(vec![Expr::int(-1), self])
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Expr::add(vec![a, b.neg()])
    }

    pub fn div(a: Expr, b: Expr) -> Self {
        Expr::mul(vec![a, Expr::pow(b, Rat::from_integer(BigInt::from(-1)))])
    }

    pub fn pow(base: Expr, exp: Rat) -> Self {
        Expr::Pow(Box::new(base), exp)
    }

    pub fn powi(base: Expr, exp: i64) -> Self {
        Expr::pow(base, Rat::from_integer(BigInt::from(exp)))
    }

    pub fn sqrt(e: Expr) -> Self {
        Expr::pow(e, Rat::new(BigInt::from(1), BigInt::from(2)))
    }

    pub fn sin(e: Expr) -> Self {
        Expr::Fun(Func::Sin, vec![e])
    }

    pub fn cos(e: Expr) -> Self {
        Expr::Fun(Func::Cos, vec![e])
    }

    pub fn sinh(e: Expr) -> Self {
        Expr::Fun(Func::Sinh, vec![e])
    }

    pub fn cosh(e: Expr) -> Self {
        Expr::Fun(Func::Cosh, vec![e])
    }

    pub fn exp(e: Expr) -> Self {
        Expr::Fun(Func::Exp, vec![e])
    }

    pub fn sk(kappa: Expr, x: Expr) -> Self {
        Expr::Fun(Func::Sk, vec![kappa, x])
    }

    pub fn ck(kappa: Expr, x: Expr) -> Self {
        Expr::Fun(Func::Ck, vec![kappa, x])
    }

    // ----- queries ---------------------------------------------------------

    /// Structural zero test (the literal `0`, not a normal-form question).
    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(q) if q.is_zero())
    }

    pub fn is_one_literal(&self) -> bool {
        matches!(self, Expr::Num(q) if q.is_one())
    }

    /// Exact literal value, if the node is a literal.
    pub fn as_number(&self) -> Option<&QC> {
        match self {
            Expr::Num(q) => Some(q),
            _ => None,
        }
    }

    /// Collect every symbol appearing in the tree.
    pub fn free_symbols(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(s) => {
                out.insert(s.clone());
            }
            Expr::Add(es) | Expr::Mul(es) | Expr::Fun(_, es) => {
                for e in es {
                    e.free_symbols(out);
                }
            }
            Expr::Pow(b, _) => b.free_symbols(out),
        }
    }

    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut s = BTreeSet::new();
        self.free_symbols(&mut s);
        s
    }

    /// Structural substitution of symbols by expressions. The result is not
    /// normalized.
    pub fn subst(&self, map: &BTreeMap<Symbol, Expr>) -> Expr {
        match self {
            Expr::Num(_) => self.clone(),
            Expr::Sym(s) => map.get(s).cloned().unwrap_or_else(|| self.clone()),
            Expr::Add(es) => Expr::Add(es.iter().map(|e| e.subst(map)).collect()),
            Expr::Mul(es) => Expr::Mul(es.iter().map(|e| e.subst(map)).collect()),
            Expr::Pow(b, r) => Expr::Pow(Box::new(b.subst(map)), r.clone()),
            Expr::Fun(f, es) => Expr::Fun(*f, es.iter().map(|e| e.subst(map)).collect()),
        }
    }

    /// Total node count, used by tests and as a size guard in reductions.
    pub fn size(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Sym(_) => 1,
            Expr::Add(es) | Expr::Mul(es) | Expr::Fun(_, es) => {
                1 + es.iter().map(Expr::size).sum::<usize>()
            }
            Expr::Pow(b, _) => 1 + b.size(),
        }
    }
}

/// Convenience: sum of an iterator of expressions.
pub fn sum<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
    Expr::add(items.into_iter().collect())
}

/// Convenience: product of an iterator of expressions.
pub fn product<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
    Expr::mul(items.into_iter().collect())
}
