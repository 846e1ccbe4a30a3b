//! Deterministic printer for expressions.
//!
//! The printer is the inverse of the parser on its own output: for any
//! expression `e`, `parse(print(e))` rebuilds a tree that prints to the same
//! string. Combined with normalization this yields the canonical text form
//! used in catalogs, JSON payloads, and test fixtures.

use super::{Expr, Rat};
use num_traits::{One, Signed, Zero};
use std::fmt;

/// Binding strength of the context a fragment is printed into.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Prec {
    Sum,
    Product,
    Power,
    Atom,
}

impl Expr {
    fn prec(&self) -> Prec {
        match self {
            Expr::Add(_) => Prec::Sum,
            Expr::Mul(_) => Prec::Product,
            Expr::Pow(_, r) => {
                // Square roots print as `sqrt(...)`, which is atomic.
                if is_sqrt_exp(r) {
                    Prec::Atom
                } else {
                    Prec::Power
                }
            }
            Expr::Num(q) => {
                if q.is_real() && !q.re.is_negative() {
                    Prec::Atom
                } else if q.re.is_zero() && !q.im.is_zero() && !q.im.is_one() {
                    // `3*i` prints as a product
                    Prec::Product
                } else if q.is_real() || (q.re.is_zero() && q.im.is_one()) {
                    // negative reals carry a leading minus
                    Prec::Sum
                } else {
                    Prec::Atom // mixed values print parenthesised already
                }
            }
            Expr::Sym(_) | Expr::Fun(_, _) => Prec::Atom,
        }
    }
}

fn is_sqrt_exp(r: &Rat) -> bool {
    r.numer().is_one() && *r.denom() == 2.into()
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, min: Prec) -> fmt::Result {
    if e.prec() < min {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Render `base^exp` for a denominator position (exp already positive).
fn render_power(base: &Expr, exp: &Rat) -> String {
    if exp.is_one() {
        if base.prec() < Prec::Power {
            return format!("({base})");
        }
        return base.to_string();
    }
    if is_sqrt_exp(exp) {
        return format!("sqrt({base})");
    }
    let b = if base.prec() < Prec::Atom {
        format!("({base})")
    } else {
        base.to_string()
    };
    let e = if exp.denom().is_one() {
        format!("^{}", exp.numer())
    } else {
        format!("^({}/{})", exp.numer(), exp.denom())
    };
    format!("{b}{e}")
}

/// Render one exponent per the grammar: plain non-negative integers bare,
/// anything else parenthesised (`^(-2)`, `^(3/2)`).
fn write_exponent(f: &mut fmt::Formatter<'_>, r: &Rat) -> fmt::Result {
    if r.denom().is_one() && !r.numer().is_negative() {
        write!(f, "^{}", r.numer())
    } else if r.denom().is_one() {
        write!(f, "^({})", r.numer())
    } else {
        write!(f, "^({}/{})", r.numer(), r.denom())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(q) => write!(f, "{q}"),
            Expr::Sym(s) => write!(f, "{s}"),
            Expr::Fun(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
            Expr::Pow(b, r) => {
                if is_sqrt_exp(r) {
                    return write!(f, "sqrt({b})");
                }
                write_wrapped(f, b, Prec::Atom)?;
                write_exponent(f, r)
            }
            Expr::Mul(factors) => {
                // Split into numerator factors and negative-power factors so
                // divisions print as `a/b` instead of `a*b^(-1)`; a bare -1
                // coefficient renders as a minus sign.
                let mut factors: &[Expr] = factors;
                if factors.len() > 1 {
                    if let Expr::Num(q) = &factors[0] {
                        if q.is_real() && (-q.re.clone()).is_one() {
                            write!(f, "-")?;
                            factors = &factors[1..];
                        }
                    }
                }
                let mut numer: Vec<String> = Vec::new();
                let mut denom: Vec<String> = Vec::new();
                for fac in factors {
                    if let Expr::Pow(b, r) = fac {
                        if r.is_negative() {
                            denom.push(render_power(b, &-r.clone()));
                            continue;
                        }
                    }
                    let s = fac.to_string();
                    // A literal leading the product may keep its sign: the
                    // parser folds a unary minus back into it. Elsewhere,
                    // nested products and anything rendering with a leading
                    // sign must be parenthesised to re-parse faithfully.
                    if numer.is_empty() && matches!(fac, Expr::Num(_)) {
                        numer.push(s);
                    } else if fac.prec() < Prec::Power || s.starts_with('-') {
                        numer.push(format!("({s})"));
                    } else {
                        numer.push(s);
                    }
                }
                if numer.is_empty() {
                    numer.push("1".to_string());
                }
                write!(f, "{}", numer.join("*"))?;
                for d in denom {
                    write!(f, "/{d}")?;
                }
                Ok(())
            }
            Expr::Add(terms) => {
                for (i, t) in terms.iter().enumerate() {
                    if i == 0 {
                        write_wrapped(f, t, Prec::Sum)?;
                        continue;
                    }
                    // Pull a leading minus out of the term so sums read
                    // `a - b` rather than `a + -b`.
                    let rendered = t.to_string();
                    if let Some(rest) = rendered.strip_prefix('-') {
                        write!(f, " - {rest}")?;
                    } else {
                        write!(f, " + {rendered}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::Expr;

    #[test]
    fn renders_divisions_and_roots() {
        let x = Expr::var("x");
        let y = Expr::var("y");
        let e = Expr::div(x.clone(), Expr::powi(Expr::cos(y.clone()), 2));
        assert_eq!(e.to_string(), "x/cos(y)^2");
        assert_eq!(Expr::sqrt(x.clone()).to_string(), "sqrt(x)");
        let e = Expr::mul(vec![Expr::int(-2), x.clone(), Expr::powi(y.clone(), -1)]);
        assert_eq!(e.to_string(), "-2*x/y");
        let e = Expr::add(vec![x.clone(), Expr::mul(vec![Expr::int(-1), y.clone()])]);
        assert_eq!(e.to_string(), "x - y");
        let e = Expr::pow(Expr::add(vec![x, y]), num_rational::BigRational::new(3.into(), 2.into()));
        assert_eq!(e.to_string(), "(x + y)^(3/2)");
    }

    #[test]
    fn parenthesises_sums_inside_products() {
        let e = Expr::mul(vec![
            Expr::add(vec![Expr::var("a"), Expr::var("b")]),
            Expr::var("c"),
        ]);
        assert_eq!(e.to_string(), "(a + b)*c");
    }
}
