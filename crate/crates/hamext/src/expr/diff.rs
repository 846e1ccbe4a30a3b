//! Exact symbolic differentiation.
//!
//! `Sk` and `Ck` are the parametrised sine/cosine pair: `Sk(k, x)` solves
//! `y'' + k*y = 0` with `y(0)=0, y'(0)=1`, and `Ck = d/dx Sk`. Their partial
//! derivatives follow from the series form and stay within the same function
//! family:
//!
//! ```text
//! d/dx Sk(k,x) =  Ck(k,x)
//! d/dx Ck(k,x) = -k*Sk(k,x)
//! d/dk Sk(k,x) = (x*Ck(k,x) - Sk(k,x)) / (2k)
//! d/dk Ck(k,x) = -(x/2)*Sk(k,x)
//! ```
//!
//! The `d/dk` forms have removable limits at `k = 0`; they only appear when
//! the differentiation variable occurs inside the curvature slot, which the
//! crate reserves for nonzero parameters.

use super::{Expr, Func, Rat, Symbol};
use num_traits::{One, Zero};

impl Expr {
    /// Partial derivative with respect to `v`. The result is exact but not
    /// normalized; zero and one factors produced by the chain rule are
    /// dropped locally to keep trees small.
    pub fn diff(&self, v: &Symbol) -> Expr {
        match self {
            Expr::Num(_) => Expr::zero(),
            Expr::Sym(s) => {
                if s == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(terms) => dsum(terms.iter().map(|t| t.diff(v))),
            Expr::Mul(factors) => {
                let mut terms = Vec::with_capacity(factors.len());
                for (i, fi) in factors.iter().enumerate() {
                    let dfi = fi.diff(v);
                    if dfi.is_zero_literal() {
                        continue;
                    }
                    let rest = factors
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, fj)| fj.clone());
                    terms.push(dprod(std::iter::once(dfi).chain(rest)));
                }
                dsum(terms)
            }
            Expr::Pow(b, r) => {
                let db = b.diff(v);
                if db.is_zero_literal() || r.is_zero() {
                    return Expr::zero();
                }
                dprod([rat_lit(r), pow_less_one(b, r), db])
            }
            Expr::Fun(func, args) => match func {
                Func::Sin => chain(Expr::cos(args[0].clone()), args[0].diff(v)),
                Func::Cos => chain(
                    dprod([Expr::int(-1), Expr::sin(args[0].clone())]),
                    args[0].diff(v),
                ),
                Func::Sinh => chain(Expr::cosh(args[0].clone()), args[0].diff(v)),
                Func::Cosh => chain(Expr::sinh(args[0].clone()), args[0].diff(v)),
                Func::Exp => chain(self.clone(), args[0].diff(v)),
                Func::Sk => {
                    let (k, x) = (&args[0], &args[1]);
                    let by_x = chain(Expr::ck(k.clone(), x.clone()), x.diff(v));
                    let dk = k.diff(v);
                    if dk.is_zero_literal() {
                        return by_x;
                    }
                    // (x*Ck - Sk) / (2k) * dk
                    let num = Expr::sub(
                        dprod([x.clone(), Expr::ck(k.clone(), x.clone())]),
                        self.clone(),
                    );
                    let by_k = dprod([
                        Expr::ratio(1, 2),
                        num,
                        Expr::powi(k.clone(), -1),
                        dk,
                    ]);
                    dsum([by_x, by_k])
                }
                Func::Ck => {
                    let (k, x) = (&args[0], &args[1]);
                    let by_x = chain(
                        dprod([Expr::int(-1), k.clone(), Expr::sk(k.clone(), x.clone())]),
                        x.diff(v),
                    );
                    let dk = k.diff(v);
                    if dk.is_zero_literal() {
                        return by_x;
                    }
                    let by_k = dprod([
                        Expr::ratio(-1, 2),
                        x.clone(),
                        Expr::sk(k.clone(), x.clone()),
                        dk,
                    ]);
                    dsum([by_x, by_k])
                }
            },
        }
    }
}

fn rat_lit(r: &Rat) -> Expr {
    Expr::num(super::QC::from_rat(r.clone()))
}

/// `b^(r-1)` with small-exponent shortcuts.
fn pow_less_one(b: &Expr, r: &Rat) -> Expr {
    let e = r - Rat::one();
    if e.is_zero() {
        Expr::one()
    } else if e.is_one() {
        b.clone()
    } else {
        Expr::pow(b.clone(), e)
    }
}

/// `outer * inner_derivative`, skipping multiplications by one and zero.
fn chain(outer: Expr, dinner: Expr) -> Expr {
    dprod([outer, dinner])
}

fn dsum<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
    let terms: Vec<Expr> = items
        .into_iter()
        .filter(|t| !t.is_zero_literal())
        .collect();
    Expr::add(terms)
}

fn dprod<I: IntoIterator<Item = Expr>>(items: I) -> Expr {
    let mut factors: Vec<Expr> = Vec::new();
    for f in items {
        if f.is_zero_literal() {
            return Expr::zero();
        }
        if f.is_one_literal() {
            continue;
        }
        factors.push(f);
    }
    Expr::mul(factors)
}

#[cfg(test)]
mod tests {
    use super::super::{parse_expression, Binding, Symbol};
    use num_complex::Complex64;

    /// Check `d/dv expr` against a central finite difference at one point.
    fn check(src: &str, v: &str, at: &[(&str, f64)]) {
        let e = parse_expression(src).unwrap();
        let var = Symbol::new(v);
        let de = e.diff(&var);

        let mut base = Binding::new();
        for (name, val) in at {
            base.set(name, Complex64::new(*val, 0.0));
        }
        let h = 1e-6;
        let mut hi = base.clone();
        let mut lo = base.clone();
        let x0 = at.iter().find(|(n, _)| n == &v).unwrap().1;
        hi.set(v, Complex64::new(x0 + h, 0.0));
        lo.set(v, Complex64::new(x0 - h, 0.0));
        let fd = (hi.eval(&e).unwrap() - lo.eval(&e).unwrap()) / (2.0 * h);
        let sym = base.eval(&de).unwrap();
        assert!(
            (fd - sym).norm() < 1e-6 * (1.0 + sym.norm()),
            "{src} d/d{v}: finite diff {fd}, symbolic {sym}"
        );
    }

    #[test]
    fn matches_finite_differences() {
        check("x^2*sin(x)", "x", &[("x", 0.7)]);
        check("exp(2*x)/(1 + x^2)", "x", &[("x", 0.3)]);
        check("sqrt(x^2 + y^2)", "x", &[("x", 1.2), ("y", 0.4)]);
        check("cosh(x)*sinh(y)", "y", &[("x", 0.5), ("y", 0.8)]);
    }

    #[test]
    fn parametrised_trig_rules() {
        // d/dx Sk(k,x) = Ck(k,x) for positive, negative, and zero k.
        for k in [1.7, -0.9, 0.0] {
            check("Sk(k,x)", "x", &[("k", k), ("x", 0.6)]);
            check("Ck(k,x)", "x", &[("k", k), ("x", 0.6)]);
        }
        // curvature-slot derivatives away from k = 0
        check("Sk(k,x)", "k", &[("k", 0.8), ("x", 0.6)]);
        check("Ck(k,x)", "k", &[("k", -1.3), ("x", 0.6)]);
    }

    #[test]
    fn constants_vanish() {
        let e = parse_expression("3/2 + 2*i").unwrap();
        assert!(e.diff(&Symbol::new("x")).is_zero_literal());
        let e = parse_expression("y^2").unwrap();
        assert!(e.diff(&Symbol::new("x")).is_zero_literal());
    }
}
