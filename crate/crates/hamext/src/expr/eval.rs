//! Numeric evaluation over `Complex64`.
//!
//! Two evaluators share the same semantics:
//!
//! * [`Binding::eval`] walks the tree and reports unbound symbols and
//!   division by zero as errors — used for one-off checks.
//! * [`Compiled`] flattens an expression into a postfix program over a fixed
//!   variable layout — used in inner loops (trajectory integration, bracket
//!   sampling) where the same expression is evaluated at many points. It
//!   does not trap: singular points produce non-finite values the callers
//!   screen out.
//!
//! Fractional powers use the principal branch, `z^q = exp(q*Log z)` with the
//! branch cut on the negative real axis. `Sk(k,x)` evaluates as
//! `sin(sqrt(k)*x)/sqrt(k)` for `k != 0` and `x` at `k = 0`; with complex
//! square roots this yields `sinh`-type values for negative `k` without a
//! case split, and `Ck` likewise evaluates as `cos(sqrt(k)*x)`.

use super::{Expr, ExprError, Func, Symbol};
use num_complex::Complex64;
use num_traits::ToPrimitive;
use std::collections::BTreeMap;

/// Symbol table for interpretive evaluation.
#[derive(Clone, Debug, Default)]
pub struct Binding {
    vals: BTreeMap<Symbol, Complex64>,
}

impl Binding {
    pub fn new() -> Self {
        Binding::default()
    }

    pub fn set(&mut self, name: &str, value: Complex64) -> &mut Self {
        self.vals.insert(Symbol::new(name), value);
        self
    }

    pub fn set_real(&mut self, name: &str, value: f64) -> &mut Self {
        self.set(name, Complex64::new(value, 0.0))
    }

    pub fn set_sym(&mut self, sym: &Symbol, value: Complex64) -> &mut Self {
        self.vals.insert(sym.clone(), value);
        self
    }

    pub fn get(&self, sym: &Symbol) -> Option<Complex64> {
        self.vals.get(sym).copied()
    }

    /// The underlying table, in the shape [`Compiled::with_constants`] takes.
    pub fn map(&self) -> &BTreeMap<Symbol, Complex64> {
        &self.vals
    }

    pub fn eval(&self, e: &Expr) -> Result<Complex64, ExprError> {
        match e {
            Expr::Num(q) => Ok(q.to_complex()),
            Expr::Sym(s) => {
                self.vals
                    .get(s)
                    .copied()
                    .ok_or_else(|| ExprError::UnboundSymbol {
                        name: s.name().to_string(),
                    })
            }
            Expr::Add(terms) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for t in terms {
                    acc += self.eval(t)?;
                }
                Ok(acc)
            }
            Expr::Mul(factors) => {
                let mut acc = Complex64::new(1.0, 0.0);
                for f in factors {
                    acc *= self.eval(f)?;
                }
                Ok(acc)
            }
            Expr::Pow(b, r) => {
                let base = self.eval(b)?;
                pow_rational(base, r).ok_or_else(|| ExprError::DivisionByZero {
                    context: e.to_string(),
                })
            }
            Expr::Fun(func, args) => {
                let a0 = self.eval(&args[0])?;
                Ok(match func {
                    Func::Sin => a0.sin(),
                    Func::Cos => a0.cos(),
                    Func::Sinh => a0.sinh(),
                    Func::Cosh => a0.cosh(),
                    Func::Exp => a0.exp(),
                    Func::Sk => sk_value(a0, self.eval(&args[1])?),
                    Func::Ck => ck_value(a0, self.eval(&args[1])?),
                })
            }
        }
    }
}

/// `base^r`, principal branch; `None` for a zero base with negative power.
fn pow_rational(base: Complex64, r: &super::Rat) -> Option<Complex64> {
    if r.denom().to_i64() == Some(1) {
        if let Some(n) = r.numer().to_i64() {
            if base.norm_sqr() == 0.0 {
                return match n {
                    0 => Some(Complex64::new(1.0, 0.0)),
                    n if n > 0 => Some(Complex64::new(0.0, 0.0)),
                    _ => None,
                };
            }
            return Some(powi(base, n));
        }
    }
    let q = r.to_f64().unwrap_or(f64::NAN);
    if base.norm_sqr() == 0.0 {
        return if q > 0.0 {
            Some(Complex64::new(0.0, 0.0))
        } else {
            None
        };
    }
    Some((base.ln() * q).exp())
}

/// Exact-exponent power by squaring; avoids log-based drift for integers.
fn powi(base: Complex64, n: i64) -> Complex64 {
    let (mut b, mut n, inv) = if n < 0 {
        (base, (-n) as u64, true)
    } else {
        (base, n as u64, false)
    };
    let mut acc = Complex64::new(1.0, 0.0);
    while n > 0 {
        if n & 1 == 1 {
            acc *= b;
        }
        b *= b;
        n >>= 1;
    }
    if inv {
        acc.finv()
    } else {
        acc
    }
}

fn sk_value(k: Complex64, x: Complex64) -> Complex64 {
    if k.norm_sqr() == 0.0 {
        return x;
    }
    let s = k.sqrt();
    (s * x).sin() / s
}

fn ck_value(k: Complex64, x: Complex64) -> Complex64 {
    if k.norm_sqr() == 0.0 {
        return Complex64::new(1.0, 0.0);
    }
    (k.sqrt() * x).cos()
}

/// Postfix program over a fixed variable layout.
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
    max_stack: usize,
    pub nvars: usize,
}

#[derive(Clone, Debug)]
enum Op {
    Const(Complex64),
    Load(usize),
    AddN(u32),
    MulN(u32),
    PowI(i64),
    PowF(f64),
    Fun1(Func),
    Sk,
    Ck,
}

impl Compiled {
    /// Compile `e` over the variable order given by `vars`; all other
    /// symbols must appear in `consts`.
    pub fn with_constants(
        e: &Expr,
        vars: &[Symbol],
        consts: &BTreeMap<Symbol, Complex64>,
    ) -> Result<Compiled, ExprError> {
        let mut c = Compiled {
            ops: Vec::new(),
            max_stack: 0,
            nvars: vars.len(),
        };
        let mut depth = 0usize;
        c.emit(e, vars, consts, &mut depth)?;
        Ok(c)
    }

    pub fn new(e: &Expr, vars: &[Symbol]) -> Result<Compiled, ExprError> {
        Compiled::with_constants(e, vars, &BTreeMap::new())
    }

    fn push(&mut self, op: Op, depth: &mut usize, delta: isize) {
        self.ops.push(op);
        *depth = depth.checked_add_signed(delta).expect("stack underflow");
        self.max_stack = self.max_stack.max(*depth);
    }

    fn emit(
        &mut self,
        e: &Expr,
        vars: &[Symbol],
        consts: &BTreeMap<Symbol, Complex64>,
        depth: &mut usize,
    ) -> Result<(), ExprError> {
        match e {
            Expr::Num(q) => self.push(Op::Const(q.to_complex()), depth, 1),
            Expr::Sym(s) => {
                if let Some(idx) = vars.iter().position(|v| v == s) {
                    self.push(Op::Load(idx), depth, 1);
                } else if let Some(val) = consts.get(s) {
                    self.push(Op::Const(*val), depth, 1);
                } else {
                    return Err(ExprError::UnboundSymbol {
                        name: s.name().to_string(),
                    });
                }
            }
            Expr::Add(terms) => {
                for t in terms {
                    self.emit(t, vars, consts, depth)?;
                }
                self.push(Op::AddN(terms.len() as u32), depth, 1 - terms.len() as isize);
            }
            Expr::Mul(factors) => {
                for t in factors {
                    self.emit(t, vars, consts, depth)?;
                }
                self.push(
                    Op::MulN(factors.len() as u32),
                    depth,
                    1 - factors.len() as isize,
                );
            }
            Expr::Pow(b, r) => {
                self.emit(b, vars, consts, depth)?;
                if r.denom().to_i64() == Some(1) {
                    if let Some(n) = r.numer().to_i64() {
                        self.push(Op::PowI(n), depth, 0);
                        return Ok(());
                    }
                }
                self.push(Op::PowF(r.to_f64().unwrap_or(f64::NAN)), depth, 0);
            }
            Expr::Fun(func, args) => {
                for a in args {
                    self.emit(a, vars, consts, depth)?;
                }
                match func {
                    Func::Sk => self.push(Op::Sk, depth, -1),
                    Func::Ck => self.push(Op::Ck, depth, -1),
                    f => self.push(Op::Fun1(*f), depth, 0),
                }
            }
        }
        Ok(())
    }

    /// Evaluate at `vals` (same order as the `vars` passed at compile time).
    /// Singularities yield non-finite values rather than errors.
    pub fn eval(&self, vals: &[Complex64]) -> Complex64 {
        debug_assert_eq!(vals.len(), self.nvars);
        let mut stack: Vec<Complex64> = Vec::with_capacity(self.max_stack);
        for op in &self.ops {
            match op {
                Op::Const(c) => stack.push(*c),
                Op::Load(i) => stack.push(vals[*i]),
                Op::AddN(n) => {
                    let at = stack.len() - *n as usize;
                    let sum = stack.drain(at..).sum();
                    stack.push(sum);
                }
                Op::MulN(n) => {
                    let at = stack.len() - *n as usize;
                    let prod = stack.drain(at..).product();
                    stack.push(prod);
                }
                Op::PowI(n) => {
                    let top = stack.last_mut().expect("operand");
                    *top = powi(*top, *n);
                }
                Op::PowF(q) => {
                    let top = stack.last_mut().expect("operand");
                    *top = if top.norm_sqr() == 0.0 && *q > 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else {
                        (top.ln() * *q).exp()
                    };
                }
                Op::Fun1(f) => {
                    let top = stack.last_mut().expect("operand");
                    *top = match f {
                        Func::Sin => top.sin(),
                        Func::Cos => top.cos(),
                        Func::Sinh => top.sinh(),
                        Func::Cosh => top.cosh(),
                        Func::Exp => top.exp(),
                        Func::Sk | Func::Ck => unreachable!("two-argument ops"),
                    };
                }
                Op::Sk => {
                    let x = stack.pop().expect("operand");
                    let k = stack.last_mut().expect("operand");
                    *k = sk_value(*k, x);
                }
                Op::Ck => {
                    let x = stack.pop().expect("operand");
                    let k = stack.last_mut().expect("operand");
                    *k = ck_value(*k, x);
                }
            }
        }
        stack.pop().expect("result")
    }

    /// Convenience for real-valued states: evaluates and returns the real
    /// part (callers assert imaginary dust separately where it matters).
    pub fn eval_real(&self, vals: &[f64]) -> f64 {
        let cvals: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.eval(&cvals).re
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_expression;
    use super::*;

    fn ev(src: &str, binds: &[(&str, f64)]) -> Complex64 {
        let e = parse_expression(src).unwrap();
        let mut b = Binding::new();
        for (n, v) in binds {
            b.set_real(n, *v);
        }
        b.eval(&e).unwrap()
    }

    #[test]
    fn parametrised_trig_matches_elementary_forms() {
        // positive curvature: plain sine / cosine rescaled
        let x = 0.7;
        let k = 2.3f64;
        let s = ev("Sk(k,x)", &[("k", k), ("x", x)]);
        assert!((s.re - (k.sqrt() * x).sin() / k.sqrt()).abs() < 1e-14);
        // negative curvature: hyperbolic form, imaginary part cancels
        let k = -1.9f64;
        let s = ev("Sk(k,x)", &[("k", k), ("x", x)]);
        let a = (-k).sqrt();
        assert!((s.re - (a * x).sinh() / a).abs() < 1e-14);
        assert!(s.im.abs() < 1e-14);
        let c = ev("Ck(k,x)", &[("k", k), ("x", x)]);
        assert!((c.re - (a * x).cosh()).abs() < 1e-14);
        // zero curvature: the flat limits
        assert_eq!(ev("Sk(0,x)", &[("x", x)]).re, x);
        assert_eq!(ev("Ck(0,x)", &[("x", x)]).re, 1.0);
    }

    #[test]
    fn principal_branch_powers() {
        // (-1)^(1/2) = i on the principal branch
        let v = ev("(0 - 1)^(1/2)", &[]);
        assert!((v - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        // integer powers of negative reals stay exactly real
        let v = ev("x^3", &[("x", -2.0)]);
        assert_eq!(v, Complex64::new(-8.0, 0.0));
    }

    #[test]
    fn reports_unbound_and_singular() {
        let e = parse_expression("x + y").unwrap();
        let mut b = Binding::new();
        b.set_real("x", 1.0);
        assert!(matches!(
            b.eval(&e),
            Err(ExprError::UnboundSymbol { ref name }) if name == "y"
        ));
        let e = parse_expression("x^(-1)").unwrap();
        let mut b = Binding::new();
        b.set_real("x", 0.0);
        assert!(matches!(b.eval(&e), Err(ExprError::DivisionByZero { .. })));
    }

    #[test]
    fn compiled_matches_interpreter() {
        let e = parse_expression("Sk(k,x)^2*p^3 - exp(x)/(1 + p^2)").unwrap();
        let vars = [Symbol::new("x"), Symbol::new("p")];
        let mut consts = BTreeMap::new();
        consts.insert(Symbol::new("k"), Complex64::new(-1.2, 0.0));
        let c = Compiled::with_constants(&e, &vars, &consts).unwrap();
        let mut b = Binding::new();
        b.set_real("k", -1.2).set_real("x", 0.4).set_real("p", 1.7);
        let want = b.eval(&e).unwrap();
        let got = c.eval(&[Complex64::new(0.4, 0.0), Complex64::new(1.7, 0.0)]);
        assert!((want - got).norm() < 1e-14);
    }
}
