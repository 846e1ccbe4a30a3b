//! Recursive-descent parser for the expression grammar:
//!
//! ```text
//! expr     := ['-'] term (('+' | '-') term)*
//! term     := factor (('*' | '/') factor)*
//! factor   := base ['^' exponent]
//! base     := number | 'i' | identifier | call | '(' expr ')'
//! call     := func '(' expr (',' expr)* ')'
//! func     := sin | cos | sinh | cosh | exp | sqrt | Sk | Ck
//! exponent := uint | '(' sint ['/' uint] ')'
//! number   := digits ['.' digits] [('e'|'E') ['+'|'-'] digits]
//! ```
//!
//! Numbers become exact rationals (`1.25` is 5/4, `1e-3` is 1/1000), `i` is
//! the exact imaginary unit, and adjacent literal arithmetic folds at parse
//! time so that printed coefficients like `3/2` or `(1+2*i)` re-parse to the
//! same literal node. Whitespace is insignificant. Errors carry the byte
//! offset of the offending token.

use super::{Expr, ExprError, Func, Rat, Symbol, QC};
use num_bigint::BigInt;
use num_traits::{Pow as _, Zero};
use std::collections::BTreeSet;
use std::str::FromStr;

/// Parse with every identifier accepted as a symbol.
pub fn parse_expression(src: &str) -> Result<Expr, ExprError> {
    Parser::new(src, None).run()
}

/// Parse, rejecting identifiers outside `symbols` (function names and `i`
/// are always recognised). This is the entry point used by the catalog
/// loader so that typos in data files surface as errors naming the
/// identifier.
pub fn parse_with_symbols(src: &str, symbols: &BTreeSet<String>) -> Result<Expr, ExprError> {
    Parser::new(src, Some(symbols)).run()
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    allowed: Option<&'a BTreeSet<String>>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, allowed: Option<&'a BTreeSet<String>>) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            allowed,
        }
    }

    fn run(mut self) -> Result<Expr, ExprError> {
        let e = self.expr()?;
        self.skip_ws();
        if self.pos != self.bytes.len() {
            if self.peek() == Some(b')') {
                return Err(ExprError::UnbalancedParens { offset: self.pos });
            }
            return Err(ExprError::Parse {
                offset: self.pos,
                message: format!("unexpected `{}`", &self.src[self.pos..]),
            });
        }
        Ok(e)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, ch: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(ch) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        let negate = self.eat(b'-');
        let first = self.term()?;
        let mut terms = vec![if negate { neg_flat(first) } else { first }];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let t = self.term()?;
                    push_term(&mut terms, t);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let t = self.term()?;
                    push_term(&mut terms, neg_flat(t));
                }
                _ => break,
            }
        }
        Ok(Expr::add(terms))
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let first = self.factor()?;
        let mut factors = vec![first];
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let f = self.factor()?;
                    push_factor(&mut factors, f);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let f = self.factor()?;
                    push_factor_inverse(&mut factors, f);
                }
                _ => break,
            }
        }
        Ok(Expr::mul(factors))
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        let base = self.base()?;
        self.skip_ws();
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.exponent()?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    /// A bare exponent is an unsigned integer so that `p^2/2` keeps its
    /// conventional reading `(p^2)/2`; signs and fractions need parentheses.
    fn exponent(&mut self) -> Result<Rat, ExprError> {
        self.skip_ws();
        let offset = self.pos;
        if !self.eat(b'(') {
            return Ok(Rat::from_integer(self.integer(offset)?));
        }
        self.skip_ws();
        let negative = self.eat(b'-');
        self.skip_ws();
        let num = self.integer(offset)?;
        let mut rat = Rat::from_integer(num);
        self.skip_ws();
        if self.peek() == Some(b'/') {
            self.pos += 1;
            self.skip_ws();
            let den = self.integer(self.pos)?;
            if den.is_zero() {
                return Err(ExprError::InvalidExponent {
                    offset,
                    message: "zero denominator".into(),
                });
            }
            rat /= Rat::from_integer(den);
        }
        if negative {
            rat = -rat;
        }
        self.skip_ws();
        if !self.eat(b')') {
            return Err(ExprError::UnbalancedParens { offset: self.pos });
        }
        Ok(rat)
    }

    fn integer(&mut self, offset: usize) -> Result<BigInt, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ExprError::InvalidExponent {
                offset,
                message: "expected digits".into(),
            });
        }
        BigInt::from_str(&self.src[start..self.pos]).map_err(|e| ExprError::MalformedNumber {
            offset: start,
            message: e.to_string(),
        })
    }

    fn base(&mut self) -> Result<Expr, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(ExprError::UnbalancedParens { offset: self.pos });
                }
                Ok(e)
            }
            Some(b'0'..=b'9') => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(ExprError::Parse {
                offset: self.pos,
                message: format!("unexpected character `{}`", c as char),
            }),
            None => Err(ExprError::Parse {
                offset: self.pos,
                message: "unexpected end of input".into(),
            }),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        let int_part = &self.src[start..self.pos];
        let mut frac_part = "";
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let fstart = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            frac_part = &self.src[fstart..self.pos];
            if frac_part.is_empty() {
                return Err(ExprError::MalformedNumber {
                    offset: start,
                    message: "digits required after decimal point".into(),
                });
            }
        }
        let mut exp10: i64 = 0;
        if matches!(self.peek(), Some(b'e' | b'E')) {
            // Only treat as scientific notation when followed by a digit or
            // sign+digit; otherwise `e` starts an identifier (e.g. `2*e1`
            // is a parse error while `2e1` is 20).
            let save = self.pos;
            self.pos += 1;
            let sign = match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    1
                }
                Some(b'-') => {
                    self.pos += 1;
                    -1
                }
                _ => 1,
            };
            if matches!(self.peek(), Some(b'0'..=b'9')) {
                let estart = self.pos;
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
                exp10 = sign
                    * self.src[estart..self.pos].parse::<i64>().map_err(|e| {
                        ExprError::MalformedNumber {
                            offset: estart,
                            message: e.to_string(),
                        }
                    })?;
            } else {
                self.pos = save;
            }
        }
        let digits = format!("{int_part}{frac_part}");
        let mantissa = BigInt::from_str(&digits).map_err(|e| ExprError::MalformedNumber {
            offset: start,
            message: e.to_string(),
        })?;
        let shift = exp10 - frac_part.len() as i64;
        let ten = BigInt::from(10);
        let rat = if shift >= 0 {
            Rat::from_integer(mantissa * ten.pow(shift as u64))
        } else {
            Rat::new(mantissa, ten.pow((-shift) as u64))
        };
        Ok(Expr::num(QC::from_rat(rat)))
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if name == "i" {
            return Ok(Expr::imag());
        }
        if name == "sqrt" || Func::from_name(name).is_some() {
            return self.call(name, start);
        }
        if let Some(allowed) = self.allowed {
            if !allowed.contains(name) {
                return Err(ExprError::UnknownIdentifier {
                    name: name.to_string(),
                    offset: start,
                });
            }
        }
        Ok(Expr::Sym(Symbol::new(name)))
    }

    fn call(&mut self, name: &str, offset: usize) -> Result<Expr, ExprError> {
        if !self.eat(b'(') {
            return Err(ExprError::Parse {
                offset: self.pos,
                message: format!("expected `(` after function `{name}`"),
            });
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(ExprError::UnbalancedParens { offset: self.pos });
        }
        if name == "sqrt" {
            if args.len() != 1 {
                return Err(ExprError::Arity {
                    func: "sqrt",
                    expected: 1,
                    got: args.len(),
                });
            }
            return Ok(Expr::sqrt(args.pop().unwrap()));
        }
        let func = Func::from_name(name).expect("checked by caller");
        if args.len() != func.arity() {
            return Err(ExprError::Arity {
                func: func.name(),
                expected: func.arity(),
                got: args.len(),
            });
        }
        let _ = offset;
        Ok(Expr::Fun(func, args))
    }
}

/// Negate, folding literals and flattening into an existing product.
fn neg_flat(e: Expr) -> Expr {
    match e {
        Expr::Num(q) => Expr::Num(&QC::zero() - &q),
        Expr::Mul(mut fs) => {
            match fs.first_mut() {
                Some(Expr::Num(q)) => *q = &QC::zero() - &*q,
                _ => fs.insert(0, Expr::int(-1)),
            }
            Expr::Mul(fs)
        }
        other => Expr::Mul(vec![Expr::int(-1), other]),
    }
}

/// Append an additive term, folding literal + literal.
fn push_term(terms: &mut Vec<Expr>, t: Expr) {
    if let (Some(Expr::Num(a)), Expr::Num(b)) = (terms.last(), &t) {
        let folded = a + b;
        *terms.last_mut().unwrap() = Expr::Num(folded);
        return;
    }
    terms.push(t);
}

/// Append a multiplicative factor, folding literal * literal.
fn push_factor(factors: &mut Vec<Expr>, fct: Expr) {
    if let (Some(Expr::Num(a)), Expr::Num(b)) = (factors.last(), &fct) {
        let folded = a * b;
        *factors.last_mut().unwrap() = Expr::Num(folded);
        return;
    }
    factors.push(fct);
}

/// Append `1/f`, folding literal / literal when exact.
fn push_factor_inverse(factors: &mut Vec<Expr>, fct: Expr) {
    if let Expr::Num(b) = &fct {
        if !b.is_zero() {
            if let Some(Expr::Num(a)) = factors.last() {
                let folded = a / b;
                *factors.last_mut().unwrap() = Expr::Num(folded);
                return;
            }
            // 1/b is exact for literals.
            factors.push(Expr::Num(b.inv().expect("nonzero literal")));
            return;
        }
    }
    factors.push(Expr::pow(fct, Rat::from_integer(BigInt::from(-1))));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt(src: &str) -> String {
        parse_expression(src).unwrap().to_string()
    }

    #[test]
    fn parses_and_round_trips() {
        let printed = rt("a1/cos(l*x2)^2");
        assert_eq!(printed, "a1/cos(l*x2)^2");
        assert_eq!(rt(&printed), printed);

        for src in [
            "x + y - 2*z",
            "1/2*p_u^2 - 3/4*u",
            "Sk(chi,x1)^2",
            "sqrt(x^2 + y^2)",
            "(1+2*i)*x",
            "cos(theta)/sin(theta)^2",
            "x^(-2) + y^(3/2)",
            "-x - y",
            "exp(2*t)/(a + b)",
        ] {
            let once = rt(src);
            assert_eq!(rt(&once), once, "fixed point failed for {src}");
        }
    }

    #[test]
    fn exact_decimal_and_scientific_literals() {
        assert_eq!(
            parse_expression("1.25").unwrap(),
            Expr::ratio(5, 4),
            "decimals are exact rationals"
        );
        assert_eq!(parse_expression("1e-3").unwrap(), Expr::ratio(1, 1000));
        assert_eq!(parse_expression("2.5e2").unwrap(), Expr::int(250));
    }

    #[test]
    fn folds_literal_arithmetic() {
        assert_eq!(parse_expression("3/2").unwrap(), Expr::ratio(3, 2));
        assert_eq!(parse_expression("-3").unwrap(), Expr::int(-3));
        assert_eq!(parse_expression("2 - 5").unwrap(), Expr::int(-3));
        let z = parse_expression("(1+2*i)").unwrap();
        match z {
            Expr::Num(q) => {
                assert_eq!(q.re, Rat::from_integer(1.into()));
                assert_eq!(q.im, Rat::from_integer(2.into()));
            }
            other => panic!("expected literal, got {other:?}"),
        }
    }

    #[test]
    fn error_positions() {
        match parse_expression("2*") {
            Err(ExprError::Parse { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_expression("(x + y") {
            Err(ExprError::UnbalancedParens { .. }) => {}
            other => panic!("expected paren error, got {other:?}"),
        }
        let mut allowed = BTreeSet::new();
        allowed.insert("x".to_string());
        match parse_with_symbols("x + bogus", &allowed) {
            Err(ExprError::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "bogus");
                assert_eq!(offset, 4);
            }
            other => panic!("expected unknown identifier, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_arity_and_exponents() {
        assert!(matches!(
            parse_expression("Sk(x)"),
            Err(ExprError::Arity { .. })
        ));
        assert!(matches!(
            parse_expression("x^(1/0)"),
            Err(ExprError::InvalidExponent { .. })
        ));
        assert!(matches!(
            parse_expression("x^y"),
            Err(ExprError::InvalidExponent { .. })
        ));
    }
}
