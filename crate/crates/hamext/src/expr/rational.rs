//! Exact Gaussian-rational scalars `re + im*i` with `re, im` arbitrary
//! precision rationals. These are the only numeric literals the expression
//! tree stores, so constant folding never loses precision and printed
//! coefficients always round-trip.

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub type Rat = BigRational;

/// Exact complex rational.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QC {
    pub re: Rat,
    pub im: Rat,
}

impl QC {
    pub fn new(re: Rat, im: Rat) -> Self {
        QC { re, im }
    }

    pub fn from_int(n: i64) -> Self {
        QC {
            re: Rat::from_integer(BigInt::from(n)),
            im: Rat::zero(),
        }
    }

    pub fn from_rat(re: Rat) -> Self {
        QC {
            re,
            im: Rat::zero(),
        }
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        QC::from_rat(Rat::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn zero() -> Self {
        QC::from_int(0)
    }

    pub fn one() -> Self {
        QC::from_int(1)
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        QC {
            re: Rat::zero(),
            im: Rat::one(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.re.is_one() && self.im.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.im.is_zero()
    }

    /// True when the value is a real rational strictly greater than zero.
    pub fn is_positive_real(&self) -> bool {
        self.im.is_zero() && self.re.is_positive()
    }

    pub fn conj(&self) -> Self {
        QC {
            re: self.re.clone(),
            im: -self.im.clone(),
        }
    }

    /// |z|^2 as an exact rational.
    pub fn norm_sqr(&self) -> Rat {
        &self.re * &self.re + &self.im * &self.im
    }

    pub fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let n = self.norm_sqr();
        Some(QC {
            re: &self.re / &n,
            im: -(&self.im / &n),
        })
    }

    /// Exact integer power (negative exponents require a nonzero base).
    pub fn powi(&self, exp: i64) -> Option<Self> {
        let mut base = if exp < 0 { self.inv()? } else { self.clone() };
        let mut e = exp.unsigned_abs();
        let mut acc = QC::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &base;
            }
            base = &base * &base;
            e >>= 1;
        }
        Some(acc)
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(
            self.re.to_f64().unwrap_or(f64::NAN),
            self.im.to_f64().unwrap_or(f64::NAN),
        )
    }
}

impl Add for &QC {
    type Output = QC;
    fn add(self, rhs: &QC) -> QC {
        QC {
            re: &self.re + &rhs.re,
            im: &self.im + &rhs.im,
        }
    }
}

impl Sub for &QC {
    type Output = QC;
    fn sub(self, rhs: &QC) -> QC {
        QC {
            re: &self.re - &rhs.re,
            im: &self.im - &rhs.im,
        }
    }
}

impl Mul for &QC {
    type Output = QC;
    fn mul(self, rhs: &QC) -> QC {
        QC {
            re: &self.re * &rhs.re - &self.im * &rhs.im,
            im: &self.re * &rhs.im + &self.im * &rhs.re,
        }
    }
}

impl Div for &QC {
    type Output = QC;
    /// Panics on division by zero; callers check first.
    fn div(self, rhs: &QC) -> QC {
        let inv = rhs.inv().expect("QC division by zero");
        self * &inv
    }
}

impl Neg for &QC {
    type Output = QC;
    fn neg(self) -> QC {
        QC {
            re: -self.re.clone(),
            im: -self.im.clone(),
        }
    }
}

impl fmt::Display for QC {
    /// Matches the expression grammar: pure reals as `p/q`, pure imaginaries
    /// as `q*i` (or bare `i`), mixed values as `(re+im*i)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rat(r: &Rat) -> String {
            if r.denom().is_one() {
                format!("{}", r.numer())
            } else {
                format!("{}/{}", r.numer(), r.denom())
            }
        }
        if self.im.is_zero() {
            return write!(f, "{}", rat(&self.re));
        }
        let im_str = if self.im.is_one() {
            "i".to_string()
        } else if (-self.im.clone()).is_one() {
            "-i".to_string()
        } else {
            format!("{}*i", rat(&self.im))
        };
        if self.re.is_zero() {
            write!(f, "{im_str}")
        } else if self.im.is_positive() {
            write!(f, "({}+{})", rat(&self.re), im_str)
        } else {
            // im_str already starts with '-'
            write!(f, "({}{})", rat(&self.re), im_str)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_is_exact() {
        let a = QC::ratio(1, 3);
        let b = QC::ratio(1, 6);
        assert_eq!(&a + &b, QC::ratio(1, 2));
        let i = QC::i();
        assert_eq!(&i * &i, QC::from_int(-1));
        let z = QC::new(Rat::new(1.into(), 2.into()), Rat::new(3.into(), 4.into()));
        let w = &z * &z.inv().unwrap();
        assert!(w.is_one());
    }

    #[test]
    fn integer_powers() {
        let z = QC::new(Rat::from_integer(1.into()), Rat::from_integer(1.into()));
        // (1+i)^4 = -4
        assert_eq!(z.powi(4).unwrap(), QC::from_int(-4));
        assert_eq!(z.powi(-4).unwrap(), QC::ratio(-1, 4));
        assert!(QC::zero().powi(-1).is_none());
    }

    #[test]
    fn display_forms() {
        assert_eq!(QC::ratio(3, 2).to_string(), "3/2");
        assert_eq!(QC::i().to_string(), "i");
        assert_eq!((&QC::zero() - &QC::i()).to_string(), "-i");
        assert_eq!(
            (&QC::from_int(2) + &QC::i()).to_string(),
            "(2+i)".to_string()
        );
        assert_eq!((&QC::from_int(1) - &QC::i()).to_string(), "(1-i)");
    }
}
