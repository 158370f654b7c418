//! Exact rational arithmetic.
//!
//! Every probability, potential, and work counter in the system is a
//! `Rational`: an arbitrary-precision fraction kept in canonical form
//! (reduced, denominator positive). There is no floating point anywhere in
//! the pipeline; `0.6` in source text is the fraction 3/5.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// An exact rational number in canonical form.
///
/// Canonical form means: numerator and denominator share no common factor,
/// the denominator is strictly positive, and zero is represented as 0/1.
/// The wrapped [`BigRational`] maintains this invariant on construction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Default for Rational {
    fn default() -> Self {
        Rational::zero()
    }
}

impl Rational {
    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Rational(BigRational::from_integer(BigInt::from(n)))
    }

    /// Build `num/den`. Panics if `den` is zero; parsing guards against that.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational with zero denominator");
        Rational(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn from_bigint(num: BigInt, den: BigInt) -> Self {
        assert!(!den.is_zero(), "rational with zero denominator");
        Rational(BigRational::new(num, den))
    }

    /// 2^exp for a (possibly negative) exponent; used for the mass floor.
    pub fn pow2(exp: i32) -> Self {
        let two = BigInt::from(2);
        if exp >= 0 {
            Rational(BigRational::from_integer(two.pow(exp as u32)))
        } else {
            Rational(BigRational::new(BigInt::one(), two.pow((-exp) as u32)))
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_one()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> Self {
        assert!(!self.is_zero(), "reciprocal of zero");
        Rational(self.0.recip())
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// True iff the value lies in the closed interval [0, 1].
    pub fn in_unit_interval(&self) -> bool {
        !self.is_negative() && self.0 <= BigRational::one()
    }

    /// Parse a source literal: an integer (`2`), a fraction (`1/3`), or a
    /// decimal (`0.6`, which becomes exactly 3/5). Returns `None` for
    /// malformed literals or a zero denominator.
    pub fn parse_literal(s: &str) -> Option<Self> {
        if let Some((n, d)) = s.split_once('/') {
            let num = BigInt::from_str(n.trim()).ok()?;
            let den = BigInt::from_str(d.trim()).ok()?;
            if den.is_zero() {
                return None;
            }
            Some(Rational(BigRational::new(num, den)))
        } else if let Some((int_part, frac_part)) = s.split_once('.') {
            if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let (neg, int_digits) = match int_part.strip_prefix('-') {
                Some(rest) => (true, rest),
                None => (false, int_part),
            };
            let int = BigInt::from_str(if int_digits.is_empty() { "0" } else { int_digits }).ok()?;
            if int.is_negative() {
                return None; // e.g. "--1.5"
            }
            let frac = BigInt::from_str(frac_part).ok()?;
            let scale = BigInt::from(10).pow(frac_part.len() as u32);
            let num = int * &scale + frac;
            Some(Rational(BigRational::new(if neg { -num } else { num }, scale)))
        } else {
            let num = BigInt::from_str(s.trim()).ok()?;
            Some(Rational(BigRational::from_integer(num)))
        }
    }

    /// Exact decimal rendering with at most `max_digits` fractional digits,
    /// if one exists (i.e. the reduced denominator is of the form 2^a 5^b
    /// with max(a, b) <= max_digits). `3/5` renders as `0.6`; `1/3` has no
    /// exact decimal and yields `None`.
    pub fn to_exact_decimal(&self, max_digits: u32) -> Option<String> {
        if self.is_integer() {
            return Some(self.numer().to_string());
        }
        let mut den = self.denom().clone();
        let mut twos = 0u32;
        let mut fives = 0u32;
        let two = BigInt::from(2);
        let five = BigInt::from(5);
        while (&den % &two).is_zero() {
            den /= &two;
            twos += 1;
        }
        while (&den % &five).is_zero() {
            den /= &five;
            fives += 1;
        }
        if !den.is_one() {
            return None;
        }
        let digits = twos.max(fives);
        if digits > max_digits {
            return None;
        }
        let scale = BigInt::from(10).pow(digits);
        let scaled = (self.numer() * &scale) / self.denom();
        let neg = scaled.is_negative();
        let mut body = scaled.abs().to_string();
        while body.len() <= digits as usize {
            body.insert(0, '0');
        }
        let split = body.len() - digits as usize;
        let (int_part, frac_part) = body.split_at(split);
        let frac_trimmed = frac_part.trim_end_matches('0');
        let frac_final = if frac_trimmed.is_empty() { frac_part } else { frac_trimmed };
        Some(format!("{}{}.{}", if neg { "-" } else { "" }, int_part, frac_final))
    }

    /// Decimal approximation rounded (half-up) to `digits` fractional
    /// digits, for report text next to the exact fraction.
    pub fn approx_decimal(&self, digits: u32) -> String {
        let scale = BigInt::from(10).pow(digits);
        let scaled = &self.0 * BigRational::from_integer(scale.clone());
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let rounded = if scaled.is_negative() { (scaled - half).ceil() } else { (scaled + half).floor() };
        let n = rounded.to_integer();
        let neg = n.is_negative();
        let mut body = n.abs().to_string();
        while body.len() <= digits as usize {
            body.insert(0, '0');
        }
        let split = body.len() - digits as usize;
        let (int_part, frac_part) = body.split_at(split);
        format!("{}{}.{}", if neg { "-" } else { "" }, int_part, frac_part)
    }

    /// Lossy conversion for display ordering and progress output only;
    /// never used in any computation.
    pub fn to_f64_lossy(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Rational {
    /// Canonical source form: `2`, `-7`, `1/3`, `8/3`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident) => {
        impl $trait for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((self.0).$method(rhs.0))
            }
        }
        impl<'a> $trait<&'a Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
        impl<'a> $trait<&'a Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational((self.0).$method(&rhs.0))
            }
        }
    };
}

binop!(Add, add);
binop!(Sub, sub);
binop!(Mul, mul);

impl Div for Rational {
    type Output = Rational;
    fn div(self, rhs: Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational(self.0 / rhs.0)
    }
}

impl<'a> Div<&'a Rational> for &'a Rational {
    type Output = Rational;
    fn div(self, rhs: &'a Rational) -> Rational {
        assert!(!rhs.is_zero(), "division by zero rational");
        Rational(&self.0 / &rhs.0)
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl<'a> Neg for &'a Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl<'a> AddAssign<&'a Rational> for Rational {
    fn add_assign(&mut self, rhs: &'a Rational) {
        self.0 += &rhs.0;
    }
}

impl SubAssign for Rational {
    fn sub_assign(&mut self, rhs: Rational) {
        self.0 -= rhs.0;
    }
}

impl MulAssign for Rational {
    fn mul_assign(&mut self, rhs: Rational) {
        self.0 *= rhs.0;
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |a, b| a + b)
    }
}

impl PartialEq<i64> for Rational {
    fn eq(&self, other: &i64) -> bool {
        *self == Rational::from_int(*other)
    }
}

impl PartialOrd<i64> for Rational {
    fn partial_cmp(&self, other: &i64) -> Option<Ordering> {
        self.partial_cmp(&Rational::from_int(*other))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn literals_are_exact() {
        assert_eq!(Rational::parse_literal("0.6").unwrap(), Rational::new(3, 5));
        assert_eq!(Rational::parse_literal("1/3").unwrap(), Rational::new(1, 3));
        assert_eq!(Rational::parse_literal("2").unwrap(), Rational::from_int(2));
        assert_eq!(Rational::parse_literal("0.25").unwrap(), Rational::new(1, 4));
        assert_eq!(Rational::parse_literal("10/4").unwrap(), Rational::new(5, 2));
        assert!(Rational::parse_literal("1/0").is_none());
        assert!(Rational::parse_literal("0.x").is_none());
        assert!(Rational::parse_literal("").is_none());
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(Rational::new(3, 5).to_exact_decimal(6).as_deref(), Some("0.6"));
        assert_eq!(Rational::new(7, 5).to_exact_decimal(6).as_deref(), Some("1.4"));
        assert_eq!(Rational::new(1, 64).to_exact_decimal(6).as_deref(), Some("0.015625"));
        assert_eq!(Rational::new(1, 3).to_exact_decimal(6), None);
        assert_eq!(Rational::new(1, 128).to_exact_decimal(6), None);
        assert_eq!(Rational::from_int(2).to_exact_decimal(6).as_deref(), Some("2"));
        assert_eq!(Rational::new(8, 3).approx_decimal(6), "2.666667");
        assert_eq!(Rational::new(1, 2).approx_decimal(2), "0.50");
    }

    #[test]
    fn display_round_trips() {
        for r in [Rational::new(8, 3), Rational::from_int(0), Rational::new(-7, 2)] {
            assert_eq!(Rational::parse_literal(&r.to_string()).unwrap(), r);
        }
    }

    #[test]
    fn pow2_mass_floor() {
        assert_eq!(Rational::pow2(3), Rational::from_int(8));
        assert_eq!(Rational::pow2(-2), Rational::new(1, 4));
        let floor = Rational::pow2(-64);
        assert!(floor > Rational::zero());
        assert!(floor < Rational::new(1, 1_000_000_000));
    }

    fn arb_rational() -> impl Strategy<Value = Rational> {
        (-1000i64..1000, 1i64..1000).prop_map(|(n, d)| Rational::new(n, d))
    }

    proptest! {
        /// Canonical form: reduced, positive denominator, 0 = 0/1.
        #[test]
        fn canonical_form(r in arb_rational()) {
            use num_integer::Integer;
            prop_assert!(r.denom() > &BigInt::from(0));
            prop_assert!(r.numer().gcd(r.denom()) == BigInt::from(1) || r.is_zero());
            if r.is_zero() {
                prop_assert_eq!(r.denom(), &BigInt::from(1));
            }
        }

        /// Field laws on a sample: exactness of add/mul round trips.
        #[test]
        fn add_sub_cancel(a in arb_rational(), b in arb_rational()) {
            prop_assert_eq!(a.clone() + b.clone() - b.clone(), a.clone());
            prop_assert_eq!(&a + &b, &b + &a);
        }

        #[test]
        fn mul_div_cancel(a in arb_rational(), b in arb_rational()) {
            prop_assume!(!b.is_zero());
            prop_assert_eq!((a.clone() * b.clone()) / b.clone(), a);
        }

        /// An exact decimal, when it exists, parses back to the same value.
        #[test]
        fn decimal_parse_back(a in arb_rational()) {
            if let Some(d) = a.to_exact_decimal(6) {
                prop_assert_eq!(Rational::parse_literal(&d).unwrap(), a);
            }
        }
    }
}
