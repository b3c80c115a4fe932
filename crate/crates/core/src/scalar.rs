//! Score arithmetic abstraction.
//!
//! Energy is always integer Wh ([`crate::Wh`]); utilities, strategy scores and
//! the average utility α are scores, and scores are generic over [`Scalar`].
//! `f64` gives fast approximate scoring; [`crate::Rational`] gives exact
//! arithmetic so that identities like `l + α·W = r` hold bit for bit.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Num, Signed};

use crate::Wh;

/// Number type used for utilities and strategy scores.
pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + Display + Send + Sync + 'static
{
    fn from_int(v: i64) -> Self;

    fn from_wh(v: Wh) -> Self {
        Self::from_int(v)
    }

    /// `numer / denom`; `denom` must be nonzero.
    fn from_frac(numer: i64, denom: i64) -> Self {
        Self::from_int(numer) / Self::from_int(denom)
    }

    /// Decimal input, kept to six fractional digits for exact types.
    fn from_decimal(v: f64) -> Self;

    fn floor(&self) -> Self;

    fn to_f64(&self) -> f64;

    /// Greatest integer not above `self`, saturating at the i64 range.
    fn floor_i64(&self) -> i64 {
        let f = self.floor().to_f64();
        if f >= i64::MAX as f64 {
            i64::MAX
        } else if f <= i64::MIN as f64 {
            i64::MIN
        } else {
            f as i64
        }
    }

    fn pow2(exp: u32) -> Self {
        let mut acc = Self::one();
        let two = Self::from_int(2);
        for _ in 0..exp {
            acc = acc * two.clone();
        }
        acc
    }

    /// Nearest multiple of one half, halves rounded up.
    fn round_half(&self) -> Self {
        let two = Self::from_int(2);
        let half = Self::from_frac(1, 2);
        (self.clone() * two.clone() + half).floor() / two
    }

    fn max_of(a: Self, b: Self) -> Self {
        if b > a {
            b
        } else {
            a
        }
    }
}

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_int(v: i64) -> Self {
                v as $t
            }

            fn from_decimal(v: f64) -> Self {
                v as $t
            }

            fn floor(&self) -> Self {
                <$t>::floor(*self)
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for Ratio<i128> {
    fn from_int(v: i64) -> Self {
        Ratio::from_integer(v as i128)
    }

    fn from_frac(numer: i64, denom: i64) -> Self {
        Ratio::new(numer as i128, denom as i128)
    }

    fn from_decimal(v: f64) -> Self {
        Ratio::new((v * 1e6).round() as i128, 1_000_000)
    }

    fn floor(&self) -> Self {
        Ratio::floor(self)
    }

    fn to_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    fn floor_i64(&self) -> i64 {
        let f = Ratio::floor(self).to_integer();
        f.clamp(i64::MIN as i128, i64::MAX as i128) as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    #[test]
    fn rational_is_exact() {
        let third = Rational::from_frac(1, 3);
        let sum = third.clone() + third.clone() + third;
        assert_eq!(sum, Rational::from_int(1));
        assert_eq!(Rational::from_frac(715, 2).floor_i64(), 357);
        assert_eq!(Rational::from_frac(-645, 2).floor_i64(), -323);
    }

    #[test]
    fn half_resolution_rounding() {
        assert_eq!(Rational::from_frac(515, 2).round_half(), Rational::from_frac(515, 2));
        assert_eq!(Rational::from_frac(1, 3).round_half(), Rational::from_frac(1, 2));
        assert_eq!(Rational::from_frac(1, 5).round_half(), Rational::from_int(0));
        assert_eq!((56.4f64).round_half(), 56.5);
        assert_eq!((-322.5f64).round_half(), -322.5);
    }

    #[test]
    fn powers_of_two() {
        assert_eq!(f64::pow2(0), 1.0);
        assert_eq!(Rational::pow2(5), Rational::from_int(32));
    }

    #[test]
    fn decimal_ingestion() {
        assert_eq!(Rational::from_decimal(34.0), Rational::from_int(34));
        assert_eq!(Rational::from_decimal(0.5), Rational::from_frac(1, 2));
    }
}
