use std::cmp::Ordering;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Rounding direction for precision-capped operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Round {
    /// Toward minus infinity.
    Down,
    /// Toward plus infinity.
    Up,
}

/// Arbitrary-precision dyadic number `m * 2^e` with exact add/sub/mul and
/// directed rounding.
///
/// The wandering-interval sweep iterates interval endpoints through an affine
/// map for tens of thousands of steps; outward-rounded dyadic enclosures keep
/// that verification rigorous where double-double noise would drown the gaps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dyadic {
    m: BigInt,
    e: i64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Dyadic {
            m: BigInt::zero(),
            e: 0,
        }
    }

    pub fn from_int(n: i64) -> Self {
        Dyadic {
            m: BigInt::from(n),
            e: 0,
        }
    }

    /// Exact conversion; every finite `f64` is dyadic.
    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "dyadic from non-finite f64");
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { -1i64 } else { 1 };
        let biased = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mant, exp) = if biased == 0 {
            (frac, -1074i64) // subnormal
        } else {
            (frac | (1u64 << 52), biased - 1075)
        };
        Dyadic {
            m: BigInt::from(sign) * BigInt::from(mant),
            e: exp,
        }
    }

    /// Exact conversion of a double-double value (sum of the two legs).
    pub fn from_dd(x: twofloat::TwoFloat) -> Self {
        Self::from_f64(x.hi()).add(&Self::from_f64(x.lo()))
    }

    pub fn is_zero(&self) -> bool {
        self.m.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.m.is_positive()
    }

    pub fn neg(&self) -> Self {
        Dyadic {
            m: -&self.m,
            e: self.e,
        }
    }

    fn aligned(&self, other: &Self) -> (BigInt, BigInt, i64) {
        let e = self.e.min(other.e);
        let a = &self.m << (self.e - e) as u64;
        let b = &other.m << (other.e - e) as u64;
        (a, b, e)
    }

    pub fn add(&self, other: &Self) -> Self {
        if self.is_zero() {
            return other.clone();
        }
        if other.is_zero() {
            return self.clone();
        }
        let (a, b, e) = self.aligned(other);
        Dyadic { m: a + b, e }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        Dyadic {
            m: &self.m * &other.m,
            e: self.e + other.e,
        }
    }

    /// Directed division to `prec` significant bits.
    pub fn div(&self, other: &Self, prec: u64, rnd: Round) -> Self {
        assert!(!other.is_zero(), "dyadic division by zero");
        if self.is_zero() {
            return Self::zero();
        }
        let negative = self.m.is_negative() ^ other.m.is_negative();
        let na = self.m.magnitude();
        let nb = other.m.magnitude();
        // scale numerator so the quotient carries >= prec+1 bits
        let shift = (prec + 2 + nb.bits()).saturating_sub(na.bits()) + 8;
        let scaled = BigInt::from(na.clone()) << shift;
        let (q, r) = num_integer::Integer::div_rem(&scaled, &BigInt::from(nb.clone()));
        let inexact = !r.is_zero();
        let mut mag = q;
        // directed adjustment on the magnitude
        let round_away = match (negative, rnd) {
            (false, Round::Up) => inexact,
            (true, Round::Down) => inexact,
            _ => false,
        };
        if round_away {
            mag += BigInt::one();
        }
        let m = if negative { -mag } else { mag };
        Dyadic {
            m,
            e: self.e - other.e - shift as i64,
        }
        .round(prec, rnd)
    }

    /// Directed rounding to at most `prec` mantissa bits.
    pub fn round(&self, prec: u64, rnd: Round) -> Self {
        let bits = self.m.magnitude().bits();
        if bits <= prec {
            return self.clone();
        }
        let drop = bits - prec;
        let negative = self.m.is_negative();
        let mag = self.m.magnitude();
        let kept = BigInt::from(mag >> drop);
        let lost = !(self.m.magnitude() & ((num_bigint::BigUint::one() << drop) - 1u8)).is_zero();
        let round_away = match (negative, rnd) {
            (false, Round::Up) => lost,
            (true, Round::Down) => lost,
            _ => false,
        };
        let mut kept = kept;
        if round_away {
            kept += BigInt::one();
        }
        Dyadic {
            m: if negative { -kept } else { kept },
            e: self.e + drop as i64,
        }
    }

    pub fn cmp(&self, other: &Self) -> Ordering {
        if self.e == other.e {
            return self.m.cmp(&other.m);
        }
        match (self.m.sign(), other.m.sign()) {
            (Sign::Minus, Sign::NoSign) | (Sign::Minus, Sign::Plus) | (Sign::NoSign, Sign::Plus) => {
                return Ordering::Less
            }
            (Sign::Plus, Sign::NoSign) | (Sign::Plus, Sign::Minus) | (Sign::NoSign, Sign::Minus) => {
                return Ordering::Greater
            }
            (Sign::NoSign, Sign::NoSign) => return Ordering::Equal,
            _ => {}
        }
        let (a, b, _) = self.aligned(other);
        a.cmp(&b)
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.m.magnitude().bits();
        let (top, extra) = if bits > 63 {
            let shift = bits - 63;
            (
                BigInt::from(self.m.magnitude() >> shift),
                shift as i64,
            )
        } else {
            (BigInt::from(self.m.magnitude().clone()), 0)
        };
        let sign = if self.m.is_negative() { -1.0 } else { 1.0 };
        let mant: f64 = top.to_string().parse().unwrap();
        sign * super::ldexp(mant, (self.e + extra) as i32)
    }

    pub fn to_rational(&self) -> BigRational {
        if self.e >= 0 {
            BigRational::from_integer(&self.m << self.e as u64)
        } else {
            BigRational::new(self.m.clone(), BigInt::one() << (-self.e) as u64)
        }
    }

    pub fn from_rational_directed(r: &BigRational, prec: u64, rnd: Round) -> Self {
        let num = Dyadic {
            m: r.numer().clone(),
            e: 0,
        };
        let den = Dyadic {
            m: r.denom().clone(),
            e: 0,
        };
        num.div(&den, prec, rnd)
    }

    pub fn mantissa_bits(&self) -> u64 {
        self.m.magnitude().bits()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rat(d: &Dyadic) -> BigRational {
        d.to_rational()
    }

    #[test]
    fn exact_ring_ops_match_rationals() {
        let a = Dyadic::from_f64(1.375);
        let b = Dyadic::from_f64(-0.03125);
        assert_eq!(rat(&a.add(&b)), rat(&a) + rat(&b));
        assert_eq!(rat(&a.sub(&b)), rat(&a) - rat(&b));
        assert_eq!(rat(&a.mul(&b)), rat(&a) * rat(&b));
    }

    #[test]
    fn directed_division_brackets_truth() {
        let a = Dyadic::from_int(1);
        let b = Dyadic::from_int(3);
        let lo = a.div(&b, 64, Round::Down);
        let hi = a.div(&b, 64, Round::Up);
        let third = BigRational::new(BigInt::one(), BigInt::from(3));
        assert!(rat(&lo) < third && third < rat(&hi));
        assert!((&rat(&hi) - &rat(&lo)) < BigRational::new(BigInt::one(), BigInt::one() << 60u32));
        // negative numerator flips which side gets the adjustment
        let lo_n = a.neg().div(&b, 64, Round::Down);
        let hi_n = a.neg().div(&b, 64, Round::Up);
        assert!(rat(&lo_n) < -&third && -third < rat(&hi_n));
    }

    #[test]
    fn rounding_is_directed() {
        let x = Dyadic::from_rational_directed(
            &BigRational::new(BigInt::from(2u64.pow(40) + 1), BigInt::from(3)),
            200,
            Round::Down,
        );
        let down = x.round(20, Round::Down);
        let up = x.round(20, Round::Up);
        assert!(rat(&down) <= rat(&x) && rat(&x) <= rat(&up));
        assert!(down.mantissa_bits() <= 20 && up.mantissa_bits() <= 21);
    }

    #[test]
    fn comparisons() {
        let a = Dyadic::from_f64(0.1 + 0.2);
        let b = Dyadic::from_f64(0.3);
        assert_eq!(a.cmp(&b), Ordering::Greater); // the classic
        assert_eq!(Dyadic::zero().cmp(&b), Ordering::Less);
        assert_eq!(b.cmp(&b.clone()), Ordering::Equal);
    }

    #[test]
    fn f64_roundtrip() {
        for x in [0.0, 1.0, -2.5, 1e-300, 3.141592653589793, -1e280] {
            let d = Dyadic::from_f64(x);
            assert_eq!(d.to_f64(), x);
        }
    }
}
