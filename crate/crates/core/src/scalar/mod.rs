//! Arithmetic backends.
//!
//! A run picks one backend: exact big rationals when identities must hold
//! bit-for-bit (induction consistency, nesting of shape vertices, the x*
//! interval), or a double-double float (106-bit significand) for long cocycle
//! statistics. The trait keeps the two from mixing inside a computation.

mod dyadic;

pub use dyadic::{Dyadic, Round};

use std::fmt;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{FromPrimitive, Signed, ToPrimitive, Zero};
use twofloat::TwoFloat;

use crate::{Error, Result};

/// Double-double scalar: an unevaluated sum of two `f64`s giving a 106-bit
/// significand.
pub type Dd = TwoFloat;

/// Exact scalar: arbitrary-precision rational.
pub type Rat = BigRational;

/// Which backend a run uses; selected by name on the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Exact,
    DoubleDouble,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Exact => "exact",
            Backend::DoubleDouble => "dd",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" | "rational" => Ok(Backend::Exact),
            "dd" | "float" | "double-double" => Ok(Backend::DoubleDouble),
            other => Err(Error::Malformed(format!(
                "unknown backend {other:?}; expected `exact` or `dd`"
            ))),
        }
    }
}

/// Relative tolerance for connection detection in the float backend. With a
/// 106-bit significand a difference this small signals exhausted precision
/// rather than a genuine near-connection of random lengths.
pub const CONNECTION_REL_TOL_LOG2: i32 = -40;

/// Scalar operations shared by the two backends.
pub trait Scalar:
    Clone + PartialEq + PartialOrd + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    const BACKEND: Backend;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_int(n: i64) -> Self;
    fn from_bigint(n: &BigInt) -> Self;
    /// `numer / 2^log2_denom`; how sampled data enters a backend.
    fn from_dyadic(numer: i64, log2_denom: u32) -> Self;
    /// Nearest representable value of an exact rational (identity for the
    /// exact backend).
    fn from_rational(r: &BigRational) -> Self;

    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn abs(&self) -> Self;

    fn is_zero(&self) -> bool;
    fn is_positive(&self) -> bool;
    fn is_negative(&self) -> bool {
        self.neg().is_positive()
    }

    fn to_f64(&self) -> f64;

    /// Backend equality used to detect connections: exact comparison for
    /// rationals, relative tolerance `2^-40` for floats.
    fn connection_eq(a: &Self, b: &Self) -> bool;

    /// Whether the induction should renormalize lengths periodically (floats
    /// underflow otherwise; rationals never rescale).
    fn renormalizes() -> bool {
        Self::BACKEND == Backend::DoubleDouble
    }

    /// Lossless round-trip text form (checkpoint files).
    fn encode(&self) -> String;
    fn decode(text: &str) -> Result<Self>;
}

impl Scalar for BigRational {
    const BACKEND: Backend = Backend::Exact;

    fn zero() -> Self {
        <BigRational as Zero>::zero()
    }
    fn one() -> Self {
        BigRational::from_integer(BigInt::from(1))
    }
    fn from_int(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn from_bigint(n: &BigInt) -> Self {
        BigRational::from_integer(n.clone())
    }
    fn from_dyadic(numer: i64, log2_denom: u32) -> Self {
        BigRational::new(BigInt::from(numer), BigInt::from(1u8) << log2_denom)
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }

    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }

    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_positive(&self) -> bool {
        Signed::is_positive(self)
    }
    fn is_negative(&self) -> bool {
        Signed::is_negative(self)
    }

    fn to_f64(&self) -> f64 {
        rat_to_f64(self)
    }

    fn connection_eq(a: &Self, b: &Self) -> bool {
        a == b
    }

    fn encode(&self) -> String {
        format!("{}/{}", self.numer(), self.denom())
    }

    fn decode(text: &str) -> Result<Self> {
        let (n, d) = text
            .split_once('/')
            .ok_or_else(|| Error::Malformed(format!("bad rational {text:?}")))?;
        let n: BigInt = n
            .parse()
            .map_err(|_| Error::Malformed(format!("bad numerator {n:?}")))?;
        let d: BigInt = d
            .parse()
            .map_err(|_| Error::Malformed(format!("bad denominator {d:?}")))?;
        if d.is_zero() {
            return Err(Error::Malformed("zero denominator".into()));
        }
        Ok(BigRational::new(n, d))
    }
}

impl Scalar for TwoFloat {
    const BACKEND: Backend = Backend::DoubleDouble;

    fn zero() -> Self {
        TwoFloat::from(0.0)
    }
    fn one() -> Self {
        TwoFloat::from(1.0)
    }
    fn from_int(n: i64) -> Self {
        TwoFloat::from(n)
    }
    fn from_bigint(n: &BigInt) -> Self {
        big_to_dd(n)
    }
    fn from_dyadic(numer: i64, log2_denom: u32) -> Self {
        // power-of-two division is exact
        TwoFloat::from(numer) / TwoFloat::from(2.0f64.powi(log2_denom as i32))
    }
    fn from_rational(r: &BigRational) -> Self {
        dd_div(big_to_dd(r.numer()), big_to_dd(r.denom()))
    }

    fn add(&self, o: &Self) -> Self {
        *self + *o
    }
    fn sub(&self, o: &Self) -> Self {
        *self - *o
    }
    fn mul(&self, o: &Self) -> Self {
        *self * *o
    }
    fn div(&self, o: &Self) -> Self {
        dd_div(*self, *o)
    }
    fn neg(&self) -> Self {
        -*self
    }
    fn abs(&self) -> Self {
        TwoFloat::abs(self)
    }

    fn is_zero(&self) -> bool {
        self.hi() == 0.0 && self.lo() == 0.0
    }
    fn is_positive(&self) -> bool {
        self.hi() > 0.0 || (self.hi() == 0.0 && self.lo() > 0.0)
    }
    fn is_negative(&self) -> bool {
        self.hi() < 0.0 || (self.hi() == 0.0 && self.lo() < 0.0)
    }

    fn to_f64(&self) -> f64 {
        self.hi() + self.lo()
    }

    fn connection_eq(a: &Self, b: &Self) -> bool {
        let diff = TwoFloat::abs(&(*a - *b));
        let scale = TwoFloat::abs(a).max(TwoFloat::abs(b));
        diff <= scale * TwoFloat::from(2.0f64.powi(CONNECTION_REL_TOL_LOG2))
    }

    fn encode(&self) -> String {
        format!("dd:{:016x}:{:016x}", self.hi().to_bits(), self.lo().to_bits())
    }

    fn decode(text: &str) -> Result<Self> {
        let rest = text
            .strip_prefix("dd:")
            .ok_or_else(|| Error::Malformed(format!("bad dd scalar {text:?}")))?;
        let (h, l) = rest
            .split_once(':')
            .ok_or_else(|| Error::Malformed(format!("bad dd scalar {text:?}")))?;
        let hi = u64::from_str_radix(h, 16)
            .map_err(|_| Error::Malformed(format!("bad dd scalar {text:?}")))?;
        let lo = u64::from_str_radix(l, 16)
            .map_err(|_| Error::Malformed(format!("bad dd scalar {text:?}")))?;
        Ok(TwoFloat::from(f64::from_bits(hi)) + f64::from_bits(lo))
    }
}

// ---------------------------------------------------------------------------
// accurate double-double elementary operations
//
// twofloat 0.8's TwoFloat/TwoFloat division skips the fma in its residual
// step and its exp is ~1e-14; both are refined here to full double-double
// accuracy. Everything in the crate routes through these wrappers.

/// Full-precision double-double division (two Newton refinements of the
/// `f64` quotient).
pub fn dd_div(a: Dd, b: Dd) -> Dd {
    debug_assert!(b.hi() != 0.0);
    let q0 = a.hi() / b.hi();
    let r0 = a - b * q0;
    let q1 = r0.hi() / b.hi();
    let d = Dd::new_add(q0, q1);
    let r1 = a - b * d;
    d + r1.hi() / b.hi()
}

pub fn dd_recip(b: Dd) -> Dd {
    dd_div(Dd::from(1.0), b)
}

/// Full-precision `exp`: range reduction by `ln 2`, then a degree-24 Taylor
/// tail on `|r| <= ln2/2`.
pub fn dd_exp(x: Dd) -> Dd {
    let k = (x.hi() / std::f64::consts::LN_2).round();
    if !(k.abs() < 700.0) {
        // |x| beyond ~485: underflow/overflow territory for our uses
        return Dd::from(x.hi().exp());
    }
    let r = x - twofloat::consts::LN_2 * k;
    // sum_{n<=24} r^n / n!, Horner form
    let mut acc = Dd::from(1.0);
    for n in (1..=24u32).rev() {
        acc = Dd::from(1.0) + dd_div(acc * r, Dd::from(f64::from(n)));
    }
    // scale by 2^k in two exact power-of-two factors
    let k = k as i32;
    let half = k / 2;
    acc * 2.0f64.powi(half) * 2.0f64.powi(k - half)
}

/// Full-precision `ln` via one Newton step off the `f64` seed.
pub fn dd_ln(x: Dd) -> Dd {
    debug_assert!(x.hi() > 0.0);
    let y0 = x.hi().ln();
    let e = dd_exp(Dd::from(-y0)) * x;
    // y1 = y0 + (x e^{-y0} - 1) - (x e^{-y0} - 1)^2 / 2
    let d = e - Dd::from(1.0);
    Dd::from(y0) + d - d * d * 0.5
}

/// `f64` projections of the entries of `v` divided by their sum.
///
/// Exact-backend lengths deep in an orbit underflow `f64` individually; the
/// normalized ratios stay representable.
pub fn normalized_f64s<S: Scalar>(v: &[S]) -> Vec<f64> {
    let mut total = S::zero();
    for x in v {
        total = total.add(x);
    }
    v.iter().map(|x| x.div(&total).to_f64()).collect()
}

/// `f64` value of a big rational, correct even when numerator and denominator
/// individually overflow `f64`.
pub fn rat_to_f64(r: &BigRational) -> f64 {
    big_ratio_to_f64(r.numer(), r.denom())
}

/// `f64` value of `num/den` via bit-length normalization.
pub fn big_ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    assert!(!den.is_zero());
    let sign = if (num.sign() == Sign::Minus) ^ (den.sign() == Sign::Minus) {
        -1.0
    } else {
        1.0
    };
    let num = num.abs();
    let den = den.abs();
    // Scale so the integer quotient carries ~80 significant bits.
    let shift: i64 = 80 + den.bits() as i64 - num.bits() as i64;
    let q = if shift >= 0 {
        (num << shift as u64) / &den
    } else {
        num / (&den << (-shift) as u64)
    };
    let mantissa = q.to_f64().unwrap_or(f64::INFINITY);
    sign * ldexp(mantissa, -shift as i32)
}

/// `x * 2^e` with exponent clamping handled by repeated `powi` factors.
pub fn ldexp(x: f64, e: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    // split to avoid overflow of 2^e itself
    let half = e / 2;
    x * 2.0f64.powi(half) * 2.0f64.powi(e - half)
}

fn big_to_dd(n: &BigInt) -> TwoFloat {
    let hi = n.to_f64().unwrap_or(f64::INFINITY);
    if !hi.is_finite() {
        return TwoFloat::from(hi);
    }
    let hi_int = BigInt::from_f64(hi).unwrap();
    let lo = (n - hi_int).to_f64().unwrap_or(0.0);
    TwoFloat::from(hi) + lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_ops() {
        let a = Rat::from_dyadic(3, 1); // 3/2
        let b = Rat::from_int(2);
        assert_eq!(Scalar::to_f64(&a.add(&b)), 3.5);
        assert_eq!(Scalar::to_f64(&a.mul(&b)), 3.0);
        assert!(Rat::connection_eq(&a, &a.clone()));
        assert!(!Rat::connection_eq(&a, &b));
    }

    #[test]
    fn rat_to_f64_handles_huge_values() {
        let big = BigInt::from(1u8) << 2000u32;
        let r = BigRational::new(big.clone() * 3, big);
        assert_eq!(rat_to_f64(&r), 3.0);
        let tiny = BigRational::new(BigInt::from(1), BigInt::from(1u8) << 400u32);
        let f = rat_to_f64(&tiny);
        assert!((f.log2() + 400.0).abs() < 1e-9);
    }

    #[test]
    fn dd_connection_tolerance() {
        let one = Dd::from(1.0);
        let close = one + 2.0f64.powi(-50);
        let apart = one + 2.0f64.powi(-30);
        assert!(Dd::connection_eq(&one, &close));
        assert!(!Dd::connection_eq(&one, &apart));
    }

    #[test]
    fn dd_matches_rational_oracle() {
        // same sequence of ops in both backends agrees to ~1e-30
        let steps: [(i64, u32); 4] = [(7, 1), (-3, 4), (11, 3), (5, 7)];
        let mut r = Rat::one();
        let mut f = Dd::one();
        for (n, k) in steps {
            let rr = Rat::from_dyadic(n, k);
            let ff = Dd::from_dyadic(n, k);
            r = r.mul(&rr).add(&rr);
            f = f.mul(&ff).add(&ff);
        }
        let err = (Scalar::to_f64(&f) - Scalar::to_f64(&r)).abs();
        assert!(err < 1e-25, "err {err}");
    }

    #[test]
    fn refined_dd_ops_reach_full_precision() {
        let third = dd_div(Dd::from(1.0), Dd::from(3.0));
        let err = (third * Dd::from(3.0) - Dd::from(1.0)).abs();
        assert!(err.hi() < 1e-30, "div err {err:?}");
        let e = dd_exp(Dd::from(1.0));
        let err = (e - twofloat::consts::E).abs();
        assert!(err.hi() < 1e-30, "exp err {err:?}");
        let l2 = dd_ln(Dd::from(2.0));
        let err = (l2 - twofloat::consts::LN_2).abs();
        assert!(err.hi() < 1e-30, "ln err {err:?}");
        // exp/ln roundtrip at a generic point
        let x = Dd::from(0.7312528);
        let err = (dd_ln(dd_exp(x)) - x).abs();
        assert!(err.hi() < 1e-30, "roundtrip err {err:?}");
        // large-argument exp against exact rational squaring oracle:
        // exp(20) = exp(10)^2
        let a = dd_exp(Dd::from(20.0));
        let b = dd_exp(Dd::from(10.0));
        let rel = ((a - b * b) / a).abs();
        assert!(rel.hi() < 1e-29, "scaling err {rel:?}");
    }

    #[test]
    fn encode_roundtrip() {
        let r = Rat::from_dyadic(-17, 5);
        assert_eq!(Rat::decode(&r.encode()).unwrap(), r);
        let f = Dd::from(1.0) / Dd::from(3.0);
        let back = Dd::decode(&f.encode()).unwrap();
        assert_eq!(back.hi(), f.hi());
        assert_eq!(back.lo(), f.lo());
    }
}
