//! Exact nonnegative scalars (traces, scales, coefficients) and signed
//! free-group parameters.
//!
//! Everything here is exact. A [`Scalar`] is a nonnegative rational, `+inf`,
//! or a positive square root of a rational that is not itself a perfect
//! square. Square roots only ever come out of the zero-excess solver and are
//! only ever consumed through their squares, so they are stored by their
//! square.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Deserializer, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    #[error("undefined form: {0}")]
    Undefined(&'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("negative value {0} where a nonnegative scalar is required")]
    Negative(String),
    #[error("result is not a rational or a single square root: {0}")]
    NotRepresentable(String),
    #[error("cannot parse `{0}` as an exact number")]
    Parse(String),
}

pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// Parses `p`, `p/q`, or a finite decimal such as `-0.125` into an exact rational.
pub fn parse_rational(s: &str) -> Result<BigRational, ArithError> {
    let t = s.trim();
    let bad = || ArithError::Parse(s.to_string());
    if let Some((p, q)) = t.split_once('/') {
        let p = BigInt::from_str(p.trim()).map_err(|_| bad())?;
        let q = BigInt::from_str(q.trim()).map_err(|_| bad())?;
        if q.is_zero() {
            return Err(ArithError::DivisionByZero);
        }
        return Ok(BigRational::new(p, q));
    }
    if let Some((whole, frac)) = t.split_once('.') {
        if frac.is_empty() || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let negative = whole.starts_with('-');
        let digits = format!("{}{}", whole.trim_start_matches(['-', '+']), frac);
        let mag = BigInt::from_str(&digits).map_err(|_| bad())?;
        let den = num_traits::pow(BigInt::from(10), frac.len());
        let r = BigRational::new(mag, den);
        return Ok(if negative { -r } else { r });
    }
    BigInt::from_str(t).map(BigRational::from_integer).map_err(|_| bad())
}

pub fn fmt_rational(r: &BigRational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Exact square root of a nonnegative rational, when one exists.
pub fn rational_sqrt(r: &BigRational) -> Option<BigRational> {
    if r.is_negative() {
        return None;
    }
    let n = r.numer().magnitude();
    let d = r.denom().magnitude();
    let sn = n.sqrt();
    let sd = d.sqrt();
    if &(&sn * &sn) == n && &(&sd * &sd) == d {
        Some(BigRational::new(
            BigInt::from_biguint(Sign::Plus, sn),
            BigInt::from_biguint(Sign::Plus, sd),
        ))
    } else {
        None
    }
}

fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Nonnegative exact scalar, possibly `+inf`, possibly a square root.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Scalar {
    Finite(BigRational),
    /// The positive root of the stored rational; the stored value is never a
    /// perfect square.
    Root(BigRational),
    Infinite,
}

impl Scalar {
    pub fn new(r: BigRational) -> Result<Self, ArithError> {
        if r.is_negative() {
            return Err(ArithError::Negative(fmt_rational(&r)));
        }
        Ok(Scalar::Finite(r))
    }

    pub fn zero() -> Self {
        Scalar::Finite(BigRational::zero())
    }

    pub fn one() -> Self {
        Scalar::Finite(BigRational::one())
    }

    pub fn int(n: u64) -> Self {
        Scalar::Finite(BigRational::from_integer(BigInt::from(n)))
    }

    /// `p/q`; panics on a zero denominator or a negative value, so only for literals.
    pub fn ratio(p: i64, q: i64) -> Self {
        Scalar::new(rat(p, q)).expect("nonnegative literal")
    }

    /// The positive scalar whose square is `sq`.
    pub fn from_square(sq: BigRational) -> Result<Self, ArithError> {
        if sq.is_negative() {
            return Err(ArithError::Negative(fmt_rational(&sq)));
        }
        Ok(match rational_sqrt(&sq) {
            Some(r) => Scalar::Finite(r),
            None => Scalar::Root(sq),
        })
    }

    /// `q * sqrt(d)`.
    pub fn radical(q: BigRational, d: BigRational) -> Result<Self, ArithError> {
        if q.is_negative() {
            return Err(ArithError::Negative(fmt_rational(&q)));
        }
        if d.is_negative() {
            return Err(ArithError::Negative(fmt_rational(&d)));
        }
        Scalar::from_square(&q * &q * d)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Scalar::Finite(r) if r.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Scalar::Finite(r) if r.is_one())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Scalar::Infinite)
    }

    pub fn is_rational(&self) -> bool {
        matches!(self, Scalar::Finite(_))
    }

    pub fn is_positive_finite(&self) -> bool {
        match self {
            Scalar::Finite(r) => r.is_positive(),
            Scalar::Root(_) => true,
            Scalar::Infinite => false,
        }
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            Scalar::Finite(r) => Some(r),
            _ => None,
        }
    }

    pub fn to_rational(&self) -> Result<BigRational, ArithError> {
        match self {
            Scalar::Finite(r) => Ok(r.clone()),
            Scalar::Root(_) => Err(ArithError::NotRepresentable(self.to_string())),
            Scalar::Infinite => Err(ArithError::Undefined("+inf is not a rational")),
        }
    }

    /// The exact square; always rational for finite scalars.
    pub fn square(&self) -> Result<BigRational, ArithError> {
        match self {
            Scalar::Finite(r) => Ok(r * r),
            Scalar::Root(sq) => Ok(sq.clone()),
            Scalar::Infinite => Err(ArithError::Undefined("square of +inf")),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Finite(r) => rational_to_f64(r),
            Scalar::Root(sq) => rational_to_f64(sq).sqrt(),
            Scalar::Infinite => f64::INFINITY,
        }
    }

    pub fn add(&self, other: &Scalar) -> Result<Scalar, ArithError> {
        match (self, other) {
            (Scalar::Infinite, _) | (_, Scalar::Infinite) => Ok(Scalar::Infinite),
            (Scalar::Finite(a), Scalar::Finite(b)) => Ok(Scalar::Finite(a + b)),
            (x, y) if x.is_zero() => Ok(y.clone()),
            (x, y) if y.is_zero() => Ok(x.clone()),
            _ => Err(ArithError::NotRepresentable(format!("{self} + {other}"))),
        }
    }

    pub fn sub(&self, other: &Scalar) -> Result<Scalar, ArithError> {
        match (self, other) {
            (Scalar::Infinite, Scalar::Infinite) => Err(ArithError::Undefined("inf - inf")),
            (Scalar::Infinite, _) => Ok(Scalar::Infinite),
            (_, Scalar::Infinite) => Err(ArithError::Negative("-inf".into())),
            (Scalar::Finite(a), Scalar::Finite(b)) => Scalar::new(a - b),
            (x, y) if y.is_zero() => Ok(x.clone()),
            (x, y) if x == y => Ok(Scalar::zero()),
            _ => Err(ArithError::NotRepresentable(format!("{self} - {other}"))),
        }
    }

    pub fn mul(&self, other: &Scalar) -> Result<Scalar, ArithError> {
        match (self, other) {
            (Scalar::Infinite, x) | (x, Scalar::Infinite) => {
                if x.is_zero() {
                    Err(ArithError::Undefined("0 * inf"))
                } else {
                    Ok(Scalar::Infinite)
                }
            }
            (Scalar::Finite(a), Scalar::Finite(b)) => Ok(Scalar::Finite(a * b)),
            (a, b) => Scalar::from_square(a.square()? * b.square()?),
        }
    }

    pub fn div(&self, other: &Scalar) -> Result<Scalar, ArithError> {
        if other.is_zero() {
            return Err(ArithError::DivisionByZero);
        }
        match (self, other) {
            (Scalar::Infinite, Scalar::Infinite) => Err(ArithError::Undefined("inf / inf")),
            (Scalar::Infinite, _) => Ok(Scalar::Infinite),
            (_, Scalar::Infinite) => Ok(Scalar::zero()),
            (Scalar::Finite(a), Scalar::Finite(b)) => Ok(Scalar::Finite(a / b)),
            (a, b) => Scalar::from_square(a.square()? / b.square()?),
        }
    }

    pub fn recip(&self) -> Result<Scalar, ArithError> {
        Scalar::one().div(self)
    }

    /// Sum of a sequence, `+inf` if any term is infinite.
    pub fn sum<'a>(items: impl IntoIterator<Item = &'a Scalar>) -> Result<Scalar, ArithError> {
        items.into_iter().try_fold(Scalar::zero(), |acc, x| acc.add(x))
    }
}

impl PartialOrd for Scalar {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scalar {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Scalar::Infinite, Scalar::Infinite) => Ordering::Equal,
            (Scalar::Infinite, _) => Ordering::Greater,
            (_, Scalar::Infinite) => Ordering::Less,
            (Scalar::Finite(a), Scalar::Finite(b)) => a.cmp(b),
            // both nonnegative, so squares order the same way
            (a, b) => a.square().unwrap().cmp(&b.square().unwrap()),
        }
    }
}

impl From<BigRational> for Scalar {
    /// Panics on negative input; use [`Scalar::new`] for checked construction.
    fn from(r: BigRational) -> Self {
        Scalar::new(r).expect("nonnegative rational")
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Finite(r) => f.write_str(&fmt_rational(r)),
            Scalar::Root(sq) => write!(f, "sqrt({})", fmt_rational(sq)),
            Scalar::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Scalar {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t == "inf" || t == "+inf" {
            return Ok(Scalar::Infinite);
        }
        if let Some(inner) = t.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
            return Scalar::from_square(parse_rational(inner)?);
        }
        Scalar::new(parse_rational(t)?)
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Scalar::Root(sq) => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("q", "1")?;
                m.serialize_entry("sqrt", &fmt_rational(sq))?;
                m.end()
            }
            other => s.serialize_str(&other.to_string()),
        }
    }
}

struct ScalarVisitor;

impl<'de> Visitor<'de> for ScalarVisitor {
    type Value = Scalar;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("\"p/q\", \"inf\", a nonnegative integer, or {\"q\": .., \"sqrt\": ..}")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Scalar, E> {
        v.parse().map_err(E::custom)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Scalar, E> {
        Ok(Scalar::int(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Scalar, E> {
        Scalar::new(int(v)).map_err(E::custom)
    }

    fn visit_map<A: de::MapAccess<'de>>(self, mut map: A) -> Result<Scalar, A::Error> {
        let mut q: Option<String> = None;
        let mut d: Option<String> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "q" => q = Some(map.next_value()?),
                "sqrt" => d = Some(map.next_value()?),
                other => return Err(de::Error::unknown_field(other, &["q", "sqrt"])),
            }
        }
        let q = parse_rational(q.as_deref().unwrap_or("1")).map_err(de::Error::custom)?;
        let d = d.ok_or_else(|| de::Error::missing_field("sqrt"))?;
        let d = parse_rational(&d).map_err(de::Error::custom)?;
        Scalar::radical(q, d).map_err(de::Error::custom)
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(ScalarVisitor)
    }
}

/// Parameter of an interpolated free group factor `L(F_t)`: any exact
/// rational (negative values are formal, meaningful only inside a larger
/// free product) or `+inf`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum FreeParam {
    Finite(BigRational),
    Infinite,
}

impl FreeParam {
    pub fn zero() -> Self {
        FreeParam::Finite(BigRational::zero())
    }

    pub fn int(n: i64) -> Self {
        FreeParam::Finite(int(n))
    }

    pub fn ratio(p: i64, q: i64) -> Self {
        FreeParam::Finite(rat(p, q))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FreeParam::Finite(r) if r.is_zero())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, FreeParam::Infinite)
    }

    pub fn as_rational(&self) -> Option<&BigRational> {
        match self {
            FreeParam::Finite(r) => Some(r),
            FreeParam::Infinite => None,
        }
    }

    pub fn add(&self, other: &FreeParam) -> FreeParam {
        match (self, other) {
            (FreeParam::Finite(a), FreeParam::Finite(b)) => FreeParam::Finite(a + b),
            _ => FreeParam::Infinite,
        }
    }

    pub fn add_rational(&self, r: &BigRational) -> FreeParam {
        self.add(&FreeParam::Finite(r.clone()))
    }

    /// Multiplication by a strictly positive rational.
    pub fn scale(&self, factor: &BigRational) -> Result<FreeParam, ArithError> {
        if !factor.is_positive() {
            return Err(ArithError::Negative(fmt_rational(factor)));
        }
        Ok(match self {
            FreeParam::Finite(a) => FreeParam::Finite(a * factor),
            FreeParam::Infinite => FreeParam::Infinite,
        })
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            FreeParam::Finite(r) => rational_to_f64(r),
            FreeParam::Infinite => f64::INFINITY,
        }
    }
}

impl PartialOrd for FreeParam {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FreeParam {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (FreeParam::Infinite, FreeParam::Infinite) => Ordering::Equal,
            (FreeParam::Infinite, _) => Ordering::Greater,
            (_, FreeParam::Infinite) => Ordering::Less,
            (FreeParam::Finite(a), FreeParam::Finite(b)) => a.cmp(b),
        }
    }
}

impl From<BigRational> for FreeParam {
    fn from(r: BigRational) -> Self {
        FreeParam::Finite(r)
    }
}

impl TryFrom<&Scalar> for FreeParam {
    type Error = ArithError;

    fn try_from(s: &Scalar) -> Result<Self, ArithError> {
        match s {
            Scalar::Finite(r) => Ok(FreeParam::Finite(r.clone())),
            Scalar::Infinite => Ok(FreeParam::Infinite),
            Scalar::Root(_) => Err(ArithError::NotRepresentable(s.to_string())),
        }
    }
}

impl fmt::Display for FreeParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreeParam::Finite(r) => f.write_str(&fmt_rational(r)),
            FreeParam::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for FreeParam {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t == "inf" || t == "+inf" {
            Ok(FreeParam::Infinite)
        } else {
            parse_rational(t).map(FreeParam::Finite)
        }
    }
}

impl Serialize for FreeParam {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

struct FreeParamVisitor;

impl<'de> Visitor<'de> for FreeParamVisitor {
    type Value = FreeParam;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("\"p/q\", \"inf\", or an integer")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<FreeParam, E> {
        v.parse().map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<FreeParam, E> {
        Ok(FreeParam::int(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<FreeParam, E> {
        Ok(FreeParam::Finite(BigRational::from_integer(BigInt::from(v))))
    }
}

impl<'de> Deserialize<'de> for FreeParam {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(FreeParamVisitor)
    }
}
