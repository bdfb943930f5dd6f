//! Closed-form positive sequences `coef * ratio^i * i^power`, used to
//! describe the tails of infinite index sets and infinite free products.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::scalar::{fmt_rational, ArithError, Scalar};

fn default_ratio() -> BigRational {
    BigRational::one()
}

fn is_one(r: &BigRational) -> bool {
    r.is_one()
}

fn is_zero_i32(p: &i32) -> bool {
    *p == 0
}

mod rational_str {
    use num_rational::BigRational;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::{fmt_rational, parse_rational};

    pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_rational(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
        let s = String::deserialize(d)?;
        parse_rational(&s).map_err(serde::de::Error::custom)
    }
}

/// `value(i) = coef * ratio^i * i^power` for integer indices `i >= 1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedForm {
    pub coef: Scalar,
    #[serde(default = "default_ratio", with = "rational_str", skip_serializing_if = "is_one")]
    pub ratio: BigRational,
    #[serde(default, skip_serializing_if = "is_zero_i32")]
    pub power: i32,
}

impl ClosedForm {
    pub fn constant(c: Scalar) -> Self {
        ClosedForm { coef: c, ratio: BigRational::one(), power: 0 }
    }

    pub fn geometric(coef: Scalar, ratio: BigRational) -> Self {
        ClosedForm { coef, ratio, power: 0 }
    }

    pub fn validate(&self) -> Result<(), ArithError> {
        if !self.ratio.is_positive() {
            return Err(ArithError::Negative(fmt_rational(&self.ratio)));
        }
        if !self.coef.is_positive_finite() {
            return Err(ArithError::Undefined("sequence coefficient must be positive and finite"));
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.ratio.is_one() && self.power == 0
    }

    pub fn value(&self, i: u64) -> Result<Scalar, ArithError> {
        let idx = BigRational::from_integer(BigInt::from(i));
        let factor = pow_signed(&self.ratio, i as i64) * pow_signed(&idx, self.power as i64);
        self.coef.mul(&Scalar::new(factor)?)
    }

    pub fn recip(&self) -> Result<ClosedForm, ArithError> {
        Ok(ClosedForm {
            coef: self.coef.recip()?,
            ratio: self.ratio.recip(),
            power: -self.power,
        })
    }

    pub fn scaled(&self, by: &Scalar) -> Result<ClosedForm, ArithError> {
        Ok(ClosedForm { coef: self.coef.mul(by)?, ..self.clone() })
    }

    pub fn squared(&self) -> Result<ClosedForm, ArithError> {
        Ok(ClosedForm {
            coef: Scalar::new(self.coef.square()?)?,
            ratio: &self.ratio * &self.ratio,
            power: 2 * self.power,
        })
    }

    /// Whether `sum_{i >= start} value(i)` is finite.
    pub fn series_converges(&self) -> bool {
        match self.ratio.cmp(&BigRational::one()) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => self.power < -1,
        }
    }

    /// Exact value of `sum_{i >= start} value(i)`; available for convergent
    /// geometric tails with a rational coefficient.
    pub fn series_sum(&self, start: u64) -> Result<BigRational, ArithError> {
        if !self.series_converges() {
            return Err(ArithError::Undefined("divergent series has no finite sum"));
        }
        if self.power != 0 {
            return Err(ArithError::NotRepresentable(format!("sum of {self}")));
        }
        let c = self.coef.to_rational()?;
        let r = &self.ratio;
        Ok(c * pow_signed(r, start as i64) / (BigRational::one() - r))
    }
}

fn pow_signed(base: &BigRational, exp: i64) -> BigRational {
    if exp >= 0 {
        num_traits::pow(base.clone(), exp as usize)
    } else if base.is_zero() {
        BigRational::zero()
    } else {
        num_traits::pow(base.recip(), (-exp) as usize)
    }
}

impl PartialOrd for ClosedForm {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ClosedForm {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.coef, &self.ratio, self.power).cmp(&(&other.coef, &other.ratio, other.power))
    }
}

impl fmt::Display for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.coef.is_one() || self.is_constant() {
            parts.push(self.coef.to_string());
        }
        if !self.ratio.is_one() {
            parts.push(format!("({})^i", fmt_rational(&self.ratio)));
        }
        if self.power != 0 {
            parts.push(format!("i^{}", self.power));
        }
        f.write_str(&parts.join("*"))
    }
}
