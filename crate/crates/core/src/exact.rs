//! Exact accounting of schedule durations.
//!
//! Every finite `f64` is a dyadic rational, so sums of segment durations can
//! be kept without rounding. Budget checks compare these exact sums.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactDuration(BigRational);

impl ExactDuration {
    pub fn zero() -> Self {
        ExactDuration(BigRational::zero())
    }

    pub fn from_f64(t: f64) -> Result<Self> {
        BigRational::from_float(t)
            .map(ExactDuration)
            .ok_or_else(|| Error::domain(format!("duration {t} is not finite")))
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Whether this duration is strictly below `budget` (compared exactly).
    pub fn is_below(&self, budget: f64) -> bool {
        match BigRational::from_float(budget) {
            Some(b) => self.0 < b,
            None => budget == f64::INFINITY,
        }
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }
}

impl Add for ExactDuration {
    type Output = ExactDuration;
    fn add(self, rhs: Self) -> Self {
        ExactDuration(self.0 + rhs.0)
    }
}

impl AddAssign for ExactDuration {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl<'a> AddAssign<&'a ExactDuration> for ExactDuration {
    fn add_assign(&mut self, rhs: &'a ExactDuration) {
        self.0 += &rhs.0;
    }
}

impl Mul<u64> for ExactDuration {
    type Output = ExactDuration;
    fn mul(self, rhs: u64) -> Self {
        ExactDuration(self.0 * BigRational::from_integer(BigInt::from(rhs)))
    }
}

impl Sum for ExactDuration {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ExactDuration::zero(), |a, b| a + b)
    }
}

impl fmt::Display for ExactDuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for ExactDuration {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}
