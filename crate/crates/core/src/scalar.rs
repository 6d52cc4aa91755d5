//! Field abstraction shared by the exact (rational) and floating (complex)
//! evaluation paths.

use std::fmt::Debug;
use std::ops::Neg;

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde_json::{json, Value};

pub trait Scalar: Clone + Debug + PartialEq + Num + Neg<Output = Self> + Send + Sync + 'static {
    /// Whether `denom` must be treated as zero when dividing by it.
    /// `a` and `b` are the spectral points the denominator was built from.
    fn is_pole(denom: &Self, a: &Self, b: &Self) -> bool;

    /// Exact conversion where possible (rationals represent every finite f64).
    fn from_f64(x: f64) -> Self;

    /// Real part as f64.
    fn re_f64(&self) -> f64;

    /// JSON form: `[re, im]` for floating scalars, `"num/den"` for rationals.
    fn to_json(&self) -> Value;
}

/// Relative size of a denominator below which a floating evaluation is
/// considered to sit on a Bethe pole.
pub const POLE_GUARD: f64 = 1e-13;

impl Scalar for Complex64 {
    fn is_pole(denom: &Self, a: &Self, b: &Self) -> bool {
        denom.norm() < POLE_GUARD * (1.0 + a.norm() + b.norm())
    }

    fn from_f64(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }

    fn re_f64(&self) -> f64 {
        self.re
    }

    fn to_json(&self) -> Value {
        json!([self.re, self.im])
    }
}

impl Scalar for f64 {
    fn is_pole(denom: &Self, a: &Self, b: &Self) -> bool {
        denom.abs() < POLE_GUARD * (1.0 + a.abs() + b.abs())
    }

    fn from_f64(x: f64) -> Self {
        x
    }

    fn re_f64(&self) -> f64 {
        *self
    }

    fn to_json(&self) -> Value {
        json!([self, 0.0])
    }
}

impl Scalar for BigRational {
    fn is_pole(denom: &Self, _a: &Self, _b: &Self) -> bool {
        num_traits::Zero::is_zero(denom)
    }

    fn from_f64(x: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(x).expect("finite rate")
    }

    fn re_f64(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn to_json(&self) -> Value {
        Value::String(format!("{}/{}", self.numer(), self.denom()))
    }
}

/// Parses `"a/b"` or `"a"` into an exact rational.
pub fn parse_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n = n.trim().parse().ok()?;
            let d: num_bigint::BigInt = d.trim().parse().ok()?;
            if num_traits::Zero::is_zero(&d) {
                return None;
            }
            Some(BigRational::new(n, d))
        }
        None => Some(BigRational::from_integer(s.parse().ok()?)),
    }
}
