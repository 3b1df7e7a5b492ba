//! Helpers for exact rational values and their `"p/q"` wire encoding.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

/// Builds a rational from machine integers.
pub fn rat(numer: i64, denom: i64) -> BigRational {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn rat_int(value: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(value))
}

pub fn rat_zero() -> BigRational {
    BigRational::zero()
}

pub fn rat_one() -> BigRational {
    BigRational::one()
}

/// Canonical wire form `"p/q"` (always with an explicit denominator).
pub fn format_rat(value: &BigRational) -> String {
    format!("{}/{}", value.numer(), value.denom())
}

/// Parses `"p/q"` or a bare integer `"p"`.
pub fn parse_rat(text: &str) -> Result<BigRational> {
    let text = text.trim();
    let (numer, denom) = match text.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (text, "1"),
    };
    let n: BigInt = numer
        .parse()
        .map_err(|_| Error::validation(format!("invalid rational numerator in {text:?}")))?;
    let d: BigInt = denom
        .parse()
        .map_err(|_| Error::validation(format!("invalid rational denominator in {text:?}")))?;
    if d.is_zero() {
        return Err(Error::validation(format!(
            "zero denominator in rational {text:?}"
        )));
    }
    Ok(BigRational::new(n, d))
}

/// Lossless conversion to f64 for reporting (not for exact decisions).
pub fn rat_to_f64(value: &BigRational) -> f64 {
    let n = value.numer();
    let d = value.denom();
    // Good enough for display and Monte Carlo comparisons; exact code paths
    // never round-trip through this.
    let nf = n.to_string().parse::<f64>().unwrap_or(f64::NAN);
    let df = d.to_string().parse::<f64>().unwrap_or(f64::NAN);
    nf / df
}

pub fn is_strictly_positive(value: &BigRational) -> bool {
    value.is_positive()
}
