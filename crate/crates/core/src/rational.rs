//! Exact rational arithmetic for simulated time and capacity formulas.

use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Rational = Ratio<i128>;

pub fn int(n: i128) -> Rational {
    Rational::from_integer(n)
}

pub fn ratio(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a rational number: {0:?}")]
pub struct ParseRationalError(pub String);

/// Parses `"600"`, `"2.1"`, `"-0.25"`, `"1e3"` or `"7/3"` exactly.
pub fn parse(s: &str) -> Result<Rational, ParseRationalError> {
    let err = || ParseRationalError(s.to_string());
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| err())?;
        let d: i128 = d.trim().parse().map_err(|_| err())?;
        if d == 0 {
            return Err(err());
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| err())?),
        None => (s, 0),
    };
    let negative = mantissa.starts_with('-');
    let mantissa = mantissa.trim_start_matches(['-', '+']);
    let (whole, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if whole.is_empty() && frac.is_empty() {
        return Err(err());
    }
    if !whole.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let digits: i128 = format!("{whole}{frac}").parse().map_err(|_| err())?;
    let scale = exponent - frac.len() as i32;
    let pow = 10i128.checked_pow(scale.unsigned_abs()).ok_or_else(err)?;
    let mut value = if scale >= 0 {
        Rational::from_integer(digits.checked_mul(pow).ok_or_else(err)?)
    } else {
        Rational::new(digits, pow)
    };
    if negative {
        value = -value;
    }
    Ok(value)
}

pub fn to_f64(r: &Rational) -> f64 {
    r.numer().to_f64().unwrap_or(f64::NAN) / r.denom().to_f64().unwrap_or(f64::NAN)
}

/// `floor(r)` as an integer.
pub fn floor(r: &Rational) -> i128 {
    r.floor().to_integer()
}

/// Decimal rendering with `sig` significant digits, trailing zeros trimmed.
pub fn format_sig(r: &Rational, sig: usize) -> String {
    if r.is_zero() {
        return "0".to_string();
    }
    let v = to_f64(r);
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        s = s.trim_end_matches('0').trim_end_matches('.').to_string();
    }
    s
}

/// `"n"` for integers, `"n/d"` otherwise.
pub fn to_exact_string(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Machine-readable form: exact numerator/denominator plus decimal rendering.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExactValue {
    pub numerator: String,
    pub denominator: String,
    pub decimal: String,
}

impl From<&Rational> for ExactValue {
    fn from(r: &Rational) -> Self {
        ExactValue { numerator: r.numer().to_string(), denominator: r.denom().to_string(), decimal: format_sig(r, 6) }
    }
}

/// Newtype wrapper used when a rational needs `Display` in reports.
pub struct Sig6<'a>(pub &'a Rational);

impl fmt::Display for Sig6<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_sig(self.0, 6))
    }
}

/// Serde adapter: serializes as the exact string, accepts numbers or strings.
pub mod serde_exact {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&to_exact_string(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        let text = match &value {
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::String(s) => s.clone(),
            other => return Err(serde::de::Error::custom(format!("expected number, got {other}"))),
        };
        parse(&text).map_err(serde::de::Error::custom)
    }
}

/// Wrapper so rationals can be used inside serializable collections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub Rational);

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde_exact::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        serde_exact::deserialize(d).map(Exact)
    }
}

pub fn is_positive(r: &Rational) -> bool {
    r.is_positive()
}
