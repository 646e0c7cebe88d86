//! Decimal fixed-point numbers with four fractional digits.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::EngineError;

/// Number of raw units per whole unit.
pub const SCALE: i64 = 10_000;
const FRACTION_DIGITS: usize = 4;

/// A signed decimal value stored as `raw / 10^4`.
///
/// Arithmetic that can leave the 64-bit range is checked and reports
/// [`EngineError::Overflow`]. Multiplication truncates toward zero, so the
/// same pair of operands always yields the same product regardless of the
/// order in which results are later summed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixed(i64);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(SCALE);

    pub const fn from_raw(raw: i64) -> Self {
        Fixed(raw)
    }

    pub const fn raw(self) -> i64 {
        self.0
    }

    pub const fn from_int(v: i64) -> Self {
        Fixed(v * SCALE)
    }

    /// Build from a whole part and a number of 1/10^4 units, e.g. `(0, 500)` is 0.05.
    pub const fn new(whole: i64, frac: i64) -> Self {
        Fixed(whole * SCALE + frac)
    }

    pub fn checked_add(self, rhs: Fixed) -> Result<Fixed, EngineError> {
        self.0
            .checked_add(rhs.0)
            .map(Fixed)
            .ok_or(EngineError::Overflow("addition"))
    }

    pub fn checked_sub(self, rhs: Fixed) -> Result<Fixed, EngineError> {
        self.0
            .checked_sub(rhs.0)
            .map(Fixed)
            .ok_or(EngineError::Overflow("subtraction"))
    }

    pub fn checked_mul(self, rhs: Fixed) -> Result<Fixed, EngineError> {
        let wide = (self.0 as i128 * rhs.0 as i128) / SCALE as i128;
        Fixed::from_wide_raw(wide)
    }

    /// Multiply by a plain integer (no rescaling, exact).
    pub fn checked_mul_int(self, rhs: i64) -> Result<Fixed, EngineError> {
        self.0
            .checked_mul(rhs)
            .map(Fixed)
            .ok_or(EngineError::Overflow("multiplication"))
    }

    /// Divide by a plain integer count, truncating toward zero.
    pub fn div_int(self, rhs: i64) -> Fixed {
        Fixed(self.0 / rhs)
    }

    pub fn from_wide_raw(raw: i128) -> Result<Fixed, EngineError> {
        i64::try_from(raw)
            .map(Fixed)
            .map_err(|_| EngineError::Overflow("narrowing"))
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for Fixed {
    /// Shortest decimal form with at least one fractional digit (`10.0`, `102.5`, `-0.0625`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / SCALE as u64;
        let frac = abs % SCALE as u64;
        let mut digits = format!("{frac:04}");
        while digits.len() > 1 && digits.ends_with('0') {
            digits.pop();
        }
        write!(f, "{sign}{whole}.{digits}")
    }
}

impl FromStr for Fixed {
    type Err = EngineError;

    /// Exact decimal parse; more than four fractional digits is an error
    /// rather than a silent rounding.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EngineError::Parse(format!("invalid decimal `{s}`"));
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (whole, frac) = match body.split_once('.') {
            Some((w, f)) => (w, f),
            None => (body, ""),
        };
        if whole.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if frac.len() > FRACTION_DIGITS {
            return Err(EngineError::Parse(format!(
                "`{s}` has more than {FRACTION_DIGITS} fractional digits"
            )));
        }
        let out_of_range = || EngineError::OutOfRange(format!("decimal `{s}` exceeds 64-bit fixed-point range"));
        let w: i64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| out_of_range())? };
        let mut f: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        for _ in frac.len()..FRACTION_DIGITS {
            f *= 10;
        }
        let raw = w
            .checked_mul(SCALE)
            .and_then(|v| v.checked_add(f))
            .ok_or_else(out_of_range)?;
        Ok(Fixed(if neg { -raw } else { raw }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_exact_decimals() {
        assert_eq!("102.5".parse::<Fixed>().unwrap(), Fixed::from_raw(1_025_000));
        assert_eq!("0.06".parse::<Fixed>().unwrap(), Fixed::new(0, 600));
        assert_eq!("-1.0001".parse::<Fixed>().unwrap(), Fixed::from_raw(-10_001));
        assert_eq!("7".parse::<Fixed>().unwrap(), Fixed::from_int(7));
        assert_eq!(".5".parse::<Fixed>().unwrap(), Fixed::new(0, 5000));
    }

    #[test]
    fn rejects_garbage_and_excess_precision() {
        assert!("1.00001".parse::<Fixed>().is_err());
        assert!("abc".parse::<Fixed>().is_err());
        assert!("".parse::<Fixed>().is_err());
        assert!("1e5".parse::<Fixed>().is_err());
        assert!(matches!(
            "99999999999999999999".parse::<Fixed>(),
            Err(EngineError::OutOfRange(_))
        ));
    }

    #[test]
    fn display_is_shortest_form() {
        assert_eq!(Fixed::from_int(10).to_string(), "10.0");
        assert_eq!(Fixed::from_raw(1_025_000).to_string(), "102.5");
        assert_eq!(Fixed::from_raw(-625).to_string(), "-0.0625");
    }

    #[test]
    fn mul_truncates_and_overflows_loudly() {
        let a = Fixed::from_int(1000);
        let d = Fixed::new(0, 600);
        assert_eq!(a.checked_mul(d).unwrap(), Fixed::from_int(60));
        assert_eq!(Fixed::from_raw(3).checked_mul(Fixed::from_raw(5000)).unwrap(), Fixed::from_raw(1));
        assert!(Fixed::from_raw(i64::MAX).checked_add(Fixed::from_raw(1)).is_err());
        assert!(Fixed::from_raw(i64::MAX / 2).checked_mul(Fixed::from_int(3)).is_err());
    }

    proptest! {
        #[test]
        fn display_parse_roundtrip(raw in any::<i64>().prop_filter("abs", |r| *r != i64::MIN)) {
            let x = Fixed::from_raw(raw);
            prop_assert_eq!(x.to_string().parse::<Fixed>().unwrap(), x);
        }
    }
}
