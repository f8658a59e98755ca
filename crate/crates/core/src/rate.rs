//! Exact pruning rates.
//!
//! Rates are fractions of the total conv filter count. They are kept as
//! reduced rationals so that repeated stepping and halving never drift: the
//! twentieth step of `1/20` is exactly `1`, and `INT(rate * F_num)` is an
//! integer division rather than a float truncation.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rate(Ratio<u64>);

impl Rate {
    pub const ZERO: Rate = Rate(Ratio::new_raw(0, 1));
    pub const ONE: Rate = Rate(Ratio::new_raw(1, 1));

    /// `numer / denom`, rejecting a zero denominator and values above one.
    pub fn new(numer: u64, denom: u64) -> Result<Rate> {
        if denom == 0 {
            return Err(Error::invalid("rate with zero denominator"));
        }
        let r = Ratio::new(numer, denom);
        if r > Ratio::from_integer(1) {
            return Err(Error::invalid(format!("rate {numer}/{denom} exceeds 1")));
        }
        Ok(Rate(r))
    }

    pub fn percent(p: u64) -> Result<Rate> {
        Rate::new(p, 100)
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn half(self) -> Rate {
        Rate(self.0 / 2)
    }

    /// Sum clamped to `cap`.
    pub fn add_capped(self, step: Rate, cap: Rate) -> Rate {
        let s = Rate(self.0 + step.0);
        if s > cap {
            cap
        } else {
            s
        }
    }

    /// Number of filters this rate represents out of `total`, truncated
    /// toward zero.
    pub fn count_of(self, total: usize) -> usize {
        let total = total as u128;
        let n = *self.0.numer() as u128 * total / *self.0.denom() as u128;
        n as usize
    }
}

/// `INT(rate_increment * f_num)` with truncation toward zero.
pub fn count_to_prune(rate_increment: Rate, f_num: usize) -> usize {
    rate_increment.count_of(f_num)
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl FromStr for Rate {
    type Err = Error;

    /// Parses decimals (`0.05`), percentages (`5%`), and fractions (`1/20`)
    /// exactly.
    fn from_str(s: &str) -> Result<Rate> {
        let s = s.trim();
        let bad = || Error::invalid(format!("cannot parse rate {s:?}"));
        if let Some(p) = s.strip_suffix('%') {
            let (n, d) = parse_decimal(p.trim()).ok_or_else(bad)?;
            return Rate::new(n, d.checked_mul(100).ok_or_else(bad)?);
        }
        if let Some((n, d)) = s.split_once('/') {
            let n = n.trim().parse::<u64>().map_err(|_| bad())?;
            let d = d.trim().parse::<u64>().map_err(|_| bad())?;
            return Rate::new(n, d);
        }
        let (n, d) = parse_decimal(s).ok_or_else(bad)?;
        Rate::new(n, d)
    }
}

/// Decimal string to an unreduced `(numer, denom)` pair.
fn parse_decimal(s: &str) -> Option<(u64, u64)> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if (int.is_empty() && frac.is_empty())
        || !int.bytes().all(|b| b.is_ascii_digit())
        || !frac.bytes().all(|b| b.is_ascii_digit())
        || frac.len() > 18
    {
        return None;
    }
    let denom = 10u64.pow(frac.len() as u32);
    let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some((int.checked_mul(denom)?.checked_add(frac)?, denom))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(s: &str) -> Rate {
        s.parse().unwrap()
    }

    #[test]
    fn count_truncates() {
        assert_eq!(count_to_prune(r("0.05"), 64), 3);
        assert_eq!(count_to_prune(r("0.05"), 20), 1);
        assert_eq!(count_to_prune(r("0.0125"), 64), 0);
        assert_eq!(count_to_prune(Rate::ONE, 7), 7);
        assert_eq!(count_to_prune(Rate::ZERO, 7), 0);
    }

    #[test]
    fn stepping_is_exact() {
        let step = r("0.05");
        let mut p = Rate::ZERO;
        for _ in 0..19 {
            p = p.add_capped(step, r("0.95"));
        }
        assert_eq!(p, r("0.95"));
        assert_eq!(p.add_capped(step, r("0.95")), r("0.95"));
        assert_eq!(r("0.05").half(), r("0.025"));
        assert_eq!(r("0.1").add_capped(r("0.025"), Rate::ONE), r("0.125"));
    }

    #[test]
    fn parse_forms() {
        assert_eq!(r("5%"), r("0.05"));
        assert_eq!(r("1/20"), r("0.05"));
        assert_eq!(r(".5"), Rate::new(1, 2).unwrap());
        assert_eq!(r("1"), Rate::ONE);
        assert!("1.5".parse::<Rate>().is_err());
        assert!("-0.1".parse::<Rate>().is_err());
        assert!("abc".parse::<Rate>().is_err());
        assert!(".".parse::<Rate>().is_err());
    }
}
