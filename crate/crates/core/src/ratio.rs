//! Exact count ratios.
//!
//! Every statistic in this crate is a count over a count. Keeping both
//! integers around lets reports print the denominator next to the value and
//! lets tests compare results exactly instead of through float tolerances.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// `count / total`, with `total == 0` meaning "no observations".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ratio {
    pub count: u64,
    pub total: u64,
}

impl Ratio {
    pub fn new(count: u64, total: u64) -> Self {
        debug_assert!(count <= total || total == 0);
        Ratio { count, total }
    }

    pub fn from_usize(count: usize, total: usize) -> Self {
        Ratio::new(count as u64, total as u64)
    }

    /// True when there is nothing to divide by.
    pub fn is_undefined(&self) -> bool {
        self.total == 0
    }

    /// Floating-point value, or `None` when the denominator is zero.
    pub fn value(&self) -> Option<f64> {
        (self.total != 0).then(|| self.count as f64 / self.total as f64)
    }

    /// Float value with the undefined case mapped to 0.
    pub fn value_or_zero(&self) -> f64 {
        self.value().unwrap_or(0.0)
    }

    /// Decimal rendering with `places` digits, rounded half-to-even on the
    /// exact rational value. Undefined ratios render as an empty string.
    pub fn format_fixed(&self, places: u32) -> String {
        if self.total == 0 {
            return String::new();
        }
        let scale = 10u128.pow(places);
        let num = self.count as u128 * scale;
        let den = self.total as u128;
        let mut q = num / den;
        let r = num % den;
        match (2 * r).cmp(&den) {
            Ordering::Greater => q += 1,
            Ordering::Equal if q % 2 == 1 => q += 1,
            _ => {}
        }
        let int_part = q / scale;
        if places == 0 {
            return int_part.to_string();
        }
        let frac_part = q % scale;
        format!("{int_part}.{frac_part:0width$}", width = places as usize)
    }

    /// Exact comparison by cross multiplication. Undefined ratios compare
    /// as 0.
    pub fn cmp_value(&self, other: &Ratio) -> Ordering {
        let lhs = if self.total == 0 { 0 } else { self.count as u128 * other.total.max(1) as u128 };
        let rhs = if other.total == 0 { 0 } else { other.count as u128 * self.total.max(1) as u128 };
        match (self.total, other.total) {
            (0, 0) => Ordering::Equal,
            _ => lhs.cmp(&rhs),
        }
    }
}

/// Four decimals, the precision used by every report.
impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format_fixed(4))
    }
}
