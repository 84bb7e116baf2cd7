//! Fixed-point helpers shared by the data layer.
//!
//! Fractions that must satisfy exact additive identities (block fullness and
//! its demand shares) are stored as integer parts-per-billion. USD amounts use
//! `rust_decimal::Decimal` rounded to six places, wei amounts are plain
//! integers.

use std::fmt;
use std::str::FromStr;

use rust_decimal::{Decimal, RoundingStrategy};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const PPB_SCALE: u64 = 1_000_000_000;

pub const USD_DP: u32 = 6;

pub const WEI_PER_ETH: u128 = 1_000_000_000_000_000_000;

/// A fraction in `[0, 1]` with nine decimal places.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ppb(u64);

impl Ppb {
    pub const ZERO: Ppb = Ppb(0);
    pub const ONE: Ppb = Ppb(PPB_SCALE);

    pub fn from_units(units: u64) -> Option<Ppb> {
        (units <= PPB_SCALE).then_some(Ppb(units))
    }

    pub fn units(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / PPB_SCALE as f64
    }

    /// `num / den` clipped to `[0, 1]`, rounded half-up to nine places.
    pub fn ratio(num: u128, den: u128) -> Ppb {
        assert!(den > 0, "Ppb::ratio with zero denominator");
        if num >= den {
            return Ppb::ONE;
        }
        let scaled = num * PPB_SCALE as u128;
        Ppb(((scaled + den / 2) / den) as u64)
    }

    pub fn checked_add(self, other: Ppb) -> Option<Ppb> {
        Ppb::from_units(self.0.checked_add(other.0)?)
    }
}

impl fmt::Display for Ppb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / PPB_SCALE, self.0 % PPB_SCALE)
    }
}

impl FromStr for Ppb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let d = Decimal::from_str(s.trim()).map_err(|e| format!("invalid fraction {s:?}: {e}"))?;
        if d.is_sign_negative() && !d.is_zero() {
            return Err(format!("fraction {s:?} is negative"));
        }
        if d.scale() > 9 {
            return Err(format!("fraction {s:?} has more than nine decimal places"));
        }
        let units = d * Decimal::from(PPB_SCALE);
        let units = u64::try_from(units.trunc()).map_err(|_| format!("fraction {s:?} out of range"))?;
        Ppb::from_units(units).ok_or_else(|| format!("fraction {s:?} exceeds 1"))
    }
}

impl Serialize for Ppb {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ppb {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits `total` integer units across `weights` so the parts sum to `total`
/// exactly. Each part gets the floor of its exact quota; leftover units go to
/// the largest fractional remainders, ties to the lower index.
///
/// Returns all zeros when every weight is zero.
pub fn split_largest_remainder(total: u64, weights: &[u128]) -> Vec<u64> {
    let sum: u128 = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut parts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned: u64 = 0;
    for (i, &w) in weights.iter().enumerate() {
        let exact = total as u128 * w;
        let floor = (exact / sum) as u64;
        parts.push(floor);
        remainders.push((exact % sum, i));
        assigned += floor;
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take((total - assigned) as usize) {
        parts[i] += 1;
    }
    parts
}

/// Zero-based index of the nearest-rank percentile `q` in a sorted sample of
/// length `n`: `ceil(q * n) - 1`, clamped to the sample.
///
/// `q` is resolved to basis points first so that e.g. `0.95 * 100` lands on
/// rank 95 rather than drifting with binary rounding.
pub fn nearest_rank_index(n: usize, q: f64) -> usize {
    assert!(n > 0, "nearest rank of an empty sample");
    let bp = (q.clamp(0.0, 1.0) * 10_000.0).round() as u128;
    let rank = (bp * n as u128).div_ceil(10_000) as usize;
    rank.clamp(1, n) - 1
}

pub fn round_usd(d: Decimal) -> Decimal {
    d.round_dp_with_strategy(USD_DP, RoundingStrategy::MidpointAwayFromZero)
}

pub fn wei_to_eth(wei: u128) -> Decimal {
    Decimal::from_i128_with_scale(wei as i128, 18).normalize()
}

/// Converts an ETH amount to wei, rounding half away from zero at 18 places.
pub fn eth_to_wei(eth: Decimal) -> Option<u128> {
    if eth.is_sign_negative() && !eth.is_zero() {
        return None;
    }
    let rounded = eth.round_dp_with_strategy(18, RoundingStrategy::MidpointAwayFromZero);
    let mantissa = rounded.mantissa() as u128;
    let scale = rounded.scale();
    Some(mantissa * 10u128.pow(18 - scale))
}

pub fn decimal_to_f64(d: Decimal) -> f64 {
    use rust_decimal::prelude::ToPrimitive;
    d.to_f64().unwrap_or(f64::NAN)
}
