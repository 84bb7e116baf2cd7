use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::market::{DemandClass, SimTx, GWEI};
use crate::econometrics::HOURS;
use crate::error::{Error, Result};

/// Inclusive range of a uniformly drawn integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl Span<u64> {
    fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        rng.random_range(self.min..=self.max)
    }
}

impl Span<u128> {
    fn draw<R: Rng>(&self, rng: &mut R) -> u128 {
        rng.random_range(self.min..=self.max)
    }
}

fn check_span<T: PartialOrd>(name: &str, s: &Span<T>) -> Result<()> {
    if s.min > s.max {
        return Err(Error::config(format!("{name}: min exceeds max")));
    }
    Ok(())
}

fn check_rates(name: &str, rates: &[f64; HOURS]) -> Result<()> {
    if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::config(format!("{name}: rates must be finite and non-negative")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalProcess {
    #[default]
    Poisson,
    /// Exactly the rounded rate every block; for calibration runs.
    Fixed,
}

impl ArrivalProcess {
    fn count<R: Rng>(self, mean: f64, rng: &mut R) -> u64 {
        match self {
            ArrivalProcess::Poisson => poisson(mean, rng),
            ArrivalProcess::Fixed => mean.max(0.0).round() as u64,
        }
    }
}

/// Operational flow: Poisson arrivals per block, submitted regardless of the
/// base fee up to a generous fee cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionalDemand {
    /// Mean arrivals per block, by UTC hour.
    pub rate_per_block: [f64; HOURS],
    pub gas: Span<u64>,
    pub priority_fee: Span<u128>,
    pub max_fee: Span<u128>,
}

/// Burst flow: a Poisson number of bursts per block, each with
/// `1 + Poisson(mean_burst_size - 1)` transactions. Each transaction is sent
/// only while the base fee is below its own fee cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeculativeDemand {
    /// Mean bursts per block, by UTC hour.
    pub bursts_per_block: [f64; HOURS],
    pub mean_burst_size: f64,
    pub gas: Span<u64>,
    pub priority_fee: Span<u128>,
    pub max_fee: Span<u128>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandParams {
    #[serde(default)]
    pub arrivals: ArrivalProcess,
    pub transactional: TransactionalDemand,
    pub speculative: SpeculativeDemand,
}

/// Business-hours window where speculative bursts concentrate by default.
pub const DEFAULT_BURST_WINDOW: std::ops::RangeInclusive<u8> = 11..=18;

impl DemandParams {
    /// Mildly diurnal transactional flow (~4 M gas per block) and speculative
    /// bursts of ~40 per block inside `window`, ~15 outside.
    pub fn diurnal(window: std::ops::RangeInclusive<u8>) -> DemandParams {
        let mut rate = [0.0; HOURS];
        let mut bursts = [0.0; HOURS];
        for h in 0..HOURS {
            let phase = 2.0 * std::f64::consts::PI * (h as f64 - 14.0) / HOURS as f64;
            rate[h] = 48.0 * (1.0 + 0.25 * phase.cos());
            bursts[h] = if window.contains(&(h as u8)) { 40.0 } else { 15.0 };
        }
        DemandParams {
            arrivals: ArrivalProcess::Poisson,
            transactional: TransactionalDemand {
                rate_per_block: rate,
                gas: Span { min: 21_000, max: 150_000 },
                priority_fee: Span { min: GWEI, max: 2 * GWEI },
                max_fee: Span { min: 150 * GWEI, max: 300 * GWEI },
            },
            speculative: SpeculativeDemand {
                bursts_per_block: bursts,
                mean_burst_size: 5.0,
                gas: Span { min: 100_000, max: 300_000 },
                priority_fee: Span { min: 2 * GWEI, max: 20 * GWEI },
                max_fee: Span { min: GWEI, max: 60 * GWEI },
            },
        }
    }

    /// No arrivals at all.
    pub fn zero() -> DemandParams {
        let mut p = DemandParams::default();
        p.transactional.rate_per_block = [0.0; HOURS];
        p.speculative.bursts_per_block = [0.0; HOURS];
        p
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.transactional;
        let s = &self.speculative;
        check_rates("transactional.rate_per_block", &t.rate_per_block)?;
        check_rates("speculative.bursts_per_block", &s.bursts_per_block)?;
        check_span("transactional.gas", &t.gas)?;
        check_span("transactional.priority_fee", &t.priority_fee)?;
        check_span("transactional.max_fee", &t.max_fee)?;
        check_span("speculative.gas", &s.gas)?;
        check_span("speculative.priority_fee", &s.priority_fee)?;
        check_span("speculative.max_fee", &s.max_fee)?;
        if t.gas.min == 0 || s.gas.min == 0 {
            return Err(Error::config("transaction gas must be positive"));
        }
        if !(s.mean_burst_size >= 1.0) || !s.mean_burst_size.is_finite() {
            return Err(Error::config("mean burst size must be at least 1"));
        }
        Ok(())
    }

    /// Arrivals for one block at `hour` given the current base fee.
    pub fn arrivals<R: Rng>(&self, hour: u8, base_fee: u128, rng: &mut R) -> Vec<SimTx> {
        let mut out = Vec::new();
        let t = &self.transactional;
        for _ in 0..self.arrivals.count(t.rate_per_block[hour as usize], rng) {
            let max_fee = t.max_fee.draw(rng);
            out.push(SimTx {
                class: DemandClass::T,
                gas: t.gas.draw(rng),
                priority_fee: t.priority_fee.draw(rng).min(max_fee),
                max_fee,
                submit_hour: hour,
            });
        }
        let s = &self.speculative;
        for _ in 0..self.arrivals.count(s.bursts_per_block[hour as usize], rng) {
            let size = 1 + self.arrivals.count(s.mean_burst_size - 1.0, rng);
            for _ in 0..size {
                let max_fee = s.max_fee.draw(rng);
                let gas = s.gas.draw(rng);
                let tip = s.priority_fee.draw(rng);
                if base_fee < max_fee {
                    out.push(SimTx {
                        class: DemandClass::S,
                        gas,
                        priority_fee: tip.min(max_fee),
                        max_fee,
                        submit_hour: hour,
                    });
                }
            }
        }
        out
    }
}

impl Default for DemandParams {
    fn default() -> Self {
        DemandParams::diurnal(DEFAULT_BURST_WINDOW)
    }
}

fn poisson<R: Rng>(lambda: f64, rng: &mut R) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
}
