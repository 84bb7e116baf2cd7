use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::demand::DemandParams;
use super::market::{admit, DemandClass, FeeMarketState, MarketParams};
use crate::econometrics::HOURS;
use crate::error::{Error, Result};
use crate::fixed::{split_largest_remainder, Ppb};

pub const DEFAULT_BLOCKS_PER_HOUR: u32 = 300;

/// Everything a simulation run needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub market: MarketParams,
    pub demand: DemandParams,
    pub hours: u32,
    pub blocks_per_hour: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            market: MarketParams::default(),
            demand: DemandParams::default(),
            hours: 72,
            blocks_per_hour: DEFAULT_BLOCKS_PER_HOUR,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.demand.validate()?;
        if self.hours == 0 {
            return Err(Error::config("simulation needs at least one hour"));
        }
        if self.blocks_per_hour == 0 || 3_600 % self.blocks_per_hour != 0 {
            return Err(Error::config("blocks per hour must be a positive divisor of 3600"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockOutcome {
    pub block: u64,
    /// Hours since the start of the run.
    pub hour_index: u32,
    pub hour_of_day: u8,
    /// Base fee this block was built at, wei per gas.
    pub base_fee: u128,
    pub gas_used: u64,
    pub gas_t: u64,
    pub gas_s: u64,
    /// `gas_used / gas_limit`.
    pub phi: Ppb,
    pub phi_t: Ppb,
    pub phi_s: Ppb,
    /// Sum of paid tips, wei.
    pub reward: u128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionEntry {
    pub block: u64,
    pub class: DemandClass,
    pub gas: u64,
    pub priority_fee: u128,
    pub max_fee: u128,
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub blocks_per_hour: u32,
    pub gas_limit: u64,
    pub seed: u64,
    pub blocks: Vec<BlockOutcome>,
}

impl Trajectory {
    pub fn hours(&self) -> u32 {
        self.blocks.last().map_or(0, |b| b.hour_index + 1)
    }

    /// Mean base fee (wei per gas) by hour of day; `None` for hours the run
    /// never reached.
    pub fn hourly_mean_base_fee(&self) -> [Option<f64>; HOURS] {
        let mut sum = [0f64; HOURS];
        let mut n = [0u64; HOURS];
        for b in &self.blocks {
            sum[b.hour_of_day as usize] += b.base_fee as f64;
            n[b.hour_of_day as usize] += 1;
        }
        std::array::from_fn(|h| (n[h] > 0).then(|| sum[h] / n[h] as f64))
    }

    /// Mean base fee over blocks whose hour of day satisfies `pred`.
    pub fn mean_base_fee_where(&self, pred: impl Fn(u8) -> bool) -> Option<f64> {
        let (s, n) = self
            .blocks
            .iter()
            .filter(|b| pred(b.hour_of_day))
            .fold((0f64, 0u64), |(s, n), b| (s + b.base_fee as f64, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Runs the block-by-block market. Identical inputs give identical output.
pub fn simulate(scenario: &Scenario, seed: u64, keep_log: bool) -> Result<(Trajectory, Vec<InclusionEntry>)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = FeeMarketState::new(&scenario.market);
    let total = scenario.hours as u64 * scenario.blocks_per_hour as u64;
    let mut blocks = Vec::with_capacity(total as usize);
    let mut log = Vec::new();
    for _ in 0..total {
        let hour_index = (state.block_index / scenario.blocks_per_hour as u64) as u32;
        let hour_of_day = (hour_index % HOURS as u32) as u8;
        let base_fee = state.base_fee;
        let candidates = scenario.demand.arrivals(hour_of_day, base_fee, &mut rng);
        let admitted = admit(&candidates, base_fee, state.gas_limit);
        let (mut gas_t, mut gas_s, mut reward) = (0u64, 0u64, 0u128);
        for &i in &admitted {
            let tx = &candidates[i];
            match tx.class {
                DemandClass::T => gas_t += tx.gas,
                DemandClass::S => gas_s += tx.gas,
            }
            reward += tx.gas as u128 * tx.effective_tip(base_fee).expect("admitted");
        }
        if keep_log {
            let mut included = vec![false; candidates.len()];
            for &i in &admitted {
                included[i] = true;
            }
            log.extend(candidates.iter().zip(included).map(|(tx, inc)| InclusionEntry {
                block: state.block_index,
                class: tx.class,
                gas: tx.gas,
                priority_fee: tx.priority_fee,
                max_fee: tx.max_fee,
                included: inc,
            }));
        }
        let gas_used = gas_t + gas_s;
        let phi = Ppb::ratio(gas_used as u128, state.gas_limit as u128);
        let split = split_largest_remainder(phi.units(), &[gas_t as u128, gas_s as u128]);
        blocks.push(BlockOutcome {
            block: state.block_index,
            hour_index,
            hour_of_day,
            base_fee,
            gas_used,
            gas_t,
            gas_s,
            phi,
            phi_t: Ppb::from_units(split[0]).expect("within phi"),
            phi_s: Ppb::from_units(split[1]).expect("within phi"),
            reward,
        });
        state.advance(gas_used);
    }
    Ok((
        Trajectory {
            blocks_per_hour: scenario.blocks_per_hour,
            gas_limit: scenario.market.gas_limit,
            seed,
            blocks,
        },
        log,
    ))
}

const TRAJECTORY_HEADER: [&str; 11] = [
    "block",
    "hour",
    "hour_of_day",
    "base_fee",
    "gas_used",
    "gas_t",
    "gas_s",
    "phi",
    "phi_t",
    "phi_s",
    "reward",
];

pub fn write_trajectory<W: Write>(out: W, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for b in &traj.blocks {
        w.write_record([
            b.block.to_string(),
            b.hour_index.to_string(),
            b.hour_of_day.to_string(),
            b.base_fee.to_string(),
            b.gas_used.to_string(),
            b.gas_t.to_string(),
            b.gas_s.to_string(),
            b.phi.to_string(),
            b.phi_t.to_string(),
            b.phi_s.to_string(),
            b.reward.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trajectory>", e))?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`]. Run metadata that is
/// not part of the file is supplied by the caller.
pub fn read_trajectory<R: Read>(input: R, blocks_per_hour: u32, gas_limit: u64, seed: u64) -> Result<Trajectory> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut blocks = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |col: &str| Error::data(format!("trajectory row {}: bad {col}", i + 1));
        let int = |j: usize| row.get(j).and_then(|s| s.parse::<u128>().ok()).ok_or_else(|| bad(TRAJECTORY_HEADER[j]));
        let frac = |j: usize| row.get(j).and_then(|s| s.parse::<Ppb>().ok()).ok_or_else(|| bad(TRAJECTORY_HEADER[j]));
        blocks.push(BlockOutcome {
            block: int(0)? as u64,
            hour_index: int(1)? as u32,
            hour_of_day: int(2)? as u8,
            base_fee: int(3)?,
            gas_used: int(4)? as u64,
            gas_t: int(5)? as u64,
            gas_s: int(6)? as u64,
            phi: frac(7)?,
            phi_t: frac(8)?,
            phi_s: frac(9)?,
            reward: int(10)?,
        });
    }
    Ok(Trajectory {
        blocks_per_hour,
        gas_limit,
        seed,
        blocks,
    })
}
