use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GWEI: u128 = 1_000_000_000;

/// Mainnet gas target per block.
pub const DEFAULT_GAS_TARGET: u64 = 15_000_000;

/// Base-fee change per block is at most `1 / BASE_FEE_DENOMINATOR`.
pub const BASE_FEE_DENOMINATOR: u128 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketParams {
    pub gas_target: u64,
    pub gas_limit: u64,
    /// Wei per gas at block 0.
    pub initial_base_fee: u128,
}

impl Default for MarketParams {
    fn default() -> Self {
        MarketParams {
            gas_target: DEFAULT_GAS_TARGET,
            gas_limit: 2 * DEFAULT_GAS_TARGET,
            initial_base_fee: 20 * GWEI,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        if self.gas_target == 0 || self.gas_limit < self.gas_target {
            return Err(Error::config("gas limit must be at least the (positive) gas target"));
        }
        if self.initial_base_fee == 0 {
            return Err(Error::config("initial base fee must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeMarketState {
    pub block_index: u64,
    /// Wei per gas.
    pub base_fee: u128,
    pub gas_target: u64,
    pub gas_limit: u64,
    pub last_gas_used: u64,
}

impl FeeMarketState {
    pub fn new(params: &MarketParams) -> FeeMarketState {
        FeeMarketState {
            block_index: 0,
            base_fee: params.initial_base_fee,
            gas_target: params.gas_target,
            gas_limit: params.gas_limit,
            last_gas_used: 0,
        }
    }

    /// Records a block's gas use and moves to the next block.
    pub fn advance(&mut self, gas_used: u64) {
        debug_assert!(gas_used <= self.gas_limit);
        self.last_gas_used = gas_used;
        self.base_fee = base_fee_update(self);
        self.block_index += 1;
    }
}

/// `B + trunc(B * (used - target) / (8 * target))`, never below 1 wei.
///
/// Truncation applies to the adjustment term, so the change never exceeds
/// one eighth of `B` in either direction.
pub fn base_fee_update(state: &FeeMarketState) -> u128 {
    let b = state.base_fee as i128;
    let diff = state.last_gas_used as i128 - state.gas_target as i128;
    let delta = b * diff / (BASE_FEE_DENOMINATOR as i128 * state.gas_target as i128);
    (b + delta).max(1) as u128
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DemandClass {
    /// Transactional: low price elasticity.
    T,
    /// Speculative: submits only below its willingness to pay.
    S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimTx {
    pub class: DemandClass,
    pub gas: u64,
    /// Wei per gas.
    pub priority_fee: u128,
    /// Wei per gas.
    pub max_fee: u128,
    pub submit_hour: u8,
}

impl SimTx {
    /// Tip per gas actually paid at `base_fee`, or `None` if the transaction
    /// cannot be included.
    pub fn effective_tip(&self, base_fee: u128) -> Option<u128> {
        (self.max_fee >= base_fee).then(|| self.priority_fee.min(self.max_fee - base_fee))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inclusion {
    Included { cost_wei: u128 },
    NotIncluded,
}

impl Inclusion {
    pub fn cost(self) -> Option<u128> {
        match self {
            Inclusion::Included { cost_wei } => Some(cost_wei),
            Inclusion::NotIncluded => None,
        }
    }
}

/// `gas * (base_fee + min(priority_fee, max_fee - base_fee))`.
pub fn tx_cost(tx: &SimTx, base_fee: u128) -> Inclusion {
    match tx.effective_tip(base_fee) {
        Some(tip) => Inclusion::Included {
            cost_wei: tx.gas as u128 * (base_fee + tip),
        },
        None => Inclusion::NotIncluded,
    }
}

/// Greedy block building: eligible transactions sorted by effective tip
/// (descending, arrival order on ties), then the longest prefix that fits in
/// `gas_limit`. Returns indices into `candidates`.
pub fn admit(candidates: &[SimTx], base_fee: u128, gas_limit: u64) -> Vec<usize> {
    let mut eligible: Vec<(u128, usize)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, tx)| tx.effective_tip(base_fee).map(|t| (t, i)))
        .collect();
    eligible.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut used = 0u64;
    let mut out = Vec::new();
    for (_, i) in eligible {
        let g = candidates[i].gas;
        if used + g > gas_limit {
            break;
        }
        used += g;
        out.push(i);
    }
    out
}
