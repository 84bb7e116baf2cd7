use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::fixed::{eth_to_wei, Ppb};

/// Gas consumed by a plain value transfer.
pub const PLAIN_TRANSFER_GAS: u64 = 21_000;

pub const SECONDS_PER_DAY: i64 = 86_400;

/// Lower-cased account address. Contents are not otherwise validated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(String);

impl Address {
    pub fn new(raw: &str) -> Address {
        Address(raw.trim().to_ascii_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One confirmed on-chain transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRecord {
    pub tx_hash: String,
    pub block_number: u64,
    pub timestamp_utc: i64,
    pub hour_utc: u8,
    /// 0 = Monday.
    pub weekday: u8,
    pub from_addr: Address,
    pub to_addr: Option<Address>,
    pub contract_addr: Option<Address>,
    pub gas_used: Option<u64>,
    /// Wei per gas.
    pub gas_price: Option<u128>,
    pub fee_eth: Decimal,
    pub fee_usd: Decimal,
    pub usd_per_eth: Decimal,
    pub is_error: bool,
    /// Call-data prefix as hex, empty for a bare `0x`.
    pub input_data: String,
    pub value_wei: Option<u128>,
}

impl TxRecord {
    pub fn fee_wei(&self) -> u128 {
        eth_to_wei(self.fee_eth).unwrap_or(0)
    }

    /// Per-gas price used for within-block ranking: the recorded gas price,
    /// or the fee divided by gas used when only the latter is known.
    pub fn price_per_gas(&self) -> Option<u128> {
        match (self.gas_price, self.gas_used) {
            (Some(p), _) => Some(p),
            (None, Some(g)) if g > 0 => Some(self.fee_wei() / g as u128),
            _ => None,
        }
    }

    pub fn is_weekend(&self) -> bool {
        self.weekday >= 5
    }
}

pub fn hour_of(timestamp_utc: i64) -> u8 {
    (timestamp_utc.rem_euclid(SECONDS_PER_DAY) / 3_600) as u8
}

/// Day of week with Monday = 0. 1970-01-01 was a Thursday.
pub fn weekday_of(timestamp_utc: i64) -> u8 {
    (timestamp_utc.div_euclid(SECONDS_PER_DAY) + 3).rem_euclid(7) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TxType {
    EthTransfer,
    Call,
    Deploy,
}

impl TxType {
    /// Plain transfers have a fixed gas cost; the other types vary.
    pub fn expected_gas(self) -> Option<u64> {
        match self {
            TxType::EthTransfer => Some(PLAIN_TRANSFER_GAS),
            TxType::Call | TxType::Deploy => None,
        }
    }
}

impl fmt::Display for TxType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TxType::EthTransfer => "ETH_TRANSFER",
            TxType::Call => "CALL",
            TxType::Deploy => "DEPLOY",
        })
    }
}

pub fn classify_tx_type(record: &TxRecord) -> TxType {
    if record.to_addr.is_none() {
        TxType::Deploy
    } else if record.input_data.is_empty() {
        TxType::EthTransfer
    } else {
        TxType::Call
    }
}

/// Block-level reward and, once the congestion pass has run, fullness.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStat {
    pub block_number: u64,
    /// Total validator reward in wei.
    pub reward: u128,
    pub fullness: Option<BlockFullness>,
}

/// Fullness proxy and its partition into transactional, speculative and
/// unclassified shares. The three shares sum to `proxy` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockFullness {
    pub proxy: Ppb,
    pub share_t: Ppb,
    pub share_s: Ppb,
    pub share_u: Ppb,
}

impl BlockFullness {
    pub fn unclassified(proxy: Ppb) -> BlockFullness {
        BlockFullness {
            proxy,
            share_t: Ppb::ZERO,
            share_s: Ppb::ZERO,
            share_u: proxy,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.share_t.units() + self.share_s.units() + self.share_u.units() == self.proxy.units()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Firm {
    pub firm_id: String,
    pub industry: String,
    pub address: Address,
    #[serde(default)]
    pub deferrable_default: bool,
    /// USD cost of deferring one transaction by a window.
    #[serde(default)]
    pub kappa: Decimal,
}
