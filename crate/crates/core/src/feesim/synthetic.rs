use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rust_decimal::prelude::{FromPrimitive, ToPrimitive};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::sim::Trajectory;
use crate::congestion::{annotate_panel, fullness_proxy, reward_ceiling, TagConfig};
use crate::econometrics::HOURS;
use crate::error::{Error, Result};
use crate::fixed::{round_usd, wei_to_eth, WEI_PER_ETH};
use crate::ingest::{
    build_panel, hour_of, weekday_of, Address, BlockRow, Firm, Panel, TxBatch, TxRecord, PLAIN_TRANSFER_GAS,
};

/// 2026-01-01T00:00:00Z, a Thursday.
pub const DEFAULT_START_TIMESTAMP: i64 = 1_767_225_600;
pub const DEFAULT_START_BLOCK: u64 = 24_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFirm {
    pub firm_id: String,
    pub industry: String,
    pub address: Address,
    pub n_records: usize,
    /// Relative submission intensity by UTC hour.
    pub hour_weights: Vec<f64>,
    #[serde(default)]
    pub deferrable: bool,
    #[serde(default)]
    pub kappa: Decimal,
}

/// Fee model for exported records:
/// `fee_usd = baseline + premium[h] + pass_through * phi + u * noise * (0.5 + phi)`
/// with `u ~ U(-1, 1)` and `phi` the block's fullness proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub firms: Vec<SyntheticFirm>,
    pub baseline_usd: f64,
    pub premium_usd: Vec<f64>,
    pub pass_through: f64,
    pub noise_usd: f64,
    pub usd_per_eth: Decimal,
    pub start_timestamp: i64,
    pub start_block: u64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// Five firms with different timing habits sharing `n_total` records,
    /// and a flat `premium` inside `window`.
    pub fn standard(n_total: usize, window: &BTreeSet<u8>, premium: f64, pass_through: f64, seed: u64) -> SyntheticConfig {
        let profiles: [(&str, &str, f64, f64); 5] = [
            ("alpha", "payments", 1.0, 0.30),
            ("bravo", "exchange", 0.5, 0.25),
            ("charlie", "marketplace", 2.0, 0.20),
            ("delta", "custody", 1.0, 0.15),
            ("echo", "gaming", 0.25, 0.10),
        ];
        let mut assigned = 0;
        let firms = profiles
            .iter()
            .enumerate()
            .map(|(i, &(id, industry, peak_weight, share))| {
                let n = if i + 1 == profiles.len() {
                    n_total - assigned
                } else {
                    (n_total as f64 * share).round() as usize
                };
                assigned += n;
                SyntheticFirm {
                    firm_id: id.to_string(),
                    industry: industry.to_string(),
                    address: Address::new(&format!("0x{:040x}", 0xa11ce + i)),
                    n_records: n,
                    hour_weights: (0..HOURS as u8).map(|h| if window.contains(&h) { peak_weight } else { 1.0 }).collect(),
                    deferrable: peak_weight < 1.0,
                    kappa: Decimal::new(5, 2),
                }
            })
            .collect();
        SyntheticConfig {
            firms,
            baseline_usd: 0.15,
            premium_usd: (0..HOURS as u8).map(|h| if window.contains(&h) { premium } else { 0.0 }).collect(),
            pass_through,
            noise_usd: 0.08,
            usd_per_eth: Decimal::from(2_500),
            start_timestamp: DEFAULT_START_TIMESTAMP,
            start_block: DEFAULT_START_BLOCK,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.premium_usd.len() != HOURS {
            return Err(Error::config("premium_usd needs 24 entries"));
        }
        if self.usd_per_eth <= Decimal::ZERO {
            return Err(Error::config("usd_per_eth must be positive"));
        }
        if self.start_timestamp.rem_euclid(3_600) != 0 {
            return Err(Error::config("start timestamp must fall on an hour boundary"));
        }
        let mut ids = BTreeSet::new();
        for f in &self.firms {
            if !ids.insert(&f.firm_id) {
                return Err(Error::config(format!("duplicate synthetic firm {}", f.firm_id)));
            }
            if f.hour_weights.len() != HOURS || f.hour_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::config(format!("firm {}: hour_weights needs 24 non-negative entries", f.firm_id)));
            }
        }
        let worst = self.baseline_usd + self.premium_usd.iter().copied().fold(f64::INFINITY, f64::min)
            - 1.5 * self.noise_usd
            + self.pass_through.min(0.0);
        if !(worst > 0.0) {
            return Err(Error::config("fee model can produce non-positive fees; raise the baseline"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub baseline_usd: f64,
    pub premium_usd: Vec<f64>,
    pub pass_through: f64,
    pub baseline_hour: u8,
    /// Reward ceiling over the referenced blocks.
    pub ceiling: u128,
    /// Mean fullness proxy over all simulated blocks, by hour of day.
    pub hourly_mean_phi: Vec<Option<f64>>,
    /// Hour effects relative to the baseline hour that a regression without
    /// the fullness column should recover: the premium difference plus the
    /// pass-through times the difference in mean fullness.
    pub model1_effects: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExport {
    pub firms: Vec<Firm>,
    pub batches: Vec<TxBatch>,
    pub blocks: Vec<BlockRow>,
    pub truth: GroundTruth,
}

impl SyntheticExport {
    /// Builds the panel and runs the congestion pass.
    pub fn build(&self, tags: &TagConfig) -> Result<Panel> {
        let (panel, _) = build_panel(self.firms.clone(), self.batches.clone(), &self.blocks)?;
        let (panel, _) = annotate_panel(panel, tags, &BTreeMap::new())?;
        Ok(panel)
    }
}

/// Samples firm transactions from the simulated blocks and prices them with
/// the configured fee model, producing ingest-ready records.
pub fn export_synthetic_panel(traj: &Trajectory, cfg: &SyntheticConfig) -> Result<SyntheticExport> {
    cfg.validate()?;
    if traj.blocks.is_empty() {
        return Err(Error::config("trajectory is empty"));
    }
    let bph = traj.blocks_per_hour as usize;
    let mut hour_instances: Vec<Vec<u32>> = vec![Vec::new(); HOURS];
    for b in traj.blocks.iter().step_by(bph) {
        hour_instances[b.hour_of_day as usize].push(b.hour_index);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // pick blocks first: the ceiling depends on which blocks are referenced
    let mut picks: Vec<Vec<usize>> = Vec::with_capacity(cfg.firms.len());
    for f in &cfg.firms {
        let weights: Vec<f64> = (0..HOURS)
            .map(|h| if hour_instances[h].is_empty() { 0.0 } else { f.hour_weights[h] })
            .collect();
        let mut firm_picks = Vec::with_capacity(f.n_records);
        if f.n_records > 0 {
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::config(format!("firm {}: no usable hour weights ({e})", f.firm_id)))?;
            for _ in 0..f.n_records {
                let h = dist.sample(&mut rng);
                let inst = &hour_instances[h];
                let hour_index = inst[rng.random_range(0..inst.len())] as usize;
                let idx = hour_index * bph + rng.random_range(0..bph);
                firm_picks.push(idx.min(traj.blocks.len() - 1));
            }
        }
        picks.push(firm_picks);
    }
    let referenced: BTreeSet<usize> = picks.iter().flatten().copied().collect();
    let rewards: Vec<u128> = referenced.iter().map(|&i| traj.blocks[i].reward).collect();
    let ceiling = if rewards.is_empty() {
        reward_ceiling(&traj.blocks.iter().map(|b| b.reward).collect::<Vec<_>>())?
    } else {
        reward_ceiling(&rewards)?
    };

    let seconds_per_block = 3_600 / traj.blocks_per_hour as i64;
    let counterparty = Address::new(&format!("0x{:040x}", 0xc0ffee));
    let mut batches = Vec::with_capacity(cfg.firms.len());
    for (fi, (f, firm_picks)) in cfg.firms.iter().zip(&picks).enumerate() {
        let mut records = Vec::with_capacity(firm_picks.len());
        for (i, &idx) in firm_picks.iter().enumerate() {
            let b = &traj.blocks[idx];
            let phi = fullness_proxy(b.reward, &ceiling).as_f64();
            let u: f64 = rng.random_range(-1.0..1.0);
            let fee_usd_target = cfg.baseline_usd
                + cfg.premium_usd[b.hour_of_day as usize]
                + cfg.pass_through * phi
                + u * cfg.noise_usd * (0.5 + phi);
            let fee_usd_target = Decimal::from_f64(fee_usd_target)
                .ok_or_else(|| Error::config("fee model produced a non-finite fee"))?;
            let wei_target = fee_usd_target / cfg.usd_per_eth * Decimal::from(WEI_PER_ETH as u64);
            let gas_price = (wei_target / Decimal::from(PLAIN_TRANSFER_GAS))
                .round()
                .max(Decimal::ONE)
                .to_u128()
                .ok_or_else(|| Error::config("gas price out of range"))?;
            let fee_wei = PLAIN_TRANSFER_GAS as u128 * gas_price;
            let fee_eth = wei_to_eth(fee_wei);
            let ts = cfg.start_timestamp + i64::from(b.hour_index) * 3_600 + (b.block as i64 % traj.blocks_per_hour as i64) * seconds_per_block;
            records.push(TxRecord {
                tx_hash: format!("0x{fi:08x}{i:056x}"),
                block_number: cfg.start_block + b.block,
                timestamp_utc: ts,
                hour_utc: hour_of(ts),
                weekday: weekday_of(ts),
                from_addr: f.address.clone(),
                to_addr: Some(counterparty.clone()),
                contract_addr: None,
                gas_used: Some(PLAIN_TRANSFER_GAS),
                gas_price: Some(gas_price),
                fee_eth,
                fee_usd: round_usd(fee_eth * cfg.usd_per_eth),
                usd_per_eth: cfg.usd_per_eth,
                is_error: false,
                input_data: String::new(),
                value_wei: Some(0),
            });
        }
        batches.push(TxBatch {
            firm_id: f.firm_id.clone(),
            records,
        });
    }

    let blocks = referenced
        .iter()
        .map(|&i| BlockRow {
            block_number: cfg.start_block + traj.blocks[i].block,
            reward: traj.blocks[i].reward,
        })
        .collect();
    let firms = cfg
        .firms
        .iter()
        .map(|f| Firm {
            firm_id: f.firm_id.clone(),
            industry: f.industry.clone(),
            address: f.address.clone(),
            deferrable_default: f.deferrable,
            kappa: f.kappa,
        })
        .collect();

    let mut phi_sum = [0f64; HOURS];
    let mut phi_n = [0u64; HOURS];
    for b in &traj.blocks {
        phi_sum[b.hour_of_day as usize] += fullness_proxy(b.reward, &ceiling).as_f64();
        phi_n[b.hour_of_day as usize] += 1;
    }
    let hourly_mean_phi: Vec<Option<f64>> = (0..HOURS).map(|h| (phi_n[h] > 0).then(|| phi_sum[h] / phi_n[h] as f64)).collect();
    let base = HOURS - 1;
    let model1_effects = (0..HOURS)
        .map(|h| {
            let (ph, pb) = (hourly_mean_phi[h]?, hourly_mean_phi[base]?);
            Some(cfg.premium_usd[h] - cfg.premium_usd[base] + cfg.pass_through * (ph - pb))
        })
        .collect();
    Ok(SyntheticExport {
        firms,
        batches,
        blocks,
        truth: GroundTruth {
            baseline_usd: cfg.baseline_usd,
            premium_usd: cfg.premium_usd.clone(),
            pass_through: cfg.pass_through,
            baseline_hour: base as u8,
            ceiling: ceiling.ceiling,
            hourly_mean_phi,
            model1_effects,
        },
    })
}
