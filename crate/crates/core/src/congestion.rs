//! Block-reward fullness proxy and the transactional / speculative /
//! unclassified decomposition of block fullness.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::{nearest_rank_index, split_largest_remainder, Ppb};
use crate::ingest::{Address, BlockFullness, Panel, TxRecord};

/// Pooled 95th-percentile validator reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardCeiling {
    pub ceiling: u128,
    pub sample_size: usize,
}

pub const CEILING_PERCENTILE: f64 = 0.95;

/// Nearest-rank 95th percentile of the rewards.
pub fn reward_ceiling(rewards: &[u128]) -> Result<RewardCeiling> {
    if rewards.is_empty() {
        return Err(Error::estimation("reward ceiling of an empty block sample"));
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_unstable();
    let ceiling = sorted[nearest_rank_index(sorted.len(), CEILING_PERCENTILE)];
    if ceiling == 0 {
        return Err(Error::estimation("reward ceiling is zero; fullness proxy undefined"));
    }
    Ok(RewardCeiling {
        ceiling,
        sample_size: sorted.len(),
    })
}

/// `clip(reward / ceiling, 0, 1)` at nine decimal places. Rewards are
/// unsigned wei, so negative inputs are rejected when block files are parsed.
pub fn fullness_proxy(reward: u128, ceiling: &RewardCeiling) -> Ppb {
    Ppb::ratio(reward, ceiling.ceiling)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    /// Transactional.
    T,
    /// Speculative.
    S,
    /// Unclassified.
    U,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::T => "T",
            Tag::S => "S",
            Tag::U => "U",
        })
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Tag> {
        match s.trim() {
            "T" | "t" => Ok(Tag::T),
            "S" | "s" => Ok(Tag::S),
            "U" | "u" => Ok(Tag::U),
            other => Err(Error::data(format!("unknown tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddressTag {
    pub address: Address,
    pub tag: Tag,
    pub above_threshold_share: f64,
    pub n_observed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagConfig {
    /// Within-block percentile that defines a "high" tip.
    pub tip_pct: f64,
    /// Minimum share of above-threshold transactions for an S tag.
    pub consistency: f64,
    pub min_obs: usize,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            tip_pct: 0.75,
            consistency: 0.5,
            min_obs: 5,
        }
    }
}

/// Per-block tip thresholds: the nearest-rank `tip_pct` percentile of the
/// per-gas price over the block's observed records. Legacy records carry no
/// separate tip; ranking by gas price within a block is equivalent because
/// the base fee is common to the block.
pub fn block_thresholds<'a>(records: impl Iterator<Item = &'a TxRecord>, tip_pct: f64) -> BTreeMap<u64, u128> {
    let mut prices: BTreeMap<u64, Vec<u128>> = BTreeMap::new();
    for r in records {
        if let Some(p) = r.price_per_gas() {
            prices.entry(r.block_number).or_default().push(p);
        }
    }
    prices
        .into_iter()
        .map(|(b, mut ps)| {
            ps.sort_unstable();
            (b, ps[nearest_rank_index(ps.len(), tip_pct)])
        })
        .collect()
}

pub fn tag_addresses(panel: &Panel, cfg: &TagConfig) -> Vec<AddressTag> {
    let thresholds = block_thresholds(panel.records.iter().map(|r| &r.tx), cfg.tip_pct);
    let mut counts: BTreeMap<&Address, (usize, usize)> = BTreeMap::new();
    for r in &panel.records {
        let Some(price) = r.tx.price_per_gas() else { continue };
        let entry = counts.entry(&r.tx.from_addr).or_default();
        entry.0 += 1;
        if price > thresholds[&r.tx.block_number] {
            entry.1 += 1;
        }
    }
    counts
        .into_iter()
        .map(|(address, (n, above))| {
            let share = if n == 0 { 0.0 } else { above as f64 / n as f64 };
            let tag = if n < cfg.min_obs {
                Tag::U
            } else if share >= cfg.consistency {
                Tag::S
            } else {
                Tag::T
            };
            AddressTag {
                address: address.clone(),
                tag,
                above_threshold_share: share,
                n_observed: n,
            }
        })
        .collect()
}

/// Operator-pinned tags replace computed ones; pinned addresses absent from
/// the panel are appended.
pub fn apply_overrides(mut tags: Vec<AddressTag>, overrides: &BTreeMap<Address, Tag>) -> Vec<AddressTag> {
    for t in tags.iter_mut() {
        if let Some(&pinned) = overrides.get(&t.address) {
            t.tag = pinned;
        }
    }
    for (addr, &tag) in overrides {
        if !tags.iter().any(|t| &t.address == addr) {
            tags.push(AddressTag {
                address: addr.clone(),
                tag,
                above_threshold_share: 0.0,
                n_observed: 0,
            });
        }
    }
    tags.sort_by(|a, b| a.address.cmp(&b.address));
    tags
}

/// Splits `proxy` across T/S/U in proportion to the gas each class consumed
/// among the block's observed records. When any record lacks `gas_used` the
/// fee in wei is used as the weight for the whole block instead.
pub fn decompose_fullness(proxy: Ppb, records_in_block: &[&TxRecord], tags: &HashMap<Address, Tag>) -> BlockFullness {
    let use_gas = records_in_block.iter().all(|r| r.gas_used.is_some());
    let mut weights = [0u128; 3];
    for r in records_in_block {
        let w = if use_gas { r.gas_used.unwrap_or(0) as u128 } else { r.fee_wei() };
        let class = match tags.get(&r.from_addr).copied().unwrap_or(Tag::U) {
            Tag::T => 0,
            Tag::S => 1,
            Tag::U => 2,
        };
        weights[class] += w;
    }
    if weights.iter().all(|&w| w == 0) {
        return BlockFullness::unclassified(proxy);
    }
    let parts = split_largest_remainder(proxy.units(), &weights);
    let share = |u: u64| Ppb::from_units(u).expect("share within proxy");
    BlockFullness {
        proxy,
        share_t: share(parts[0]),
        share_s: share(parts[1]),
        share_u: share(parts[2]),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CongestionSummary {
    pub ceiling: Option<RewardCeiling>,
    pub tags: Vec<AddressTag>,
}

/// Fills every block's fullness proxy and demand shares. The ceiling is
/// taken over all blocks of the (pooled) panel.
pub fn annotate_panel(
    mut panel: Panel,
    cfg: &TagConfig,
    overrides: &BTreeMap<Address, Tag>,
) -> Result<(Panel, CongestionSummary)> {
    if panel.blocks.is_empty() {
        return Ok((
            panel,
            CongestionSummary {
                ceiling: None,
                tags: apply_overrides(Vec::new(), overrides),
            },
        ));
    }
    let rewards: Vec<u128> = panel.blocks.values().map(|b| b.reward).collect();
    let ceiling = reward_ceiling(&rewards)?;
    let tags = apply_overrides(tag_addresses(&panel, cfg), overrides);
    let tag_map: HashMap<Address, Tag> = tags.iter().map(|t| (t.address.clone(), t.tag)).collect();

    let mut by_block: BTreeMap<u64, Vec<&TxRecord>> = BTreeMap::new();
    for r in &panel.records {
        by_block.entry(r.tx.block_number).or_default().push(&r.tx);
    }
    let fullness: Vec<(u64, BlockFullness)> = panel
        .blocks
        .values()
        .map(|b| {
            let proxy = fullness_proxy(b.reward, &ceiling);
            let recs = by_block.get(&b.block_number).map(Vec::as_slice).unwrap_or(&[]);
            (b.block_number, decompose_fullness(proxy, recs, &tag_map))
        })
        .collect();
    for (n, f) in fullness {
        panel.blocks.get_mut(&n).expect("block present").fullness = Some(f);
    }
    panel.validate()?;
    Ok((panel, CongestionSummary { ceiling: Some(ceiling), tags }))
}

pub fn write_tags<W: Write>(out: W, tags: &[AddressTag]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["address", "tag", "share", "n"])?;
    for t in tags {
        w.write_record([
            t.address.to_string(),
            t.tag.to_string(),
            format!("{:.6}", t.above_threshold_share),
            t.n_observed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<tags>", e))?;
    Ok(())
}

pub fn read_tags<R: Read>(input: R) -> Result<Vec<AddressTag>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut tags = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        tags.push(AddressTag {
            address: Address::new(cell(0)),
            tag: cell(1).parse()?,
            above_threshold_share: cell(2).parse().map_err(|_| Error::data(format!("bad share {:?}", cell(2))))?,
            n_observed: cell(3).parse().map_err(|_| Error::data(format!("bad count {:?}", cell(3))))?,
        });
    }
    Ok(tags)
}

/// Reads an `address,tag` override file.
pub fn read_overrides<R: Read>(input: R) -> Result<BTreeMap<Address, Tag>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let addr = Address::new(row.get(0).unwrap_or(""));
        let tag: Tag = row.get(1).unwrap_or("").parse()?;
        out.insert(addr, tag);
    }
    Ok(out)
}
