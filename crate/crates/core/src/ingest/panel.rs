use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::parse::BlockRow;
use super::record::{classify_tx_type, BlockStat, Firm, TxRecord, TxType};
use crate::error::{Error, Result};

pub const PANEL_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub firm_id: String,
    pub tx_type: TxType,
    pub tx: TxRecord,
}

/// The joined firm x transaction x block dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub panel_schema: u32,
    pub firms: Vec<Firm>,
    pub records: Vec<PanelRecord>,
    pub blocks: BTreeMap<u64, BlockStat>,
    /// Inclusive unix-second bounds of the observed records.
    pub sample_window: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExclusionReason {
    Failed,
    MissingReward,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::Failed => "isError=1",
            ExclusionReason::MissingReward => "missing R_b",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub tx_hash: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<TxRecord>,
    pub removed: Vec<Exclusion>,
}

/// Drops failed transactions and records whose block has no reward row.
/// Order of the kept records is preserved.
pub fn filter_valid<B>(records: Vec<TxRecord>, blocks: &BTreeMap<u64, B>) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in records {
        let reason = if r.is_error {
            Some(ExclusionReason::Failed)
        } else if !blocks.contains_key(&r.block_number) {
            Some(ExclusionReason::MissingReward)
        } else {
            None
        };
        match reason {
            Some(reason) => out.removed.push(Exclusion {
                tx_hash: r.tx_hash,
                reason,
            }),
            None => out.kept.push(r),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TxBatch {
    pub firm_id: String,
    pub records: Vec<TxRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmCount {
    pub firm_id: String,
    pub industry: String,
    pub address: String,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub per_firm: Vec<FirmCount>,
    pub total: usize,
    pub exclusions: Vec<(String, Exclusion)>,
    /// Block rows not referenced by any kept record.
    pub unreferenced_blocks: usize,
}

pub fn build_panel(firms: Vec<Firm>, batches: Vec<TxBatch>, block_rows: &[BlockRow]) -> Result<(Panel, BuildReport)> {
    let mut seen = BTreeSet::new();
    for f in &firms {
        if !seen.insert(f.firm_id.as_str()) {
            return Err(Error::config(format!("duplicate firm_id {:?}", f.firm_id)));
        }
    }

    let mut rewards: BTreeMap<u64, u128> = BTreeMap::new();
    for row in block_rows {
        match rewards.get(&row.block_number) {
            Some(&r) if r != row.reward => {
                return Err(Error::data(format!(
                    "block {} listed with conflicting rewards {} and {}",
                    row.block_number, r, row.reward
                )));
            }
            _ => {
                rewards.insert(row.block_number, row.reward);
            }
        }
    }

    let mut by_firm: BTreeMap<&str, Vec<TxRecord>> = BTreeMap::new();
    for b in batches {
        if !seen.contains(b.firm_id.as_str()) {
            return Err(Error::config(format!("transaction batch for unknown firm {:?}", b.firm_id)));
        }
        let id = firms.iter().find(|f| f.firm_id == b.firm_id).map(|f| f.firm_id.as_str()).unwrap();
        by_firm.entry(id).or_default().extend(b.records);
    }

    let mut report = BuildReport::default();
    let mut records = Vec::new();
    for f in &firms {
        let batch = by_firm.remove(f.firm_id.as_str()).unwrap_or_default();
        let outcome = filter_valid(batch, &rewards);
        report
            .exclusions
            .extend(outcome.removed.into_iter().map(|e| (f.firm_id.clone(), e)));
        report.per_firm.push(FirmCount {
            firm_id: f.firm_id.clone(),
            industry: f.industry.clone(),
            address: f.address.to_string(),
            n: outcome.kept.len(),
        });
        records.extend(outcome.kept.into_iter().map(|tx| PanelRecord {
            firm_id: f.firm_id.clone(),
            tx_type: classify_tx_type(&tx),
            tx,
        }));
    }
    report.total = records.len();

    let referenced: BTreeSet<u64> = records.iter().map(|r| r.tx.block_number).collect();
    report.unreferenced_blocks = rewards.keys().filter(|b| !referenced.contains(b)).count();
    let blocks = referenced
        .into_iter()
        .map(|b| {
            (
                b,
                BlockStat {
                    block_number: b,
                    reward: rewards[&b],
                    fullness: None,
                },
            )
        })
        .collect();

    let sample_window = records
        .iter()
        .map(|r| r.tx.timestamp_utc)
        .fold(None, |acc: Option<(i64, i64)>, t| match acc {
            None => Some((t, t)),
            Some((lo, hi)) => Some((lo.min(t), hi.max(t))),
        })
        .unwrap_or((0, 0));

    let panel = Panel {
        panel_schema: PANEL_SCHEMA,
        firms,
        records,
        blocks,
        sample_window,
    };
    panel.validate()?;
    Ok((panel, report))
}

impl Panel {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn firm(&self, firm_id: &str) -> Option<&Firm> {
        self.firms.iter().find(|f| f.firm_id == firm_id)
    }

    pub fn records_for<'a>(&'a self, firm_id: &'a str) -> impl Iterator<Item = &'a PanelRecord> + 'a {
        self.records.iter().filter(move |r| r.firm_id == firm_id)
    }

    pub fn block_of(&self, record: &TxRecord) -> &BlockStat {
        &self.blocks[&record.block_number]
    }

    /// A panel restricted to one firm, sharing the same block statistics
    /// (fullness already computed on the pooled sample stays pooled).
    pub fn firm_subset(&self, firm_id: &str) -> Result<Panel> {
        let firm = self
            .firm(firm_id)
            .ok_or_else(|| Error::config(format!("unknown firm {firm_id:?}")))?
            .clone();
        let records: Vec<PanelRecord> = self.records_for(firm_id).cloned().collect();
        let blocks = records
            .iter()
            .map(|r| (r.tx.block_number, self.blocks[&r.tx.block_number].clone()))
            .collect();
        Ok(Panel {
            panel_schema: PANEL_SCHEMA,
            firms: vec![firm],
            records,
            blocks,
            sample_window: self.sample_window,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.panel_schema != PANEL_SCHEMA {
            return Err(Error::data(format!(
                "unsupported panel_schema {} (expected {PANEL_SCHEMA})",
                self.panel_schema
            )));
        }
        let mut ids = BTreeSet::new();
        for f in &self.firms {
            if !ids.insert(f.firm_id.as_str()) {
                return Err(Error::data(format!("duplicate firm_id {:?}", f.firm_id)));
            }
        }
        for r in &self.records {
            if !ids.contains(r.firm_id.as_str()) {
                return Err(Error::data(format!("record {} tagged with unknown firm {:?}", r.tx.tx_hash, r.firm_id)));
            }
            if r.tx.is_error {
                return Err(Error::data(format!("record {} is a failed transaction", r.tx.tx_hash)));
            }
            if !self.blocks.contains_key(&r.tx.block_number) {
                return Err(Error::data(format!(
                    "record {} references block {} with no reward",
                    r.tx.tx_hash, r.tx.block_number
                )));
            }
        }
        for (n, b) in &self.blocks {
            if *n != b.block_number {
                return Err(Error::data(format!("block key {n} holds block {}", b.block_number)));
            }
            if let Some(f) = &b.fullness {
                if !f.is_consistent() {
                    return Err(Error::data(format!("block {n}: demand shares do not sum to the fullness proxy")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Panel> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("panel_schema").and_then(|v| v.as_u64()) {
            Some(v) if v == PANEL_SCHEMA as u64 => {}
            Some(v) => return Err(Error::data(format!("unsupported panel_schema {v}"))),
            None => return Err(Error::data("panel document lacks panel_schema")),
        }
        let panel: Panel = serde_json::from_value(value)?;
        panel.validate()?;
        Ok(panel)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Panel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Panel::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::record::{hour_of, weekday_of, Address};
    use rust_decimal::Decimal;

    pub(crate) fn tx(hash: &str, block: u64, ts: i64, is_error: bool) -> TxRecord {
        TxRecord {
            tx_hash: hash.into(),
            block_number: block,
            timestamp_utc: ts,
            hour_utc: hour_of(ts),
            weekday: weekday_of(ts),
            from_addr: Address::new("0xa"),
            to_addr: Some(Address::new("0xb")),
            contract_addr: None,
            gas_used: Some(21_000),
            gas_price: Some(1_000_000_000),
            fee_eth: Decimal::new(21, 6),
            fee_usd: Decimal::new(63, 3),
            usd_per_eth: Decimal::from(3000),
            is_error,
            input_data: String::new(),
            value_wei: None,
        }
    }

    fn firm(id: &str) -> Firm {
        Firm {
            firm_id: id.into(),
            industry: "Test".into(),
            address: Address::new("0xa"),
            deferrable_default: true,
            kappa: Decimal::ZERO,
        }
    }

    fn blocks(ns: &[u64]) -> Vec<BlockRow> {
        ns.iter().map(|&n| BlockRow { block_number: n, reward: 10 * n as u128 }).collect()
    }

    #[test]
    fn filter_removes_failed_and_unjoinable() {
        let rewards: BTreeMap<u64, u128> = [(1, 5), (2, 5)].into();
        let out = filter_valid(
            vec![tx("ok1", 1, 0, false), tx("bad", 1, 0, true), tx("orphan", 9, 0, false), tx("ok2", 2, 0, false)],
            &rewards,
        );
        let kept: Vec<&str> = out.kept.iter().map(|r| r.tx_hash.as_str()).collect();
        assert_eq!(kept, ["ok1", "ok2"]);
        assert_eq!(out.removed[0].reason, ExclusionReason::Failed);
        assert_eq!(out.removed[1].reason, ExclusionReason::MissingReward);
        assert_eq!(out.removed[1].reason.to_string(), "missing R_b");
    }

    #[test]
    fn filter_is_identity_on_valid_input_and_idempotent() {
        let rewards: BTreeMap<u64, u128> = [(1, 5)].into();
        let recs = vec![tx("a", 1, 0, false), tx("b", 1, 60, false)];
        let once = filter_valid(recs.clone(), &rewards).kept;
        assert_eq!(once, recs);
        let twice = filter_valid(once.clone(), &rewards).kept;
        assert_eq!(twice, once);
    }

    #[test]
    fn shared_block_joins_once() {
        let (panel, report) = build_panel(
            vec![firm("A"), firm("B")],
            vec![
                TxBatch { firm_id: "A".into(), records: vec![tx("a", 7, 100, false)] },
                TxBatch { firm_id: "B".into(), records: vec![tx("b", 7, 200, false)] },
            ],
            &blocks(&[7, 8]),
        )
        .unwrap();
        assert_eq!(panel.blocks.len(), 1);
        assert_eq!(panel.block_of(&panel.records[0].tx).reward, 70);
        assert_eq!(panel.block_of(&panel.records[1].tx).reward, 70);
        assert_eq!(report.unreferenced_blocks, 1);
        assert_eq!(panel.sample_window, (100, 200));
    }

    #[test]
    fn duplicate_firm_and_conflicting_blocks_fail() {
        let err = build_panel(vec![firm("A"), firm("A")], vec![], &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let rows = [BlockRow { block_number: 1, reward: 5 }, BlockRow { block_number: 1, reward: 6 }];
        let err = build_panel(vec![firm("A")], vec![], &rows).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let same = [BlockRow { block_number: 1, reward: 5 }, BlockRow { block_number: 1, reward: 5 }];
        assert!(build_panel(vec![firm("A")], vec![], &same).is_ok());
    }

    #[test]
    fn empty_firm_still_builds() {
        let (panel, report) = build_panel(
            vec![firm("A")],
            vec![TxBatch { firm_id: "A".into(), records: vec![tx("x", 1, 0, true)] }],
            &blocks(&[1]),
        )
        .unwrap();
        assert!(panel.is_empty());
        assert_eq!(report.per_firm[0].n, 0);
        assert_eq!(report.exclusions.len(), 1);
    }

    #[test]
    fn table1_counts_sum() {
        let counts = [54_651usize, 1_785, 116, 756, 4_290, 72, 472];
        let mut firms = Vec::new();
        let mut batches = Vec::new();
        for (i, &n) in counts.iter().enumerate() {
            let id = format!("F{i}");
            firms.push(firm(&id));
            let records = (0..n).map(|j| tx(&format!("{id}-{j}"), 1 + (j % 50) as u64, j as i64 * 61, false)).collect();
            batches.push(TxBatch { firm_id: id, records });
        }
        let (panel, report) = build_panel(firms, batches, &blocks(&(1..=50).collect::<Vec<_>>())).unwrap();
        assert_eq!(panel.len(), 62_142);
        assert_eq!(report.total, 62_142);
        assert_eq!(report.per_firm.iter().map(|c| c.n).sum::<usize>(), 62_142);
        let got: Vec<usize> = report.per_firm.iter().map(|c| c.n).collect();
        assert_eq!(got, counts);
    }

    #[test]
    fn json_roundtrip_and_schema_check() {
        let (panel, _) = build_panel(
            vec![firm("A")],
            vec![TxBatch { firm_id: "A".into(), records: vec![tx("a", 3, 10, false), tx("b", 4, 7200, false)] }],
            &blocks(&[3, 4]),
        )
        .unwrap();
        let text = panel.to_json().unwrap();
        assert!(text.contains("\"panel_schema\": 1"));
        assert_eq!(Panel::from_json(&text).unwrap(), panel);
        let bumped = text.replace("\"panel_schema\": 1", "\"panel_schema\": 2");
        assert!(matches!(Panel::from_json(&bumped), Err(Error::Data(_))));
    }
}
