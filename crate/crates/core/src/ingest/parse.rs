//! Delimited-text readers and writers for transaction and block exports.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::record::{hour_of, weekday_of, Address, TxRecord};
use crate::error::{Error, Result};
use crate::fixed::{eth_to_wei, round_usd, wei_to_eth};

/// Relative tolerance on `fee = gas_used * gas_price`.
pub const FEE_REL_TOL: f64 = 1e-6;
/// Relative tolerance on `fee_usd = fee_eth * usd_per_eth`.
pub const USD_REL_TOL: f64 = 1e-4;

/// Maps each record field to a source column name. Optional fields may be
/// left unmapped; see [`ColumnMap::validate`] for which combinations suffice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub tx_hash: String,
    pub block_number: String,
    pub timestamp: String,
    pub from_addr: String,
    pub to_addr: Option<String>,
    pub contract_addr: Option<String>,
    pub gas_used: Option<String>,
    pub gas_price: Option<String>,
    pub fee_eth: Option<String>,
    pub fee_usd: Option<String>,
    pub usd_per_eth: Option<String>,
    pub is_error: Option<String>,
    pub input_data: Option<String>,
    pub value_wei: Option<String>,
}

impl Default for ColumnMap {
    /// Explorer API field names, plus the fee/price columns of the explorer's
    /// CSV export.
    fn default() -> Self {
        ColumnMap {
            tx_hash: "hash".into(),
            block_number: "blockNumber".into(),
            timestamp: "timeStamp".into(),
            from_addr: "from".into(),
            to_addr: Some("to".into()),
            contract_addr: Some("contractAddress".into()),
            gas_used: Some("gasUsed".into()),
            gas_price: Some("gasPrice".into()),
            fee_eth: Some("TxnFee(ETH)".into()),
            fee_usd: Some("TxnFee(USD)".into()),
            usd_per_eth: Some("Historical $Price/Eth".into()),
            is_error: Some("isError".into()),
            input_data: Some("input".into()),
            value_wei: Some("value".into()),
        }
    }
}

impl ColumnMap {
    pub fn validate(&self) -> Result<()> {
        let fee_derivable = self.fee_eth.is_some() || (self.gas_used.is_some() && self.gas_price.is_some());
        if !fee_derivable {
            return Err(Error::config(
                "column map needs fee_eth, or both gas_used and gas_price",
            ));
        }
        if self.fee_usd.is_none() && self.usd_per_eth.is_none() {
            return Err(Error::config("column map needs fee_usd or usd_per_eth"));
        }
        Ok(())
    }

    fn all_columns(&self) -> Vec<&str> {
        let mut cols = vec![
            self.tx_hash.as_str(),
            self.block_number.as_str(),
            self.timestamp.as_str(),
            self.from_addr.as_str(),
        ];
        for c in [
            &self.to_addr,
            &self.contract_addr,
            &self.gas_used,
            &self.gas_price,
            &self.fee_eth,
            &self.fee_usd,
            &self.usd_per_eth,
            &self.is_error,
            &self.input_data,
            &self.value_wei,
        ]
        .into_iter()
        .flatten()
        {
            cols.push(c.as_str());
        }
        cols
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub tx_hash: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<TxRecord>,
    pub rejects: Vec<RowReject>,
}

struct Resolved {
    idx: HashMap<String, usize>,
}

impl Resolved {
    fn new(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Resolved> {
        let mut idx = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            idx.entry(h.trim().to_string()).or_insert(i);
        }
        for col in map.all_columns() {
            if !idx.contains_key(col) {
                return Err(Error::config(format!("mapped column {col:?} not found in header")));
            }
        }
        Ok(Resolved { idx })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, col: &str) -> &'r str {
        row.get(self.idx[col]).map(str::trim).unwrap_or("")
    }

    fn opt<'r>(&self, row: &'r csv::StringRecord, col: Option<&String>) -> Option<&'r str> {
        let v = self.get(row, col?);
        (!v.is_empty()).then_some(v)
    }
}

pub fn parse_transactions<R: Read>(input: R, map: &ColumnMap, delimiter: u8) -> Result<ParseOutcome> {
    map.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let cols = Resolved::new(&headers, map)?;

    let mut out = ParseOutcome::default();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(RowReject {
                    row: row_no,
                    tx_hash: None,
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&cols, &row, map) {
            Ok(rec) => out.records.push(rec),
            Err(reason) => {
                let hash = cols.get(&row, &map.tx_hash);
                out.rejects.push(RowReject {
                    row: row_no,
                    tx_hash: (!hash.is_empty()).then(|| hash.to_string()),
                    reason,
                });
            }
        }
    }
    Ok(out)
}

fn parse_row(cols: &Resolved, row: &csv::StringRecord, map: &ColumnMap) -> Result<TxRecord, String> {
    let tx_hash = required(cols.get(row, &map.tx_hash), "tx_hash")?.to_string();
    let block_number = parse_u128(required(cols.get(row, &map.block_number), "block_number")?)
        .and_then(|v| u64::try_from(v).map_err(|_| "block number out of range".into()))
        .map_err(|e| format!("block_number: {e}"))?;
    let timestamp_utc = parse_timestamp(required(cols.get(row, &map.timestamp), "timestamp")?)?;
    let from_addr = Address::new(required(cols.get(row, &map.from_addr), "from_addr")?);
    let to_addr = cols.opt(row, map.to_addr.as_ref()).map(Address::new);
    let contract_addr = cols.opt(row, map.contract_addr.as_ref()).map(Address::new);

    let gas_used = cols
        .opt(row, map.gas_used.as_ref())
        .map(|v| parse_u128(v).and_then(|g| u64::try_from(g).map_err(|_| "out of range".into())))
        .transpose()
        .map_err(|e| format!("gas_used: {e}"))?;
    let gas_price = cols
        .opt(row, map.gas_price.as_ref())
        .map(parse_u128)
        .transpose()
        .map_err(|e| format!("gas_price: {e}"))?;
    let value_wei = cols
        .opt(row, map.value_wei.as_ref())
        .map(parse_u128)
        .transpose()
        .map_err(|e| format!("value_wei: {e}"))?;

    let computed_wei = match (gas_used, gas_price) {
        (Some(g), Some(p)) => Some(g as u128 * p),
        _ => None,
    };
    let fee_wei = match cols.opt(row, map.fee_eth.as_ref()) {
        Some(v) => {
            let eth = parse_decimal(v).map_err(|e| format!("fee_eth: {e}"))?;
            eth_to_wei(eth).ok_or_else(|| format!("fee_eth: negative value {v:?}"))?
        }
        None => computed_wei.ok_or("fee_eth missing and gas_used/gas_price incomplete")?,
    };
    if let Some(expected) = computed_wei {
        let diff = fee_wei.abs_diff(expected) as f64;
        if diff > FEE_REL_TOL * expected as f64 {
            return Err(format!(
                "fee mismatch: fee {fee_wei} wei vs gas_used*gas_price {expected} wei"
            ));
        }
    }
    let fee_eth = wei_to_eth(fee_wei);

    let fee_usd_raw = cols
        .opt(row, map.fee_usd.as_ref())
        .map(parse_decimal)
        .transpose()
        .map_err(|e| format!("fee_usd: {e}"))?;
    let rate_raw = cols
        .opt(row, map.usd_per_eth.as_ref())
        .map(parse_decimal)
        .transpose()
        .map_err(|e| format!("usd_per_eth: {e}"))?;
    let (fee_usd, usd_per_eth) = match (fee_usd_raw, rate_raw) {
        (Some(usd), Some(rate)) => {
            let implied = fee_eth * rate;
            let slack = (USD_REL_TOL * crate::fixed::decimal_to_f64(implied.abs())).max(5e-7);
            if crate::fixed::decimal_to_f64((usd - implied).abs()) > slack {
                return Err(format!("fee_usd {usd} inconsistent with fee_eth*usd_per_eth {implied}"));
            }
            (round_usd(usd), rate)
        }
        (Some(usd), None) => {
            let rate = if fee_eth.is_zero() { Decimal::ZERO } else { usd / fee_eth };
            (round_usd(usd), rate)
        }
        (None, Some(rate)) => (round_usd(fee_eth * rate), rate),
        (None, None) => return Err("fee_usd and usd_per_eth both empty".into()),
    };
    if fee_usd.is_sign_negative() && !fee_usd.is_zero() {
        return Err(format!("fee_usd negative: {fee_usd}"));
    }

    let is_error = match cols.opt(row, map.is_error.as_ref()) {
        None => false,
        Some(v) => parse_flag(v).ok_or_else(|| format!("is_error: unrecognized flag {v:?}"))?,
    };
    let input_data = cols
        .opt(row, map.input_data.as_ref())
        .map(normalize_input)
        .unwrap_or_default();

    Ok(TxRecord {
        tx_hash,
        block_number,
        timestamp_utc,
        hour_utc: hour_of(timestamp_utc),
        weekday: weekday_of(timestamp_utc),
        from_addr,
        to_addr,
        contract_addr,
        gas_used,
        gas_price,
        fee_eth,
        fee_usd,
        usd_per_eth,
        is_error,
        input_data,
        value_wei,
    })
}

fn required<'a>(v: &'a str, field: &str) -> Result<&'a str, String> {
    if v.is_empty() {
        Err(format!("{field}: empty"))
    } else {
        Ok(v)
    }
}

fn parse_flag(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Keeps `0x` plus the 4-byte method id; a bare `0x` becomes empty.
fn normalize_input(v: &str) -> String {
    let v = v.trim().to_ascii_lowercase();
    let body = v.strip_prefix("0x").unwrap_or(&v);
    if body.is_empty() {
        String::new()
    } else {
        format!("0x{}", &body[..body.len().min(8)])
    }
}

fn parse_u128(v: &str) -> Result<u128, String> {
    if let Some(hex) = v.strip_prefix("0x") {
        return u128::from_str_radix(hex, 16).map_err(|e| format!("{v:?}: {e}"));
    }
    if let Ok(n) = v.parse::<u128>() {
        return Ok(n);
    }
    // tolerate "21000.0" or "1.86e16" when the value is integral
    let d = parse_decimal(v)?;
    if d.is_sign_negative() && !d.is_zero() {
        return Err(format!("{v:?} is negative"));
    }
    if d.fract() != Decimal::ZERO {
        return Err(format!("{v:?} is not an integer"));
    }
    u128::try_from(d.trunc()).map_err(|_| format!("{v:?} out of range"))
}

fn parse_decimal(v: &str) -> Result<Decimal, String> {
    let cleaned: String = v.chars().filter(|c| *c != '$' && *c != ',').collect();
    Decimal::from_str(&cleaned)
        .or_else(|_| Decimal::from_scientific(&cleaned))
        .map_err(|e| format!("{v:?}: {e}"))
}

fn parse_timestamp(v: &str) -> Result<i64, String> {
    if let Ok(n) = v.parse::<i64>() {
        return Ok(n);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(v) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%m/%d/%Y %H:%M:%S", "%m/%d/%Y %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(v, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(format!("timestamp: unparseable {v:?}"))
}

/// Writes records with the columns named in `map`, in a form
/// [`parse_transactions`] reads back unchanged.
pub fn write_transactions<W: Write>(out: W, records: &[TxRecord], map: &ColumnMap, delimiter: u8) -> Result<()> {
    map.validate()?;
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record(map.all_columns())?;
    for r in records {
        let mut row: Vec<String> = vec![
            r.tx_hash.clone(),
            r.block_number.to_string(),
            r.timestamp_utc.to_string(),
            r.from_addr.to_string(),
        ];
        let opt_cells: [(&Option<String>, String); 10] = [
            (&map.to_addr, r.to_addr.as_ref().map(Address::to_string).unwrap_or_default()),
            (&map.contract_addr, r.contract_addr.as_ref().map(Address::to_string).unwrap_or_default()),
            (&map.gas_used, r.gas_used.map(|g| g.to_string()).unwrap_or_default()),
            (&map.gas_price, r.gas_price.map(|p| p.to_string()).unwrap_or_default()),
            (&map.fee_eth, r.fee_eth.to_string()),
            (&map.fee_usd, r.fee_usd.to_string()),
            (&map.usd_per_eth, r.usd_per_eth.to_string()),
            (&map.is_error, if r.is_error { "1" } else { "0" }.to_string()),
            (&map.input_data, if r.input_data.is_empty() { "0x".to_string() } else { r.input_data.clone() }),
            (&map.value_wei, r.value_wei.map(|v| v.to_string()).unwrap_or_default()),
        ];
        row.extend(opt_cells.into_iter().filter(|(c, _)| c.is_some()).map(|(_, v)| v));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<transactions>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockColumns {
    pub block_number: String,
    pub reward: String,
}

impl Default for BlockColumns {
    fn default() -> Self {
        BlockColumns {
            block_number: "blockNumber".into(),
            reward: "reward".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRow {
    pub block_number: u64,
    /// Total validator reward, wei.
    pub reward: u128,
}

/// Reads block rewards. Unlike transactions, a bad block row is a data
/// error rather than a per-row reject: every reward feeds the pooled ceiling.
pub fn parse_blocks<R: Read>(input: R, cols: &BlockColumns, delimiter: u8) -> Result<Vec<BlockRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::config(format!("mapped column {name:?} not found in blocks header")))
    };
    let bi = find(&cols.block_number)?;
    let ri = find(&cols.reward)?;
    let mut rows = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let cell = |j: usize| row.get(j).map(str::trim).unwrap_or("");
        let reward_txt = cell(ri);
        if reward_txt.starts_with('-') {
            return Err(Error::data(format!("blocks row {}: negative reward {reward_txt:?}", i + 1)));
        }
        let block_number = parse_u128(cell(bi))
            .and_then(|v| u64::try_from(v).map_err(|_| "out of range".into()))
            .map_err(|e| Error::data(format!("blocks row {}: block number {e}", i + 1)))?;
        let reward = parse_u128(reward_txt).map_err(|e| Error::data(format!("blocks row {}: reward {e}", i + 1)))?;
        rows.push(BlockRow { block_number, reward });
    }
    Ok(rows)
}

pub fn write_blocks<W: Write>(out: W, rows: &[BlockRow], cols: &BlockColumns, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(out);
    w.write_record([cols.block_number.as_str(), cols.reward.as_str()])?;
    for r in rows {
        w.write_record([r.block_number.to_string(), r.reward.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<blocks>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "hash,blockNumber,timeStamp,from,to,contractAddress,gasUsed,gasPrice,TxnFee(ETH),TxnFee(USD),Historical $Price/Eth,isError,input,value";

    fn parse(body: &str) -> ParseOutcome {
        let text = format!("{HEADER}\n{body}");
        parse_transactions(text.as_bytes(), &ColumnMap::default(), b',').unwrap()
    }

    #[test]
    fn parses_a_plain_transfer() {
        let out = parse("0xaa,100,1767225600,0xF1,0xb2,,21000,1000000000,0.000021,0.063,3000,0,0x,5\n");
        assert!(out.rejects.is_empty(), "{:?}", out.rejects);
        let r = &out.records[0];
        assert_eq!(r.hour_utc, 0);
        assert_eq!(r.weekday, 3);
        assert_eq!(r.fee_wei(), 21_000_000_000_000);
        assert_eq!(r.fee_usd, Decimal::from_str("0.063").unwrap());
        assert_eq!(r.from_addr.as_str(), "0xf1");
        assert!(r.input_data.is_empty());
        assert!(!r.is_error);
    }

    #[test]
    fn fee_derived_from_gas_when_unmapped() {
        let map = ColumnMap {
            fee_eth: None,
            fee_usd: None,
            ..ColumnMap::default()
        };
        let header = "hash,blockNumber,timeStamp,from,to,contractAddress,gasUsed,gasPrice,Historical $Price/Eth,isError,input,value";
        let text = format!("{header}\n0xaa,1,0,0xa,0xb,,21000,1000000000,2000,0,0xa9059cbb0000,\n");
        let out = parse_transactions(text.as_bytes(), &map, b',').unwrap();
        let r = &out.records[0];
        assert_eq!(r.fee_wei(), 21_000_000_000_000);
        assert_eq!(r.fee_usd, Decimal::from_str("0.042").unwrap());
        assert_eq!(r.input_data, "0xa9059cbb");
    }

    #[test]
    fn error_flag_is_carried() {
        let out = parse("0xaa,100,1767225600,0xa,0xb,,21000,1,0.000000000000021,0,3000,1,0x,\n");
        assert!(out.records[0].is_error);
    }

    #[test]
    fn bad_rows_are_rejected_with_reasons() {
        let out = parse(concat!(
            "0x1,100,notatime,0xa,0xb,,21000,1,0.000000000000021,0,3000,0,0x,\n",
            "0x2,abc,1767225600,0xa,0xb,,21000,1,0.000000000000021,0,3000,0,0x,\n",
            "0x3,100,1767225600,0xa,0xb,,21000,1000000000,0.5,1500,3000,0,0x,\n",
            "0x4,100,1767225600,0xa,0xb,,21000,1000000000,0.000021,5.0,3000,0,0x,\n",
            "0x5,100,1767225600,0xa,0xb,,21000,1000000000,0.000021,0.063,3000,0,0x,\n",
        ));
        assert_eq!(out.records.len(), 1);
        let rows: Vec<usize> = out.rejects.iter().map(|r| r.row).collect();
        assert_eq!(rows, vec![1, 2, 3, 4]);
        assert!(out.rejects[0].reason.contains("timestamp"));
        assert!(out.rejects[1].reason.contains("block_number"));
        assert!(out.rejects[2].reason.contains("fee mismatch"));
        assert!(out.rejects[3].reason.contains("inconsistent"));
        assert_eq!(out.rejects[0].tx_hash.as_deref(), Some("0x1"));
    }

    #[test]
    fn missing_mapped_column_is_a_config_error() {
        let text = "hash,blockNumber\n0x1,2\n";
        let err = parse_transactions(text.as_bytes(), &ColumnMap::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("timeStamp")), "{err}");
    }

    #[test]
    fn datetime_timestamps_are_accepted() {
        assert_eq!(parse_timestamp("2026-01-01 00:00:00").unwrap(), 1_767_225_600);
        assert_eq!(parse_timestamp("2026-01-01T00:00:00Z").unwrap(), 1_767_225_600);
    }

    #[test]
    fn semicolon_delimiter() {
        let text = HEADER.replace(',', ";") + "\n0xaa;100;1767225600;0xa;0xb;;21000;1000000000;0.000021;0.063;3000;0;0x;\n";
        let out = parse_transactions(text.as_bytes(), &ColumnMap::default(), b';').unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn blocks_negative_reward_is_data_error() {
        let err = parse_blocks("blockNumber,reward\n1,-5\n".as_bytes(), &BlockColumns::default(), b',').unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        let rows = parse_blocks("blockNumber,reward\n1,18600000000000000\n2,1.86e16\n".as_bytes(), &BlockColumns::default(), b',').unwrap();
        assert_eq!(rows[1].reward, 18_600_000_000_000_000);
    }

    #[test]
    fn write_then_parse_is_identity() {
        let out = parse(concat!(
            "0xaa,100,1767225600,0xa,0xb,,21000,1000000000,0.000021,0.063,3000,0,0x,5\n",
            "0xbb,101,1767229200,0xa,,0xc,500000,2000000000,0.001,3,3000,0,0x6080604052,\n",
        ));
        let mut buf = Vec::new();
        write_transactions(&mut buf, &out.records, &ColumnMap::default(), b',').unwrap();
        let again = parse_transactions(buf.as_slice(), &ColumnMap::default(), b',').unwrap();
        assert_eq!(again.records, out.records);
    }
}
