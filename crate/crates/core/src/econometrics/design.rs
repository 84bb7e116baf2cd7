use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::decimal_to_f64;
use crate::ingest::{Panel, SECONDS_PER_DAY};

pub const HOURS: usize = 24;
pub const INTERCEPT: &str = "const";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependent {
    #[default]
    FeeUsd,
    FeeEth,
}

/// Which block-level congestion column enters the fullness-augmented model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionRegressor {
    #[default]
    FullnessProxy,
    SpeculativeShare,
}

impl CongestionRegressor {
    pub fn term(self) -> &'static str {
        match self {
            CongestionRegressor::FullnessProxy => "phi_br",
            CongestionRegressor::SpeculativeShare => "phi_s",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedEffect {
    Firm,
    Week,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub dependent: Dependent,
    pub baseline_hour: u8,
    pub include_fullness: bool,
    pub congestion: CongestionRegressor,
    pub fixed_effects: BTreeSet<FixedEffect>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            dependent: Dependent::FeeUsd,
            baseline_hour: 23,
            include_fullness: false,
            congestion: CongestionRegressor::FullnessProxy,
            fixed_effects: BTreeSet::new(),
        }
    }
}

impl ModelSpec {
    /// Hour dummies only.
    pub fn base() -> ModelSpec {
        ModelSpec::default()
    }

    /// Hour dummies plus the block fullness proxy.
    pub fn with_fullness() -> ModelSpec {
        ModelSpec {
            include_fullness: true,
            ..ModelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.baseline_hour as usize >= HOURS {
            return Err(Error::config(format!("baseline hour {} outside 0-23", self.baseline_hour)));
        }
        Ok(())
    }

    /// Short identifier such as `base`, `fullness` or `fullness+firm+week`.
    pub fn label(&self) -> String {
        let mut s = String::from(if self.include_fullness { "fullness" } else { "base" });
        if self.include_fullness && self.congestion == CongestionRegressor::SpeculativeShare {
            s.push_str("-spec");
        }
        for fe in &self.fixed_effects {
            s.push_str(match fe {
                FixedEffect::Firm => "+firm",
                FixedEffect::Week => "+week",
            });
        }
        s
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

pub fn hour_term(hour: u8) -> String {
    format!("h{hour}")
}

/// Inverse of [`hour_term`].
pub fn term_hour(term: &str) -> Option<u8> {
    term.strip_prefix('h')?.parse().ok().filter(|&h: &u8| (h as usize) < HOURS)
}

/// Monday-based week index since the epoch.
pub fn week_of(timestamp_utc: i64) -> i64 {
    (timestamp_utc.div_euclid(SECONDS_PER_DAY) + 3).div_euclid(7)
}

#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub terms: Vec<String>,
    /// Columns removed because they were identically zero.
    pub dropped: Vec<String>,
    pub warnings: Vec<String>,
}

/// Builds the regression matrix: intercept, one dummy per non-baseline hour,
/// the optional congestion column, then optional fixed-effect dummies with
/// the first level of each group omitted. Rows follow panel order.
pub fn build_design(panel: &Panel, spec: &ModelSpec) -> Result<Design> {
    spec.validate()?;
    if panel.is_empty() {
        return Err(Error::data("cannot fit a model on an empty panel"));
    }
    let n = panel.len();

    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    columns.push((INTERCEPT.to_string(), vec![1.0; n]));
    for h in (0..HOURS as u8).filter(|&h| h != spec.baseline_hour) {
        let col = panel.records.iter().map(|r| f64::from(u8::from(r.tx.hour_utc == h))).collect();
        columns.push((hour_term(h), col));
    }
    if spec.include_fullness {
        let mut col = Vec::with_capacity(n);
        for r in &panel.records {
            let block = panel.block_of(&r.tx);
            let f = block.fullness.ok_or_else(|| {
                Error::data(format!("block {} has no fullness proxy; run the congestion pass first", block.block_number))
            })?;
            col.push(match spec.congestion {
                CongestionRegressor::FullnessProxy => f.proxy.as_f64(),
                CongestionRegressor::SpeculativeShare => f.share_s.as_f64(),
            });
        }
        columns.push((spec.congestion.term().to_string(), col));
    }
    for fe in &spec.fixed_effects {
        let keys: Vec<String> = match fe {
            FixedEffect::Firm => panel.records.iter().map(|r| r.firm_id.clone()).collect(),
            FixedEffect::Week => panel.records.iter().map(|r| week_of(r.tx.timestamp_utc).to_string()).collect(),
        };
        let prefix = match fe {
            FixedEffect::Firm => "firm",
            FixedEffect::Week => "week",
        };
        let mut levels: BTreeMap<&str, ()> = BTreeMap::new();
        for k in &keys {
            levels.insert(k, ());
        }
        // week levels sort numerically
        let mut levels: Vec<&str> = levels.into_keys().collect();
        if *fe == FixedEffect::Week {
            levels.sort_by_key(|k| k.parse::<i64>().unwrap_or(0));
        }
        for level in levels.iter().skip(1) {
            let col = keys.iter().map(|k| f64::from(u8::from(k == level))).collect();
            columns.push((format!("{prefix}:{level}"), col));
        }
    }

    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    columns.retain(|(term, col)| {
        if term != INTERCEPT && col.iter().all(|&v| v == 0.0) {
            let msg = format!("term {term} has no variation in the sample; dropped as inestimable");
            warn!("{msg}");
            warnings.push(msg);
            dropped.push(term.clone());
            false
        } else {
            true
        }
    });

    let k = columns.len();
    let x = DMatrix::from_fn(n, k, |i, j| columns[j].1[i]);
    let y = DVector::from_iterator(
        n,
        panel.records.iter().map(|r| match spec.dependent {
            Dependent::FeeUsd => decimal_to_f64(r.tx.fee_usd),
            Dependent::FeeEth => decimal_to_f64(r.tx.fee_eth),
        }),
    );
    Ok(Design {
        x,
        y,
        terms: columns.into_iter().map(|(t, _)| t).collect(),
        dropped,
        warnings,
    })
}
