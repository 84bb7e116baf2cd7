//! Firm-level peak-shaving scorecards.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::econometrics::{permutation_null, welch_t, FitResult, PermutationConfig, WelchResult, HOURS};
use crate::error::{Error, Result};
use crate::fixed::{decimal_to_f64, Ppb};
use crate::ingest::Panel;
use crate::seed::derive_seed;

/// Hours (UTC) treated as the congestion peak.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct PeakWindow {
    hours: BTreeSet<u8>,
}

impl Default for PeakWindow {
    fn default() -> Self {
        PeakWindow {
            hours: (11..=18).collect(),
        }
    }
}

impl TryFrom<Vec<u8>> for PeakWindow {
    type Error = Error;

    fn try_from(hours: Vec<u8>) -> Result<PeakWindow> {
        PeakWindow::new(hours)
    }
}

impl From<PeakWindow> for Vec<u8> {
    fn from(w: PeakWindow) -> Vec<u8> {
        w.hours.into_iter().collect()
    }
}

impl PeakWindow {
    pub fn new(hours: impl IntoIterator<Item = u8>) -> Result<PeakWindow> {
        let hours: BTreeSet<u8> = hours.into_iter().collect();
        if let Some(h) = hours.iter().find(|&&h| h as usize >= HOURS) {
            return Err(Error::config(format!("peak hour {h} outside 0-23")));
        }
        if hours.is_empty() || hours.len() == HOURS {
            return Err(Error::config("peak window must be a nonempty strict subset of the 24 hours"));
        }
        Ok(PeakWindow { hours })
    }

    pub fn contains(&self, hour: u8) -> bool {
        self.hours.contains(&hour)
    }

    pub fn hours(&self) -> impl Iterator<Item = u8> + '_ {
        self.hours.iter().copied()
    }

    pub fn off_hours(&self) -> impl Iterator<Item = u8> + '_ {
        (0..HOURS as u8).filter(|h| !self.hours.contains(h))
    }

    /// Off-peak share under uniform scheduling, e.g. 16/24.
    pub fn uniform_off_share(&self) -> f64 {
        (HOURS - self.hours.len()) as f64 / HOURS as f64
    }

    pub fn complement(&self) -> PeakWindow {
        PeakWindow {
            hours: self.off_hours().collect(),
        }
    }
}

/// The per-transaction fields the scorecards need.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub hour: u8,
    pub weekday: u8,
    pub fee_usd: Decimal,
    pub fullness: Option<Ppb>,
}

pub fn observations(panel: &Panel, firm_id: &str) -> Vec<Observation> {
    panel
        .records_for(firm_id)
        .map(|r| Observation {
            hour: r.tx.hour_utc,
            weekday: r.tx.weekday,
            fee_usd: r.tx.fee_usd,
            fullness: panel.block_of(&r.tx).fullness.map(|f| f.proxy),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PssValue {
    pub n_total: usize,
    pub n_peak: usize,
    pub n_off: usize,
    pub s_off: f64,
    pub pss: f64,
}

pub fn pss_from_counts(n_peak: usize, n_off: usize, window: &PeakWindow) -> Result<PssValue> {
    let n_total = n_peak + n_off;
    if n_total == 0 {
        return Err(Error::metric("peak shaving score of a firm with no transactions"));
    }
    let s_off = n_off as f64 / n_total as f64;
    Ok(PssValue {
        n_total,
        n_peak,
        n_off,
        s_off,
        pss: s_off - window.uniform_off_share(),
    })
}

pub fn pss(hours: &[u8], window: &PeakWindow) -> Result<PssValue> {
    let n_peak = hours.iter().filter(|&&h| window.contains(h)).count();
    pss_from_counts(n_peak, hours.len() - n_peak, window)
}

/// Hours with a negative pooled hour coefficient.
pub fn low_cost_hours(pooled: &FitResult) -> BTreeSet<u8> {
    pooled.hour_terms().filter(|(_, t)| t.coef < 0.0).map(|(h, _)| h).collect()
}

fn share_in(hours: &[u8], set: &BTreeSet<u8>) -> f64 {
    if hours.is_empty() {
        return 0.0;
    }
    hours.iter().filter(|h| set.contains(h)).count() as f64 / hours.len() as f64
}

/// Firm share of transactions in `low_cost` hours relative to the pooled share.
pub fn avoidance_ratio(firm_hours: &[u8], pooled_hours: &[u8], low_cost: &BTreeSet<u8>) -> Result<f64> {
    let pooled = share_in(pooled_hours, low_cost);
    if pooled == 0.0 {
        return Err(Error::metric("pooled sample has no transactions in low-cost hours"));
    }
    if firm_hours.is_empty() {
        return Err(Error::metric("avoidance ratio of a firm with no transactions"));
    }
    Ok(share_in(firm_hours, low_cost) / pooled)
}

fn mean(xs: impl Iterator<Item = Decimal>) -> Option<Decimal> {
    let (sum, n) = xs.fold((Decimal::ZERO, 0u64), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / Decimal::from(n))
}

/// `(mean_peak - mean_off) / mean_peak`; `None` when either side is empty
/// or the peak mean is zero.
pub fn fee_savings(obs: &[Observation], window: &PeakWindow) -> Option<f64> {
    let peak = mean(obs.iter().filter(|o| window.contains(o.hour)).map(|o| o.fee_usd))?;
    let off = mean(obs.iter().filter(|o| !window.contains(o.hour)).map(|o| o.fee_usd))?;
    if peak.is_zero() {
        return None;
    }
    Some(decimal_to_f64((peak - off) / peak))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualFloor {
    pub cheapest_hour: u8,
    pub n_cheapest: usize,
    pub mean_at_cheapest: Decimal,
    pub c_actual: Decimal,
    pub c_cf: Decimal,
    pub floor_usd: Decimal,
    /// `floor_usd / c_actual`; absent when the firm spent nothing.
    pub floor_pct: Option<f64>,
}

/// Counterfactual spend if every transaction had paid the mean fee of the
/// firm's cheapest observed hour. Ties go to the lowest hour.
pub fn residual_floor(obs: &[Observation]) -> Result<ResidualFloor> {
    if obs.is_empty() {
        return Err(Error::metric("residual floor of a firm with no transactions"));
    }
    let mut sums = [Decimal::ZERO; HOURS];
    let mut counts = [0u64; HOURS];
    for o in obs {
        sums[o.hour as usize] += o.fee_usd;
        counts[o.hour as usize] += 1;
    }
    // compare means by cross-multiplication so ties are exact
    let mut best: Option<usize> = None;
    for h in (0..HOURS).filter(|&h| counts[h] > 0) {
        match best {
            Some(b) if sums[h] * Decimal::from(counts[b]) >= sums[b] * Decimal::from(counts[h]) => {}
            _ => best = Some(h),
        }
    }
    let h = best.expect("at least one observed hour");
    let n = Decimal::from(obs.len() as u64);
    let n_h = Decimal::from(counts[h]);
    let c_actual: Decimal = sums.iter().sum();
    // the numerator is exactly non-negative: the cheapest hourly mean cannot
    // exceed the overall mean
    let floor_usd = (c_actual * n_h - n * sums[h]) / n_h;
    let floor_usd = floor_usd.max(Decimal::ZERO);
    Ok(ResidualFloor {
        cheapest_hour: h as u8,
        n_cheapest: counts[h] as usize,
        mean_at_cheapest: sums[h] / n_h,
        c_actual,
        c_cf: c_actual - floor_usd,
        floor_usd,
        floor_pct: (!c_actual.is_zero()).then(|| decimal_to_f64(floor_usd / c_actual)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekdayWeekend {
    pub n_weekday: usize,
    pub n_weekend: usize,
    pub gas_weekday: f64,
    pub gas_weekend: f64,
    /// `(gas_weekday - gas_weekend) / gas_weekend`.
    pub premium: Option<f64>,
    pub t_gas: Option<WelchResult>,
    pub phi_weekday: Option<f64>,
    pub phi_weekend: Option<f64>,
    pub delta_phi: Option<f64>,
    pub t_phi: Option<WelchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WeekdayWeekendOutcome {
    Computed(WeekdayWeekend),
    Omitted { reason: String },
}

/// Premium from side means, as printed in weekday/weekend tables.
pub fn weekday_premium(gas_weekday: f64, gas_weekend: f64) -> Option<f64> {
    (gas_weekend != 0.0).then(|| (gas_weekday - gas_weekend) / gas_weekend)
}

fn mean_f64(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn weekday_weekend(obs: &[Observation]) -> WeekdayWeekendOutcome {
    let (weekend, weekday): (Vec<&Observation>, Vec<&Observation>) = obs.iter().partition(|o| o.weekday >= 5);
    if weekday.is_empty() || weekend.is_empty() {
        let side = if weekend.is_empty() { "weekend" } else { "weekday" };
        return WeekdayWeekendOutcome::Omitted {
            reason: format!("no {side} transactions"),
        };
    }
    let gas = |v: &[&Observation]| v.iter().map(|o| decimal_to_f64(o.fee_usd)).collect::<Vec<f64>>();
    let phi = |v: &[&Observation]| v.iter().filter_map(|o| o.fullness.map(Ppb::as_f64)).collect::<Vec<f64>>();
    let (gas_wd, gas_we) = (gas(&weekday), gas(&weekend));
    let (phi_wd, phi_we) = (phi(&weekday), phi(&weekend));
    let gas_weekday = mean_f64(&gas_wd).expect("nonempty");
    let gas_weekend = mean_f64(&gas_we).expect("nonempty");
    let phi_weekday = mean_f64(&phi_wd);
    let phi_weekend = mean_f64(&phi_we);
    WeekdayWeekendOutcome::Computed(WeekdayWeekend {
        n_weekday: weekday.len(),
        n_weekend: weekend.len(),
        gas_weekday,
        gas_weekend,
        premium: weekday_premium(gas_weekday, gas_weekend),
        t_gas: welch_t(&gas_wd, &gas_we).ok(),
        phi_weekday,
        phi_weekend,
        delta_phi: phi_weekday.zip(phi_weekend).map(|(a, b)| a - b),
        t_phi: welch_t(&phi_wd, &phi_we).ok(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirmScorecard {
    pub firm_id: String,
    pub industry: String,
    pub n_total: usize,
    pub n_peak: usize,
    pub n_off: usize,
    pub s_off: f64,
    pub pss: f64,
    pub avoidance_ratio: Option<f64>,
    pub fee_savings: Option<f64>,
    pub cheapest_hour: u8,
    pub mean_gas_cheapest: Decimal,
    pub c_actual: Decimal,
    pub c_cf: Decimal,
    pub floor_usd: Decimal,
    pub floor_pct: Option<f64>,
    /// Mean fullness proxy of the firm's transactions in the cheapest hour.
    pub fullness_at_cheapest: Option<f64>,
    /// Fullness coefficient from the firm-level fit.
    pub pass_through: Option<f64>,
    pub pass_through_t: Option<f64>,
    pub pss_pvalue: Option<f64>,
    pub weekday_weekend: WeekdayWeekendOutcome,
    /// Fields that could not be computed, with the reason.
    pub notes: Vec<String>,
}

/// Everything the scorecard needs that is shared across firms.
#[derive(Debug, Clone)]
pub struct ScoreContext<'a> {
    pub pooled_fit: &'a FitResult,
    pub window: &'a PeakWindow,
    pub permutation: &'a PermutationConfig,
}

/// Assembles one firm's scorecard. Only an empty firm is an error; every
/// other gap is recorded in `notes`.
pub fn scorecard(
    panel: &Panel,
    firm_id: &str,
    firm_fit: std::result::Result<&FitResult, &str>,
    ctx: &ScoreContext<'_>,
) -> Result<FirmScorecard> {
    let firm = panel
        .firm(firm_id)
        .ok_or_else(|| Error::config(format!("unknown firm {firm_id}")))?;
    let obs = observations(panel, firm_id);
    let hours: Vec<u8> = obs.iter().map(|o| o.hour).collect();
    let p = pss(&hours, ctx.window)?;
    let floor = residual_floor(&obs)?;
    let mut notes = Vec::new();

    let pooled_hours: Vec<u8> = panel.records.iter().map(|r| r.tx.hour_utc).collect();
    let low_cost = low_cost_hours(ctx.pooled_fit);
    let avoidance = avoidance_ratio(&hours, &pooled_hours, &low_cost)
        .map_err(|e| notes.push(format!("avoidance_ratio: {e}")))
        .ok();
    let savings = fee_savings(&obs, ctx.window);
    if savings.is_none() {
        notes.push("fee_savings: needs transactions both inside and outside the peak window".into());
    }
    if floor.floor_pct.is_none() {
        notes.push("floor_pct: firm spent nothing".into());
    }
    let phi_cheapest: Vec<f64> = obs
        .iter()
        .filter(|o| o.hour == floor.cheapest_hour)
        .filter_map(|o| o.fullness.map(Ppb::as_f64))
        .collect();
    let fullness_at_cheapest = mean_f64(&phi_cheapest);
    if fullness_at_cheapest.is_none() {
        notes.push("fullness_at_cheapest: blocks carry no fullness proxy".into());
    }
    let (pass_through, pass_through_t) = match firm_fit {
        Ok(f) => match f.congestion() {
            Some(t) => (Some(t.coef), t.t),
            None => {
                notes.push("pass_through: firm fit has no congestion term".into());
                (None, None)
            }
        },
        Err(reason) => {
            notes.push(format!("pass_through: {reason}"));
            (None, None)
        }
    };
    let perm_cfg = PermutationConfig {
        replications: ctx.permutation.replications,
        seed: derive_seed(ctx.permutation.seed, firm_id),
    };
    let window = ctx.window;
    let pss_pvalue = permutation_null("pss", &hours, |h| pss(h, window).map(|v| v.pss).unwrap_or(0.0), &perm_cfg)
        .map_err(|e| notes.push(format!("pss_pvalue: {e}")))
        .ok()
        .map(|n| n.p_value);

    Ok(FirmScorecard {
        firm_id: firm_id.to_string(),
        industry: firm.industry.clone(),
        n_total: p.n_total,
        n_peak: p.n_peak,
        n_off: p.n_off,
        s_off: p.s_off,
        pss: p.pss,
        avoidance_ratio: avoidance,
        fee_savings: savings,
        cheapest_hour: floor.cheapest_hour,
        mean_gas_cheapest: floor.mean_at_cheapest,
        c_actual: floor.c_actual,
        c_cf: floor.c_cf,
        floor_usd: floor.floor_usd,
        floor_pct: floor.floor_pct,
        fullness_at_cheapest,
        pass_through,
        pass_through_t,
        pss_pvalue,
        weekday_weekend: weekday_weekend(&obs),
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omission {
    pub firm_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorecardSet {
    pub rows: Vec<FirmScorecard>,
    pub omitted: Vec<Omission>,
}

/// Orders rows by PSS descending, firm id ascending on ties.
pub fn sort_by_pss(rows: &mut [FirmScorecard]) {
    rows.sort_by(|a, b| b.pss.total_cmp(&a.pss).then_with(|| a.firm_id.cmp(&b.firm_id)));
}

/// Scores every firm in parallel. `firm_fits` maps firm id to its fit or the
/// reason it failed.
pub fn score_all(
    panel: &Panel,
    firm_fits: &BTreeMap<String, std::result::Result<FitResult, String>>,
    ctx: &ScoreContext<'_>,
) -> ScorecardSet {
    let results: Vec<(String, Result<FirmScorecard>)> = panel
        .firms
        .par_iter()
        .map(|f| {
            let fit = match firm_fits.get(&f.firm_id) {
                Some(Ok(fit)) => Ok(fit),
                Some(Err(reason)) => Err(reason.as_str()),
                None => Err("no firm-level fit supplied"),
            };
            (f.firm_id.clone(), scorecard(panel, &f.firm_id, fit, ctx))
        })
        .collect();
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for (firm_id, r) in results {
        match r {
            Ok(card) => rows.push(card),
            Err(e) => omitted.push(Omission {
                firm_id,
                reason: e.to_string(),
            }),
        }
    }
    sort_by_pss(&mut rows);
    ScorecardSet { rows, omitted }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::str::FromStr;

    fn obs(hour: u8, fee: &str) -> Observation {
        Observation {
            hour,
            weekday: 0,
            fee_usd: Decimal::from_str(fee).unwrap(),
            fullness: None,
        }
    }

    #[test]
    fn window_validation() {
        assert!(PeakWindow::new([]).is_err());
        assert!(PeakWindow::new(0..24).is_err());
        assert!(PeakWindow::new([24]).is_err());
        let w = PeakWindow::default();
        assert_eq!(w.hours().count(), 8);
        assert!((w.uniform_off_share() - 16.0 / 24.0).abs() < 1e-15);
        let json = serde_json::to_string(&w).unwrap();
        assert_eq!(json, "[11,12,13,14,15,16,17,18]");
        assert_eq!(serde_json::from_str::<PeakWindow>(&json).unwrap(), w);
        assert!(serde_json::from_str::<PeakWindow>("[]").is_err());
    }

    #[test]
    fn pss_examples() {
        let w = PeakWindow::default();
        let v = pss_from_counts(37, 79, &w).unwrap();
        assert!((v.s_off - 0.681).abs() < 0.001 && (v.pss - 0.014).abs() < 0.001);
        let hours: Vec<u8> = (0..24).collect();
        let v = pss(&hours, &w).unwrap();
        assert!((v.s_off - 16.0 / 24.0).abs() < 1e-15);
        assert!(v.pss.abs() < 1e-15);
        assert!(matches!(pss(&[], &w), Err(Error::Metric(_))));
    }

    #[test]
    fn avoidance_examples() {
        let low: BTreeSet<u8> = (17..=22).collect();
        let pooled: Vec<u8> = (0..24).collect();
        assert_eq!(avoidance_ratio(&pooled, &pooled, &low).unwrap(), 1.0);
        let half: Vec<u8> = vec![17, 0];
        assert_eq!(avoidance_ratio(&[17, 18], &half, &low).unwrap(), 2.0);
        assert!(avoidance_ratio(&[17], &[0, 1], &low).is_err());
    }

    #[test]
    fn fee_savings_examples() {
        let w = PeakWindow::default();
        assert_eq!(fee_savings(&[obs(12, "0.2"), obs(3, "0.1")], &w), Some(0.5));
        assert_eq!(fee_savings(&[obs(12, "0.2"), obs(3, "0.2")], &w), Some(0.0));
        assert_eq!(fee_savings(&[obs(12, "0.2")], &w), None);
        // off-peak dearer than peak: negative savings
        assert!(fee_savings(&[obs(12, "0.1"), obs(3, "0.2")], &w).unwrap() < 0.0);
    }

    #[test]
    fn floor_examples() {
        let f = residual_floor(&[obs(3, "0.5"), obs(7, "0.5"), obs(9, "0.5")]).unwrap();
        assert_eq!(f.floor_usd, Decimal::ZERO);
        assert_eq!(f.cheapest_hour, 3);
        let f = residual_floor(&[obs(4, "1.25")]).unwrap();
        assert_eq!(f.floor_usd, Decimal::ZERO);
        assert_eq!(f.floor_pct, Some(0.0));
        let f = residual_floor(&[obs(2, "1"), obs(2, "3"), obs(5, "1"), obs(9, "4")]).unwrap();
        // hour means: 2 -> 2, 5 -> 1, 9 -> 4
        assert_eq!(f.cheapest_hour, 5);
        assert_eq!(f.c_actual, Decimal::from(9));
        assert_eq!(f.c_cf, Decimal::from(4));
        assert_eq!(f.floor_usd, Decimal::from(5));
        let f = residual_floor(&[obs(0, "0"), obs(1, "0")]).unwrap();
        assert_eq!(f.floor_pct, None);
    }

    #[test]
    fn weekday_weekend_cases() {
        let mut a = vec![obs(1, "0.2"), obs(2, "0.4")];
        let mut b = [obs(1, "0.2"), obs(2, "0.4")];
        for o in b.iter_mut() {
            o.weekday = 6;
        }
        for (i, o) in a.iter_mut().chain(b.iter_mut()).enumerate() {
            o.fullness = Some(Ppb::from_units(100_000_000 * (i as u64 % 2 + 1)).unwrap());
        }
        let all: Vec<Observation> = a.iter().chain(b.iter()).cloned().collect();
        let WeekdayWeekendOutcome::Computed(r) = weekday_weekend(&all) else { panic!() };
        assert_eq!(r.premium, Some(0.0));
        assert!(r.delta_phi.unwrap().abs() < 1e-15);
        assert_eq!(r.t_gas.unwrap().t, 0.0);
        assert!(matches!(weekday_weekend(&a), WeekdayWeekendOutcome::Omitted { reason } if reason.contains("weekend")));
        assert!((weekday_premium(0.020, 0.010).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn floor_is_nonnegative(fees in prop::collection::vec((0u8..24, 0u64..10_000_000), 1..60)) {
            let o: Vec<Observation> = fees.iter()
                .map(|(h, c)| Observation { hour: *h, weekday: 0, fee_usd: Decimal::new(*c as i64, 6), fullness: None })
                .collect();
            let f = residual_floor(&o).unwrap();
            prop_assert!(f.floor_usd >= Decimal::ZERO);
            prop_assert_eq!(f.c_cf + f.floor_usd, f.c_actual);
            if let Some(p) = f.floor_pct {
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }

        #[test]
        fn window_complement_shares(hours in prop::collection::vec(0u8..24, 1..100)) {
            let w = PeakWindow::default();
            let a = pss(&hours, &w).unwrap();
            let b = pss(&hours, &w.complement()).unwrap();
            prop_assert_eq!(a.n_off, b.n_peak);
            prop_assert!((a.s_off + b.s_off - 1.0).abs() < 1e-12);
            prop_assert!(a.pss >= -16.0 / 24.0 - 1e-12 && a.pss <= 8.0 / 24.0 + 1e-12);
        }

        #[test]
        fn scale_invariance(fees in prop::collection::vec((0u8..24, 1u64..1_000_000), 2..40), c in 1u64..1000) {
            let w = PeakWindow::default();
            let base: Vec<Observation> = fees.iter()
                .map(|(h, f)| Observation { hour: *h, weekday: 0, fee_usd: Decimal::new(*f as i64, 6), fullness: None })
                .collect();
            let scaled: Vec<Observation> = base.iter()
                .map(|o| Observation { fee_usd: o.fee_usd * Decimal::from(c), ..o.clone() })
                .collect();
            let (fa, fb) = (residual_floor(&base).unwrap(), residual_floor(&scaled).unwrap());
            prop_assert_eq!(fa.cheapest_hour, fb.cheapest_hour);
            // Decimal means round in the last digit, so scale by c only up to that.
            prop_assert!((fa.floor_usd * Decimal::from(c) - fb.floor_usd).abs() <= Decimal::new(c as i64, 20));
            prop_assert!((fa.floor_pct.unwrap() - fb.floor_pct.unwrap()).abs() < 1e-12);
            match (fee_savings(&base, &w), fee_savings(&scaled, &w)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
