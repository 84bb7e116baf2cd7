//! Regime classification, forward gas-price curve and defer/submit advice.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::econometrics::{FitResult, HOURS};
use crate::error::{Error, Result};
use crate::metrics::PeakWindow;

/// |t| below this counts as indistinguishable from the baseline hour.
pub const SIGNIFICANCE_T: f64 = 1.96;

/// Relative distance to the gas threshold inside which a classification is
/// flagged as borderline.
pub const BORDERLINE_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub hour: u8,
    /// `alpha + beta_h`; absent when the hour was dropped from the fit.
    pub expected_fee: Option<f64>,
    pub beta: Option<f64>,
    pub t: Option<f64>,
    pub inestimable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardCurve {
    pub source_fit: String,
    pub baseline_hour: u8,
    /// Intercept: expected fee in the baseline hour.
    pub baseline: f64,
    /// Largest hour coefficient inside the peak window.
    pub peak_premium: f64,
    pub points: Vec<CurvePoint>,
}

impl ForwardCurve {
    pub fn fee(&self, hour: u8) -> Option<f64> {
        self.points.get(hour as usize).and_then(|p| p.expected_fee)
    }

    /// Cheapest estimable hour; ties go to the lower hour.
    pub fn cheapest_hour(&self) -> Option<u8> {
        self.points
            .iter()
            .filter_map(|p| p.expected_fee.map(|f| (f, p.hour)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, h)| h)
    }
}

pub fn forward_curve(fit: &FitResult, window: &PeakWindow) -> Result<ForwardCurve> {
    let baseline_hour = fit.spec.baseline_hour;
    let alpha = fit
        .intercept()
        .ok_or_else(|| Error::config(format!("fit {} has no intercept", fit.fit_id)))?
        .coef;
    if fit.hour_terms().next().is_none() {
        return Err(Error::config(format!("fit {} has no hour terms", fit.fit_id)));
    }
    let points: Vec<CurvePoint> = (0..HOURS as u8)
        .map(|h| {
            if h == baseline_hour {
                return CurvePoint {
                    hour: h,
                    expected_fee: Some(alpha),
                    beta: Some(0.0),
                    t: None,
                    inestimable: false,
                };
            }
            match fit.hour(h) {
                Some(est) => CurvePoint {
                    hour: h,
                    expected_fee: Some(alpha + est.coef),
                    beta: Some(est.coef),
                    t: est.t,
                    inestimable: false,
                },
                None => CurvePoint {
                    hour: h,
                    expected_fee: None,
                    beta: None,
                    t: None,
                    inestimable: true,
                },
            }
        })
        .collect();
    let peak_premium = window
        .hours()
        .filter_map(|h| points[h as usize].beta)
        .max_by(f64::total_cmp)
        .ok_or_else(|| Error::config("no estimable hour inside the peak window"))?;
    Ok(ForwardCurve {
        source_fit: fit.fit_id.clone(),
        baseline_hour,
        baseline: alpha,
        peak_premium,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    I,
    II,
    III,
    IV,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::I => "I",
            Regime::II => "II",
            Regime::III => "III",
            Regime::IV => "IV",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    ScheduleOffPeak,
    MonitorAndBatch,
    ProvisionBudget,
    AcceptMarket,
}

impl Regime {
    pub fn action(self) -> Action {
        match self {
            Regime::I => Action::ScheduleOffPeak,
            Regime::II => Action::MonitorAndBatch,
            Regime::III => Action::ProvisionBudget,
            Regime::IV => Action::AcceptMarket,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::ScheduleOffPeak => "SCHEDULE_OFF_PEAK",
            Action::MonitorAndBatch => "MONITOR_AND_BATCH",
            Action::ProvisionBudget => "PROVISION_BUDGET",
            Action::AcceptMarket => "ACCEPT_MARKET",
        })
    }
}

/// Gas intensity of a transaction profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GasIntensity {
    High,
    Low,
    /// Expected fee in USD, compared against the threshold.
    Usd(f64),
}

impl FromStr for GasIntensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<GasIntensity> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(GasIntensity::High),
            "low" => Ok(GasIntensity::Low),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|g| g.is_finite() && *g >= 0.0)
                .map(GasIntensity::Usd)
                .ok_or_else(|| Error::config(format!("gas must be high, low or a non-negative USD amount, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxProfile {
    pub gas: GasIntensity,
    pub deferrable: bool,
    /// USD cost of delaying the transaction.
    pub kappa: f64,
    /// Hours the transaction may wait, counted from `submit_hour`.
    pub deadline_window: Option<u32>,
    pub monthly_volume: Option<u64>,
    /// Hour at which the transaction would otherwise be sent.
    pub submit_hour: Option<u8>,
}

impl TxProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::config("kappa must be non-negative"));
        }
        if self.deadline_window == Some(0) {
            return Err(Error::config("deadline window must be at least one hour"));
        }
        if let Some(h) = self.submit_hour.filter(|&h| h as usize >= HOURS) {
            return Err(Error::config(format!("submit hour {h} outside 0-23")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegimeClass {
    pub regime: Regime,
    pub borderline: bool,
}

/// High gas means strictly above the threshold.
pub fn classify_regime(profile: &TxProfile, gas_threshold: f64) -> RegimeClass {
    let (high, borderline) = match profile.gas {
        GasIntensity::High => (true, false),
        GasIntensity::Low => (false, false),
        GasIntensity::Usd(g) => (
            g > gas_threshold,
            gas_threshold > 0.0 && ((g - gas_threshold) / gas_threshold).abs() < BORDERLINE_BAND,
        ),
    };
    let regime = match (high, profile.deferrable) {
        (true, true) => Regime::I,
        (false, true) => Regime::II,
        (true, false) => Regime::III,
        (false, false) => Regime::IV,
    };
    RegimeClass { regime, borderline }
}

/// Defer only when the saving strictly exceeds the delay cost.
pub fn defer_decision(fee_delta: f64, kappa: f64) -> bool {
    fee_delta > kappa
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Defer,
    SubmitNow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecommendation {
    pub regime: Regime,
    pub borderline: bool,
    pub action: Action,
    /// Ordered by expected fee, then hour.
    pub recommended_hours: Vec<u8>,
    pub expected_saving_per_tx: f64,
    /// Saving across `monthly_volume` transactions (Regime II).
    pub expected_saving_total: Option<f64>,
    /// Extra USD to budget per peak-window transaction (Regime III).
    pub provisioning_surcharge: f64,
    /// Surcharge times `monthly_volume` (Regime III).
    pub provisioning_budget: Option<f64>,
    pub decision: Decision,
    pub gas_threshold: f64,
    pub source_fit: String,
    pub warnings: Vec<String>,
}

/// Hours the transaction may move into: all hours, or the `deadline_window`
/// hours starting at `submit_hour`.
fn allowed_hours(profile: &TxProfile) -> Vec<u8> {
    match (profile.submit_hour, profile.deadline_window) {
        (Some(start), Some(w)) => (0..w.min(HOURS as u32)).map(|d| ((start as u32 + d) % HOURS as u32) as u8).collect(),
        _ => (0..HOURS as u8).collect(),
    }
}

fn qualifies(p: &CurvePoint, baseline_hour: u8) -> bool {
    if p.inestimable {
        return false;
    }
    p.hour == baseline_hour
        || p.beta.is_some_and(|b| b < 0.0)
        || p.t.is_none_or(|t| t.abs() < SIGNIFICANCE_T)
}

pub fn recommend(profile: &TxProfile, curve: &ForwardCurve, gas_threshold: f64) -> Result<RegimeRecommendation> {
    profile.validate()?;
    if !(gas_threshold > 0.0) {
        return Err(Error::config("gas threshold must be positive"));
    }
    let class = classify_regime(profile, gas_threshold);
    let mut warnings = Vec::new();
    let mut rec = RegimeRecommendation {
        regime: class.regime,
        borderline: class.borderline,
        action: class.regime.action(),
        recommended_hours: Vec::new(),
        expected_saving_per_tx: 0.0,
        expected_saving_total: None,
        provisioning_surcharge: 0.0,
        provisioning_budget: None,
        decision: Decision::SubmitNow,
        gas_threshold,
        source_fit: curve.source_fit.clone(),
        warnings: Vec::new(),
    };
    match class.regime {
        Regime::I | Regime::II => {
            let allowed = allowed_hours(profile);
            let mut hours: Vec<(f64, u8)> = curve
                .points
                .iter()
                .filter(|p| allowed.contains(&p.hour) && qualifies(p, curve.baseline_hour))
                .filter_map(|p| p.expected_fee.map(|f| (f, p.hour)))
                .collect();
            if hours.is_empty() {
                let fallback = curve
                    .points
                    .iter()
                    .filter(|p| allowed.contains(&p.hour))
                    .filter_map(|p| p.expected_fee.map(|f| (f, p.hour)))
                    .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                    .ok_or_else(|| Error::config("no estimable hour inside the allowed window"))?;
                let msg = format!("no statistically cheap hour available; falling back to hour {}", fallback.1);
                warn!("{msg}");
                warnings.push(msg);
                hours.push(fallback);
            }
            hours.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let best = hours[0].0;
            let reference = match profile.submit_hour {
                Some(h) => curve
                    .fee(h)
                    .ok_or_else(|| Error::config(format!("submit hour {h} is inestimable in the fitted curve")))?,
                None => curve.baseline + curve.peak_premium,
            };
            let saving = (reference - best).max(0.0);
            rec.recommended_hours = hours.into_iter().map(|(_, h)| h).collect();
            rec.expected_saving_per_tx = saving;
            let fee_delta = match (class.regime, profile.monthly_volume) {
                (Regime::II, Some(v)) => {
                    let total = saving * v as f64;
                    rec.expected_saving_total = Some(total);
                    total
                }
                _ => saving,
            };
            if defer_decision(fee_delta, profile.kappa) {
                rec.decision = Decision::Defer;
            }
        }
        Regime::III => {
            rec.provisioning_surcharge = curve.peak_premium.max(0.0);
            rec.provisioning_budget = profile.monthly_volume.map(|v| rec.provisioning_surcharge * v as f64);
        }
        Regime::IV => {}
    }
    rec.warnings = warnings;
    Ok(rec)
}

/// How the high/low gas threshold is derived from a panel's fees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum GasThreshold {
    #[default]
    Mean,
    Median,
    Absolute(f64),
}

impl FromStr for GasThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<GasThreshold> {
        match s.trim() {
            "mean" => Ok(GasThreshold::Mean),
            "median" => Ok(GasThreshold::Median),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0)
                .map(GasThreshold::Absolute)
                .ok_or_else(|| Error::config(format!("gas threshold must be mean, median or a positive USD amount, got {s:?}"))),
        }
    }
}

impl GasThreshold {
    /// Median is the lower middle element for even samples.
    pub fn resolve(self, fees_usd: &[f64]) -> Result<f64> {
        let value = match self {
            GasThreshold::Absolute(v) => v,
            GasThreshold::Mean | GasThreshold::Median if fees_usd.is_empty() => {
                return Err(Error::data("gas threshold from an empty fee sample"))
            }
            GasThreshold::Mean => fees_usd.iter().sum::<f64>() / fees_usd.len() as f64,
            GasThreshold::Median => {
                let mut v = fees_usd.to_vec();
                v.sort_by(f64::total_cmp);
                v[(v.len() - 1) / 2]
            }
        };
        if !(value > 0.0) {
            return Err(Error::data(format!("gas threshold {value} is not positive")));
        }
        Ok(value)
    }
}
