use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::market::{tx_cost, Inclusion, SimTx};
use super::sim::Trajectory;
use crate::econometrics::HOURS;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Policy {
    /// Spread submissions evenly over all 24 hours.
    Uniform,
    /// Spread submissions evenly over `off_hours`.
    PeakShave { off_hours: BTreeSet<u8> },
    /// Send everything in the hour with the lowest realized mean base fee.
    CheapestHour,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Uniform => "UNIFORM",
            Policy::PeakShave { .. } => "PEAK_SHAVE",
            Policy::CheapestHour => "CHEAPEST_HOUR",
        }
    }

    /// Peak shaving around a peak window.
    pub fn peak_shave(peak: impl IntoIterator<Item = u8>) -> Policy {
        let peak: BTreeSet<u8> = peak.into_iter().collect();
        Policy::PeakShave {
            off_hours: (0..HOURS as u8).filter(|h| !peak.contains(h)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCost {
    pub policy: String,
    pub n_included: usize,
    pub n_not_included: usize,
    pub total_cost_wei: u128,
    /// Mean over included transactions.
    pub mean_cost_wei: f64,
}

/// Hours a transaction may use: every hour, or `deadline` hours from its
/// submit hour.
fn window(tx: &SimTx, deadline: Option<u32>) -> Vec<u8> {
    match deadline {
        None => (0..HOURS as u8).collect(),
        Some(d) => (0..d.min(HOURS as u32))
            .map(|k| ((tx.submit_hour as u32 + k) % HOURS as u32) as u8)
            .collect(),
    }
}

/// Where one workload transaction landed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub hour_of_day: u8,
    pub base_fee: u128,
    pub inclusion: Inclusion,
}

/// Places each transaction of `workload` under `policy` against the realized
/// base fees, in workload order.
///
/// Transactions assigned to an hour of day are spread evenly over the
/// trajectory's blocks in that hour of day, across all simulated days.
pub fn schedule_policy(
    traj: &Trajectory,
    policy: &Policy,
    workload: &[SimTx],
    deadline: Option<u32>,
) -> Result<Vec<Placement>> {
    if deadline == Some(0) {
        return Err(Error::config("deadline must be at least one hour"));
    }
    let mut by_hour: Vec<Vec<u128>> = vec![Vec::new(); HOURS];
    for b in &traj.blocks {
        by_hour[b.hour_of_day as usize].push(b.base_fee);
    }
    let means = traj.hourly_mean_base_fee();

    let mut assigned: Vec<u8> = Vec::with_capacity(workload.len());
    for (i, tx) in workload.iter().enumerate() {
        let allowed: Vec<u8> = window(tx, deadline)
            .into_iter()
            .filter(|&h| match policy {
                Policy::Uniform | Policy::CheapestHour => true,
                Policy::PeakShave { off_hours } => off_hours.contains(&h),
            })
            .filter(|&h| !by_hour[h as usize].is_empty())
            .collect();
        if allowed.is_empty() {
            return Err(Error::config(format!(
                "{} leaves no simulated hour for a transaction submitted at hour {}",
                policy.name(),
                tx.submit_hour
            )));
        }
        let hour = match policy {
            Policy::CheapestHour => allowed
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    let (fa, fb) = (means[a as usize].unwrap_or(f64::INFINITY), means[b as usize].unwrap_or(f64::INFINITY));
                    fa.total_cmp(&fb).then(a.cmp(&b))
                })
                .expect("nonempty"),
            _ => allowed[i % allowed.len()],
        };
        assigned.push(hour);
    }

    let mut count = [0usize; HOURS];
    for &h in &assigned {
        count[h as usize] += 1;
    }
    let mut seen = [0usize; HOURS];
    Ok(workload
        .iter()
        .zip(&assigned)
        .map(|(tx, &h)| {
            let fees = &by_hour[h as usize];
            let j = seen[h as usize];
            seen[h as usize] += 1;
            let base_fee = fees[j * fees.len() / count[h as usize]];
            Placement {
                hour_of_day: h,
                base_fee,
                inclusion: tx_cost(tx, base_fee),
            }
        })
        .collect())
}

/// Total and mean cost of [`schedule_policy`]'s placements.
pub fn evaluate_policy(
    traj: &Trajectory,
    policy: &Policy,
    workload: &[SimTx],
    deadline: Option<u32>,
) -> Result<PolicyCost> {
    let mut out = PolicyCost {
        policy: policy.name().to_string(),
        n_included: 0,
        n_not_included: 0,
        total_cost_wei: 0,
        mean_cost_wei: 0.0,
    };
    for p in schedule_policy(traj, policy, workload, deadline)? {
        match p.inclusion {
            Inclusion::Included { cost_wei } => {
                out.n_included += 1;
                out.total_cost_wei += cost_wei;
            }
            Inclusion::NotIncluded => out.n_not_included += 1,
        }
    }
    if out.n_included > 0 {
        out.mean_cost_wei = out.total_cost_wei as f64 / out.n_included as f64;
    }
    Ok(out)
}
