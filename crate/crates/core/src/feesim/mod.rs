//! Discrete-block EIP-1559 fee market with transactional and speculative
//! demand, policy costing, and synthetic panels with known ground truth.

mod demand;
mod market;
mod policy;
mod sim;
mod synthetic;

pub use demand::{ArrivalProcess, DemandParams, SpeculativeDemand, Span, TransactionalDemand, DEFAULT_BURST_WINDOW};
pub use market::{
    admit, base_fee_update, tx_cost, DemandClass, FeeMarketState, Inclusion, MarketParams, SimTx,
    BASE_FEE_DENOMINATOR, DEFAULT_GAS_TARGET, GWEI,
};
pub use policy::{evaluate_policy, schedule_policy, Placement, Policy, PolicyCost};
pub use sim::{
    read_trajectory, simulate, write_trajectory, BlockOutcome, InclusionEntry, Scenario, Trajectory,
    DEFAULT_BLOCKS_PER_HOUR,
};
pub use synthetic::{
    export_synthetic_panel, GroundTruth, SyntheticConfig, SyntheticExport, SyntheticFirm, DEFAULT_START_BLOCK,
    DEFAULT_START_TIMESTAMP,
};

/// A fixed workload of plain transfers spread over the day, with a fee cap
/// high enough to clear any base fee the default scenario reaches.
pub fn transfer_workload(n: usize) -> Vec<SimTx> {
    (0..n)
        .map(|i| SimTx {
            class: DemandClass::T,
            gas: 21_000,
            priority_fee: GWEI,
            max_fee: 500 * GWEI,
            submit_hour: (i % 24) as u8,
        })
        .collect()
}
