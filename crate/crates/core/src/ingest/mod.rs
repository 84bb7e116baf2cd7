//! Parsing, validation and normalization of transaction exports and block
//! rewards into the canonical [`Panel`].

mod panel;
mod parse;
mod record;

pub use panel::{
    build_panel, filter_valid, BuildReport, Exclusion, ExclusionReason, FilterOutcome, FirmCount, Panel,
    PanelRecord, TxBatch, PANEL_SCHEMA,
};
pub use parse::{
    parse_blocks, parse_transactions, write_blocks, write_transactions, BlockColumns, BlockRow, ColumnMap,
    ParseOutcome, RowReject, FEE_REL_TOL, USD_REL_TOL,
};
pub use record::{
    classify_tx_type, hour_of, weekday_of, Address, BlockFullness, BlockStat, Firm, TxRecord, TxType,
    PLAIN_TRANSFER_GAS, SECONDS_PER_DAY,
};
