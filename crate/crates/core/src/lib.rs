//! Portfolio risk analytics for crypto funds: concentration risk indicator
//! (CRI), rolling volatility, weighted-average-cost P&L, three-fund parity
//! aggregation, multi-chain factors and five-pillar risk limits.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cri;
pub mod ingest;
pub mod ledger;
pub mod report;
pub mod riskguard;
pub mod timeseries;

pub use cri::{
    cri_portfolio, AssetRiskInput, ChainAllocation, FundMix, FundSpec, MarketContext,
    MarketFactorMode, ParitySpec,
};
pub use ledger::{apply_trade, LedgerState, Trade};
pub use riskguard::{run_guard, GuardConfig, GuardReport, HoldingSnapshot};
pub use timeseries::{PriceSeries, ReturnSeries, VolEstimate};
