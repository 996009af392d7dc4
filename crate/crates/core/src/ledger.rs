//! Weighted-average-cost position accounting with realized and unrealized P&L.
//!
//! Positions are long-only. Buys move the cost basis to the quantity-weighted
//! mean of the old basis and the fill price; sells leave the basis untouched
//! and realize `|amount| * (price - basis)`.
//!
//! The realized return divides cumulative realized P&L by the cost basis of
//! the whole position held just before the sell, so it is not additive
//! across partial sells.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LedgerError {
    #[error("{asset_id} trade #{seq}: zero amount")]
    ZeroAmount { asset_id: String, seq: u64 },
    #[error("{asset_id} trade #{seq}: non-positive price {price}")]
    NonPositivePrice { asset_id: String, seq: u64, price: f64 },
    #[error("{asset_id} trade #{seq}: sell before any buy, no cost basis")]
    NoCostBasis { asset_id: String, seq: u64 },
    #[error("{asset_id} trade #{seq}: oversell by {shortfall} units")]
    Oversell {
        asset_id: String,
        seq: u64,
        shortfall: f64,
    },
    #[error("{asset_id} trade #{seq}: sequence must exceed {last_seq}")]
    OutOfSequence {
        asset_id: String,
        seq: u64,
        last_seq: u64,
    },
    #[error("trade for {got} applied to ledger of {expected}")]
    AssetMismatch { expected: String, got: String },
    #[error("no buy trades for {asset_id}")]
    NoBuys { asset_id: String },
    #[error("non-positive mark price {mark} for {asset_id}")]
    NonPositiveMark { asset_id: String, mark: f64 },
}

pub type Result<T> = std::result::Result<T, LedgerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub seq: u64,
    pub date: NaiveDate,
    pub asset_id: String,
    /// Signed quantity: positive buys, negative sells.
    pub amount: f64,
    pub price: f64,
}

impl Trade {
    pub fn is_buy(&self) -> bool {
        self.amount > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerState {
    pub asset_id: String,
    pub position: f64,
    pub wavg_price: f64,
    pub realized_pnl: f64,
    /// Carried on buys, recomputed on sells.
    pub realized_return: f64,
    /// 0 before the first trade.
    pub last_seq: u64,
    pub trade_count: u64,
}

impl LedgerState {
    pub fn new(asset_id: impl Into<String>) -> Self {
        Self {
            asset_id: asset_id.into(),
            position: 0.0,
            wavg_price: 0.0,
            realized_pnl: 0.0,
            realized_return: 0.0,
            last_seq: 0,
            trade_count: 0,
        }
    }

    pub fn has_cost_basis(&self) -> bool {
        self.wavg_price > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PnlSnapshot {
    pub as_of_seq: u64,
    pub mark_price: f64,
    pub unrealized_pnl: f64,
    pub realized_pnl: f64,
    pub unrealized_return: f64,
    pub realized_return: f64,
}

/// Applies one trade. Sequence numbers must be strictly increasing per asset.
pub fn apply_trade(state: &LedgerState, trade: &Trade) -> Result<LedgerState> {
    let asset_id = &state.asset_id;
    if trade.asset_id != *asset_id {
        return Err(LedgerError::AssetMismatch {
            expected: asset_id.clone(),
            got: trade.asset_id.clone(),
        });
    }
    if trade.seq <= state.last_seq {
        return Err(LedgerError::OutOfSequence {
            asset_id: asset_id.clone(),
            seq: trade.seq,
            last_seq: state.last_seq,
        });
    }
    if trade.amount == 0.0 || !trade.amount.is_finite() {
        return Err(LedgerError::ZeroAmount {
            asset_id: asset_id.clone(),
            seq: trade.seq,
        });
    }
    if !(trade.price > 0.0) || !trade.price.is_finite() {
        return Err(LedgerError::NonPositivePrice {
            asset_id: asset_id.clone(),
            seq: trade.seq,
            price: trade.price,
        });
    }

    let mut next = state.clone();
    next.last_seq = trade.seq;
    next.trade_count += 1;

    if trade.is_buy() {
        next.wavg_price = (state.wavg_price * state.position + trade.amount * trade.price)
            / (state.position + trade.amount);
        next.position = state.position + trade.amount;
    } else {
        if !state.has_cost_basis() {
            return Err(LedgerError::NoCostBasis {
                asset_id: asset_id.clone(),
                seq: trade.seq,
            });
        }
        let qty = -trade.amount;
        if qty > state.position {
            return Err(LedgerError::Oversell {
                asset_id: asset_id.clone(),
                seq: trade.seq,
                shortfall: qty - state.position,
            });
        }
        next.realized_pnl = state.realized_pnl + qty * (trade.price - state.wavg_price);
        next.position = state.position - qty;
    }
    next.realized_return = realized_return(state, &next, trade);
    Ok(next)
}

fn realized_return(before: &LedgerState, after: &LedgerState, trade: &Trade) -> f64 {
    if before.trade_count == 0 || trade.is_buy() {
        before.realized_return
    } else {
        // before.position > 0 here since the sell passed the oversell check
        after.realized_pnl / (before.wavg_price * before.position)
    }
}

/// Buy-only weighted mean price over a whole trade list.
pub fn batch_wavg(trades: &[Trade]) -> Result<f64> {
    let (notional, qty) = trades
        .iter()
        .filter(|t| t.is_buy())
        .fold((0.0, 0.0), |(n, q), t| (n + t.amount * t.price, q + t.amount));
    if qty == 0.0 {
        return Err(LedgerError::NoBuys {
            asset_id: trades.first().map(|t| t.asset_id.clone()).unwrap_or_default(),
        });
    }
    Ok(notional / qty)
}

pub fn unrealized_pnl(state: &LedgerState, mark_price: f64) -> f64 {
    if state.position == 0.0 {
        return 0.0;
    }
    state.position * (mark_price - state.wavg_price)
}

pub fn unrealized_return(state: &LedgerState, mark_price: f64) -> f64 {
    if state.position > 0.0 {
        unrealized_pnl(state, mark_price) / (state.wavg_price * state.position)
    } else {
        0.0
    }
}

/// Returns after the transition `state_before --trade--> state_after`, marked at `mark`.
pub fn pnl_returns(
    state_before: &LedgerState,
    state_after: &LedgerState,
    trade: &Trade,
    mark: f64,
) -> Result<PnlSnapshot> {
    if !(mark > 0.0) {
        return Err(LedgerError::NonPositiveMark {
            asset_id: state_after.asset_id.clone(),
            mark,
        });
    }
    Ok(PnlSnapshot {
        as_of_seq: state_after.last_seq,
        mark_price: mark,
        unrealized_pnl: unrealized_pnl(state_after, mark),
        realized_pnl: state_after.realized_pnl,
        unrealized_return: unrealized_return(state_after, mark),
        realized_return: realized_return(state_before, state_after, trade),
    })
}

/// Snapshot of a state without reference to the trade that produced it.
pub fn snapshot(state: &LedgerState, mark: f64) -> Result<PnlSnapshot> {
    if !(mark > 0.0) {
        return Err(LedgerError::NonPositiveMark {
            asset_id: state.asset_id.clone(),
            mark,
        });
    }
    Ok(PnlSnapshot {
        as_of_seq: state.last_seq,
        mark_price: mark,
        unrealized_pnl: unrealized_pnl(state, mark),
        realized_pnl: state.realized_pnl,
        unrealized_return: unrealized_return(state, mark),
        realized_return: state.realized_return,
    })
}

/// Replays a trade list from an empty state.
pub fn replay(asset_id: &str, trades: &[Trade]) -> Result<LedgerState> {
    trades
        .iter()
        .try_fold(LedgerState::new(asset_id), |s, t| apply_trade(&s, t))
}

/// Independent per-asset ledgers.
#[derive(Debug, Clone, Default)]
pub struct PortfolioLedger {
    states: BTreeMap<String, LedgerState>,
}

impl PortfolioLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, trade: &Trade) -> Result<&LedgerState> {
        let current = self
            .states
            .entry(trade.asset_id.clone())
            .or_insert_with(|| LedgerState::new(trade.asset_id.clone()));
        *current = apply_trade(current, trade)?;
        Ok(current)
    }

    pub fn get(&self, asset_id: &str) -> Option<&LedgerState> {
        self.states.get(asset_id)
    }

    pub fn states(&self) -> impl Iterator<Item = &LedgerState> {
        self.states.values()
    }

    /// Sum of realized and unrealized P&L across assets; `mark` must return
    /// a price for every asset held.
    pub fn total_pnl<F>(&self, mut mark: F) -> (f64, f64)
    where
        F: FnMut(&str) -> f64,
    {
        self.states.values().fold((0.0, 0.0), |(r, u), s| {
            (r + s.realized_pnl, u + unrealized_pnl(s, mark(&s.asset_id)))
        })
    }
}
