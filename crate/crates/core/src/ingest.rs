//! Flat-file loaders for daily market series and trade ledgers.
//!
//! Series file columns: `date,asset_id,price,market_cap,volume`.
//! Trades file columns: `seq,date,asset_id,amount,price`.
//! Both are comma separated with a mandatory header row; dates are
//! ISO-8601 calendar days.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::Trade;
use crate::timeseries::{Observation, PriceSeries, TimeseriesError};

pub const SERIES_HEADER: [&str; 5] = ["date", "asset_id", "price", "market_cap", "volume"];
pub const TRADES_HEADER: [&str; 5] = ["seq", "date", "asset_id", "amount", "price"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("header must be `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: duplicate row for ({asset_id}, {date}), first seen on line {first_line}")]
    DuplicateRow {
        line: u64,
        first_line: u64,
        asset_id: String,
        date: NaiveDate,
    },
    #[error("line {line}: {asset_id} seq {seq} does not follow {prev}")]
    SeqOrder {
        line: u64,
        asset_id: String,
        seq: u64,
        prev: u64,
    },
    #[error("line {line}: first trade of {asset_id} is a sell, no cost basis")]
    NoCostBasis { line: u64, asset_id: String },
    #[error("line {line}: {message}")]
    Invalid { line: u64, message: String },
    #[error("{0}")]
    Series(#[from] TimeseriesError),
    #[error("write failed: {0}")]
    Write(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesRow {
    date: NaiveDate,
    asset_id: String,
    price: f64,
    market_cap: f64,
    volume: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TradeRow {
    seq: u64,
    date: NaiveDate,
    asset_id: String,
    amount: f64,
    price: f64,
}

/// Source of market data. Only the file-backed implementation ships.
pub trait MarketDataSource {
    fn price_series(&self) -> Result<BTreeMap<String, PriceSeries>>;
}

pub struct FileSource {
    pub path: PathBuf,
}

impl MarketDataSource for FileSource {
    fn price_series(&self) -> Result<BTreeMap<String, PriceSeries>> {
        load_series(&self.path)
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn reader<R: Read>(input: R, expected: &[&str]) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(IngestError::Header {
            expected: expected.join(","),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(rdr)
}

fn rows<T, R>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = Result<(u64, T)>> + '_
where
    T: serde::de::DeserializeOwned,
    R: Read,
{
    let headers = rdr.headers().cloned().unwrap_or_default();
    rdr.records().map(move |rec| {
        let parse_err = |e: csv::Error| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        rec.deserialize(Some(&headers))
            .map(|row| (line, row))
            .map_err(|e| IngestError::Parse {
                line,
                message: e.to_string(),
            })
    })
}

pub fn load_series(path: impl AsRef<Path>) -> Result<BTreeMap<String, PriceSeries>> {
    read_series(open(path.as_ref())?)
}

/// Parses a series file. Rows may come in any order; duplicates of
/// `(asset_id, date)` are rejected.
pub fn read_series<R: Read>(input: R) -> Result<BTreeMap<String, PriceSeries>> {
    let mut rdr = reader(input, &SERIES_HEADER)?;
    let mut by_asset: BTreeMap<String, BTreeMap<NaiveDate, (u64, Observation)>> = BTreeMap::new();
    for rec in rows::<SeriesRow, _>(&mut rdr) {
        let (line, row) = rec?;
        if row.asset_id.is_empty() {
            return Err(IngestError::Invalid {
                line,
                message: "empty asset_id".into(),
            });
        }
        let obs = Observation {
            date: row.date,
            price: row.price,
            market_cap: row.market_cap,
            volume: row.volume,
        };
        match by_asset.entry(row.asset_id.clone()).or_default().entry(row.date) {
            Entry::Occupied(first) => {
                return Err(IngestError::DuplicateRow {
                    line,
                    first_line: first.get().0,
                    asset_id: row.asset_id,
                    date: row.date,
                })
            }
            Entry::Vacant(slot) => {
                slot.insert((line, obs));
            }
        }
    }
    by_asset
        .into_iter()
        .map(|(asset_id, rows)| {
            let obs: Vec<Observation> = rows.into_values().map(|(_, o)| o).collect();
            PriceSeries::new(asset_id.clone(), obs).map(|s| (asset_id, s))
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(IngestError::from)
}

pub fn load_trades(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<Trade>>> {
    read_trades(open(path.as_ref())?)
}

/// Parses a trades file into per-asset lists, preserving file order within
/// each asset. Sequence numbers must increase per asset and each asset's
/// first trade must be a buy.
pub fn read_trades<R: Read>(input: R) -> Result<BTreeMap<String, Vec<Trade>>> {
    let mut rdr = reader(input, &TRADES_HEADER)?;
    let mut out: BTreeMap<String, Vec<Trade>> = BTreeMap::new();
    for rec in rows::<TradeRow, _>(&mut rdr) {
        let (line, row) = rec?;
        if row.asset_id.is_empty() {
            return Err(IngestError::Invalid {
                line,
                message: "empty asset_id".into(),
            });
        }
        if row.amount == 0.0 || !row.amount.is_finite() {
            return Err(IngestError::Invalid {
                line,
                message: format!("trade amount must be non-zero, got {}", row.amount),
            });
        }
        if !(row.price > 0.0) || !row.price.is_finite() {
            return Err(IngestError::Invalid {
                line,
                message: format!("trade price must be positive, got {}", row.price),
            });
        }
        let list = out.entry(row.asset_id.clone()).or_default();
        match list.last() {
            None if row.amount < 0.0 => {
                return Err(IngestError::NoCostBasis {
                    line,
                    asset_id: row.asset_id,
                })
            }
            Some(prev) if row.seq <= prev.seq => {
                return Err(IngestError::SeqOrder {
                    line,
                    asset_id: row.asset_id,
                    seq: row.seq,
                    prev: prev.seq,
                })
            }
            _ => {}
        }
        if row.seq == 0 {
            return Err(IngestError::Invalid {
                line,
                message: "seq is 1-based".into(),
            });
        }
        list.push(Trade {
            seq: row.seq,
            date: row.date,
            asset_id: row.asset_id,
            amount: row.amount,
            price: row.price,
        });
    }
    Ok(out)
}

fn write_err(e: impl std::fmt::Display) -> IngestError {
    IngestError::Write(e.to_string())
}

/// Writes series in `(asset_id, date)` order.
pub fn write_series<W: Write>(series: &BTreeMap<String, PriceSeries>, out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for s in series.values() {
        for o in s.observations() {
            wtr.serialize(SeriesRow {
                date: o.date,
                asset_id: s.asset_id().to_string(),
                price: o.price,
                market_cap: o.market_cap,
                volume: o.volume,
            })
            .map_err(write_err)?;
        }
    }
    if series.values().all(PriceSeries::is_empty) {
        wtr.write_record(SERIES_HEADER).map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)
}

/// Writes trades grouped by asset, in per-asset order.
pub fn write_trades<W: Write>(trades: &BTreeMap<String, Vec<Trade>>, out: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for t in trades.values().flatten() {
        wtr.serialize(TradeRow {
            seq: t.seq,
            date: t.date,
            asset_id: t.asset_id.clone(),
            amount: t.amount,
            price: t.price,
        })
        .map_err(write_err)?;
    }
    if trades.values().all(Vec::is_empty) {
        wtr.write_record(TRADES_HEADER).map_err(write_err)?;
    }
    wtr.flush().map_err(write_err)
}
