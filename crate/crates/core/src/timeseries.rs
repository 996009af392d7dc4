//! Continuously compounded returns and rolling volatility over daily price series.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default trailing window (in returns) for volatility estimates.
pub const DEFAULT_WINDOW: usize = 90;
/// Default reporting horizon in days.
pub const DEFAULT_HORIZON: u32 = 30;
/// Crypto markets trade every calendar day.
pub const DEFAULT_ANNUALIZATION_DAYS: u32 = 365;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeseriesError {
    #[error("non-positive price {price} for {asset_id} on {date}")]
    NonPositivePrice {
        asset_id: String,
        date: NaiveDate,
        price: f64,
    },
    #[error("log return undefined for prices {p_now} / {p_prev}")]
    LogDomain { p_now: f64, p_prev: f64 },
    #[error("negative {field} {value} for {asset_id} on {date}")]
    NegativeValue {
        asset_id: String,
        date: NaiveDate,
        field: &'static str,
        value: f64,
    },
    #[error("timestamps for {asset_id} not strictly increasing at {date}")]
    Unordered { asset_id: String, date: NaiveDate },
    #[error("insufficient history for {asset_id}: {detail}")]
    InsufficientHistory { asset_id: String, detail: String },
}

pub type Result<T> = std::result::Result<T, TimeseriesError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub price: f64,
    pub market_cap: f64,
    pub volume: f64,
}

/// A calendar-day gap between two consecutive observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gap {
    pub after: NaiveDate,
    pub before: NaiveDate,
}

impl Gap {
    pub fn missing_days(&self) -> i64 {
        (self.before - self.after).num_days() - 1
    }
}

/// Daily prices, market caps and volumes for one asset.
///
/// Construction validates that dates are strictly increasing and every
/// price is positive, so returns derived from the series are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    asset_id: String,
    observations: Vec<Observation>,
    gaps: Vec<Gap>,
}

impl PriceSeries {
    pub fn new(asset_id: impl Into<String>, observations: Vec<Observation>) -> Result<Self> {
        let asset_id = asset_id.into();
        let mut gaps = Vec::new();
        for (i, obs) in observations.iter().enumerate() {
            if !(obs.price > 0.0) || !obs.price.is_finite() {
                return Err(TimeseriesError::NonPositivePrice {
                    asset_id,
                    date: obs.date,
                    price: obs.price,
                });
            }
            for (field, value) in [("market_cap", obs.market_cap), ("volume", obs.volume)] {
                if !(value >= 0.0) {
                    return Err(TimeseriesError::NegativeValue {
                        asset_id,
                        date: obs.date,
                        field,
                        value,
                    });
                }
            }
            if i > 0 {
                let prev = observations[i - 1].date;
                if obs.date <= prev {
                    return Err(TimeseriesError::Unordered {
                        asset_id,
                        date: obs.date,
                    });
                }
                if (obs.date - prev).num_days() > 1 {
                    gaps.push(Gap {
                        after: prev,
                        before: obs.date,
                    });
                }
            }
        }
        Ok(Self {
            asset_id,
            observations,
            gaps,
        })
    }

    pub fn asset_id(&self) -> &str {
        &self.asset_id
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Calendar gaps in the feed. Returns across a gap are taken between the
    /// two surrounding observations; nothing is interpolated.
    pub fn gaps(&self) -> &[Gap] {
        &self.gaps
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn last(&self) -> Option<&Observation> {
        self.observations.last()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&Observation> {
        self.observations
            .binary_search_by_key(&date, |o| o.date)
            .ok()
            .map(|i| &self.observations[i])
    }

    /// Consecutive-observation log returns, dated at the later observation.
    pub fn returns(&self) -> ReturnSeries {
        let observations = self
            .observations
            .windows(2)
            .map(|w| (w[1].date, (w[1].price / w[0].price).ln()))
            .collect();
        ReturnSeries {
            asset_id: self.asset_id.clone(),
            observations,
        }
    }

    /// Highest price over the `days` calendar days ending at `as_of` (inclusive).
    pub fn trailing_peak(&self, as_of: NaiveDate, days: u32) -> Option<f64> {
        let start = as_of - chrono::Duration::days(i64::from(days.max(1)) - 1);
        self.observations
            .iter()
            .filter(|o| o.date >= start && o.date <= as_of)
            .map(|o| o.price)
            .reduce(f64::max)
    }

    /// Mean daily traded volume, in asset units, over the `days` calendar days
    /// ending at `as_of`. Quote volume is converted with that day's price.
    pub fn average_volume_units(&self, as_of: NaiveDate, days: u32) -> Option<f64> {
        let start = as_of - chrono::Duration::days(i64::from(days.max(1)) - 1);
        let units: Vec<f64> = self
            .observations
            .iter()
            .filter(|o| o.date >= start && o.date <= as_of)
            .map(|o| o.volume / o.price)
            .collect();
        if units.is_empty() {
            None
        } else {
            Some(units.iter().sum::<f64>() / units.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub asset_id: String,
    pub observations: Vec<(NaiveDate, f64)>,
}

impl ReturnSeries {
    pub fn new(asset_id: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Self {
        Self {
            asset_id: asset_id.into(),
            observations,
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|&(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VolEstimate {
    pub as_of: NaiveDate,
    /// Number of returns actually used.
    pub window_days: usize,
    pub daily_vol: f64,
    pub mean_return: f64,
    /// Set when fewer returns than requested were available.
    pub partial_window: bool,
}

pub fn log_return(p_now: f64, p_prev: f64) -> Result<f64> {
    if !(p_now > 0.0 && p_prev > 0.0) {
        return Err(TimeseriesError::LogDomain { p_now, p_prev });
    }
    Ok((p_now / p_prev).ln())
}

/// `ln(P_t / P_{t-h})` using the observations dated exactly `t` and `t - h` days.
pub fn horizon_return(series: &PriceSeries, t: NaiveDate, h_days: u32) -> Result<f64> {
    let start = t - chrono::Duration::days(i64::from(h_days));
    let missing = |d: NaiveDate| TimeseriesError::InsufficientHistory {
        asset_id: series.asset_id.clone(),
        detail: format!("no observation on {d}"),
    };
    let end_obs = series.get(t).ok_or_else(|| missing(t))?;
    let start_obs = series.get(start).ok_or_else(|| missing(start))?;
    log_return(end_obs.price, start_obs.price)
}

/// Mean and sample standard deviation of the trailing `window` returns ending
/// at (and including) `t`.
///
/// With fewer than `window` returns available the estimate uses all of them
/// and sets `partial_window`; fewer than two returns is an error.
pub fn rolling_vol(returns: &ReturnSeries, t: NaiveDate, window: usize) -> Result<VolEstimate> {
    let end = returns
        .observations
        .binary_search_by_key(&t, |&(d, _)| d)
        .map_err(|_| TimeseriesError::InsufficientHistory {
            asset_id: returns.asset_id.clone(),
            detail: format!("no return on {t}"),
        })?;
    let start = (end + 1).saturating_sub(window);
    let slice = &returns.observations[start..=end];
    let n = slice.len();
    if n < 2 {
        return Err(TimeseriesError::InsufficientHistory {
            asset_id: returns.asset_id.clone(),
            detail: format!("{n} return(s) up to {t}, need at least 2"),
        });
    }
    let (mean, std) = mean_and_sample_std(slice.iter().map(|&(_, r)| r), n);
    Ok(VolEstimate {
        as_of: t,
        window_days: n,
        daily_vol: std,
        mean_return: mean,
        partial_window: n < window,
    })
}

fn mean_and_sample_std<I>(values: I, n: usize) -> (f64, f64)
where
    I: Iterator<Item = f64> + Clone,
{
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|r| (r - mean) * (r - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Square-root-of-time scaling from daily to `h_days` volatility.
pub fn scale_vol(daily_vol: f64, h_days: u32) -> f64 {
    daily_vol * f64::from(h_days).sqrt()
}

pub fn annualize_return(mean_daily: f64, days: u32) -> f64 {
    mean_daily * f64::from(days)
}

pub fn annualize_vol(daily_vol: f64, days: u32) -> f64 {
    scale_vol(daily_vol, days)
}
