//! Metric tables per asset, per sub-fund and for the parity composite.
//!
//! Fund composition is read from a TOML file:
//!
//! ```toml
//! [mix]
//! alpha = 0.5
//! beta = 0.3
//! gamma = 0.2
//!
//! [market]              # optional
//! total_market_cap = 2.1e12
//!
//! [funds.alpha]
//! BTC = 0.6
//! ETH = 0.4
//! ```
//!
//! Sub-fund daily returns are the weight-averaged constituent log returns on
//! the dates where every fund constituent has a return. Fund correlations for
//! the parity row are sample correlations over the same trailing window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cri::{
    self, AssetRiskInput, CriError, FundCorrelations, FundMix, FundSpec, MarketContext,
    MarketFactorMode, ParitySpec,
};
use crate::timeseries::{
    self, annualize_return, annualize_vol, horizon_return, rolling_vol, scale_vol, PriceSeries,
    ReturnSeries, TimeseriesError,
};

pub const FUND_NAMES: [&str; 3] = ["alpha", "beta", "gamma"];
pub const PARITY_NAME: &str = "parity";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("fund file: {0}")]
    FundFile(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("fund {fund} references unknown asset {asset_id}")]
    UnknownAsset { fund: String, asset_id: String },
    #[error("no date common to all series")]
    NoCommonDate,
    #[error(transparent)]
    Series(#[from] TimeseriesError),
    #[error(transparent)]
    Cri(#[from] CriError),
}

pub type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub total_market_cap: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundsSection {
    pub alpha: Option<BTreeMap<String, f64>>,
    pub beta: Option<BTreeMap<String, f64>>,
    pub gamma: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Composition {
    pub mix: Option<FundMix>,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub funds: FundsSection,
}

impl Composition {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| ReportError::FundFile(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError::FundFile(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Funds in reporting order; absent funds are `None`.
    pub fn funds(&self) -> [(&'static str, Option<&BTreeMap<String, f64>>); 3] {
        [
            ("alpha", self.funds.alpha.as_ref()),
            ("beta", self.funds.beta.as_ref()),
            ("gamma", self.funds.gamma.as_ref()),
        ]
    }

    fn validate(&self) -> Result<()> {
        if let Some(mix) = &self.mix {
            mix.validate()?;
            for ((name, fund), w) in self.funds().into_iter().zip(mix.as_array()) {
                if w > 0.0 && fund.is_none_or(BTreeMap::is_empty) {
                    return Err(ReportError::Config(format!(
                        "parity mix gives {name} weight {w} but the fund has no assets"
                    )));
                }
            }
        }
        for (name, fund) in self.funds() {
            if let Some(assets) = fund {
                let sum: f64 = assets.values().sum();
                if !assets.is_empty() && (sum - 1.0).abs() > cri::SUM_TOLERANCE {
                    return Err(ReportError::FundFile(format!(
                        "weights of fund {name} sum to {sum}, expected 1"
                    )));
                }
            }
        }
        if let Some(tmc) = self.market.total_market_cap {
            if !(tmc > 0.0) {
                return Err(ReportError::FundFile(format!("total_market_cap {tmc} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReturnDefinition {
    /// Mean daily log return times the horizon.
    #[default]
    MeanScaled,
    /// `ln(P_t / P_{t-h})`.
    Horizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    pub window: usize,
    pub horizon: u32,
    /// Risk-free rate as a decimal (0.08 for 8%).
    pub risk_free: Option<f64>,
    pub annualize_days: u32,
    pub mode: MarketFactorMode,
    pub return_definition: ReturnDefinition,
    /// Report return and volatility annualized instead of over the horizon.
    pub annualized: bool,
    /// Overrides both the fund file and the sum of series market caps.
    pub total_market_cap: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            window: timeseries::DEFAULT_WINDOW,
            horizon: timeseries::DEFAULT_HORIZON,
            risk_free: None,
            annualize_days: timeseries::DEFAULT_ANNUALIZATION_DAYS,
            mode: MarketFactorMode::Standard,
            return_definition: ReturnDefinition::MeanScaled,
            annualized: false,
            total_market_cap: None,
        }
    }
}

impl MetricsConfig {
    fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(ReportError::Config(format!("window {} must be at least 2", self.window)));
        }
        if self.horizon == 0 || self.annualize_days == 0 {
            return Err(ReportError::Config("horizon and annualization days must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub name: String,
    pub period_return: f64,
    pub period_vol: f64,
    pub cri: f64,
    pub risk_adjusted_return: Option<f64>,
}

/// Daily statistics of one return stream at the as-of date.
#[derive(Debug, Clone, Copy)]
struct DailyStats {
    mean: f64,
    vol: f64,
}

/// Everything the metrics and parity views need, evaluated once.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub as_of: NaiveDate,
    pub context: MarketContext,
    pub rows: Vec<MetricsRow>,
    pub parity: Option<ParityView>,
    pub fund_specs: Vec<FundSpec>,
}

#[derive(Debug, Clone)]
pub struct ParityView {
    pub spec: ParitySpec,
    pub vol_expanded: f64,
    pub vol_matrix: f64,
    pub cri: f64,
    pub period_return: f64,
}

/// Latest date on which every series has an observation.
pub fn common_as_of(series: &BTreeMap<String, PriceSeries>) -> Result<NaiveDate> {
    let mut iter = series.values();
    let first = iter.next().ok_or(ReportError::NoCommonDate)?;
    first
        .observations()
        .iter()
        .rev()
        .map(|o| o.date)
        .find(|d| series.values().all(|s| s.get(*d).is_some()))
        .ok_or(ReportError::NoCommonDate)
}

fn sample_correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

struct Builder<'a> {
    series: &'a BTreeMap<String, PriceSeries>,
    returns: BTreeMap<&'a str, ReturnSeries>,
    cfg: &'a MetricsConfig,
    as_of: NaiveDate,
    ctx: MarketContext,
}

impl Builder<'_> {
    fn period_vol(&self, daily: f64) -> f64 {
        if self.cfg.annualized {
            annualize_vol(daily, self.cfg.annualize_days)
        } else {
            scale_vol(daily, self.cfg.horizon)
        }
    }

    fn period_return_from_mean(&self, mean: f64) -> f64 {
        if self.cfg.annualized {
            annualize_return(mean, self.cfg.annualize_days)
        } else {
            mean * f64::from(self.cfg.horizon)
        }
    }

    fn risk_adjusted(&self, stats: DailyStats) -> Option<f64> {
        let rf = self.cfg.risk_free?;
        let vol = annualize_vol(stats.vol, self.cfg.annualize_days);
        (vol > 0.0).then(|| (annualize_return(stats.mean, self.cfg.annualize_days) - rf) / vol)
    }

    fn asset_stats(&self, asset_id: &str) -> Result<DailyStats> {
        let v = rolling_vol(&self.returns[asset_id], self.as_of, self.cfg.window)?;
        Ok(DailyStats {
            mean: v.mean_return,
            vol: v.daily_vol,
        })
    }

    fn market_cap(&self, asset_id: &str) -> f64 {
        self.series[asset_id]
            .get(self.as_of)
            .map_or(0.0, |o| o.market_cap)
    }

    fn risk_input(&self, asset_id: &str, weight: f64) -> Result<AssetRiskInput> {
        let stats = self.asset_stats(asset_id)?;
        Ok(AssetRiskInput::new(
            asset_id,
            scale_vol(stats.vol, self.cfg.horizon),
            self.market_cap(asset_id),
            weight,
            self.cfg.horizon,
        )?)
    }

    fn asset_row(&self, asset_id: &str) -> Result<MetricsRow> {
        let stats = self.asset_stats(asset_id)?;
        let period_return = match (self.cfg.return_definition, self.cfg.annualized) {
            (ReturnDefinition::Horizon, false) => {
                horizon_return(&self.series[asset_id], self.as_of, self.cfg.horizon)?
            }
            _ => self.period_return_from_mean(stats.mean),
        };
        let fund = FundSpec::new(asset_id, vec![self.risk_input(asset_id, 1.0)?])?;
        Ok(MetricsRow {
            name: asset_id.to_string(),
            period_return,
            period_vol: self.period_vol(stats.vol),
            cri: cri::cri_portfolio(&fund, &self.ctx)?,
            risk_adjusted_return: self.risk_adjusted(stats),
        })
    }

    fn fund_spec(&self, name: &str, assets: Option<&BTreeMap<String, f64>>) -> Result<FundSpec> {
        let inputs = assets
            .into_iter()
            .flatten()
            .map(|(a, &w)| self.risk_input(a, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(FundSpec::new(name, inputs)?)
    }
}

/// Weighted daily log returns of a fund over `dates`.
fn fund_daily_returns(
    returns: &BTreeMap<&str, ReturnSeries>,
    assets: &BTreeMap<String, f64>,
    dates: &[NaiveDate],
) -> Vec<f64> {
    let lookup: BTreeMap<&str, BTreeMap<NaiveDate, f64>> = assets
        .keys()
        .map(|a| (a.as_str(), returns[a.as_str()].observations.iter().copied().collect()))
        .collect();
    dates
        .iter()
        .map(|d| assets.iter().map(|(a, w)| w * lookup[a.as_str()][d]).sum())
        .collect()
}

fn mean_and_std(xs: &[f64]) -> DailyStats {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    DailyStats {
        mean,
        vol: (ss / (n - 1.0)).sqrt(),
    }
}

/// Computes the full metrics table: sub-funds and parity first, then every
/// asset in the series map in lexicographic order.
pub fn analyze(
    series: &BTreeMap<String, PriceSeries>,
    composition: &Composition,
    cfg: &MetricsConfig,
) -> Result<Analysis> {
    cfg.validate()?;
    for (name, fund) in composition.funds() {
        for asset_id in fund.into_iter().flat_map(BTreeMap::keys) {
            if !series.contains_key(asset_id) {
                return Err(ReportError::UnknownAsset {
                    fund: name.to_string(),
                    asset_id: asset_id.clone(),
                });
            }
        }
    }
    let as_of = common_as_of(series)?;
    let tmc = match cfg.total_market_cap.or(composition.market.total_market_cap) {
        Some(t) => t,
        None => series
            .values()
            .filter_map(|s| s.get(as_of))
            .map(|o| o.market_cap)
            .sum(),
    };
    let ctx = MarketContext::new(tmc, cfg.mode)?;
    let b = Builder {
        series,
        returns: series.iter().map(|(k, s)| (k.as_str(), s.returns())).collect(),
        cfg,
        as_of,
        ctx,
    };

    // dates where every fund constituent has a return, trailing window ending at as_of
    let fund_assets: Vec<&str> = composition
        .funds()
        .iter()
        .flat_map(|(_, f)| f.iter().flat_map(|m| m.keys().map(String::as_str)))
        .collect();
    let aligned: Vec<NaiveDate> = match fund_assets.first() {
        None => Vec::new(),
        Some(first) => b.returns[first]
            .observations
            .iter()
            .map(|&(d, _)| d)
            .filter(|&d| d <= as_of)
            .filter(|d| {
                fund_assets
                    .iter()
                    .all(|a| b.returns[a].observations.binary_search_by_key(d, |&(x, _)| x).is_ok())
            })
            .collect(),
    };
    let window_dates = &aligned[aligned.len().saturating_sub(cfg.window)..];

    let mut rows = Vec::new();
    let mut fund_specs = Vec::new();
    let mut fund_streams: Vec<Option<(Vec<f64>, DailyStats, f64)>> = Vec::new();
    for (name, fund) in composition.funds() {
        let spec = b.fund_spec(name, fund)?;
        let stream = match fund.filter(|f| !f.is_empty()) {
            None => None,
            Some(assets) => {
                if window_dates.len() < 2 {
                    return Err(TimeseriesError::InsufficientHistory {
                        asset_id: name.to_string(),
                        detail: format!("{} aligned return(s), need at least 2", window_dates.len()),
                    }
                    .into());
                }
                let daily = fund_daily_returns(&b.returns, assets, window_dates);
                let stats = mean_and_std(&daily);
                let period_return = match (cfg.return_definition, cfg.annualized) {
                    (ReturnDefinition::Horizon, false) => assets
                        .iter()
                        .map(|(a, w)| Ok(w * horizon_return(&series[a], as_of, cfg.horizon)?))
                        .sum::<Result<f64>>()?,
                    _ => b.period_return_from_mean(stats.mean),
                };
                rows.push(MetricsRow {
                    name: name.to_string(),
                    period_return,
                    period_vol: b.period_vol(stats.vol),
                    cri: cri::cri_portfolio(&spec, &ctx)?,
                    risk_adjusted_return: b.risk_adjusted(stats),
                });
                Some((daily, stats, period_return))
            }
        };
        fund_specs.push(spec);
        fund_streams.push(stream);
    }

    let parity = match composition.mix {
        None => None,
        Some(mix) => {
            let stats: Vec<DailyStats> = fund_streams
                .iter()
                .map(|s| s.as_ref().map_or(DailyStats { mean: 0.0, vol: 0.0 }, |(_, st, _)| *st))
                .collect();
            let corr = |i: usize, j: usize| match (&fund_streams[i], &fund_streams[j]) {
                (Some((x, _, _)), Some((y, _, _))) => sample_correlation(x, y),
                _ => 0.0,
            };
            let correlations = FundCorrelations {
                alpha_beta: corr(0, 1),
                alpha_gamma: corr(0, 2),
                gamma_beta: corr(2, 1),
            };
            let funds: [FundSpec; 3] = fund_specs.clone().try_into().expect("three funds");
            let daily_spec = ParitySpec {
                funds: funds.clone(),
                mix,
                fund_returns: [stats[0].mean, stats[1].mean, stats[2].mean],
                fund_vols: [stats[0].vol, stats[1].vol, stats[2].vol],
                correlations,
            };
            let daily_vol = cri::parity_vol(&daily_spec)?;
            let daily_mean = cri::parity_return(&daily_spec);
            let period_returns: Vec<f64> = fund_streams
                .iter()
                .map(|s| s.as_ref().map_or(0.0, |(_, _, r)| *r))
                .collect();
            let period_spec = ParitySpec {
                fund_returns: [period_returns[0], period_returns[1], period_returns[2]],
                fund_vols: daily_spec.fund_vols.map(|v| b.period_vol(v)),
                ..daily_spec
            };
            let parity_stats = DailyStats {
                mean: daily_mean,
                vol: daily_vol,
            };
            let view = ParityView {
                period_return: cri::parity_return(&period_spec),
                vol_expanded: cri::parity_vol(&period_spec)?,
                vol_matrix: cri::parity_vol_matrix(&period_spec)?,
                cri: cri::parity_cri(&funds, &mix, &ctx)?,
                spec: period_spec,
            };
            rows.push(MetricsRow {
                name: PARITY_NAME.to_string(),
                period_return: view.period_return,
                period_vol: b.period_vol(daily_vol),
                cri: view.cri,
                risk_adjusted_return: b.risk_adjusted(parity_stats),
            });
            Some(view)
        }
    };

    for asset_id in series.keys() {
        rows.push(b.asset_row(asset_id)?);
    }
    Ok(Analysis {
        as_of,
        context: ctx,
        rows,
        parity,
        fund_specs,
    })
}

pub fn compute_metrics_table(
    series: &BTreeMap<String, PriceSeries>,
    composition: &Composition,
    cfg: &MetricsConfig,
) -> Result<Vec<MetricsRow>> {
    analyze(series, composition, cfg).map(|a| a.rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Table,
    Csv,
}

/// Renders rows. CSV uses shortest round-trip float formatting so parsed
/// values equal the computed ones exactly.
pub fn render_metrics(rows: &[MetricsRow], format: OutputFormat, with_risk_adjusted: bool) -> String {
    let mut out = String::new();
    match format {
        OutputFormat::Csv => {
            out.push_str("name,period_return,period_vol,cri");
            if with_risk_adjusted {
                out.push_str(",risk_adjusted_return");
            }
            out.push('\n');
            for r in rows {
                let _ = write!(out, "{},{:?},{:?},{:?}", r.name, r.period_return, r.period_vol, r.cri);
                if with_risk_adjusted {
                    match r.risk_adjusted_return {
                        Some(v) => {
                            let _ = write!(out, ",{v:?}");
                        }
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
        }
        OutputFormat::Table => {
            let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
            let _ = write!(out, "{:<width$}  {:>14}  {:>14}  {:>14}", "name", "return", "volatility", "cri");
            if with_risk_adjusted {
                let _ = write!(out, "  {:>14}", "risk_adj");
            }
            out.push('\n');
            for r in rows {
                let _ = write!(
                    out,
                    "{:<width$}  {:>14.8}  {:>14.8}  {:>14.8}",
                    r.name, r.period_return, r.period_vol, r.cri
                );
                if with_risk_adjusted {
                    match r.risk_adjusted_return {
                        Some(v) => {
                            let _ = write!(out, "  {v:>14.8}");
                        }
                        None => {
                            let _ = write!(out, "  {:>14}", "n/a");
                        }
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}
