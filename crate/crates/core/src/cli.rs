//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation error, 1 internal error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::cri::{self, ChainAllocation, ChainFactorMode, ChainShare, MarketFactorMode};
use crate::ingest::{self, IngestError};
use crate::ledger::{self, LedgerState, PortfolioLedger};
use crate::report::{self, Composition, MetricsConfig, OutputFormat, ReturnDefinition};
use crate::riskguard::{self, GuardConfig, HoldingSnapshot};
use crate::timeseries::PriceSeries;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cri", version, about = "Concentration risk, volatility, P&L and risk-limit reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Return, volatility and CRI per fund, parity and asset.
    Metrics(MetricsArgs),
    /// CRI per fund and asset, optionally scaled by a multi-chain factor.
    Cri(CriArgs),
    /// Parity composite return, volatility (both forms) and CRI.
    Parity(AnalysisArgs),
    /// Positions and realized/unrealized P&L from a trades file.
    Pnl(PnlArgs),
    /// Five-pillar risk-limit checks.
    Guard(GuardArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Insurance,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Table => OutputFormat::Table,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ChainModeArg {
    Equal,
    Mcap,
}

#[derive(Debug, Args)]
struct AnalysisArgs {
    /// Daily series file (date,asset_id,price,market_cap,volume).
    #[arg(long)]
    series: PathBuf,
    /// Fund composition file (TOML).
    #[arg(long)]
    funds: Option<PathBuf>,
    /// Trailing volatility window in returns.
    #[arg(long, default_value_t = 90)]
    window: usize,
    /// Reporting horizon in days.
    #[arg(long, default_value_t = 30)]
    horizon: u32,
    /// Risk-free rate in percent, e.g. 8 for 8%.
    #[arg(long = "risk-free")]
    risk_free: Option<f64>,
    #[arg(long = "annualize-days", default_value_t = 365)]
    annualize_days: u32,
    #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
    mode: ModeArg,
    /// Total market capitalization; defaults to the fund file value or the
    /// sum of series market caps on the as-of date.
    #[arg(long = "total-market-cap")]
    total_market_cap: Option<f64>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[command(flatten)]
    common: AnalysisArgs,
    /// Use ln(P_t / P_{t-h}) for the period return instead of mean daily return times h.
    #[arg(long = "horizon-return")]
    horizon_return: bool,
    /// Report return and volatility annualized.
    #[arg(long)]
    annualized: bool,
}

#[derive(Debug, Args)]
struct CriArgs {
    #[command(flatten)]
    common: AnalysisArgs,
    /// Chain allocation file (chain_id,alloc_weight,chain_market_cap).
    #[arg(long)]
    chains: Option<PathBuf>,
    #[arg(long = "chain-mode", value_enum, default_value_t = ChainModeArg::Equal)]
    chain_mode: ChainModeArg,
    /// Divide by the number of chains.
    #[arg(long = "chain-benefit")]
    chain_benefit: bool,
}

#[derive(Debug, Args)]
struct PnlArgs {
    /// Trades file (seq,date,asset_id,amount,price).
    #[arg(long)]
    trades: PathBuf,
    /// Mark positions at the last price in this series file instead of the last trade price.
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct GuardArgs {
    /// Holdings file.
    #[arg(long)]
    holdings: PathBuf,
    /// Series file used to fill market-derived holding columns.
    #[arg(long)]
    series: Option<PathBuf>,
    /// Guard thresholds (flat TOML, percent units).
    #[arg(long = "guard-config")]
    guard_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Table)]
    format: FormatArg,
}

#[derive(Debug)]
enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Internal(m) => m,
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    IngestError,
    report::ReportError,
    cri::CriError,
    ledger::LedgerError,
    riskguard::GuardError
);

type CliResult<T> = Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the subcommand,
/// writing the report to `out` and diagnostics to `err`.
pub fn cli_main<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    let result = match cli.command {
        Command::Metrics(a) => run_metrics(&a),
        Command::Cri(a) => run_cri(&a),
        Command::Parity(a) => run_parity(&a),
        Command::Pnl(a) => run_pnl(&a),
        Command::Guard(a) => run_guard(&a),
    };
    match result {
        Ok(text) => match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: writing output: {e}");
                EXIT_INTERNAL
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

fn metrics_config(a: &AnalysisArgs) -> CliResult<MetricsConfig> {
    if let Some(rf) = a.risk_free {
        if !rf.is_finite() {
            return Err(CliError::Validation(format!("invalid risk-free rate {rf}")));
        }
    }
    Ok(MetricsConfig {
        window: a.window,
        horizon: a.horizon,
        risk_free: a.risk_free.map(|pct| pct / 100.0),
        annualize_days: a.annualize_days,
        mode: match a.mode {
            ModeArg::Standard => MarketFactorMode::Standard,
            ModeArg::Insurance => MarketFactorMode::InsuranceInverse,
        },
        total_market_cap: a.total_market_cap,
        ..MetricsConfig::default()
    })
}

fn load_inputs(a: &AnalysisArgs) -> CliResult<(BTreeMap<String, PriceSeries>, Composition)> {
    let series = ingest::load_series(&a.series)?;
    let composition = match &a.funds {
        Some(p) => Composition::load(p)?,
        None => Composition::default(),
    };
    Ok((series, composition))
}

fn run_metrics(a: &MetricsArgs) -> CliResult<String> {
    let (series, composition) = load_inputs(&a.common)?;
    let cfg = MetricsConfig {
        return_definition: if a.horizon_return {
            ReturnDefinition::Horizon
        } else {
            ReturnDefinition::MeanScaled
        },
        annualized: a.annualized,
        ..metrics_config(&a.common)?
    };
    let rows = report::compute_metrics_table(&series, &composition, &cfg)?;
    Ok(report::render_metrics(
        &rows,
        a.common.format.into(),
        cfg.risk_free.is_some(),
    ))
}

fn load_chains(path: &Path) -> CliResult<ChainAllocation> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let chains = rdr
        .deserialize::<ChainShare>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(ChainAllocation::new(chains)?)
}

fn run_cri(a: &CriArgs) -> CliResult<String> {
    let (series, composition) = load_inputs(&a.common)?;
    let cfg = metrics_config(&a.common)?;
    let analysis = report::analyze(&series, &composition, &cfg)?;
    let chains = a.chains.as_deref().map(load_chains).transpose()?;
    let mode = match a.chain_mode {
        ChainModeArg::Equal => ChainFactorMode::EqualSplit,
        ChainModeArg::Mcap => ChainFactorMode::McapProportional,
    };
    let csv = matches!(a.common.format, FormatArg::Csv);
    let mut out = String::new();
    let header: &[&str] = if chains.is_some() {
        &["name", "cri", "cri_multichain"]
    } else {
        &["name", "cri"]
    };
    if csv {
        let _ = writeln!(out, "{}", header.join(","));
    } else {
        let _ = writeln!(out, "as of {}, total market cap {}", analysis.as_of, analysis.context.total_market_cap);
        let _ = writeln!(out, "{}", header.iter().map(|h| format!("{h:>16}")).collect::<String>());
    }
    for row in &analysis.rows {
        let mut cells = vec![row.cri];
        if let Some(alloc) = &chains {
            cells.push(cri::cri_multichain(row.cri, alloc, mode, a.chain_benefit)?);
        }
        if csv {
            let vals: Vec<String> = cells.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{},{}", row.name, vals.join(","));
        } else {
            let vals: String = cells.iter().map(|v| format!("{v:>16.8}")).collect();
            let _ = writeln!(out, "{:>16}{vals}", row.name);
        }
    }
    Ok(out)
}

fn run_parity(a: &AnalysisArgs) -> CliResult<String> {
    let (series, composition) = load_inputs(a)?;
    if composition.mix.is_none() {
        return Err(CliError::Validation("fund file has no [mix] section".into()));
    }
    let cfg = metrics_config(a)?;
    let analysis = report::analyze(&series, &composition, &cfg)?;
    let view = analysis
        .parity
        .ok_or_else(|| CliError::Internal("parity view missing".into()))?;
    let s = &view.spec;
    let pairs: Vec<(String, f64)> = vec![
        ("mix_alpha".into(), s.mix.alpha),
        ("mix_beta".into(), s.mix.beta),
        ("mix_gamma".into(), s.mix.gamma),
        ("return_alpha".into(), s.fund_returns[0]),
        ("return_beta".into(), s.fund_returns[1]),
        ("return_gamma".into(), s.fund_returns[2]),
        ("vol_alpha".into(), s.fund_vols[0]),
        ("vol_beta".into(), s.fund_vols[1]),
        ("vol_gamma".into(), s.fund_vols[2]),
        ("rho_alpha_beta".into(), s.correlations.alpha_beta),
        ("rho_alpha_gamma".into(), s.correlations.alpha_gamma),
        ("rho_gamma_beta".into(), s.correlations.gamma_beta),
        ("parity_return".into(), view.period_return),
        ("parity_vol".into(), view.vol_expanded),
        ("parity_vol_matrix".into(), view.vol_matrix),
        ("parity_cri".into(), view.cri),
    ];
    let mut out = String::new();
    match a.format {
        FormatArg::Csv => {
            out.push_str("key,value\n");
            for (k, v) in pairs {
                let _ = writeln!(out, "{k},{v:?}");
            }
        }
        FormatArg::Table => {
            let _ = writeln!(out, "as of {}", analysis.as_of);
            for (k, v) in pairs {
                let _ = writeln!(out, "{k:<20}{v:>16.8}");
            }
        }
    }
    Ok(out)
}

fn run_pnl(a: &PnlArgs) -> CliResult<String> {
    let trades = ingest::load_trades(&a.trades)?;
    let series = a.series.as_deref().map(ingest::load_series).transpose()?;
    let mut book = PortfolioLedger::new();
    let mut last_price = BTreeMap::new();
    for list in trades.values() {
        for t in list {
            book.apply(t)?;
            last_price.insert(t.asset_id.clone(), t.price);
        }
    }
    let mark = |state: &LedgerState| -> CliResult<f64> {
        match &series {
            Some(s) => s
                .get(&state.asset_id)
                .and_then(|ps| ps.last())
                .map(|o| o.price)
                .ok_or_else(|| CliError::Validation(format!("no series price for {}", state.asset_id))),
            None => Ok(last_price[&state.asset_id]),
        }
    };
    let csv = matches!(a.format, FormatArg::Csv);
    let header = [
        "asset_id",
        "position",
        "wavg_price",
        "mark",
        "realized_pnl",
        "unrealized_pnl",
        "realized_return",
        "unrealized_return",
    ];
    let mut out = String::new();
    if csv {
        let _ = writeln!(out, "{}", header.join(","));
    } else {
        let _ = writeln!(out, "{:<10}{}", header[0], header[1..].iter().map(|h| format!("{h:>18}")).collect::<String>());
    }
    let (mut total_real, mut total_unreal) = (0.0, 0.0);
    for state in book.states() {
        let snap = ledger::snapshot(state, mark(state)?)?;
        total_real += snap.realized_pnl;
        total_unreal += snap.unrealized_pnl;
        let vals = [
            state.position,
            state.wavg_price,
            snap.mark_price,
            snap.realized_pnl,
            snap.unrealized_pnl,
            snap.realized_return,
            snap.unrealized_return,
        ];
        if csv {
            let cells: Vec<String> = vals.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{},{}", state.asset_id, cells.join(","));
        } else {
            let cells: String = vals.iter().map(|v| format!("{v:>18.6}")).collect();
            let _ = writeln!(out, "{:<10}{cells}", state.asset_id);
        }
    }
    if csv {
        let _ = writeln!(out, "TOTAL,,,,{total_real:?},{total_unreal:?},,");
    } else {
        let _ = writeln!(
            out,
            "{:<10}{:>18}{:>18}{:>18}{total_real:>18.6}{total_unreal:>18.6}",
            "TOTAL", "", "", ""
        );
    }
    Ok(out)
}

/// Holdings row; market columns left empty are filled from the series file.
#[derive(Debug, Deserialize)]
struct HoldingRow {
    asset_id: String,
    weight_pct: f64,
    position_units: f64,
    #[serde(default)]
    is_stablecoin: bool,
    #[serde(default)]
    confidence_lost: bool,
    #[serde(default)]
    planned_day_volume_units: f64,
    #[serde(default)]
    token_market_cap: Option<f64>,
    #[serde(default)]
    reference_price: Option<f64>,
    #[serde(default)]
    current_price: Option<f64>,
    #[serde(default)]
    market_day_volume_units: Option<f64>,
}

fn load_holdings(
    path: &Path,
    series: Option<&BTreeMap<String, PriceSeries>>,
    cfg: &GuardConfig,
) -> CliResult<Vec<HoldingSnapshot>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.deserialize::<HoldingRow>() {
        let row = rec.map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let ps = series.and_then(|s| s.get(&row.asset_id));
        let last = ps.and_then(PriceSeries::last);
        let missing = |field: &str| {
            CliError::Validation(format!(
                "{}: {field} not given and no series data for it",
                row.asset_id
            ))
        };
        let token_market_cap = row
            .token_market_cap
            .or(last.map(|o| o.market_cap))
            .ok_or_else(|| missing("token_market_cap"))?;
        let current_price = row
            .current_price
            .or(last.map(|o| o.price))
            .ok_or_else(|| missing("current_price"))?;
        let reference_price = row
            .reference_price
            .or_else(|| ps.zip(last).and_then(|(s, o)| s.trailing_peak(o.date, cfg.reference_peak_days)))
            .ok_or_else(|| missing("reference_price"))?;
        let market_day_volume_units = row
            .market_day_volume_units
            .or_else(|| ps.zip(last).and_then(|(s, o)| s.average_volume_units(o.date, cfg.volume_avg_days)))
            .ok_or_else(|| missing("market_day_volume_units"))?;
        out.push(HoldingSnapshot {
            asset_id: row.asset_id,
            weight_pct: row.weight_pct,
            position_units: row.position_units,
            token_market_cap,
            reference_price,
            current_price,
            is_stablecoin: row.is_stablecoin,
            confidence_lost: row.confidence_lost,
            planned_day_volume_units: row.planned_day_volume_units,
            market_day_volume_units,
        });
    }
    Ok(out)
}

fn run_guard(a: &GuardArgs) -> CliResult<String> {
    let cfg = match &a.guard_config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
            GuardConfig::from_toml(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => GuardConfig::default(),
    };
    let series = a.series.as_deref().map(ingest::load_series).transpose()?;
    let holdings = load_holdings(&a.holdings, series.as_ref(), &cfg)?;
    let report = riskguard::run_guard(&holdings, &cfg)?;
    Ok(match a.format {
        FormatArg::Table => report.to_lines(),
        FormatArg::Csv => {
            let mut out = String::from("rule_id,scope,measured_value,threshold,severity\n");
            for v in &report.violations {
                let _ = writeln!(
                    out,
                    "{},{},{:?},{:?},{}",
                    v.rule_id, v.scope, v.measured_value, v.threshold, v.severity
                );
            }
            out
        }
    })
}
