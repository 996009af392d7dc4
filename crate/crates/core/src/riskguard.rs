//! Five-pillar risk limits evaluated against a holdings snapshot.
//!
//! All thresholds are in percent and every rule uses strict "more than"
//! comparisons, so a value sitting exactly on a threshold never violates.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuardError {
    #[error("invalid guard config: {0}")]
    Config(String),
    #[error("{asset_id}: {field} must be positive, got {value}")]
    NonPositive {
        asset_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("{asset_id}: {field} must be non-negative, got {value}")]
    Negative {
        asset_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("{} holding(s) failed validation: {}", .0.len(), .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Holdings(Vec<GuardError>),
}

pub type Result<T> = std::result::Result<T, GuardError>;

/// Upper bound on the number of assets allowed in the (X, Y] weight band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandLimit {
    Count(usize),
    /// Nearest-rank percentile of the number of holdings.
    Percentile(f64),
}

impl BandLimit {
    pub fn resolve(&self, n_holdings: usize) -> usize {
        match *self {
            BandLimit::Count(n) => n,
            BandLimit::Percentile(p) => nearest_rank(p, n_holdings),
        }
    }
}

/// Nearest-rank percentile of the ranks `1..=n`: `ceil(p/100 * n)`.
fn nearest_rank(p: f64, n: usize) -> usize {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    ((p / 100.0) * n as f64).ceil().min(n as f64) as usize
}

/// Flat key-value config; all percentages in percent units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuardConfig {
    /// Recommended maximum weight of any asset across all funds.
    pub x_pct: f64,
    /// Absolute maximum weight.
    pub y_pct: f64,
    /// Maximum number of assets in the (X, Y] band.
    pub n_max: usize,
    /// When set, overrides `n_max` with a percentile of the holding count.
    pub n_percentile: Option<f64>,
    /// Price drop that switches a non-stable asset to hold-only.
    pub z_pct: f64,
    /// Stablecoin drop below peg that triggers a priority unwind.
    pub s_pct: f64,
    /// Maximum position value as a share of the token's market cap.
    pub m_pct: f64,
    /// Maximum planned daily volume as a share of average market volume.
    pub v_pct: f64,
    /// Days over which market volume is averaged.
    pub volume_avg_days: u32,
    /// Days over which the drawdown reference peak is taken.
    pub reference_peak_days: u32,
    /// Stablecoin reference value in quote units.
    pub stable_peg: f64,
    /// Assets exempt from the market-cap share rule.
    pub mcap_exceptions: BTreeSet<String>,
}

impl Default for GuardConfig {
    fn default() -> Self {
        Self {
            x_pct: 10.0,
            y_pct: 15.0,
            n_max: 3,
            n_percentile: None,
            z_pct: 25.0,
            s_pct: 10.0,
            m_pct: 5.0,
            v_pct: 10.0,
            volume_avg_days: 30,
            reference_peak_days: 30,
            stable_peg: 1.0,
            mcap_exceptions: BTreeSet::new(),
        }
    }
}

impl GuardConfig {
    pub fn validate(&self) -> Result<()> {
        let pct = |name: &str, v: f64| {
            if v > 0.0 && v <= 100.0 {
                Ok(())
            } else {
                Err(GuardError::Config(format!("{name} = {v} not in (0, 100]")))
            }
        };
        pct("x_pct", self.x_pct)?;
        pct("y_pct", self.y_pct)?;
        pct("z_pct", self.z_pct)?;
        pct("s_pct", self.s_pct)?;
        pct("m_pct", self.m_pct)?;
        pct("v_pct", self.v_pct)?;
        if let Some(p) = self.n_percentile {
            if !(0.0..=100.0).contains(&p) {
                return Err(GuardError::Config(format!("n_percentile = {p} not in [0, 100]")));
            }
        }
        if self.x_pct > self.y_pct {
            return Err(GuardError::Config(format!(
                "x_pct ({}) exceeds y_pct ({})",
                self.x_pct, self.y_pct
            )));
        }
        if self.volume_avg_days == 0 || self.reference_peak_days == 0 {
            return Err(GuardError::Config("averaging windows must be positive".into()));
        }
        if !(self.stable_peg > 0.0) {
            return Err(GuardError::Config(format!("stable_peg = {} must be positive", self.stable_peg)));
        }
        Ok(())
    }

    pub fn band_limit(&self) -> BandLimit {
        match self.n_percentile {
            Some(p) => BandLimit::Percentile(p),
            None => BandLimit::Count(self.n_max),
        }
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldingSnapshot {
    pub asset_id: String,
    /// Weight across all funds combined, percent.
    pub weight_pct: f64,
    pub position_units: f64,
    pub token_market_cap: f64,
    /// Baseline for the drop rule on non-stable assets.
    pub reference_price: f64,
    pub current_price: f64,
    pub is_stablecoin: bool,
    pub confidence_lost: bool,
    pub planned_day_volume_units: f64,
    /// Average daily market volume in units.
    pub market_day_volume_units: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    #[serde(rename = "P1_WEIGHT_SOFT")]
    P1WeightSoft,
    #[serde(rename = "P1_WEIGHT_HARD")]
    P1WeightHard,
    #[serde(rename = "P1_BAND_COUNT")]
    P1BandCount,
    #[serde(rename = "P2_UNWIND")]
    P2Unwind,
    #[serde(rename = "P3_DROP_HOLD")]
    P3DropHold,
    #[serde(rename = "P3_STABLE_DEPEG")]
    P3StableDepeg,
    #[serde(rename = "P4_MCAP_SHARE")]
    P4McapShare,
    #[serde(rename = "P5_VOLUME_SHARE")]
    P5VolumeShare,
}

impl RuleId {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleId::P1WeightSoft => "P1_WEIGHT_SOFT",
            RuleId::P1WeightHard => "P1_WEIGHT_HARD",
            RuleId::P1BandCount => "P1_BAND_COUNT",
            RuleId::P2Unwind => "P2_UNWIND",
            RuleId::P3DropHold => "P3_DROP_HOLD",
            RuleId::P3StableDepeg => "P3_STABLE_DEPEG",
            RuleId::P4McapShare => "P4_MCAP_SHARE",
            RuleId::P5VolumeShare => "P5_VOLUME_SHARE",
        }
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Scope {
    Portfolio,
    Asset(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Portfolio => f.write_str("*"),
            Scope::Asset(a) => f.write_str(a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Advisory,
    Breach,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Advisory => "advisory",
            Severity::Breach => "breach",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule_id: RuleId,
    pub scope: Scope,
    pub measured_value: f64,
    pub threshold: f64,
    pub severity: Severity,
}

impl Violation {
    fn asset(rule_id: RuleId, asset_id: &str, measured: f64, threshold: f64, severity: Severity) -> Self {
        Self {
            rule_id,
            scope: Scope::Asset(asset_id.to_string()),
            measured_value: measured,
            threshold,
            severity,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.rule_id, self.scope, self.measured_value, self.threshold, self.severity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GuardReport {
    pub violations: Vec<Violation>,
}

impl GuardReport {
    fn from_unsorted(mut violations: Vec<Violation>) -> Self {
        violations.sort_by(|a, b| a.rule_id.cmp(&b.rule_id).then_with(|| a.scope.cmp(&b.scope)));
        Self { violations }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn rules(&self) -> Vec<RuleId> {
        self.violations.iter().map(|v| v.rule_id).collect()
    }

    /// One tab-separated record per violation, or `no violations`.
    pub fn to_lines(&self) -> String {
        if self.violations.is_empty() {
            return "no violations\n".to_string();
        }
        self.violations.iter().map(|v| format!("{v}\n")).collect()
    }
}

/// P1: soft and hard weight caps plus the count of assets in the (X, Y] band.
pub fn check_weights(holdings: &[HoldingSnapshot], cfg: &GuardConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut in_band = 0usize;
    for h in holdings {
        if h.weight_pct > cfg.y_pct {
            out.push(Violation::asset(RuleId::P1WeightHard, &h.asset_id, h.weight_pct, cfg.y_pct, Severity::Breach));
        } else if h.weight_pct > cfg.x_pct {
            in_band += 1;
            out.push(Violation::asset(RuleId::P1WeightSoft, &h.asset_id, h.weight_pct, cfg.x_pct, Severity::Advisory));
        }
    }
    let limit = cfg.band_limit().resolve(holdings.len());
    if in_band > limit {
        out.push(Violation {
            rule_id: RuleId::P1BandCount,
            scope: Scope::Portfolio,
            measured_value: in_band as f64,
            threshold: limit as f64,
            severity: Severity::Breach,
        });
    }
    out
}

/// P2: positions in assets that lost confidence must be closed out.
pub fn check_unwind(holdings: &[HoldingSnapshot]) -> Vec<Violation> {
    holdings
        .iter()
        .filter(|h| h.confidence_lost && h.position_units > 0.0)
        .map(|h| Violation::asset(RuleId::P2Unwind, &h.asset_id, h.position_units, 0.0, Severity::Breach))
        .collect()
}

/// P3: drawdown against the reference price, or against the peg for stablecoins.
pub fn check_drawdown(holdings: &[HoldingSnapshot], cfg: &GuardConfig) -> Result<Vec<Violation>> {
    collect(holdings, |h| {
        let (reference, field) = if h.is_stablecoin {
            (cfg.stable_peg, "stable peg")
        } else {
            (h.reference_price, "reference_price")
        };
        if !(reference > 0.0) {
            return Err(GuardError::NonPositive {
                asset_id: h.asset_id.clone(),
                field,
                value: reference,
            });
        }
        let drop_pct = 100.0 * (1.0 - h.current_price / reference);
        Ok(if h.is_stablecoin {
            (drop_pct > cfg.s_pct)
                .then(|| Violation::asset(RuleId::P3StableDepeg, &h.asset_id, drop_pct, cfg.s_pct, Severity::Breach))
        } else {
            (drop_pct > cfg.z_pct)
                .then(|| Violation::asset(RuleId::P3DropHold, &h.asset_id, drop_pct, cfg.z_pct, Severity::Advisory))
        })
    })
}

/// P4: position value as a share of the token's market cap.
pub fn check_mcap_share(holdings: &[HoldingSnapshot], cfg: &GuardConfig) -> Result<Vec<Violation>> {
    collect(holdings, |h| {
        if !(h.token_market_cap > 0.0) {
            return Err(GuardError::NonPositive {
                asset_id: h.asset_id.clone(),
                field: "token_market_cap",
                value: h.token_market_cap,
            });
        }
        if cfg.mcap_exceptions.contains(&h.asset_id) {
            return Ok(None);
        }
        let share_pct = 100.0 * h.position_units * h.current_price / h.token_market_cap;
        Ok((share_pct > cfg.m_pct)
            .then(|| Violation::asset(RuleId::P4McapShare, &h.asset_id, share_pct, cfg.m_pct, Severity::Breach)))
    })
}

/// P5: planned daily volume as a share of average market volume.
pub fn check_volume_share(holdings: &[HoldingSnapshot], cfg: &GuardConfig) -> Result<Vec<Violation>> {
    collect(holdings, |h| {
        if !(h.market_day_volume_units > 0.0) {
            return Err(GuardError::NonPositive {
                asset_id: h.asset_id.clone(),
                field: "market_day_volume_units",
                value: h.market_day_volume_units,
            });
        }
        if h.planned_day_volume_units < 0.0 {
            return Err(GuardError::Negative {
                asset_id: h.asset_id.clone(),
                field: "planned_day_volume_units",
                value: h.planned_day_volume_units,
            });
        }
        let share_pct = 100.0 * h.planned_day_volume_units / h.market_day_volume_units;
        Ok((share_pct > cfg.v_pct)
            .then(|| Violation::asset(RuleId::P5VolumeShare, &h.asset_id, share_pct, cfg.v_pct, Severity::Breach)))
    })
}

fn collect<F>(holdings: &[HoldingSnapshot], mut check: F) -> Result<Vec<Violation>>
where
    F: FnMut(&HoldingSnapshot) -> Result<Option<Violation>>,
{
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for h in holdings {
        match check(h) {
            Ok(v) => out.extend(v),
            Err(e) => errors.push(e),
        }
    }
    match errors.len() {
        0 => Ok(out),
        1 => Err(errors.pop().unwrap()),
        _ => Err(GuardError::Holdings(errors)),
    }
}

fn validate_holdings(holdings: &[HoldingSnapshot]) -> Result<()> {
    let mut errors = Vec::new();
    for h in holdings {
        for (field, value) in [("weight_pct", h.weight_pct), ("position_units", h.position_units)] {
            if !(value >= 0.0) {
                errors.push(GuardError::Negative {
                    asset_id: h.asset_id.clone(),
                    field,
                    value,
                });
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(GuardError::Holdings(errors))
    }
}

/// Runs all five pillars. Input errors from every rule are gathered into one
/// error, each attributed to its asset.
pub fn run_guard(holdings: &[HoldingSnapshot], cfg: &GuardConfig) -> Result<GuardReport> {
    cfg.validate()?;
    validate_holdings(holdings)?;
    let mut violations = check_weights(holdings, cfg);
    violations.extend(check_unwind(holdings));
    let mut errors = Vec::new();
    for result in [
        check_drawdown(holdings, cfg),
        check_mcap_share(holdings, cfg),
        check_volume_share(holdings, cfg),
    ] {
        match result {
            Ok(v) => violations.extend(v),
            Err(GuardError::Holdings(es)) => errors.extend(es),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(GuardError::Holdings(errors));
    }
    Ok(GuardReport::from_unsorted(violations))
}
