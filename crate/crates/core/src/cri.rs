//! Concentration risk indicator.
//!
//! A Herfindahl-style score where each squared weight is scaled by the
//! asset's volatility over its share of total market capitalization:
//!
//! ```text
//! CRI = (1/k) * sum_i (vol_i / m_i) * w_i^2,    m_i = MC_i / TMC
//! ```
//!
//! Lower is less concentrated. The module also covers the three-fund
//! parity composite and the multi-chain deployment factors.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on weight and allocation sums.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriError {
    #[error("{what} must be {expected}, got {value}")]
    Domain {
        what: String,
        expected: &'static str,
        value: f64,
    },
    #[error("market cap {market_cap} of {asset_id} exceeds total market cap {total}")]
    ExceedsTotalMarket {
        asset_id: String,
        market_cap: f64,
        total: f64,
    },
    #[error("{what} sum to {sum}, expected 1")]
    WeightSum { what: String, sum: f64 },
    #[error("empty portfolio{}", .0.as_deref().map(|f| format!(" {f}")).unwrap_or_default())]
    EmptyPortfolio(Option<String>),
    #[error("fund {fund_id} mixes volatility horizons {first} and {second} days")]
    HorizonMismatch {
        fund_id: String,
        first: u32,
        second: u32,
    },
    #[error("correlation inputs give negative variance {variance}")]
    InvalidCorrelation { variance: f64 },
    #[error("chain allocation is empty")]
    NoChains,
}

pub type Result<T> = std::result::Result<T, CriError>;

fn domain(what: impl Into<String>, expected: &'static str, value: f64) -> CriError {
    CriError::Domain {
        what: what.into(),
        expected,
        value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarketFactorMode {
    #[default]
    Standard,
    /// Share ratio inverted: a category holding a larger share of market-wide
    /// liabilities contributes more risk.
    InsuranceInverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketContext {
    pub total_market_cap: f64,
    pub mode: MarketFactorMode,
}

impl MarketContext {
    pub fn new(total_market_cap: f64, mode: MarketFactorMode) -> Result<Self> {
        if !(total_market_cap > 0.0) || !total_market_cap.is_finite() {
            return Err(domain("total market cap", "positive", total_market_cap));
        }
        Ok(Self {
            total_market_cap,
            mode,
        })
    }

    pub fn standard(total_market_cap: f64) -> Result<Self> {
        Self::new(total_market_cap, MarketFactorMode::Standard)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetRiskInput {
    pub asset_id: String,
    pub vol: f64,
    pub market_cap: f64,
    pub weight: f64,
    /// Horizon (days) the volatility is expressed over.
    pub horizon_days: u32,
}

impl AssetRiskInput {
    pub fn new(
        asset_id: impl Into<String>,
        vol: f64,
        market_cap: f64,
        weight: f64,
        horizon_days: u32,
    ) -> Result<Self> {
        let asset_id = asset_id.into();
        if !(vol >= 0.0) || !vol.is_finite() {
            return Err(domain(format!("volatility of {asset_id}"), "non-negative", vol));
        }
        if !(market_cap > 0.0) || !market_cap.is_finite() {
            return Err(domain(format!("market cap of {asset_id}"), "positive", market_cap));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(domain(format!("weight of {asset_id}"), "in [0, 1]", weight));
        }
        Ok(Self {
            asset_id,
            vol,
            market_cap,
            weight,
            horizon_days,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FundSpec {
    pub fund_id: String,
    pub assets: Vec<AssetRiskInput>,
}

impl FundSpec {
    /// Validates that weights sum to one and every asset shares one volatility
    /// horizon. An empty fund is accepted; scoring it is an error.
    pub fn new(fund_id: impl Into<String>, assets: Vec<AssetRiskInput>) -> Result<Self> {
        let fund_id = fund_id.into();
        if let Some(first) = assets.first() {
            if let Some(other) = assets.iter().find(|a| a.horizon_days != first.horizon_days) {
                return Err(CriError::HorizonMismatch {
                    fund_id,
                    first: first.horizon_days,
                    second: other.horizon_days,
                });
            }
            let sum: f64 = assets.iter().map(|a| a.weight).sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(CriError::WeightSum {
                    what: format!("weights of fund {fund_id}"),
                    sum,
                });
            }
        }
        Ok(Self { fund_id, assets })
    }

    pub fn horizon_days(&self) -> Option<u32> {
        self.assets.first().map(|a| a.horizon_days)
    }
}

/// `MC / TMC`, or its reciprocal in insurance mode.
pub fn market_factor(asset: &AssetRiskInput, ctx: &MarketContext) -> Result<f64> {
    let total = ctx.total_market_cap;
    if !(total > 0.0) {
        return Err(domain("total market cap", "positive", total));
    }
    if !(asset.market_cap > 0.0) {
        return Err(domain(
            format!("market cap of {}", asset.asset_id),
            "positive",
            asset.market_cap,
        ));
    }
    if asset.market_cap > total {
        return Err(CriError::ExceedsTotalMarket {
            asset_id: asset.asset_id.clone(),
            market_cap: asset.market_cap,
            total,
        });
    }
    Ok(match ctx.mode {
        MarketFactorMode::Standard => asset.market_cap / total,
        MarketFactorMode::InsuranceInverse => total / asset.market_cap,
    })
}

fn cri_over<'a, I>(assets: I, ctx: &MarketContext) -> Result<f64>
where
    I: IntoIterator<Item = (&'a AssetRiskInput, f64)>,
{
    let mut k = 0usize;
    let mut sum = 0.0;
    for (asset, weight) in assets {
        let m = market_factor(asset, ctx)?;
        sum += asset.vol / m * weight * weight;
        k += 1;
    }
    if k == 0 {
        return Err(CriError::EmptyPortfolio(None));
    }
    Ok(sum / k as f64)
}

/// Concentration risk of one fund. Zero-weight assets still count in `k`.
pub fn cri_portfolio(fund: &FundSpec, ctx: &MarketContext) -> Result<f64> {
    cri_over(fund.assets.iter().map(|a| (a, a.weight)), ctx).map_err(|e| match e {
        CriError::EmptyPortfolio(_) => CriError::EmptyPortfolio(Some(fund.fund_id.clone())),
        e => e,
    })
}

/// Mixing weights of the alpha, beta and gamma sub-funds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundMix {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FundMix {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let mix = Self { alpha, beta, gamma };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(domain(format!("{name} mix weight"), "in [0, 1]", w));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CriError::WeightSum {
                what: "parity mix weights".into(),
                sum,
            });
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

/// Pairwise correlations between the sub-funds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundCorrelations {
    pub alpha_beta: f64,
    pub alpha_gamma: f64,
    pub gamma_beta: f64,
}

impl FundCorrelations {
    pub fn matrix(&self) -> Matrix3<f64> {
        let (ab, ag, gb) = (self.alpha_beta, self.alpha_gamma, self.gamma_beta);
        Matrix3::new(1.0, ab, ag, ab, 1.0, gb, ag, gb, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParitySpec {
    pub funds: [FundSpec; 3],
    pub mix: FundMix,
    pub fund_returns: [f64; 3],
    pub fund_vols: [f64; 3],
    pub correlations: FundCorrelations,
}

impl ParitySpec {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        for (name, v) in ["alpha", "beta", "gamma"].iter().zip(self.fund_vols) {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} volatility"), "non-negative", v));
            }
        }
        let c = &self.correlations;
        for (name, rho) in [
            ("alpha/beta", c.alpha_beta),
            ("alpha/gamma", c.alpha_gamma),
            ("gamma/beta", c.gamma_beta),
        ] {
            if !(-1.0..=1.0).contains(&rho) {
                return Err(domain(format!("{name} correlation"), "in [-1, 1]", rho));
            }
        }
        Ok(())
    }
}

pub fn parity_return(spec: &ParitySpec) -> f64 {
    let [ra, rb, rg] = spec.fund_returns;
    ra * spec.mix.alpha + rb * spec.mix.beta + rg * spec.mix.gamma
}

// Rounding can push a perfectly hedged variance a few ulps below zero;
// anything more negative than this (relative to the undiversified scale)
// is a genuine inconsistency in the inputs.
const VARIANCE_SLACK: f64 = 1e-12;

fn checked_sqrt(variance: f64, scale: f64) -> Result<f64> {
    if variance >= 0.0 {
        Ok(variance.sqrt())
    } else if variance >= -VARIANCE_SLACK * scale.max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(CriError::InvalidCorrelation { variance })
    }
}

fn undiversified_variance(spec: &ParitySpec) -> f64 {
    let s: f64 = spec
        .mix
        .as_array()
        .iter()
        .zip(spec.fund_vols)
        .map(|(w, v)| w * v)
        .sum();
    s * s
}

/// Parity volatility from the expanded three-fund variance.
pub fn parity_vol(spec: &ParitySpec) -> Result<f64> {
    spec.validate()?;
    let FundMix { alpha: wa, beta: wb, gamma: wg } = spec.mix;
    let [sa, sb, sg] = spec.fund_vols;
    let c = &spec.correlations;
    let variance = sa * sa * wa * wa
        + sb * sb * wb * wb
        + sg * sg * wg * wg
        + 2.0 * wa * wb * sa * sb * c.alpha_beta
        + 2.0 * wa * wg * sa * sg * c.alpha_gamma
        + 2.0 * wg * wb * sg * sb * c.gamma_beta;
    checked_sqrt(variance, undiversified_variance(spec))
}

/// Parity volatility as `sqrt(w' X w)` with `X = D R D` the fund covariance matrix.
pub fn parity_vol_matrix(spec: &ParitySpec) -> Result<f64> {
    spec.validate()?;
    let d = Matrix3::from_diagonal(&Vector3::from(spec.fund_vols));
    let cov = d * spec.correlations.matrix() * d;
    let w = Vector3::from(spec.mix.as_array());
    let variance = (w.transpose() * cov * w)[(0, 0)];
    checked_sqrt(variance, undiversified_variance(spec))
}

/// Parity CRI: every sub-fund asset enters with its weight scaled by the
/// fund's mix weight, and `K` counts all asset slots across the three funds
/// (an asset held in two funds counts twice).
pub fn parity_cri(funds: &[FundSpec; 3], mix: &FundMix, ctx: &MarketContext) -> Result<f64> {
    mix.validate()?;
    let horizons: Vec<u32> = funds.iter().filter_map(FundSpec::horizon_days).collect();
    if let Some(&h) = horizons.first() {
        if let Some(&other) = horizons.iter().find(|&&o| o != h) {
            return Err(CriError::HorizonMismatch {
                fund_id: "parity".into(),
                first: h,
                second: other,
            });
        }
    }
    let flattened = funds
        .iter()
        .zip(mix.as_array())
        .flat_map(|(fund, fw)| fund.assets.iter().map(move |a| (a, a.weight * fw)));
    cri_over(flattened, ctx).map_err(|e| match e {
        CriError::EmptyPortfolio(_) => CriError::EmptyPortfolio(Some("parity".into())),
        e => e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainShare {
    pub chain_id: String,
    /// Fraction of holdings deployed on this chain.
    pub alloc_weight: f64,
    pub chain_market_cap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainAllocation {
    chains: Vec<ChainShare>,
}

impl ChainAllocation {
    pub fn new(chains: Vec<ChainShare>) -> Result<Self> {
        if chains.is_empty() {
            return Err(CriError::NoChains);
        }
        for c in &chains {
            if !(c.alloc_weight > 0.0 && c.alloc_weight <= 1.0) {
                return Err(domain(
                    format!("allocation to chain {}", c.chain_id),
                    "in (0, 1]",
                    c.alloc_weight,
                ));
            }
            if !(c.chain_market_cap > 0.0) || !c.chain_market_cap.is_finite() {
                return Err(domain(
                    format!("market cap of chain {}", c.chain_id),
                    "positive",
                    c.chain_market_cap,
                ));
            }
        }
        let sum: f64 = chains.iter().map(|c| c.alloc_weight).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(CriError::WeightSum {
                what: "chain allocations".into(),
                sum,
            });
        }
        Ok(Self { chains })
    }

    pub fn chains(&self) -> &[ChainShare] {
        &self.chains
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainFactorMode {
    /// Penalize deviation from a uniform split.
    #[default]
    EqualSplit,
    /// Penalize deviation from a split proportional to chain market caps.
    McapProportional,
}

/// `(1/N^2) * sum(1/CW_i)`; 1 for a uniform split, above 1 otherwise.
pub fn multichain_factor_equal(alloc: &ChainAllocation) -> f64 {
    let n = alloc.n_chains() as f64;
    let inv_sum: f64 = alloc.chains.iter().map(|c| 1.0 / c.alloc_weight).sum();
    inv_sum / (n * n)
}

/// `(1/N) * (1/sum MC) * sum(MC_i/CW_i)`; 1 when the split follows market cap shares.
pub fn multichain_factor_mcap(alloc: &ChainAllocation) -> f64 {
    let n = alloc.n_chains() as f64;
    let total: f64 = alloc.chains.iter().map(|c| c.chain_market_cap).sum();
    let ratio_sum: f64 = alloc
        .chains
        .iter()
        .map(|c| c.chain_market_cap / c.alloc_weight)
        .sum();
    ratio_sum / total / n
}

/// Extra `1/N` reward for spreading over more chains.
pub fn multichain_benefit(mcf: f64, n_chains: usize) -> Result<f64> {
    if n_chains == 0 {
        return Err(domain("number of chains", "positive", 0.0));
    }
    if !(mcf >= 0.0) {
        return Err(domain("multi-chain factor", "non-negative", mcf));
    }
    Ok(mcf / n_chains as f64)
}

/// Portfolio CRI scaled by the multi-chain factor (and optionally `1/N`).
pub fn cri_multichain(
    fund_cri: f64,
    alloc: &ChainAllocation,
    mode: ChainFactorMode,
    apply_benefit: bool,
) -> Result<f64> {
    if !(fund_cri >= 0.0) {
        return Err(domain("fund CRI", "non-negative", fund_cri));
    }
    let mcf = match mode {
        ChainFactorMode::EqualSplit => multichain_factor_equal(alloc),
        ChainFactorMode::McapProportional => multichain_factor_mcap(alloc),
    };
    let factor = if apply_benefit {
        multichain_benefit(mcf, alloc.n_chains())?
    } else {
        mcf
    };
    Ok(fund_cri * factor)
}
