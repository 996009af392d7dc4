//! Acceptance gate. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero if any criterion fails.
//!
//! Oracles here are written independently of the library code paths they
//! check (naive loops, cash-flow bookkeeping, direct formula evaluation).

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cri_core::cri::{
    self, AssetRiskInput, ChainAllocation, ChainShare, FundCorrelations, FundMix, FundSpec,
    MarketContext, ParitySpec,
};
use cri_core::ledger::{self, LedgerState, Trade};
use cri_core::riskguard::{self, GuardConfig, HoldingSnapshot, RuleId, Scope, Severity};
use cri_core::timeseries::{self, ReturnSeries};

type Outcome = Result<String, String>;

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

fn within_budget(elapsed: Duration, budget: Duration) -> Outcome {
    if elapsed <= budget {
        Ok(format!("{:.3}s", elapsed.as_secs_f64()))
    } else {
        Err(format!("took {:.3}s, budget {:.1}s", elapsed.as_secs_f64(), budget.as_secs_f64()))
    }
}

fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 1, 1).unwrap() + chrono::Duration::days(n)
}

fn one_asset_fund(sigma: f64, mc: f64, w: f64, id: &str) -> AssetRiskInput {
    AssetRiskInput::new(id, sigma, mc, w, 30).unwrap()
}

/// 1. CRI single-asset identity.
fn c1_single_asset_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let sigma = rng.random_range(0.0..2.0);
        let tmc = 10f64.powf(rng.random_range(6.0..13.0));
        let mc = tmc * rng.random_range(1e-6..=1.0);
        let fund = FundSpec::new("f", vec![one_asset_fund(sigma, mc, 1.0, "A")]).unwrap();
        let ctx = MarketContext::standard(tmc).unwrap();
        let got = cri::cri_portfolio(&fund, &ctx).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(got, sigma * tmc / mc));
    }
    if worst > 1e-12 {
        return Err(format!("max relative error {worst:e} > 1e-12"));
    }
    within_budget(start.elapsed(), Duration::from_secs(1)).map(|t| format!("max rel err {worst:e}, {t}"))
}

/// 2. Clone dilution: CRI(k) * k^2 constant for k = 1..10.
fn c2_clone_dilution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let sigma = rng.random_range(0.01..1.5);
        let tmc = 1e12;
        let mc = tmc * rng.random_range(1e-4..0.5);
        let ctx = MarketContext::standard(tmc).unwrap();
        let base = cri::cri_portfolio(&FundSpec::new("f", vec![one_asset_fund(sigma, mc, 1.0, "A0")]).unwrap(), &ctx)
            .map_err(|e| e.to_string())?;
        let mut prev = f64::INFINITY;
        for k in 1..=10usize {
            let w = 1.0 / k as f64;
            let assets = (0..k).map(|i| one_asset_fund(sigma, mc, w, &format!("A{i}"))).collect();
            let c = cri::cri_portfolio(&FundSpec::new("f", assets).unwrap(), &ctx).map_err(|e| e.to_string())?;
            if c >= prev {
                return Err(format!("CRI not decreasing at k={k}"));
            }
            prev = c;
            worst = worst.max(rel_err(c * (k * k) as f64, base));
        }
    }
    if worst > 1e-12 {
        return Err(format!("max relative deviation {worst:e} > 1e-12"));
    }
    Ok(format!("max rel deviation {worst:e}"))
}

/// Compensated (Neumaier) sum with error-free products, so the oracle's own
/// rounding stays far below the tolerance being checked.
#[derive(Default)]
struct ExactSum {
    sum: f64,
    comp: f64,
}

impl ExactSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn add_product(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.add(p);
        self.add(a.mul_add(b, -p));
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn random_trades(rng: &mut ChaCha8Rng, len: usize, allow_sells: bool, max_lot: f64) -> Vec<Trade> {
    let mut position = 0.0f64;
    let mut out = Vec::with_capacity(len);
    let mut price: f64 = rng.random_range(1.0..1000.0);
    for seq in 1..=len as u64 {
        price *= (rng.random_range(-0.1f64..0.1)).exp();
        let sell = allow_sells && position > 0.0 && rng.random_bool(0.4);
        let amount = if sell {
            if rng.random_bool(0.1) {
                -position
            } else {
                -position * rng.random_range(0.01..1.0)
            }
        } else {
            rng.random_range(0.01..max_lot)
        };
        position += amount;
        out.push(Trade {
            seq,
            date: day(seq as i64),
            asset_id: "X".into(),
            amount,
            price,
        });
    }
    out
}

/// 3. Ledger conservation against a cash-flow oracle.
///
/// Lots are capped at 10 units and prices start below 1000, which keeps every
/// cash-flow term under ~1e6; above ~1e7 a single f64 ulp already exceeds the
/// 1e-9 absolute tolerance.
fn c3_ledger_conservation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut largest = 0.0f64;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=200);
        let trades = random_trades(&mut rng, len, true, 10.0);
        let mut state = LedgerState::new("X");
        // oracle: units held and net cash paid, tracked independently
        let mut units = 0.0f64;
        let mut cash_in = ExactSum::default();
        for t in &trades {
            state = ledger::apply_trade(&state, t).map_err(|e| e.to_string())?;
            units += t.amount;
            cash_in.add_product(t.amount, t.price);
        }
        let mark = trades.last().unwrap().price * rng.random_range(0.5..1.5);
        let lhs = state.realized_pnl + ledger::unrealized_pnl(&state, mark);
        let rhs = state.position * mark - cash_in.value();
        worst = worst.max((lhs - rhs).abs());
        largest = largest.max((state.position * mark).abs()).max(cash_in.value().abs());
        if (state.position - units).abs() > 1e-9 {
            return Err(format!("position {} vs oracle {units}", state.position));
        }
    }
    if worst > 1e-9 {
        return Err(format!("max abs error {worst:e} > 1e-9"));
    }
    within_budget(start.elapsed(), Duration::from_secs(10)).map(|t| format!("max abs err {worst:e}, largest term {largest:.3e}, {t}"))
}

/// 4. Rolling/batch WAVG agreement and sell neutrality.
fn c4_wavg_rolling_batch() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..=100);
        let trades = random_trades(&mut rng, len, false, 100.0);
        let mut state = LedgerState::new("X");
        for (i, t) in trades.iter().enumerate() {
            state = ledger::apply_trade(&state, t).map_err(|e| e.to_string())?;
            // oracle: buy-only weighted mean of the prefix
            let (mut num, mut den) = (0.0, 0.0);
            for p in &trades[..=i] {
                num += p.amount * p.price;
                den += p.amount;
            }
            worst = worst.max(rel_err(state.wavg_price, num / den));
        }
    }
    if worst > 1e-12 {
        return Err(format!("rolling vs batch max rel error {worst:e} > 1e-12"));
    }
    let mut sells = 0usize;
    for _ in 0..1000 {
        let len = rng.random_range(2..=100);
        let trades = random_trades(&mut rng, len, true, 100.0);
        let mut state = LedgerState::new("X");
        for t in &trades {
            let next = ledger::apply_trade(&state, t).map_err(|e| e.to_string())?;
            if t.amount < 0.0 {
                sells += 1;
                if next.wavg_price.to_bits() != state.wavg_price.to_bits() {
                    return Err(format!("sell #{} moved basis", t.seq));
                }
            }
            state = next;
        }
    }
    Ok(format!("max rel err {worst:e}; {sells} sells left basis bit-identical"))
}

fn random_psd_spec(rng: &mut ChaCha8Rng) -> ParitySpec {
    // Gram matrix of three random unit vectors is a valid correlation matrix.
    let unit = |rng: &mut ChaCha8Rng| {
        let v: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        v.map(|x| x / n)
    };
    let (a, b, g) = (unit(rng), unit(rng), unit(rng));
    let dot = |x: [f64; 3], y: [f64; 3]| (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]).clamp(-1.0, 1.0);
    let e: [f64; 3] = [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)];
    let s = e[0] + e[1] + e[2];
    let wa = e[0] / s;
    let wb = e[1] / s;
    let empty = || FundSpec::new("f", vec![]).unwrap();
    ParitySpec {
        funds: [empty(), empty(), empty()],
        mix: FundMix::new(wa, wb, 1.0 - wa - wb).unwrap(),
        fund_returns: [0.0; 3],
        fund_vols: [rng.random_range(0.01..1.0), rng.random_range(0.01..1.0), rng.random_range(0.01..1.0)],
        correlations: FundCorrelations {
            alpha_beta: dot(a, b),
            alpha_gamma: dot(a, g),
            gamma_beta: dot(g, b),
        },
    }
}

/// 5. Parity volatility: expanded vs matrix form, and subadditivity.
fn c5_parity_vol_dual_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let spec = random_psd_spec(&mut rng);
        let expanded = cri::parity_vol(&spec).map_err(|e| format!("instance {i}: {e}"))?;
        let matrix = cri::parity_vol_matrix(&spec).map_err(|e| format!("instance {i}: {e}"))?;
        worst = worst.max(rel_err(matrix, expanded));
        let bound: f64 = spec.mix.as_array().iter().zip(spec.fund_vols).map(|(w, s)| w * s).sum();
        if expanded > bound * (1.0 + 1e-15) {
            return Err(format!("instance {i}: {expanded} exceeds weighted sum {bound}"));
        }
    }
    if worst > 1e-12 {
        return Err(format!("max rel disagreement {worst:e} > 1e-12"));
    }
    Ok(format!("max rel disagreement {worst:e}"))
}

/// 6. Parity CRI against a flatten-and-evaluate oracle.
fn c6_parity_cri_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let tmc = 1e12;
        let ctx = MarketContext::standard(tmc).unwrap();
        let mut raw: Vec<Vec<(f64, f64, f64)>> = Vec::new();
        let mut funds = Vec::new();
        for f in 0..3 {
            let k = rng.random_range(1..=8);
            let ws: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = ws.iter().sum();
            let assets: Vec<(f64, f64, f64)> = ws
                .iter()
                .map(|w| (rng.random_range(0.0..2.0), tmc * rng.random_range(1e-5..0.5), w / total))
                .collect();
            let inputs = assets
                .iter()
                .enumerate()
                .map(|(i, &(s, mc, w))| one_asset_fund(s, mc, w, &format!("F{f}A{i}")))
                .collect();
            funds.push(FundSpec::new(format!("f{f}"), inputs).map_err(|e| e.to_string())?);
            raw.push(assets);
        }
        let e: [f64; 3] = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.01..1.0)];
        let s = e[0] + e[1] + e[2];
        let mix = [e[0] / s, e[1] / s, 1.0 - e[0] / s - e[1] / s];
        let got = cri::parity_cri(
            &funds.try_into().unwrap(),
            &FundMix::new(mix[0], mix[1], mix[2]).unwrap(),
            &ctx,
        )
        .map_err(|e| e.to_string())?;
        // oracle
        let mut sum = 0.0;
        let mut count = 0usize;
        for (fund, fw) in raw.iter().zip(mix) {
            for &(sigma, mc, w) in fund {
                let m = mc / tmc;
                let wm = w * fw;
                sum += sigma / m * wm * wm;
                count += 1;
            }
        }
        worst = worst.max(rel_err(got, sum / count as f64));
    }
    if worst > 1e-12 {
        return Err(format!("max rel error {worst:e} > 1e-12"));
    }
    Ok(format!("max rel err {worst:e}"))
}

fn allocation(weights: &[f64], caps: &[f64]) -> ChainAllocation {
    ChainAllocation::new(
        weights
            .iter()
            .zip(caps)
            .enumerate()
            .map(|(i, (&w, &mc))| ChainShare {
                chain_id: format!("chain{i}"),
                alloc_weight: w,
                chain_market_cap: mc,
            })
            .collect(),
    )
    .unwrap()
}

/// 7. Multi-chain factor laws.
fn c7_multichain_laws() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_uniform = 0.0f64;
    let mut worst_prop = 0.0f64;
    for i in 0..10_000 {
        let n = rng.random_range(2..=10);
        let e: Vec<f64> = (0..n).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
        let total: f64 = e.iter().sum();
        let w: Vec<f64> = e.iter().map(|x| x / total).collect();
        let caps: Vec<f64> = (0..n).map(|_| rng.random_range(1e6..1e12)).collect();

        let mcf = cri::multichain_factor_equal(&allocation(&w, &caps));
        if mcf.is_nan() || mcf <= 1.0 {
            return Err(format!("point {i}: non-uniform MCF {mcf} not > 1"));
        }
        let uniform = vec![1.0 / n as f64; n];
        worst_uniform = worst_uniform.max((cri::multichain_factor_equal(&allocation(&uniform, &caps)) - 1.0).abs());

        let cap_total: f64 = caps.iter().sum();
        let prop: Vec<f64> = caps.iter().map(|c| c / cap_total).collect();
        worst_prop = worst_prop.max((cri::multichain_factor_mcap(&allocation(&prop, &caps)) - 1.0).abs());

        let benefit = cri::multichain_benefit(mcf, n).map_err(|e| e.to_string())?;
        if benefit != mcf / n as f64 {
            return Err(format!("point {i}: benefit {benefit} != {mcf}/{n}"));
        }
        let with = cri::cri_multichain(1.0, &allocation(&w, &caps), cri::ChainFactorMode::EqualSplit, true)
            .map_err(|e| e.to_string())?;
        if with != mcf / n as f64 {
            return Err(format!("point {i}: composed factor {with} != {mcf}/{n}"));
        }
    }
    if worst_uniform > 1e-12 || worst_prop > 1e-12 {
        return Err(format!("uniform dev {worst_uniform:e}, proportional dev {worst_prop:e}"));
    }
    Ok(format!("uniform dev {worst_uniform:e}, proportional dev {worst_prop:e}"))
}

/// 8. Rolling volatility against a naive two-pass estimator.
fn c8_volatility_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let returns: Vec<f64> = (0..2000).map(|_| rng.random_range(-0.15..0.15)).collect();
    let series = ReturnSeries::new("X", returns.iter().enumerate().map(|(i, &r)| (day(i as i64), r)).collect());
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let end = rng.random_range(89..returns.len());
        let v = timeseries::rolling_vol(&series, day(end as i64), 90).map_err(|e| e.to_string())?;
        let w = &returns[end + 1 - 90..=end];
        let mut mean = 0.0;
        for x in w {
            mean += x;
        }
        mean /= 90.0;
        let mut ss = 0.0;
        for x in w {
            ss += (x - mean) * (x - mean);
        }
        let sd = (ss / 89.0).sqrt();
        worst = worst.max(rel_err(v.daily_vol, sd)).max(rel_err(v.mean_return, mean).min((v.mean_return - mean).abs()));
        if v.window_days != 90 || v.partial_window {
            return Err("window bookkeeping wrong".into());
        }
    }
    if worst > 1e-12 {
        return Err(format!("max rel error {worst:e} > 1e-12"));
    }
    for _ in 0..1000 {
        let s: f64 = rng.random_range(0.0..1.0);
        let scaled = timeseries::scale_vol(s, 30);
        if scaled != s * 30f64.sqrt() || rel_err(scaled, s * 5.477225575051661) > 2.0 * f64::EPSILON {
            return Err(format!("scale_vol({s}, 30) = {scaled}"));
        }
    }
    Ok(format!("max rel err {worst:e}"))
}

fn holding(id: &str, weight_pct: f64) -> HoldingSnapshot {
    HoldingSnapshot {
        asset_id: id.into(),
        weight_pct,
        position_units: 10.0,
        token_market_cap: 1e10,
        reference_price: 1.0,
        current_price: 1.0,
        is_stablecoin: false,
        confidence_lost: false,
        planned_day_volume_units: 1.0,
        market_day_volume_units: 1e6,
    }
}

/// 9. Guard defaults and the worked fixtures.
fn c9_guard_defaults() -> Outcome {
    let cfg = GuardConfig::default();
    let got = (cfg.x_pct, cfg.y_pct, cfg.n_max, cfg.z_pct, cfg.s_pct, cfg.m_pct, cfg.v_pct);
    if got != (10.0, 15.0, 3, 25.0, 10.0, 5.0, 10.0) {
        return Err(format!("defaults {got:?}"));
    }
    let run = |hs: &[HoldingSnapshot]| riskguard::run_guard(hs, &cfg).map_err(|e| e.to_string());

    let mut hs = vec![holding("SOL", 12.0)];
    hs.extend((0..8).map(|i| holding(&format!("A{i}"), 8.0)));
    let r = run(&hs)?;
    let expect = |r: &riskguard::GuardReport, want: &[(RuleId, Scope, Severity)]| -> Result<(), String> {
        let have: Vec<_> = r.violations.iter().map(|v| (v.rule_id, v.scope.clone(), v.severity)).collect();
        if have == want {
            Ok(())
        } else {
            Err(format!("expected {want:?}, got {have:?}"))
        }
    };
    expect(&r, &[(RuleId::P1WeightSoft, Scope::Asset("SOL".into()), Severity::Advisory)])?;

    let hs: Vec<_> = ["A", "B", "C", "D"].iter().map(|a| holding(a, 12.0)).collect();
    let r = run(&hs)?;
    let mut want: Vec<_> = ["A", "B", "C", "D"]
        .iter()
        .map(|a| (RuleId::P1WeightSoft, Scope::Asset((*a).into()), Severity::Advisory))
        .collect();
    want.push((RuleId::P1BandCount, Scope::Portfolio, Severity::Breach));
    expect(&r, &want)?;

    let mut usdt = holding("USDT", 5.0);
    usdt.is_stablecoin = true;
    usdt.current_price = 0.88;
    let r = run(&[usdt])?;
    expect(&r, &[(RuleId::P3StableDepeg, Scope::Asset("USDT".into()), Severity::Breach)])?;
    Ok("defaults and three fixtures exact".into())
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// 10. End-to-end CLI against the scripted recomputation.
fn c10_cli_end_to_end() -> Outcome {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_cri"))
            .args(["metrics", "--series"])
            .arg(fixture("series_3x120.csv"))
            .arg("--funds")
            .arg(fixture("funds.toml"))
            .args(["--risk-free", "8", "--format", "csv"])
            .output()
            .map_err(|e| e.to_string())
    };
    let start = Instant::now();
    let first = run()?;
    let elapsed = start.elapsed();
    let second = run()?;
    if !first.status.success() {
        return Err(format!("exit {:?}: {}", first.status.code(), String::from_utf8_lossy(&first.stderr)));
    }
    if first.stdout != second.stdout {
        return Err("output differs between runs".into());
    }
    let got = String::from_utf8(first.stdout).map_err(|e| e.to_string())?;
    let want = std::fs::read_to_string(fixture("expected_metrics.csv")).map_err(|e| e.to_string())?;
    let got_lines: Vec<&str> = got.lines().collect();
    let want_lines: Vec<&str> = want.lines().collect();
    if got_lines.len() != want_lines.len() || got_lines[0] != want_lines[0] {
        return Err(format!("shape mismatch:\n{got}\nvs\n{want}"));
    }
    let mut worst = 0.0f64;
    let mut cells = 0;
    for (g, w) in got_lines[1..].iter().zip(&want_lines[1..]) {
        let gc: Vec<&str> = g.split(',').collect();
        let wc: Vec<&str> = w.split(',').collect();
        if gc.len() != wc.len() || gc[0] != wc[0] {
            return Err(format!("row mismatch: {g} vs {w}"));
        }
        for (a, b) in gc[1..].iter().zip(&wc[1..]) {
            let a: f64 = a.parse().map_err(|_| format!("bad cell {a}"))?;
            let b: f64 = b.parse().map_err(|_| format!("bad cell {b}"))?;
            worst = worst.max((a - b).abs());
            cells += 1;
        }
    }
    if worst > 1e-9 {
        return Err(format!("max abs cell error {worst:e} > 1e-9"));
    }
    within_budget(elapsed, Duration::from_secs(2)).map(|t| format!("{cells} cells, max abs err {worst:e}, byte-stable, {t}"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        ("C1 CRI single-asset identity", c1_single_asset_identity),
        ("C2 clone dilution law", c2_clone_dilution),
        ("C3 ledger conservation", c3_ledger_conservation),
        ("C4 rolling/batch WAVG equality", c4_wavg_rolling_batch),
        ("C5 parity volatility dual form", c5_parity_vol_dual_form),
        ("C6 parity CRI oracle", c6_parity_cri_oracle),
        ("C7 multi-chain factor laws", c7_multichain_laws),
        ("C8 volatility oracle", c8_volatility_oracle),
        ("C9 guard defaults", c9_guard_defaults),
        ("C10 end-to-end CLI", c10_cli_end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
