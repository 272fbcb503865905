//! Long-only top-k strategy: each day hold the k assets with the highest
//! previous-day signal, equally weighted.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, NaiveDate};

use crate::error::{Error, Result};
use crate::formula::{FactorMatrix, Feature};
use crate::panel::PanelTensor;

pub const TRADING_DAYS: f64 = 252.0;

/// Equal-weight holdings as `(asset, weight)` sorted by asset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Portfolio {
    pub holdings: Vec<(usize, f64)>,
    pub as_of: usize,
}

impl Portfolio {
    pub fn equal_weight(mut assets: Vec<usize>, as_of: usize) -> Self {
        assets.sort_unstable();
        let w = 1.0 / assets.len().max(1) as f64;
        Self {
            holdings: assets.into_iter().map(|a| (a, w)).collect(),
            as_of,
        }
    }

    fn weight(&self, asset: usize) -> f64 {
        self.holdings
            .binary_search_by_key(&asset, |h| h.0)
            .map_or(0.0, |i| self.holdings[i].1)
    }
}

/// Turnover convention: one-way counts only the bought (or sold) side,
/// two-way counts both and is twice the one-way figure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TurnoverConvention {
    #[default]
    OneWay,
    TwoWay,
}

impl TurnoverConvention {
    fn factor(self) -> f64 {
        match self {
            Self::OneWay => 1.0,
            Self::TwoWay => 2.0,
        }
    }
}

/// One-way turnover `0.5 · Σ |w_next − w_prev|`.
pub fn turnover(prev: &Portfolio, next: &Portfolio) -> f64 {
    let mut assets: Vec<usize> = prev
        .holdings
        .iter()
        .chain(&next.holdings)
        .map(|h| h.0)
        .collect();
    assets.sort_unstable();
    assets.dedup();
    0.5 * assets
        .into_iter()
        .map(|a| (next.weight(a) - prev.weight(a)).abs())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskMetrics {
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub cumulative: f64,
}

/// Annualized Sharpe (zero risk-free rate), maximum drawdown of the wealth
/// curve starting at 1, and compounded return.
pub fn risk_metrics(daily: &[f64]) -> Result<RiskMetrics> {
    if daily.len() < 2 {
        return Err(Error::Data("risk metrics need at least 2 days".into()));
    }
    let n = daily.len() as f64;
    let mean = daily.iter().sum::<f64>() / n;
    let sd = (daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sharpe = if sd > 0.0 {
        mean / sd * TRADING_DAYS.sqrt()
    } else {
        f64::NAN
    };
    let (mut wealth, mut peak, mut max_drawdown) = (1.0f64, 1.0f64, 0.0f64);
    for r in daily {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        max_drawdown = max_drawdown.max((peak - wealth) / peak);
    }
    Ok(RiskMetrics {
        sharpe,
        max_drawdown,
        cumulative: wealth - 1.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuarterRow {
    pub label: String,
    pub cumulative: f64,
    pub max_drawdown: f64,
    pub turnover: f64,
    pub days: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub dates: Vec<NaiveDate>,
    pub daily: Vec<f64>,
    pub benchmark: Vec<f64>,
    pub turnover: Vec<f64>,
    pub held: Vec<usize>,
    /// Days with fewer than k rankable assets.
    pub flagged: Vec<bool>,
    pub metrics: RiskMetrics,
    pub benchmark_metrics: RiskMetrics,
    pub quarters: Vec<QuarterRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BacktestOptions {
    pub k: usize,
    pub cost_bps: f64,
    pub convention: TurnoverConvention,
}

/// [`run_backtest_with`] using one-way turnover.
pub fn run_backtest(signal: &FactorMatrix, panel: &PanelTensor, k: usize, cost_bps: f64) -> Result<BacktestReport> {
    let options = BacktestOptions {
        k,
        cost_bps,
        convention: TurnoverConvention::OneWay,
    };
    run_backtest_with(signal, panel, &options)
}

/// Simulates the strategy over the panel's evaluated days. The holding for
/// day `d` (close `d−1` to close `d`) is ranked on the signal at `d−1`;
/// ties go to the earlier symbol. A held asset with a missing return
/// contributes 0 that day. Costs are charged on the reported turnover.
pub fn run_backtest_with(signal: &FactorMatrix, panel: &PanelTensor, options: &BacktestOptions) -> Result<BacktestReport> {
    let (k, cost_bps) = (options.k, options.cost_bps);
    let (n, l) = (panel.n_assets(), panel.n_days());
    if signal.n_assets != n || signal.n_days != l {
        return Err(Error::Data("signal and panel shapes differ".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in 1..={n}")));
    }
    let close = panel
        .feature(Feature::Close)
        .ok_or_else(|| Error::MissingFeature("close".into()))?;
    let ret = |a: usize, d: usize| {
        let r = close[a * l + d] / close[a * l + d - 1] - 1.0;
        if r.is_finite() {
            r
        } else {
            f64::NAN
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    let symbols = panel.symbols();
    order.sort_by(|&a, &b| symbols[a].cmp(&symbols[b]));

    let mut report = BacktestReport {
        dates: Vec::new(),
        daily: Vec::new(),
        benchmark: Vec::new(),
        turnover: Vec::new(),
        held: Vec::new(),
        flagged: Vec::new(),
        metrics: RiskMetrics {
            sharpe: f64::NAN,
            max_drawdown: 0.0,
            cumulative: 0.0,
        },
        benchmark_metrics: RiskMetrics {
            sharpe: f64::NAN,
            max_drawdown: 0.0,
            cumulative: 0.0,
        },
        quarters: Vec::new(),
    };
    let mut prev = Portfolio::default();
    for d in panel.warmup_days().max(1)..l {
        let mut ranked: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&a| !signal.get(a, d - 1).is_nan())
            .collect();
        // Stable sort keeps symbol order among equal signals.
        ranked.sort_by(|&a, &b| signal.get(b, d - 1).total_cmp(&signal.get(a, d - 1)));
        ranked.truncate(k);
        let next = if ranked.is_empty() {
            Portfolio {
                holdings: Vec::new(),
                as_of: d,
            }
        } else {
            Portfolio::equal_weight(ranked, d)
        };
        let to = options.convention.factor() * turnover(&prev, &next);
        let gross: f64 = next
            .holdings
            .iter()
            .map(|&(a, w)| {
                let r = ret(a, d);
                if r.is_nan() {
                    0.0
                } else {
                    w * r
                }
            })
            .sum();
        let defined: Vec<f64> = (0..n).map(|a| ret(a, d)).filter(|r| !r.is_nan()).collect();
        report.benchmark.push(if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        });
        report.dates.push(panel.dates()[d]);
        report.daily.push(gross - cost_bps * 1e-4 * to);
        report.turnover.push(to);
        report.held.push(next.holdings.len());
        report.flagged.push(next.holdings.len() < k);
        prev = next;
    }
    report.metrics = risk_metrics(&report.daily)?;
    report.benchmark_metrics = risk_metrics(&report.benchmark)?;
    report.quarters = quarters(&report);
    Ok(report)
}

fn quarters(report: &BacktestReport) -> Vec<QuarterRow> {
    let mut rows: Vec<QuarterRow> = Vec::new();
    let mut start = 0;
    for i in 0..=report.dates.len() {
        let label = |d: &NaiveDate| format!("{}Q{}", d.year(), d.month0() / 3 + 1);
        let boundary = i == report.dates.len() || label(&report.dates[i]) != label(&report.dates[start]);
        if boundary && i > start {
            let daily = &report.daily[start..i];
            let (mut wealth, mut peak, mut dd) = (1.0f64, 1.0f64, 0.0f64);
            for r in daily {
                wealth *= 1.0 + r;
                peak = peak.max(wealth);
                dd = dd.max((peak - wealth) / peak);
            }
            rows.push(QuarterRow {
                label: label(&report.dates[start]),
                cumulative: wealth - 1.0,
                max_drawdown: dd,
                turnover: report.turnover[start..i].iter().sum(),
                days: i - start,
            });
            start = i;
        }
    }
    rows
}

impl BacktestReport {
    pub fn daily_csv(&self) -> String {
        let mut out = String::from("date,return,benchmark,turnover,held,flagged\n");
        for i in 0..self.dates.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.dates[i].format("%Y-%m-%d"),
                self.daily[i],
                self.benchmark[i],
                self.turnover[i],
                self.held[i],
                self.flagged[i] as u8
            );
        }
        out
    }

    pub fn quarterly_csv(&self) -> String {
        let mut out = String::from("quarter,cumulative_return,max_drawdown,turnover,days\n");
        for q in &self.quarters {
            let _ = writeln!(out, "{},{},{},{},{}", q.label, q.cumulative, q.max_drawdown, q.turnover, q.days);
        }
        out
    }

    pub fn summary(&self) -> String {
        let m = &self.metrics;
        let b = &self.benchmark_metrics;
        format!(
            "days = {}\ncumulative_return = {}\nsharpe = {}\nmax_drawdown = {}\nmean_turnover = {}\nflagged_days = {}\nbenchmark_cumulative_return = {}\nbenchmark_sharpe = {}\nbenchmark_max_drawdown = {}\n",
            self.daily.len(),
            m.cumulative,
            m.sharpe,
            m.max_drawdown,
            self.turnover.iter().sum::<f64>() / self.turnover.len().max(1) as f64,
            self.flagged.iter().filter(|f| **f).count(),
            b.cumulative,
            b.sharpe,
            b.max_drawdown,
        )
    }

    /// Writes `daily.csv`, `quarterly.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("daily.csv", self.daily_csv()),
            ("quarterly.csv", self.quarterly_csv()),
            ("summary.txt", self.summary()),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn turnover_cases() {
        let a = Portfolio::equal_weight((0..50).collect(), 0);
        assert_eq!(turnover(&a, &a), 0.0);
        let b = Portfolio::equal_weight((50..100).collect(), 1);
        assert!((turnover(&a, &b) - 1.0).abs() < 1e-12);
        let c = Portfolio::equal_weight((5..55).collect(), 1);
        assert!((turnover(&a, &c) - 0.1).abs() < 1e-12);
        assert!((turnover(&Portfolio::default(), &a) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn risk_metric_examples() {
        let m = risk_metrics(&[0.01, -0.01]).unwrap();
        assert!((m.cumulative - (1.01 * 0.99 - 1.0)).abs() < 1e-15);
        assert_eq!(risk_metrics(&[0.01, 0.02, 0.0]).unwrap().max_drawdown, 0.0);
        let dd = risk_metrics(&[0.1, -0.2, 0.05]).unwrap().max_drawdown;
        assert!((dd - 0.2).abs() < 1e-12);
        assert!(risk_metrics(&[0.01, 0.01]).unwrap().sharpe.is_nan());
        assert!(risk_metrics(&[0.01]).is_err());
    }

    fn panel(closes: &[[f64; 4]]) -> PanelTensor {
        let mut p = PanelTensor::synthetic_constant(closes.len(), 4, 1.0);
        for (a, row) in closes.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                p.set(a, Feature::Close, d, *v);
            }
        }
        p
    }

    #[test]
    fn constant_signal_holds_first_symbols() {
        let p = panel(&[[1.0, 1.1, 1.2, 1.3], [1.0, 0.9, 0.8, 0.7], [1.0, 1.0, 1.0, 1.0]]);
        let s = FactorMatrix::filled(3, 4, 0.5);
        let r = run_backtest(&s, &p, 2, 0.0).unwrap();
        assert_eq!(r.turnover, vec![0.5, 0.0, 0.0]);
        assert!((r.daily[0] - 0.5 * (0.1 + -0.1)).abs() < 1e-15);
    }

    #[test]
    fn foresight_picks_best_asset() {
        let closes = [[1.0, 1.1, 1.0, 1.3], [1.0, 0.9, 1.2, 1.2], [1.0, 1.05, 1.05, 1.0]];
        let p = panel(&closes);
        let mut s = FactorMatrix::filled(3, 4, f64::NAN);
        for a in 0..3 {
            for d in 0..3 {
                s.set(a, d, closes[a][d + 1] / closes[a][d] - 1.0);
            }
        }
        let r = run_backtest(&s, &p, 1, 0.0).unwrap();
        for (i, d) in (1..4).enumerate() {
            let best = (0..3).map(|a| closes[a][d] / closes[a][d - 1] - 1.0).fold(f64::MIN, f64::max);
            assert_eq!(r.daily[i], best);
        }
    }

    #[test]
    fn short_cross_section_is_flagged() {
        let p = panel(&[[1.0, 1.1, 1.2, 1.3], [1.0, 0.9, 0.8, 0.7]]);
        let mut s = FactorMatrix::filled(2, 4, 1.0);
        s.set(1, 1, f64::NAN);
        let r = run_backtest(&s, &p, 2, 0.0).unwrap();
        assert_eq!(r.flagged, vec![false, true, false]);
        assert_eq!(r.held, vec![2, 1, 2]);
    }
}
