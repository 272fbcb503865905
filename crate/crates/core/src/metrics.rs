//! Cross-sectional correlation statistics: daily IC, rank IC, their time
//! averages and the information ratio.

use std::ops::Range;

use crate::formula::FactorMatrix;

/// Minimum number of defined (z, y) pairs for a daily correlation.
pub const MIN_PAIRS: usize = 3;

/// Per-day correlations over the evaluated days of a panel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DailyICSeries {
    /// One entry per evaluated day, `NaN` where undefined.
    pub ic: Vec<f64>,
    pub n_valid_pairs: Vec<usize>,
}

impl DailyICSeries {
    pub fn from_values(ic: Vec<f64>) -> Self {
        let n_valid_pairs = vec![0; ic.len()];
        Self { ic, n_valid_pairs }
    }

    pub fn len(&self) -> usize {
        self.ic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ic.is_empty()
    }

    pub fn defined(&self) -> impl Iterator<Item = f64> + '_ {
        self.ic.iter().copied().filter(|v| !v.is_nan())
    }

    pub fn mean(&self) -> f64 {
        mean_ic(self)
    }

    pub fn ir(&self) -> f64 {
        information_ratio(self)
    }
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    if pairs.len() < MIN_PAIRS {
        return f64::NAN;
    }
    let n = pairs.len() as f64;
    let (mx, my) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (mx / n, my / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if r.is_finite() {
        r.clamp(-1.0, 1.0)
    } else {
        f64::NAN
    }
}

fn valid_pairs(z: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    assert_eq!(z.len(), y.len(), "cross-sections differ in length");
    z.iter()
        .zip(y)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .collect()
}

/// Average ranks (1-based); tied values share their mean rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of one day's cross-section. Pairs with a missing side
/// are dropped; `NaN` with fewer than three pairs or a constant side.
pub fn ic_day(z: &[f64], y: &[f64]) -> f64 {
    pearson(&valid_pairs(z, y))
}

/// Pearson correlation of average ranks over the surviving pairs.
pub fn rank_ic_day(z: &[f64], y: &[f64]) -> f64 {
    let pairs = valid_pairs(z, y);
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let ranked: Vec<(f64, f64)> = average_ranks(&xs)
        .into_iter()
        .zip(average_ranks(&ys))
        .collect();
    pearson(&ranked)
}

fn series_with(
    z: &FactorMatrix,
    y: &FactorMatrix,
    days: Range<usize>,
    f: fn(&[f64], &[f64]) -> f64,
) -> DailyICSeries {
    assert_eq!((z.n_assets, z.n_days), (y.n_assets, y.n_days));
    let mut out = DailyICSeries::default();
    for d in days {
        let (zc, yc) = (z.day_column(d), y.day_column(d));
        out.n_valid_pairs
            .push(zc.iter().zip(&yc).filter(|(a, b)| !a.is_nan() && !b.is_nan()).count());
        out.ic.push(f(&zc, &yc));
    }
    out
}

/// Daily IC over `days`, typically a panel's `eval_days()`.
pub fn daily_ic(z: &FactorMatrix, y: &FactorMatrix, days: Range<usize>) -> DailyICSeries {
    series_with(z, y, days, ic_day)
}

pub fn daily_rank_ic(z: &FactorMatrix, y: &FactorMatrix, days: Range<usize>) -> DailyICSeries {
    series_with(z, y, days, rank_ic_day)
}

/// Mean over defined days; `NaN` if none.
pub fn mean_ic(series: &DailyICSeries) -> f64 {
    let (sum, n) = series.defined().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Mean over sample standard deviation of the defined days; `NaN` with fewer
/// than two days or zero variance.
pub fn information_ratio(series: &DailyICSeries) -> f64 {
    let xs: Vec<f64> = series.defined().collect();
    if xs.len() < 2 {
        return f64::NAN;
    }
    if xs.iter().all(|v| *v == xs[0]) {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return f64::NAN;
    }
    let ir = mean / var.sqrt();
    if ir.is_finite() {
        ir
    } else {
        f64::NAN
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_and_anti_correlation() {
        let z = [0.3, -1.0, 2.0, 5.0];
        assert!((ic_day(&z, &z) - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        assert!((ic_day(&z, &neg) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_pearson() {
        assert!((ic_day(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_days_are_missing() {
        assert!(ic_day(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_nan());
        assert!(ic_day(&[1.0, 2.0, f64::NAN], &[1.0, 2.0, 3.0]).is_nan());
    }

    #[test]
    fn rank_ic_examples() {
        assert!((rank_ic_day(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        let tie = rank_ic_day(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]);
        assert!((tie - ic_day(&[1.5, 1.5, 3.0], &[1.0, 2.0, 3.0])).abs() < 1e-15);
        let z = [0.1, -0.4, 2.0, 0.7, 1.1];
        let y = [1.0, 0.0, 3.0, -2.0, 0.5];
        let ez: Vec<f64> = z.iter().map(|v: &f64| v.exp()).collect();
        assert_eq!(rank_ic_day(&ez, &y), rank_ic_day(&z, &y));
    }

    #[test]
    fn average_rank_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mean_and_ir() {
        let s = DailyICSeries::from_values(vec![0.1, f64::NAN, 0.3]);
        assert!((mean_ic(&s) - 0.2).abs() < 1e-15);
        assert!(information_ratio(&DailyICSeries::from_values(vec![0.1; 3])).is_nan());
        let ir = information_ratio(&DailyICSeries::from_values(vec![0.0, 0.2]));
        assert!((ir - 0.1 / 0.02f64.sqrt()).abs() < 1e-12);
        assert!(mean_ic(&DailyICSeries::from_values(vec![f64::NAN])).is_nan());
    }

    #[test]
    fn matrix_series_counts_pairs() {
        let z = FactorMatrix::new(3, 2, vec![1.0, 1.0, 2.0, f64::NAN, 3.0, 2.0]);
        let y = FactorMatrix::new(3, 2, vec![1.0, 0.0, 2.0, 1.0, 3.0, 2.0]);
        let s = daily_ic(&z, &y, 0..2);
        assert_eq!(s.n_valid_pairs, vec![3, 2]);
        assert!((s.ic[0] - 1.0).abs() < 1e-15);
        assert!(s.ic[1].is_nan());
    }
}
