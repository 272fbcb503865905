//! Per-operator kernels over asset-major `[asset][day]` buffers.
//!
//! Missing cells are `NaN`. Every kernel propagates missingness and maps any
//! non-finite result (log of a non-positive, division by zero, overflow) to
//! missing, so evaluation is total.

use super::token::Op;

#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Series(&'a [f64]),
    Scalar(f64),
}

impl Operand<'_> {
    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            Operand::Series(s) => s[i],
            Operand::Scalar(c) => *c,
        }
    }
}

#[inline]
fn finite_or_nan(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        f64::NAN
    }
}

pub fn unary(op: Op, x: &[f64]) -> Vec<f64> {
    match op {
        Op::Abs => x.iter().map(|v| v.abs()).collect(),
        Op::Log => x
            .iter()
            .map(|&v| if v > 0.0 { finite_or_nan(v.ln()) } else { f64::NAN })
            .collect(),
        _ => panic!("{op:?} is not a unary operator"),
    }
}

/// Elementwise binary operator. `left` is the operand on top of the stack.
pub fn binary(op: Op, left: Operand<'_>, right: Operand<'_>, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let (a, b) = (left.at(i), right.at(i));
            if a.is_nan() || b.is_nan() {
                return f64::NAN;
            }
            let v = match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => {
                    if b == 0.0 {
                        f64::NAN
                    } else {
                        a / b
                    }
                }
                Op::Larger => a.max(b),
                Op::Smaller => a.min(b),
                _ => panic!("{op:?} is not a binary operator"),
            };
            finite_or_nan(v)
        })
        .collect()
}

/// Count of missing cells in `row[..i]` for every `i`.
fn nan_prefix(row: &[f64]) -> Vec<u32> {
    let mut out = Vec::with_capacity(row.len() + 1);
    let mut acc = 0u32;
    out.push(0);
    for v in row {
        acc += v.is_nan() as u32;
        out.push(acc);
    }
    out
}

fn mean(w: &[f64]) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

fn is_constant(w: &[f64]) -> bool {
    w.iter().all(|&v| v == w[0])
}

fn sample_var(w: &[f64]) -> f64 {
    if w.len() < 2 {
        return f64::NAN;
    }
    if is_constant(w) {
        return 0.0;
    }
    let m = mean(w);
    w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (w.len() - 1) as f64
}

fn median(w: &[f64], scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    scratch.extend_from_slice(w);
    scratch.sort_by(|a, b| a.total_cmp(b));
    let n = scratch.len();
    if n % 2 == 1 {
        scratch[n / 2]
    } else {
        0.5 * (scratch[n / 2 - 1] + scratch[n / 2])
    }
}

/// Trailing-window EMA weights, index 0 = today.
pub fn ema_weights(window: usize) -> Vec<f64> {
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut w = Vec::with_capacity(window);
    let mut v = 1.0;
    for _ in 0..window {
        w.push(v);
        v *= 1.0 - alpha;
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// Trailing-window WMA weights, index 0 = today (weight `l`) down to 1.
pub fn wma_weights(window: usize) -> Vec<f64> {
    let total = (window * (window + 1)) as f64 / 2.0;
    (0..window).map(|k| (window - k) as f64 / total).collect()
}

/// Single-series time-series operator applied independently to each asset
/// row of length `n_days`.
pub fn rolling(op: Op, x: &[f64], n_days: usize, window: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; x.len()];
    if window == 0 || n_days == 0 {
        return out;
    }
    let weights = match op {
        Op::Ema => ema_weights(window),
        Op::Wma => wma_weights(window),
        _ => Vec::new(),
    };
    let mut scratch = Vec::with_capacity(window);
    for (row, dst) in x.chunks(n_days).zip(out.chunks_mut(n_days)) {
        match op {
            Op::Ref | Op::Delta => {
                for d in window..n_days {
                    let past = row[d - window];
                    let v = if op == Op::Ref { past } else { row[d] - past };
                    dst[d] = finite_or_nan(v);
                }
                continue;
            }
            _ => {}
        }
        let nans = nan_prefix(row);
        for d in (window - 1)..n_days {
            let lo = d + 1 - window;
            if nans[d + 1] != nans[lo] {
                continue;
            }
            let w = &row[lo..=d];
            let v = match op {
                Op::Mean => mean(w),
                Op::Sum => w.iter().sum(),
                Op::Var => sample_var(w),
                Op::Std => sample_var(w).sqrt(),
                Op::Max => w.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Op::Min => w.iter().copied().fold(f64::INFINITY, f64::min),
                Op::Medium => median(w, &mut scratch),
                Op::Mad => {
                    let m = mean(w);
                    w.iter().map(|v| (v - m).abs()).sum::<f64>() / w.len() as f64
                }
                Op::Wma | Op::Ema => w
                    .iter()
                    .rev()
                    .zip(&weights)
                    .map(|(v, k)| v * k)
                    .sum(),
                _ => panic!("{op:?} is not a rolling operator"),
            };
            dst[d] = finite_or_nan(v);
        }
    }
    out
}

/// Two-series rolling covariance / correlation, sample (n-1) normalization.
pub fn pair_rolling(op: Op, x: &[f64], y: &[f64], n_days: usize, window: usize) -> Vec<f64> {
    assert_eq!(x.len(), y.len());
    let mut out = vec![f64::NAN; x.len()];
    if window < 2 || n_days == 0 {
        return out;
    }
    for ((rx, ry), dst) in x
        .chunks(n_days)
        .zip(y.chunks(n_days))
        .zip(out.chunks_mut(n_days))
    {
        let nx = nan_prefix(rx);
        let ny = nan_prefix(ry);
        for d in (window - 1)..n_days {
            let lo = d + 1 - window;
            if nx[d + 1] != nx[lo] || ny[d + 1] != ny[lo] {
                continue;
            }
            let (wx, wy) = (&rx[lo..=d], &ry[lo..=d]);
            let (mx, my) = (mean(wx), mean(wy));
            let cov = wx
                .iter()
                .zip(wy)
                .map(|(a, b)| (a - mx) * (b - my))
                .sum::<f64>()
                / (window - 1) as f64;
            let v = match op {
                Op::Cov => cov,
                Op::Corr => {
                    if is_constant(wx) || is_constant(wy) {
                        f64::NAN
                    } else {
                        let sx = sample_var(wx).sqrt();
                        let sy = sample_var(wy).sqrt();
                        (cov / (sx * sy)).clamp(-1.0, 1.0)
                    }
                }
                _ => panic!("{op:?} is not a pair rolling operator"),
            };
            dst[d] = finite_or_nan(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn same(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len()
            && a.iter().zip(b).all(|(x, y)| {
                (x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-12 * (1.0 + y.abs())
            })
    }

    const NA: f64 = f64::NAN;

    #[test]
    fn ref_shifts_by_window() {
        assert!(same(&rolling(Op::Ref, &[1.0, 2.0, 3.0], 3, 1), &[NA, 1.0, 2.0]));
    }

    #[test]
    fn mean_over_trailing_window() {
        assert!(same(&rolling(Op::Mean, &[1.0, 2.0, 3.0], 3, 2), &[NA, 1.5, 2.5]));
    }

    #[test]
    fn rolling_is_per_asset_row() {
        // two assets x 3 days
        let x = [1.0, 2.0, 3.0, 10.0, 20.0, 30.0];
        assert!(same(
            &rolling(Op::Delta, &x, 3, 1),
            &[NA, 1.0, 1.0, NA, 10.0, 10.0]
        ));
        assert!(same(&rolling(Op::Sum, &x, 3, 3), &[NA, NA, 6.0, NA, NA, 60.0]));
    }

    #[test]
    fn window_statistics() {
        let x = [4.0, 1.0, 3.0, 2.0];
        let at = |op| rolling(op, &x, 4, 4)[3];
        assert_eq!(at(Op::Max), 4.0);
        assert_eq!(at(Op::Min), 1.0);
        assert_eq!(at(Op::Medium), 2.5);
        assert!((at(Op::Var) - 5.0 / 3.0).abs() < 1e-15);
        assert!((at(Op::Std) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((at(Op::Mad) - 1.0).abs() < 1e-15);
        // weights 4,3,2,1 from today backwards over [2,3,1,4]
        assert!((at(Op::Wma) - (4.0 * 2.0 + 3.0 * 3.0 + 2.0 * 1.0 + 4.0) / 10.0).abs() < 1e-15);
    }

    #[test]
    fn ema_matches_decay_definition() {
        let x = [1.0, 2.0, 4.0];
        let a = 2.0 / 4.0;
        let w = [1.0, 1.0 - a, (1.0 - a) * (1.0 - a)];
        let expect = (4.0 * w[0] + 2.0 * w[1] + 1.0 * w[2]) / w.iter().sum::<f64>();
        assert!((rolling(Op::Ema, &x, 3, 3)[2] - expect).abs() < 1e-15);
    }

    #[test]
    fn missing_inside_window_propagates() {
        let x = [1.0, NA, 3.0, 4.0, 5.0];
        assert!(same(&rolling(Op::Mean, &x, 5, 2), &[NA, NA, NA, 3.5, 4.5]));
    }

    #[test]
    fn division_and_log_domain() {
        let d = binary(Op::Div, Operand::Series(&[1.0, 2.0]), Operand::Series(&[0.0, 4.0]), 2);
        assert!(d[0].is_nan());
        assert_eq!(d[1], 0.5);
        let l = unary(Op::Log, &[0.0, -1.0, 1.0]);
        assert!(l[0].is_nan() && l[1].is_nan());
        assert_eq!(l[2], 0.0);
    }

    #[test]
    fn larger_does_not_swallow_missing() {
        let v = binary(Op::Larger, Operand::Series(&[NA, 1.0]), Operand::Scalar(0.5), 2);
        assert!(v[0].is_nan());
        assert_eq!(v[1], 1.0);
    }

    #[test]
    fn correlation_of_constant_window_is_missing() {
        let x = [1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0];
        assert!(pair_rolling(Op::Corr, &x, &y, 3, 3)[2].is_nan());
        assert_eq!(pair_rolling(Op::Cov, &x, &y, 3, 3)[2], 0.0);
        let c = pair_rolling(Op::Corr, &y, &[2.0, 4.0, 6.5], 3, 3)[2];
        assert!(c > 0.99 && c <= 1.0);
    }

    /// Naive per-window reference, written independently of the kernels.
    fn naive(op: Op, w: &[f64]) -> f64 {
        let n = w.len() as f64;
        let m = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
        let mut s = w.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let today_first: Vec<f64> = w.iter().rev().copied().collect();
        match op {
            Op::Mean => m,
            Op::Sum => m * n,
            Op::Var => var,
            Op::Std => var.sqrt(),
            Op::Max => s[s.len() - 1],
            Op::Min => s[0],
            Op::Medium => {
                let k = s.len();
                if k % 2 == 1 {
                    s[k / 2]
                } else {
                    (s[k / 2 - 1] + s[k / 2]) / 2.0
                }
            }
            Op::Mad => w.iter().map(|v| (v - m).abs()).sum::<f64>() / n,
            Op::Wma => {
                let l = w.len();
                let num: f64 = today_first.iter().enumerate().map(|(k, v)| (l - k) as f64 * v).sum();
                num / (l * (l + 1) / 2) as f64
            }
            Op::Ema => {
                let a = 2.0 / (n + 1.0);
                let ws: Vec<f64> = (0..w.len()).map(|k| (1.0 - a).powi(k as i32)).collect();
                today_first.iter().zip(&ws).map(|(v, k)| v * k).sum::<f64>() / ws.iter().sum::<f64>()
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn kernels_agree_with_naive_windows() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let days = 40;
        let x: Vec<f64> = (0..days * 2).map(|_| rng.random_range(-5.0..5.0)).collect();
        for op in [
            Op::Mean,
            Op::Sum,
            Op::Var,
            Op::Std,
            Op::Max,
            Op::Min,
            Op::Medium,
            Op::Mad,
            Op::Wma,
            Op::Ema,
        ] {
            for window in [2usize, 5, 10] {
                let got = rolling(op, &x, days, window);
                for (a, row) in x.chunks(days).enumerate() {
                    for d in 0..days {
                        let g = got[a * days + d];
                        if d + 1 < window {
                            assert!(g.is_nan());
                        } else {
                            let e = naive(op, &row[d + 1 - window..=d]);
                            assert!((g - e).abs() <= 1e-9 * (1.0 + e.abs()), "{op:?} l={window}: {g} vs {e}");
                        }
                    }
                }
            }
        }
    }
}
