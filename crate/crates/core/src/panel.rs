//! Daily asset feature panels, forward-return targets, CSV IO, date splits
//! and a synthetic market generator with a planted signal.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::formula::{evaluate, FactorMatrix, Feature, RpnProgram};

pub const DEFAULT_HORIZON: usize = 5;
const DATE_FORMAT: &str = "%Y-%m-%d";

/// Asset x feature x day panel. Missing cells are `NaN`.
///
/// The first `warmup_days` days only provide history for time-series
/// operators and are excluded from every averaged metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTensor {
    symbols: Vec<String>,
    dates: Vec<NaiveDate>,
    features: Vec<Feature>,
    /// Feature-major storage: `values[(f * n_assets + asset) * n_days + day]`.
    values: Vec<f64>,
    warmup_days: usize,
}

impl PanelTensor {
    pub fn new(
        symbols: Vec<String>,
        dates: Vec<NaiveDate>,
        features: Vec<Feature>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != symbols.len() * dates.len() * features.len() {
            return Err(Error::Data("panel value buffer has the wrong size".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("dates must be strictly increasing".into()));
        }
        if features.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("features must follow the canonical order".into()));
        }
        let panel = Self {
            symbols,
            dates,
            features,
            values,
            warmup_days: 0,
        };
        if let Some(vol) = panel.feature(Feature::Volume) {
            if vol.iter().any(|v| *v < 0.0) {
                return Err(Error::Data("negative volume".into()));
            }
        }
        if panel.values.iter().any(|v| v.is_infinite()) {
            return Err(Error::Data("panel contains infinite values".into()));
        }
        Ok(panel)
    }

    pub fn n_assets(&self) -> usize {
        self.symbols.len()
    }

    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        self.features.iter().map(|f| f.name()).collect()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn warmup_days(&self) -> usize {
        self.warmup_days
    }

    /// Day indices that count towards metrics.
    pub fn eval_days(&self) -> Range<usize> {
        self.warmup_days..self.n_days()
    }

    fn feature_slot(&self, f: Feature) -> Option<usize> {
        self.features.iter().position(|&x| x == f)
    }

    /// Asset-major `[asset][day]` slice of one feature.
    pub fn feature(&self, f: Feature) -> Option<&[f64]> {
        let slot = self.feature_slot(f)?;
        let block = self.n_assets() * self.n_days();
        Some(&self.values[slot * block..(slot + 1) * block])
    }

    pub fn value(&self, asset: usize, f: Feature, day: usize) -> f64 {
        self.feature(f).map_or(f64::NAN, |s| s[asset * self.n_days() + day])
    }

    pub fn set(&mut self, asset: usize, f: Feature, day: usize, v: f64) {
        let slot = self.feature_slot(f).expect("feature present");
        let idx = (slot * self.n_assets() + asset) * self.n_days() + day;
        self.values[idx] = v;
    }

    /// Keeps only `features`, which must all be present.
    pub fn select_features(&self, features: &[Feature]) -> Result<Self> {
        let mut values = Vec::new();
        for f in features {
            values.extend_from_slice(
                self.feature(*f)
                    .ok_or_else(|| Error::MissingFeature(f.name().into()))?,
            );
        }
        let mut out = Self::new(self.symbols.clone(), self.dates.clone(), features.to_vec(), values)?;
        out.warmup_days = self.warmup_days;
        Ok(out)
    }

    fn slice_days(&self, days: Range<usize>, warmup: usize) -> Self {
        let (n, l) = (self.n_assets(), self.n_days());
        let mut values = Vec::with_capacity(self.features.len() * n * days.len());
        for chunk in self.values.chunks(l) {
            values.extend_from_slice(&chunk[days.clone()]);
        }
        Self {
            symbols: self.symbols.clone(),
            dates: self.dates[days].to_vec(),
            features: self.features.clone(),
            values,
            warmup_days: warmup,
        }
    }

    /// A panel of `value` everywhere with consecutive business days.
    pub fn synthetic_constant(n_assets: usize, n_days: usize, value: f64) -> Self {
        Self {
            symbols: (0..n_assets).map(|i| format!("S{i:03}")).collect(),
            dates: business_days(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), n_days),
            features: Feature::ALL.to_vec(),
            values: vec![value; n_assets * n_days * Feature::ALL.len()],
            warmup_days: 0,
        }
    }
}

/// Forward returns aligned with a panel's asset and day axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPanel {
    pub returns: FactorMatrix,
    pub horizon_days: usize,
}

impl TargetPanel {
    /// Close-to-close forward returns over `horizon_days`.
    pub fn forward_returns(panel: &PanelTensor, horizon_days: usize) -> Result<Self> {
        let close = panel
            .feature(Feature::Close)
            .ok_or_else(|| Error::MissingFeature("close".into()))?;
        let (n, l) = (panel.n_assets(), panel.n_days());
        let mut out = FactorMatrix::filled(n, l, f64::NAN);
        for a in 0..n {
            for d in 0..l.saturating_sub(horizon_days) {
                let (c0, c1) = (close[a * l + d], close[a * l + d + horizon_days]);
                let r = c1 / c0 - 1.0;
                if c0 != 0.0 && r.is_finite() {
                    out.set(a, d, r);
                }
            }
        }
        Ok(Self {
            returns: out,
            horizon_days,
        })
    }

    fn slice_days(&self, days: Range<usize>) -> Self {
        let l = self.returns.n_days;
        let mut values = Vec::new();
        for row in self.returns.values.chunks(l) {
            values.extend_from_slice(&row[days.clone()]);
        }
        Self {
            returns: FactorMatrix::new(self.returns.n_assets, days.len(), values),
            horizon_days: self.horizon_days,
        }
    }
}

/// Inclusive date ranges for the train / validation / test subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: (NaiveDate, NaiveDate),
    pub valid: (NaiveDate, NaiveDate),
    pub test: (NaiveDate, NaiveDate),
}

impl SplitSpec {
    /// Chronological split by day-count fractions; the test range takes the
    /// remainder.
    pub fn by_fractions(dates: &[NaiveDate], train: f64, valid: f64) -> Result<Self> {
        let l = dates.len();
        let n_train = (l as f64 * train).round() as usize;
        let n_valid = (l as f64 * valid).round() as usize;
        if n_train == 0 || n_valid == 0 || n_train + n_valid >= l {
            return Err(Error::Split(format!(
                "fractions {train}/{valid} leave an empty subset of {l} days"
            )));
        }
        Ok(Self {
            train: (dates[0], dates[n_train - 1]),
            valid: (dates[n_train], dates[n_train + n_valid - 1]),
            test: (dates[n_train + n_valid], dates[l - 1]),
        })
    }

    fn validate(&self) -> Result<()> {
        for (name, (a, b)) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            if a > b {
                return Err(Error::Split(format!("{name} range ends before it starts")));
            }
        }
        if self.train.1 >= self.valid.0 || self.valid.1 >= self.test.0 {
            return Err(Error::Split("ranges overlap or are out of order".into()));
        }
        Ok(())
    }
}

/// One subset of a split: a sub-panel with warm-up history and its targets.
pub type Subset = (PanelTensor, TargetPanel);

/// Splits into train / valid / test. Each subset keeps up to `lookback`
/// earlier days as flagged warm-up rows.
pub fn split(
    panel: &PanelTensor,
    target: &TargetPanel,
    spec: &SplitSpec,
    lookback: usize,
) -> Result<[Subset; 3]> {
    spec.validate()?;
    let dates = panel.dates();
    let range = |(start, end): (NaiveDate, NaiveDate), name: &str| -> Result<Range<usize>> {
        let lo = dates.partition_point(|d| *d < start);
        let hi = dates.partition_point(|d| *d <= end);
        if lo >= hi {
            return Err(Error::Split(format!("{name} range selects no trading days")));
        }
        Ok(lo..hi)
    };
    let parts = [
        range(spec.train, "train")?,
        range(spec.valid, "valid")?,
        range(spec.test, "test")?,
    ];
    Ok(parts.map(|r| {
        let start = r.start.saturating_sub(lookback);
        let days = start..r.end;
        (
            panel.slice_days(days.clone(), r.start - start),
            target.slice_days(days),
        )
    }))
}

fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

fn parse_cell(text: &str, line: usize, column: &str) -> Result<f64> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("bad number {t:?} in column `{column}`"),
        })
}

/// Features whose columns appear in the CSV header at `path`.
pub fn csv_features(path: impl AsRef<Path>) -> Result<Vec<Feature>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    Ok(Feature::ALL
        .iter()
        .copied()
        .filter(|f| headers.iter().any(|h| h == f.name()))
        .collect())
}

/// Reads `date,symbol,<features...>[,target]` rows into a dense panel.
///
/// Without a `target` column, targets are close-to-close forward returns over
/// `horizon_days`.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &[Feature],
    horizon_days: usize,
) -> Result<(PanelTensor, TargetPanel)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::Parse {
        line: 1,
        message: format!("missing column `{name}`"),
    };
    let date_col = column("date").ok_or_else(|| missing("date"))?;
    let symbol_col = column("symbol").ok_or_else(|| missing("symbol"))?;
    let feature_cols = schema
        .iter()
        .map(|f| column(f.name()).ok_or_else(|| missing(f.name())))
        .collect::<Result<Vec<_>>>()?;
    let target_col = column("target");

    type Row = (Vec<f64>, Option<f64>);
    let mut rows: BTreeMap<(NaiveDate, String), Row> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let raw_date = record.get(date_col).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, DATE_FORMAT).map_err(|_| Error::Parse {
            line,
            message: format!("bad date {raw_date:?}"),
        })?;
        let symbol = record.get(symbol_col).unwrap_or("").to_string();
        if symbol.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty symbol".into(),
            });
        }
        let mut values = Vec::with_capacity(schema.len());
        for (f, &col) in schema.iter().zip(&feature_cols) {
            let v = parse_cell(record.get(col).unwrap_or(""), line, f.name())?;
            if *f == Feature::Volume && v < 0.0 {
                return Err(Error::Parse {
                    line,
                    message: "negative volume".into(),
                });
            }
            values.push(v);
        }
        let target = match target_col {
            Some(c) => Some(parse_cell(record.get(c).unwrap_or(""), line, "target")?),
            None => None,
        };
        if rows.insert((date, symbol.clone()), (values, target)).is_some() {
            return Err(Error::DuplicateKey {
                date: date.format(DATE_FORMAT).to_string(),
                symbol,
            });
        }
    }

    let dates: Vec<NaiveDate> = rows
        .keys()
        .map(|(d, _)| *d)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if dates.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 distinct dates, found {}",
            dates.len()
        )));
    }
    let symbols: Vec<String> = rows
        .keys()
        .map(|(_, s)| s.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let date_idx: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let sym_idx: HashMap<&str, usize> = symbols.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut features = schema.to_vec();
    features.sort();
    features.dedup();
    let (n, l) = (symbols.len(), dates.len());
    let mut values = vec![f64::NAN; features.len() * n * l];
    let mut targets = FactorMatrix::filled(n, l, f64::NAN);
    for ((date, symbol), (vals, target)) in &rows {
        let (d, a) = (date_idx[date], sym_idx[symbol.as_str()]);
        for (f, v) in schema.iter().zip(vals) {
            let slot = features.iter().position(|x| x == f).unwrap();
            values[(slot * n + a) * l + d] = *v;
        }
        if let Some(t) = target {
            targets.set(a, d, *t);
        }
    }
    let panel = PanelTensor::new(symbols, dates, features, values)?;
    let target = if target_col.is_some() {
        TargetPanel {
            returns: targets,
            horizon_days,
        }
    } else {
        TargetPanel::forward_returns(&panel, horizon_days)?
    };
    Ok((panel, target))
}

/// Writes a panel (and optionally its targets) in the format read by
/// [`load_csv`]. Rows whose cells are all missing are omitted.
pub fn write_csv(path: impl AsRef<Path>, panel: &PanelTensor, target: Option<&TargetPanel>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["date".to_string(), "symbol".to_string()];
    header.extend(panel.feature_names().iter().map(|s| s.to_string()));
    if target.is_some() {
        header.push("target".into());
    }
    w.write_record(&header).map_err(io)?;
    let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
    for d in 0..panel.n_days() {
        for a in 0..panel.n_assets() {
            let vals: Vec<f64> = panel.features().iter().map(|&f| panel.value(a, f, d)).collect();
            let t = target.map(|t| t.returns.get(a, d));
            if vals.iter().all(|v| v.is_nan()) && t.is_none_or(|t| t.is_nan()) {
                continue;
            }
            let mut rec = vec![
                panel.dates()[d].format(DATE_FORMAT).to_string(),
                panel.symbols()[a].clone(),
            ];
            rec.extend(vals.into_iter().map(fmt));
            if let Some(t) = t {
                rec.push(fmt(t));
            }
            w.write_record(&rec).map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Cross-sectional z-score of one day's values (`NaN` kept). Returns `None`
/// when fewer than two values are defined or they are all equal.
fn standardize(xs: &[f64]) -> Option<Vec<f64>> {
    let defined: Vec<f64> = xs.iter().copied().filter(|v| !v.is_nan()).collect();
    if defined.len() < 2 || defined.iter().all(|&v| v == defined[0]) {
        return None;
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let sd = (defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Some(xs.iter().map(|v| (v - mean) / sd).collect())
}

const SYNTH_ASSET_VOL: f64 = 0.02;
const SYNTH_MARKET_VOL: f64 = 0.01;

/// Geometric random-walk market whose targets are driven by a planted
/// formula: `s * z(signal) + (1 - s) * noise`, re-standardized per day.
pub fn synth_market(
    n_assets: usize,
    n_days: usize,
    signal: &RpnProgram,
    signal_strength: f64,
    seed: u64,
) -> Result<(PanelTensor, TargetPanel)> {
    if n_assets < 2 {
        return Err(Error::Generation("need at least 2 assets".into()));
    }
    if n_days <= signal.max_lookback() {
        return Err(Error::Generation(format!(
            "{n_days} days do not cover the signal look-back of {}",
            signal.max_lookback()
        )));
    }
    if !(0.0..=1.0).contains(&signal_strength) {
        return Err(Error::Generation("signal strength must lie in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

    let (n, l) = (n_assets, n_days);
    let block = n * l;
    let mut values = vec![0.0; Feature::ALL.len() * block];
    let idx = |f: Feature, a: usize, d: usize| (f as usize * n + a) * l + d;
    let mut close: Vec<f64> = (0..n).map(|_| 100.0 * (0.2 * normal()).exp()).collect();
    for d in 0..l {
        let market = SYNTH_MARKET_VOL * normal();
        for (a, c) in close.iter_mut().enumerate() {
            let prev = *c;
            let ret = market + SYNTH_ASSET_VOL * normal();
            let next = prev * ret.exp();
            let open = prev * (0.005 * normal()).exp();
            let high = open.max(next) * (0.01 * normal()).abs().exp();
            let low = open.min(next) * (-(0.01 * normal()).abs()).exp();
            let volume = 1e6 * (0.5 * normal()).exp();
            values[idx(Feature::Open, a, d)] = open;
            values[idx(Feature::High, a, d)] = high;
            values[idx(Feature::Low, a, d)] = low;
            values[idx(Feature::Close, a, d)] = next;
            values[idx(Feature::Volume, a, d)] = volume;
            values[idx(Feature::Vwap, a, d)] = (high + low + next) / 3.0;
            *c = next;
        }
    }
    let noise: Vec<f64> = (0..block).map(|_| normal()).collect();
    let panel = PanelTensor::new(
        (0..n).map(|i| format!("S{i:03}")).collect(),
        business_days(NaiveDate::from_ymd_opt(2016, 1, 4).unwrap(), l),
        Feature::ALL.to_vec(),
        values,
    )?;

    let planted = evaluate(signal, &panel)?;
    if planted.is_all_missing() {
        return Err(Error::Generation(format!("signal {signal} is missing everywhere")));
    }
    let horizon = DEFAULT_HORIZON.min(l - 1);
    let mut target = FactorMatrix::filled(n, l, f64::NAN);
    for d in 0..l - horizon {
        let Some(z) = standardize(&planted.day_column(d)) else {
            continue;
        };
        let raw: Vec<f64> = (0..n)
            .map(|a| signal_strength * z[a] + (1.0 - signal_strength) * noise[a * l + d])
            .collect();
        if let Some(y) = standardize(&raw) {
            for (a, v) in y.into_iter().enumerate() {
                target.set(a, d, v);
            }
        }
    }
    Ok((
        panel,
        TargetPanel {
            returns: target,
            horizon_days: horizon,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "date,symbol,open,high,low,close,volume,vwap\n";

    #[test]
    fn loads_dense_panel() {
        let mut text = HEADER.to_string();
        for d in ["2021-01-04", "2021-01-05", "2021-01-06"] {
            for s in ["AAA", "BBB"] {
                text += &format!("{d},{s},1,2,0.5,1.5,100,1.2\n");
            }
        }
        let f = write(&text);
        let (p, t) = load_csv(f.path(), &Feature::ALL, 1).unwrap();
        assert_eq!((p.n_assets(), p.feature_names().len(), p.n_days()), (2, 6, 3));
        assert_eq!(t.returns.get(0, 0), 0.0);
        assert!(t.returns.get(0, 2).is_nan());
    }

    #[test]
    fn forward_return_definition() {
        let f = write(&format!(
            "{HEADER}2021-01-04,AAA,1,1,1,100,1,1\n2021-01-05,AAA,1,1,1,110,1,1\n"
        ));
        let (_, t) = load_csv(f.path(), &Feature::ALL, 1).unwrap();
        assert!((t.returns.get(0, 0) - 0.10).abs() < 1e-15);
        assert!(t.returns.get(0, 1).is_nan());
    }

    #[test]
    fn missing_symbol_rows_become_missing_cells() {
        let f = write(&format!(
            "{HEADER}2021-01-04,AAA,1,1,1,100,1,1\n2021-01-05,AAA,1,1,1,110,1,1\n2021-01-05,BBB,1,1,1,50,1,1\n"
        ));
        let (p, _) = load_csv(f.path(), &Feature::ALL, 1).unwrap();
        assert!(p.value(1, Feature::Close, 0).is_nan());
        assert_eq!(p.value(1, Feature::Close, 1), 50.0);
    }

    #[test]
    fn duplicate_key_rejected() {
        let f = write(&format!(
            "{HEADER}2021-01-04,AAA,1,1,1,1,1,1\n2021-01-04,AAA,1,1,1,1,1,1\n2021-01-05,AAA,1,1,1,1,1,1\n"
        ));
        match load_csv(f.path(), &Feature::ALL, 1) {
            Err(Error::DuplicateKey { date, symbol }) => {
                assert_eq!((date.as_str(), symbol.as_str()), ("2021-01-04", "AAA"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write(&format!(
            "{HEADER}2021-01-04,AAA,1,1,1,1,1,1\n2021-01-05,AAA,1,x,1,1,1,1\n"
        ));
        match load_csv(f.path(), &Feature::ALL, 1) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_date_rejected() {
        let f = write(&format!("{HEADER}2021-01-04,AAA,1,1,1,1,1,1\n2021-01-04,BBB,1,1,1,1,1,1\n"));
        assert!(matches!(load_csv(f.path(), &Feature::ALL, 1), Err(Error::Data(_))));
    }

    #[test]
    fn target_column_is_used_verbatim() {
        let f = write(
            "date,symbol,close,target\n2021-01-04,AAA,1,0.25\n2021-01-05,AAA,2,\n",
        );
        let (p, t) = load_csv(f.path(), &[Feature::Close], 5).unwrap();
        assert_eq!(p.feature_names(), vec!["close"]);
        assert_eq!(t.returns.get(0, 0), 0.25);
        assert!(t.returns.get(0, 1).is_nan());
    }

    fn signal() -> RpnProgram {
        RpnProgram::from_infix("Delta(close, 10d)").unwrap()
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_market(5, 60, &signal(), 0.5, 3).unwrap();
        let b = synth_market(5, 60, &signal(), 0.5, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert!(a.1.returns.same_cells(&b.1.returns));
        let c = synth_market(5, 60, &signal(), 0.5, 4).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn synth_rejects_short_history() {
        assert!(synth_market(5, 10, &signal(), 0.5, 0).is_err());
        assert!(synth_market(1, 60, &signal(), 0.5, 0).is_err());
    }

    #[test]
    fn synth_last_horizon_days_missing() {
        let (_, t) = synth_market(4, 40, &signal(), 1.0, 1).unwrap();
        for a in 0..4 {
            for d in 35..40 {
                assert!(t.returns.get(a, d).is_nan());
            }
            assert!(!t.returns.get(a, 20).is_nan());
        }
    }

    fn hundred_days() -> PanelTensor {
        PanelTensor::synthetic_constant(2, 100, 1.0)
    }

    #[test]
    fn split_keeps_warmup_rows() {
        let p = hundred_days();
        let t = TargetPanel::forward_returns(&p, 5).unwrap();
        let spec = SplitSpec::by_fractions(p.dates(), 0.6, 0.2).unwrap();
        let [train, valid, test] = split(&p, &t, &spec, 10).unwrap();
        assert_eq!(train.0.n_days(), 60);
        assert_eq!(train.0.warmup_days(), 0);
        assert_eq!(valid.0.n_days(), 30);
        assert_eq!(valid.0.warmup_days(), 10);
        assert_eq!(valid.1.returns.n_days, 30);
        assert_eq!(test.0.eval_days().len(), 20);
    }

    #[test]
    fn overlapping_split_rejected() {
        let p = hundred_days();
        let t = TargetPanel::forward_returns(&p, 5).unwrap();
        let d = p.dates();
        let spec = SplitSpec {
            train: (d[0], d[50]),
            valid: (d[50], d[70]),
            test: (d[71], d[99]),
        };
        assert!(matches!(split(&p, &t, &spec, 0), Err(Error::Split(_))));
    }

    #[test]
    fn split_partitions_day_axis() {
        let p = hundred_days();
        let t = TargetPanel::forward_returns(&p, 5).unwrap();
        let spec = SplitSpec::by_fractions(p.dates(), 0.5, 0.3).unwrap();
        let parts = split(&p, &t, &spec, 7).unwrap();
        let joined: Vec<NaiveDate> = parts
            .iter()
            .flat_map(|(sp, _)| sp.dates()[sp.warmup_days()..].to_vec())
            .collect();
        assert_eq!(joined, p.dates());
    }
}
