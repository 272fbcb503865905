//! Linear combination of mined factors. Each entry holds per-day normalized
//! values; weights are fitted by gradient descent on the squared error
//! against the bound target.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::formula::{evaluate, FactorMatrix, RpnProgram};
use crate::metrics::{ic_day, information_ratio, mean_ic, DailyICSeries};
use crate::panel::{PanelTensor, TargetPanel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    pub capacity: usize,
    pub lr: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            capacity: 10,
            lr: 5e-3,
            max_iters: 1000,
            tol: 1e-8,
        }
    }
}

/// Per-day cross-sectional normalization: subtract the mean of the defined
/// values, then divide by the largest absolute deviation. Days with a
/// constant (or single-asset) cross-section become missing.
pub fn normalize_day(xs: &mut [f64]) {
    let (sum, n) = xs
        .iter()
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return;
    }
    let mean = sum / n as f64;
    let scale = xs
        .iter()
        .filter(|v| !v.is_nan())
        .fold(0.0f64, |m, v| m.max((v - mean).abs()));
    if scale == 0.0 || !scale.is_finite() {
        xs.fill(f64::NAN);
        return;
    }
    for v in xs.iter_mut() {
        *v = (*v - mean) / scale;
    }
}

/// Normalized values over `days`, stored day-major.
fn normalized_day_major(m: &FactorMatrix, days: Range<usize>) -> Vec<f64> {
    let n = m.n_assets;
    let mut out = Vec::with_capacity(n * days.len());
    for d in days {
        let start = out.len();
        out.extend((0..n).map(|a| m.get(a, d)));
        normalize_day(&mut out[start..]);
    }
    out
}

fn dot_missing_zero(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| !x.is_nan() && !y.is_nan())
        .map(|(x, y)| x * y)
        .sum()
}

/// Gram entry: like [`dot_missing_zero`], restricted to cells with a defined target.
fn gram_dot(a: &[f64], b: &[f64], target: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(target)
        .filter(|((x, y), t)| !x.is_nan() && !y.is_nan() && !t.is_nan())
        .map(|((x, y), _)| x * y)
        .sum()
}

/// A factor evaluated and normalized on the pool's panel, ready to score.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub program: RpnProgram,
    /// Day-major over the evaluated days.
    values: Vec<f64>,
    /// Inner product with the target (missing as zero).
    cross: f64,
    self_dot: f64,
}

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub program: RpnProgram,
    pub weight: f64,
    values: Vec<f64>,
}

impl PoolEntry {
    /// Normalized values, day-major over the evaluated days.
    pub fn normalized_values(&self) -> &[f64] {
        &self.values
    }
}

/// Pooled ĪC and ĪR of a combined signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolScore {
    pub ic: f64,
    pub ir: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposeOutcome {
    pub score: PoolScore,
    pub accepted: bool,
    pub evicted: Option<usize>,
}

/// Factor pool bound to one panel's evaluated days and target.
#[derive(Debug, Clone)]
pub struct FactorPool {
    config: PoolConfig,
    n_assets: usize,
    eval_days: Range<usize>,
    /// Day-major target over the evaluated days, `NaN` where missing.
    target: Vec<f64>,
    target_sq: f64,
    loss_days: usize,
    entries: Vec<PoolEntry>,
    gram: Vec<Vec<f64>>,
    cross: Vec<f64>,
    version: u64,
}

/// Weights and Gram statistics for a hypothetical pool state.
struct Trial {
    gram: Vec<Vec<f64>>,
    cross: Vec<f64>,
    weights: Vec<f64>,
}

impl FactorPool {
    pub fn new(panel: &PanelTensor, target: &TargetPanel, config: PoolConfig) -> Result<Self> {
        let r = &target.returns;
        if r.n_assets != panel.n_assets() || r.n_days != panel.n_days() {
            return Err(Error::Pool("target shape does not match the panel".into()));
        }
        if config.capacity == 0 {
            return Err(Error::Pool("capacity must be at least 1".into()));
        }
        let eval_days = panel.eval_days();
        let n = panel.n_assets();
        let mut t = Vec::with_capacity(n * eval_days.len());
        for d in eval_days.clone() {
            t.extend((0..n).map(|a| r.get(a, d)));
        }
        let target_sq = t.iter().filter(|v| !v.is_nan()).map(|v| v * v).sum();
        let loss_days = t.chunks(n.max(1)).filter(|c| c.iter().any(|v| !v.is_nan())).count();
        Ok(Self {
            config,
            n_assets: n,
            eval_days,
            target: t,
            target_sq,
            loss_days,
            entries: Vec::new(),
            gram: Vec::new(),
            cross: Vec::new(),
            version: 0,
        })
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    /// Overrides the weights without refitting.
    pub fn set_weights(&mut self, weights: &[f64]) {
        assert_eq!(weights.len(), self.entries.len());
        for (e, w) in self.entries.iter_mut().zip(weights) {
            e.weight = *w;
        }
        self.version += 1;
    }

    /// Incremented whenever entries or weights change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn contains(&self, program: &RpnProgram) -> bool {
        self.entries.iter().any(|e| &e.program == program)
    }

    /// Evaluates and normalizes `program`. `None` if it has no defined cell
    /// on the evaluated days.
    pub fn prepare(&self, program: &RpnProgram, panel: &PanelTensor) -> Result<Option<Candidate>> {
        let raw = evaluate(program, panel)?;
        Ok(self.prepare_values(program.clone(), &raw))
    }

    pub fn prepare_values(&self, program: RpnProgram, raw: &FactorMatrix) -> Option<Candidate> {
        assert_eq!(raw.n_assets, self.n_assets);
        let values = normalized_day_major(raw, self.eval_days.clone());
        if values.iter().all(|v| v.is_nan()) {
            return None;
        }
        Some(Candidate {
            cross: dot_missing_zero(&values, &self.target),
            self_dot: gram_dot(&values, &values, &self.target),
            program,
            values,
        })
    }

    fn scale(&self) -> f64 {
        1.0 / self.loss_days.max(1) as f64
    }

    fn loss_of(&self, gram: &[Vec<f64>], cross: &[f64], w: &[f64]) -> f64 {
        let mut q = 0.0;
        for (i, row) in gram.iter().enumerate() {
            let gw: f64 = row.iter().zip(w).map(|(g, x)| g * x).sum();
            q += w[i] * (gw - 2.0 * cross[i]);
        }
        (q + self.target_sq) * self.scale()
    }

    fn gradient_of(&self, gram: &[Vec<f64>], cross: &[f64], w: &[f64], out: &mut [f64]) {
        let s = 2.0 * self.scale();
        for (i, row) in gram.iter().enumerate() {
            let gw: f64 = row.iter().zip(w).map(|(g, x)| g * x).sum();
            out[i] = s * (gw - cross[i]);
        }
    }

    /// Mean over days of the squared error `(1/L) Σ ‖z′ − y‖²` on cells with
    /// a defined target; missing factor cells count as zero.
    pub fn loss(&self, weights: &[f64]) -> f64 {
        self.loss_of(&self.gram, &self.cross, weights)
    }

    pub fn loss_gradient(&self, weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; weights.len()];
        self.gradient_of(&self.gram, &self.cross, weights, &mut g);
        g
    }

    /// Gradient descent from `w`. A step that would raise the loss is
    /// retried with half the step size.
    fn descend(&self, gram: &[Vec<f64>], cross: &[f64], w: &mut [f64]) -> FitReport {
        let k = w.len();
        let mut lr = self.config.lr;
        let mut grad = vec![0.0; k];
        let mut next = vec![0.0; k];
        let initial_loss = self.loss_of(gram, cross, w);
        let mut loss = initial_loss;
        let mut iterations = 0;
        while iterations < self.config.max_iters {
            self.gradient_of(gram, cross, w, &mut grad);
            if grad.iter().map(|g| g * g).sum::<f64>().sqrt() < self.config.tol {
                break;
            }
            iterations += 1;
            let mut moved = false;
            while lr >= self.config.lr * 1e-9 {
                for i in 0..k {
                    next[i] = w[i] - lr * grad[i];
                }
                let l = self.loss_of(gram, cross, &next);
                if l <= loss {
                    w.copy_from_slice(&next);
                    loss = l;
                    moved = true;
                    break;
                }
                lr *= 0.5;
            }
            if !moved {
                break;
            }
        }
        FitReport {
            initial_loss,
            final_loss: loss,
            iterations,
        }
    }

    fn has_overlap(gram: &[Vec<f64>]) -> bool {
        gram.iter().enumerate().any(|(i, r)| r[i] > 0.0)
    }

    /// Refits the weights starting from the current ones.
    pub fn fit_weights(&mut self) -> Result<FitReport> {
        if self.entries.is_empty() {
            return Err(Error::Pool("cannot fit an empty pool".into()));
        }
        if !Self::has_overlap(&self.gram) || self.loss_days == 0 {
            return Err(Error::Pool("no defined cells shared with the target".into()));
        }
        let mut w = self.weights();
        let report = self.descend(&self.gram, &self.cross, &mut w);
        self.set_weights(&w);
        Ok(report)
    }

    /// Index of the entry with the smallest |weight|, the earliest on ties.
    fn smallest(weights: &[f64]) -> usize {
        let mut best = 0;
        for (i, w) in weights.iter().enumerate() {
            if w.abs() < weights[best].abs() {
                best = i;
            }
        }
        best
    }

    /// Removes the smallest-magnitude entry and refits. Returns its index.
    pub fn evict_smallest(&mut self) -> Result<usize> {
        if self.entries.is_empty() {
            return Err(Error::Pool("nothing to evict".into()));
        }
        let i = Self::smallest(&self.weights());
        self.remove(i);
        if !self.entries.is_empty() {
            self.fit_weights()?;
        }
        Ok(i)
    }

    fn remove(&mut self, i: usize) {
        self.entries.remove(i);
        self.gram.remove(i);
        for row in &mut self.gram {
            row.remove(i);
        }
        self.cross.remove(i);
        self.version += 1;
    }

    fn extended(&self, cand: &Candidate) -> Trial {
        let mut gram = self.gram.clone();
        let col: Vec<f64> = self
            .entries
            .iter()
            .map(|e| gram_dot(&e.values, &cand.values, &self.target))
            .collect();
        for (row, c) in gram.iter_mut().zip(&col) {
            row.push(*c);
        }
        let mut last = col;
        last.push(cand.self_dot);
        gram.push(last);
        let mut cross = self.cross.clone();
        cross.push(cand.cross);
        let mut weights = self.weights();
        weights.push(0.0);
        Trial {
            gram,
            cross,
            weights,
        }
    }

    /// Fits the pool with `cand` appended, evicting once if over capacity.
    fn trial_fit(&self, cand: &Candidate) -> (Trial, Option<usize>) {
        let mut t = self.extended(cand);
        self.descend(&t.gram, &t.cross, &mut t.weights);
        let mut evicted = None;
        if t.weights.len() > self.config.capacity {
            let i = Self::smallest(&t.weights);
            t.gram.remove(i);
            for row in &mut t.gram {
                row.remove(i);
            }
            t.cross.remove(i);
            t.weights.remove(i);
            self.descend(&t.gram, &t.cross, &mut t.weights);
            evicted = Some(i);
        }
        (t, evicted)
    }

    fn series_for(&self, parts: &[(&[f64], f64)]) -> DailyICSeries {
        combined_series(self.n_assets, &self.target, parts)
    }

    fn score_parts(&self, parts: &[(&[f64], f64)]) -> PoolScore {
        let s = self.series_for(parts);
        PoolScore {
            ic: mean_ic(&s),
            ir: information_ratio(&s),
        }
    }

    /// Daily IC series of the current combination on the bound data.
    pub fn ic_series(&self) -> DailyICSeries {
        let parts: Vec<(&[f64], f64)> = self.entries.iter().map(|e| (&e.values[..], e.weight)).collect();
        self.series_for(&parts)
    }

    pub fn score(&self) -> PoolScore {
        let s = self.ic_series();
        PoolScore {
            ic: mean_ic(&s),
            ir: information_ratio(&s),
        }
    }

    /// Score the pool would have after accepting `cand`, without changing it.
    pub fn tentative(&self, cand: &Candidate) -> PoolScore {
        if self.contains(&cand.program) {
            return self.score();
        }
        let (trial, evicted) = self.trial_fit(cand);
        let mut sources: Vec<&[f64]> = self.entries.iter().map(|e| &e.values[..]).collect();
        sources.push(&cand.values);
        if let Some(i) = evicted {
            sources.remove(i);
        }
        let parts: Vec<(&[f64], f64)> = sources.into_iter().zip(trial.weights).collect();
        self.score_parts(&parts)
    }

    /// Appends `cand`, refits, and evicts the smallest weight when over
    /// capacity. A program already in the pool leaves it unchanged.
    pub fn commit(&mut self, cand: Candidate) -> ProposeOutcome {
        if self.contains(&cand.program) {
            return ProposeOutcome {
                score: self.score(),
                accepted: false,
                evicted: None,
            };
        }
        let extended = self.extended(&cand);
        self.gram = extended.gram;
        self.cross = extended.cross;
        self.entries.push(PoolEntry {
            program: cand.program,
            weight: 0.0,
            values: cand.values,
        });
        let mut w = extended.weights;
        self.descend(&self.gram, &self.cross, &mut w);
        self.set_weights(&w);
        let mut evicted = None;
        if self.entries.len() > self.config.capacity {
            let i = Self::smallest(&w);
            self.remove(i);
            let mut w = self.weights();
            self.descend(&self.gram, &self.cross, &mut w);
            self.set_weights(&w);
            evicted = Some(i);
        }
        let accepted = evicted != Some(self.entries.len());
        ProposeOutcome {
            score: self.score(),
            accepted,
            evicted,
        }
    }

    /// Evaluates `program` on `panel` (the panel the pool was built from)
    /// and commits it. `None` when the factor is missing everywhere.
    pub fn propose(&mut self, program: &RpnProgram, panel: &PanelTensor) -> Result<Option<ProposeOutcome>> {
        if self.contains(program) {
            return Ok(Some(ProposeOutcome {
                score: self.score(),
                accepted: false,
                evicted: None,
            }));
        }
        Ok(self.prepare(program, panel)?.map(|c| self.commit(c)))
    }

    pub fn snapshot(&self) -> PoolSnapshot {
        PoolSnapshot {
            entries: self
                .entries
                .iter()
                .map(|e| (e.weight, e.program.clone()))
                .collect(),
        }
    }

    /// Rebuilds a pool from saved entries, keeping their saved weights.
    pub fn from_snapshot(
        snapshot: &PoolSnapshot,
        panel: &PanelTensor,
        target: &TargetPanel,
        config: PoolConfig,
    ) -> Result<Self> {
        let mut pool = Self::new(panel, target, config)?;
        for (w, program) in &snapshot.entries {
            let raw = evaluate(program, panel)?;
            let values = normalized_day_major(&raw, pool.eval_days.clone());
            let cand = Candidate {
                cross: dot_missing_zero(&values, &pool.target),
                self_dot: gram_dot(&values, &values, &pool.target),
                program: program.clone(),
                values,
            };
            let t = pool.extended(&cand);
            pool.gram = t.gram;
            pool.cross = t.cross;
            pool.entries.push(PoolEntry {
                program: cand.program,
                weight: *w,
                values: cand.values,
            });
        }
        pool.version += 1;
        Ok(pool)
    }
}

/// Daily IC of `Σ w · values` against a day-major target. Missing factor
/// cells contribute nothing; a cell is missing only when every factor is.
fn combined_series(n: usize, target: &[f64], parts: &[(&[f64], f64)]) -> DailyICSeries {
    let mut z = vec![0.0; n];
    let mut out = DailyICSeries::default();
    for (d, y) in target.chunks(n.max(1)).enumerate() {
        z.fill(f64::NAN);
        for (values, w) in parts {
            for (zi, v) in z.iter_mut().zip(&values[d * n..(d + 1) * n]) {
                if !v.is_nan() {
                    *zi = if zi.is_nan() { w * v } else { *zi + w * v };
                }
            }
        }
        out.n_valid_pairs
            .push(z.iter().zip(y).filter(|(a, b)| !a.is_nan() && !b.is_nan()).count());
        out.ic.push(ic_day(&z, y));
    }
    out
}

/// Scores weighted programs on a fixed panel, caching each program's
/// normalized values across calls.
#[derive(Debug, Clone)]
pub struct PoolEvaluator {
    n_assets: usize,
    eval_days: Range<usize>,
    target: Vec<f64>,
    cache: HashMap<RpnProgram, Vec<f64>>,
}

impl PoolEvaluator {
    pub fn new(panel: &PanelTensor, target: &TargetPanel) -> Result<Self> {
        let pool = FactorPool::new(panel, target, PoolConfig::default())?;
        Ok(Self {
            n_assets: pool.n_assets,
            eval_days: pool.eval_days,
            target: pool.target,
            cache: HashMap::new(),
        })
    }

    pub fn series(&mut self, snapshot: &PoolSnapshot, panel: &PanelTensor) -> Result<DailyICSeries> {
        self.cache
            .retain(|p, _| snapshot.entries.iter().any(|(_, q)| q == p));
        for (_, program) in &snapshot.entries {
            if !self.cache.contains_key(program) {
                let raw = evaluate(program, panel)?;
                self.cache
                    .insert(program.clone(), normalized_day_major(&raw, self.eval_days.clone()));
            }
        }
        let parts: Vec<(&[f64], f64)> = snapshot
            .entries
            .iter()
            .map(|(w, p)| (&self.cache[p][..], *w))
            .collect();
        Ok(combined_series(self.n_assets, &self.target, &parts))
    }

    pub fn score(&mut self, snapshot: &PoolSnapshot, panel: &PanelTensor) -> Result<PoolScore> {
        let s = self.series(snapshot, panel)?;
        Ok(PoolScore {
            ic: mean_ic(&s),
            ir: information_ratio(&s),
        })
    }
}

/// Weighted programs, as written to `pool.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoolSnapshot {
    pub entries: Vec<(f64, RpnProgram)>,
}

impl PoolSnapshot {
    /// Combined signal `Σ w_k · normalize(f_k)` on every day of `panel`.
    pub fn signal(&self, panel: &PanelTensor) -> Result<FactorMatrix> {
        let (n, l) = (panel.n_assets(), panel.n_days());
        let mut z = FactorMatrix::filled(n, l, f64::NAN);
        for (w, program) in &self.entries {
            let raw = evaluate(program, panel)?;
            let norm = normalized_day_major(&raw, 0..l);
            for d in 0..l {
                for a in 0..n {
                    let v = norm[d * n + a];
                    if !v.is_nan() {
                        let cur = z.get(a, d);
                        z.set(a, d, if cur.is_nan() { w * v } else { cur + w * v });
                    }
                }
            }
        }
        Ok(z)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (w, p) in &self.entries {
            let _ = writeln!(out, "{w}\t{p}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| Error::Parse {
                line: i + 1,
                message: m.to_string(),
            };
            let (w, expr) = line.split_once('\t').ok_or_else(|| bad("expected `weight<TAB>expression`"))?;
            let w: f64 = w.trim().parse().map_err(|_| bad("bad weight"))?;
            if !w.is_finite() {
                return Err(bad("non-finite weight"));
            }
            entries.push((w, RpnProgram::from_infix(expr.trim())?));
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
