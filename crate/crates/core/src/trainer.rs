//! Policy-gradient factor mining: paired sampled / greedy rollouts,
//! IR-shaped terminal rewards, greedy-baseline score-function gradients and
//! pool updates.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formula::{RpnProgram, Vocabulary};
use crate::panel::{PanelTensor, TargetPanel};
use crate::policy::{Policy, PolicyConfig, Rollout};
use crate::pool::{Candidate, FactorPool, PoolConfig, PoolEvaluator, PoolScore};

/// IR threshold schedule: `clip((t − α)·η, 0, δ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapingSchedule {
    pub lambda: f64,
    pub alpha: f64,
    pub eta: f64,
    pub delta: f64,
    pub t: u64,
}

impl Default for ShapingSchedule {
    fn default() -> Self {
        Self {
            lambda: 0.02,
            alpha: 9e4,
            eta: 2.65e-6,
            delta: 0.3,
            t: 0,
        }
    }
}

impl ShapingSchedule {
    pub fn threshold_at(&self, t: u64) -> f64 {
        ((t as f64 - self.alpha) * self.eta).clamp(0.0, self.delta)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold_at(self.t)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda, self.alpha, self.eta, self.delta]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("shaping parameters must be finite and non-negative".into()))
        }
    }
}

/// `ĪC − λ·1{ĪR ≤ threshold}`. A missing ĪC yields `floor`; a missing ĪR
/// always fails the threshold test.
pub fn shaped_reward(ic: f64, ir: f64, schedule: &ShapingSchedule, floor: f64) -> f64 {
    if ic.is_nan() {
        return floor;
    }
    let passes = !ir.is_nan() && ir > schedule.threshold();
    if passes {
        ic
    } else {
        ic - schedule.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Gradient-ascent optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        Self {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - self.beta1.powi(self.t);
                let c2 = 1.0 - self.beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                    self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                    params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

/// A stochastic policy with a greedy mode and score-function gradients.
pub trait ScorePolicy {
    type Sample;

    fn num_params(&self) -> usize;
    fn sample<R: Rng>(&self, rng: &mut R) -> Self::Sample;
    fn greedy(&self) -> Self::Sample;
    /// `grad += coeff · ∇θ log p(sample)`.
    fn accumulate_score(&self, sample: &Self::Sample, coeff: f64, grad: &mut [f64]) -> Result<()>;
}

impl ScorePolicy for Policy {
    type Sample = Rollout;

    fn num_params(&self) -> usize {
        Policy::num_params(self)
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Rollout {
        self.sample_rollout(rng)
    }

    fn greedy(&self) -> Rollout {
        self.greedy_rollout()
    }

    fn accumulate_score(&self, sample: &Rollout, coeff: f64, grad: &mut [f64]) -> Result<()> {
        self.accumulate_score_gradient(sample, coeff, grad)
    }
}

/// One batch gradient estimate.
#[derive(Debug, Clone)]
pub struct GradientEstimate<S> {
    /// `(1/N) Σ_i (r_i − b) ∇ log p(τ_i)`.
    pub gradient: Vec<f64>,
    pub samples: Vec<S>,
    pub rewards: Vec<f64>,
    /// Greedy-rollout reward, `None` for plain REINFORCE.
    pub baseline: Option<f64>,
    /// Trace of the per-sample covariance divided by N: an estimate of the
    /// total variance of `gradient`. `NaN` for N < 2.
    pub variance: f64,
}

/// Samples `n` trajectories and forms the score-function gradient, with the
/// greedy trajectory's reward as baseline when `use_baseline` is set.
pub fn estimate_gradient<P, R, F>(
    policy: &P,
    n: usize,
    use_baseline: bool,
    rng: &mut R,
    mut reward: F,
) -> Result<GradientEstimate<P::Sample>>
where
    P: ScorePolicy,
    R: Rng,
    F: FnMut(&P::Sample) -> Result<f64>,
{
    assert!(n >= 1, "batch size must be positive");
    let baseline = if use_baseline {
        Some(reward(&policy.greedy())?)
    } else {
        None
    };
    let b = baseline.unwrap_or(0.0);
    let k = policy.num_params();
    let mut samples = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let s = policy.sample(rng);
        rewards.push(reward(&s)?);
        samples.push(s);
    }
    let mut per_sample = vec![0.0; n * k];
    let mut gradient = vec![0.0; k];
    for (i, (s, r)) in samples.iter().zip(&rewards).enumerate() {
        let g = &mut per_sample[i * k..(i + 1) * k];
        policy.accumulate_score(s, r - b, g)?;
        for (acc, x) in gradient.iter_mut().zip(g.iter()) {
            *acc += x;
        }
    }
    for x in &mut gradient {
        *x /= n as f64;
    }
    let variance = if n < 2 {
        f64::NAN
    } else {
        let ss: f64 = per_sample
            .chunks(k)
            .map(|g| g.iter().zip(&gradient).map(|(a, m)| (a - m).powi(2)).sum::<f64>())
            .sum();
        ss / (n - 1) as f64 / n as f64
    };
    Ok(GradientEstimate {
        gradient,
        samples,
        rewards,
        baseline,
        variance,
    })
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub total_steps: u64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub reward_floor: f64,
    pub use_baseline: bool,
    pub max_len: usize,
    /// Stop when validation ĪC has not improved for this many steps.
    pub patience: Option<u64>,
    pub pool: PoolConfig,
    pub policy: PolicyConfig,
    pub schedule: ShapingSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            lr: 1e-3,
            total_steps: 20_000,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            reward_floor: -1.0,
            use_baseline: true,
            max_len: 20,
            patience: Some(2000),
            pool: PoolConfig::default(),
            policy: PolicyConfig::default(),
            schedule: ShapingSchedule::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.max_len < 3 {
            return Err(Error::Config("max_len must be at least 3".into()));
        }
        self.schedule.validate()
    }
}

/// Per-step diagnostics, one row of `history.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub mean_reward: f64,
    /// `NaN` when the baseline is disabled.
    pub baseline: f64,
    pub pool_ic: f64,
    pub pool_ir: f64,
    pub grad_norm: f64,
    pub threshold: f64,
    pub grad_variance: f64,
    pub max_abs_reward: f64,
    pub valid_ic: f64,
    pub pool_size: usize,
}

/// Train and validation subsets. Validation is optional.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: (PanelTensor, TargetPanel),
    pub valid: Option<(PanelTensor, TargetPanel)>,
}

const CANDIDATE_CACHE: usize = 512;

/// Pool-based reward with caches of prepared candidates and of rewards
/// for the current pool version.
struct Scorer {
    pool: FactorPool,
    panel: PanelTensor,
    floor: f64,
    candidates: HashMap<RpnProgram, Option<Candidate>>,
    rewards: HashMap<RpnProgram, f64>,
    rewards_version: u64,
}

impl Scorer {
    fn candidate(&mut self, program: &RpnProgram) -> Result<Option<Candidate>> {
        if let Some(c) = self.candidates.get(program) {
            return Ok(c.clone());
        }
        let c = self.pool.prepare(program, &self.panel)?;
        if self.candidates.len() >= CANDIDATE_CACHE {
            self.candidates.clear();
        }
        self.candidates.insert(program.clone(), c.clone());
        Ok(c)
    }

    fn reward(&mut self, program: &RpnProgram, schedule: &ShapingSchedule) -> Result<f64> {
        if self.rewards_version != self.pool.version() {
            self.rewards.clear();
            self.rewards_version = self.pool.version();
        }
        if let Some(r) = self.rewards.get(program) {
            return Ok(*r);
        }
        let score = match self.candidate(program)? {
            Some(c) => self.pool.tentative(&c),
            None => PoolScore {
                ic: f64::NAN,
                ir: f64::NAN,
            },
        };
        let r = shaped_reward(score.ic, score.ir, schedule, self.floor);
        self.rewards.insert(program.clone(), r);
        Ok(r)
    }
}

pub struct Trainer {
    config: TrainConfig,
    valid: Option<(PanelTensor, TargetPanel)>,
    policy: Policy,
    scorer: Scorer,
    optimizer: Optimizer,
    schedule: ShapingSchedule,
    rng: ChaCha8Rng,
    valid_eval: Option<PoolEvaluator>,
    valid_version: Option<u64>,
    valid_ic: f64,
    best_valid: f64,
    best_step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig, data: TrainData) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = Policy::new(Vocabulary::default(), config.max_len, config.policy, &mut rng);
        let pool = FactorPool::new(&data.train.0, &data.train.1, config.pool)?;
        let optimizer = Optimizer::new(config.optimizer, config.lr, policy.num_params());
        let valid_eval = match &data.valid {
            Some((p, t)) => Some(PoolEvaluator::new(p, t)?),
            None => None,
        };
        Ok(Self {
            schedule: config.schedule,
            scorer: Scorer {
                pool,
                panel: data.train.0,
                floor: config.reward_floor,
                candidates: HashMap::new(),
                rewards: HashMap::new(),
                rewards_version: 0,
            },
            valid: data.valid,
            config,
            policy,
            optimizer,
            rng,
            valid_eval,
            valid_version: None,
            valid_ic: f64::NAN,
            best_valid: f64::NEG_INFINITY,
            best_step: 0,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Policy {
        &mut self.policy
    }

    pub fn pool(&self) -> &FactorPool {
        &self.scorer.pool
    }

    pub fn schedule(&self) -> &ShapingSchedule {
        &self.schedule
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Validation ĪC of the current pool (`NaN` without validation data).
    pub fn valid_ic(&mut self) -> Result<f64> {
        let (Some(eval), Some((panel, _))) = (self.valid_eval.as_mut(), self.valid.as_ref()) else {
            return Ok(f64::NAN);
        };
        let pool = &self.scorer.pool;
        if self.valid_version != Some(pool.version()) {
            self.valid_ic = if pool.is_empty() {
                f64::NAN
            } else {
                eval.score(&pool.snapshot(), panel)?.ic
            };
            self.valid_version = Some(pool.version());
        }
        Ok(self.valid_ic)
    }

    /// Shaped reward of adding `program` to the current pool.
    pub fn reward(&mut self, program: &RpnProgram) -> Result<f64> {
        self.scorer.reward(program, &self.schedule)
    }

    pub fn step(&mut self) -> Result<StepReport> {
        let Self {
            policy,
            scorer,
            schedule,
            rng,
            config,
            ..
        } = self;
        let est = estimate_gradient(policy, config.batch_size, config.use_baseline, rng, |r: &Rollout| {
            scorer.reward(&r.program, schedule)
        })?;
        if est.gradient.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                context: "policy gradient",
                step: self.schedule.t as usize,
            });
        }
        self.optimizer.ascend(self.policy.params_mut(), &est.gradient);

        let best = est
            .rewards
            .iter()
            .enumerate()
            .fold(0, |b, (i, r)| if *r > est.rewards[b] { i } else { b });
        let program = est.samples[best].program.clone();
        if let Some(c) = self.scorer.candidate(&program)? {
            self.scorer.pool.commit(c);
        }
        self.schedule.t += 1;

        let score = self.scorer.pool.score();
        let valid_ic = self.valid_ic()?;
        let report = StepReport {
            step: self.schedule.t,
            mean_reward: est.rewards.iter().sum::<f64>() / est.rewards.len() as f64,
            baseline: est.baseline.unwrap_or(f64::NAN),
            pool_ic: score.ic,
            pool_ir: score.ir,
            grad_norm: est.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
            threshold: self.schedule.threshold(),
            grad_variance: est.variance,
            max_abs_reward: est
                .rewards
                .iter()
                .chain(est.baseline.iter())
                .fold(0.0, |m, r| m.max(r.abs())),
            valid_ic,
            pool_size: self.scorer.pool.len(),
        };
        if valid_ic > self.best_valid {
            self.best_valid = valid_ic;
            self.best_step = self.schedule.t;
        }
        Ok(report)
    }

    /// Runs up to `total_steps` steps, stopping early once validation ĪC
    /// has not improved for `patience` steps. `on_step` sees every report.
    pub fn train<F>(&mut self, mut on_step: F) -> Result<Vec<StepReport>>
    where
        F: FnMut(&StepReport, &Trainer) -> Result<()>,
    {
        let mut history = Vec::new();
        while self.schedule.t < self.config.total_steps {
            let report = self.step()?;
            on_step(&report, self)?;
            history.push(report);
            if let Some(p) = self.config.patience {
                if self.valid.is_some() && self.schedule.t - self.best_step >= p {
                    break;
                }
            }
        }
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_regimes() {
        let s = ShapingSchedule::default();
        assert_eq!(s.threshold_at(0), 0.0);
        assert_eq!(s.threshold_at(90_000), 0.0);
        assert!((s.threshold_at(200_000) - 0.2915).abs() < 1e-12);
        assert_eq!(s.threshold_at(10_000_000), 0.3);
    }

    #[test]
    fn shaped_reward_cases() {
        let s = ShapingSchedule::default();
        assert_eq!(shaped_reward(0.05, 0.1, &s, -1.0), 0.05);
        assert_eq!(shaped_reward(0.05, f64::NAN, &s, -1.0), 0.05 - 0.02);
        assert_eq!(shaped_reward(f64::NAN, 0.5, &s, -1.0), -1.0);
        let late = ShapingSchedule { t: 1_000_000, ..s };
        assert_eq!(shaped_reward(0.05, 0.2, &late, -1.0), 0.05 - 0.02);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3, 2);
        let mut p = vec![0.0, 0.0];
        opt.ascend(&mut p, &[2.0, -0.5]);
        assert!((p[0] - 1e-3).abs() < 1e-9 && (p[1] + 1e-3).abs() < 1e-9);
    }
}
