//! Exact and Monte-Carlo checks of policy-gradient estimators on softmax
//! bandits and on a tiny enumerable token MDP.

use rand::Rng;

use crate::error::{Error, Result};
use crate::trainer::{estimate_gradient, ScorePolicy};

/// Tabular softmax policy over arms with fixed per-arm rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditSpec {
    pub rewards: Vec<f64>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `r(a) ∇ log π(a)`.
    Reinforce,
    /// `(r(a) − r(ā)) ∇ log π(a)` with `ā` the greedy arm.
    Qfr,
}

impl BanditSpec {
    pub fn new(rewards: Vec<f64>, logits: Vec<f64>) -> Result<Self> {
        if rewards.len() != logits.len() || !(2..=8).contains(&rewards.len()) {
            return Err(Error::Config("bandits need 2 to 8 arms with one logit each".into()));
        }
        Ok(Self { rewards, logits })
    }

    /// Two arms with `π(a₁) = p`.
    pub fn two_arm(r1: f64, r2: f64, p: f64) -> Self {
        Self {
            rewards: vec![r1, r2],
            logits: vec![(p / (1.0 - p)).ln(), 0.0],
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    /// Most probable arm, the lowest index on ties.
    pub fn greedy_arm(&self) -> usize {
        let p = self.probs();
        (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b })
    }

    /// `∇θ log π(a) = e_a − π`.
    pub fn score(&self, arm: usize) -> Vec<f64> {
        let mut s: Vec<f64> = self.probs().iter().map(|p| -p).collect();
        s[arm] += 1.0;
        s
    }

    pub fn max_abs_reward(&self) -> f64 {
        self.rewards.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    fn single_sample(&self, estimator: Estimator, arm: usize) -> Vec<f64> {
        let b = match estimator {
            Estimator::Reinforce => 0.0,
            Estimator::Qfr => self.rewards[self.greedy_arm()],
        };
        let c = self.rewards[arm] - b;
        self.score(arm).into_iter().map(|s| c * s).collect()
    }
}

impl ScorePolicy for BanditSpec {
    type Sample = usize;

    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let p = self.probs();
        for (i, x) in p.iter().enumerate() {
            acc += x;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    }

    fn greedy(&self) -> usize {
        self.greedy_arm()
    }

    fn accumulate_score(&self, arm: &usize, coeff: f64, grad: &mut [f64]) -> Result<()> {
        for (g, s) in grad.iter_mut().zip(self.score(*arm)) {
            *g += coeff * s;
        }
        Ok(())
    }
}

/// `∇θ E[r] = Σ_a π(a) r(a) ∇ log π(a)` by enumeration.
pub fn exact_gradient(spec: &BanditSpec) -> Vec<f64> {
    let p = spec.probs();
    let mut g = vec![0.0; p.len()];
    for (a, pa) in p.iter().enumerate() {
        for (gi, s) in g.iter_mut().zip(spec.score(a)) {
            *gi += pa * spec.rewards[a] * s;
        }
    }
    g
}

/// Total variance (trace of the covariance) of a single-sample estimator,
/// by enumeration over arms.
pub fn exact_variance(spec: &BanditSpec, estimator: Estimator) -> f64 {
    let p = spec.probs();
    let k = p.len();
    let mut mean = vec![0.0; k];
    let mut second = 0.0;
    for (a, pa) in p.iter().enumerate() {
        let g = spec.single_sample(estimator, a);
        for (m, x) in mean.iter_mut().zip(&g) {
            *m += pa * x;
        }
        second += pa * g.iter().map(|x| x * x).sum::<f64>();
    }
    second - mean.iter().map(|m| m * m).sum::<f64>()
}

/// `Var[g̃] − Var[ĝ] = 2p(1−p)·b·(b − 2(1−p)r₁ − 2p·r₂)` for two arms with
/// `p = π(a₁)` and `b` the greedy arm's reward (ties go to `a₁`).
pub fn closed_form_variance_gap(p: f64, r1: f64, r2: f64) -> f64 {
    let b = if p >= 0.5 { r1 } else { r2 };
    2.0 * p * (1.0 - p) * b * (b - 2.0 * (1.0 - p) * r1 - 2.0 * p * r2)
}

/// Probability `π(a₁)` above which the greedy baseline stops reducing
/// variance, when `r₁ > 2r₂`.
pub fn reduction_threshold(r1: f64, r2: f64) -> f64 {
    0.5 + 0.5 * r2 / (r1 - r2)
}

/// Bound on the total variance of the N-sample estimator over horizon T.
pub fn variance_bound(r_max: f64, horizon: usize, n: usize) -> f64 {
    8.0 * r_max * r_max * (horizon * horizon) as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub mean: Vec<f64>,
    /// Sample total variance of a single-sample estimate.
    pub variance: f64,
    /// Standard error of each mean coordinate.
    pub std_err: Vec<f64>,
    pub n_samples: usize,
}

pub const MIN_MC_SAMPLES: usize = 1000;

/// Sample statistics of single-sample estimates drawn with the trainer's
/// gradient estimator.
pub fn monte_carlo_report(
    spec: &BanditSpec,
    estimator: Estimator,
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<McReport> {
    if n_samples < 2 {
        return Err(Error::Config("need at least 2 samples".into()));
    }
    let k = spec.logits.len();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let use_baseline = estimator == Estimator::Qfr;
    for _ in 0..n_samples {
        let est = estimate_gradient(spec, 1, use_baseline, rng, |a: &usize| Ok(spec.rewards[*a]))?;
        for i in 0..k {
            sum[i] += est.gradient[i];
            sum_sq[i] += est.gradient[i] * est.gradient[i];
        }
    }
    let n = n_samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = (0..k)
        .map(|i| ((sum_sq[i] - n * mean[i] * mean[i]) / (n - 1.0)).max(0.0))
        .collect();
    Ok(McReport {
        std_err: var.iter().map(|v| (v / n).sqrt()).collect(),
        variance: var.iter().sum(),
        mean,
        n_samples,
    })
}

/// Token MDP with `n_tokens` tokens and horizon `steps`. The policy picks
/// each token from a softmax conditioned on the step and its previous
/// choice; the state is the sequence of appended token values, and the
/// trajectory statistic is their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMdp {
    pub n_tokens: usize,
    pub steps: usize,
    /// `logits[(step * (n_tokens + 1) + prev) * n_tokens + a]`, where
    /// `prev = n_tokens` marks the start.
    pub logits: Vec<f64>,
}

impl TokenMdp {
    pub fn new(n_tokens: usize, steps: usize, rng: &mut impl Rng) -> Result<Self> {
        if !(2..=5).contains(&n_tokens) || !(1..=3).contains(&steps) {
            return Err(Error::Config("token MDP is limited to 5 tokens and 3 steps".into()));
        }
        let logits = (0..steps * (n_tokens + 1) * n_tokens)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Ok(Self {
            n_tokens,
            steps,
            logits,
        })
    }

    fn probs(&self, step: usize, prev: usize) -> Vec<f64> {
        let k = self.n_tokens;
        let row = &self.logits[(step * (k + 1) + prev) * k..][..k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }
}

/// Appends `action` to `state`. With probability `noise` the appended value
/// is jittered by ±1 with equal odds, which keeps its mean unchanged.
pub fn transition(state: &[i64], action: usize, noise: f64, rng: &mut impl Rng) -> Vec<i64> {
    let mut next = state.to_vec();
    let mut v = action as i64;
    if noise > 0.0 && rng.random::<f64>() < noise {
        v += if rng.random::<bool>() { 1 } else { -1 };
    }
    next.push(v);
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiracReport {
    pub var_deterministic: f64,
    pub var_stochastic: f64,
    pub exact_deterministic: f64,
    pub exact_stochastic: f64,
}

fn sample_statistic(mdp: &TokenMdp, noise: f64, rng: &mut impl Rng) -> f64 {
    let mut state = Vec::with_capacity(mdp.steps);
    let mut prev = mdp.n_tokens;
    for t in 0..mdp.steps {
        let p = mdp.probs(t, prev);
        let u: f64 = rng.random();
        let mut a = p.len() - 1;
        let mut acc = 0.0;
        for (i, x) in p.iter().enumerate() {
            acc += x;
            if u < acc {
                a = i;
                break;
            }
        }
        state = transition(&state, a, noise, rng);
        prev = a;
    }
    state.iter().sum::<i64>() as f64
}

/// Exact variance of the statistic by enumerating actions and jitters.
fn exact_statistic_variance(mdp: &TokenMdp, noise: f64) -> f64 {
    fn walk(mdp: &TokenMdp, noise: f64, t: usize, prev: usize, prob: f64, sum: f64, acc: &mut (f64, f64)) {
        if t == mdp.steps {
            acc.0 += prob * sum;
            acc.1 += prob * sum * sum;
            return;
        }
        for (a, pa) in mdp.probs(t, prev).into_iter().enumerate() {
            let v = a as f64;
            let outcomes = [(1.0 - noise, v), (noise / 2.0, v + 1.0), (noise / 2.0, v - 1.0)];
            for (po, val) in outcomes {
                if po > 0.0 {
                    walk(mdp, noise, t + 1, a, prob * pa * po, sum + val, acc);
                }
            }
        }
    }
    let mut acc = (0.0, 0.0);
    walk(mdp, noise, 0, mdp.n_tokens, 1.0, 0.0, &mut acc);
    acc.1 - acc.0 * acc.0
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Variance of the trajectory statistic with exact (Dirac) transitions
/// versus transitions jittered with probability `noise`. Both processes
/// share the action stream: each uses a clone of `rng`.
pub fn dirac_vs_stochastic(mdp: &TokenMdp, noise: f64, n_samples: usize, rng: &mut (impl Rng + Clone)) -> DiracReport {
    let mut det_rng = rng.clone();
    let det: Vec<f64> = (0..n_samples).map(|_| sample_statistic(mdp, 0.0, &mut det_rng)).collect();
    let sto: Vec<f64> = (0..n_samples).map(|_| sample_statistic(mdp, noise, rng)).collect();
    DiracReport {
        var_deterministic: sample_variance(&det),
        var_stochastic: sample_variance(&sto),
        exact_deterministic: exact_statistic_variance(mdp, 0.0),
        exact_stochastic: exact_statistic_variance(mdp, noise),
    }
}
