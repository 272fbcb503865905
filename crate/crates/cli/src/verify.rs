//! Proposition checks on small bandits and token MDPs.

use std::fmt;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use factorlab::bandit::{
    closed_form_variance_gap, dirac_vs_stochastic, exact_gradient, exact_variance, monte_carlo_report,
    reduction_threshold, transition, variance_bound, BanditSpec, Estimator, TokenMdp, MIN_MC_SAMPLES,
};
use factorlab::formula::StackState;
use factorlab::{Feature, Token, Vocabulary};

use crate::CliResult;

/// Relative tolerance on Monte-Carlo variances at 10⁶ samples; scaled by
/// `sqrt(10⁶ / n)` for other sample counts.
pub const VARIANCE_TOLERANCE: f64 = 0.02;
pub const DIRAC_SAMPLES: usize = 100_000;
pub const REPEATED_TRANSITIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub r1: f64,
    pub r2: f64,
    /// Single grid point; `None` runs 0.05, 0.10, ..., 0.95.
    pub p: Option<f64>,
    pub noise: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            r1: 1.0,
            r2: 0.6,
            p: None,
            noise: vec![0.1, 0.2, 0.4],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub lines: Vec<CheckLine>,
    pub warnings: Vec<String>,
    /// One row per grid point.
    pub csv: String,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.pass)
    }
}

pub fn grid(p: Option<f64>) -> Vec<f64> {
    match p {
        Some(p) => vec![p],
        None => (1..=19).map(|i| i as f64 / 20.0).collect(),
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Whether the greedy baseline is expected to lower the variance at `p`;
/// `None` exactly at the threshold, where both variances coincide.
pub fn expected_reduction(p: f64, r1: f64, r2: f64) -> Option<bool> {
    if r1 <= 2.0 * r2 {
        return Some(true);
    }
    let thr = reduction_threshold(r1, r2);
    if (p - thr).abs() <= 1e-12 {
        None
    } else {
        Some(p < thr)
    }
}

pub fn run_verify(o: &VerifyOptions) -> CliResult<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mc = o.samples >= MIN_MC_SAMPLES;
    let mut warnings = Vec::new();
    if !mc {
        warnings.push(format!(
            "{} samples is below {MIN_MC_SAMPLES}: standard errors exceed the tolerance, Monte-Carlo checks skipped",
            o.samples
        ));
    }
    let tol = VARIANCE_TOLERANCE * (1e6 / o.samples.max(1) as f64).sqrt();
    let mut lines = Vec::new();

    // Unbiasedness at a single point (uniform policy by default).
    let p1 = o.p.unwrap_or(0.5);
    let spec = BanditSpec::two_arm(o.r1, o.r2, p1);
    let exact = exact_gradient(&spec);
    if mc {
        let rep = monte_carlo_report(&spec, Estimator::Qfr, o.samples, &mut rng)?;
        let z: Vec<f64> = (0..exact.len())
            .map(|i| {
                let diff = (rep.mean[i] - exact[i]).abs();
                if rep.std_err[i] > 0.0 {
                    diff / rep.std_err[i]
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let worst = z.iter().cloned().fold(0.0, f64::max);
        lines.push(CheckLine {
            name: "Prop 1 (unbiased)".into(),
            pass: worst <= 3.0,
            detail: format!(
                "p={p1} exact={exact:?} mc={:?} max |error|/se={worst:.3} (limit 3)",
                rep.mean
            ),
        });
    } else {
        lines.push(CheckLine {
            name: "Prop 1 (unbiased)".into(),
            pass: true,
            detail: format!("p={p1} exact={exact:?}; Monte-Carlo check skipped"),
        });
    }

    // Dirac transitions versus jittered transitions.
    let mdp = TokenMdp::new(4, 3, &mut rng)?;
    let n_dirac = o.samples.min(DIRAC_SAMPLES);
    let mut dirac_fail = None;
    let mut dirac_detail = Vec::new();
    for &noise in &o.noise {
        let r = dirac_vs_stochastic(&mdp, noise, n_dirac.max(2), &mut rng);
        let exact_ok = r.exact_deterministic <= r.exact_stochastic;
        let mc_ok = !mc || r.var_deterministic <= r.var_stochastic;
        if (noise > 0.0 && !(exact_ok && mc_ok)) && dirac_fail.is_none() {
            dirac_fail = Some(noise);
        }
        dirac_detail.push(format!(
            "noise={noise}: det={:.5} sto={:.5}",
            r.var_deterministic, r.var_stochastic
        ));
    }
    let deterministic = repeated_transitions_identical(&mut rng);
    lines.push(CheckLine {
        name: "Prop 2 (Dirac transitions)".into(),
        pass: dirac_fail.is_none() && deterministic,
        detail: match dirac_fail {
            Some(n) => format!("variance ordering violated at noise={n}; {}", dirac_detail.join("; ")),
            None if !deterministic => "repeated transitions produced different successors".into(),
            None => format!(
                "{}; {REPEATED_TRANSITIONS} repeated transitions identical",
                dirac_detail.join("; ")
            ),
        },
    });

    let mut csv = String::from(
        "r1,r2,p,exact_var_reinforce,exact_var_qfr,exact_gap,closed_form_gap,mc_var_reinforce,mc_var_qfr,bound\n",
    );
    let mut bound_fail = None;
    let mut reduction_fail: Option<String> = None;
    let mut max_rel = 0.0f64;
    let mut regimes = Vec::new();
    for p in grid(o.p) {
        let spec = BanditSpec::two_arm(o.r1, o.r2, p);
        let v_re = exact_variance(&spec, Estimator::Reinforce);
        let v_qfr = exact_variance(&spec, Estimator::Qfr);
        let gap = v_qfr - v_re;
        let closed = closed_form_variance_gap(p, o.r1, o.r2);
        let bound = variance_bound(spec.max_abs_reward(), 1, 1);
        let (mc_re, mc_qfr) = if mc {
            (
                monte_carlo_report(&spec, Estimator::Reinforce, o.samples, &mut rng)?.variance,
                monte_carlo_report(&spec, Estimator::Qfr, o.samples, &mut rng)?.variance,
            )
        } else {
            (f64::NAN, f64::NAN)
        };
        let _ = writeln!(csv, "{},{},{p},{v_re},{v_qfr},{gap},{closed},{mc_re},{mc_qfr},{bound}", o.r1, o.r2);

        if bound_fail.is_none() && (v_qfr > bound || (mc && mc_qfr > bound)) {
            bound_fail = Some(p);
        }

        let scale = v_re.abs().max(v_qfr.abs()).max(1.0);
        let closed_ok = (gap - closed).abs() <= 1e-12 * scale;
        let expected = expected_reduction(p, o.r1, o.r2);
        let sign_ok = match expected {
            Some(true) => gap < 0.0,
            Some(false) => gap > 0.0,
            None => gap.abs() <= 1e-12 * scale,
        };
        regimes.push(match expected {
            Some(true) => "reduction",
            Some(false) => "expected non-reduction",
            None => "equal at threshold",
        });
        let rel = if mc { rel_err(mc_re, v_re).max(rel_err(mc_qfr, v_qfr)) } else { 0.0 };
        max_rel = max_rel.max(rel);
        if reduction_fail.is_none() {
            if !closed_ok {
                reduction_fail = Some(format!("p={p}: exact gap {gap} differs from closed form {closed}"));
            } else if !sign_ok {
                reduction_fail = Some(format!("p={p}: gap {gap} contradicts the reduction condition"));
            } else if rel > tol {
                reduction_fail = Some(format!(
                    "p={p}: Monte-Carlo variance off by {:.2}% (tolerance {:.2}%)",
                    rel * 100.0,
                    tol * 100.0
                ));
            }
        }
    }

    lines.push(CheckLine {
        name: "Prop 3 (variance bound)".into(),
        pass: bound_fail.is_none(),
        detail: match bound_fail {
            Some(p) => format!("variance exceeds 8*r_max^2 at p={p}"),
            None => format!(
                "Var <= {} at every grid point",
                variance_bound(o.r1.abs().max(o.r2.abs()), 1, 1)
            ),
        },
    });

    regimes.dedup();
    let regime = if o.r1 <= 2.0 * o.r2 {
        format!("r1 <= 2 r2, {}", regimes.join(", "))
    } else {
        format!("threshold p={}, {}", reduction_threshold(o.r1, o.r2), regimes.join(", "))
    };
    lines.push(CheckLine {
        name: "Prop 4 (variance reduction)".into(),
        pass: reduction_fail.is_none(),
        detail: match reduction_fail {
            Some(d) => d,
            None if mc => format!("{regime}; max Monte-Carlo relative error {:.3}%", max_rel * 100.0),
            None => format!("{regime}; Monte-Carlo comparison skipped"),
        },
    });

    Ok(VerifyReport { lines, warnings, csv })
}

/// Applies the same transition to the same state repeatedly, both in the
/// token MDP and in the formula grammar, and checks every successor matches.
pub fn repeated_transitions_identical(rng: &mut ChaCha8Rng) -> bool {
    let state = vec![2, 0, 3];
    let first = transition(&state, 1, 0.0, rng);
    let mdp_ok = (0..REPEATED_TRANSITIONS).all(|_| transition(&state, 1, 0.0, rng) == first);

    let vocab = Vocabulary::default();
    let prefix = [Token::Begin, Token::Feature(Feature::Close)];
    let Some(state) = StackState::from_prefix(&prefix) else {
        return false;
    };
    let first: Vec<Option<StackState>> = vocab.tokens().iter().map(|t| state.successor(t)).collect();
    let grammar_ok = (0..REPEATED_TRANSITIONS)
        .all(|i| state.successor(&vocab.token(i % vocab.len())) == first[i % vocab.len()]);
    mdp_ok && grammar_ok
}
