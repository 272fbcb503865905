use factorlab::bandit::{
    closed_form_variance_gap, dirac_vs_stochastic, exact_gradient, exact_variance, monte_carlo_report,
    reduction_threshold, variance_bound, BanditSpec, Estimator, TokenMdp,
};
use factorlab::formula::StackState;
use factorlab::policy::{Policy, PolicyConfig, Rollout};
use factorlab::trainer::estimate_gradient;
use factorlab::{Token, Vocabulary};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

#[test]
fn hand_enumerated_two_arm_gradient() {
    let g = exact_gradient(&BanditSpec::new(vec![1.0, 0.6], vec![0.0, 0.0]).unwrap());
    assert!((g[0] - 0.1).abs() < 1e-15 && (g[1] + 0.1).abs() < 1e-15);
    let flat = exact_gradient(&BanditSpec::new(vec![0.7; 4], vec![0.3, -1.0, 2.0, 0.0]).unwrap());
    assert!(flat.iter().all(|x| x.abs() < 1e-15));
}

#[test]
fn monte_carlo_is_unbiased_for_both_estimators() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for spec in [
        BanditSpec::two_arm(1.0, 0.6, 0.5),
        BanditSpec::two_arm(3.0, 1.0, 0.8),
        BanditSpec::new(vec![0.2, 1.5, 0.9], vec![0.4, -0.3, 0.1]).unwrap(),
    ] {
        let exact = exact_gradient(&spec);
        for est in [Estimator::Reinforce, Estimator::Qfr] {
            let rep = monte_carlo_report(&spec, est, 200_000, &mut rng).unwrap();
            for i in 0..exact.len() {
                assert!((rep.mean[i] - exact[i]).abs() <= 3.0 * rep.std_err[i], "{est:?} {spec:?} coord {i}");
            }
            let v = exact_variance(&spec, est);
            assert!((rep.variance - v).abs() <= 0.02 * v * (1e6f64 / 2e5).sqrt());
        }
    }
}

#[test]
fn reduction_regimes() {
    for p in grid() {
        let gap = exact_variance(&BanditSpec::two_arm(1.0, 0.6, p), Estimator::Qfr)
            - exact_variance(&BanditSpec::two_arm(1.0, 0.6, p), Estimator::Reinforce);
        assert!(gap < 0.0, "p {p}: {gap}");
    }
    assert_eq!(reduction_threshold(3.0, 1.0), 0.75);
    for p in grid() {
        let spec = BanditSpec::two_arm(3.0, 1.0, p);
        let gap = exact_variance(&spec, Estimator::Qfr) - exact_variance(&spec, Estimator::Reinforce);
        if p < 0.75 - 1e-9 {
            assert!(gap < 0.0, "p {p}: {gap}");
        } else if p > 0.75 + 1e-9 {
            assert!(gap > 0.0, "p {p}: {gap}");
        } else {
            assert!(gap.abs() < 1e-12);
        }
    }
    // Below one half the greedy arm is a₂ and the baseline always helps.
    let spec = BanditSpec::two_arm(10.0, 1.0, 0.3);
    assert!(exact_variance(&spec, Estimator::Qfr) < exact_variance(&spec, Estimator::Reinforce));
}

#[test]
fn noise_grid_widens_the_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mdp = TokenMdp::new(4, 3, &mut rng).unwrap();
    let mut last_exact = -1.0;
    let mut last_mc = f64::NEG_INFINITY;
    for noise in [0.0, 0.1, 0.2, 0.4] {
        let r = dirac_vs_stochastic(&mdp, noise, 100_000, &mut ChaCha8Rng::seed_from_u64(11));
        let exact_gap = r.exact_stochastic - r.exact_deterministic;
        let mc_gap = r.var_stochastic - r.var_deterministic;
        if noise == 0.0 {
            assert_eq!(r.var_deterministic, r.var_stochastic);
            assert!(exact_gap.abs() < 1e-12);
        } else {
            assert!(r.var_deterministic <= r.var_stochastic);
            assert!((exact_gap - 3.0 * noise).abs() < 1e-9);
        }
        assert!(exact_gap > last_exact && mc_gap > last_mc);
        last_exact = exact_gap;
        last_mc = mc_gap;
    }
}

proptest! {
    #[test]
    fn closed_form_gap_matches_enumeration(p in 0.01..0.99f64, r2 in 0.01..5.0f64, extra in 0.01..5.0f64) {
        let r1 = r2 + extra;
        let spec = BanditSpec::two_arm(r1, r2, p);
        let gap = exact_variance(&spec, Estimator::Qfr) - exact_variance(&spec, Estimator::Reinforce);
        let closed = closed_form_variance_gap(spec.probs()[0], r1, r2);
        prop_assert!((gap - closed).abs() <= 1e-12 * (1.0 + r1 * r1), "{gap} vs {closed}");
    }

    #[test]
    fn bandit_variance_within_bound(
        arms in prop::collection::vec((-2.0..2.0f64, -3.0..3.0f64), 2..=8),
    ) {
        let (rewards, logits): (Vec<f64>, Vec<f64>) = arms.into_iter().unzip();
        let spec = BanditSpec::new(rewards, logits).unwrap();
        let g = exact_gradient(&spec);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
        let bound = variance_bound(spec.max_abs_reward(), 1, 1);
        for est in [Estimator::Reinforce, Estimator::Qfr] {
            prop_assert!(exact_variance(&spec, est) <= bound + 1e-12);
        }
    }
}

/// Every complete program of a tiny grammar with its probability.
fn enumerate(policy: &Policy) -> Vec<(Vec<usize>, f64)> {
    let vocab = policy.vocab();
    let grammar = policy.grammar();
    let mut out = Vec::new();
    let mut stack = vec![vec![Vocabulary::BEGIN]];
    while let Some(ids) = stack.pop() {
        let tokens: Vec<Token> = ids.iter().map(|&i| vocab.token(i)).collect();
        let state = StackState::from_prefix(&tokens).unwrap();
        let mask = grammar.legal_actions(vocab, &state, grammar.budget(&state));
        for (id, legal) in mask.iter().enumerate() {
            if !legal {
                continue;
            }
            let mut next = ids.clone();
            next.push(id);
            if id == Vocabulary::SEP {
                let lp = policy.sequence_log_prob(&next).unwrap();
                out.push((next, lp.exp()));
            } else {
                stack.push(next);
            }
        }
    }
    out
}

fn program_reward(ids: &[usize]) -> f64 {
    ids.iter().enumerate().map(|(i, id)| ((i + 1) * (id + 3)) % 7).sum::<usize>() as f64 / 7.0 - 1.0
}

#[test]
fn grammar_gradient_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let config = PolicyConfig {
        embed: 4,
        hidden: 6,
        init_scale: 0.7,
    };
    let policy = Policy::new(Vocabulary::default(), 5, config, &mut rng);
    let programs = enumerate(&policy);
    assert!(programs.len() > 100);
    assert!((programs.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(programs.iter().all(|(ids, _)| ids.len() <= 5));

    let k = policy.num_params();
    let mut exact = vec![0.0; k];
    for (ids, p) in &programs {
        policy.accumulate_ids(ids, p * program_reward(ids), &mut exact).unwrap();
    }

    let dirs: Vec<Vec<f64>> = (0..4).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let proj = |g: &[f64], d: &[f64]| g.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let reward = |r: &Rollout| Ok(program_reward(&r.ids));
    for use_baseline in [false, true] {
        let n = 40_000;
        let mut sums = vec![(0.0, 0.0); dirs.len()];
        let mut baselines = Vec::new();
        for _ in 0..n {
            let est = estimate_gradient(&policy, 1, use_baseline, &mut rng, reward).unwrap();
            baselines.push(est.baseline);
            for (s, d) in sums.iter_mut().zip(&dirs) {
                let v = proj(&est.gradient, d);
                s.0 += v;
                s.1 += v * v;
            }
        }
        baselines.dedup();
        assert_eq!(baselines.len(), 1, "greedy baseline must not depend on the samples");
        let nf = n as f64;
        for (s, d) in sums.iter().zip(&dirs) {
            let mean = s.0 / nf;
            let se = ((s.1 / nf - mean * mean) / (nf - 1.0)).sqrt();
            let want = proj(&exact, d);
            assert!((mean - want).abs() <= 3.0 * se, "baseline {use_baseline}: {mean} vs {want} (se {se})");
        }
    }
}
