use factorlab::panel::{split, synth_market, SplitSpec};
use factorlab::policy::{Policy, PolicyConfig};
use factorlab::trainer::{
    estimate_gradient, shaped_reward, ShapingSchedule, TrainConfig, TrainData, Trainer,
};
use factorlab::{RpnProgram, Vocabulary};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn data(seed: u64) -> TrainData {
    let signal = RpnProgram::from_infix("Delta(close, 10d)").unwrap();
    let (panel, target) = synth_market(20, 200, &signal, 0.9, seed).unwrap();
    let spec = SplitSpec::by_fractions(panel.dates(), 0.6, 0.2).unwrap();
    let [train, valid, _] = split(&panel, &target, &spec, 20).unwrap();
    TrainData {
        train,
        valid: Some(valid),
    }
}

fn config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        total_steps: steps,
        max_len: 10,
        patience: None,
        policy: PolicyConfig {
            embed: 8,
            hidden: 12,
            ..PolicyConfig::default()
        },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_leave_everything_untouched() {
    let cfg = config(0);
    let mut t = Trainer::new(cfg.clone(), data(1)).unwrap();
    assert!(t.train(|_, _| Ok(())).unwrap().is_empty());
    assert!(t.pool().is_empty());
    let fresh = Policy::new(
        Vocabulary::default(),
        cfg.max_len,
        cfg.policy,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed),
    );
    assert_eq!(t.policy().params(), fresh.params());
    assert!(t.valid_ic().unwrap().is_nan());
}

#[test]
fn fixed_seed_reproduces_history() {
    let run = || {
        let mut t = Trainer::new(config(25), data(2)).unwrap();
        let h = t.train(|_, _| Ok(())).unwrap();
        (h, t.pool().snapshot(), t.policy().params().to_vec())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.len(), 25);
    assert_eq!(format!("{:?}", a.0), format!("{:?}", b.0));
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    for (i, r) in a.0.iter().enumerate() {
        assert_eq!(r.step, i as u64 + 1);
        assert!(r.pool_size <= config(0).pool.capacity);
        assert!(r.grad_norm.is_finite() && r.max_abs_reward.is_finite());
    }
}

#[test]
fn patience_stops_after_stalled_validation() {
    let mut cfg = config(400);
    cfg.patience = Some(5);
    let mut t = Trainer::new(cfg, data(3)).unwrap();
    let h = t.train(|_, _| Ok(())).unwrap();
    assert!(h.len() < 400);
    let best = h
        .iter()
        .fold(f64::NEG_INFINITY, |m, r| if r.valid_ic > m { r.valid_ic } else { m });
    let best_step = h.iter().find(|r| r.valid_ic == best).unwrap().step;
    assert_eq!(h.last().unwrap().step, best_step + 5);
}

#[test]
fn rewards_equal_to_baseline_give_zero_update() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let policy = Policy::new(Vocabulary::default(), 8, PolicyConfig::default(), &mut rng);
    let est = estimate_gradient(&policy, 8, true, &mut rng, |_| Ok(0.37)).unwrap();
    assert_eq!(est.baseline, Some(0.37));
    assert!(est.gradient.iter().all(|g| *g == 0.0));
    assert_eq!(est.variance, 0.0);
}

#[test]
fn schedule_regimes_with_default_constants() {
    let s = ShapingSchedule::default();
    assert_eq!((s.lambda, s.alpha, s.eta, s.delta), (0.02, 9e4, 2.65e-6, 0.3));
    // Before the delay, on the ramp, and saturated.
    assert_eq!(s.threshold_at(90_000), 0.0);
    assert_eq!(s.threshold_at(100_000), 10_000.0 * 2.65e-6);
    assert!((s.threshold_at(100_000) - 0.0265).abs() < 1e-15);
    assert_eq!(s.threshold_at(300_000), 0.3);
    let knee = 90_000 + (0.3f64 / 2.65e-6).ceil() as u64;
    assert_eq!(s.threshold_at(knee), 0.3);
    assert!(s.threshold_at(knee - 1) < 0.3);
}

proptest! {
    #[test]
    fn reward_non_increasing_in_threshold(
        ic in -1.0..1.0f64,
        ir in -2.0..2.0f64,
        t1 in 0u64..400_000,
        dt in 0u64..400_000,
    ) {
        let s = ShapingSchedule::default();
        let early = ShapingSchedule { t: t1, ..s };
        let late = ShapingSchedule { t: t1 + dt, ..s };
        prop_assert!(late.threshold() >= early.threshold());
        prop_assert!(shaped_reward(ic, ir, &late, -1.0) <= shaped_reward(ic, ir, &early, -1.0));
        let th = early.threshold();
        prop_assert!((0.0..=s.delta).contains(&th));
        let r = shaped_reward(ic, ir, &early, -1.0);
        prop_assert!(r == ic || r == ic - s.lambda);
        let no_shaping = ShapingSchedule { lambda: 0.0, ..early };
        prop_assert_eq!(shaped_reward(ic, ir, &no_shaping, -1.0), ic);
    }
}
