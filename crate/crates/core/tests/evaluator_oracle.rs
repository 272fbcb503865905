//! Stack-machine evaluation against a recursive tree-walk reference.

#[path = "support/tree_walk.rs"]
mod tree_walk;

use factorlab::formula::{evaluate, tokenize_infix};
use factorlab::{Feature, PanelTensor, RpnProgram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tree_walk::{compare_random_programs, gen_series, program, random_panel, N_ASSETS, N_DAYS};

#[test]
fn stack_machine_matches_tree_walk() {
    let cells = compare_random_programs(1000, 5).unwrap();
    assert!(cells > 10_000, "only {cells} defined cells compared");
}

#[test]
fn infix_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 1000 {
        let Some(prog) = program(&gen_series(&mut rng, 3)) else {
            continue;
        };
        let text = prog.to_infix();
        assert_eq!(tokenize_infix(&text).unwrap(), prog.tokens(), "{text}");
        assert_eq!(RpnProgram::from_infix(&text).unwrap(), prog);
        checked += 1;
    }
}

#[test]
fn evaluation_is_pure_and_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    while checked < 200 {
        let node = gen_series(&mut rng, 3);
        let Some(prog) = program(&node) else {
            continue;
        };
        let panel = random_panel(&mut rng);
        let a = evaluate(&prog, &panel).unwrap();
        assert!(a.same_cells(&evaluate(&prog, &panel).unwrap()));

        // Dropping an asset leaves every other asset's series unchanged.
        let mut reduced = PanelTensor::synthetic_constant(N_ASSETS - 1, N_DAYS, 0.0);
        for f in Feature::ALL {
            for asset in 1..N_ASSETS {
                for d in 0..N_DAYS {
                    reduced.set(asset - 1, f, d, panel.value(asset, f, d));
                }
            }
        }
        let b = evaluate(&prog, &reduced).unwrap();
        for asset in 1..N_ASSETS {
            for d in 0..N_DAYS {
                let (x, y) = (a.get(asset, d), b.get(asset - 1, d));
                assert!((x.is_nan() && y.is_nan()) || x == y);
            }
        }
        checked += 1;
    }
}
