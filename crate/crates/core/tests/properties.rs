mod common;

use proptest::prelude::*;
use ssrnas::adcore::Tape;
use ssrnas::archspace::{
    ArchParamGroup, ArchParams, GroupOwner, Level, MixtureWeights, SpaceConfig, StageSpec,
};
use ssrnas::bench::gradsuite::random_simplex;
use ssrnas::bench::{enumerate_space, exact_flops};
use ssrnas::costmodel::{expected_flops_on_tape, expected_total_flops};
use ssrnas::engine::discretize;
use ssrnas::regloss::{check_l0_equivalence, entropy, normalize_probs, ssr_loss};
use ssrnas::rng::SeededRng;
use ssrnas::shrink::{prune_group, retaining_probs};

use common::shrink_fuzz;

/// Two stages with pooling and channel choices, small enough to enumerate
/// (272 and 16 architectures per stage).
fn medium_space() -> SpaceConfig {
    SpaceConfig {
        length: 16,
        dilations: vec![1, 2],
        spatials: vec![1, 2],
        stages: vec![
            StageSpec {
                depths: vec![1, 2],
                width: 4,
                channels: vec![2, 4],
            },
            StageSpec {
                depths: vec![1],
                width: 6,
                channels: vec![3, 6],
            },
        ],
        ..SpaceConfig::tiny()
    }
}

fn group(logits: Vec<f64>, active: Vec<bool>) -> ArchParamGroup {
    let mut g = ArchParamGroup::new(
        Level::DilationSpatial,
        GroupOwner::Layer { stage: 0, layer: 0 },
        logits.len(),
    );
    g.logits = logits;
    g.active = active;
    g
}

fn group_strategy() -> impl Strategy<Value = ArchParamGroup> {
    (2usize..10).prop_flat_map(|n| {
        (
            proptest::collection::vec(-30.0f64..30.0, n),
            proptest::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(logits, mut active, force)| {
                active[force] = true;
                group(logits, active)
            })
    })
}

proptest! {
    #[test]
    fn probabilities_form_a_distribution(g in group_strategy()) {
        let p = normalize_probs(&g).unwrap();
        prop_assert_eq!(p.ids.clone(), g.active_ids());
        prop_assert!((p.p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.p.iter().all(|&x| x > 0.0 && x <= 1.0));
        prop_assert!(entropy(&p.p) <= (p.len() as f64).ln() + 1e-12);
        prop_assert!(ssr_loss(&p.p) <= 0.0);
    }

    #[test]
    fn pruning_keeps_the_leader_and_removes_exactly_the_weak(g in group_strategy(), h in 0.01f64..0.99) {
        let before = g.clone();
        let r = retaining_probs(&before);
        let ids = before.active_ids();
        let mut g = g;
        let (removed, at) = prune_group(&mut g, h);
        prop_assert!(g.n_active() >= 1);
        let leader = ids[r.iter().position(|&x| x == 1.0).unwrap()];
        prop_assert!(g.active[leader]);
        for (k, &id) in ids.iter().enumerate() {
            let expect_removed = id != leader && r[k] <= h;
            prop_assert_eq!(removed.contains(&id), expect_removed);
            prop_assert_eq!(g.active[id], !expect_removed);
        }
        prop_assert!(at.iter().all(|&x| x <= h));
        for (i, &a) in g.active.iter().enumerate() {
            prop_assert!(!a || before.active[i]);
        }
    }

    #[test]
    fn taylor_residual_stays_under_the_lagrange_bound(seed in any::<u64>(), n in 2usize..=10) {
        let mut rng = SeededRng::new(seed);
        let p = random_simplex(&mut rng, n, 1e-3);
        let r = check_l0_equivalence(&p, &[1e-2, 1e-3, 1e-4]).unwrap();
        for (res, bound) in r.taylor_residuals.iter().zip(&r.taylor_bounds) {
            prop_assert!(res <= bound);
        }
        prop_assert!(r.gradient_factorization_error <= 1e-9);
    }

    #[test]
    fn tape_and_scalar_expected_flops_agree(seed in any::<u64>()) {
        let space = medium_space();
        let mut arch = ArchParams::new(&space);
        let mut rng = SeededRng::new(seed);
        for g in &mut arch.groups {
            for l in &mut g.logits {
                *l = 3.0 * rng.normal();
            }
        }
        let scalar = expected_total_flops(&space, &arch).unwrap();
        let mut tape = Tape::new();
        let (mix, _) = MixtureWeights::relaxed(&mut tape, &arch).unwrap();
        let e = expected_flops_on_tape(&mut tape, &space, &arch, &mix).unwrap();
        let on_tape = tape.value(e).item();
        prop_assert!((scalar - on_tape).abs() <= 1e-9 * scalar);
    }
}

#[test]
fn expected_flops_match_exact_count_on_every_medium_architecture() {
    let space = medium_space();
    let all = enumerate_space(&space, 10_000).unwrap();
    assert_eq!(all.len(), 272 * 16);
    for a in &all {
        let exact = exact_flops(a, &space).unwrap();
        let expected = expected_total_flops(&space, &a.to_arch_params(&space).unwrap()).unwrap();
        assert!(
            (expected - exact).abs() <= 1e-9 * exact,
            "{}: {expected} vs {exact}",
            a.encode()
        );
    }
}

#[test]
fn discretize_inverts_one_hot_encoding() {
    let space = medium_space();
    for a in enumerate_space(&space, 10_000).unwrap().iter().step_by(7) {
        let params = a.to_arch_params(&space).unwrap();
        assert!(params.is_discrete());
        assert_eq!(&discretize(&params, &space).unwrap(), a);
    }
}

#[test]
fn shrinking_fuzz_keeps_invariants() {
    let v = shrink_fuzz(300, 11);
    assert_eq!(v.total(), 0, "{v:?}");
}
