mod common;

use kcl_core::bounds::{check_classification_bound, check_decomposition, check_equality_case, check_normalized_cut, random_partition};
use kcl_core::encoders::is_meaningful;
use kcl_core::objectives::{check_loss_relations, NegativeSampling};
use kcl_core::trainer::gradient_check;
use kcl_core::worlds::{build_disjoint_balls, random_world, sample_positive_pairs, BallWorldSpec, RandomWorldSpec};
use kcl_core::{BoundReport, ClusterStructure, Embedding, FiniteWorld, InfoNceConfig, Kernel, TableEncoder};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn kernel(idx: usize) -> Kernel {
    match idx {
        0 => Kernel::linear(),
        1 => Kernel::quadratic(),
        2 => Kernel::gaussian(0.5).unwrap(),
        3 => Kernel::gaussian(1.0).unwrap(),
        _ => Kernel::gaussian(4.0).unwrap(),
    }
}

fn embedding(n: usize, d: usize, seed: u64) -> Embedding {
    Embedding::from_rows(&common::random_unit_rows(n, d, &mut ChaCha8Rng::seed_from_u64(seed))).unwrap()
}

fn partition_world(k: usize, m: usize, seed: u64) -> FiniteWorld {
    random_world(&RandomWorldSpec { k, points_per_cluster: m, shared: 0 }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_slack_is_nonnegative_on_partition_worlds(
        k in 1usize..5, m in 1usize..5, world_seed in any::<u64>(), enc_seed in any::<u64>(),
        d in 1usize..6, kidx in 0usize..5, lambda in 0.0f64..8.0,
    ) {
        let w = partition_world(k, m, world_seed);
        let s = ClusterStructure::tight(&w, lambda).unwrap();
        let emb = embedding(w.len(), d, enc_seed);
        let r = check_decomposition(&w, &emb, &kernel(kidx), &s).unwrap();
        prop_assert!(r.slack >= -1e-9, "{r:?}");
    }

    #[test]
    fn equality_case_is_exact_on_disjoint_balls(
        k in 2usize..6, res in 1usize..5, enc_seed in any::<u64>(), d in 1usize..6,
        kidx in 0usize..5, lambda in 0.0f64..8.0,
    ) {
        let w = build_disjoint_balls(&BallWorldSpec::disjoint(k, res)).unwrap();
        let s = ClusterStructure::tight(&w, lambda).unwrap();
        let emb = embedding(w.len(), d, enc_seed);
        let r = check_equality_case(&w, &emb, &kernel(kidx), &s).unwrap();
        prop_assert!(r.pass && r.slack.abs() <= 1e-9, "{r:?}");
        let dec = check_decomposition(&w, &emb, &kernel(kidx), &s).unwrap();
        prop_assert!(dec.slack.abs() <= 1e-9);
    }

    #[test]
    fn normalized_cut_identities_hold(
        k in 1usize..4, m in 1usize..4, shared in 0usize..2, world_seed in any::<u64>(), enc_seed in any::<u64>(),
        cells in 1usize..4, kidx in 0usize..5, lambda in 0.0f64..4.0,
    ) {
        let w: FiniteWorld = random_world(&RandomWorldSpec { k, points_per_cluster: m, shared }, &mut ChaCha8Rng::seed_from_u64(world_seed)).unwrap();
        let emb = embedding(w.len(), 3, enc_seed);
        let part = random_partition(w.len(), cells.min(w.len()), &mut ChaCha8Rng::seed_from_u64(enc_seed ^ 1));
        let (trace, identity) = check_normalized_cut(&w, &emb.gram(&kernel(kidx)), lambda, &part).unwrap();
        prop_assert!(trace.pass && identity.pass, "{trace:?} {identity:?}");
    }

    #[test]
    fn classification_bound_holds_for_meaningful_encoders(
        k in 2usize..5, m in 1usize..4, world_seed in any::<u64>(), enc_seed in any::<u64>(),
        d in 1usize..5, kidx in 0usize..5, lambda in 0.0f64..4.0,
    ) {
        let w = partition_world(k, m, world_seed);
        let s = ClusterStructure::tight(&w, lambda).unwrap();
        let kern = kernel(kidx);
        let emb = embedding(w.len(), d, enc_seed);
        prop_assume!(is_meaningful(&emb, &w, &s, &kern).unwrap().0);
        let r = check_classification_bound(&w, &emb, &kern, &s).unwrap();
        prop_assert!(r.pass, "{r:?}");
    }

    #[test]
    fn loss_relations_hold(
        enc_seed in any::<u64>(), d in 1usize..4, tau in 0.05f64..2.0, m in 1usize..6, lambda in 0.1f64..3.0,
    ) {
        let w = build_disjoint_balls(&BallWorldSpec::disjoint(2, 2)).unwrap();
        let emb = embedding(w.len(), d, enc_seed);
        let cfg = InfoNceConfig::new(tau, m, lambda).unwrap();
        for r in check_loss_relations(&w, &emb, &cfg, &NegativeSampling::default()) {
            prop_assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences(
        enc_seed in any::<u64>(), pair_seed in any::<u64>(), d in 1usize..5, kidx in 0usize..5, lambda in 0.0f64..3.0,
    ) {
        let w = build_disjoint_balls(&BallWorldSpec::disjoint(3, 2)).unwrap();
        let enc = TableEncoder::random(w.len(), d, &mut ChaCha8Rng::seed_from_u64(enc_seed));
        let pairs = sample_positive_pairs(&w, 8, pair_seed).unwrap();
        let err = gradient_check(&w, &enc, &kernel(kidx), &pairs, lambda, 1e-5).unwrap();
        prop_assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn random_worlds_are_normalized_and_symmetric(
        k in 1usize..5, m in 1usize..5, shared in 0usize..3, seed in any::<u64>(),
    ) {
        let w: FiniteWorld = random_world(&RandomWorldSpec { k, points_per_cluster: m, shared }, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let total: f64 = (0..w.len()).flat_map(|x| (0..w.len()).map(move |xp| (x, xp))).map(|(x, xp)| w.pair_mass(x, xp)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for x in 0..w.len() {
            for xp in 0..w.len() {
                prop_assert_eq!(w.joint(x, xp), w.joint(xp, x));
            }
        }
    }

    #[test]
    fn reports_round_trip(lhs in -1e6f64..1e6, rhs in -1e6f64..1e6, noise in 0.0f64..1.0) {
        let r = BoundReport::inequality("r", lhs, rhs).with_noise(noise).with_component("x", lhs * 0.5).with_note("n");
        let back: BoundReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        prop_assert_eq!(back, r);
    }
}
