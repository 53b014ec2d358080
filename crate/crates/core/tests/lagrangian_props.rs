mod common;

use asymm::lagrangian::{
    global_al_block_gradient, global_al_value, local_al_gradient, local_al_value, node_violations,
    update_node_multipliers, update_node_penalties, LocalView, PenaltyPolicy,
};
use asymm::linalg;
use asymm::problem::{finite_difference_gradient, make_source_localization, relative_error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(class: u8, n: usize, dim: usize, seed: u64) -> asymm::ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match class {
        0 => make_source_localization(n, dim, 2.5, 0.3, seed).unwrap().0,
        _ => common::mixed_spec(n, dim, &mut rng),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn local_gradient_matches_finite_differences(class in 0u8..2, n in 2usize..6, dim in 1usize..4, seed in any::<u64>()) {
        let spec = instance(class, n, dim, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let graph = common::random_connected_graph(n, 0.4, &mut rng);
        let (xs, mults, pens) = common::random_state(&spec, &graph, 3.0, &mut rng);
        for i in 0..n {
            let view = LocalView::from_global(i, &xs, &mults, &pens, &graph);
            let fd = finite_difference_gradient(|x| local_al_value(&view.at(x), &spec.nodes[i]), &xs[i], 1e-6);
            let analytic = local_al_gradient(&view, &spec.nodes[i]);
            prop_assert!(relative_error(&fd, &analytic) < 1e-6, "node {}: {:?} vs {:?}", i, fd, analytic);
        }
    }

    #[test]
    fn local_gradient_is_the_global_block_gradient(class in 0u8..2, n in 2usize..7, dim in 1usize..4, seed in any::<u64>()) {
        let spec = instance(class, n, dim, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
        let graph = common::random_connected_graph(n, 0.4, &mut rng);
        let (xs, mults, pens) = common::random_state(&spec, &graph, 3.0, &mut rng);
        for i in 0..n {
            let local = local_al_gradient(&LocalView::from_global(i, &xs, &mults, &pens, &graph), &spec.nodes[i]);
            let global = global_al_block_gradient(&xs, &mults, &pens, &spec, &graph, i).unwrap();
            prop_assert!(linalg::max_abs_diff(&local, &global) <= 1e-12 * (1.0 + linalg::norm(&global)));
            // and the global block gradient is the derivative of the global value
            let fd = finite_difference_gradient(|x| {
                let mut probe = xs.clone();
                probe[i] = x.to_vec();
                global_al_value(&probe, &mults, &pens, &spec, &graph).unwrap()
            }, &xs[i], 1e-6);
            prop_assert!(relative_error(&fd, &global) < 1e-6);
        }
    }

    #[test]
    fn multiplier_update_keeps_mu_nonnegative(class in 0u8..2, n in 2usize..6, seed in any::<u64>()) {
        let spec = instance(class, n, 2, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = common::random_connected_graph(n, 0.4, &mut rng);
        let (xs, mults, pens) = common::random_state(&spec, &graph, 4.0, &mut rng);
        for i in 0..n {
            let view = LocalView::from_global(i, &xs, &mults, &pens, &graph);
            let next = update_node_multipliers(&view, &spec.nodes[i]);
            prop_assert!(next.mu.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn penalties_never_decrease_and_respect_cap(
        rhos in prop::collection::vec(0.01f64..1e3, 1..6),
        now in prop::collection::vec(0.0f64..2.0, 6),
        prev in prop::collection::vec(0.0f64..2.0, 6),
        cap in 1.0f64..1e4,
    ) {
        use asymm::lagrangian::{NodePenalties, Violations};
        let m = rhos.len();
        let pens = NodePenalties { rho_eq: rhos.clone(), rho_ineq: rhos.clone(), rho_edge: rhos.clone() };
        let v = |src: &[f64]| Violations { eq: src[..m].to_vec(), ineq: src[..m].to_vec(), edge: src[..m].to_vec() };
        let policy = PenaltyPolicy { cap, ..PenaltyPolicy::default() };
        let next = update_node_penalties(&pens, &v(&now), Some(&v(&prev)), &policy);
        for (old, new) in pens.flatten().iter().zip(next.flatten()) {
            prop_assert!(new >= *old);
            prop_assert!(new <= old.max(cap));
        }
    }
}

#[test]
fn multipliers_are_fixed_at_a_feasible_consensus() {
    for seed in 0..50 {
        let (spec, inst) = make_source_localization(5, 2, 2.5, 0.3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graph = common::random_connected_graph(5, 0.3, &mut rng);
        let (_, mut mults, pens) = common::random_state(&spec, &graph, 1.0, &mut rng);
        let xs = vec![inst.true_source.clone(); 5];
        // complementary slackness: inactive constraints carry zero multipliers
        for (i, m) in mults.nodes.iter_mut().enumerate() {
            for (g, mu) in spec.nodes[i].inequalities.iter().zip(m.mu.iter_mut()) {
                if g.value(&xs[i]) < 0.0 {
                    *mu = 0.0;
                }
            }
        }
        for i in 0..5 {
            let view = LocalView::from_global(i, &xs, &mults, &pens, &graph);
            assert_eq!(update_node_multipliers(&view, &spec.nodes[i]), mults.nodes[i], "seed {seed} node {i}");
            let v = node_violations(&view, &spec.nodes[i]);
            assert!(v.edge.iter().all(|&e| e == 0.0));
        }
    }
}
