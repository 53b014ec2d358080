mod common;

use asymm::graph::Graph;
use asymm::linalg;
use asymm::problem::{infeasibility, make_source_localization, relative_error, finite_difference_gradient};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_annulus_contains_the_source(n in 2usize..12, dim in 1usize..4, seed in any::<u64>()) {
        let (spec, inst) = make_source_localization(n, dim, 2.5, 0.3, seed).unwrap();
        prop_assert_eq!(spec.node_count(), n);
        for (i, c) in inst.anchors.iter().enumerate() {
            let d = linalg::dist(&inst.true_source, c);
            prop_assert!(inst.inner_radius[i] <= d + 1e-12 && d <= inst.outer_radius[i] + 1e-12);
            for g in &spec.nodes[i].inequalities {
                prop_assert!(g.value(&inst.true_source) <= 1e-12);
            }
        }
    }

    #[test]
    fn constraint_gradients_match_central_differences(seed in any::<u64>(), probe in prop::collection::vec(-3.0f64..3.0, 2)) {
        let (spec, inst) = make_source_localization(4, 2, 2.5, 0.3, seed).unwrap();
        for (i, p) in spec.nodes.iter().enumerate() {
            // stay off the nonsmooth anchor
            prop_assume!(linalg::dist(&probe, &inst.anchors[i]) > 1e-2);
            for g in p.inequalities.iter().chain(std::iter::once(&p.cost)) {
                let fd = finite_difference_gradient(|x| g.value(x), &probe, 1e-6);
                prop_assert!(relative_error(&fd, &g.gradient_vec(&probe)) < 1e-6);
            }
        }
    }

    #[test]
    fn infeasibility_matches_straight_sum(seed in any::<u64>(), pts in prop::collection::vec(-3.0f64..3.0, 6)) {
        let (spec, inst) = make_source_localization(3, 2, 2.5, 0.3, seed).unwrap();
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let xs: Vec<Vec<f64>> = pts.chunks(2).map(<[f64]>::to_vec).collect();
        let mut expected = 0.0;
        for i in 0..3 {
            let d = ((xs[i][0] - inst.anchors[i][0]).powi(2) + (xs[i][1] - inst.anchors[i][1]).powi(2)).sqrt();
            expected += (d - inst.outer_radius[i]).max(0.0) + (inst.inner_radius[i] - d).max(0.0);
        }
        let e01 = ((xs[0][0] - xs[1][0]).powi(2) + (xs[0][1] - xs[1][1]).powi(2)).sqrt();
        let e12 = ((xs[1][0] - xs[2][0]).powi(2) + (xs[1][1] - xs[2][1]).powi(2)).sqrt();
        expected += 2.0 * (e01 + e12);
        let got = infeasibility(&spec, &g, &xs).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * (1.0 + expected));
    }
}

#[test]
fn zero_noise_instance_pins_the_source() {
    let (_, inst) = make_source_localization(5, 2, 2.5, 0.0, 9).unwrap();
    for (i, c) in inst.anchors.iter().enumerate() {
        let d = linalg::dist(&inst.true_source, c);
        assert_eq!(inst.inner_radius[i], inst.outer_radius[i]);
        assert!((d - inst.outer_radius[i]).abs() < 1e-12);
    }
}

#[test]
fn one_dimensional_two_node_instance() {
    let (spec, inst) = make_source_localization(2, 1, 1.0, 0.0, 4).unwrap();
    // with exact ranges each constraint set is {c - y, c + y}; the source is common to both
    let x = inst.true_source[0];
    for (i, c) in inst.anchors.iter().enumerate() {
        let y = inst.measurements[i];
        assert!(((x - c[0]).abs() - y).abs() < 1e-12);
        assert!(spec.nodes[i].inequalities.iter().all(|g| g.value(&[x]) <= 1e-12));
    }
}

#[test]
fn instance_document_round_trips() {
    let (_, inst) = make_source_localization(6, 2, 2.5, 0.3, 77).unwrap();
    let back = asymm::LocalizationInstance::from_toml(&inst.to_toml()).unwrap();
    assert_eq!(back, inst);
}
