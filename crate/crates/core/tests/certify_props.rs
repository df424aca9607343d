use curvcert::certify::{
    attack_pair_radius, certify_first, first_order_dominance_condition, first_order_pair_radius,
    zeroth_order_pair_radius, Certifier, CertifyConfig, ConstantSource,
};
use curvcert::fixture::{generate, self_labelled_data, FixtureOptions};
use curvcert::linalg::NormKind;
use curvcert::oracle::{grid_adversarial_search, GridSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn zeroth_order_radius_solves_its_equation(gap in -10.0f64..-1e-6, l in 1e-3f64..20.0) {
        let e = zeroth_order_pair_radius(gap, l);
        prop_assert!((gap + l * e).abs() < 1e-9);
    }

    #[test]
    fn first_order_radius_is_the_positive_root(gap in -10.0f64..-1e-6, g in 0.0f64..10.0, l in 0.0f64..20.0) {
        prop_assume!(g > 0.0 || l > 0.0);
        let e = first_order_pair_radius(gap, g, l);
        prop_assert!(e > 0.0 && e.is_finite());
        prop_assert!((0.5 * l * e * e + g * e + gap).abs() < 1e-9, "residual at {e}");
    }

    #[test]
    fn attack_radius_is_the_smaller_root(f in 1e-6f64..10.0, g in 1e-3f64..10.0, l in 0.0f64..20.0) {
        match attack_pair_radius(f, g, l) {
            Some(e) => {
                prop_assert!(2.0 * l * f <= g * g);
                prop_assert!((f - g * e + 0.5 * l * e * e).abs() < 1e-9, "residual at {e}");
                // the quadratic is positive on [0, e)
                let t = 0.5 * e;
                prop_assert!(f - g * t + 0.5 * l * t * t > 0.0);
            }
            None => prop_assert!(2.0 * l * f > g * g),
        }
    }
}

#[test]
fn dominance_condition_implies_first_order_wins() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut held = 0;
    for _ in 0..1000 {
        let gap: f64 = -rng.gen_range(1e-3..5.0);
        let g: f64 = rng.gen_range(0.0..5.0);
        let lip = g * rng.gen_range(1.0..3.0) + 1e-3;
        let eps0 = zeroth_order_pair_radius(gap, lip);
        let limit = -2.0 * (g * eps0 + gap) / (eps0 * eps0);
        let curv = rng.gen_range(0.0..2.0 * limit.max(1e-3));
        if first_order_dominance_condition(gap, g, curv, eps0) {
            held += 1;
            let eps1 = first_order_pair_radius(gap, g, curv);
            assert!(eps1 >= eps0 * (1.0 - 1e-12), "{eps1} < {eps0}");
        }
    }
    assert!(held > 300, "condition held only {held} times");
}

#[test]
fn minimum_over_pairs_reports_the_binding_class() {
    let r = certify_first(&[-1.0, -0.2, -3.0], &[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0])
        .unwrap()
        .unwrap();
    assert_eq!(r.index, 1);
    assert!((r.value - 0.2).abs() < 1e-15);
}

fn toys() -> Vec<curvcert::model::SequentialNetwork> {
    ["2,8,3", "2,8,8r,3", "2,6g,6,4"]
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let mut o = FixtureOptions::new(l, 30 + k as u64, ["tanh", "sigmoid", "softplus"][k]);
            o.weight_norm = 2.0;
            generate(&o).unwrap()
        })
        .collect()
}

#[test]
fn radii_are_sandwiched_by_grid_search_and_attacks() {
    for net in toys() {
        let data = self_labelled_data(&net, 8, 1.0, 7).unwrap();
        for p in NormKind::all() {
            for source in [ConstantSource::Anchored, ConstantSource::Global, ConstantSource::Shared] {
                let mut config = CertifyConfig::new(p);
                config.source = source;
                let certs = Certifier::new(&net, config)
                    .unwrap()
                    .certify_all(&data.xs, &data.labels)
                    .unwrap();
                for (c, x) in certs.iter().zip(&data.xs) {
                    assert!(c.correct);
                    let mut grid = GridSpec::new(1e-2, 64);
                    if let Some(a) = &c.attack {
                        assert!(a.realized, "{} sample {}", net.name, c.sample);
                        let moved: Vec<f64> = x.iter().zip(&a.delta).map(|(u, d)| u + d).collect();
                        assert_ne!(net.predict(&moved).unwrap(), c.label);
                        assert!((p.vector_norm(&a.delta) - a.radius).abs() <= 1e-12 * a.radius.max(1.0));
                        grid.extra.push(a.delta.clone());
                    }
                    for order in [0u8, 1] {
                        let r = c.radius(order);
                        if !r.is_finite() {
                            continue;
                        }
                        if let Some(a) = &c.attack {
                            assert!(r <= a.radius, "certified {r} above attack {}", a.radius);
                        }
                        let hit = grid_adversarial_search(&net, x, c.label, p, 0.999 * r, &grid).unwrap();
                        assert!(hit.is_none(), "{} p={p} order {order}: {hit:?}", net.name);
                    }
                }
            }
        }
    }
}

#[test]
fn anchored_radii_are_at_least_global_radii() {
    for net in toys() {
        let data = self_labelled_data(&net, 10, 1.0, 8).unwrap();
        let certify = |source| {
            let mut config = CertifyConfig::new(NormKind::Two);
            config.source = source;
            Certifier::new(&net, config)
                .unwrap()
                .certify_all(&data.xs, &data.labels)
                .unwrap()
        };
        let anchored = certify(ConstantSource::Anchored);
        let global = certify(ConstantSource::Global);
        for (a, g) in anchored.iter().zip(&global) {
            for order in [0u8, 1] {
                assert!(a.radius(order) >= g.radius(order) * (1.0 - 1e-12));
            }
        }
    }
}
