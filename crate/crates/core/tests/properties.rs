use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsde_core::compat::{check_compatibility, transform_set, Bounds, CompatOptions, RayBisectionSampler};
use rsde_core::geometry::shapes::{Affine, Ball};
use rsde_core::geometry::{cone_axis, finite_difference_gradient, min_norm_in_hull, ConstraintSet, FnConstraint};
use rsde_core::gibbs::{log_density, GibbsSpec, ZeroPotential};
use rsde_core::linalg::{dot, norm, Matrix};
use rsde_core::planet::{self, GravityLaw, JammedSampler, PlanetModel, RadialOptions};
use rsde_core::sde::{simulate, SimOptions};
use std::sync::Arc;

fn unit_vectors(dim: usize, max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..=max).prop_filter_map("zero vector", |vs| {
        vs.into_iter()
            .map(|v| {
                let n = norm(&v);
                (n > 1e-3).then(|| v.iter().map(|c| c / n).collect::<Vec<f64>>())
            })
            .collect()
    })
}

fn invertible(dim: usize) -> impl Strategy<Value = Matrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim * dim).prop_filter_map("ill-conditioned", move |v| {
        let rows: Vec<Vec<f64>> = v.chunks(dim).map(|r| r.to_vec()).collect();
        let mut m = Matrix::from_rows(&rows).ok()?;
        for i in 0..dim {
            m[(i, i)] += 2.0;
        }
        (m.condition_number()? < 50.0).then_some(m)
    })
}

fn wedge(angle: f64) -> ConstraintSet<f64> {
    ConstraintSet::new(2)
        .with("a", Affine::new(vec![1.0, 0.0], 0.0))
        .unwrap()
        .with("b", Affine::new(vec![angle.cos(), angle.sin()], 0.0))
        .unwrap()
        .with("disc", Ball::inside(vec![0.3, 0.3], 1.5, vec![0, 1]))
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hull_result_is_certified(vs in unit_vectors(3, 6)) {
        let h = min_norm_in_hull(&vs).unwrap();
        let sum: f64 = h.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(h.weights.iter().all(|&w| w >= 0.0));
        let mut rec = vec![0.0; 3];
        for (v, &w) in vs.iter().zip(&h.weights) {
            for k in 0..3 {
                rec[k] += w * v[k];
            }
        }
        prop_assert!(rsde_core::linalg::dist(&rec, &h.min_norm_point) <= 1e-10);
        let zz = dot(&h.min_norm_point, &h.min_norm_point);
        for u in &vs {
            prop_assert!(dot(&h.min_norm_point, u) >= zz - 1e-10);
        }
    }

    #[test]
    fn duality_of_distance_and_beta(vs in unit_vectors(2, 6)) {
        let h = min_norm_in_hull(&vs).unwrap();
        let c = cone_axis(&vs).unwrap();
        prop_assert!((h.distance - c.beta.max(0.0)).abs() <= 1e-10);
    }

    #[test]
    fn hull_is_permutation_invariant(vs in unit_vectors(3, 6), rot in 0usize..6) {
        let mut perm = vs.clone();
        perm.reverse();
        let r = rot % perm.len();
        perm.rotate_left(r);
        let a = min_norm_in_hull(&vs).unwrap();
        let b = min_norm_in_hull(&perm).unwrap();
        prop_assert_eq!(a.distance, b.distance);
        let n = vs.len();
        for i in 0..n {
            // input i sits at position p in the permuted list
            let p = (n - 1 - i + n - r) % n;
            prop_assert!((a.weights[i] - b.weights[p]).abs() <= 1e-12);
        }
    }

    #[test]
    fn transform_round_trip(theta in invertible(2), x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let set = wedge(2.0);
        let inv = theta.inverse().unwrap();
        let back = transform_set(&transform_set(&set, &theta).unwrap(), &inv).unwrap();
        let a = set.evaluate(&x).unwrap();
        let b = back.evaluate(&x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p.value - q.value).abs() <= 1e-9);
            for k in 0..2 {
                prop_assert!((p.gradient[k] - q.gradient[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn beta0_degrades_at_most_by_condition(theta in invertible(2), seed in 0u64..1000) {
        let set = wedge(2.5);
        let t = transform_set(&set, &theta).unwrap();
        let inv = theta.inverse().unwrap();
        let bound = inv.spectral_norm() * theta.transpose().spectral_norm();
        let sampler = RayBisectionSampler::new(Bounds::cube(2, 2.0));
        let opts = CompatOptions { seed, ..Default::default() };
        let points = rsde_core::compat::boundary_samples(&set, &sampler, 20, opts.act_tol, seed);
        for x in points.into_iter().flatten() {
            let Some((h, _)) = set.hull_distance(&x, opts.act_tol).unwrap() else { continue };
            let y = inv.apply(&x);
            let Some((g, _)) = t.hull_distance(&y, opts.act_tol).unwrap() else { continue };
            prop_assert!(g.distance >= h.distance / bound - 1e-10, "{} vs {}", g.distance, h.distance / bound);
        }
    }

    #[test]
    fn planet_gradients_match_finite_differences(seed in 0u64..10_000) {
        let model = PlanetModel::new(3, 3, 1.0, 0.1, 0.2);
        let set = planet::build_constraints(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = JammedSampler::new(model.clone()).draw(&mut rng).unwrap();
        for e in set.entries() {
            let mut g = vec![0.0f64; set.dim()];
            e.f.gradient(&x, &mut g);
            let fd = finite_difference_gradient(e.f.as_ref(), &x, 1e-5);
            let scale = norm(&g).max(1.0);
            for k in 0..g.len() {
                prop_assert!((g[k] - fd[k]).abs() <= 1e-6 * scale, "{} coord {}", e.id, k);
            }
        }
    }

    #[test]
    fn contact_graph_clusters_partition(seed in 0u64..10_000) {
        let model = PlanetModel::new(6, 2, 1.0, 0.1, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some(x) = JammedSampler::new(model.clone()).draw(&mut rng) else { return Ok(()) };
        let g = planet::contact_graph(&model, &x, 1e-9);
        let mut seen: Vec<usize> = g.clusters.iter().flatten().copied().collect();
        seen.sort();
        prop_assert_eq!(seen, (0..6).collect::<Vec<_>>());
        for &(i, j) in &g.edges {
            prop_assert_eq!(g.cluster_of[i], g.cluster_of[j]);
        }
    }

    #[test]
    fn min_radial_norm_never_exceeds_current(seed in 0u64..10_000) {
        let model = PlanetModel::new(4, 2, 1.0, 0.1, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some(x) = JammedSampler::new(model.clone()).draw(&mut rng) else { return Ok(()) };
        let opts = RadialOptions::for_dim(2);
        for k in 0..4 {
            let r = planet::min_radial_norm(&model, &x, k, &opts, &mut rng);
            let here = norm(model.position(&x, k));
            prop_assert!(r <= here);
            prop_assert!(r >= 1.0 + model.particle_radius(&x, k) - 1e-9);
        }
    }

    #[test]
    fn log_density_is_minus_infinity_exactly_off_domain(x in prop::collection::vec(-2.0f64..2.0, 2)) {
        let set = wedge(2.0);
        let spec = GibbsSpec::new(set.clone(), Arc::new(ZeroPotential));
        let inside = set.values(&x).iter().all(|&v| v > 0.0);
        prop_assert_eq!(log_density(&spec, &x) > f64::NEG_INFINITY, inside);
    }
}

#[test]
fn never_active_constraint_leaves_beta0_unchanged() {
    let base = wedge(2.5);
    let extra = wedge(2.5)
        .with(
            "far",
            FnConstraint::new(|x: &[f64]| 1.0 + x[0] * x[0] + x[1] * x[1], |x, g| {
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
            }, 2.0, 2.0),
        )
        .unwrap();
    let sampler = RayBisectionSampler::new(Bounds::cube(2, 2.0));
    let opts = CompatOptions { seed: 11, ..Default::default() };
    let a = check_compatibility(&base, &sampler, 300, &opts);
    let b = check_compatibility(&extra, &sampler, 300, &opts);
    assert_eq!(a.beta0_estimate, b.beta0_estimate);
}

fn pruned_and_dense_paths(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let model = PlanetModel::new(planet::PRUNE_ABOVE + 6, 2, 1.0, 0.1, 0.15)
        .with_gravity(GravityLaw::Log { c: 3.0 })
        .with_temperature(0.3);
    let spec = planet::build_dynamics(&model).unwrap();
    assert!(spec.set.pruner().is_some());
    let mut dense = spec.clone();
    dense.set = dense.set.clone().without_pruner();
    // a crowded start: the spread ring pulled down close to the planet
    let mut x0 = model.spread_configuration();
    let ring = norm(model.position(&x0, 0));
    let target: f64 = 1.0 + 0.15 + 0.01;
    for i in 0..model.n {
        let o = model.offset(i);
        let s = target.max(ring * 0.99) / ring;
        x0[o] *= s;
        x0[o + 1] *= s;
    }
    let a = simulate(&spec, &x0, 0.5, 1e-3, seed, &SimOptions::default()).unwrap();
    let b = simulate(&dense, &x0, 0.5, 1e-3, seed, &SimOptions::default()).unwrap();
    assert_eq!(a.local_times, b.local_times);
    assert!(a.local_times.last().unwrap().iter().any(|&l| l > 0.0));
    (a.states, b.states)
}

#[test]
fn pruned_correction_is_bitwise_dense() {
    for seed in [1, 2] {
        let (a, b) = pruned_and_dense_paths(seed);
        assert_eq!(a, b);
    }
}

#[test]
fn simulated_planet_paths_stay_in_bounds() {
    let model = PlanetModel::new(3, 2, 1.0, 0.1, 0.2).with_gravity(GravityLaw::Log { c: 3.0 });
    let spec = planet::build_dynamics(&model).unwrap();
    let rec = simulate(&spec, &model.spread_configuration(), 5.0, 1e-3, 3, &SimOptions::default()).unwrap();
    let tol = 1e-9;
    for x in &rec.states {
        for i in 0..3 {
            let r = model.particle_radius(x, i);
            assert!(r >= 0.1 - tol * 0.2 && r <= 0.2 + tol * 0.2);
            assert!(norm(model.position(x, i)) - 1.0 - r >= -tol);
            for j in i + 1..3 {
                let gap = rsde_core::linalg::dist(model.position(x, i), model.position(x, j)) - r - model.particle_radius(x, j);
                assert!(gap >= -tol);
            }
        }
    }
}
