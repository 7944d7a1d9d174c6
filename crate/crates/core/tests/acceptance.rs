//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N ... PASS|FAIL` line with the measured numbers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rsde_core::compat::Bounds;
use rsde_core::geometry::shapes::Affine;
use rsde_core::geometry::{cone_axis, min_norm_in_hull, ConstraintSet};
use rsde_core::gibbs::{sample_mcmc, sample_rejection, GibbsSpec, LinearPotential, McmcOptions, QuadraticPotential, RejectionOptions};
use rsde_core::linalg::Matrix;
use rsde_core::planet::{self, GravityLaw, PlanetModel};
use rsde_core::sde::{
    self, check_local_times, reversibility_test, simulate, simulate_ensemble, transform_dynamics, BoundaryScheme, DynamicsSpec,
    ReversibilityOptions, RotationalDrift, SimOptions, SumDrift, TestVerdict,
};
use rsde_core::stats::{ks_one_sample, ks_two_sample, total_variation, Histogram2d};
use std::sync::Arc;
use std::time::Instant;

fn report(n: u32, pass: bool, detail: String) {
    println!("criterion {n} ... {} ({detail})", if pass { "PASS" } else { "FAIL" });
}

fn random_unit(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Exact distance from 0 to the hull by enumerating faces: for every subset,
/// project 0 onto its affine hull and keep projections with nonnegative
/// barycentric weights.
fn hull_distance_by_faces(vs: &[Vec<f64>]) -> f64 {
    let m = vs.len();
    let d = vs[0].len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << m) {
        let idx: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let k = idx.len();
        if k > d + 1 {
            continue;
        }
        // minimise |Σ w_i v_i|² with Σ w_i = 1 via the bordered Gram system
        let n = k + 1;
        let mut a = vec![vec![0.0; n + 1]; n];
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                a[r][c] = dot(&vs[i], &vs[j]);
            }
            a[r][k] = 1.0;
            a[k][r] = 1.0;
        }
        a[k][n] = 1.0;
        let Some(w) = gauss(a) else { continue };
        if w[..k].iter().any(|&x| x < -1e-12) {
            continue;
        }
        let mut p = vec![0.0; d];
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..d {
                p[c] += w[r] * vs[i][c];
            }
        }
        best = best.min(dot(&p, &p).sqrt());
    }
    best
}

fn gauss(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-10 {
            return None;
        }
        a.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    Some((0..n).map(|i| a[i][n] / a[i][i]).collect())
}

/// max over unit u of min_i u·v_i, clipped at 0, by refined grid search.
fn beta_by_grid(vs: &[Vec<f64>]) -> f64 {
    let score = |u: &[f64]| vs.iter().map(|v| dot(u, v)).fold(f64::INFINITY, f64::min);
    let d = vs[0].len();
    let mut best;
    if d == 2 {
        let at = |t: f64| [t.cos(), t.sin()];
        let n = 4096;
        let step0 = 2.0 * std::f64::consts::PI / n as f64;
        let mut t0 = 0.0;
        best = f64::NEG_INFINITY;
        for k in 0..n {
            let t = k as f64 * step0;
            let s = score(&at(t));
            if s > best {
                best = s;
                t0 = t;
            }
        }
        let mut h = step0;
        for _ in 0..40 {
            for t in [t0 - h, t0 + h] {
                let s = score(&at(t));
                if s > best {
                    best = s;
                    t0 = t;
                }
            }
            h *= 0.7;
        }
    } else {
        let at = |a: f64, b: f64| [b.sin() * a.cos(), b.sin() * a.sin(), b.cos()];
        let (na, nb) = (256, 128);
        let mut starts: Vec<(f64, f64, f64)> = Vec::new();
        for i in 0..na {
            for j in 0..=nb {
                let a = 2.0 * std::f64::consts::PI * i as f64 / na as f64;
                let b = std::f64::consts::PI * j as f64 / nb as f64;
                starts.push((score(&at(a, b)), a, b));
            }
        }
        starts.sort_by(|x, y| y.0.total_cmp(&x.0));
        best = f64::NEG_INFINITY;
        // shrinking local grids around the best coarse cells
        for &(s0, mut a, mut b) in starts.iter().take(8) {
            let mut s = s0;
            let mut h = 2.0 * std::f64::consts::PI / na as f64;
            while h > 1e-10 {
                let (mut ba, mut bb) = (a, b);
                for i in -10..=10 {
                    for j in -10..=10 {
                        let (ta, tb) = (a + h * i as f64 / 10.0, b + h * j as f64 / 10.0);
                        let t = score(&at(ta, tb));
                        if t > s {
                            s = t;
                            ba = ta;
                            bb = tb;
                        }
                    }
                }
                a = ba;
                b = bb;
                h *= 0.3;
            }
            best = best.max(s);
        }
    }
    best.max(0.0)
}

#[test]
fn criterion_1_hull_duality() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_dual, mut worst_oracle, mut worst_grid) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..1000 {
        let d = 2 + trial % 2;
        let m = rng.random_range(1..=6);
        let vs: Vec<Vec<f64>> = (0..m).map(|_| random_unit(d, &mut rng)).collect();
        let h = min_norm_in_hull(&vs).unwrap();
        let c = cone_axis(&vs).unwrap();
        let beta = c.beta.max(0.0);
        worst_dual = worst_dual.max((h.distance - beta).abs());
        worst_oracle = worst_oracle.max((h.distance - hull_distance_by_faces(&vs)).abs());
        worst_grid = worst_grid.max((beta - beta_by_grid(&vs)).abs());
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_dual <= 1e-6 && worst_oracle <= 1e-3 && worst_grid <= 1e-3 && secs < 30.0;
    report(
        1,
        pass,
        format!("duality {worst_dual:.2e}, face oracle {worst_oracle:.2e}, grid oracle {worst_grid:.2e}, {secs:.1} s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_planet_certification() {
    let t0 = Instant::now();
    let model = PlanetModel::new(3, 2, 1.0, 0.1, 0.2);
    let r = planet::check_model(&model, 10_000, 2, 0.1).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let beta0 = r.compat.beta0_estimate;
    let pass = beta0 > 0.0
        && r.cone_samples == 10_000
        && r.compat.samples_checked == 10_000
        && r.cone_failures == 0
        && secs < 120.0;
    report(
        2,
        pass,
        format!(
            "beta0 {beta0:.4}, {} samples, {} cone failures, min cone beta {:.4}, {secs:.1} s",
            r.cone_samples, r.cone_failures, r.min_cone_beta
        ),
    );
    assert!(pass);
}

fn half_line_gibbs() -> (DynamicsSpec<f64>, GibbsSpec<f64>) {
    let set = ConstraintSet::new(1).with("x", Affine::new(vec![1.0], 0.0)).unwrap();
    let phi = Arc::new(LinearPotential { coeffs: vec![2.0] });
    let spec = DynamicsSpec::gibbs(set.clone(), Matrix::identity(1), phi.clone())
        .unwrap()
        .with_scheme(BoundaryScheme::Bridge);
    let gibbs = GibbsSpec::new(set, phi).with_box(Bounds::new(vec![0.0], vec![12.0]).unwrap(), 0.0);
    (spec, gibbs)
}

/// Stationary samples from an ensemble: burn in to `burn`, then record every
/// `every` until `paths × per_path` samples are collected.
fn sde_stationary(spec: &DynamicsSpec<f64>, starts: &[Vec<f64>], burn: f64, every: f64, per_path: usize, dt: f64, seed: u64) -> Vec<f64> {
    let horizon = burn + every * per_path as f64;
    let stride = (every / dt).round() as usize;
    let skip = (burn / every).round() as usize;
    simulate_ensemble(spec, starts, horizon, dt, seed, 0, stride)
        .into_iter()
        .flat_map(|r| {
            let r = r.expect("path");
            r.states.into_iter().skip(skip + 1).map(|x| x[0]).collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn criterion_3_stationary_law() {
    let (spec, gibbs) = half_line_gibbs();
    let cdf = |x: f64| 1.0 - (-2.0 * x).exp();
    let paths = 1000;
    let starts: Vec<Vec<f64>> = (0..paths).map(|i| vec![0.05 + (i % 20) as f64 * 0.1]).collect();
    let sde = sde_stationary(&spec, &starts, 3.0, 0.1, 100, 1e-3, 3);
    let ks_sde = ks_one_sample(&sde, cdf);
    let mut o = McmcOptions::new(100_000, 0.8, 3);
    o.thin = 5;
    let mcmc: Vec<f64> = sample_mcmc(&gibbs, &o).unwrap().samples.into_iter().map(|x| x[0]).collect();
    let ks_mcmc = ks_one_sample(&mcmc, cdf);
    let ks_both = ks_two_sample(&sde, &mcmc);
    let pass = sde.len() == 100_000 && ks_sde < 0.02 && ks_mcmc < 0.02 && ks_both < 0.03;
    report(
        3,
        pass,
        format!("{} SDE samples: KS {ks_sde:.4}; MCMC KS {ks_mcmc:.4}; two-sample {ks_both:.4}", sde.len()),
    );
    assert!(pass);
}

fn quadrant(rate: f64) -> (DynamicsSpec<f64>, GibbsSpec<f64>) {
    let set = ConstraintSet::new(2)
        .with("x1", Affine::new(vec![1.0, 0.0], 0.0))
        .unwrap()
        .with("x2", Affine::new(vec![0.0, 1.0], 0.0))
        .unwrap();
    let phi = Arc::new(QuadraticPotential {
        stiffness: 1.0,
        center: vec![0.0, 0.0],
    });
    let mut spec = DynamicsSpec::gibbs(set.clone(), Matrix::identity(2), phi.clone()).unwrap();
    if rate != 0.0 {
        spec.drift = Arc::new(SumDrift(vec![
            spec.drift.clone(),
            Arc::new(RotationalDrift {
                center: vec![0.0, 0.0],
                axes: (0, 1),
                rate,
            }),
        ]));
    }
    let gibbs = GibbsSpec::new(set, phi).with_box(Bounds::new(vec![0.0, 0.0], vec![5.0, 5.0]).unwrap(), 0.0);
    (spec, gibbs)
}

#[test]
fn criterion_4_reversibility() {
    let opts = ReversibilityOptions::new(10_000, 1.0, 1e-3, 4);
    let (spec, gibbs) = quadrant(0.0);
    let rev = reversibility_test(&spec, &gibbs, &opts).unwrap();
    let (spec, gibbs) = quadrant(2.0);
    let rot = reversibility_test(&spec, &gibbs, &opts).unwrap();
    let pass = rev.verdict == TestVerdict::Pass && rot.verdict == TestVerdict::Fail;
    report(
        4,
        pass,
        format!(
            "reversible: symmetry p {:.3}, stationarity p {:.3}; rotational: symmetry p {:.2e}, stationarity p {:.2e}",
            rev.symmetry.p_value, rev.stationarity.p_value, rot.symmetry.p_value, rot.stationarity.p_value
        ),
    );
    assert!(pass);
}

/// Largest difference between the oblique system and Θ times the normally
/// reflected transformed system, on the same noise.
fn oblique_gap(spec: &DynamicsSpec<f64>, x0: &[f64], horizon: f64, dt: f64, seed: u64) -> f64 {
    let t = transform_dynamics(spec).unwrap();
    let theta = spec.set.obliquity().theta().clone();
    let y0 = spec.set.obliquity().theta_inv().apply(x0);
    let a = simulate(spec, x0, horizon, dt, seed, &SimOptions::default()).unwrap();
    let b = simulate(&t, &y0, horizon, dt, seed, &SimOptions::default()).unwrap();
    sde::pathwise_difference(&a, &b, &theta)
}

/// Differences at or below this are rounding, not discretisation error.
const ROUNDOFF: f64 = 1e-10;

#[test]
fn criterion_5_oblique_equivalence() {
    let set = ConstraintSet::new(1).with("x", Affine::new(vec![1.0], 0.0)).unwrap();
    let line = DynamicsSpec::gibbs(set, Matrix::diagonal(&[2.0]), Arc::new(LinearPotential { coeffs: vec![1.0] })).unwrap();
    let model = PlanetModel::new(2, 2, 1.0, 0.1, 0.2)
        .with_temperature(0.6)
        .with_elasticity(0.7)
        .with_gravity(GravityLaw::Log { c: 3.0 });
    let planet = planet::build_dynamics(&model).unwrap();
    let x0 = model.spread_configuration();
    let cases = [("half-line", &line, vec![0.3]), ("planet", &planet, x0)];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, spec, x0) in cases {
        let fine = oblique_gap(spec, &x0, 1.0, 1e-3, 5);
        let coarse = oblique_gap(spec, &x0, 1.0, 4e-3, 5);
        let ok = fine <= coarse / 2.0 || coarse.max(fine) <= ROUNDOFF;
        pass &= ok;
        detail.push(format!("{name}: {fine:.2e} at 1e-3, {coarse:.2e} at 4e-3"));
    }
    report(5, pass, detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_local_time_contract() {
    let model = PlanetModel::new(4, 2, 1.0, 0.1, 0.2).with_gravity(GravityLaw::Log { c: 3.0 });
    let spec = planet::build_dynamics(&model).unwrap();
    let x0 = model.spread_configuration();
    let starts = vec![x0; 8];
    let mut ok = true;
    let (mut viol, mut infeasible, mut contacts) = (0, 0, 0.0);
    for r in simulate_ensemble(&spec, &starts, 10.0, 1e-3, 6, 0, 1) {
        let r = r.expect("path");
        let c = check_local_times(&spec, &r);
        ok &= c.monotone && c.starts_at_zero && r.diagnostics.negative_increments == 0;
        viol += c.support_violations + r.diagnostics.support_violations;
        infeasible += c.infeasible_states;
        let phys = planet::rescale_local_times(&r, &model).unwrap();
        for series in phys.planet.iter().chain(phys.pair.values()).chain(&phys.upper).chain(&phys.lower) {
            ok &= series.windows(2).all(|w| w[1] >= w[0]);
        }
        contacts += phys.planet.iter().map(|s| s.last().unwrap()).sum::<f64>();
    }
    let pass = ok && viol == 0 && infeasible == 0 && contacts > 0.0;
    report(
        6,
        pass,
        format!("8 paths: monotone {ok}, support violations {viol}, infeasible states {infeasible}, total planet local time {contacts:.3}"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_clustering_trend() {
    let t0 = Instant::now();
    let model = PlanetModel::new(4, 2, 1.0, 0.1, 0.15).with_gravity(GravityLaw::Log { c: 3.0 });
    let taus = [1.0, 0.5, 0.25, 0.1, 0.05];
    let curve = planet::clustering_curve(&model, &taus, 0.2, 2000, &planet::CurveOptions::new(7)).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let trend = curve.windows(2).all(|w| w[1].ci_low <= w[0].ci_high);
    let last = curve.last().unwrap().estimate;
    let pass = trend && last < 0.05 && secs < 900.0;
    let table: Vec<String> = curve
        .iter()
        .map(|p| format!("tau {} -> {:.4} [{:.4}, {:.4}]", p.tau, p.estimate, p.ci_low, p.ci_high))
        .collect();
    report(7, pass, format!("{}; {secs:.1} s", table.join(", ")));
    assert!(pass);
}

fn radial_gap_histogram(model: &PlanetModel<f64>, samples: &[Vec<f64>]) -> Histogram2d {
    let mut h = Histogram2d::new((0.0, 0.6), (0.0, 3.0), 20);
    for x in samples {
        let (alt, gap) = planet::altitude_and_gap(model, x);
        h.add(alt, gap);
    }
    h
}

#[test]
fn criterion_8_mcmc_vs_rejection() {
    let model = PlanetModel::new(2, 2, 1.0, 0.1, 0.2)
        .with_temperature(0.5)
        .with_gravity(GravityLaw::Log { c: 3.0 });
    let spec = planet::gibbs_spec(&model).unwrap();
    let n = 50_000;
    let exact = sample_rejection(&spec, n, &RejectionOptions::new(8)).unwrap().samples;
    let mut o = McmcOptions::new(n, 0.15, 8);
    o.thin = 50;
    o.chains = 8;
    let run = sample_mcmc(&spec, &o).unwrap();
    let a = radial_gap_histogram(&model, &exact);
    let b = radial_gap_histogram(&model, &run.samples);
    let tv = total_variation(&a.counts, &b.counts);
    let pass = tv < 0.05;
    report(
        8,
        pass,
        format!("TV {tv:.4} over 20x20 bins, MCMC acceptance {:.3}", run.acceptance_rate),
    );
    assert!(pass);
}

fn artifact(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:.16e}\n")).collect()
}

fn determinism_run(workers: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
    pool.install(|| {
        let (spec, gibbs) = half_line_gibbs();
        let starts: Vec<Vec<f64>> = (0..16).map(|i| vec![0.1 + i as f64 * 0.05]).collect();
        let mut out = artifact(sde_stationary(&spec, &starts, 0.5, 0.1, 10, 1e-3, 9));
        let mut o = McmcOptions::new(400, 0.8, 9);
        o.chains = 4;
        out += &artifact(sample_mcmc(&gibbs, &o).unwrap().samples.into_iter().map(|x| x[0]));
        let model = PlanetModel::new(3, 2, 1.0, 0.1, 0.15).with_gravity(GravityLaw::Log { c: 3.0 });
        let curve = planet::clustering_curve(&model, &[0.5, 0.1], 0.2, 100, &planet::CurveOptions::new(9)).unwrap();
        out += &artifact(curve.iter().flat_map(|p| [p.tau, p.estimate, p.ci_low, p.ci_high]));
        let r = planet::check_model(&PlanetModel::new(3, 2, 1.0, 0.1, 0.2), 200, 9, 0.1).unwrap();
        out += &artifact([r.compat.beta0_estimate, r.min_cone_beta]);
        let (qspec, qgibbs) = quadrant(0.0);
        let rev = reversibility_test(&qspec, &qgibbs, &ReversibilityOptions::new(300, 0.2, 1e-3, 9)).unwrap();
        out += &artifact([rev.symmetry.statistic, rev.stationarity.statistic]);
        out
    })
}

#[test]
fn criterion_9_determinism() {
    let one = determinism_run(1);
    let again = determinism_run(1);
    let four = determinism_run(4);
    let pass = one == again && one == four;
    report(9, pass, format!("{} bytes compared across 1, 1 and 4 workers", one.len()));
    assert!(pass);
}
