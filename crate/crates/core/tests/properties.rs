use std::f64::consts::PI;

use proptest::prelude::*;
use rayon::prelude::*;

use ergokit::certify::{
    cauchy_h2_bound, certify_exactness, eval_h2, inf_h_product, ricker_closed_form_criterion,
};
use ergokit::conjugacy::{pushforward_density, ConjugacyPair, ConjugatedMap};
use ergokit::maps::{IntervalMap, MapSpec};
use ergokit::sampling::{
    covariance, sample_invariant_state, sample_ou, sample_wiener, LevyField, Moments, PathSample,
};
use ergokit::semiflow::{
    linear_semiflow, nonlinear_density_flow, size_structured_step, turbulence_report_for,
    GridFunction, SizeModel,
};
use ergokit::transfer::{apply_fp, invariant_density, iterate_density, ulam_matrix, GridDensity};

fn catalog() -> Vec<MapSpec> {
    vec![
        MapSpec::tent(),
        MapSpec::logistic(),
        MapSpec::cubic().unwrap(),
        MapSpec::beverton_holt(3.0).unwrap(),
        MapSpec::ricker(0.4).unwrap(),
    ]
}

fn smooth_catalog() -> Vec<MapSpec> {
    catalog().into_iter().filter(|m| m.is_smooth()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn branch_inverses_solve_the_map(which in 0usize..5, s in 1e-9f64..1.0) {
        let map = &catalog()[which];
        let y = s * map.domain_len();
        for p in map.branch_inverses(y) {
            prop_assert!((map.apply(p.x) - y).abs() <= 1e-10);
            let peak = map.peak();
            if p.branch == 0 {
                prop_assert!(p.x <= peak + 1e-12);
            } else {
                prop_assert!(p.x >= peak - 1e-12);
            }
        }
    }

    #[test]
    fn transfer_preserves_mass_and_sign(
        which in 0usize..5,
        weights in prop::collection::vec(0.0f64..1.0, 8..400),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-3);
        let map = &catalog()[which];
        let f = GridDensity::from_weights(map.domain_len(), weights).unwrap();
        let out = apply_fp(map, &f).unwrap().density;
        prop_assert!((out.total_mass() - f.total_mass()).abs() <= 1e-8);
        prop_assert!(out.masses().iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn linear_semiflow_is_linear(
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        p in 0.5f64..4.0,
        q in 1.0f64..8.0,
        lambda in 0.2f64..3.0,
        t in 0.0f64..3.0,
    ) {
        // The monotone interpolant is not a linear operator, so the defect is
        // measured against the interpolation errors of the three inputs.
        let n = 401;
        let fv = |x: f64| x.powf(p);
        let fw = |x: f64| (q * x).sin();
        let fc = |x: f64| a * fv(x) + b * fw(x);
        let v = GridFunction::from_fn(n, true, fv).unwrap();
        let w = GridFunction::from_fn(n, true, fw).unwrap();
        let combo = GridFunction::from_fn(n, true, fc).unwrap();
        let lhs = linear_semiflow(lambda, &combo, t).unwrap();
        let sv = linear_semiflow(lambda, &v, t).unwrap();
        let sw = linear_semiflow(lambda, &w, t).unwrap();
        let grow = (lambda * t).exp();
        let shrink = (-t).exp();
        let err = |out: &GridFunction, f: &dyn Fn(f64) -> f64| -> f64 {
            out.nodes().zip(out.values()).map(|(x, y)| (y - grow * f(shrink * x)).abs()).fold(0.0, f64::max)
        };
        let budget = err(&lhs, &fc) + a.abs() * err(&sv, &fv) + b.abs() * err(&sw, &fw);
        prop_assert!(budget <= 1e-2 * grow * (a.abs() + b.abs() + 1.0));
        for ((l, x), y) in lhs.values().iter().zip(sv.values()).zip(sw.values()) {
            prop_assert!((l - (a * x + b * y)).abs() <= budget + 1e-12 * grow);
        }
    }

    #[test]
    fn semiflows_keep_nonnegative_states(
        bumps in prop::collection::vec((0.0f64..1.0, 0.01f64..0.2, 0.0f64..2.0), 1..5),
        t in 0.0f64..2.0,
    ) {
        let n = 513;
        let f = |x: f64| -> f64 {
            bumps.iter().map(|(c, w, h)| h * (-(x - c).powi(2) / (w * w)).exp()).sum::<f64>()
        };
        let v = GridFunction::from_fn(n, true, |x| x * f(x)).unwrap();
        let out = linear_semiflow(1.3, &v, t).unwrap();
        prop_assert!(out.values().iter().all(|y| *y >= -1e-12));
        let u0 = GridFunction::from_fn(n, false, f).unwrap();
        let model = SizeModel::new(1.0, 0.5, 0.3).unwrap();
        let sized = size_structured_step(model, &u0, 1e-3, 200).unwrap();
        prop_assert!(sized.u.values().iter().all(|y| *y >= 0.0));
        prop_assert!(sized.most_negative >= -1e-12 || sized.clipped_nodes > 0);
    }

    #[test]
    fn conjugacy_round_trip(k in 0.1f64..20.0, s in 1e-6f64..(1.0 - 1e-6)) {
        let pair = ConjugacyPair::new(k).unwrap();
        let x = s * k;
        prop_assert!((pair.forward(pair.inverse(x)) - x).abs() <= 1e-12 * k.max(1.0));
    }
}

#[test]
fn conjugated_dynamics_commute() {
    for map in catalog() {
        let c = ConjugatedMap::new(map.clone());
        let pair = *c.pair();
        let k = map.domain_len();
        for i in 0..=10_000 {
            let u = PI * i as f64 / 10_000.0;
            let lhs = pair.forward(c.apply(u));
            let rhs = map.apply(pair.forward(u));
            assert!(
                (lhs - rhs).abs() <= 1e-10 * k.max(1.0),
                "{:?} at u = {u}: {lhs} vs {rhs}",
                map.kind()
            );
        }
    }
}

#[test]
fn ulam_matches_transfer_operator() {
    for map in catalog() {
        let n = 1024;
        let m = ulam_matrix(&map, n).unwrap();
        let weights: Vec<f64> = (0..n)
            .map(|i| 1.0 + (i as f64 * 0.37).sin().abs())
            .collect();
        let f = GridDensity::from_weights(map.domain_len(), weights).unwrap();
        let via_operator = apply_fp(&map, &f).unwrap().density;
        let via_matrix = m.left_mul(f.masses());
        let l1: f64 = via_operator
            .masses()
            .iter()
            .zip(&via_matrix)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 <= 1e-3, "{:?}: {l1}", map.kind());
        assert!(m.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
    }
}

#[test]
fn invariant_density_transports_through_conjugacy() {
    for map in smooth_catalog() {
        let n = 1024;
        let c = ConjugatedMap::new(map.clone());
        let conj = invariant_density(&ulam_matrix(&c, n).unwrap(), 1e-12, 100_000)
            .unwrap()
            .density;
        let direct = invariant_density(&ulam_matrix(&map, n).unwrap(), 1e-12, 100_000)
            .unwrap()
            .density;
        let pushed = pushforward_density(&conj, c.pair()).unwrap();
        let l1 = pushed.l1_distance(&direct);
        assert!(l1 <= 0.05, "{:?}: {l1}", map.kind());
    }
}

#[test]
fn logistic_density_blows_up_at_the_ends() {
    // endpoint value of a bin-averaged g* grows like 1/sqrt(width)
    let pair = ConjugacyPair::new(1.0).unwrap();
    let mut previous: Option<(f64, f64)> = None;
    for bins in [64usize, 128, 256, 512] {
        let g = pushforward_density(&GridDensity::uniform(PI, bins), &pair).unwrap();
        let v = g.values();
        let (left, right) = (v[0], v[bins - 1]);
        assert!((left - right).abs() <= 1e-9 * left);
        if let Some((pl, pr)) = previous {
            assert!(
                (left / pl - 2f64.sqrt()).abs() <= 0.01,
                "ratio {}",
                left / pl
            );
            assert!((right / pr - 2f64.sqrt()).abs() <= 0.01);
        }
        previous = Some((left, right));
    }
}

#[test]
fn tent_halves_lipschitz_constant() {
    let n = 4096;
    let f0 = GridDensity::from_density_fn(1.0, n, |x| 0.5 + x).unwrap();
    let l0 = f0.lipschitz_estimate(1);
    let mut f = f0;
    for t in 1..=4 {
        f = apply_fp(&MapSpec::tent(), &f).unwrap().density;
        let lt = f.lipschitz_estimate(1);
        assert!(lt <= l0 / 2f64.powi(t) + 1e-9, "step {t}: {lt}");
    }
    let fixed = GridDensity::uniform(1.0, 256);
    let trace = iterate_density(&MapSpec::tent(), &fixed, 5, Some(&fixed)).unwrap();
    assert!(trace.distances.iter().all(|d| *d <= 2e-12));
}

#[test]
fn certification_is_scale_consistent() {
    for map in smooth_catalog() {
        let coarse = inf_h_product(&map, 10_000).unwrap();
        let fine = inf_h_product(&map, 100_000).unwrap();
        assert!(
            (coarse.raw_infimum - fine.raw_infimum).abs() <= coarse.safety_margin,
            "{:?}",
            map.kind()
        );
        let cauchy = cauchy_h2_bound(&map).unwrap();
        if !cauchy.degenerate {
            let min_h2 = (0..=10_000)
                .map(|i| eval_h2(&map, map.domain_len() * i as f64 / 10_000.0).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(
                cauchy.bound <= min_h2 + 1e-8,
                "{:?}: {} > {min_h2}",
                map.kind(),
                cauchy.bound
            );
        }
    }
    for lambda in [0.1, 0.2, 0.3, 0.4, 0.46] {
        assert!(ricker_closed_form_criterion(lambda).unwrap().certified);
        let rep = certify_exactness(&MapSpec::ricker(lambda).unwrap(), 100_000).unwrap();
        assert!(rep.raw_infimum.unwrap() > 1.0, "lambda {lambda}");
    }
}

fn assert_gaussian(label: &str, xs: &[f64]) {
    let m = Moments::of(xs).unwrap();
    assert!(m.skewness.abs() <= 0.08, "{label}: skewness {}", m.skewness);
    assert!(
        m.excess_kurtosis.abs() <= 0.15,
        "{label}: excess kurtosis {}",
        m.excess_kurtosis
    );
}

fn column(ens: &[PathSample], k: usize) -> Vec<f64> {
    ens.iter().map(|p| p.values[k]).collect()
}

#[test]
fn sampler_marginals_are_gaussian() {
    let n = 10_000u64;
    let times = [0.0, 0.25, 0.5, 1.0];
    let wiener: Vec<PathSample> = (0..n)
        .into_par_iter()
        .map(|i| sample_wiener(&times, 1, i).unwrap())
        .collect();
    let ou: Vec<PathSample> = (0..n)
        .into_par_iter()
        .map(|i| sample_ou(1.0, &times, 2, i).unwrap())
        .collect();
    for k in 1..4 {
        assert_gaussian("wiener", &column(&wiener, k));
        assert_gaussian("ou", &column(&ou, k));
    }
    let xs = [0.25, 0.5, 1.0];
    let zeta: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| sample_invariant_state(1.0, &xs, 3, i, false).unwrap())
        .collect();
    for k in 0..3 {
        assert_gaussian("zeta", &zeta.iter().map(|z| z[k]).collect::<Vec<_>>());
    }
    let var_half = Moments::of(&zeta.iter().map(|z| z[1]).collect::<Vec<_>>())
        .unwrap()
        .variance_estimate();
    assert!(var_half.z_score(0.25).abs() <= 3.0);

    let points: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0],
        vec![0.3, 0.4],
        vec![1.0, 0.0],
        vec![0.0, 2.0],
    ];
    let field = LevyField::new(&points).unwrap();
    let draws: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| field.sample(4, i)).collect();
    assert!(draws.iter().all(|d| d[0] == 0.0));
    for (k, norm) in [(1usize, 0.5), (2, 1.0), (3, 2.0)] {
        let col: Vec<f64> = draws.iter().map(|d| d[k]).collect();
        assert_gaussian("levy", &col);
        let var = Moments::of(&col).unwrap().variance_estimate();
        assert!(var.z_score(norm).abs() <= 3.0, "levy variance at {k}");
    }
}

#[test]
fn wiener_and_levy_covariances() {
    let n = 10_000u64;
    let w: Vec<PathSample> = (0..n)
        .into_par_iter()
        .map(|i| sample_wiener(&[0.0, 0.5, 1.0], 5, i).unwrap())
        .collect();
    assert!(w.iter().all(|p| p.values[0] == 0.0));
    let cov = covariance(&column(&w, 1), &column(&w, 2)).unwrap();
    assert!(cov.z_score(0.5).abs() <= 3.0);
    let var = Moments::of(&column(&w, 2)).unwrap().variance_estimate();
    assert!(var.z_score(1.0).abs() <= 3.0);

    let points: Vec<Vec<f64>> = vec![vec![0.0], vec![0.4], vec![1.5]];
    let field = LevyField::new(&points).unwrap();
    let draws: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| field.sample(6, i)).collect();
    let a: Vec<f64> = draws.iter().map(|d| d[1]).collect();
    let b: Vec<f64> = draws.iter().map(|d| d[2]).collect();
    assert!(covariance(&a, &b).unwrap().z_score(0.4).abs() <= 3.0);
}

#[test]
fn ou_is_shift_invariant() {
    let times: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1).collect();
    let ens: Vec<PathSample> = (0..10_000u64)
        .into_par_iter()
        .map(|i| sample_ou(1.0, &times, 8, i).unwrap())
        .collect();
    let early = Moments::of(&column(&ens, 0)).unwrap();
    let late = Moments::of(&column(&ens, 25)).unwrap();
    let se_mean = (early.variance / 10_000.0).sqrt() * 2f64.sqrt();
    assert!((early.mean - late.mean).abs() <= 3.0 * se_mean);
    let se_var = early.variance_estimate().std_error * 2f64.sqrt();
    assert!((early.variance - late.variance).abs() <= 3.0 * se_var);
}

#[test]
fn invariant_state_is_refinement_consistent() {
    let coarse: Vec<f64> = (1..=50).map(|k| k as f64 / 50.0).collect();
    let fine: Vec<f64> = (1..=200).map(|k| k as f64 / 200.0).collect();
    for index in 0..20 {
        let a = sample_invariant_state(1.5, &coarse, 12, index, false).unwrap();
        let b = sample_invariant_state(1.5, &fine, 12, index, false).unwrap();
        for (i, v) in a.iter().enumerate() {
            assert_eq!(*v, b[4 * i + 3]);
        }
    }
}

#[test]
fn semigroup_property() {
    let lambda = 1.2;
    let v = GridFunction::from_fn(1001, true, |x| x * (1.0 + (5.0 * x).sin().powi(2))).unwrap();
    let two_step =
        linear_semiflow(lambda, &linear_semiflow(lambda, &v, 0.4).unwrap(), 0.7).unwrap();
    let one_step = linear_semiflow(lambda, &v, 1.1).unwrap();
    let scale = (lambda * 1.1).exp();
    assert!(two_step.sup_distance(&one_step) <= 1e-6 * scale);
}

#[test]
fn density_flow_stays_in_the_admissible_set() {
    let n = 1001;
    let p0 = GridFunction::from_fn(n, true, |x| x * (1.0 + 3.0 * x * x))
        .unwrap()
        .normalized()
        .unwrap();
    for t in [0.1, 1.0, 5.0] {
        let p = nonlinear_density_flow(&p0, t).unwrap();
        let head = (n - 1) / 100;
        assert!(p.values()[1..=head].iter().any(|y| *y > 0.0));
        assert!((p.integral() - 1.0).abs() <= 1e-10);
    }
}

#[test]
fn fixed_point_trace_has_no_correlations() {
    let lambda = 1.0;
    let v = GridFunction::from_fn(2001, true, |x| x.powf(lambda)).unwrap();
    let lags: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
    let rep = turbulence_report_for(lambda, &v, 500.0, 0.01, &lags).unwrap();
    assert!(!rep.gamma0_nonzero);
    assert!(rep.gamma[0].abs() < rep.noise_floor);
}
