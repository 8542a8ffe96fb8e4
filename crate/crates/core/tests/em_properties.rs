use bgmoe::em::mstep::{
    gating_gradient, gating_objective, rate_gradient, rate_objective, shape_gradient, shape_objective,
};
use bgmoe::em::{check_identifiability, e_step, fit, fit_from, fit_with_report, EMConfig};
use bgmoe::moe::{ExpertParams, FittedModel, GatingParams};
use bgmoe::{sim, Column, Dataset, Design, ModelSpec, QuadratureConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Design {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut r = vec![1.0];
            r.extend((1..p).map(|_| rng.random_range(-1.0..1.0)));
            r
        })
        .collect();
    Design::from_rows(&rows).unwrap()
}

fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let h = 1e-6 * x[k].abs().max(1.0);
            let mut up = x.to_vec();
            let mut dn = x.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}

fn assert_gradient(analytic: &[f64], numeric: &[f64]) {
    let scale = analytic.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (a, n) in analytic.iter().zip(numeric) {
        assert!((a - n).abs() <= 1e-5 * scale, "analytic {a} vs numeric {n}");
    }
}

#[test]
fn shape_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = rng.random_range(1..5);
        let x = random_design(&mut rng, 30, p);
        let w: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..1.0)).collect();
        let c: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..2.0)).collect();
        let coefs: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
        let fd = central_difference(|b| shape_objective(&x, &w, &c, b), &coefs);
        assert_gradient(&shape_gradient(&x, &w, &c, &coefs), &fd);
    }
}

#[test]
fn rate_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let p = rng.random_range(1..5);
        let x = random_design(&mut rng, 30, p);
        let a: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..5.0)).collect();
        let s: Vec<f64> = (0..30).map(|_| rng.random_range(0.1..5.0)).collect();
        let coefs: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
        let fd = central_difference(|b| rate_objective(&x, &a, &s, b), &coefs);
        assert_gradient(&rate_gradient(&x, &a, &s, &coefs), &fd);
    }
}

#[test]
fn gating_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let p = rng.random_range(1..4);
        let g = rng.random_range(2..5);
        let x = random_design(&mut rng, 30, p);
        let mut z = Vec::with_capacity(30 * g);
        for _ in 0..30 {
            let row: Vec<f64> = (0..g).map(|_| rng.random_range(0.01..1.0)).collect();
            let t: f64 = row.iter().sum();
            z.extend(row.iter().map(|v| v / t));
        }
        let coefs: Vec<f64> = (0..(g - 1) * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let fd = central_difference(|b| gating_objective(&x, &z, g, b), &coefs);
        assert_gradient(&gating_gradient(&x, &z, g, &coefs), &fd);
    }
}

fn study1(seed: u64) -> Dataset {
    sim::simulate_study1(500, seed).unwrap().to_dataset(false).unwrap()
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn intercept_only_regression_family_equals_constant_family() {
    let data = study1(3);
    let q = QuadratureConfig::default();
    let cfg = EMConfig {
        tol: 1e-8,
        restarts: 2,
        ..Default::default()
    };
    let cc = fit(&data, &ModelSpec::constant(2), &cfg, &q).unwrap();
    let vv = fit(&data, &ModelSpec::build("VVV", 2, vec![], Default::default(), vec![]).unwrap(), &cfg, &q).unwrap();
    assert!((cc.loglik - vv.loglik).abs() < 1e-6, "{} vs {}", cc.loglik, vv.loglik);
    assert_eq!(cc.n_params, vv.n_params);
}

#[test]
fn em_is_monotone_and_refitting_is_a_fixed_point() {
    let q = QuadratureConfig::default();
    let cfg = EMConfig {
        tol: 1e-8,
        restarts: 2,
        ..Default::default()
    };
    let s2 = sim::simulate_study2(500, 5).unwrap().to_dataset(false).unwrap();
    let cases = [
        (study1(4), ModelSpec::build("VCC", 2, names(&["w1", "w2", "w3"]), Default::default(), vec![]).unwrap()),
        (
            s2,
            ModelSpec::build(
                "VVC",
                2,
                names(&["w1", "w2", "w3"]),
                [names(&["w1", "w2"]), names(&["w2", "w3"]), names(&["w2", "w3"])],
                vec![],
            )
            .unwrap(),
        ),
    ];
    for (data, spec) in cases {
        let report = fit_with_report(&data, &spec, &cfg, &q).unwrap();
        for r in &report.restarts {
            for pair in r.trace.windows(2) {
                assert!(pair[1].loglik >= pair[0].loglik - 1e-6 * pair[0].loglik.abs());
            }
        }
        let m = report.model;
        let (again, _) = fit_from(&data, &m, &cfg, &q).unwrap();
        assert!(((again.loglik - m.loglik) / m.loglik).abs() < 1e-8);
    }
}

#[test]
fn responsibilities_and_identities() {
    let data = study1(5);
    let q = QuadratureConfig::default();
    let m = fit(&data, &ModelSpec::constant(2), &EMConfig::default(), &q).unwrap();
    let cache = e_step(&data, &m, &q).unwrap();
    let y = data.responses().unwrap();
    for i in 0..data.len() {
        let row = &cache.z[i * 2..i * 2 + 2];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for g in 0..2 {
            let j = i * 2 + g;
            assert!(cache.x3[j] > 0.0 && cache.x3[j] < y[i][0].min(y[i][1]));
            assert_eq!(cache.x1[j], y[i][0] - cache.x3[j]);
            assert_eq!(cache.x2[j], y[i][1] - cache.x3[j]);
        }
    }
    // canonical order: ascending mean of Y1 + Y2
    let designs = m.designs(&data).unwrap();
    let comps = m.observation_params(&designs, 0).unwrap();
    assert!(comps[0].total_mean() <= comps[1].total_mean());
}

#[test]
fn fits_are_deterministic_across_thread_counts() {
    let data = study1(6);
    let q = QuadratureConfig::default();
    let spec = ModelSpec::constant(2);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fit(&data, &spec, &EMConfig::default(), &q).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    assert_eq!(a, b);
}

/// The generating parameters of the first simulation design as a
/// constant-weight two-component model.
fn study1_truth(weight_second: f64) -> FittedModel {
    FittedModel {
        spec: ModelSpec::constant(2),
        schema: vec![],
        gating: GatingParams::Weights(vec![1.0 - weight_second, weight_second]),
        alpha: [
            ExpertParams::Constant(vec![0.8, 2.6]),
            ExpertParams::Constant(vec![7.9, 2.0]),
            ExpertParams::Constant(vec![5.0, 0.5]),
        ],
        beta: ExpertParams::Constant(vec![1.9, 1.0]),
        loglik: f64::NAN,
        n_params: 9,
        n_obs: 500,
        converged: true,
        iterations: 0,
        responsibilities: None,
    }
}

#[test]
fn generating_parameters_reach_reference_loglik() {
    // Average over seeds: one draw of 500 rows has a log-likelihood
    // standard deviation of about 30.
    let q = QuadratureConfig::default();
    let lls: Vec<f64> = (0..6)
        .map(|s| {
            let data = study1(100 + s);
            let share = sim::simulate_study1(500, 100 + s).unwrap().true_labels.iter().sum::<usize>() as f64 / 500.0;
            e_step(&data, &study1_truth(share), &q).unwrap().loglik
        })
        .collect();
    let mean = lls.iter().sum::<f64>() / lls.len() as f64;
    assert!((mean / -1969.98 - 1.0).abs() < 0.01, "mean loglik {mean}, per seed {lls:?}");
}

#[test]
fn identifiability_report() {
    let data = study1(8);
    let q = QuadratureConfig::default();
    let spec = ModelSpec::build("VCC", 2, names(&["w1", "w2", "w3"]), Default::default(), vec![]).unwrap();
    let m = fit(&data, &spec, &EMConfig::default(), &q).unwrap();
    let report = check_identifiability(&m, &data, &q).unwrap();
    assert!(report.pass, "{report:?}");

    // a duplicated covariate makes the gating block singular
    let mut names_dup = data.column_names().to_vec();
    let mut cols: Vec<Column> = names_dup.iter().map(|n| data.column(n).unwrap().clone()).collect();
    names_dup.push("w1_copy".into());
    cols.push(data.column("w1").unwrap().clone());
    let dup = Dataset::new(data.responses().unwrap().to_vec(), names_dup, cols).unwrap();
    let mut m2 = m.clone();
    m2.spec.gating.covariates.push("w1_copy".into());
    m2.schema.push(("w1_copy".into(), bgmoe::ColumnKind::Numeric));
    if let GatingParams::Regression(rows) = &mut m2.gating {
        rows[0].push(0.0);
    }
    let report = check_identifiability(&m2, &dup, &q).unwrap();
    assert!(!report.pass);
}
