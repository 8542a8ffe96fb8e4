use bgmoe::bgdist::moments;
use bgmoe::metrics::mixture_samples;
use bgmoe::moe::{gating_probs, link_alpha, mixture_moments, param_count, ExpertParams, FittedModel, GatingParams, NetworkDims};
use bgmoe::select::{aic, bic};
use bgmoe::{BGParams, Column, Dataset, ModelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn link_and_gating_examples() {
    assert_eq!(link_alpha(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 1.0);
    assert!((link_alpha(&[2f64.ln(), 0.0], &[1.0, -7.0]).unwrap() - 2.0).abs() < 1e-15);
    assert!((link_alpha(&[1.0, 0.2, 0.2], &[1.0, 0.0, 0.0]).unwrap() - 1f64.exp()).abs() < 1e-15);
    assert!(link_alpha(&[800.0], &[1.0]).is_err());
    let p = gating_probs(&[vec![1.0, 2.0, -2.0, 3.0]], &[1.0, 0.0, 0.0, 0.0]);
    assert!((p[0] - 0.7310585786300049).abs() < 1e-15);
    assert!((p[1] - 0.2689414213699951).abs() < 1e-15);
    assert_eq!(gating_probs(&[vec![0.0], vec![0.0]], &[1.0]), vec![1.0 / 3.0; 3]);
}

#[test]
fn parameter_counts_reproduce_reference_criteria() {
    let dims = |g: usize| NetworkDims {
        gating: g,
        alpha: [1, 1, 1],
        beta: 1,
    };
    assert_eq!(param_count(&ModelSpec::constant(1), &dims(1)), 4);
    assert_eq!(param_count(&ModelSpec::constant(2), &dims(1)), 9);
    let vcc = ModelSpec::build("VCC", 2, vec!["w1".into(), "w2".into(), "w3".into()], Default::default(), vec![]).unwrap();
    let k = param_count(&vcc, &dims(4));
    assert_eq!(k, 12);
    assert!((aic(-2079.97, 4) - 4167.94).abs() < 1e-9);
    assert!((bic(-2079.97, 4, 500) - 4184.80).abs() < 5e-3);
    assert!((aic(-1969.98, 9) - 3957.96).abs() < 1e-9);
    assert!((bic(-1969.98, 9, 500) - 3995.89).abs() < 5e-3);
    // (BIC − AIC) / (ln n − 2) recovers k for the reported VCC row
    assert!(((3822.12 - 3771.54) / (500f64.ln() - 2.0) - k as f64).abs() < 0.01);
}

fn random_params(rng: &mut ChaCha8Rng) -> BGParams {
    BGParams::new(
        rng.random_range(0.3..6.0),
        rng.random_range(0.3..6.0),
        rng.random_range(0.05..3.0),
        rng.random_range(0.5..3.0),
    )
    .unwrap()
}

/// Sample moments with standard errors of each entry.
fn sample_moments(draws: &[[f64; 2]]) -> ([f64; 5], [f64; 5]) {
    let n = draws.len() as f64;
    let m0 = draws.iter().map(|d| d[0]).sum::<f64>() / n;
    let m1 = draws.iter().map(|d| d[1]).sum::<f64>() / n;
    let terms = |d: &[f64; 2]| {
        let (a, b) = (d[0] - m0, d[1] - m1);
        [d[0], d[1], a * a, a * b, b * b]
    };
    let mut mean = [0.0; 5];
    for d in draws {
        for (m, t) in mean.iter_mut().zip(terms(d)) {
            *m += t / n;
        }
    }
    let mut var = [0.0; 5];
    for d in draws {
        for ((v, t), m) in var.iter_mut().zip(terms(d)).zip(mean) {
            *v += (t - m).powi(2) / (n - 1.0);
        }
    }
    (mean, var.map(|v| (v / n).sqrt()))
}

#[test]
fn mixture_moments_match_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut cases: Vec<(Vec<BGParams>, Vec<f64>)> = vec![(
        vec![BGParams::new(5.0, 1.0, 0.01, 1.0).unwrap(), BGParams::new(1.0, 5.0, 0.01, 1.0).unwrap()],
        vec![0.5, 0.5],
    )];
    for _ in 0..4 {
        let g = rng.random_range(1..4);
        let comps: Vec<BGParams> = (0..g).map(|_| random_params(&mut rng)).collect();
        let raw: Vec<f64> = (0..g).map(|_| rng.random_range(0.1..1.0)).collect();
        let t: f64 = raw.iter().sum();
        cases.push((comps, raw.iter().map(|v| v / t).collect()));
    }
    for (idx, (comps, w)) in cases.iter().enumerate() {
        let exact = mixture_moments(comps, w).unwrap();
        let draws = mixture_samples(w, comps, 200_000, &mut ChaCha8Rng::seed_from_u64(idx as u64));
        let (est, se) = sample_moments(&draws);
        let want = [exact.mean[0], exact.mean[1], exact.cov[0][0], exact.cov[0][1], exact.cov[1][1]];
        for j in 0..5 {
            assert!((est[j] - want[j]).abs() < 4.0 * se[j], "case {idx} entry {j}: {} vs {}", est[j], want[j]);
        }
        if idx == 0 {
            assert!(exact.cov[0][1] < 0.0);
        }
    }
}

#[test]
fn mixture_moments_degenerate_cases() {
    let p = BGParams::new(1.5, 2.5, 0.7, 1.3).unwrap();
    let single = mixture_moments(&[p], &[1.0]).unwrap();
    let twin = mixture_moments(&[p, p], &[0.3, 0.7]).unwrap();
    let m = moments(&p);
    for r in 0..2 {
        assert!((single.mean[r] - m.mean[r]).abs() < 1e-14);
        assert!((twin.mean[r] - m.mean[r]).abs() < 1e-12);
        for c in 0..2 {
            assert!((single.cov[r][c] - m.cov[r][c]).abs() < 1e-14);
            assert!((twin.cov[r][c] - m.cov[r][c]).abs() < 1e-12);
        }
    }
}

fn vvc_model(coefs: &[f64]) -> (FittedModel, Dataset) {
    let spec = ModelSpec::build("VVC", 3, vec!["x".into()], [vec!["x".into()], vec![], vec![]], vec![]).unwrap();
    let xs: Vec<f64> = (0..25).map(|i| -1.2 + 0.1 * i as f64).collect();
    let data = Dataset::new(
        xs.iter().map(|_| [1.0, 1.0]).collect(),
        vec!["x".into()],
        vec![Column::Numeric(xs.clone())],
    )
    .unwrap();
    let model = FittedModel {
        schema: bgmoe::em::schema(&data, &spec).unwrap(),
        spec,
        gating: GatingParams::Regression(vec![vec![coefs[0], coefs[1]], vec![coefs[2], coefs[3]]]),
        alpha: [
            ExpertParams::Regression(vec![vec![coefs[4], coefs[5]], vec![0.1, -0.3], vec![0.9, 0.2]]),
            ExpertParams::Regression(vec![vec![0.2], vec![0.5], vec![-0.1]]),
            ExpertParams::Regression(vec![vec![0.0], vec![-1.0], vec![0.3]]),
        ],
        beta: ExpertParams::Constant(vec![1.0, 2.0, 0.5]),
        loglik: f64::NAN,
        n_params: 0,
        n_obs: 25,
        converged: true,
        iterations: 0,
        responsibilities: None,
    };
    (model, data)
}

proptest! {
    #[test]
    fn gating_probs_sum_to_one(coefs in prop::collection::vec(-50.0f64..50.0, 6), w in prop::collection::vec(-3.0f64..3.0, 2)) {
        let rows = vec![coefs[0..3].to_vec(), coefs[3..6].to_vec()];
        let mut w0 = vec![1.0];
        w0.extend(w);
        let p = gating_probs(&rows, &w0);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn predictions_are_convex_combinations(coefs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let (model, data) = vvc_model(&coefs);
        let designs = model.designs(&data).unwrap();
        for i in 0..data.len() {
            let tau = model.gating_weights(&designs, i);
            prop_assert!((tau.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let comps = model.observation_params(&designs, i).unwrap();
            prop_assert!(comps.iter().all(|c| c.validate().is_ok()));
            prop_assert_eq!(comps[0].beta, 1.0);
            let yhat = model.predict_mean(&designs, i).unwrap();
            for r in 0..2 {
                let means: Vec<f64> = comps.iter().map(|c| moments(c).mean[r]).collect();
                let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(yhat[r] >= lo * (1.0 - 1e-12) && yhat[r] <= hi * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn canonical_order_is_ascending(coefs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let (mut model, data) = vvc_model(&coefs);
        let designs = model.designs(&data).unwrap();
        let before: Vec<f64> = (0..data.len()).map(|i| model.predict_mean(&designs, i).unwrap()[0]).collect();
        model.canonicalize(&designs).unwrap();
        let mut avg = [0.0; 3];
        for i in 0..data.len() {
            for (g, c) in model.observation_params(&designs, i).unwrap().iter().enumerate() {
                avg[g] += c.total_mean();
            }
            // relabeling does not change the mixture
            let after = model.predict_mean(&designs, i).unwrap()[0];
            prop_assert!((after - before[i]).abs() <= 1e-10 * before[i].abs().max(1.0));
        }
        prop_assert!(avg[0] <= avg[1] && avg[1] <= avg[2]);
    }
}
