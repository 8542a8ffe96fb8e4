use bgmoe::baseline::{fit_gamma_glm, predict_glm};
use bgmoe::{Design, Error};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

#[test]
fn recovers_log_linear_gamma_coefficients() {
    let truth: [f64; 3] = [0.5, 0.8, -0.4];
    let shape = 3.0;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 5000;
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let r = vec![1.0, rng.random_range(-1.0..1.0), rng.random_range(0.0..2.0)];
        let mu = (truth[0] + truth[1] * r[1] + truth[2] * r[2]).exp();
        y.push(Gamma::new(shape, mu / shape).unwrap().sample(&mut rng));
        rows.push(r);
    }
    let x = Design::from_rows(&rows).unwrap();
    let fit = fit_gamma_glm(&y, &x).unwrap();
    for k in 0..3 {
        let z = (fit.coefficients[k] - truth[k]) / fit.std_errors[k];
        assert!(z.abs() < 3.0, "coefficient {k}: {} (se {})", fit.coefficients[k], fit.std_errors[k]);
    }
    assert!((fit.dispersion - 1.0 / shape).abs() < 0.03);
    let pred = predict_glm(&fit, &x).unwrap();
    assert!(pred.iter().all(|p| *p > 0.0));
}

#[test]
fn intercept_only_reproduces_the_mean() {
    let y = [0.3, 1.7, 2.2, 5.0, 0.9, 3.3];
    let fit = fit_gamma_glm(&y, &Design::intercept(y.len())).unwrap();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    assert!((fit.coefficients[0].exp() - mean).abs() < 1e-12 * mean);
}

#[test]
fn duplicated_column_is_rank_deficient() {
    let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64, i as f64]).collect();
    let y: Vec<f64> = (0..20).map(|i| 1.0 + i as f64).collect();
    let err = fit_gamma_glm(&y, &Design::from_rows(&rows).unwrap()).unwrap_err();
    assert!(matches!(err, Error::RankDeficient(_)), "{err}");
}

#[test]
fn rejects_non_positive_responses() {
    let y = [1.0, 0.0, 2.0];
    assert!(fit_gamma_glm(&y, &Design::intercept(3)).is_err());
}
