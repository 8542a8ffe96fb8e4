use bgmoe::metrics::{adjusted_rand, crps_empirical, gini_ordered, misclassification, wasserstein_1d};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn crps_double_loop(s: &[f64], y: f64) -> f64 {
    let m = s.len() as f64;
    let a: f64 = s.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    let mut b = 0.0;
    for x in s {
        for z in s {
            b += (x - z).abs();
        }
    }
    a - 0.5 * b / (m * m)
}

/// Concentration curve by explicit trapezoids: every tie group is spread
/// evenly over its members before integrating.
fn gini_trapezoid(pred: &[f64], act: &[f64]) -> f64 {
    let n = pred.len();
    let total: f64 = act.iter().sum();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| pred[*a].partial_cmp(&pred[*b]).unwrap());
    let mut shares = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut e = k;
        while e < n && pred[idx[e]] == pred[idx[k]] {
            e += 1;
        }
        let avg = idx[k..e].iter().map(|&i| act[i]).sum::<f64>() / (e - k) as f64;
        for s in &mut shares[k..e] {
            *s = avg / total;
        }
        k = e;
    }
    let mut area = 0.0;
    let mut cum = 0.0;
    for s in shares {
        area += (cum + cum + s) / 2.0 / n as f64;
        cum += s;
    }
    2.0 * (0.5 - area)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Optimal transport between two empirical measures by exhaustive matching,
/// after replicating the supports to a common size when they differ.
fn wasserstein_matching(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = if a.len() == b.len() {
        (a.to_vec(), b.to_vec())
    } else {
        replicate(a, b)
    };
    let k = ra.len();
    permutations(k)
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| (ra[i] - rb[j]).abs()).sum::<f64>() / k as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Both supports repeated to a common size of `|a|·|b|` equal-weight atoms.
fn replicate(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ra: Vec<f64> = a.iter().flat_map(|v| std::iter::repeat_n(*v, b.len())).collect();
    let rb: Vec<f64> = b.iter().flat_map(|v| std::iter::repeat_n(*v, a.len())).collect();
    (ra, rb)
}

#[test]
fn crps_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let m = rng.random_range(2..40);
        let s: Vec<f64> = (0..m).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y = rng.random_range(-6.0..6.0);
        let fast = crps_empirical(&s, y).unwrap();
        assert!((fast - crps_double_loop(&s, y)).abs() < 1e-12, "{fast}");
        // translation consistency
        let shifted: Vec<f64> = s.iter().map(|v| v + 3.0).collect();
        assert!((crps_empirical(&shifted, y + 3.0).unwrap() - fast).abs() < 1e-12);
    }
}

#[test]
fn gini_matches_trapezoid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.random_range(2..30);
        // coarse predictions so ties occur
        let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let act: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let g = gini_ordered(&pred, &act).unwrap();
        assert!((g - gini_trapezoid(&pred, &act)).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&g));
    }
}

#[test]
fn wasserstein_matches_exhaustive_transport() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let sizes = [(6, 6), (2, 3), (3, 2), (1, 7), (7, 1), (2, 4), (4, 2), (5, 5)];
    for case in 0..100 {
        let (n, m) = sizes[case % sizes.len()];
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = wasserstein_1d(&a, &b).unwrap();
        assert!((w - wasserstein_matching(&a, &b)).abs() < 1e-9, "{a:?} {b:?}");
    }
}

#[test]
fn wasserstein_translation() {
    let a = [0.5, 1.0, 2.0];
    let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
    assert!((wasserstein_1d(&a, &b).unwrap() - 10.0).abs() < 1e-12);
}

fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            both += f64::from(u8::from(sa && sb));
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
        }
    }
    let total = (n * (n - 1) / 2) as f64;
    let expected = in_a * in_b / total;
    let max = (in_a + in_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

#[test]
fn partition_scores_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..100 {
        let n = rng.random_range(2..25);
        let ka = rng.random_range(1..5);
        let kb = rng.random_range(1..5);
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let ari = adjusted_rand(&a, &b).unwrap();
        assert!((ari - ari_pairs(&a, &b)).abs() < 1e-12);
        assert!((ari - adjusted_rand(&b, &a).unwrap()).abs() < 1e-12);

        let mut relabel: Vec<usize> = (0..ka).collect();
        relabel.shuffle(&mut rng);
        let a2: Vec<usize> = a.iter().map(|&l| relabel[l]).collect();
        assert!((adjusted_rand(&a2, &b).unwrap() - ari).abs() < 1e-12);

        let k = ka.max(kb);
        let best = permutations(k)
            .iter()
            .map(|p| a.iter().zip(&b).filter(|(x, y)| p[**x] == **y).count())
            .max()
            .unwrap();
        let rate = misclassification(&a, &b).unwrap();
        assert!((rate - (1.0 - best as f64 / n as f64)).abs() < 1e-12);
    }
}
